//! Raibert touchdown targets, swing trajectories, swing PD forces and
//! Jacobian-transpose torque maps for a 3-DOF leg.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::gait::{GaitParams, LEG_FORE, LEG_SIDE};
use crate::plant::N_FEET;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FootstepGains {
    pub k_x: f64,
    pub k_y: f64,
    pub k_psi: f64,
    pub clamp_x: f64,
    pub clamp_y: f64,
    /// Use `(v_cmd − v)` in the linear feedback terms instead of `(v − v_cmd)`.
    pub flip_linear_sign: bool,
}

impl Default for FootstepGains {
    fn default() -> Self {
        Self { k_x: 0.005, k_y: 0.005, k_psi: 0.005, clamp_x: 0.10, clamp_y: 0.10, flip_linear_sign: false }
    }
}

impl FootstepGains {
    pub fn validate(&self) -> Result<()> {
        if [self.k_x, self.k_y, self.k_psi].iter().any(|k| !(*k >= 0.0)) {
            return Err(Error::InvalidParameter("footstep gains must be non-negative".into()));
        }
        if !(self.clamp_x > 0.0 && self.clamp_y > 0.0) {
            return Err(Error::InvalidParameter("footstep clamp must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LegGeometry {
    /// Hip-roll joint positions in the body frame.
    pub hip_offsets: [[f64; 3]; N_FEET],
    /// (hip, thigh, calf) link lengths.
    pub links: [f64; 3],
    pub stand_height: f64,
}

impl Default for LegGeometry {
    fn default() -> Self {
        let hx = 0.1881;
        let hy = 0.04675;
        Self {
            hip_offsets: std::array::from_fn(|i| [LEG_FORE[i] * hx, LEG_SIDE[i] * hy, 0.0]),
            links: [0.08, 0.213, 0.213],
            stand_height: 0.30,
        }
    }
}

impl LegGeometry {
    pub fn validate(&self) -> Result<()> {
        if self.links.iter().any(|l| !(*l > 0.0)) {
            return Err(Error::InvalidParameter("link lengths must be positive".into()));
        }
        if !(self.stand_height > 0.0 && self.stand_height < self.links[1] + self.links[2]) {
            return Err(Error::InvalidParameter("stand height not reachable".into()));
        }
        Ok(())
    }

    pub fn hip(&self, leg: usize) -> Vector3<f64> {
        Vector3::from(self.hip_offsets[leg])
    }

    /// Nominal foot position under the hip at standing height (body frame).
    pub fn nominal_foot(&self, leg: usize) -> Vector3<f64> {
        let h = self.hip(leg);
        Vector3::new(h.x, h.y + LEG_SIDE[leg] * self.links[0], -self.stand_height)
    }

    /// Hip-to-foot polar coordinates `(r_i, α_i)` in the horizontal plane.
    pub fn polar(&self, leg: usize) -> (f64, f64) {
        let f = self.nominal_foot(leg);
        (f.x.hypot(f.y), f.y.atan2(f.x))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PlanarCommand {
    pub v_x: f64,
    pub v_y: f64,
    pub omega_z: f64,
}

/// Step offsets `(Δx, Δy, Δψ)` before clamping.
pub fn step_offsets(
    v: (f64, f64),
    omega_z: f64,
    phi: f64,
    cmd: &PlanarCommand,
    gait: &GaitParams,
    gains: &FootstepGains,
) -> (f64, f64, f64) {
    let lead = (1.0 - phi) * gait.swing_time() + 0.5 * gait.stance_time();
    let s = if gains.flip_linear_sign { -1.0 } else { 1.0 };
    let dx = v.0 * lead + gains.k_x * s * (v.0 - cmd.v_x);
    let dy = v.1 * lead + gains.k_y * s * (v.1 - cmd.v_y);
    let dpsi = omega_z * lead + gains.k_psi * (cmd.omega_z - omega_z);
    (dx, dy, dpsi)
}

/// Touchdown target for a swing leg, on the ground plane `z = 0`.
#[allow(clippy::too_many_arguments)]
pub fn raibert_touchdown(
    p_body: &Vector3<f64>,
    yaw: f64,
    v: (f64, f64),
    omega_z: f64,
    phi: f64,
    cmd: &PlanarCommand,
    gait: &GaitParams,
    gains: &FootstepGains,
    polar: (f64, f64),
) -> Vector3<f64> {
    let (dx, dy, dpsi) = step_offsets(v, omega_z, phi, cmd, gait, gains);
    let dx = dx.clamp(-gains.clamp_x, gains.clamp_x);
    let dy = dy.clamp(-gains.clamp_y, gains.clamp_y);
    let (r, alpha) = polar;
    let ang = yaw + alpha + dpsi;
    Vector3::new(p_body.x + dx + r * ang.cos(), p_body.y + dy + r * ang.sin(), 0.0)
}

/// Cycloid in x, linear in y, raised-cosine bump in z. Velocity is per second
/// given the swing duration `t_sw`.
pub fn swing_trajectory(
    start: &Vector3<f64>,
    end: &Vector3<f64>,
    phi: f64,
    h: f64,
    t_sw: f64,
) -> (Vector3<f64>, Vector3<f64>) {
    let phi = phi.clamp(0.0, 1.0);
    let w = 2.0 * PI * phi;
    if phi == 1.0 {
        // sin(2π) is not exactly zero in floating point
        return (Vector3::new(end.x, end.y, start.z), Vector3::new(0.0, (end.y - start.y) / t_sw.max(f64::MIN_POSITIVE), 0.0));
    }
    let sx = (w - w.sin()) / (2.0 * PI);
    let pos = Vector3::new(
        start.x + (end.x - start.x) * sx,
        start.y + (end.y - start.y) * phi,
        start.z + h * (1.0 - w.cos()) / 2.0,
    );
    let dphi = Vector3::new(
        (end.x - start.x) * (1.0 - w.cos()),
        end.y - start.y,
        h * PI * w.sin(),
    );
    let vel = if t_sw > 0.0 { dphi / t_sw } else { Vector3::zeros() };
    (pos, vel)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TorqueParams {
    pub kp_swing: f64,
    pub kd_swing: f64,
    pub joint_kp_swing: f64,
    pub joint_kd_swing: f64,
    pub joint_kp_stance: f64,
    pub joint_kd_stance: f64,
    pub tau_max: f64,
}

impl Default for TorqueParams {
    fn default() -> Self {
        Self {
            kp_swing: 400.0,
            kd_swing: 10.0,
            joint_kp_swing: 3.0,
            joint_kd_swing: 2.0,
            joint_kp_stance: 0.8,
            joint_kd_stance: 0.8,
            tau_max: 50.0,
        }
    }
}

pub fn swing_force(
    p: &Vector3<f64>,
    p_dot: &Vector3<f64>,
    p_ref: &Vector3<f64>,
    p_dot_ref: &Vector3<f64>,
    gains: &TorqueParams,
) -> Vector3<f64> {
    (p_ref - p) * gains.kp_swing + (p_dot_ref - p_dot) * gains.kd_swing
}

/// Foot position relative to the hip for joint angles (hip roll, hip pitch, knee).
pub fn leg_fk(q: &Vector3<f64>, leg: usize, geom: &LegGeometry) -> Vector3<f64> {
    let [l1, l2, l3] = geom.links;
    let l1 = LEG_SIDE[leg] * l1;
    let (s0, c0) = q[0].sin_cos();
    let (s1, c1) = q[1].sin_cos();
    let (s12, c12) = (q[1] + q[2]).sin_cos();
    let x = -l2 * s1 - l3 * s12;
    let zl = -l2 * c1 - l3 * c12;
    Vector3::new(x, l1 * c0 - zl * s0, l1 * s0 + zl * c0)
}

pub fn leg_jacobian(q: &Vector3<f64>, leg: usize, geom: &LegGeometry) -> Matrix3<f64> {
    let [l1, l2, l3] = geom.links;
    let l1 = LEG_SIDE[leg] * l1;
    let (s0, c0) = q[0].sin_cos();
    let (s1, c1) = q[1].sin_cos();
    let (s12, c12) = (q[1] + q[2]).sin_cos();
    let x = -l2 * s1 - l3 * s12;
    let zl = -l2 * c1 - l3 * c12;
    let dzl1 = -x;
    let dzl2 = l3 * s12;
    Matrix3::new(
        0.0, zl, -l3 * c12, //
        -l1 * s0 - zl * c0, -s0 * dzl1, -s0 * dzl2, //
        l1 * c0 - zl * s0, c0 * dzl1, c0 * dzl2,
    )
}

/// Joint angles reaching `foot` (hip frame) with the knee bent backwards.
pub fn leg_ik(foot: &Vector3<f64>, leg: usize, geom: &LegGeometry) -> Vector3<f64> {
    let [l1, l2, l3] = geom.links;
    let l1 = LEG_SIDE[leg] * l1;
    let (x, y, z) = (foot.x, foot.y, foot.z);
    let zl = -(y * y + z * z - l1 * l1).max(0.0).sqrt();
    let q0 = z.atan2(y) - zl.atan2(l1);
    let d = ((x * x + zl * zl - l2 * l2 - l3 * l3) / (2.0 * l2 * l3)).clamp(-1.0, 1.0);
    let q2 = -d.acos();
    let a = l2 + l3 * q2.cos();
    let b = l3 * q2.sin();
    let q1 = (-x).atan2(-zl) - b.atan2(a);
    Vector3::new(q0, q1, q2)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TorqueOutput {
    pub tau: Vector3<f64>,
    pub saturated: bool,
    pub near_singular: bool,
}

/// `τ = Jᵀ F` clipped to `±tau_max`; singular configurations are flagged, not rejected.
pub fn torque_map(j: &Matrix3<f64>, f: &Vector3<f64>, tau_max: f64) -> TorqueOutput {
    let raw = j.transpose() * f;
    let tau = raw.map(|t| t.clamp(-tau_max, tau_max));
    TorqueOutput { tau, saturated: tau != raw, near_singular: j.determinant().abs() <= 1e-6 }
}
