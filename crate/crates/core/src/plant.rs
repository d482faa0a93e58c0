//! Ground-truth single-rigid-body simulator.
//!
//! The body is driven by up to four point-contact ground reaction forces.
//! Angular velocity is carried in the inertial frame, so the dynamics read
//!
//! ```text
//! ṗ = v
//! v̇ = a_g + F/m
//! Ṙ = ω^ R
//! ω̇ = I⁻¹(τ − ω × Iω),   I = R I_B Rᵀ
//! ```
//!
//! Integration is a Runge-Kutta-Munthe-Kaas scheme of order four: the
//! translational/rate states use classical RK4 while the attitude is
//! advanced through the exponential map, so `R` never leaves SO(3) beyond
//! round-off. A periodic SVD projection removes the accumulated round-off.

use nalgebra::{Matrix3, Vector3, Vector6};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{exp_so3, hat, project_so3, Rotation};
use crate::scalar::{lit, to_f64, Real};

pub const N_FEET: usize = 4;
/// Steps between SVD re-projections of the attitude.
pub const PROJECTION_PERIOD: u64 = 100;
pub const MAX_DT: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SrbParams<T: Real> {
    pub mass: T,
    pub inertia_body: Matrix3<T>,
    pub gravity: T,
    pub friction_mu: T,
}

impl<T: Real> SrbParams<T> {
    /// Unitree Go1 values (mass 12.75 kg, body inertia from the vendor model).
    pub fn go1() -> Self {
        let i = Matrix3::new(
            160.0, 0.12, -16.0, //
            0.12, 470.0, -0.03, //
            -16.0, -0.03, 520.0,
        ) * 1e-3;
        Self {
            mass: lit(12.75),
            inertia_body: i.map(lit),
            gravity: lit(9.81),
            friction_mu: lit(0.75),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(to_f64(self.mass) > 0.0) {
            return Err(Error::InvalidParameter(format!("mass {:?} must be positive", self.mass)));
        }
        let sym = (self.inertia_body - self.inertia_body.transpose()).norm();
        if to_f64(sym) > 1e-9 {
            return Err(Error::InvalidParameter("inertia is not symmetric".into()));
        }
        let min_eig = self
            .inertia_body
            .symmetric_eigenvalues()
            .iter()
            .fold(T::max_value().unwrap(), |a, &b| a.min(b));
        if !(to_f64(min_eig) > 0.0) {
            return Err(Error::InvalidParameter("inertia is not positive definite".into()));
        }
        let mu = to_f64(self.friction_mu);
        if !(mu > 0.0 && mu <= 1.5) {
            return Err(Error::InvalidParameter(format!("friction coefficient {mu} outside (0, 1.5]")));
        }
        Ok(())
    }

    pub fn weight(&self) -> T {
        self.mass * self.gravity
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantState<T: Real> {
    pub p: Vector3<T>,
    pub r: Rotation<T>,
    pub v: Vector3<T>,
    /// Angular velocity, inertial frame.
    pub omega: Vector3<T>,
}

impl<T: Real> PlantState<T> {
    pub fn at_rest(height: T) -> Self {
        Self {
            p: Vector3::new(T::zero(), T::zero(), height),
            r: Rotation::identity(),
            v: Vector3::zeros(),
            omega: Vector3::zeros(),
        }
    }

    pub fn is_finite(&self) -> bool {
        let f = |v: &Vector3<T>| v.iter().all(|x| to_f64(*x).is_finite());
        f(&self.p) && f(&self.v) && f(&self.omega) && self.r.matrix().iter().all(|x| to_f64(*x).is_finite())
    }

    /// Angular velocity expressed in the body frame.
    pub fn omega_body(&self) -> Vector3<T> {
        self.r.matrix().transpose() * self.omega
    }

    pub fn kinetic_energy(&self, params: &SrbParams<T>) -> T {
        let r = self.r.matrix();
        let i_world = r * params.inertia_body * r.transpose();
        let half: T = lit(0.5);
        half * params.mass * self.v.norm_squared() + half * self.omega.dot(&(i_world * self.omega))
    }
}

/// Per-foot forces (inertial frame), contact flags and CoM-relative moment arms.
#[derive(Debug, Clone, PartialEq)]
pub struct FootForces<T: Real> {
    pub forces: [Vector3<T>; N_FEET],
    pub contact: [bool; N_FEET],
    pub moment_arms: [Vector3<T>; N_FEET],
}

impl<T: Real> FootForces<T> {
    pub fn zero() -> Self {
        Self {
            forces: [Vector3::zeros(); N_FEET],
            contact: [false; N_FEET],
            moment_arms: [Vector3::zeros(); N_FEET],
        }
    }

    /// Zeroes every force whose foot is not in contact.
    pub fn enforce_contact(&mut self) {
        for (f, &c) in self.forces.iter_mut().zip(&self.contact) {
            if !c {
                *f = Vector3::zeros();
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wrench<T: Real> {
    pub force: Vector3<T>,
    pub torque: Vector3<T>,
}

impl<T: Real> Wrench<T> {
    pub fn zero() -> Self {
        Self { force: Vector3::zeros(), torque: Vector3::zeros() }
    }

    pub fn to_vector(&self) -> Vector6<T> {
        Vector6::new(
            self.force.x, self.force.y, self.force.z, self.torque.x, self.torque.y, self.torque.z,
        )
    }
}

/// Net wrench `F = Σ f_i`, `τ = Σ r_i × f_i` over stance feet.
pub fn force_map<T: Real>(forces: &FootForces<T>) -> Wrench<T> {
    let mut w = Wrench::zero();
    for i in 0..N_FEET {
        if forces.contact[i] {
            w.force += forces.forces[i];
            w.torque += forces.moment_arms[i].cross(&forces.forces[i]);
        }
    }
    w
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateDerivative<T: Real> {
    pub p_dot: Vector3<T>,
    pub r_dot: Matrix3<T>,
    pub v_dot: Vector3<T>,
    pub omega_dot: Vector3<T>,
}

fn angular_acceleration<T: Real>(
    r: &Matrix3<T>,
    omega: &Vector3<T>,
    torque: &Vector3<T>,
    params: &SrbParams<T>,
) -> Result<Vector3<T>> {
    let i_world = r * params.inertia_body * r.transpose();
    let chol = i_world.cholesky().ok_or(Error::SingularInertia)?;
    Ok(chol.solve(&(torque - omega.cross(&(i_world * omega)))))
}

pub fn srb_derivative<T: Real>(
    state: &PlantState<T>,
    wrench: &Wrench<T>,
    params: &SrbParams<T>,
) -> Result<StateDerivative<T>> {
    let g = Vector3::new(T::zero(), T::zero(), -params.gravity);
    let r = state.r.matrix();
    Ok(StateDerivative {
        p_dot: state.v,
        r_dot: hat(&state.omega) * r,
        v_dot: g + wrench.force / params.mass,
        omega_dot: angular_acceleration(r, &state.omega, &wrench.torque, params)?,
    })
}

/// `dexp⁻¹_θ(ω)` truncated after the third-order term (enough for order 4).
fn dexp_inv<T: Real>(theta: &Vector3<T>, w: &Vector3<T>) -> Vector3<T> {
    let c1 = theta.cross(w);
    w - c1 * lit::<T>(0.5) + theta.cross(&c1) * lit::<T>(1.0 / 12.0)
}

/// One RKMK4 step under a wrench held constant over `dt`.
pub fn rk4_step<T: Real>(
    state: &PlantState<T>,
    wrench: &Wrench<T>,
    params: &SrbParams<T>,
    dt: T,
) -> Result<PlantState<T>> {
    let g = Vector3::new(T::zero(), T::zero(), -params.gravity);
    let lin_acc = g + wrench.force / params.mass;
    let r0 = *state.r.matrix();

    // Stage evaluation at attitude exp(θ^) R0 and rates (v, ω).
    let stage = |theta: &Vector3<T>, v: &Vector3<T>, w: &Vector3<T>| -> Result<[Vector3<T>; 4]> {
        let r = exp_so3(theta).into_inner() * r0;
        let w_dot = angular_acceleration(&r, w, &wrench.torque, params)?;
        Ok([*v, lin_acc, w_dot, dexp_inv(theta, w)])
    };

    let half: T = lit(0.5);
    let zero = Vector3::zeros();
    let k1 = stage(&zero, &state.v, &state.omega)?;
    let h2 = dt * half;
    let k2 = stage(&(k1[3] * h2), &(state.v + k1[1] * h2), &(state.omega + k1[2] * h2))?;
    let k3 = stage(&(k2[3] * h2), &(state.v + k2[1] * h2), &(state.omega + k2[2] * h2))?;
    let k4 = stage(&(k3[3] * dt), &(state.v + k3[1] * dt), &(state.omega + k3[2] * dt))?;

    let two: T = lit(2.0);
    let sixth = dt / lit(6.0);
    let comb = |j: usize| (k1[j] + k2[j] * two + k3[j] * two + k4[j]) * sixth;
    let theta = comb(3);
    let next = PlantState {
        p: state.p + comb(0),
        v: state.v + comb(1),
        omega: state.omega + comb(2),
        r: exp_so3(&theta).compose(&state.r),
    };
    Ok(next)
}

/// Radially projects the tangential force onto the friction cone; pulling
/// (negative normal) forces are removed.
pub fn clip_to_cone<T: Real>(f: &Vector3<T>, mu: T) -> Vector3<T> {
    if f.z <= T::zero() {
        return Vector3::zeros();
    }
    let tangential = (f.x * f.x + f.y * f.y).sqrt();
    let limit = mu * f.z;
    if tangential <= limit {
        *f
    } else {
        let s = limit / tangential;
        Vector3::new(f.x * s, f.y * s, f.z)
    }
}

/// Terrain emulation: parameter mismatch, contact noise and a constant wrench bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DisturbanceConfig {
    /// Half-width of the multiplicative mass/inertia mismatch.
    pub param_scale: f64,
    /// Standard deviation of additive per-axis GRF noise [N].
    pub force_noise_std: f64,
    /// Standard deviation of the per-touchdown foothold offset [m].
    pub moment_arm_noise_std: f64,
    /// Constant external wrench (F [N], τ [N·m]), inertial frame.
    pub wrench_bias: [f64; 6],
    /// Range of the per-episode friction draw.
    pub friction_range: [f64; 2],
    /// Fixed friction coefficient replacing the draw (e.g. ice).
    pub friction_override: Option<f64>,
    pub seed: u64,
}

impl Default for DisturbanceConfig {
    fn default() -> Self {
        Self::mild()
    }
}

impl DisturbanceConfig {
    /// Matched parameters, no noise, no bias.
    pub fn flat() -> Self {
        Self {
            param_scale: 0.0,
            force_noise_std: 0.0,
            moment_arm_noise_std: 0.0,
            wrench_bias: [0.0; 6],
            friction_range: [0.5, 1.0],
            friction_override: None,
            seed: 0,
        }
    }

    pub fn mild() -> Self {
        Self {
            param_scale: 0.1,
            force_noise_std: 2.0,
            moment_arm_noise_std: 0.01,
            wrench_bias: [3.0, -2.0, -6.0, 0.4, -0.5, 1.5],
            friction_range: [0.5, 1.0],
            friction_override: None,
            seed: 0,
        }
    }

    pub fn ice() -> Self {
        Self { friction_override: Some(0.1), ..Self::mild() }
    }

    pub fn tier(name: &str) -> Option<Self> {
        match name {
            "flat" => Some(Self::flat()),
            "mild" => Some(Self::mild()),
            "ice" => Some(Self::ice()),
            _ => None,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.param_scale >= 0.0
            && self.param_scale < 1.0
            && self.force_noise_std >= 0.0
            && self.moment_arm_noise_std >= 0.0
            && self.friction_range[0] > 0.0
            && self.friction_range[0] <= self.friction_range[1];
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter("disturbance magnitudes must be non-negative".into()))
        }
    }
}

/// Draws the per-episode physical parameters. Deterministic in `disturbance.seed`.
pub fn sample_params<T: Real>(nominal: &SrbParams<T>, disturbance: &DisturbanceConfig) -> SrbParams<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(disturbance.seed ^ 0x5eed_0f_9a7a);
    let [lo, hi] = disturbance.friction_range;
    let mu_draw = if hi > lo { Uniform::new(lo, hi).unwrap().sample(&mut rng) } else { lo };
    let mu = disturbance.friction_override.unwrap_or(mu_draw);
    let s = disturbance.param_scale;
    let mut scale = || {
        if s > 0.0 {
            Uniform::new_inclusive(1.0 - s, 1.0 + s).unwrap().sample(&mut rng)
        } else {
            1.0
        }
    };
    let mass = nominal.mass * lit(scale());
    let mut inertia = nominal.inertia_body;
    for k in 0..3 {
        inertia[(k, k)] *= lit(scale());
    }
    SrbParams { mass, inertia_body: inertia, gravity: nominal.gravity, friction_mu: lit(mu) }
}

/// Forces actually applied by the plant during one step (after noise and cone clipping).
#[derive(Debug, Clone, PartialEq)]
pub struct AppliedForces<T: Real> {
    pub forces: FootForces<T>,
    pub wrench: Wrench<T>,
}

/// Stateful simulator instance: parameters, disturbance stream and foothold offsets.
#[derive(Debug, Clone)]
pub struct SrbPlant<T: Real> {
    pub params: SrbParams<T>,
    pub disturbance: DisturbanceConfig,
    rng: ChaCha8Rng,
    steps: u64,
    foot_offsets: [Vector3<T>; N_FEET],
    prev_contact: [bool; N_FEET],
}

impl<T: Real> SrbPlant<T> {
    pub fn new(params: SrbParams<T>, disturbance: DisturbanceConfig) -> Result<Self> {
        params.validate()?;
        disturbance.validate()?;
        let rng = ChaCha8Rng::seed_from_u64(disturbance.seed);
        Ok(Self {
            params,
            disturbance,
            rng,
            steps: 0,
            foot_offsets: [Vector3::zeros(); N_FEET],
            prev_contact: [false; N_FEET],
        })
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    fn gaussian(&mut self, std: f64) -> T {
        if std > 0.0 {
            lit(Normal::new(0.0, std).unwrap().sample(&mut self.rng))
        } else {
            T::zero()
        }
    }

    /// Realizes the commanded forces (offsets, noise, cone clipping) without integrating.
    pub fn realize(&mut self, commanded: &FootForces<T>) -> AppliedForces<T> {
        let mut applied = commanded.clone();
        applied.enforce_contact();
        let arm_std = self.disturbance.moment_arm_noise_std;
        let f_std = self.disturbance.force_noise_std;
        for i in 0..N_FEET {
            if commanded.contact[i] && !self.prev_contact[i] {
                // new touchdown: the realized foothold deviates from the plan
                let off = Vector3::new(self.gaussian(arm_std), self.gaussian(arm_std), T::zero());
                self.foot_offsets[i] = off;
            }
            self.prev_contact[i] = commanded.contact[i];
            if !commanded.contact[i] {
                continue;
            }
            applied.moment_arms[i] += self.foot_offsets[i];
            let noise = Vector3::new(self.gaussian(f_std), self.gaussian(f_std), self.gaussian(f_std));
            applied.forces[i] = clip_to_cone(&(applied.forces[i] + noise), self.params.friction_mu);
        }
        let mut wrench = force_map(&applied);
        let b = &self.disturbance.wrench_bias;
        wrench.force += Vector3::new(lit(b[0]), lit(b[1]), lit(b[2]));
        wrench.torque += Vector3::new(lit(b[3]), lit(b[4]), lit(b[5]));
        AppliedForces { forces: applied, wrench }
    }

    /// Advances the plant by `dt` under the commanded foot forces.
    pub fn step(
        &mut self,
        state: &PlantState<T>,
        commanded: &FootForces<T>,
        dt: T,
    ) -> Result<(PlantState<T>, AppliedForces<T>)> {
        let dtf = to_f64(dt);
        if !(dtf > 0.0 && dtf <= MAX_DT) {
            return Err(Error::InvalidParameter(format!("plant step {dtf} outside (0, {MAX_DT}]")));
        }
        let applied = self.realize(commanded);
        let mut next = rk4_step(state, &applied.wrench, &self.params, dt)?;
        self.steps += 1;
        if self.steps.is_multiple_of(PROJECTION_PERIOD) {
            next.r = project_so3(next.r.matrix())?;
        }
        if !next.is_finite() {
            return Err(Error::NonFiniteState(self.steps as usize));
        }
        Ok((next, applied))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn hover_forces(params: &SrbParams<f64>) -> FootForces<f64> {
        let mut f = FootForces::zero();
        f.contact = [true; 4];
        let arms = [
            Vector3::new(0.19, 0.13, -0.3),
            Vector3::new(-0.19, 0.13, -0.3),
            Vector3::new(0.19, -0.13, -0.3),
            Vector3::new(-0.19, -0.13, -0.3),
        ];
        f.moment_arms = arms;
        for i in 0..4 {
            f.forces[i] = Vector3::new(0.0, 0.0, params.weight() / 4.0);
        }
        f
    }

    #[test]
    fn force_map_examples() {
        let mut f = FootForces::<f64>::zero();
        f.contact[0] = true;
        f.forces[0] = Vector3::new(0.0, 0.0, 100.0);
        let w = force_map(&f);
        assert_eq!(w.force, Vector3::new(0.0, 0.0, 100.0));
        assert_eq!(w.torque, Vector3::zeros());

        let mut f = FootForces::<f64>::zero();
        f.contact = [true, true, false, false];
        f.moment_arms[0] = Vector3::new(0.2, 0.0, -0.3);
        f.moment_arms[1] = Vector3::new(-0.2, 0.0, -0.3);
        f.forces[0] = Vector3::new(0.0, 0.0, 60.0);
        f.forces[1] = Vector3::new(0.0, 0.0, 60.0);
        let w = force_map(&f);
        let cross = |r: &Vector3<f64>, g: &Vector3<f64>| {
            Vector3::new(r.y * g.z - r.z * g.y, r.z * g.x - r.x * g.z, r.x * g.y - r.y * g.x)
        };
        let tau = cross(&f.moment_arms[0], &f.forces[0]) + cross(&f.moment_arms[1], &f.forces[1]);
        assert_eq!(w.force, Vector3::new(0.0, 0.0, 120.0));
        assert!((w.torque - tau).amax() < 1e-14);
        assert!(w.torque.amax() < 1e-14);

        assert_eq!(force_map(&FootForces::<f64>::zero()), Wrench::zero());
    }

    #[test]
    fn derivative_equilibrium_and_principal_spin() {
        let params = SrbParams::<f64>::go1();
        let s = PlantState::at_rest(0.3);
        let w = Wrench { force: Vector3::new(0.0, 0.0, params.weight()), torque: Vector3::zeros() };
        let d = srb_derivative(&s, &w, &params).unwrap();
        assert!(d.v_dot.amax() < 1e-12 && d.omega_dot.amax() < 1e-12);
        assert_eq!(d.r_dot, Matrix3::zeros());

        let mut p = params;
        p.inertia_body = Matrix3::from_diagonal(&Vector3::new(0.16, 0.47, 0.52));
        let mut s = PlantState::at_rest(0.3);
        s.omega = Vector3::new(0.0, 0.0, 1.0);
        let d = srb_derivative(&s, &Wrench::zero(), &p).unwrap();
        assert!(d.omega_dot.amax() < 1e-14);
    }

    #[test]
    fn derivative_matches_componentwise_evaluation() {
        let params = SrbParams::<f64>::go1();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let s = PlantState {
                p: Vector3::new(1.0, 2.0, 0.3),
                r: exp_so3(&axis),
                v: Vector3::new(rng.random_range(-1.0..1.0), 0.2, -0.1),
                omega: Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)),
            };
            let w = Wrench {
                force: Vector3::new(5.0, -3.0, 130.0),
                torque: Vector3::new(rng.random_range(-5.0..5.0), 1.0, -2.0),
            };
            let d = srb_derivative(&s, &w, &params).unwrap();
            // independent evaluation: explicit loops and a 3x3 Cramer inverse
            let r = s.r.matrix();
            let mut iw = [[0.0; 3]; 3];
            for a in 0..3 {
                for b in 0..3 {
                    for c in 0..3 {
                        for e in 0..3 {
                            iw[a][b] += r[(a, c)] * params.inertia_body[(c, e)] * r[(b, e)];
                        }
                    }
                }
            }
            let o = [s.omega.x, s.omega.y, s.omega.z];
            let l = [0, 1, 2].map(|a| (0..3).map(|b| iw[a][b] * o[b]).sum::<f64>());
            let gyro = [o[1] * l[2] - o[2] * l[1], o[2] * l[0] - o[0] * l[2], o[0] * l[1] - o[1] * l[0]];
            let rhs = [w.torque.x - gyro[0], w.torque.y - gyro[1], w.torque.z - gyro[2]];
            let det = iw[0][0] * (iw[1][1] * iw[2][2] - iw[1][2] * iw[2][1])
                - iw[0][1] * (iw[1][0] * iw[2][2] - iw[1][2] * iw[2][0])
                + iw[0][2] * (iw[1][0] * iw[2][1] - iw[1][1] * iw[2][0]);
            let solve_col = |col: usize| {
                let mut m = iw;
                for a in 0..3 {
                    m[a][col] = rhs[a];
                }
                (m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                    - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                    + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]))
                    / det
            };
            let wdot = Vector3::new(solve_col(0), solve_col(1), solve_col(2));
            assert!((d.omega_dot - wdot).amax() < 1e-12 * (1.0 + wdot.amax()));
            let vdot = Vector3::new(w.force.x / params.mass, w.force.y / params.mass, w.force.z / params.mass - 9.81);
            assert!((d.v_dot - vdot).amax() < 1e-12);
            let rdot = Matrix3::from_fn(|a, b| {
                let wx = [[0.0, -o[2], o[1]], [o[2], 0.0, -o[0]], [-o[1], o[0], 0.0]];
                (0..3).map(|c| wx[a][c] * r[(c, b)]).sum::<f64>()
            });
            assert!((d.r_dot - rdot).amax() < 1e-12);
        }
    }

    #[test]
    fn hover_holds_position() {
        let params = SrbParams::<f64>::go1();
        let mut plant = SrbPlant::new(params, DisturbanceConfig::flat()).unwrap();
        let f = hover_forces(&params);
        let s0 = PlantState::at_rest(0.3);
        let mut s = s0.clone();
        for _ in 0..1000 {
            s = plant.step(&s, &f, 0.01).unwrap().0;
        }
        assert!((s.p - s0.p).norm() < 1e-6);
    }

    #[test]
    fn free_fall_is_ballistic() {
        let params = SrbParams::<f64>::go1();
        let mut plant = SrbPlant::new(params, DisturbanceConfig::flat()).unwrap();
        let mut s = PlantState::at_rest(10.0);
        for _ in 0..500 {
            s = plant.step(&s, &FootForces::zero(), 0.001).unwrap().0;
        }
        assert_relative_eq!(s.v.z, -9.81 * 0.5, epsilon = 1e-9);
    }

    fn tumble(dt: f64, t_end: f64) -> PlantState<f64> {
        let params = SrbParams::<f64>::go1();
        let mut s = PlantState::at_rest(0.0);
        s.omega = Vector3::new(1.5, -0.7, 2.0);
        let w = Wrench { force: Vector3::new(0.0, 0.0, 125.0), torque: Vector3::new(0.6, -0.9, 0.3) };
        let n = (t_end / dt).round() as usize;
        for _ in 0..n {
            s = rk4_step(&s, &w, &params, dt).unwrap();
        }
        s
    }

    fn state_err(a: &PlantState<f64>, b: &PlantState<f64>) -> f64 {
        (a.p - b.p).norm() + (a.v - b.v).norm() + (a.omega - b.omega).norm() + (a.r.matrix() - b.r.matrix()).norm()
    }

    #[test]
    fn fourth_order_convergence() {
        let reference = tumble(1e-5, 1.0);
        let e1 = state_err(&tumble(0.02, 1.0), &reference);
        let e2 = state_err(&tumble(0.01, 1.0), &reference);
        assert!(e1 / e2 >= 8.0, "ratio {}", e1 / e2);
    }

    #[test]
    fn sample_params_properties() {
        let nominal = SrbParams::<f64>::go1();
        let d = DisturbanceConfig { param_scale: 0.0, ..DisturbanceConfig::mild() }.with_seed(3);
        let p = sample_params(&nominal, &d);
        assert_eq!(p.mass, nominal.mass);
        assert_eq!(p.inertia_body, nominal.inertia_body);
        let d = DisturbanceConfig::mild().with_seed(9);
        assert_eq!(sample_params(&nominal, &d), sample_params(&nominal, &d));
        let mean = (0..10_000)
            .map(|s| sample_params(&nominal, &DisturbanceConfig::mild().with_seed(s)).friction_mu)
            .sum::<f64>()
            / 10_000.0;
        assert!((0.73..=0.77).contains(&mean), "mean {mean}");
        assert_eq!(sample_params(&nominal, &DisturbanceConfig::ice()).friction_mu, 0.1);
    }

    #[test]
    fn cone_clipping() {
        let f = clip_to_cone(&Vector3::<f64>::new(30.0, 40.0, 20.0), 0.5);
        assert!(((f.x * f.x + f.y * f.y).sqrt() - 10.0).abs() < 1e-12);
        assert_eq!(f.z, 20.0);
        assert_eq!(clip_to_cone(&Vector3::new(1.0, 0.0, -5.0), 0.5), Vector3::zeros());
        let inside = Vector3::new(1.0, 1.0, 100.0);
        assert_eq!(clip_to_cone(&inside, 0.5), inside);
    }

    #[test]
    fn swing_feet_apply_nothing() {
        let params = SrbParams::<f64>::go1();
        let mut plant = SrbPlant::new(params, DisturbanceConfig::mild().with_seed(1)).unwrap();
        let mut f = hover_forces(&params);
        f.contact = [true, false, false, true];
        let a = plant.realize(&f);
        assert_eq!(a.forces.forces[1], Vector3::zeros());
        assert_eq!(a.forces.forces[2], Vector3::zeros());
    }

    #[test]
    fn single_precision_step() {
        let params = SrbParams::<f32>::go1();
        let mut s = PlantState::<f32>::at_rest(0.3);
        s.omega = Vector3::new(0.3, 0.2, 0.1);
        let w = Wrench { force: Vector3::new(0.0, 0.0, params.weight()), torque: Vector3::zeros() };
        for _ in 0..100 {
            s = rk4_step(&s, &w, &params, 0.001).unwrap();
        }
        assert!(s.r.orthogonality_error() < 1e-5);
    }
}
