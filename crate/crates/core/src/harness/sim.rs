//! Closed-loop locomotion stack: gait clock, Raibert footholds, MPC forces and
//! the 1 kHz plant. Legs are massless, so swing feet only carry a foothold target.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::footstep::{raibert_touchdown, FootstepGains, LegGeometry, PlanarCommand};
use crate::gait::{contact_flags, horizon_schedule, leg_phase, GaitParams};
use crate::geom::vec9;
use crate::harness::log::{EpisodeLog, LogMeta, LogRow};
use crate::mpc::{make_reference, MpcController, StepOutput};
use crate::nominal::TemplateState;
use crate::plant::{FootForces, PlantState, SrbPlant, N_FEET};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub dt_plant: f64,
    /// Plant steps per controller tick.
    pub control_every: usize,
    /// Roll or pitch magnitude treated as a fall [rad].
    pub max_tilt: f64,
    /// Allowed body height band [m].
    pub height_band: [f64; 2],
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { dt_plant: 0.001, control_every: 10, max_tilt: 1.0, height_band: [0.1, 0.6] }
    }
}

impl SimConfig {
    pub fn dt_control(&self) -> f64 {
        self.dt_plant * self.control_every as f64
    }
}

/// Everything one tick needs besides the controller and the plant.
#[derive(Debug, Clone)]
pub struct Stack {
    pub gait: GaitParams,
    pub geometry: LegGeometry,
    pub gains: FootstepGains,
    pub sim: SimConfig,
    footholds: [Vector3<f64>; N_FEET],
    targets: [Vector3<f64>; N_FEET],
    prev_contact: [bool; N_FEET],
    yaw: f64,
}

/// Why a run stopped early.
#[derive(Debug, Clone, PartialEq)]
pub struct Divergence {
    pub t: f64,
    pub reason: String,
}

impl Stack {
    pub fn new(gait: GaitParams, geometry: LegGeometry, gains: FootstepGains, sim: SimConfig, start: &PlantState<f64>) -> Result<Self> {
        gait.validate()?;
        geometry.validate()?;
        gains.validate()?;
        let yaw = TemplateState::from_plant(start, None)?.yaw();
        let feet = nominal_footholds(&geometry, &start.p, yaw);
        Ok(Self { gait, geometry, gains, sim, footholds: feet, targets: feet, prev_contact: [true; N_FEET], yaw })
    }

    /// Updates footholds for the contact mode at time `t`.
    fn update_feet(&mut self, t: f64, x: &TemplateState<f64>, cmd: &PlanarCommand) -> [bool; N_FEET] {
        let contact = contact_flags(t, &self.gait);
        let p = x.p();
        let yaw = x.yaw();
        let (s, c) = yaw.sin_cos();
        let cmd_world = PlanarCommand { v_x: c * cmd.v_x - s * cmd.v_y, v_y: s * cmd.v_x + c * cmd.v_y, omega_z: cmd.omega_z };
        for leg in 0..N_FEET {
            if contact[leg] {
                if !self.prev_contact[leg] {
                    self.footholds[leg] = self.targets[leg];
                }
                continue;
            }
            let phi = leg_phase(t, leg, &self.gait).sub_phase;
            self.targets[leg] = raibert_touchdown(
                &p,
                yaw,
                (x.v()[0], x.v()[1]),
                x.omega()[2],
                phi,
                &cmd_world,
                &self.gait,
                &self.gains,
                self.geometry.polar(leg),
            );
        }
        self.prev_contact = contact;
        contact
    }

    fn arms(&self, p: &Vector3<f64>, contact: &[bool; N_FEET]) -> [Vector3<f64>; N_FEET] {
        std::array::from_fn(|leg| if contact[leg] { self.footholds[leg] - p } else { self.targets[leg] - p })
    }

    fn check(&self, t: f64, x: &TemplateState<f64>) -> Option<Divergence> {
        let th = x.theta();
        let z = x.p()[2];
        if !x.0.iter().all(|v| v.is_finite()) {
            return Some(Divergence { t, reason: "non-finite state".into() });
        }
        if th[0].abs() > self.sim.max_tilt || th[1].abs() > self.sim.max_tilt {
            return Some(Divergence { t, reason: format!("tilt roll={:.3} pitch={:.3}", th[0], th[1]) });
        }
        if z < self.sim.height_band[0] || z > self.sim.height_band[1] {
            return Some(Divergence { t, reason: format!("height {z:.3} m outside band") });
        }
        None
    }

    /// One controller tick: solve, then integrate the plant for `control_every` steps.
    pub fn tick(
        &mut self,
        t: f64,
        state: &PlantState<f64>,
        cmd: &PlanarCommand,
        controller: &mut MpcController,
        plant: &mut SrbPlant<f64>,
    ) -> Result<TickResult> {
        let x = TemplateState::from_plant(state, Some(self.yaw))?;
        self.yaw = x.yaw();
        if let Some(d) = self.check(t, &x) {
            return Ok(TickResult::Diverged(d));
        }
        let contact = self.update_feet(t, &x, cmd);
        let arms = self.arms(&state.p, &contact);
        let n = controller.config.horizon;
        let dt = controller.config.dt;
        let schedule = horizon_schedule(t, n, dt, &self.gait, &arms);
        let refs = make_reference(cmd, &x, n, dt, self.geometry.stand_height);
        let out: StepOutput = controller.solve_step(state, &x, &schedule, &refs)?;

        let mut row = LogRow::empty(t);
        row.x.copy_from_slice(&x.0.as_slice()[..12]);
        row.r = vec9(state.r.matrix());
        for leg in 0..N_FEET {
            for k in 0..3 {
                row.u_cmd[3 * leg + k] = out.forces[leg][k];
                row.arms_planned[3 * leg + k] = arms[leg][k];
            }
        }
        row.stance = contact;
        row.cmd = [cmd.v_x, cmd.v_y, cmd.omega_z];
        let r1 = &refs[1];
        row.reference = [r1.p()[0], r1.p()[1], r1.p()[2], r1.yaw(), r1.v()[0], r1.v()[1], r1.omega()[2]];
        row.qp_status = match out.diagnostics.status.as_str() {
            "Optimal" => 0,
            "Infeasible" => 1,
            _ => 2,
        };
        row.fallback = out.diagnostics.fallback;
        row.qp_iterations = out.diagnostics.iterations as u32;
        row.attitude_orth = out.diagnostics.attitude_orthogonality.unwrap_or(f64::NAN);

        let mut s = state.clone();
        let steps = self.sim.control_every;
        for j in 0..steps {
            let mut cmd_f = FootForces::zero();
            cmd_f.contact = contact;
            for leg in 0..N_FEET {
                cmd_f.forces[leg] = out.forces[leg];
                cmd_f.moment_arms[leg] = self.footholds[leg] - s.p;
            }
            let (next, applied) = match plant.step(&s, &cmd_f, self.sim.dt_plant) {
                Ok(v) => v,
                Err(Error::NonFiniteState(_)) => {
                    return Ok(TickResult::Diverged(Divergence { t, reason: "non-finite plant state".into() }));
                }
                Err(e) => return Err(e),
            };
            for leg in 0..N_FEET {
                for k in 0..3 {
                    row.u_applied[3 * leg + k] += applied.forces.forces[leg][k] / steps as f64;
                    if j == 0 {
                        row.arms_realized[3 * leg + k] = applied.forces.moment_arms[leg][k];
                    }
                }
            }
            s = next;
        }
        Ok(TickResult::Advanced { next: s, row, solve_ms: out.diagnostics.solve_ms })
    }
}

#[derive(Debug, Clone)]
pub enum TickResult {
    Advanced { next: PlantState<f64>, row: LogRow, solve_ms: f64 },
    Diverged(Divergence),
}

pub fn nominal_footholds(geometry: &LegGeometry, p: &Vector3<f64>, yaw: f64) -> [Vector3<f64>; N_FEET] {
    let (s, c) = yaw.sin_cos();
    std::array::from_fn(|leg| {
        let f = geometry.nominal_foot(leg);
        Vector3::new(p.x + c * f.x - s * f.y, p.y + s * f.x + c * f.y, 0.0)
    })
}

/// Finished run: log, per-tick solve times, and the divergence if any.
#[derive(Debug, Clone)]
pub struct Run {
    pub log: EpisodeLog,
    pub solve_ms: Vec<f64>,
    pub divergence: Option<Divergence>,
}

/// Drives the stack for `n_ticks` (or until `stop` returns true) with a
/// per-tick command source.
pub fn run_loop<C, S>(
    stack: &mut Stack,
    controller: &mut MpcController,
    plant: &mut SrbPlant<f64>,
    start: PlantState<f64>,
    n_ticks: usize,
    meta: LogMeta,
    mut command: C,
    mut stop: S,
) -> Result<Run>
where
    C: FnMut(usize, f64) -> PlanarCommand,
    S: FnMut(&LogRow) -> bool,
{
    let dt = stack.sim.dt_control();
    let mut log = EpisodeLog::new(meta);
    let mut solve_ms = Vec::with_capacity(n_ticks);
    let mut state = start;
    let mut divergence = None;
    for k in 0..n_ticks {
        let t = k as f64 * dt;
        let cmd = command(k, t);
        match stack.tick(t, &state, &cmd, controller, plant)? {
            TickResult::Advanced { next, row, solve_ms: ms } => {
                let done = stop(&row);
                log.rows.push(row);
                solve_ms.push(ms);
                state = next;
                if done {
                    break;
                }
            }
            TickResult::Diverged(d) => {
                divergence = Some(d);
                break;
            }
        }
    }
    match &divergence {
        Some(d) => {
            log.meta.insert("status".into(), "diverged".into());
            log.meta.insert("diverged_at".into(), format!("{}", d.t));
            log.meta.insert("diverged_reason".into(), d.reason.clone());
        }
        None => {
            log.meta.insert("status".into(), "completed".into());
        }
    }
    Ok(Run { log, solve_ms, divergence })
}
