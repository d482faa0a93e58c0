//! Closed-loop tracking runs (circle or standing hold) and the metrics derived
//! from their logs.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::edmdc::LiftedModel;
use crate::error::{Error, Result};
use crate::footstep::PlanarCommand;
use crate::gait::GaitParams;
use crate::harness::collect::base_meta;
use crate::harness::log::EpisodeLog;
use crate::harness::sim::{run_loop, Run, Stack};
use crate::mpc::{pyramid_violation, MpcController, Predictor, Variant};
use crate::plant::{sample_params, PlantState, SrbParams, SrbPlant};
use crate::residual::ResidualModel;

/// Unwrapped polar-angle progress around a circle centre, in laps.
#[derive(Debug, Clone)]
pub struct LapCounter {
    centre: [f64; 2],
    last: Option<f64>,
    swept: f64,
}

impl LapCounter {
    pub fn new(radius: f64) -> Self {
        Self { centre: [0.0, radius], last: None, swept: 0.0 }
    }

    pub fn update(&mut self, x: f64, y: f64) -> f64 {
        let a = (y - self.centre[1]).atan2(x - self.centre[0]);
        if let Some(prev) = self.last {
            let mut d = a - prev;
            if d > std::f64::consts::PI {
                d -= TAU;
            } else if d < -std::f64::consts::PI {
                d += TAU;
            }
            self.swept += d;
        }
        self.last = Some(a);
        self.laps()
    }

    pub fn laps(&self) -> f64 {
        self.swept / TAU
    }
}

pub fn is_standing(cfg: &RunConfig) -> bool {
    cfg.run.radius <= 0.0 || cfg.run.speed <= 0.0
}

/// Circle (or standing hold) under `variant`. A divergence is returned inside
/// the `Run` so the partial log can be kept.
pub fn closed_loop(cfg: &RunConfig, variant: Variant, residual: Option<ResidualModel<f64>>, se3: Option<LiftedModel<f64>>) -> Result<Run> {
    let seed = cfg.seed;
    let nominal = SrbParams::go1();
    let dist = cfg.run.disturbance.resolve(seed)?;
    let params = sample_params(&nominal, &dist);
    let mut plant = SrbPlant::new(params, dist)?;
    let standing = is_standing(cfg);
    let gait = if standing { GaitParams::stand() } else { GaitParams::by_name(&cfg.run.gait)? };
    let start = PlantState::at_rest(cfg.geometry.stand_height);
    let mut stack = Stack::new(gait, cfg.geometry, cfg.footstep, cfg.sim.clone(), &start)?;
    let predictor = Predictor::for_variant(variant, residual, se3)?;
    let mpc = cfg.variant_config(variant);
    let mut ctl = MpcController::new(mpc.clone(), cfg.weights.clone(), nominal, predictor)?;
    let dt = cfg.sim.dt_control();

    let mut meta = base_meta(cfg, seed, "run");
    meta.insert("variant".into(), variant.name().into());
    meta.insert("tier".into(), cfg.run.disturbance.tier.clone());
    meta.insert("mode".into(), if standing { "stand" } else { "circle" }.into());
    meta.insert("radius".into(), format!("{}", cfg.run.radius));
    meta.insert("speed".into(), format!("{}", cfg.run.speed));
    meta.insert("laps_target".into(), format!("{}", cfg.run.laps));
    meta.insert("mu".into(), format!("{}", mpc.mu));
    meta.insert("f_min".into(), format!("{}", mpc.f_min));
    meta.insert("f_max".into(), format!("{}", mpc.f_max));
    meta.insert("nominal_mass".into(), format!("{}", nominal.mass));
    meta.insert("gravity".into(), format!("{}", nominal.gravity));
    meta.insert("se3_project".into(), mpc.se3_project.to_string());

    if standing {
        let n = (cfg.run.hold_s / dt).round() as usize;
        return run_loop(&mut stack, &mut ctl, &mut plant, start, n, meta, |_, _| PlanarCommand::default(), |_| false);
    }
    let (r, v, laps) = (cfg.run.radius, cfg.run.speed, cfg.run.laps);
    let cmd = PlanarCommand { v_x: v, v_y: 0.0, omega_z: v / r };
    let lap_time = TAU * r / v;
    let n = (laps * lap_time * cfg.run.time_cap_factor / dt).ceil() as usize;
    let mut counter = LapCounter::new(r);
    run_loop(&mut stack, &mut ctl, &mut plant, start, n, meta, |_, _| cmd, |row| counter.update(row.x[0], row.x[1]) >= laps)
}

/// Divergence of a finished run as an error.
pub fn require_completed(run: &Run) -> Result<()> {
    match &run.divergence {
        Some(d) => Err(Error::RunDiverged { t: d.t, reason: d.reason.clone() }),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopMetrics {
    pub variant: String,
    pub mode: String,
    pub status: String,
    pub duration_s: f64,
    pub ticks: usize,
    pub laps: f64,
    pub laps_target: f64,
    /// Body-frame tracking RMSE of `(v_x, v_y, ω_z)` against the command.
    pub tracking_rmse: [f64; 3],
    pub cross_track_rmse: f64,
    pub cross_track_max: f64,
    pub roll_range: [f64; 2],
    pub pitch_range: [f64; 2],
    pub max_tilt: f64,
    pub friction_violations: usize,
    pub max_friction_violation: f64,
    pub fallback_ticks: usize,
    /// Time-averaged sum of commanded vertical forces.
    pub mean_total_fz: f64,
    pub weight: f64,
    pub attitude_orth_final: Option<f64>,
    pub attitude_orth_monotone: Option<bool>,
}

fn meta_f64(log: &EpisodeLog, key: &str) -> Result<f64> {
    log.meta_value(key)
        .ok_or_else(|| Error::Config(format!("log metadata lacks `{key}`")))?
        .parse()
        .map_err(|_| Error::Config(format!("log metadata `{key}` is not a number")))
}

/// Tolerance below which a friction-pyramid excess is not counted.
pub const FRICTION_TOL: f64 = 1e-8;

/// Every closed-loop metric, recomputed from the log alone.
pub fn closed_loop_metrics(log: &EpisodeLog) -> Result<ClosedLoopMetrics> {
    let mu = meta_f64(log, "mu")?;
    let f_min = meta_f64(log, "f_min")?;
    let f_max = meta_f64(log, "f_max")?;
    let radius = meta_f64(log, "radius")?;
    let weight = meta_f64(log, "nominal_mass")? * meta_f64(log, "gravity")?;
    let rows = &log.rows;
    let n = rows.len().max(1) as f64;

    let mut sq = [0.0; 3];
    let mut cross = (0.0, 0.0f64);
    let mut roll = [f64::INFINITY, f64::NEG_INFINITY];
    let mut pitch = [f64::INFINITY, f64::NEG_INFINITY];
    let (mut violations, mut worst, mut fz) = (0, 0.0f64, 0.0);
    let mut counter = LapCounter::new(radius);
    let circle = log.meta_value("mode") == Some("circle");
    for row in rows {
        let (s, c) = row.x[5].sin_cos();
        let vb = [c * row.x[6] + s * row.x[7], -s * row.x[6] + c * row.x[7], row.x[11]];
        for i in 0..3 {
            sq[i] += (vb[i] - row.cmd[i]).powi(2);
        }
        if circle {
            let d = ((row.x[0]).powi(2) + (row.x[1] - radius).powi(2)).sqrt() - radius;
            cross.0 += d * d;
            cross.1 = cross.1.max(d.abs());
            counter.update(row.x[0], row.x[1]);
        }
        roll = [roll[0].min(row.x[3]), roll[1].max(row.x[3])];
        pitch = [pitch[0].min(row.x[4]), pitch[1].max(row.x[4])];
        let v = pyramid_violation(&row.forces_cmd(), &row.stance, mu, f_min, f_max);
        worst = worst.max(v);
        violations += (v > FRICTION_TOL) as usize;
        fz += (0..4).map(|l| row.u_cmd[3 * l + 2]).sum::<f64>();
    }
    let orth: Vec<f64> = rows.iter().map(|r| r.attitude_orth).filter(|v| !v.is_nan()).collect();
    let max_tilt = roll.iter().chain(&pitch).fold(0.0f64, |m, v| if v.is_finite() { m.max(v.abs()) } else { m });
    Ok(ClosedLoopMetrics {
        variant: log.meta_value("variant").unwrap_or("").into(),
        mode: log.meta_value("mode").unwrap_or("").into(),
        status: log.meta_value("status").unwrap_or("").into(),
        duration_s: rows.last().map_or(0.0, |r| r.t) + rows.get(1).map_or(0.0, |r| r.t),
        ticks: rows.len(),
        laps: counter.laps(),
        laps_target: if circle { meta_f64(log, "laps_target")? } else { 0.0 },
        tracking_rmse: sq.map(|v| (v / n).sqrt()),
        cross_track_rmse: (cross.0 / n).sqrt(),
        cross_track_max: cross.1,
        roll_range: roll,
        pitch_range: pitch,
        max_tilt,
        friction_violations: violations,
        max_friction_violation: worst,
        fallback_ticks: rows.iter().filter(|r| r.fallback).count(),
        mean_total_fz: fz / n,
        weight,
        attitude_orth_final: orth.last().copied(),
        attitude_orth_monotone: (!orth.is_empty()).then(|| orth.windows(2).all(|w| w[1] >= w[0])),
    })
}

/// Cross-track error series `(t, e)` of a circle run.
pub fn cross_track_series(log: &EpisodeLog) -> Result<Vec<(f64, f64)>> {
    let radius = meta_f64(log, "radius")?;
    Ok(log.rows.iter().map(|r| (r.t, (r.x[0].powi(2) + (r.x[1] - radius).powi(2)).sqrt() - radius)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub count: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p99_ms: f64,
    pub max_ms: f64,
}

pub fn solve_stats(ms: &[f64]) -> SolveStats {
    let mut s = ms.to_vec();
    s.sort_by(f64::total_cmp);
    let pick = |q: f64| if s.is_empty() { 0.0 } else { s[((s.len() - 1) as f64 * q).round() as usize] };
    SolveStats {
        count: s.len(),
        mean_ms: if s.is_empty() { 0.0 } else { s.iter().sum::<f64>() / s.len() as f64 },
        p50_ms: pick(0.5),
        p99_ms: pick(0.99),
        max_ms: s.last().copied().unwrap_or(0.0),
    }
}
