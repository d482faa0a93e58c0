//! Open-loop prediction benchmarks on held-out episodes: windowed one-step and
//! rollout RMSE per velocity channel, SO(3) drift of the SE(3) lift, data-size
//! and degree sweeps, and the empirical error-bound check.

use nalgebra::{DMatrix, DVector, Matrix3, SVector, Vector3};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::edmdc::{assemble, excitation_diagnostics, fit_lifted, is_blown_up, Excitation, FitOptions, LiftedModel, Trajectory};
use crate::error::{Error, Result};
use crate::geom::{euler_to_rot, geodesic_error, unvec9, EulerZyx, Rotation};
use crate::harness::log::EpisodeLog;
use crate::lifting::{se3_lift, Dictionary};
use crate::nominal::{hover_inputs, TemplateState, THETA};
use crate::plant::{force_map, rk4_step, FootForces, PlantState, SrbParams, N_FEET};
use crate::residual::{
    corrected_predict, estimate_lipschitz, fit_residual_snapshots, residual_snapshots, residual_targets, verify_bound, BoundReport,
    ResidualModel, TransitionLog, N_RES,
};

pub const CHANNELS: [&str; 6] = ["vx", "vy", "vz", "wx", "wy", "wz"];

#[derive(Debug, Clone)]
pub enum BenchModel {
    Nominal,
    Residual(ResidualModel<f64>),
    /// Full-state monomial lift of `[p; Θ; v; ω]`.
    Mono(LiftedModel<f64>),
    /// SE(3) lift of `[p; v; vec R; ω_body]`.
    Se3(LiftedModel<f64>),
}

impl BenchModel {
    pub fn name(&self) -> &'static str {
        match self {
            BenchModel::Nominal => "nominal_srb",
            BenchModel::Residual(_) => "residual_koopman",
            BenchModel::Mono(_) => "monomial_edmd",
            BenchModel::Se3(_) => "se3_edmd",
        }
    }
}

/// A held-out or training episode with everything the predictors read.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub trans: TransitionLog<f64>,
    pub rot: Vec<Matrix3<f64>>,
    pub residuals: Vec<SVector<f64, N_RES>>,
}

impl Prepared {
    pub fn new(log: &EpisodeLog, params: &SrbParams<f64>, dt: f64) -> Result<Self> {
        let trans = log.transitions();
        let residuals = residual_targets(&trans, params, dt)?;
        let rot = log.rows.iter().map(|r| unvec9(&r.r)).collect();
        Ok(Self { trans, rot, residuals })
    }

    pub fn len(&self) -> usize {
        self.trans.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trans.states.is_empty()
    }

    fn twist(&self, k: usize) -> [f64; 6] {
        std::array::from_fn(|i| self.trans.states[k].0[6 + i])
    }

    fn full_state(&self, k: usize) -> DVector<f64> {
        DVector::from_column_slice(&self.trans.states[k].0.as_slice()[..12])
    }

    fn se3_state(&self, k: usize) -> DVector<f64> {
        let x = &self.trans.states[k];
        let r = self.rot[k];
        let wb = r.transpose() * x.omega();
        se3_lift(&x.p(), &x.v(), &r, &wb, 0)
    }
}

pub fn prepare_all(logs: &[EpisodeLog], params: &SrbParams<f64>, dt: f64) -> Result<Vec<Prepared>> {
    logs.iter().map(|l| Prepared::new(l, params, dt)).collect()
}

fn subsample_columns(n: usize, max: usize, seed: u64) -> Option<Vec<usize>> {
    if max == 0 || n <= max {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, n, max).into_vec();
    idx.sort_unstable();
    Some(idx)
}

fn fit_state_model(trajs: Vec<Trajectory<f64>>, dict: &Dictionary, lambda: f64, max_samples: usize, seed: u64) -> Result<LiftedModel<f64>> {
    let mut snap = assemble(&trajs, dict)?;
    if let Some(cols) = subsample_columns(snap.len(), max_samples, seed) {
        snap = snap.select(&cols);
    }
    fit_lifted(&snap, dict, &FitOptions { lambda, standardize: true })
}

/// Full-state monomial EDMDc baseline.
pub fn fit_mono(train: &[Prepared], degree: usize, lambda: f64, max_samples: usize, seed: u64) -> Result<LiftedModel<f64>> {
    let dict = Dictionary::monomial(12, degree)?;
    let trajs = train
        .iter()
        .map(|p| Trajectory { states: (0..p.len()).map(|k| p.full_state(k)).collect(), inputs: p.trans.inputs.clone() })
        .collect();
    fit_state_model(trajs, &dict, lambda, max_samples, seed)
}

/// SE(3)-structured EDMDc baseline.
pub fn fit_se3(train: &[Prepared], degree: usize, lambda: f64, max_samples: usize, seed: u64) -> Result<LiftedModel<f64>> {
    let dict = Dictionary::se3(degree)?;
    let trajs = train
        .iter()
        .map(|p| Trajectory { states: (0..p.len()).map(|k| p.se3_state(k)).collect(), inputs: p.trans.inputs.clone() })
        .collect();
    fit_state_model(trajs, &dict, lambda, max_samples, seed)
}

/// Window start positions `(episode, k)`: `k ≥ 1` so a measured residual exists,
/// and `k + horizon` stays inside the episode.
pub fn sample_windows(data: &[Prepared], horizon: usize, n: usize, seed: u64) -> Result<Vec<(usize, usize)>> {
    let valid: Vec<usize> = data.iter().map(|p| p.len().saturating_sub(horizon + 1)).collect();
    let total: usize = valid.iter().sum();
    if total == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| {
            let mut r = rng.random_range(0..total);
            let mut ep = 0;
            while r >= valid[ep] {
                r -= valid[ep];
                ep += 1;
            }
            (ep, r + 1)
        })
        .collect())
}

fn lifted_twist(model: &BenchModel, z: &DVector<f64>) -> [f64; 6] {
    match model {
        BenchModel::Mono(m) => {
            let slots = Dictionary::from_kind(m.dictionary.kind).expect("stored dictionary").linear_slots();
            std::array::from_fn(|i| z[slots[6 + i]])
        }
        BenchModel::Se3(_) => {
            let r = unvec9(&z.as_slice()[6..15]);
            let w = r * Vector3::new(z[15], z[16], z[17]);
            [z[3], z[4], z[5], w[0], w[1], w[2]]
        }
        _ => unreachable!("only lifted state models"),
    }
}

fn lift_at(model: &BenchModel, p: &Prepared, k: usize) -> DVector<f64> {
    match model {
        BenchModel::Mono(m) => Dictionary::from_kind(m.dictionary.kind).expect("stored dictionary").eval(p.full_state(k).as_slice()).expect("12 inputs"),
        BenchModel::Se3(m) => {
            let d = Dictionary::from_kind(m.dictionary.kind).expect("stored dictionary");
            d.eval(p.se3_state(k).as_slice()).expect("18 inputs")
        }
        _ => unreachable!("only lifted state models"),
    }
}

/// Errors `prediction − measurement` per velocity channel.
#[derive(Debug, Clone, Default)]
pub struct WindowErrors {
    pub one_step: Vec<[f64; 6]>,
    pub rollout: Vec<[f64; 6]>,
    pub blowup: Option<usize>,
    pub geodesic: Vec<f64>,
}

pub fn evaluate_window(model: &BenchModel, p: &Prepared, start: usize, horizon: usize, params: &SrbParams<f64>, dt: f64) -> Result<WindowErrors> {
    let mut out = WindowErrors::default();
    let diff = |a: [f64; 6], b: [f64; 6]| -> [f64; 6] { std::array::from_fn(|i| a[i] - b[i]) };
    let tr = &p.trans;
    match model {
        BenchModel::Nominal | BenchModel::Residual(_) => {
            let zero;
            let res = match model {
                BenchModel::Residual(m) => m,
                _ => {
                    zero = ResidualModel::zero(1)?;
                    &zero
                }
            };
            let lift_prev = |k: usize| res.lift(&p.residuals[k - 1]);
            for j in 0..horizon {
                let k = start + j;
                let (x, _) = corrected_predict(&tr.states[k], &tr.inputs[k], &lift_prev(k), &tr.stance[k], &tr.arms[k], params, dt, res)?;
                out.one_step.push(diff(twist_of(&x), p.twist(k + 1)));
            }
            let mut x = tr.states[start].clone();
            let mut z = lift_prev(start);
            for j in 0..horizon {
                let k = start + j;
                let (nx, nz) = corrected_predict(&x, &tr.inputs[k], &z, &tr.stance[k], &tr.arms[k], params, dt, res)?;
                x = nx;
                z = nz;
                let e = diff(twist_of(&x), p.twist(k + 1));
                if out.blowup.is_none() && e.iter().any(|v| !v.is_finite() || v.abs() > 1e6) {
                    out.blowup = Some(j + 1);
                }
                out.rollout.push(e);
            }
        }
        BenchModel::Mono(m) | BenchModel::Se3(m) => {
            for j in 0..horizon {
                let k = start + j;
                let z = m.step(&lift_at(model, p, k), &tr.inputs[k]);
                out.one_step.push(diff(lifted_twist(model, &z), p.twist(k + 1)));
            }
            let mut z = lift_at(model, p, start);
            let z0 = z.amax();
            for j in 0..horizon {
                let k = start + j;
                z = m.step(&z, &tr.inputs[k]);
                if out.blowup.is_none() && is_blown_up(&z, z0) {
                    out.blowup = Some(j + 1);
                }
                out.rollout.push(diff(lifted_twist(model, &z), p.twist(k + 1)));
                if let BenchModel::Se3(_) = model {
                    let truth = Rotation::new(p.rot[k + 1]).unwrap_or_else(|_| Rotation::identity());
                    out.geodesic.push(geodesic_error(&truth, &unvec9(&z.as_slice()[6..15])));
                }
            }
        }
    }
    Ok(out)
}

fn twist_of(x: &TemplateState<f64>) -> [f64; 6] {
    std::array::from_fn(|i| x.0[6 + i])
}

/// Per-channel RMSE over the finite, pre-blow-up part of an error series.
fn rmse(errs: &[[f64; 6]], upto: Option<usize>) -> [f64; 6] {
    let n = upto.unwrap_or(errs.len()).min(errs.len());
    std::array::from_fn(|i| {
        let vals: Vec<f64> = errs[..n].iter().map(|e| e[i]).filter(|v| v.is_finite()).collect();
        if vals.is_empty() {
            f64::MAX
        } else {
            (vals.iter().map(|v| v * v).sum::<f64>() / vals.len() as f64).sqrt().min(f64::MAX)
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: [f64; 6],
    pub std: [f64; 6],
}

impl ChannelStats {
    fn from_windows(per_window: &[[f64; 6]]) -> Self {
        let n = per_window.len().max(1) as f64;
        let mean: [f64; 6] = std::array::from_fn(|i| per_window.iter().map(|w| w[i]).sum::<f64>() / n);
        let std = std::array::from_fn(|i| (per_window.iter().map(|w| (w[i] - mean[i]).powi(2)).sum::<f64>() / n).sqrt());
        Self { mean, std }
    }

    pub fn overall(&self) -> f64 {
        self.mean.iter().sum::<f64>() / 6.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetrics {
    pub name: String,
    pub one_step: ChannelStats,
    pub rollout: ChannelStats,
    pub mean_one_step: f64,
    pub mean_rollout: f64,
    pub blowups: usize,
    /// First blown-up step of each window (`None` when the rollout stayed bounded).
    pub blowup_steps: Vec<Option<usize>>,
    /// Per-window one-step RMSE, for box plots.
    pub one_step_windows: Vec<[f64; 6]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub horizon: usize,
    pub windows: Vec<(usize, usize)>,
    pub models: Vec<ModelMetrics>,
    /// Mean `|tr(I − RᵀR̂)|` of SE(3) rollouts at horizons `1..=H`.
    pub drift_curve: Option<Vec<f64>>,
    pub drift_slope: Option<f64>,
    /// Held-out one-step steps where the corrected twist error is no larger than the template's.
    pub residual_better_fraction: Option<f64>,
}

impl BenchReport {
    pub fn model(&self, name: &str) -> Option<&ModelMetrics> {
        self.models.iter().find(|m| m.name == name)
    }
}

/// Least-squares slope of `y` against `1..=n`.
pub fn ls_slope(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let mx = (n + 1.0) / 2.0;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, v) in y.iter().enumerate() {
        let dx = (i + 1) as f64 - mx;
        sxy += dx * (v - my);
        sxx += dx * dx;
    }
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

pub fn predict_benchmark(
    models: &[BenchModel],
    heldout: &[Prepared],
    horizon: usize,
    n_windows: usize,
    seed: u64,
    params: &SrbParams<f64>,
    dt: f64,
) -> Result<BenchReport> {
    let windows = sample_windows(heldout, horizon, n_windows, seed)?;
    let mut metrics = Vec::with_capacity(models.len());
    let mut drift_curve = None;
    let mut per_model_steps: Vec<Vec<WindowErrors>> = Vec::new();
    for model in models {
        let errs: Vec<WindowErrors> = windows
            .par_iter()
            .map(|&(ep, k)| evaluate_window(model, &heldout[ep], k, horizon, params, dt))
            .collect::<Result<_>>()?;
        let one: Vec<[f64; 6]> = errs.iter().map(|e| rmse(&e.one_step, None)).collect();
        let roll: Vec<[f64; 6]> = errs.iter().map(|e| rmse(&e.rollout, e.blowup)).collect();
        let one_step = ChannelStats::from_windows(&one);
        let rollout = ChannelStats::from_windows(&roll);
        if let BenchModel::Se3(_) = model {
            let curve: Vec<f64> = (0..horizon)
                .map(|h| errs.iter().map(|e| e.geodesic[h].min(f64::MAX)).sum::<f64>() / errs.len() as f64)
                .collect();
            drift_curve = Some(curve);
        }
        metrics.push(ModelMetrics {
            name: model.name().into(),
            mean_one_step: one_step.overall(),
            mean_rollout: rollout.overall(),
            one_step,
            rollout,
            blowups: errs.iter().filter(|e| e.blowup.is_some()).count(),
            blowup_steps: errs.iter().map(|e| e.blowup).collect(),
            one_step_windows: one,
        });
        per_model_steps.push(errs);
    }
    let nominal = models.iter().position(|m| matches!(m, BenchModel::Nominal));
    let residual = models.iter().position(|m| matches!(m, BenchModel::Residual(_)));
    let residual_better_fraction = match (nominal, residual) {
        (Some(n), Some(r)) => {
            let (mut better, mut total) = (0usize, 0usize);
            for (a, b) in per_model_steps[n].iter().zip(&per_model_steps[r]) {
                for (ea, eb) in a.one_step.iter().zip(&b.one_step) {
                    let na: f64 = ea.iter().map(|v| v * v).sum();
                    let nb: f64 = eb.iter().map(|v| v * v).sum();
                    better += (nb <= na) as usize;
                    total += 1;
                }
            }
            Some(better as f64 / total.max(1) as f64)
        }
        _ => None,
    };
    let drift_slope = drift_curve.as_deref().map(ls_slope);
    Ok(BenchReport { horizon, windows, models: metrics, drift_curve, drift_slope, residual_better_fraction })
}

/// Mean of the per-channel windowed one-step RMSE of a residual model.
pub fn residual_overall_rmse(model: &ResidualModel<f64>, data: &[Prepared], windows: &[(usize, usize)], horizon: usize, params: &SrbParams<f64>, dt: f64) -> Result<f64> {
    let bm = BenchModel::Residual(model.clone());
    let per: Vec<[f64; 6]> = windows
        .iter()
        .map(|&(ep, k)| evaluate_window_one_step(&bm, &data[ep], k, horizon, params, dt))
        .collect::<Result<_>>()?;
    Ok(ChannelStats::from_windows(&per).overall())
}

fn evaluate_window_one_step(model: &BenchModel, p: &Prepared, start: usize, horizon: usize, params: &SrbParams<f64>, dt: f64) -> Result<[f64; 6]> {
    let BenchModel::Residual(res) = model else {
        return Ok(rmse(&evaluate_window(model, p, start, horizon, params, dt)?.one_step, None));
    };
    let tr = &p.trans;
    let mut errs = Vec::with_capacity(horizon);
    for j in 0..horizon {
        let k = start + j;
        let z = res.lift(&p.residuals[k - 1]);
        let (x, _) = corrected_predict(&tr.states[k], &tr.inputs[k], &z, &tr.stance[k], &tr.arms[k], params, dt, res)?;
        let t = twist_of(&x);
        let m = p.twist(k + 1);
        errs.push(std::array::from_fn(|i| t[i] - m[i]));
    }
    Ok(rmse(&errs, None))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: usize,
    pub rmse: Vec<f64>,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub kind: String,
    pub points: Vec<SweepPoint>,
    /// Sweep value with the lowest median RMSE.
    pub best: usize,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn sweep_point(value: usize, rmse: Vec<f64>) -> SweepPoint {
    let mut s = rmse.clone();
    s.sort_by(f64::total_cmp);
    SweepPoint { value, median: quantile(&s, 0.5), q1: quantile(&s, 0.25), q3: quantile(&s, 0.75), rmse }
}

fn finish_sweep(kind: &str, points: Vec<SweepPoint>) -> SweepReport {
    let best = points.iter().min_by(|a, b| a.median.total_cmp(&b.median)).map_or(0, |p| p.value);
    SweepReport { kind: kind.into(), points, best }
}

#[derive(Debug, Clone)]
pub struct SweepSetup<'a> {
    pub train: &'a [Prepared],
    pub test: &'a [Prepared],
    pub windows: usize,
    pub horizon: usize,
    pub repeats: usize,
    pub lambda: f64,
    pub seed: u64,
}

fn random_fit_rmse(setup: &SweepSetup, degree: usize, size: usize, repeat: usize, params: &SrbParams<f64>, dt: f64) -> Result<f64> {
    let logs: Vec<TransitionLog<f64>> = setup.train.iter().map(|p| p.trans.clone()).collect();
    let dict = Dictionary::monomial(N_RES, degree)?;
    let snap = residual_snapshots(&logs, params, dt, &dict)?;
    let seed = setup.seed ^ ((size as u64) << 20) ^ ((degree as u64) << 40) ^ repeat as u64;
    let snap = match subsample_columns(snap.len(), size, seed) {
        Some(cols) => snap.select(&cols),
        None => snap,
    };
    let model = fit_residual_snapshots(&snap, &dict, setup.lambda)?;
    let windows = sample_windows(setup.test, setup.horizon, setup.windows, setup.seed)?;
    residual_overall_rmse(&model, setup.test, &windows, setup.horizon, params, dt)
}

/// Held-out RMSE against the number of training transitions.
pub fn sample_efficiency_sweep(setup: &SweepSetup, sizes: &[usize], degree: usize, params: &SrbParams<f64>, dt: f64) -> Result<SweepReport> {
    let points = sizes
        .iter()
        .map(|&s| {
            let r = (0..setup.repeats).into_par_iter().map(|rep| random_fit_rmse(setup, degree, s, rep, params, dt)).collect::<Result<Vec<_>>>()?;
            Ok(sweep_point(s, r))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(finish_sweep("sample_efficiency", points))
}

/// Held-out RMSE against the residual lift degree at a fixed data size.
pub fn degree_sweep(setup: &SweepSetup, degrees: &[usize], size: usize, params: &SrbParams<f64>, dt: f64) -> Result<SweepReport> {
    let points = degrees
        .iter()
        .map(|&d| {
            let r = (0..setup.repeats).into_par_iter().map(|rep| random_fit_rmse(setup, d, size, rep, params, dt)).collect::<Result<Vec<_>>>()?;
            Ok(sweep_point(d, r))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(finish_sweep("degree", points))
}

/// One controller tick of the undisturbed plant on the template state, with
/// all four feet under the nominal stance and hover forces.
pub fn plant_tick_map(x: &DVector<f64>, params: &SrbParams<f64>, arms: &[Vector3<f64>; N_FEET], dt_plant: f64, steps: usize) -> DVector<f64> {
    let r = euler_to_rot(&EulerZyx { roll: x[THETA], pitch: x[THETA + 1], yaw: x[THETA + 2] });
    let mut s = PlantState {
        p: Vector3::new(x[0], x[1], x[2]),
        r,
        v: Vector3::new(x[6], x[7], x[8]),
        omega: Vector3::new(x[9], x[10], x[11]),
    };
    let u = hover_inputs(params, N_FEET);
    let mut f = FootForces::zero();
    f.contact = [true; N_FEET];
    f.moment_arms = *arms;
    for leg in 0..N_FEET {
        f.forces[leg] = Vector3::new(u[3 * leg], u[3 * leg + 1], u[3 * leg + 2]);
    }
    let w = force_map(&f);
    for _ in 0..steps {
        s = rk4_step(&s, &w, params, dt_plant).expect("finite inertia");
    }
    let t = TemplateState::from_plant(&s, Some(x[THETA + 2])).expect("away from gimbal lock");
    DVector::from_column_slice(&t.0.as_slice()[..12])
}

/// Sampled Lipschitz constant of the plant's controller-rate map around training states.
pub fn plant_lipschitz(train: &[Prepared], arms: &[Vector3<f64>; N_FEET], params: &SrbParams<f64>, dt_plant: f64, steps: usize, pairs: usize, seed: u64) -> f64 {
    let states: Vec<DVector<f64>> = train.iter().flat_map(|p| (0..p.len()).map(move |k| p.full_state(k))).collect();
    if states.is_empty() {
        return 0.0;
    }
    estimate_lipschitz(
        |x| plant_tick_map(x, params, arms, dt_plant, steps),
        |rng| states[rng.random_range(0..states.len())].clone(),
        pairs,
        seed,
    )
}

pub fn bound_check(model: &ResidualModel<f64>, train: &[Prepared], heldout: &[Prepared], lipschitz: f64, params: &SrbParams<f64>, dt: f64, horizon: usize) -> Result<BoundReport> {
    let tr: Vec<TransitionLog<f64>> = train.iter().map(|p| p.trans.clone()).collect();
    let ho: Vec<TransitionLog<f64>> = heldout.iter().map(|p| p.trans.clone()).collect();
    verify_bound(model, &tr, &ho, lipschitz, params, dt, horizon)
}

/// Rank and conditioning of the planar-twist signal `(v_x, v_y, ω_z)` in the body frame.
pub fn planar_excitation(data: &[Prepared]) -> Excitation {
    let cols: Vec<[f64; 3]> = data
        .iter()
        .flat_map(|p| {
            p.trans.states.iter().map(|x| {
                let (s, c) = x.yaw().sin_cos();
                let v = x.v();
                [c * v[0] + s * v[1], -s * v[0] + c * v[1], x.omega()[2]]
            })
        })
        .collect();
    let y = DMatrix::from_fn(3, cols.len(), |i, j| cols[j][i]);
    excitation_diagnostics(&y)
}
