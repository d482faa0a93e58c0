//! Residual Koopman model: twist residuals of the template against measured
//! transitions, a lifted linear predictor for them, the corrected one-step
//! predictor, and the empirical error-bound check.

use nalgebra::{DMatrix, DVector, SVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::edmdc::{assemble, fit_lifted, fit_output, FitOptions, LiftedModel, SnapshotSet, Trajectory};
use crate::error::{Error, Result};
use crate::lifting::Dictionary;
use crate::nominal::{build_ltv, predict_full, stance_inputs, LtvMatrices, TemplateState, NX, THETA, V};
use crate::plant::{SrbParams, N_FEET};
use crate::scalar::{lit, to_f64, Real};

pub const N_RES: usize = 6;
pub const N_U: usize = 3 * N_FEET;
pub const DEFAULT_DEGREE: usize = 2;

/// Measured transitions of one episode: `inputs[k]`, `stance[k]` and `arms[k]`
/// describe the step from `states[k]` to `states[k+1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionLog<T: Real> {
    pub states: Vec<TemplateState<T>>,
    pub inputs: Vec<DVector<T>>,
    pub stance: Vec<[bool; N_FEET]>,
    pub arms: Vec<[Vector3<T>; N_FEET]>,
}

impl<T: Real> TransitionLog<T> {
    pub fn n_transitions(&self) -> usize {
        self.states.len().saturating_sub(1)
    }

    fn check(&self) -> Result<()> {
        let need = self.n_transitions();
        for (name, have) in [("inputs", self.inputs.len()), ("stance", self.stance.len()), ("moment arms", self.arms.len())] {
            if have < need {
                return Err(Error::MissingScheduleData(format!("{name}: {have} entries for {need} transitions")));
            }
        }
        if let Some(u) = self.inputs.iter().find(|u| u.len() != N_U) {
            return Err(Error::DimensionMismatch { what: "input vector", expected: N_U, got: u.len() });
        }
        Ok(())
    }

    /// Template prediction of `states[k+1]` from `states[k]`.
    pub fn nominal_prediction(&self, k: usize, params: &SrbParams<T>, dt: T) -> Result<TemplateState<T>> {
        predict_full(&self.states[k], self.inputs[k].as_slice(), &self.arms[k], &self.stance[k], params, dt)
    }
}

/// Full-state nominal errors `x_{k+1} − x^nom_{k+1}` for every transition.
pub fn nominal_errors<T: Real>(log: &TransitionLog<T>, params: &SrbParams<T>, dt: T) -> Result<Vec<SVector<T, NX>>> {
    log.check()?;
    (0..log.n_transitions())
        .map(|k| Ok(log.states[k + 1].0 - log.nominal_prediction(k, params, dt)?.0))
        .collect()
}

/// Twist residuals `[Δv; Δω]`; entry `k` belongs to the transition into `states[k+1]`.
pub fn residual_targets<T: Real>(log: &TransitionLog<T>, params: &SrbParams<T>, dt: T) -> Result<Vec<SVector<T, N_RES>>> {
    Ok(nominal_errors(log, params, dt)?.into_iter().map(|e| e.fixed_rows::<N_RES>(V).into_owned()).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualModel<T: Real> {
    pub lifted: LiftedModel<T>,
    pub dictionary: Dictionary,
}

impl<T: Real> ResidualModel<T> {
    /// All-zero operators: the corrected predictor equals the template.
    pub fn zero(degree: usize) -> Result<Self> {
        let dictionary = Dictionary::monomial(N_RES, degree)?;
        let q = dictionary.output_dim();
        let lifted = LiftedModel {
            a: DMatrix::zeros(q, q),
            b: DMatrix::zeros(q, N_U),
            offset: DVector::zeros(q),
            c: Some(DMatrix::zeros(N_RES, q)),
            c_offset: Some(DVector::zeros(N_RES)),
            dictionary: dictionary.descriptor(),
            standardizer: crate::lifting::Standardizer::identity(q + N_U),
            lambda: 0.0,
            dataset_fingerprint: String::new(),
        };
        Ok(Self { lifted, dictionary })
    }

    pub fn from_lifted(lifted: LiftedModel<T>) -> Result<Self> {
        let dictionary = Dictionary::from_kind(lifted.dictionary.kind)?;
        if dictionary.input_dim() != N_RES || lifted.c.is_none() || lifted.m() != N_U {
            return Err(Error::Format("not a residual model".into()));
        }
        Ok(Self { lifted, dictionary })
    }

    pub fn q(&self) -> usize {
        self.lifted.q()
    }

    pub fn lift(&self, e: &SVector<T, N_RES>) -> DVector<T> {
        self.dictionary.eval(e.as_slice()).expect("residual dictionary takes 6 inputs")
    }

    /// Cold-start lifted residual `ψ(0)`.
    pub fn cold_start(&self) -> DVector<T> {
        self.lift(&SVector::zeros())
    }

    pub fn c(&self) -> &DMatrix<T> {
        self.lifted.c.as_ref().expect("residual model has an output map")
    }

    /// `ê = C z + c`.
    pub fn output(&self, z: &DVector<T>) -> DVector<T> {
        self.lifted.output(z).expect("residual model has an output map")
    }
}

/// Lifted residual snapshots `(ψ(e_j), u_{j+1}) → ψ(e_{j+1})`, episode boundaries respected.
pub fn residual_snapshots<T: Real>(
    logs: &[TransitionLog<T>],
    params: &SrbParams<T>,
    dt: T,
    dict: &Dictionary,
) -> Result<SnapshotSet<T>> {
    let mut trajs = Vec::with_capacity(logs.len());
    for log in logs {
        let e = residual_targets(log, params, dt)?;
        if e.len() < 2 {
            continue;
        }
        // residual e[j] enters the step driven by inputs[j + 1]
        trajs.push(Trajectory {
            states: e.iter().map(|v| DVector::from_column_slice(v.as_slice())).collect(),
            inputs: (1..e.len()).map(|j| log.inputs[j].clone()).collect(),
        });
    }
    assemble(&trajs, dict)
}

/// `(A_res, B_res)` by ridge regression on the snapshots, `C_res` on the residual coordinates.
pub fn fit_residual_snapshots<T: Real>(snap: &SnapshotSet<T>, dict: &Dictionary, lambda: f64) -> Result<ResidualModel<T>> {
    if dict.input_dim() != N_RES {
        return Err(Error::DimensionMismatch { what: "residual dictionary input", expected: N_RES, got: dict.input_dim() });
    }
    let mut lifted = fit_lifted(snap, dict, &FitOptions { lambda, standardize: true })?;
    let slots = dict.linear_slots();
    let targets = DMatrix::from_fn(N_RES, snap.len(), |i, j| snap.z[(slots[i], j)]);
    fit_output(&mut lifted, &snap.z, &targets, dict)?;
    Ok(ResidualModel { lifted, dictionary: dict.clone() })
}

/// Fits the residual model on every transition of the logs.
pub fn fit_residual<T: Real>(
    logs: &[TransitionLog<T>],
    params: &SrbParams<T>,
    dt: T,
    degree: usize,
    lambda: f64,
) -> Result<ResidualModel<T>> {
    let dict = Dictionary::monomial(N_RES, degree)?;
    let snap = residual_snapshots(logs, params, dt, &dict)?;
    fit_residual_snapshots(&snap, &dict, lambda)
}

/// Corrected one-step prediction `A x + B u + C(A_res z + B_res u)` on the twist rows.
pub fn corrected_step<T: Real>(
    x: &TemplateState<T>,
    u_full: &DVector<T>,
    z: &DVector<T>,
    mats: &LtvMatrices<T>,
    model: &ResidualModel<T>,
) -> Result<(TemplateState<T>, DVector<T>)> {
    if u_full.len() != N_U {
        return Err(Error::DimensionMismatch { what: "input vector", expected: N_U, got: u_full.len() });
    }
    if z.len() != model.q() {
        return Err(Error::DimensionMismatch { what: "lifted residual", expected: model.q(), got: z.len() });
    }
    let u = stance_inputs(u_full.as_slice(), &mats.stance);
    let mut next = crate::nominal::nominal_step(x, &u, mats)?;
    let z_next = model.lifted.step(z, u_full);
    let e_hat = model.output(&z_next);
    for i in 0..N_RES {
        next.0[V + i] += e_hat[i];
    }
    Ok((next, z_next))
}

/// Corrected prediction with the schedule of a logged step (handles flight phases).
pub fn corrected_predict<T: Real>(
    x: &TemplateState<T>,
    u_full: &DVector<T>,
    z: &DVector<T>,
    stance: &[bool; N_FEET],
    arms: &[Vector3<T>; N_FEET],
    params: &SrbParams<T>,
    dt: T,
    model: &ResidualModel<T>,
) -> Result<(TemplateState<T>, DVector<T>)> {
    if stance.iter().any(|&s| s) {
        let mats = build_ltv(x.yaw(), arms, stance, params, dt)?;
        return corrected_step(x, u_full, z, &mats, model);
    }
    let mut next = predict_full(x, u_full.as_slice(), arms, stance, params, dt)?;
    let z_next = model.lifted.step(z, u_full);
    let e_hat = model.output(&z_next);
    for i in 0..N_RES {
        next.0[V + i] += e_hat[i];
    }
    Ok((next, z_next))
}

/// State distance used by the error bound: Euclidean over `[p; Θ; v; ω]`.
pub fn state_error<T: Real>(a: &TemplateState<T>, b: &TemplateState<T>) -> f64 {
    let mut s = 0.0;
    for i in 0..NX - 1 {
        let mut d = to_f64(a.0[i] - b.0[i]);
        if i == THETA + 2 {
            d = wrap_pi(d);
        }
        s += d * d;
    }
    s.sqrt()
}

fn wrap_pi(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    a - two_pi * ((a + std::f64::consts::PI) / two_pi).floor()
}

/// Per-step one-step errors of the template and of the corrected predictor,
/// each as `x_{k+1} − x̂_{k+1}` (12 entries, yaw wrapped).
#[derive(Debug, Clone, PartialEq)]
pub struct OneStepErrors {
    pub nominal: Vec<[f64; NX - 1]>,
    pub corrected: Vec<[f64; NX - 1]>,
}

/// One-step errors over a log; `z_k = ψ(e_k)` from the measured previous
/// transition, `ψ(0)` for the first.
pub fn one_step_errors<T: Real>(
    log: &TransitionLog<T>,
    params: &SrbParams<T>,
    dt: T,
    model: &ResidualModel<T>,
) -> Result<OneStepErrors> {
    let e = residual_targets(log, params, dt)?;
    let mut out = OneStepErrors { nominal: Vec::with_capacity(e.len()), corrected: Vec::with_capacity(e.len()) };
    let diff = |a: &TemplateState<T>, b: &TemplateState<T>| -> [f64; NX - 1] {
        std::array::from_fn(|i| {
            let d = to_f64(a.0[i] - b.0[i]);
            if i == THETA + 2 {
                wrap_pi(d)
            } else {
                d
            }
        })
    };
    for k in 0..e.len() {
        let z = if k == 0 { model.cold_start() } else { model.lift(&e[k - 1]) };
        let nom = log.nominal_prediction(k, params, dt)?;
        let (cor, _) = corrected_predict(&log.states[k], &log.inputs[k], &z, &log.stance[k], &log.arms[k], params, dt, model)?;
        out.nominal.push(diff(&log.states[k + 1], &nom));
        out.corrected.push(diff(&log.states[k + 1], &cor));
    }
    Ok(out)
}

/// Sampled Lipschitz estimate `max ‖F(x) − F(y)‖ / ‖x − y‖` over pairs with
/// separations log-uniform in `[1e-4, 1e-1]`. The `k`-th pair depends only
/// on `seed` and `k`, so larger `n_pairs` extends the sample.
pub fn estimate_lipschitz<F, S>(map: F, mut sample: S, n_pairs: usize, seed: u64) -> f64
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
    S: FnMut(&mut ChaCha8Rng) -> DVector<f64>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: f64 = 0.0;
    for _ in 0..n_pairs {
        let x = sample(&mut rng);
        let mut dir = DVector::from_fn(x.len(), |_, _| rng.random_range(-1.0..1.0));
        let nrm = dir.norm();
        if nrm == 0.0 {
            continue;
        }
        dir /= nrm;
        let sep = 10f64.powf(rng.random_range(-4.0..-1.0));
        let y = &x + dir * sep;
        let fx = map(&x);
        let fy = map(&y);
        let ratio = (fx - fy).norm() / (&x - &y).norm();
        if ratio.is_finite() {
            best = best.max(ratio);
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub lipschitz: f64,
    pub epsilon: f64,
    pub train_steps: usize,
    pub train_violations: usize,
    pub heldout_steps: usize,
    pub heldout_violations: usize,
    pub heldout_violation_rate: f64,
    pub horizon: usize,
    pub windows: usize,
    /// Bound from recursing the one-step inequality, `Σ (2L)^{j−1−i} ε`.
    pub envelope_strict: Vec<f64>,
    /// Sum with `L^{j−1−i}` weights.
    pub envelope_printed: Vec<f64>,
    /// Largest observed held-out error after `j` open-loop steps.
    pub max_observed: Vec<f64>,
    pub strict_dominates: bool,
    /// Horizons `1..=N` at which the strict envelope covers the observed maximum.
    pub strict_dominated_steps: usize,
    pub printed_dominates: bool,
}

fn one_step_norms<T: Real>(
    logs: &[TransitionLog<T>],
    params: &SrbParams<T>,
    dt: T,
    model: &ResidualModel<T>,
) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for log in logs {
        let errs = one_step_errors(log, params, dt, model)?;
        out.extend(errs.corrected.iter().map(|e| e.iter().map(|v| v * v).sum::<f64>().sqrt()));
    }
    Ok(out)
}

/// Open-loop corrected rollout of `horizon` steps from a measured state,
/// returning the error after each step.
pub fn rollout_errors<T: Real>(
    log: &TransitionLog<T>,
    start: usize,
    horizon: usize,
    z0: DVector<T>,
    params: &SrbParams<T>,
    dt: T,
    model: &ResidualModel<T>,
) -> Result<Vec<f64>> {
    let mut x = log.states[start].clone();
    let mut z = z0;
    let mut errs = Vec::with_capacity(horizon);
    for j in 0..horizon {
        let k = start + j;
        let (nx, nz) = corrected_predict(&x, &log.inputs[k], &z, &log.stance[k], &log.arms[k], params, dt, model)?;
        x = nx;
        z = nz;
        errs.push(state_error(&log.states[k + 1], &x));
    }
    Ok(errs)
}

pub fn verify_bound<T: Real>(
    model: &ResidualModel<T>,
    train: &[TransitionLog<T>],
    heldout: &[TransitionLog<T>],
    lipschitz: f64,
    params: &SrbParams<T>,
    dt: T,
    horizon: usize,
) -> Result<BoundReport> {
    let train_norms = one_step_norms(train, params, dt, model)?;
    if train_norms.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let epsilon = train_norms.iter().copied().fold(0.0, f64::max);
    let train_violations = train_norms.iter().filter(|&&e| e > epsilon).count();
    let held_norms = one_step_norms(heldout, params, dt, model)?;
    let heldout_violations = held_norms.iter().filter(|&&e| e > epsilon).count();

    let l = lipschitz;
    let envelope_strict: Vec<f64> = (1..=horizon).map(|j| (0..j).map(|i| (2.0 * l).powi((j - 1 - i) as i32) * epsilon).sum()).collect();
    let envelope_printed: Vec<f64> = (1..=horizon).map(|j| (0..j).map(|i| l.powi((j - 1 - i) as i32) * epsilon).sum()).collect();

    let mut max_observed = vec![0.0f64; horizon];
    let mut windows = 0;
    for log in heldout {
        let e = residual_targets(log, params, dt)?;
        let n = log.n_transitions();
        let mut start = 1;
        while start + horizon <= n {
            let z0 = model.lift(&e[start - 1]);
            let errs = rollout_errors(log, start, horizon, z0, params, dt, model)?;
            for (m, v) in max_observed.iter_mut().zip(errs) {
                *m = m.max(v);
            }
            windows += 1;
            start += horizon;
        }
    }
    // Domination is judged on the N-step error; earlier steps are counted for diagnostics.
    let dominates = |env: &[f64]| max_observed.last().zip(env.last()).is_some_and(|(o, e)| o <= e);
    let dominated_steps = envelope_strict.iter().zip(&max_observed).filter(|(e, o)| o <= e).count();
    Ok(BoundReport {
        lipschitz: l,
        epsilon,
        train_steps: train_norms.len(),
        train_violations,
        heldout_steps: held_norms.len(),
        heldout_violations,
        heldout_violation_rate: if held_norms.is_empty() { 0.0 } else { heldout_violations as f64 / held_norms.len() as f64 },
        horizon,
        windows,
        strict_dominates: dominates(&envelope_strict),
        strict_dominated_steps: dominated_steps,
        printed_dominates: dominates(&envelope_printed),
        envelope_strict,
        envelope_printed,
        max_observed,
    })
}

/// Sample variance helper kept generic for f32 callers.
pub fn rms<T: Real>(values: &[T]) -> T {
    if values.is_empty() {
        return T::zero();
    }
    let s = values.iter().fold(T::zero(), |a, &v| a + v * v);
    (s / lit::<T>(values.len() as f64)).sqrt()
}
