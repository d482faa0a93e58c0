//! End-to-end steps shared by the command-line tool and the test suites:
//! writing a collection, fitting each model kind, and evaluating them.

use std::path::Path;

use nalgebra::Vector3;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::edmdc::LiftedModel;
use crate::error::{Error, Result};
use crate::harness::bench::{
    bound_check, degree_sweep, fit_mono, fit_se3, planar_excitation, plant_lipschitz, predict_benchmark, prepare_all, sample_efficiency_sweep,
    BenchModel, Prepared, SweepSetup, CHANNELS,
};
use crate::harness::log::EpisodeLog;
use crate::harness::report::{episode_file_name, EvalReport, Manifest, ModelKind, Stamp};
use crate::harness::sim::Run;
use crate::plant::{SrbParams, N_FEET};
use crate::residual::{fit_residual, ResidualModel, TransitionLog};

/// Writes episode logs and the manifest; returns the manifest.
pub fn write_collection(cfg: &RunConfig, dir: &Path, runs: &[Run]) -> Result<Manifest> {
    std::fs::create_dir_all(dir)?;
    let mut names = Vec::with_capacity(runs.len());
    for (i, run) in runs.iter().enumerate() {
        let name = episode_file_name(i);
        run.log.save(&dir.join(&name))?;
        names.push(name);
    }
    std::fs::write(dir.join("config.toml"), cfg.to_toml()?)?;
    names.push("config.toml".into());
    let manifest = Manifest::build(dir, "collect", Stamp::of(cfg), &names)?;
    manifest.write(dir)?;
    Ok(manifest)
}

/// Episode indices `(train, heldout)`; the trailing episodes are held out.
pub fn split_episodes(n: usize, heldout: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    if heldout == 0 || heldout >= n {
        return Err(Error::Config(format!("fit.heldout_episodes = {heldout} needs 1..{n} with {n} episodes")));
    }
    Ok(((0..n - heldout).collect(), (n - heldout..n).collect()))
}

pub fn dataset_fingerprint(logs: &[EpisodeLog]) -> Result<String> {
    let mut h = Sha256::new();
    for log in logs {
        let mut buf = Vec::new();
        log.write(&mut buf)?;
        h.update(Sha256::digest(&buf));
    }
    Ok(hex::encode(h.finalize()))
}

/// Training and held-out episodes prepared for fitting and benchmarking.
#[derive(Debug, Clone)]
pub struct Split {
    pub train_idx: Vec<usize>,
    pub heldout_idx: Vec<usize>,
    pub train: Vec<Prepared>,
    pub heldout: Vec<Prepared>,
    pub fingerprint: String,
}

pub fn prepare_split(cfg: &RunConfig, logs: &[EpisodeLog]) -> Result<Split> {
    let (train_idx, heldout_idx) = split_episodes(logs.len(), cfg.fit.heldout_episodes)?;
    let params = SrbParams::go1();
    let dt = cfg.sim.dt_control();
    let pick = |idx: &[usize]| idx.iter().map(|&i| logs[i].clone()).collect::<Vec<_>>();
    Ok(Split {
        train: prepare_all(&pick(&train_idx), &params, dt)?,
        heldout: prepare_all(&pick(&heldout_idx), &params, dt)?,
        train_idx,
        heldout_idx,
        fingerprint: dataset_fingerprint(logs)?,
    })
}

/// Fits one model kind on the training episodes.
pub fn fit_kind(cfg: &RunConfig, kind: ModelKind, split: &Split) -> Result<LiftedModel<f64>> {
    let f = &cfg.fit;
    let mut model = match kind {
        ModelKind::Residual => {
            let logs: Vec<TransitionLog<f64>> = split.train.iter().map(|p| p.trans.clone()).collect();
            fit_residual(&logs, &SrbParams::go1(), cfg.sim.dt_control(), f.residual_degree, f.lambda)?.lifted
        }
        ModelKind::Mono => fit_mono(&split.train, f.mono_degree, f.lambda, f.mono_max_samples, cfg.seed)?,
        ModelKind::Se3 => fit_se3(&split.train, f.se3_degree, f.lambda, 0, cfg.seed)?,
    };
    model.dataset_fingerprint = split.fingerprint.clone();
    Ok(model)
}

/// Model kind implied by a lifted model's dictionary.
pub fn infer_kind(model: &LiftedModel<f64>) -> ModelKind {
    use crate::lifting::DictKind;
    match model.dictionary.kind {
        DictKind::Se3 { .. } => ModelKind::Se3,
        DictKind::Monomial { input_dim, .. } | DictKind::Identity { input_dim } if input_dim == crate::residual::N_RES => ModelKind::Residual,
        _ => ModelKind::Mono,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalParts {
    pub sweeps: bool,
    pub bound: bool,
}

impl Default for EvalParts {
    fn default() -> Self {
        Self { sweeps: true, bound: true }
    }
}

/// Benchmarks the nominal template plus every supplied model on the held-out
/// episodes; optionally runs the sweeps and the error-bound check.
pub fn evaluate(cfg: &RunConfig, split: &Split, models: &[(ModelKind, LiftedModel<f64>)], parts: EvalParts) -> Result<EvalReport> {
    let params = SrbParams::go1();
    let dt = cfg.sim.dt_control();
    let e = &cfg.eval;
    let mut bench = vec![BenchModel::Nominal];
    let mut residual = None;
    for (kind, m) in models {
        if m.dataset_fingerprint != split.fingerprint {
            log::warn!("{} model was fitted on a different dataset", kind.name());
        }
        bench.push(match kind {
            ModelKind::Residual => {
                let r = ResidualModel::from_lifted(m.clone())?;
                residual = Some(r.clone());
                BenchModel::Residual(r)
            }
            ModelKind::Mono => BenchModel::Mono(m.clone()),
            ModelKind::Se3 => BenchModel::Se3(m.clone()),
        });
    }
    let prediction = predict_benchmark(&bench, &split.heldout, e.horizon, e.windows, cfg.seed, &params, dt)?;
    let (mut sample_efficiency, mut degree) = (None, None);
    if parts.sweeps {
        let setup = SweepSetup {
            train: &split.train,
            test: &split.heldout,
            windows: e.sweep_windows,
            horizon: e.horizon,
            repeats: e.sweep_repeats,
            lambda: cfg.fit.lambda,
            seed: cfg.seed,
        };
        sample_efficiency = Some(sample_efficiency_sweep(&setup, &e.sweep_sizes, cfg.fit.residual_degree, &params, dt)?);
        degree = Some(degree_sweep(&setup, &e.degrees, e.degree_sweep_samples, &params, dt)?);
    }
    let bound = match (&residual, parts.bound) {
        (Some(r), true) => {
            let arms: [Vector3<f64>; N_FEET] = std::array::from_fn(|i| cfg.geometry.nominal_foot(i));
            let l = plant_lipschitz(&split.train, &arms, &params, cfg.sim.dt_plant, cfg.sim.control_every, e.lipschitz_pairs, cfg.seed);
            Some(bound_check(r, &split.train, &split.heldout, l, &params, dt, e.bound_horizon)?)
        }
        _ => None,
    };
    Ok(EvalReport {
        stamp: Stamp::of(cfg),
        dataset_fingerprint: split.fingerprint.clone(),
        train_episodes: split.train_idx.clone(),
        heldout_episodes: split.heldout_idx.clone(),
        channels: CHANNELS.iter().map(|c| c.to_string()).collect(),
        prediction,
        sample_efficiency,
        degree_sweep: degree,
        bound,
        excitation: planar_excitation(&split.train),
    })
}
