use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use log::{info, warn};

use rkmpc::config::RunConfig;
use rkmpc::harness::closed_loop::{closed_loop, solve_stats};
use rkmpc::harness::collect::collect;
use rkmpc::harness::pipeline::{evaluate, fit_kind, infer_kind, prepare_split, write_collection, EvalParts};
use rkmpc::harness::report::{
    load_dataset, load_model, regenerate, save_model, write_eval_csvs, write_json, write_run_outputs, Manifest, ModelKind, Stamp, TimingSidecar,
    RUN_LOG_NAME, TIMING_NAME,
};
use rkmpc::mpc::Variant;
use rkmpc::residual::ResidualModel;
use rkmpc::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_DIVERGED: u8 = 3;

#[derive(Parser)]
#[command(name = "rkmpc", version, about = "Residual Koopman MPC for a single-rigid-body quadruped")]
struct Cli {
    /// Worker threads for episodes and benchmark windows (results do not depend on it).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Collect episodes under the template controller.
    Collect {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit a model on the training episodes of a collection.
    Fit {
        #[arg(long)]
        data: PathBuf,
        /// residual, mono or se3
        #[arg(long)]
        model: String,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to the config stored with the data.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Benchmark fitted models on the held-out episodes.
    Eval {
        /// Comma-separated model files.
        #[arg(long, value_delimiter = ',')]
        models: Vec<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Skip the sample-size and degree sweeps.
        #[arg(long)]
        no_sweeps: bool,
        /// Skip the error-bound check.
        #[arg(long)]
        no_bound: bool,
    },
    /// Closed-loop circle tracking (or standing when the radius is zero).
    Run {
        /// rkmpc, nominalmpc or se3kmpc
        #[arg(long)]
        variant: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Residual model file (rkmpc).
        #[arg(long)]
        model: Option<PathBuf>,
        /// SE(3) model file (se3kmpc).
        #[arg(long)]
        se3_model: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Regenerate reports and plot data from the logs in a directory.
    Report {
        #[arg(long = "in")]
        dir: PathBuf,
    },
}

fn load_config(path: Option<&Path>, fallback: Option<&Path>) -> rkmpc::Result<RunConfig> {
    let cfg = match (path, fallback) {
        (Some(p), _) => RunConfig::load(p)?,
        (None, Some(f)) if f.is_file() => RunConfig::load(f)?,
        _ => RunConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn with_overrides(mut cfg: RunConfig, seed: Option<u64>, workers: Option<usize>) -> rkmpc::Result<RunConfig> {
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(w) = workers {
        cfg.workers = w;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn install_pool(workers: usize) -> anyhow::Result<()> {
    // A second build in the same process fails harmlessly.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build_global();
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Collect { config, out, seed } => {
            let cfg = with_overrides(load_config(config.as_deref(), None)?, seed, cli.workers)?;
            info!("collecting {} episodes of {} s", cfg.collect.episodes, cfg.collect.duration_s);
            let runs = collect(&cfg)?;
            for (i, r) in runs.iter().enumerate() {
                if let Some(d) = &r.divergence {
                    warn!("episode {i} truncated at t = {:.2} s: {}", d.t, d.reason);
                }
            }
            let manifest = write_collection(&cfg, &out, &runs).with_context(|| format!("writing {}", out.display()))?;
            println!("{}", manifest.fingerprint());
        }
        Command::Fit { data, model, out, config } => {
            let kind = ModelKind::by_name(&model)?;
            let cfg = with_overrides(load_config(config.as_deref(), Some(&data.join("config.toml")))?, None, cli.workers)?;
            install_pool(cfg.workers)?;
            let (_, logs) = load_dataset(&data)?;
            let split = prepare_split(&cfg, &logs)?;
            let m = fit_kind(&cfg, kind, &split)?;
            save_model(&out, kind, &Stamp::of(&cfg), &m).with_context(|| format!("writing {}", out.display()))?;
            info!("{} model: {} lifted states, dataset {}", kind.name(), m.q(), &split.fingerprint[..12]);
        }
        Command::Eval { models, data, out, config, no_sweeps, no_bound } => {
            let cfg = with_overrides(load_config(config.as_deref(), Some(&data.join("config.toml")))?, None, cli.workers)?;
            install_pool(cfg.workers)?;
            let (_, logs) = load_dataset(&data)?;
            let split = prepare_split(&cfg, &logs)?;
            let mut loaded = Vec::new();
            for path in &models {
                let (kind, _, m) = load_model(path)?;
                if infer_kind(&m) != kind {
                    return Err(Error::Format(format!("{}: stored kind disagrees with its dictionary", path.display())).into());
                }
                loaded.push((kind, m));
            }
            let report = evaluate(&cfg, &split, &loaded, EvalParts { sweeps: !no_sweeps, bound: !no_bound })?;
            let dir = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new(".")).to_path_buf();
            std::fs::create_dir_all(&dir)?;
            write_json(&out, &report)?;
            write_eval_csvs(&dir, &report)?;
            for m in &report.prediction.models {
                println!("{:<18} one-step {:.5}  rollout {:.5}  blow-ups {}", m.name, m.mean_one_step, m.mean_rollout, m.blowups);
            }
        }
        Command::Run { variant, out, config, model, se3_model, seed } => {
            let variant = Variant::by_name(&variant)?;
            let cfg = with_overrides(load_config(config.as_deref(), None)?, seed, cli.workers)?;
            let residual = model
                .as_deref()
                .map(|p| load_model(p).and_then(|(_, _, m)| ResidualModel::from_lifted(m)))
                .transpose()?;
            let se3 = se3_model.as_deref().map(|p| load_model(p).map(|(_, _, m)| m)).transpose()?;
            let result = closed_loop(&cfg, variant, residual, se3)?;
            std::fs::create_dir_all(&out)?;
            result.log.save(&out.join(RUN_LOG_NAME))?;
            let (report, mut names) = write_run_outputs(&out, &result.log)?;
            write_json(&out.join(TIMING_NAME), &TimingSidecar { stamp: Stamp::of(&cfg), solve: solve_stats(&result.solve_ms) })?;
            names.insert(0, RUN_LOG_NAME.into());
            Manifest::build(&out, "run", Stamp::of(&cfg), &names)?.write(&out)?;
            let m = &report.metrics;
            println!("{} {}: laps {:.2}, w_z rmse {:.4}, max tilt {:.3}", m.variant, m.status, m.laps, m.tracking_rmse[2], m.max_tilt);
            if let Some(d) = result.divergence {
                return Err(Error::RunDiverged { t: d.t, reason: d.reason }.into());
            }
        }
        Command::Report { dir } => {
            for p in regenerate(&dir)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config(_) | Error::InvalidParameter(_) | Error::ModelMissing(_)) => EXIT_CONFIG,
        Some(Error::RunDiverged { .. }) => EXIT_DIVERGED,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
