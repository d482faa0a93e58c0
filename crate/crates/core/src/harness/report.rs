//! Output files: stamps, manifests, model files, metric reports and the
//! per-figure CSV emissions.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::edmdc::{Excitation, LiftedModel};
use crate::error::{Error, Result};
use crate::harness::bench::{BenchReport, SweepReport, CHANNELS};
use crate::harness::closed_loop::{closed_loop_metrics, cross_track_series, ClosedLoopMetrics, SolveStats};
use crate::harness::log::EpisodeLog;
use crate::residual::BoundReport;

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Provenance stamped into every output file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stamp {
    pub config_fingerprint: String,
    pub code_version: String,
    pub seed: u64,
}

impl Stamp {
    pub fn of(cfg: &RunConfig) -> Self {
        Self { config_fingerprint: cfg.fingerprint(), code_version: CODE_VERSION.into(), seed: cfg.seed }
    }

    /// Stamp recorded in a log's metadata.
    pub fn of_log(log: &EpisodeLog) -> Result<Self> {
        let get = |k: &str| log.meta_value(k).ok_or_else(|| Error::Format(format!("log metadata lacks `{k}`")));
        Ok(Self {
            config_fingerprint: get("config_fingerprint")?.into(),
            code_version: get("code_version")?.into(),
            seed: get("seed")?.parse().map_err(|_| Error::Format("log seed is not an integer".into()))?,
        })
    }

    /// Refuses to compare outputs produced under different configurations.
    pub fn ensure_comparable(&self, other: &Stamp) -> Result<()> {
        if self.config_fingerprint != other.config_fingerprint {
            return Err(Error::Config(format!(
                "config fingerprints differ ({} vs {})",
                short(&self.config_fingerprint),
                short(&other.config_fingerprint)
            )));
        }
        Ok(())
    }
}

fn short(s: &str) -> &str {
    &s[..s.len().min(12)]
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: String,
    #[serde(flatten)]
    pub stamp: Stamp,
    pub files: Vec<ManifestEntry>,
}

pub const MANIFEST_NAME: &str = "manifest.json";

impl Manifest {
    /// Hashes `names` inside `dir`.
    pub fn build(dir: &Path, kind: &str, stamp: Stamp, names: &[String]) -> Result<Self> {
        let files = names
            .iter()
            .map(|n| {
                let bytes = fs::read(dir.join(n))?;
                Ok(ManifestEntry { name: n.clone(), sha256: sha256_hex(&bytes), bytes: bytes.len() as u64 })
            })
            .collect::<Result<_>>()?;
        Ok(Self { kind: kind.into(), stamp, files })
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join(MANIFEST_NAME), self)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join(MANIFEST_NAME))
            .map_err(|e| Error::Config(format!("{}: {e}", dir.join(MANIFEST_NAME).display())))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Combined digest of all listed files.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for f in &self.files {
            h.update(f.name.as_bytes());
            h.update(f.sha256.as_bytes());
        }
        hex::encode(h.finalize())
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

pub fn episode_file_name(i: usize) -> String {
    format!("episode_{i:03}.log")
}

/// Episode logs of a collection directory, in manifest order.
pub fn load_dataset(dir: &Path) -> Result<(Manifest, Vec<EpisodeLog>)> {
    if !dir.is_dir() {
        return Err(Error::Config(format!("data directory {} does not exist", dir.display())));
    }
    let manifest = Manifest::load(dir)?;
    let logs = manifest
        .files
        .iter()
        .filter(|f| f.name.ends_with(".log"))
        .map(|f| EpisodeLog::load(&dir.join(&f.name)))
        .collect::<Result<Vec<_>>>()?;
    if logs.is_empty() {
        return Err(Error::Config(format!("{} holds no episode logs", dir.display())));
    }
    Ok((manifest, logs))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Residual,
    Mono,
    Se3,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Residual => "residual",
            ModelKind::Mono => "mono",
            ModelKind::Se3 => "se3",
        }
    }

    pub fn by_name(s: &str) -> Result<Self> {
        match s {
            "residual" => Ok(ModelKind::Residual),
            "mono" => Ok(ModelKind::Mono),
            "se3" => Ok(ModelKind::Se3),
            other => Err(Error::Config(format!("unknown model kind `{other}` (residual, mono, se3)"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelFile {
    kind: ModelKind,
    #[serde(flatten)]
    stamp: Stamp,
    model: serde_json::Value,
}

pub fn save_model(path: &Path, kind: ModelKind, stamp: &Stamp, model: &LiftedModel<f64>) -> Result<()> {
    let file = ModelFile { kind, stamp: stamp.clone(), model: serde_json::from_str(&model.to_json()?)? };
    fs::write(path, serde_json::to_string(&file)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<(ModelKind, Stamp, LiftedModel<f64>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let file: ModelFile = serde_json::from_str(&text)?;
    let model = LiftedModel::from_json(&file.model.to_string())?;
    Ok((file.kind, file.stamp, model))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(flatten)]
    pub stamp: Stamp,
    pub dataset_fingerprint: String,
    pub train_episodes: Vec<usize>,
    pub heldout_episodes: Vec<usize>,
    pub channels: Vec<String>,
    pub prediction: BenchReport,
    pub sample_efficiency: Option<SweepReport>,
    pub degree_sweep: Option<SweepReport>,
    pub bound: Option<BoundReport>,
    pub excitation: Excitation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    #[serde(flatten)]
    pub stamp: Stamp,
    pub metrics: ClosedLoopMetrics,
}

/// Timing never enters a report so reports stay byte-identical across runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingSidecar {
    #[serde(flatten)]
    pub stamp: Stamp,
    pub solve: SolveStats,
}

fn csv_line(out: &mut String, cells: &[String]) {
    out.push_str(&cells.join(","));
    out.push('\n');
}

fn write_text(dir: &Path, name: &str, text: &str, written: &mut Vec<String>) -> Result<()> {
    fs::write(dir.join(name), text)?;
    written.push(name.into());
    Ok(())
}

/// Box-plot, drift and sweep CSVs of an evaluation. Returns the file names.
pub fn write_eval_csvs(dir: &Path, report: &EvalReport) -> Result<Vec<String>> {
    let mut written = Vec::new();
    let mut s = String::from("model,window");
    for c in CHANNELS {
        let _ = write!(s, ",{c}");
    }
    s.push('\n');
    for m in &report.prediction.models {
        for (w, v) in m.one_step_windows.iter().enumerate() {
            let mut cells = vec![m.name.clone(), w.to_string()];
            cells.extend(v.iter().map(|x| x.to_string()));
            csv_line(&mut s, &cells);
        }
    }
    write_text(dir, "rmse_boxes.csv", &s, &mut written)?;
    if let Some(curve) = &report.prediction.drift_curve {
        let mut s = String::from("horizon,geodesic_error\n");
        for (h, v) in curve.iter().enumerate() {
            csv_line(&mut s, &[(h + 1).to_string(), v.to_string()]);
        }
        write_text(dir, "drift_curve.csv", &s, &mut written)?;
    }
    for sweep in [&report.sample_efficiency, &report.degree_sweep].into_iter().flatten() {
        let mut s = String::from("value,repeat,rmse\n");
        for p in &sweep.points {
            for (r, v) in p.rmse.iter().enumerate() {
                csv_line(&mut s, &[p.value.to_string(), r.to_string(), v.to_string()]);
            }
        }
        write_text(dir, &format!("sweep_{}.csv", sweep.kind), &s, &mut written)?;
    }
    Ok(written)
}

pub const RUN_LOG_NAME: &str = "run.log";
pub const RUN_REPORT_NAME: &str = "metrics.json";
pub const TIMING_NAME: &str = "timing.json";

/// Regenerates a run directory's report and CSVs from its log. Pure in the log.
pub fn write_run_outputs(dir: &Path, log: &EpisodeLog) -> Result<(RunReport, Vec<String>)> {
    let report = RunReport { stamp: Stamp::of_log(log)?, metrics: closed_loop_metrics(log)? };
    let mut written = Vec::new();
    write_json(&dir.join(RUN_REPORT_NAME), &report)?;
    written.push(RUN_REPORT_NAME.to_string());

    let mut s = String::from("t,x,y,ref_x,ref_y,roll,pitch,yaw\n");
    for r in &log.rows {
        let cells = [r.t, r.x[0], r.x[1], r.reference[0], r.reference[1], r.x[3], r.x[4], r.x[5]];
        csv_line(&mut s, &cells.map(|v| v.to_string()));
    }
    write_text(dir, "trajectory_xy.csv", &s, &mut written)?;
    if report.metrics.mode == "circle" {
        let mut s = String::from("t,cross_track\n");
        for (t, e) in cross_track_series(log)? {
            csv_line(&mut s, &[t.to_string(), e.to_string()]);
        }
        write_text(dir, "cross_track.csv", &s, &mut written)?;
    }
    if log.rows.iter().any(|r| !r.attitude_orth.is_nan()) {
        let mut s = String::from("t,orthogonality_error\n");
        for r in &log.rows {
            csv_line(&mut s, &[r.t.to_string(), r.attitude_orth.to_string()]);
        }
        write_text(dir, "attitude_orth.csv", &s, &mut written)?;
    }
    Ok((report, written))
}

/// Per-episode summary of a collection directory, recomputed from its logs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    #[serde(flatten)]
    pub stamp: Stamp,
    pub episodes: Vec<EpisodeSummary>,
    pub transitions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub file: String,
    pub status: String,
    pub ticks: usize,
    pub tracking_rmse: [f64; 3],
    pub max_tilt: f64,
}

pub fn summarize_dataset(manifest: &Manifest, logs: &[EpisodeLog]) -> DatasetSummary {
    let episodes = manifest
        .files
        .iter()
        .filter(|f| f.name.ends_with(".log"))
        .zip(logs)
        .map(|(f, log)| {
            let n = log.rows.len().max(1) as f64;
            let mut sq = [0.0; 3];
            let mut tilt = 0.0f64;
            for r in &log.rows {
                let (s, c) = r.x[5].sin_cos();
                let vb = [c * r.x[6] + s * r.x[7], -s * r.x[6] + c * r.x[7], r.x[11]];
                for i in 0..3 {
                    sq[i] += (vb[i] - r.cmd[i]).powi(2);
                }
                tilt = tilt.max(r.x[3].abs()).max(r.x[4].abs());
            }
            EpisodeSummary {
                file: f.name.clone(),
                status: log.meta_value("status").unwrap_or("").into(),
                ticks: log.rows.len(),
                tracking_rmse: sq.map(|v| (v / n).sqrt()),
                max_tilt: tilt,
            }
        })
        .collect();
    DatasetSummary {
        stamp: manifest.stamp.clone(),
        transitions: logs.iter().map(|l| l.rows.len().saturating_sub(1)).sum(),
        episodes,
    }
}

/// Regenerates every report derivable from the logs in `dir`.
pub fn regenerate(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let run_log = dir.join(RUN_LOG_NAME);
    if run_log.is_file() {
        let log = EpisodeLog::load(&run_log)?;
        let (_, names) = write_run_outputs(dir, &log)?;
        out.extend(names.into_iter().map(|n| dir.join(n)));
    }
    if dir.join(MANIFEST_NAME).is_file() {
        let manifest = Manifest::load(dir)?;
        if manifest.kind == "collect" {
            let (manifest, logs) = load_dataset(dir)?;
            let path = dir.join("dataset_summary.json");
            write_json(&path, &summarize_dataset(&manifest, &logs))?;
            out.push(path);
        }
    }
    if out.is_empty() {
        return Err(Error::Config(format!("{} holds no run log or dataset", dir.display())));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stamps_refuse_mismatch() {
        let a = Stamp::of(&RunConfig::default());
        let mut cfg = RunConfig::default();
        cfg.seed = 9;
        let b = Stamp::of(&cfg);
        assert!(a.ensure_comparable(&a.clone()).is_ok());
        assert!(matches!(a.ensure_comparable(&b), Err(Error::Config(_))));
    }

    #[test]
    fn model_kind_names() {
        for k in [ModelKind::Residual, ModelKind::Mono, ModelKind::Se3] {
            assert_eq!(ModelKind::by_name(k.name()).unwrap(), k);
        }
        assert!(ModelKind::by_name("quartic").is_err());
    }
}
