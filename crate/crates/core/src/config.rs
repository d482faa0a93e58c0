//! Declarative run configuration. Unknown keys are rejected; the fingerprint
//! is the SHA-256 of the canonical JSON form after defaults are filled in.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::footstep::{FootstepGains, LegGeometry};
use crate::gait::GaitParams;
use crate::harness::sim::SimConfig;
use crate::mpc::{MpcConfig, MpcWeights, Variant};
use crate::plant::DisturbanceConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DisturbanceSpec {
    /// `flat`, `mild` or `ice`; explicit fields below override the preset.
    pub tier: String,
    pub param_scale: Option<f64>,
    pub force_noise_std: Option<f64>,
    pub moment_arm_noise_std: Option<f64>,
    pub wrench_bias: Option<[f64; 6]>,
    pub friction_range: Option<[f64; 2]>,
    pub friction_override: Option<f64>,
}

impl Default for DisturbanceSpec {
    fn default() -> Self {
        Self {
            tier: "mild".into(),
            param_scale: None,
            force_noise_std: None,
            moment_arm_noise_std: None,
            wrench_bias: None,
            friction_range: None,
            friction_override: None,
        }
    }
}

impl DisturbanceSpec {
    pub fn tier(name: &str) -> Self {
        Self { tier: name.into(), ..Self::default() }
    }

    pub fn resolve(&self, seed: u64) -> Result<DisturbanceConfig> {
        let mut d = DisturbanceConfig::tier(&self.tier)
            .ok_or_else(|| Error::Config(format!("disturbance.tier: unknown tier `{}`", self.tier)))?;
        if let Some(v) = self.param_scale {
            d.param_scale = v;
        }
        if let Some(v) = self.force_noise_std {
            d.force_noise_std = v;
        }
        if let Some(v) = self.moment_arm_noise_std {
            d.moment_arm_noise_std = v;
        }
        if let Some(v) = self.wrench_bias {
            d.wrench_bias = v;
        }
        if let Some(v) = self.friction_range {
            d.friction_range = v;
        }
        if self.friction_override.is_some() {
            d.friction_override = self.friction_override;
        }
        d.seed = seed;
        d.validate().map_err(|e| Error::Config(format!("disturbance: {e}")))?;
        Ok(d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CollectConfig {
    pub episodes: usize,
    pub duration_s: f64,
    pub gait: String,
    /// Half-widths of the uniform command box `(v_x, v_y, ω_z)`.
    pub cmd_box: [f64; 3],
    pub resample_s: f64,
    pub filter_tau_s: f64,
    pub disturbance: DisturbanceSpec,
}

impl Default for CollectConfig {
    fn default() -> Self {
        Self {
            episodes: 10,
            duration_s: 60.0,
            gait: "trot".into(),
            cmd_box: [0.7, 0.7, 0.5],
            resample_s: 2.0,
            filter_tau_s: 0.5,
            disturbance: DisturbanceSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub lambda: f64,
    pub residual_degree: usize,
    pub mono_degree: usize,
    pub se3_degree: usize,
    /// Trailing episodes held out from training.
    pub heldout_episodes: usize,
    /// Training transitions used for the full-state monomial fit (0 = all). The
    /// SE(3) fit always uses every transition.
    pub mono_max_samples: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { lambda: 1e-6, residual_degree: 2, mono_degree: 4, se3_degree: 4, heldout_episodes: 2, mono_max_samples: 8000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub horizon: usize,
    pub windows: usize,
    pub sweep_sizes: Vec<usize>,
    pub sweep_repeats: usize,
    pub sweep_windows: usize,
    pub degrees: Vec<usize>,
    /// Training transitions used in the degree sweep.
    pub degree_sweep_samples: usize,
    pub lipschitz_pairs: usize,
    pub bound_horizon: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            horizon: 100,
            windows: 100,
            sweep_sizes: vec![100, 300, 1000, 3000],
            sweep_repeats: 5,
            sweep_windows: 50,
            degrees: vec![1, 2, 3, 4],
            degree_sweep_samples: 1000,
            lipschitz_pairs: 2000,
            bound_horizon: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfigSection {
    pub radius: f64,
    pub speed: f64,
    pub laps: f64,
    /// Run length cap as a multiple of the nominal lap time.
    pub time_cap_factor: f64,
    /// Standing hold duration when the radius or speed is zero.
    pub hold_s: f64,
    pub gait: String,
    pub disturbance: DisturbanceSpec,
}

impl Default for RunConfigSection {
    fn default() -> Self {
        Self {
            radius: 1.0,
            speed: 0.3,
            laps: 3.0,
            time_cap_factor: 1.5,
            hold_s: 5.0,
            gait: "trot".into(),
            disturbance: DisturbanceSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub workers: usize,
    pub sim: SimConfig,
    pub geometry: LegGeometry,
    pub footstep: FootstepGains,
    pub mpc: MpcConfig,
    pub weights: MpcWeights,
    pub collect: CollectConfig,
    pub fit: FitConfig,
    pub eval: EvalConfig,
    pub run: RunConfigSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            workers: 1,
            sim: SimConfig::default(),
            geometry: LegGeometry::default(),
            footstep: FootstepGains::default(),
            mpc: MpcConfig::default(),
            weights: MpcWeights::default(),
            collect: CollectConfig::default(),
            fit: FitConfig::default(),
            eval: EvalConfig::default(),
            run: RunConfigSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |e: Error| Error::Config(e.to_string());
        self.mpc.validate().map_err(cfg)?;
        self.weights.validate().map_err(cfg)?;
        self.geometry.validate().map_err(cfg)?;
        self.footstep.validate().map_err(cfg)?;
        GaitParams::by_name(&self.collect.gait).map_err(cfg)?;
        GaitParams::by_name(&self.run.gait).map_err(cfg)?;
        self.collect.disturbance.resolve(0)?;
        self.run.disturbance.resolve(0)?;
        if !(self.sim.dt_plant > 0.0) || self.sim.control_every == 0 {
            return Err(Error::Config("sim: dt_plant and control_every must be positive".into()));
        }
        if (self.sim.dt_control() - self.mpc.dt).abs() > 1e-12 {
            return Err(Error::Config("mpc.dt must equal sim.dt_plant * sim.control_every".into()));
        }
        if self.collect.episodes == 0 || !(self.collect.duration_s > 0.0) {
            return Err(Error::Config("collect: need at least one episode of positive length".into()));
        }
        if self.fit.heldout_episodes >= self.collect.episodes {
            return Err(Error::Config("fit.heldout_episodes must leave training episodes".into()));
        }
        if self.eval.horizon == 0 || self.eval.windows == 0 {
            return Err(Error::Config("eval: horizon and windows must be positive".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn variant_config(&self, variant: Variant) -> MpcConfig {
        MpcConfig { variant, ..self.mpc.clone() }
    }
}
