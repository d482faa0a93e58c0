//! Data-collection episodes under the template controller with a filtered
//! random command stream.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::error::Result;
use crate::footstep::PlanarCommand;
use crate::gait::GaitParams;
use crate::harness::log::LogMeta;
use crate::harness::sim::{run_loop, Run, Stack};
use crate::mpc::{MpcController, Predictor, Variant};
use crate::plant::{sample_params, PlantState, SrbParams, SrbPlant};

/// Piecewise-constant uniform targets passed through a first-order low-pass.
#[derive(Debug, Clone)]
pub struct CommandSampler {
    rng: ChaCha8Rng,
    half_widths: [f64; 3],
    resample_ticks: usize,
    alpha: f64,
    target: [f64; 3],
    state: [f64; 3],
}

impl CommandSampler {
    pub fn new(seed: u64, half_widths: [f64; 3], resample_s: f64, tau_s: f64, dt: f64) -> Self {
        let resample_ticks = ((resample_s / dt).round() as usize).max(1);
        let alpha = if tau_s > 0.0 { 1.0 - (-dt / tau_s).exp() } else { 1.0 };
        Self { rng: ChaCha8Rng::seed_from_u64(seed), half_widths, resample_ticks, alpha, target: [0.0; 3], state: [0.0; 3] }
    }

    /// Raw uniform draw inside the box.
    pub fn draw(&mut self) -> [f64; 3] {
        std::array::from_fn(|i| {
            let h = self.half_widths[i];
            if h > 0.0 {
                self.rng.random_range(-h..=h)
            } else {
                0.0
            }
        })
    }

    /// Filtered command for tick `k`.
    pub fn next(&mut self, k: usize) -> PlanarCommand {
        if k.is_multiple_of(self.resample_ticks) {
            self.target = self.draw();
        }
        for i in 0..3 {
            self.state[i] += self.alpha * (self.target[i] - self.state[i]);
        }
        PlanarCommand { v_x: self.state[0], v_y: self.state[1], omega_z: self.state[2] }
    }
}

/// Seed of episode `i` derived from the run seed.
pub fn episode_seed(base: u64, i: usize) -> u64 {
    base.wrapping_mul(1_000_003).wrapping_add(i as u64 + 1)
}

pub fn base_meta(cfg: &RunConfig, seed: u64, kind: &str) -> LogMeta {
    let mut m = LogMeta::new();
    m.insert("kind".into(), kind.into());
    m.insert("seed".into(), seed.to_string());
    m.insert("config_fingerprint".into(), cfg.fingerprint());
    m.insert("code_version".into(), env!("CARGO_PKG_VERSION").into());
    m
}

/// One collection episode; a fall truncates the log instead of failing.
pub fn collect_episode(cfg: &RunConfig, index: usize) -> Result<Run> {
    let seed = episode_seed(cfg.seed, index);
    let nominal = SrbParams::go1();
    let dist = cfg.collect.disturbance.resolve(seed)?;
    let params = sample_params(&nominal, &dist);
    let mut plant = SrbPlant::new(params, dist.clone())?;
    let gait = GaitParams::by_name(&cfg.collect.gait)?;
    let start = PlantState::at_rest(cfg.geometry.stand_height);
    let mut stack = Stack::new(gait, cfg.geometry, cfg.footstep, cfg.sim.clone(), &start)?;
    let mut ctl = MpcController::new(cfg.variant_config(Variant::NominalMpc), cfg.weights.clone(), nominal, Predictor::Nominal)?;
    let dt = cfg.sim.dt_control();
    let mut sampler = CommandSampler::new(seed ^ 0xc0ffee, cfg.collect.cmd_box, cfg.collect.resample_s, cfg.collect.filter_tau_s, dt);
    let n_ticks = (cfg.collect.duration_s / dt).round() as usize;
    let mut meta = base_meta(cfg, seed, "collect");
    meta.insert("episode".into(), index.to_string());
    meta.insert("variant".into(), Variant::NominalMpc.name().into());
    meta.insert("tier".into(), cfg.collect.disturbance.tier.clone());
    meta.insert("plant_mass".into(), format!("{}", params.mass));
    meta.insert("plant_mu".into(), format!("{}", params.friction_mu));
    run_loop(&mut stack, &mut ctl, &mut plant, start, n_ticks, meta, |k, _| sampler.next(k), |_| false)
}

/// All episodes, in index order (parallel when `workers > 1`).
pub fn collect(cfg: &RunConfig) -> Result<Vec<Run>> {
    let idx: Vec<usize> = (0..cfg.collect.episodes).collect();
    if cfg.workers > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| crate::error::Error::Config(e.to_string()))?;
        pool.install(|| idx.par_iter().map(|&i| collect_episode(cfg, i)).collect())
    } else {
        idx.iter().map(|&i| collect_episode(cfg, i)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampler_box_and_filter() {
        let mut s = CommandSampler::new(3, [0.7, 0.7, 0.5], 2.0, 0.5, 0.01);
        let mut prev = s.next(0);
        for k in 1..2000 {
            let c = s.next(k);
            assert!(c.v_x.abs() <= 0.7 && c.v_y.abs() <= 0.7 && c.omega_z.abs() <= 0.5);
            // filtered: a single tick moves at most alpha of the box width
            assert!((c.v_x - prev.v_x).abs() <= 1.4 * (1.0 - (-0.02f64).exp()) + 1e-12);
            prev = c;
        }
    }

    #[test]
    fn sampler_is_uniform() {
        // chi-square over 10 bins per axis on 10^4 raw draws
        let mut s = CommandSampler::new(11, [0.7, 0.7, 0.5], 2.0, 0.5, 0.01);
        let draws: Vec<[f64; 3]> = (0..10_000).map(|_| s.draw()).collect();
        for axis in 0..3 {
            let h = [0.7, 0.7, 0.5][axis];
            let mut bins = [0usize; 10];
            for d in &draws {
                let b = (((d[axis] + h) / (2.0 * h)) * 10.0).floor().min(9.0) as usize;
                bins[b] += 1;
            }
            let chi2: f64 = bins.iter().map(|&c| (c as f64 - 1000.0).powi(2) / 1000.0).sum();
            // 9 dof, p = 0.01 critical value
            assert!(chi2 < 21.67, "axis {axis}: chi2 {chi2}");
        }
    }
}
