//! Wave gait scheduler and horizon contact schedules.
//!
//! Legs are indexed LF, LH, RF, RH. Phase is `frac(t/T + bias_i)`; a leg is in
//! stance while its phase is below the duty factor.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plant::N_FEET;

pub const LEG_NAMES: [&str; N_FEET] = ["LF", "LH", "RF", "RH"];

/// Lateral side of each leg: +1 left, −1 right.
pub const LEG_SIDE: [f64; N_FEET] = [1.0, 1.0, -1.0, -1.0];
/// Longitudinal side of each leg: +1 front, −1 hind.
pub const LEG_FORE: [f64; N_FEET] = [1.0, -1.0, 1.0, -1.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaitParams {
    pub period: f64,
    pub duty: f64,
    pub phase_bias: [f64; N_FEET],
    pub swing_height: f64,
}

impl GaitParams {
    pub fn trot() -> Self {
        Self { period: 0.45, duty: 0.5, phase_bias: [0.0, 0.5, 0.5, 0.0], swing_height: 0.10 }
    }

    pub fn crawl() -> Self {
        Self { period: 1.10, duty: 0.75, phase_bias: [0.0, 0.25, 0.5, 0.75], swing_height: 0.10 }
    }

    /// All four feet on the ground at all times.
    pub fn stand() -> Self {
        Self { period: 1.0, duty: 1.0, phase_bias: [0.0; N_FEET], swing_height: 0.0 }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "trot" => Ok(Self::trot()),
            "crawl" => Ok(Self::crawl()),
            "stand" => Ok(Self::stand()),
            other => Err(Error::InvalidParameter(format!("unknown gait '{other}'"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.period > 0.0 && self.period.is_finite()) {
            return Err(Error::InvalidParameter(format!("gait period {} must be positive", self.period)));
        }
        // duty 1 is the standing gait
        if !(self.duty > 0.0 && self.duty <= 1.0) {
            return Err(Error::InvalidParameter(format!("duty factor {} outside (0, 1]", self.duty)));
        }
        if self.phase_bias.iter().any(|b| !(0.0..1.0).contains(b)) {
            return Err(Error::InvalidParameter("phase bias outside [0, 1)".into()));
        }
        if !(self.swing_height >= 0.0) {
            return Err(Error::InvalidParameter("negative swing height".into()));
        }
        Ok(())
    }

    pub fn stance_time(&self) -> f64 {
        self.duty * self.period
    }

    pub fn swing_time(&self) -> f64 {
        (1.0 - self.duty) * self.period
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LegPhase {
    pub phase: f64,
    pub in_stance: bool,
    /// Progress within the current mode, in [0, 1].
    pub sub_phase: f64,
}

pub fn leg_phase(t: f64, leg: usize, gait: &GaitParams) -> LegPhase {
    let raw = t / gait.period + gait.phase_bias[leg];
    let mut phase = raw - raw.floor();
    if phase >= 1.0 {
        phase = 0.0;
    }
    let in_stance = phase < gait.duty;
    let sub_phase = if in_stance {
        phase / gait.duty
    } else {
        (phase - gait.duty) / (1.0 - gait.duty)
    };
    LegPhase { phase, in_stance, sub_phase }
}

pub fn contact_flags(t: f64, gait: &GaitParams) -> [bool; N_FEET] {
    std::array::from_fn(|i| leg_phase(t, i, gait).in_stance)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub stance: [bool; N_FEET],
    /// Swing phase of each swing leg (stance legs report their stance sub-phase).
    pub phases: [f64; N_FEET],
    pub moment_arms: [Vector3<f64>; N_FEET],
}

impl Stage {
    pub fn n_stance(&self) -> usize {
        self.stance.iter().filter(|&&s| s).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContactSchedule {
    pub stages: Vec<Stage>,
}

/// Stage `k` samples the gait at `t0 + k·dt` (mode active at the stage start).
/// Moment arms are held fixed over the horizon.
pub fn horizon_schedule(
    t0: f64,
    n: usize,
    dt: f64,
    gait: &GaitParams,
    moment_arms: &[Vector3<f64>; N_FEET],
) -> ContactSchedule {
    let stages = (0..n)
        .map(|k| {
            let t = t0 + k as f64 * dt;
            let ph: [LegPhase; N_FEET] = std::array::from_fn(|i| leg_phase(t, i, gait));
            Stage {
                stance: std::array::from_fn(|i| ph[i].in_stance),
                phases: std::array::from_fn(|i| ph[i].sub_phase),
                moment_arms: *moment_arms,
            }
        })
        .collect();
    ContactSchedule { stages }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trot_start() {
        let g = GaitParams::trot();
        let p: Vec<_> = (0..4).map(|i| leg_phase(0.0, i, &g)).collect();
        assert!(p[0].in_stance && p[3].in_stance);
        assert_eq!(p[0].sub_phase, 0.0);
        assert!(!p[1].in_stance && !p[2].in_stance);
        assert_eq!(p[1].phase, 0.5);
        assert_eq!(p[1].sub_phase, 0.0);
    }

    #[test]
    fn one_period_is_identity() {
        for g in [GaitParams::trot(), GaitParams::crawl()] {
            for i in 0..4 {
                assert_eq!(leg_phase(g.period, i, &g), leg_phase(0.0, i, &g));
            }
        }
    }

    #[test]
    fn stance_fraction_by_counting() {
        for g in [GaitParams::trot(), GaitParams::crawl()] {
            let samples = (g.period * 1000.0).round() as usize;
            for leg in 0..4 {
                let count = (0..samples).filter(|&k| leg_phase(k as f64 * 1e-3, leg, &g).in_stance).count();
                let expect = g.duty * samples as f64;
                assert!((count as f64 - expect).abs() <= 1.0, "leg {leg}: {count} vs {expect}");
            }
        }
    }

    #[test]
    fn trot_midstance_window_keeps_pair() {
        let g = GaitParams::trot();
        let s = horizon_schedule(0.1125, 8, 0.01, &g, &[Vector3::zeros(); 4]);
        for st in &s.stages {
            assert_eq!(st.stance, [true, false, false, true]);
        }
    }

    #[test]
    fn crawl_has_three_feet_away_from_transitions() {
        let g = GaitParams::crawl();
        for k in 0..1100 {
            let t = k as f64 * 1e-3 + 0.0005;
            let margin = (0..4)
                .map(|i| {
                    let ph = leg_phase(t, i, &g).phase;
                    let d = [(ph - g.duty).abs(), ph, 1.0 - ph];
                    d.into_iter().fold(f64::INFINITY, f64::min)
                })
                .fold(f64::INFINITY, f64::min);
            if margin * g.period > 0.002 {
                assert_eq!(contact_flags(t, &g).iter().filter(|&&c| c).count(), 3, "t = {t}");
            }
        }
    }

    #[test]
    fn single_stage_equals_leg_phase() {
        let g = GaitParams::crawl();
        let s = horizon_schedule(0.37, 1, 0.01, &g, &[Vector3::zeros(); 4]);
        assert_eq!(s.stages.len(), 1);
        for i in 0..4 {
            let p = leg_phase(0.37, i, &g);
            assert_eq!(s.stages[0].stance[i], p.in_stance);
            assert_eq!(s.stages[0].phases[i], p.sub_phase);
        }
    }

    #[test]
    fn stand_is_all_stance() {
        let g = GaitParams::stand();
        g.validate().unwrap();
        for k in 0..100 {
            assert_eq!(contact_flags(k as f64 * 0.037, &g), [true; 4]);
        }
    }

    #[test]
    fn validation() {
        assert!(GaitParams::by_name("gallop").is_err());
        let mut g = GaitParams::trot();
        g.duty = 0.0;
        assert!(g.validate().is_err());
        g = GaitParams::trot();
        g.phase_bias[2] = 1.0;
        assert!(g.validate().is_err());
        g = GaitParams::trot();
        g.period = -1.0;
        assert!(g.validate().is_err());
        assert_eq!(GaitParams::trot().stance_time(), 0.225);
        assert!((GaitParams::crawl().swing_time() - 0.275).abs() < 1e-12);
    }
}
