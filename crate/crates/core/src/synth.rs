//! Regime-switching GPU-node telemetry.
//!
//! A latent Markov chain picks a workload regime each minute. Power ramps
//! toward the regime's level at a rate drawn on entry, wanders around it as
//! an AR(1) process and is observed with Gaussian noise. Utilization and
//! temperature follow the ramped regime level, not the wander. The scheduler
//! signals (`job_switch`, `job_count`, `gpu_count`) change one minute
//! before the power starts to move, so they lead the load.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::TelemetryRecord;
use crate::error::{Error, Result};
use crate::numerics::RngState;

/// One workload regime.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Regime {
    /// Steady-state power, watts.
    pub level: f64,
    /// Mean dwell time in minutes (geometric).
    pub mean_dwell: f64,
    pub job_count: u32,
    pub gpu_count: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_minutes: usize,
    /// Epoch seconds of the first record.
    pub start: i64,
    /// Use the first `n_regimes` entries of `regimes`.
    pub n_regimes: usize,
    pub regimes: Vec<Regime>,
    /// Ramp rate bounds on regime entry, watts per minute.
    pub ramp_min: f64,
    pub ramp_max: f64,
    /// Measurement noise on power, watts.
    pub noise_std: f64,
    /// AR(1) coefficient of the within-regime wander.
    pub wander_ar: f64,
    /// Wander innovation std as a multiple of `noise_std`.
    pub wander_ratio: f64,
    /// Ambient temperature and watts-to-degrees gain of the thermal lag.
    pub temp_ambient: f64,
    pub temp_gain: f64,
    /// Thermal time constant, minutes.
    pub temp_tau: f64,
    /// Noise on utilization fractions.
    pub util_noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let regime = |level, mean_dwell, job_count, gpu_count| Regime {
            level,
            mean_dwell,
            job_count,
            gpu_count,
        };
        Self {
            seed: 0,
            n_minutes: 20_000,
            start: 1_700_000_000 - 1_700_000_000 % 60,
            n_regimes: 3,
            regimes: vec![
                regime(200.0, 30.0, 1, 1),
                regime(600.0, 10.0, 3, 2),
                regime(1000.0, 20.0, 6, 4),
            ],
            ramp_min: 150.0,
            ramp_max: 500.0,
            noise_std: 15.0,
            wander_ar: 0.9,
            wander_ratio: 0.5,
            temp_ambient: 30.0,
            temp_gain: 0.04,
            temp_tau: 5.0,
            util_noise: 0.02,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.n_minutes < 2 {
            return err(format!("n_minutes must be at least 2, got {}", self.n_minutes));
        }
        if self.n_regimes == 0 || self.n_regimes > self.regimes.len() {
            return err(format!(
                "n_regimes {} must lie in 1..={}",
                self.n_regimes,
                self.regimes.len()
            ));
        }
        for (i, r) in self.regimes[..self.n_regimes].iter().enumerate() {
            if !(r.level > 0.0 && r.level.is_finite()) {
                return err(format!("regime {i} power level must be positive"));
            }
            if !(r.mean_dwell >= 1.0) {
                return err(format!("regime {i} mean dwell must be at least 1 minute"));
            }
        }
        if !(self.ramp_min > 0.0 && self.ramp_min <= self.ramp_max) {
            return err("ramp bounds must satisfy 0 < ramp_min <= ramp_max".into());
        }
        if !(self.noise_std >= 0.0 && self.wander_ratio >= 0.0 && self.util_noise >= 0.0) {
            return err("noise levels must be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.wander_ar) {
            return err("wander_ar must lie in [0, 1)".into());
        }
        if !(self.temp_tau >= 1.0) {
            return err("temp_tau must be at least 1 minute".into());
        }
        Ok(())
    }

    /// Power range spanned by the active regimes.
    fn level_span(&self) -> (f64, f64) {
        let levels = self.regimes[..self.n_regimes].iter().map(|r| r.level);
        let lo = levels.clone().fold(f64::INFINITY, f64::min);
        let hi = levels.fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }
}

fn normal(std: f64) -> Normal<f64> {
    Normal::new(0.0, std).expect("non-negative std")
}

/// Latent regime index per minute.
fn regime_path(cfg: &SynthConfig, rng: &mut RngState) -> Vec<usize> {
    let k = cfg.n_regimes;
    let mut path = Vec::with_capacity(cfg.n_minutes);
    let mut r = rng.gen_range(0..k);
    for _ in 0..cfg.n_minutes {
        path.push(r);
        if k > 1 && rng.gen::<f64>() < 1.0 / cfg.regimes[r].mean_dwell {
            let next = rng.gen_range(0..k - 1);
            r = if next >= r { next + 1 } else { next };
        }
    }
    path
}

/// Generates `n_minutes` one-minute records.
pub fn generate(cfg: &SynthConfig) -> Result<Vec<TelemetryRecord>> {
    cfg.validate()?;
    let mut rng = RngState::new(cfg.seed);
    let path = regime_path(cfg, &mut rng);
    let (lo, hi) = cfg.level_span();
    let span = (hi - lo).max(1.0);

    let noise = normal(cfg.noise_std);
    let wander_noise = normal(cfg.noise_std * cfg.wander_ratio);
    let util_noise = normal(cfg.util_noise);

    let first = &cfg.regimes[path[0]];
    let mut clean = first.level;
    let mut wander = 0.0;
    let mut ramp = cfg.ramp_max;
    let mut temp = cfg.temp_ambient + cfg.temp_gain * clean;
    let mut out = Vec::with_capacity(cfg.n_minutes);

    for t in 0..cfg.n_minutes {
        let r = path[t];
        if t > 0 && r != path[t - 1] {
            ramp = rng.gen_range(cfg.ramp_min..=cfg.ramp_max);
        }
        let regime = &cfg.regimes[r];
        if t > 0 {
            let gap = regime.level - clean;
            clean += gap.clamp(-ramp, ramp);
            wander = cfg.wander_ar * wander + wander_noise.sample(&mut rng);
        }
        // Utilization and temperature track the regime trajectory; the
        // wander shows up only in the metered power.
        let power = (clean + wander + noise.sample(&mut rng)).max(0.0);
        temp += (cfg.temp_ambient + cfg.temp_gain * clean - temp) / cfg.temp_tau;

        // Scheduler signals lead the power change by one minute.
        let upcoming = path.get(t + 1).copied().unwrap_or(r);
        let sched = &cfg.regimes[upcoming];
        let load_frac = ((clean - lo) / span).clamp(0.0, 1.0);
        let gpu_util = (0.05 + 0.9 * load_frac + util_noise.sample(&mut rng)).clamp(0.0, 1.0);
        let mem_util = (0.1 + 0.6 * (regime.level - lo) / span + util_noise.sample(&mut rng)).clamp(0.0, 1.0);

        out.push(TelemetryRecord {
            timestamp: cfg.start + 60 * t as i64,
            power,
            gpu_util,
            mem_util,
            temperature: temp,
            job_count: sched.job_count,
            job_switch: (upcoming != r) as u8,
            gpu_count: sched.gpu_count,
        });
    }
    Ok(out)
}

/// Number of regime changes in the latent path that [`generate`] uses for
/// `cfg`.
pub fn transition_count(cfg: &SynthConfig) -> Result<usize> {
    cfg.validate()?;
    let path = regime_path(cfg, &mut RngState::new(cfg.seed));
    Ok(path.windows(2).filter(|w| w[0] != w[1]).count())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SynthConfig {
        SynthConfig {
            seed,
            n_minutes: 2_000,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn noiseless_single_regime_is_constant() {
        let cfg = SynthConfig {
            n_regimes: 1,
            noise_std: 0.0,
            ..small(3)
        };
        let recs = generate(&cfg).unwrap();
        assert!(recs.iter().all(|r| r.power == recs[0].power));
        assert!(recs.iter().all(|r| r.job_switch == 0));
        assert_eq!(recs[0].power, 200.0);
    }

    #[test]
    fn same_seed_same_series() {
        assert_eq!(generate(&small(9)).unwrap(), generate(&small(9)).unwrap());
        assert_ne!(generate(&small(9)).unwrap(), generate(&small(10)).unwrap());
    }

    #[test]
    fn switches_count_transitions() {
        for seed in 0..4 {
            let cfg = small(seed);
            let recs = generate(&cfg).unwrap();
            let switches = recs.iter().filter(|r| r.job_switch == 1).count();
            assert_eq!(switches, transition_count(&cfg).unwrap());
            assert!(switches > 10);
        }
    }

    #[test]
    fn records_are_valid_minute_series() {
        let recs = generate(&small(1)).unwrap();
        assert_eq!(recs.len(), 2_000);
        for (i, r) in recs.iter().enumerate() {
            r.validate().unwrap();
            assert_eq!(r.timestamp, recs[0].timestamp + 60 * i as i64);
        }
    }

    #[test]
    fn switch_precedes_power_move() {
        let cfg = SynthConfig {
            noise_std: 0.0,
            ..small(4)
        };
        let recs = generate(&cfg).unwrap();
        for t in 0..recs.len() - 1 {
            if recs[t].job_switch == 1 {
                let target = cfg.regimes.iter().find(|r| r.job_count == recs[t].job_count).unwrap().level;
                let step = recs[t + 1].power - recs[t].power;
                assert!(step != 0.0 && step.signum() == (target - recs[t].power).signum(), "at {t}");
            }
        }
    }

    #[test]
    fn job_count_predicts_next_power_change() {
        let recs = generate(&SynthConfig {
            n_minutes: 10_001,
            ..SynthConfig::default()
        })
        .unwrap();
        let x: Vec<f64> = recs[..10_000].iter().map(|r| r.job_count as f64).collect();
        let y: Vec<f64> = recs.windows(2).map(|w| w[1].power - w[0].power).collect();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let (mx, my) = (mean(&x), mean(&y));
        let cov: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
        let corr = cov / (vx * vy).sqrt();
        assert!(corr.abs() > 0.1, "corr {corr}");
    }

    #[test]
    fn persistence_is_not_exact() {
        for n_regimes in 2..=3 {
            let recs = generate(&SynthConfig { n_regimes, noise_std: 0.0, ..small(2) }).unwrap();
            let mae: f64 = recs.windows(2).map(|w| (w[1].power - w[0].power).abs()).sum::<f64>();
            assert!(mae > 0.0);
        }
    }

    #[test]
    fn invalid_configs() {
        assert!(generate(&SynthConfig { n_regimes: 4, ..small(0) }).is_err());
        assert!(generate(&SynthConfig { ramp_min: 600.0, ..small(0) }).is_err());
        assert!(generate(&SynthConfig { noise_std: -1.0, ..small(0) }).is_err());
    }
}
