//! Monte-Carlo estimate of the per-wave direct-commit rate.

use serde::Serialize;
use wavedag_core::committer::direct_commit_lower_bound;
use wavedag_core::{ValidatorId, WaveConfig};

use crate::checks::check_common_core;
use crate::engine::{run, SimConfig, SimError};
use crate::policy::{FaultPlan, Scheduler};
use crate::report::wave_hits;

/// Two-sided 99% normal quantile.
pub const Z99: f64 = 2.575_829_303_548_901;

/// Wilson score interval `(low, high)` for `hits` successes in `trials`.
pub fn wilson(hits: u64, trials: u64, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = hits as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((center - half).max(0.0), (center + half).min(1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub f: usize,
    pub leaders: usize,
    pub wave_length: u64,
    /// Validators crashed from the start.
    pub crashed: usize,
    pub waves: u64,
    pub hits: u64,
    pub rate: f64,
    pub low: f64,
    pub high: f64,
    pub bound: f64,
    /// Simulated runs whose DAG lacks a common core somewhere, when checked.
    pub common_core_violations: u64,
}

impl Estimate {
    pub fn half_width(&self) -> f64 {
        (self.high - self.low) / 2.0
    }

    /// Whether the measured rate clears the bound less the interval half-width.
    pub fn meets_bound(&self) -> bool {
        self.rate >= self.bound - self.half_width()
    }
}

#[derive(Clone, Debug)]
pub struct EstimateConfig {
    pub f: usize,
    pub leaders: usize,
    pub wave_length: u64,
    pub waves: u64,
    pub seed: u64,
    /// Crash the last `crashed` validators before round 1.
    pub crashed: usize,
    /// Rounds per simulated run; the waves are spread over several runs.
    pub rounds_per_run: u64,
    /// Also run the common-core check over every simulated DAG.
    pub check_common_core: bool,
}

impl EstimateConfig {
    pub fn new(f: usize, leaders: usize, wave_length: u64, waves: u64, seed: u64) -> Self {
        Self {
            f,
            leaders,
            wave_length,
            waves,
            seed,
            crashed: 0,
            rounds_per_run: 1_000,
            check_common_core: false,
        }
    }
}

/// Fraction of waves (propose rounds) in which the observer directly commits
/// at least one slot, under the random network model.
pub fn estimate_direct_commit_rate(config: &EstimateConfig) -> Result<Estimate, SimError> {
    let n = 3 * config.f + 1;
    let wave =
        WaveConfig::new(config.wave_length, config.leaders, n).map_err(|_| SimError::Leaders {
            leaders: config.leaders,
            n,
        })?;
    let bound =
        direct_commit_lower_bound(config.f, config.leaders, config.wave_length).unwrap_or(0.0);
    let mut waves = 0u64;
    let mut hits = 0u64;
    let mut run_index = 0u64;
    let mut common_core_violations = 0u64;
    while waves < config.waves {
        let wanted = (config.waves - waves).min(config.rounds_per_run.max(1));
        let mut sim = SimConfig::new(
            n,
            wave,
            Scheduler::RandomModel,
            wanted + config.wave_length + 2,
            config
                .seed
                .wrapping_add(run_index.wrapping_mul(0x9e37_79b9)),
        );
        sim.load = 0;
        sim.faults = FaultPlan::crashed_at_start((n - config.crashed..n).map(ValidatorId::from));
        sim.keep_union = config.check_common_core;
        let report = run(sim)?;
        if let Some(union) = &report.union {
            common_core_violations += u64::from(check_common_core(union).is_err());
        }
        let slots = &report.observer().slots;
        let per_round = config.leaders;
        let complete = (slots.len() / per_round).min(wanted as usize);
        let (w, h) = wave_hits(&slots[..complete * per_round]);
        waves += w as u64;
        hits += h as u64;
        run_index += 1;
        if w == 0 {
            break;
        }
    }
    let (low, high) = wilson(hits, waves, Z99);
    Ok(Estimate {
        f: config.f,
        leaders: config.leaders,
        wave_length: config.wave_length,
        crashed: config.crashed,
        waves,
        hits,
        rate: if waves == 0 {
            0.0
        } else {
            hits as f64 / waves as f64
        },
        low,
        high,
        bound,
        common_core_violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wilson_reference_values() {
        // 50/100 at 95%: (0.4038, 0.5962).
        let (lo, hi) = wilson(50, 100, 1.959_963_984_540_054);
        assert!((lo - 0.403_831).abs() < 1e-5, "{lo}");
        assert!((hi - 0.596_169).abs() < 1e-5, "{hi}");
        let (lo, hi) = wilson(100, 100, Z99);
        assert!(hi == 1.0 && lo > 0.93 && lo < 0.95, "{lo}");
        assert_eq!(wilson(0, 0, Z99), (0.0, 1.0));
    }
}
