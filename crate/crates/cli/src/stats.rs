//! Summary statistics for result files.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

pub const CI_METHOD: &str = "percentile";

pub fn mean(samples: &[f64]) -> f64 {
    samples.iter().sum::<f64>() / samples.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BootstrapOptions {
    pub level: f64,
    pub resamples: usize,
    pub seed: u64,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        Self {
            level: 0.95,
            resamples: 2000,
            seed: 0,
        }
    }
}

/// Percentile bootstrap interval for the mean.
pub fn bootstrap_ci(samples: &[f64], opts: &BootstrapOptions) -> Result<(f64, f64)> {
    if samples.len() < 2 {
        return Err(Error::Stats(format!("bootstrap needs at least 2 samples, got {}", samples.len())));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::Stats("bootstrap samples must be finite".into()));
    }
    if !(opts.level > 0.0 && opts.level < 1.0) || opts.resamples == 0 {
        return Err(Error::Stats("need 0 < level < 1 and at least one resample".into()));
    }
    if samples.iter().all(|v| *v == samples[0]) {
        return Ok((samples[0], samples[0]));
    }
    let n = samples.len();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut means: Vec<f64> = (0..opts.resamples)
        .map(|_| (0..n).map(|_| samples[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let alpha = (1.0 - opts.level) / 2.0;
    let b = opts.resamples as f64;
    let lo = ((alpha * b).floor() as usize).min(opts.resamples - 1);
    let hi = (((1.0 - alpha) * b).ceil() as usize).clamp(1, opts.resamples) - 1;
    Ok((means[lo], means[hi]))
}
