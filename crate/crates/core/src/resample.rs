//! Paired bootstrap over tracks for differences of agreement statistics.
//!
//! Iteration `i` draws its indices from a ChaCha8 generator seeded with the
//! spec seed on stream `i`, so results do not depend on the worker count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{AnnotationSet, EmotionLabel};
use crate::metrics::{self, MetricsError, RatingMatrix};

pub const RNG_NAME: &str = "ChaCha8Rng(seed_from_u64, stream=iteration)";

/// Degenerate resamples may be redrawn up to this many times the iteration count.
pub const REDRAW_FACTOR: usize = 10;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ResampleError {
    #[error("invalid bootstrap spec: {0}")]
    Spec(String),
    #[error("no samples to resample")]
    Empty,
    #[error("inputs are not aligned: {0}")]
    Misaligned(String),
    #[error("point estimate: {0}")]
    Metric(#[from] MetricsError),
    #[error("gave up after {0} degenerate resamples")]
    TooManyRedraws(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BootstrapSpec {
    pub iterations: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for BootstrapSpec {
    fn default() -> Self {
        Self {
            iterations: 10_000,
            level: 0.95,
            seed: 0,
        }
    }
}

impl BootstrapSpec {
    pub fn validate(&self) -> Result<(), ResampleError> {
        if self.iterations < 100 {
            return Err(ResampleError::Spec(format!(
                "iterations must be >= 100, got {}",
                self.iterations
            )));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(ResampleError::Spec(format!(
                "level must be in (0, 1), got {}",
                self.level
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootstrapResult {
    pub statistic: String,
    pub point_estimate: f64,
    pub bootstrap_mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: usize,
    pub iterations: usize,
    pub level: f64,
    pub seed: u64,
    pub rng: String,
    pub redraws: usize,
    /// Zero lies outside the interval.
    pub significant: bool,
    /// The plug-in estimate fell outside its own interval.
    pub point_outside_ci: bool,
}

/// Percentile interval with linear interpolation between order statistics
/// (`h = (n - 1) p`).
pub fn percentile_ci(samples: &[f64], level: f64) -> Result<(f64, f64), ResampleError> {
    if samples.is_empty() {
        return Err(ResampleError::Empty);
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(ResampleError::Spec(format!(
            "level must be in (0, 1), got {level}"
        )));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    Ok((quantile(&sorted, alpha), quantile(&sorted, 1.0 - alpha)))
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let (a, b) = (sorted[lo], sorted[hi]);
    if a == b {
        a
    } else {
        a + (h - lo as f64) * (b - a)
    }
}

/// Runs `stat` on `spec.iterations` resamples of `0..n` and summarizes.
pub fn bootstrap<F>(
    name: &str,
    n: usize,
    spec: &BootstrapSpec,
    stat: F,
) -> Result<BootstrapResult, ResampleError>
where
    F: Fn(&[usize]) -> Result<f64, MetricsError> + Sync,
{
    spec.validate()?;
    if n == 0 {
        return Err(ResampleError::Empty);
    }
    let all: Vec<usize> = (0..n).collect();
    let point = stat(&all)?;
    let cap = REDRAW_FACTOR * spec.iterations;

    let draws: Vec<(f64, usize)> = (0..spec.iterations)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(i as u64);
            let mut idx = vec![0usize; n];
            let mut redraws = 0;
            loop {
                for slot in idx.iter_mut() {
                    *slot = rng.gen_range(0..n);
                }
                match stat(&idx) {
                    Ok(v) => return Ok((v, redraws)),
                    Err(_) if redraws < cap => redraws += 1,
                    Err(_) => return Err(ResampleError::TooManyRedraws(redraws)),
                }
            }
        })
        .collect::<Result<_, _>>()?;
    let redraws: usize = draws.iter().map(|d| d.1).sum();
    if redraws > cap {
        return Err(ResampleError::TooManyRedraws(redraws));
    }
    let values: Vec<f64> = draws.into_iter().map(|d| d.0).collect();
    let (lo, hi) = percentile_ci(&values, spec.level)?;
    Ok(BootstrapResult {
        statistic: name.to_string(),
        point_estimate: point,
        bootstrap_mean: metrics::compensated_sum(values.iter().copied()) / values.len() as f64,
        ci_low: lo,
        ci_high: hi,
        n,
        iterations: spec.iterations,
        level: spec.level,
        seed: spec.seed,
        rng: RNG_NAME.to_string(),
        redraws,
        significant: lo > 0.0 || hi < 0.0,
        point_outside_ci: point < lo || point > hi,
    })
}

/// κ(a, gold) − κ(b, gold) with tracks resampled jointly.
pub fn bootstrap_kappa_diff(
    name: &str,
    pred_a: &[EmotionLabel],
    pred_b: &[EmotionLabel],
    gold: &[EmotionLabel],
    spec: &BootstrapSpec,
) -> Result<BootstrapResult, ResampleError> {
    if pred_a.len() != gold.len() || pred_b.len() != gold.len() {
        return Err(ResampleError::Misaligned(format!(
            "lengths {}, {} and {}",
            pred_a.len(),
            pred_b.len(),
            gold.len()
        )));
    }
    bootstrap(name, gold.len(), spec, |idx| {
        let pick = |s: &[EmotionLabel]| idx.iter().map(|&i| s[i]).collect::<Vec<_>>();
        let g = pick(gold);
        Ok(metrics::cohen_kappa(&pick(pred_a), &g)? - metrics::cohen_kappa(&pick(pred_b), &g)?)
    })
}

/// κ_F(a) − κ_F(b) for two rater groups over the same tracks.
pub fn bootstrap_fleiss_diff(
    name: &str,
    set_a: &AnnotationSet,
    set_b: &AnnotationSet,
    spec: &BootstrapSpec,
) -> Result<BootstrapResult, ResampleError> {
    if set_a.tracks() != set_b.tracks() {
        return Err(ResampleError::Misaligned(
            "rater groups cover different tracks".into(),
        ));
    }
    let a = RatingMatrix::from_outcomes(set_a.rows());
    let b = RatingMatrix::from_outcomes(set_b.rows());
    bootstrap(name, a.len(), spec, |idx| {
        Ok(metrics::fleiss_kappa(&a.resample(idx))? - metrics::fleiss_kappa(&b.resample(idx))?)
    })
}
