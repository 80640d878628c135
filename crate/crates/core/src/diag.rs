//! Singularity diagnostics: entropy, dimension, density trajectories and
//! law-of-large-numbers experiments.
//!
//! For a point `x`, the log-density of the generation-`n` cube around it is
//!
//! ```text
//! log( mu(Q_n(x)) / m_N(Q_n(x)) ) = n (N log p + S_n / n)
//! ```
//!
//! where `S_n` is the sum of the log child probabilities along the digit path.
//! Under the volume law `S_n / n` tends to the flat average of `log p_nu`
//! (trajectories sink), while under the measure itself it tends to minus the
//! entropy (trajectories climb); any non-uniform weight vector therefore
//! yields a measure singular with respect to volume. Cube measures are exact
//! rationals; floating point enters only in the final logarithm.

use num_traits::Zero;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::Error;
use crate::measure::{IndexVector, PAdicCube, PAdicPath, ValidatedMeasure};
use crate::rational::{ln_ratio, ratio, Rational};
use crate::Result;

/// Which law drives the digit sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Law {
    /// Uniform digits: points distributed by volume.
    Lebesgue,
    /// Digits drawn with the child probabilities: points distributed by the
    /// measure itself.
    Mu,
}

impl std::str::FromStr for Law {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lebesgue" => Ok(Law::Lebesgue),
            "mu" => Ok(Law::Mu),
            other => Err(Error::InvalidInput(format!("unknown law {other:?}"))),
        }
    }
}

impl std::fmt::Display for Law {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Law::Lebesgue => "lebesgue",
            Law::Mu => "mu",
        })
    }
}

/// Shannon entropy `h = -sum p_nu log p_nu` over all child labels.
pub fn entropy(measure: &ValidatedMeasure) -> f64 {
    let ranks = (measure.p() as usize).pow(measure.dim() as u32);
    let mut h = 0.0;
    for rank in 0..ranks {
        let p = measure.prob_of_rank(rank);
        h -= ratio_to_f64(&p) * ln_ratio(&p);
    }
    h
}

/// Similarity dimension `h / log p`; equals `N` exactly when uniform.
pub fn dimension(measure: &ValidatedMeasure) -> f64 {
    entropy(measure) / (measure.p() as f64).ln()
}

/// Expected value of `X_1 = log p_{nu(x)}` under the chosen law.
pub fn expected_log(measure: &ValidatedMeasure, law: Law) -> f64 {
    let ranks = (measure.p() as usize).pow(measure.dim() as u32);
    let mut acc = 0.0;
    for rank in 0..ranks {
        let p = measure.prob_of_rank(rank);
        let weight = match law {
            Law::Lebesgue => 1.0 / ranks as f64,
            Law::Mu => ratio_to_f64(&p),
        };
        acc += weight * ln_ratio(&p);
    }
    acc
}

/// Asymptotic log-density slope `N log p + E_law[X_1]`.
pub fn slope_target(measure: &ValidatedMeasure, law: Law) -> f64 {
    measure.dim() as f64 * (measure.p() as f64).ln() + expected_log(measure, law)
}

fn ratio_to_f64(r: &Rational) -> f64 {
    ln_ratio(r).exp()
}

/// Digit sampler with fixed 64-bit inverse-CDF thresholds; reproducible
/// across platforms for a given stream of `u64` draws.
struct DigitSampler {
    thresholds: Vec<u64>,
    ranks: usize,
    uniform: bool,
}

impl DigitSampler {
    fn new(measure: &ValidatedMeasure, law: Law) -> Self {
        let ranks = (measure.p() as usize).pow(measure.dim() as u32);
        match law {
            Law::Lebesgue => DigitSampler {
                thresholds: Vec::new(),
                ranks,
                uniform: true,
            },
            Law::Mu => {
                let two64 = Rational::from_integer(num_bigint::BigInt::from(1u128 << 64));
                let mut cum = Rational::zero();
                let mut thresholds = Vec::with_capacity(ranks);
                for rank in 0..ranks {
                    cum += measure.prob_of_rank(rank);
                    let scaled = (&cum * &two64).floor().to_integer();
                    thresholds.push(u64::try_from(scaled.clone()).unwrap_or(u64::MAX));
                }
                *thresholds.last_mut().expect("nonempty") = u64::MAX;
                DigitSampler {
                    thresholds,
                    ranks,
                    uniform: false,
                }
            }
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> usize {
        let u = rng.next_u64();
        if self.uniform {
            ((u as u128 * self.ranks as u128) >> 64) as usize
        } else {
            self.thresholds.partition_point(|&t| t <= u)
        }
    }
}

fn sample_path(
    measure: &ValidatedMeasure,
    sampler: &DigitSampler,
    n: u32,
    rng: &mut ChaCha8Rng,
) -> PAdicPath {
    let steps = (0..n)
        .map(|_| {
            IndexVector::from_rank(sampler.draw(rng), measure.dim(), measure.p(), measure.q())
        })
        .collect();
    PAdicPath {
        dim: measure.dim(),
        p: measure.p(),
        steps,
    }
}

/// Center of a seeded random generation-`n` cube under the chosen law.
/// Identical seeds produce identical points.
pub fn sample_point(
    measure: &ValidatedMeasure,
    law: Law,
    n: u32,
    seed: u64,
) -> Vec<Rational> {
    let sampler = DigitSampler::new(measure, law);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let path = sample_path(measure, &sampler, n, &mut rng);
    path_center(&path)
}

fn path_center(path: &PAdicPath) -> Vec<Rational> {
    let n = path.generation() as u32;
    let cube = PAdicCube::from_path(path.clone());
    let positions = cube.axis_positions();
    let scale = crate::rational::pow_int(path.p, n);
    positions
        .into_iter()
        .map(|a| {
            ratio(-1, 2)
                + Rational::new(a * 2 + 1, scale.clone() * num_bigint::BigInt::from(2))
        })
        .collect()
}

/// Log-density trajectory of a point.
#[derive(Debug, Clone, Serialize)]
pub struct TrajectorySample {
    /// `values[n] = log( mu(Q_n(x)) p^{nN} )`, starting at n = 0.
    pub values: Vec<f64>,
    /// Least-squares slope over the last half of the trajectory.
    pub slope_estimate: f64,
}

/// Exact-rational density trajectory with floating logs, plus a least-squares
/// slope over the last half.
pub fn density_trajectory(
    measure: &ValidatedMeasure,
    x: &[Rational],
    n_max: u32,
) -> Result<TrajectorySample> {
    let path = measure.point_path(x, n_max as usize)?;
    Ok(trajectory_of_path(measure, &path))
}

fn trajectory_of_path(measure: &ValidatedMeasure, path: &PAdicPath) -> TrajectorySample {
    let n_max = path.generation();
    let volume_step = Rational::from_integer(crate::rational::pow_int(
        measure.p(),
        measure.dim() as u32,
    ));
    let mut scaled = Rational::from_integer(1.into());
    let mut values = Vec::with_capacity(n_max + 1);
    values.push(0.0);
    for step in &path.steps {
        let prob = measure.prob_of_rank(step.rank(measure.p(), measure.q()));
        scaled *= prob * &volume_step;
        values.push(ln_ratio(&scaled));
    }
    let slope_estimate = least_squares_slope(&values, n_max / 2);
    TrajectorySample {
        values,
        slope_estimate,
    }
}

/// Least-squares slope of `(n, values[n])` for `n >= from`.
fn least_squares_slope(values: &[f64], from: usize) -> f64 {
    let pts: Vec<(f64, f64)> = values
        .iter()
        .enumerate()
        .skip(from)
        .map(|(n, &v)| (n as f64, v))
        .collect();
    let len = pts.len() as f64;
    if pts.len() < 2 {
        return 0.0;
    }
    let mean_x = pts.iter().map(|(x, _)| x).sum::<f64>() / len;
    let mean_y = pts.iter().map(|(_, y)| y).sum::<f64>() / len;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in &pts {
        num += (x - mean_x) * (y - mean_y);
        den += (x - mean_x) * (x - mean_x);
    }
    num / den
}

/// Aggregate of a seeded LLN experiment.
#[derive(Debug, Clone, Serialize)]
pub struct DistributionStats {
    pub samples: usize,
    pub depth: u32,
    pub law: Law,
    /// Empirical mean of `S_n / n`.
    pub mean: f64,
    /// Unbiased sample variance of `S_n / n`.
    pub variance: f64,
    /// Law-specific limit of `S_n / n`.
    pub target: f64,
    /// `3 * stddev / sqrt(M)`.
    pub tolerance: f64,
    pub tolerance_rule: String,
    pub pass: bool,
}

/// Empirical mean of `S_n / n` over `M` seeded samples against the law's
/// limit; passes when within three standard errors. Sample `i` uses seed
/// `seed + i`, so the experiment parallelizes with a deterministic outcome.
pub fn lln_experiment(
    measure: &ValidatedMeasure,
    law: Law,
    samples: usize,
    depth: u32,
    seed: u64,
) -> DistributionStats {
    assert!(samples >= 1 && depth >= 1, "need positive sample count and depth");
    let sampler = DigitSampler::new(measure, law);
    let values: Vec<f64> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
            let path = sample_path(measure, &sampler, depth, &mut rng);
            let mut product = Rational::from_integer(1.into());
            for step in &path.steps {
                product *= measure.prob_of_rank(step.rank(measure.p(), measure.q()));
            }
            ln_ratio(&product) / depth as f64
        })
        .collect();

    let mean = compensated_mean(&values);
    let variance = if samples > 1 {
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (samples as f64 - 1.0)
    } else {
        0.0
    };
    let target = expected_log(measure, law);
    let tolerance = 3.0 * variance.sqrt() / (samples as f64).sqrt();
    DistributionStats {
        samples,
        depth,
        law,
        mean,
        variance,
        target,
        tolerance,
        tolerance_rule: "|mean - target| <= 3 * stddev / sqrt(M)".into(),
        pass: (mean - target).abs() <= tolerance,
    }
}

fn compensated_mean(values: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for &v in values {
        let y = v - c;
        let t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    sum / values.len() as f64
}

/// Seeded per-sample trajectory slopes under a law.
#[derive(Debug, Clone, Serialize)]
pub struct SlopeStats {
    pub samples: usize,
    pub depth: u32,
    pub law: Law,
    /// Law-specific expected slope `N log p + E[X_1]`.
    pub target: f64,
    /// Mean of the per-sample least-squares slopes.
    pub mean_slope: f64,
    /// Standard error of the mean slope.
    pub std_error: f64,
    /// Fraction of samples whose slope sign matches the target's sign.
    pub correct_sign_rate: f64,
}

/// Per-sample trajectory slopes: their mean locates the law's expected slope
/// and the sign-agreement rate measures how decisively individual
/// trajectories separate at this depth.
pub fn slope_experiment(
    measure: &ValidatedMeasure,
    law: Law,
    samples: usize,
    depth: u32,
    seed: u64,
) -> SlopeStats {
    assert!(samples >= 1 && depth >= 2, "need samples and depth >= 2");
    let sampler = DigitSampler::new(measure, law);
    let slopes: Vec<f64> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
            let path = sample_path(measure, &sampler, depth, &mut rng);
            trajectory_of_path(measure, &path).slope_estimate
        })
        .collect();
    let target = slope_target(measure, law);
    let mean_slope = compensated_mean(&slopes);
    let variance = if samples > 1 {
        slopes
            .iter()
            .map(|v| (v - mean_slope) * (v - mean_slope))
            .sum::<f64>()
            / (samples as f64 - 1.0)
    } else {
        0.0
    };
    let matches = slopes
        .iter()
        .filter(|&&s| {
            if target > 0.0 {
                s > 0.0
            } else if target < 0.0 {
                s < 0.0
            } else {
                s == 0.0
            }
        })
        .count();
    SlopeStats {
        samples,
        depth,
        law,
        target,
        mean_slope,
        std_error: (variance / samples as f64).sqrt(),
        correct_sign_rate: matches as f64 / samples as f64,
    }
}
