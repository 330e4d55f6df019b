//! Replica-level summary statistics.

use serde::{Deserialize, Serialize};

use crate::error::{input, Result};
use crate::numerics::NeumaierSum;
use crate::rng::RandomStream;

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// A sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

impl Estimate {
    /// Mean and standard error (sample variance with n − 1).
    pub fn from_samples(xs: &[f64]) -> Estimate {
        let n = xs.len();
        if n == 0 {
            return Estimate {
                value: f64::NAN,
                se: f64::NAN,
            };
        }
        let mean = xs.iter().copied().collect::<NeumaierSum>().sum() / n as f64;
        if n == 1 {
            return Estimate {
                value: mean,
                se: f64::NAN,
            };
        }
        let ss = xs
            .iter()
            .map(|x| (x - mean) * (x - mean))
            .collect::<NeumaierSum>()
            .sum();
        Estimate {
            value: mean,
            se: (ss / (n - 1) as f64 / n as f64).sqrt(),
        }
    }

    pub fn scaled(self, c: f64) -> Estimate {
        Estimate {
            value: self.value * c,
            se: self.se * c.abs(),
        }
    }

    /// Normal 95% interval.
    pub fn ci95(self) -> [f64; 2] {
        [self.value - Z95 * self.se, self.value + Z95 * self.se]
    }

    /// |value − target| in units of the standard error.
    pub fn z_score(self, target: f64) -> f64 {
        (self.value - target).abs() / self.se
    }
}

/// Ordinary least squares fit of y = intercept + slope·x.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub slope_se: f64,
    pub intercept: f64,
    pub intercept_se: f64,
    pub points: usize,
}

pub fn least_squares(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() {
        return input("x and y lengths differ");
    }
    let n = x.len();
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    if n < 2 || !(sxx > 0.0) {
        return input("regression needs at least two distinct abscissae");
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let (slope_se, intercept_se) = if n > 2 {
        let rss: f64 = x
            .iter()
            .zip(y)
            .map(|(a, b)| (b - intercept - slope * a).powi(2))
            .sum();
        let s2 = rss / (n - 2) as f64;
        (
            (s2 / sxx).sqrt(),
            (s2 * (1.0 / n as f64 + mx * mx / sxx)).sqrt(),
        )
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok(LinearFit {
        slope,
        slope_se,
        intercept,
        intercept_se,
        points: n,
    })
}

/// Percentile bootstrap interval for a statistic of several groups of
/// replicas; each resample redraws every group with replacement.
pub fn bootstrap_interval(
    groups: &[Vec<f64>],
    statistic: impl Fn(&[Vec<f64>]) -> f64,
    resamples: usize,
    level: f64,
    stream: &mut RandomStream,
) -> [f64; 2] {
    let mut stats = Vec::with_capacity(resamples);
    let mut draw: Vec<Vec<f64>> = groups.iter().map(|g| Vec::with_capacity(g.len())).collect();
    for _ in 0..resamples {
        for (g, d) in groups.iter().zip(draw.iter_mut()) {
            d.clear();
            for _ in 0..g.len() {
                d.push(g[stream.below(g.len())]);
            }
        }
        stats.push(statistic(&draw));
    }
    stats.sort_by(f64::total_cmp);
    let alpha = 0.5 * (1.0 - level);
    [
        quantile_sorted(&stats, alpha),
        quantile_sorted(&stats, 1.0 - alpha),
    ]
}

/// Linear-interpolation quantile of a sorted sample.
pub fn quantile_sorted(xs: &[f64], q: f64) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (xs.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    xs[lo] + (pos - lo as f64) * (xs[hi] - xs[lo])
}
