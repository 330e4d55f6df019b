//! The off-diagonal Green energy S_n = Σ_{i≠j} G(x_i, x_j) and its Monte
//! Carlo moments.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{input, Result};
use crate::green::{certified_sigma2, GreenKernel};
use crate::numerics::NeumaierSum;
use crate::rng::RandomStream;
use crate::stats::Estimate;
use crate::surfaces::{Point, SurfaceModel};

/// S_n = 2 Σ_{i<j} G(x_i, x_j), or +∞ if two points coincide.
///
/// Points are first sorted by coordinates and pairs are then visited in
/// lexicographic order with compensated summation, so the value is the same
/// bit for bit under any permutation of the input.
pub fn green_energy(kernel: &GreenKernel, pts: &[Point]) -> f64 {
    let mut pts = pts.to_vec();
    pts.sort_by(|a, b| {
        coords(a)
            .iter()
            .zip(coords(b))
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut total = NeumaierSum::default();
    for (i, x) in pts.iter().enumerate() {
        let mut row = NeumaierSum::default();
        for y in &pts[i + 1..] {
            match kernel.try_pair(x, y) {
                Some(g) => row.add(g),
                None => return f64::INFINITY,
            }
        }
        total.merge(&row);
    }
    2.0 * total.sum()
}

fn coords(p: &Point) -> &[f64] {
    match p {
        Point::Torus(c) => c,
        Point::Sphere(c) => c,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyMomentReport {
    pub surface: SurfaceModel,
    pub n: usize,
    /// Replicas that entered the averages.
    pub replicas: usize,
    /// Replicas dropped because two points coincided.
    pub coincidences: usize,
    pub mean: Estimate,
    pub second_moment: Estimate,
    pub mean_abs: Estimate,
    pub sigma2: f64,
    /// 2n(n−1)σ².
    pub predicted_second_moment: f64,
    /// second_moment / predicted_second_moment.
    pub ratio: Estimate,
    pub ratio_ci: [f64; 2],
    /// √2·σ·n, which bounds E|S_n| by Cauchy–Schwarz.
    pub abs_bound: f64,
}

/// Label of the random streams used by [`energy_moments`] for size n.
pub fn energy_stream_label(n: usize) -> String {
    format!("energy/n={n}")
}

/// S_n of replica `r`: n i.i.d. uniform points from that replica's stream.
pub fn energy_replica(kernel: &GreenKernel, n: usize, seed: u64, r: u64) -> f64 {
    let mut stream = RandomStream::from_parts(seed, &energy_stream_label(n), r);
    let pts = kernel.surface().sample_uniform(&mut stream, n);
    green_energy(kernel, &pts)
}

/// Mean, second moment and mean absolute value of S_n over `replicas`
/// independent configurations. Replicas run in parallel and are combined in
/// index order.
pub fn energy_moments(
    kernel: &GreenKernel,
    n: usize,
    replicas: usize,
    seed: u64,
) -> Result<EnergyMomentReport> {
    if n < 2 {
        return input("energy moments need n ≥ 2");
    }
    if replicas < 100 {
        return input("energy moments need at least 100 replicas");
    }
    let values: Vec<f64> = (0..replicas as u64)
        .into_par_iter()
        .map(|r| energy_replica(kernel, n, seed, r))
        .collect();
    Ok(summarize(kernel.surface(), n, &values))
}

/// Moment report from per-replica S_n values (+∞ entries are coincidences).
pub fn summarize(surface: SurfaceModel, n: usize, values: &[f64]) -> EnergyMomentReport {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    let squares: Vec<f64> = finite.iter().map(|v| v * v).collect();
    let abs: Vec<f64> = finite.iter().map(|v| v.abs()).collect();
    let sigma2 = certified_sigma2(surface).value;
    let nf = n as f64;
    let predicted = 2.0 * nf * (nf - 1.0) * sigma2;
    let second_moment = Estimate::from_samples(&squares);
    let ratio = second_moment.scaled(1.0 / predicted);
    EnergyMomentReport {
        surface,
        n,
        replicas: finite.len(),
        coincidences: values.len() - finite.len(),
        mean: Estimate::from_samples(&finite),
        second_moment,
        mean_abs: Estimate::from_samples(&abs),
        sigma2,
        predicted_second_moment: predicted,
        ratio,
        ratio_ci: ratio.ci95(),
        abs_bound: 2f64.sqrt() * sigma2.sqrt() * nf,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_configurations() {
        let k = GreenKernel::torus();
        let a = Point::torus(0.1, 0.2);
        let b = Point::torus(0.6, 0.9);
        assert_eq!(green_energy(&k, &[]), 0.0);
        assert_eq!(green_energy(&k, &[a]), 0.0);
        assert_eq!(green_energy(&k, &[a, b]), 2.0 * k.eval(&a, &b).unwrap());
    }

    #[test]
    fn coincidence_is_infinite() {
        let k = GreenKernel::sphere();
        let p = Point::sphere([1.0, 0.0, 0.0]).unwrap();
        let q = Point::sphere([0.0, 1.0, 0.0]).unwrap();
        assert_eq!(green_energy(&k, &[p, q, p]), f64::INFINITY);
    }

    #[test]
    fn sphere_pair_prediction_is_four() {
        let k = GreenKernel::sphere();
        let rep = energy_moments(&k, 2, 100, 3).unwrap();
        assert!((rep.predicted_second_moment - 4.0).abs() < 1e-9);
        assert_eq!(rep.replicas, 100);
    }

    #[test]
    fn preconditions() {
        let k = GreenKernel::sphere();
        assert!(energy_moments(&k, 1, 1000, 0).is_err());
        assert!(energy_moments(&k, 5, 99, 0).is_err());
    }

    #[test]
    fn coincident_replicas_are_counted() {
        let rep = summarize(SurfaceModel::UnitSphere, 3, &[1.0, f64::INFINITY, -1.0]);
        assert_eq!(rep.coincidences, 1);
        assert_eq!(rep.replicas, 2);
        assert_eq!(rep.mean.value, 0.0);
    }
}
