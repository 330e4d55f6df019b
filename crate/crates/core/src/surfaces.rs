//! The two closed surfaces: the flat unit torus R²/Z² and the unit sphere S².
//!
//! Both carry the normalized volume measure `dx`, so integrals against the
//! quadrature weights approximate probabilities, not areas.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{input, Error, Result};
use crate::rng::RandomStream;

/// Largest point count accepted by [`SurfaceModel::quadrature`].
pub const MAX_QUADRATURE_POINTS: usize = 1 << 28;

const SPHERE_NORM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurfaceModel {
    FlatTorus,
    UnitSphere,
}

impl SurfaceModel {
    pub fn volume(self) -> f64 {
        match self {
            SurfaceModel::FlatTorus => 1.0,
            SurfaceModel::UnitSphere => 4.0 * PI,
        }
    }

    pub fn diameter(self) -> f64 {
        match self {
            SurfaceModel::FlatTorus => std::f64::consts::FRAC_1_SQRT_2,
            SurfaceModel::UnitSphere => PI,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SurfaceModel::FlatTorus => "torus",
            SurfaceModel::UnitSphere => "sphere",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "torus" => Ok(SurfaceModel::FlatTorus),
            "sphere" => Ok(SurfaceModel::UnitSphere),
            other => input(format!(
                "unknown surface `{other}` (expected torus or sphere)"
            )),
        }
    }

    pub fn check_point(self, p: &Point) -> Result<()> {
        match (self, p) {
            (SurfaceModel::FlatTorus, Point::Torus(_)) => Ok(()),
            (SurfaceModel::UnitSphere, Point::Sphere(v)) => {
                let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                if (norm - 1.0).abs() > SPHERE_NORM_TOL {
                    return input(format!("sphere point has norm {norm}, not 1"));
                }
                Ok(())
            }
            _ => input(format!("point {p:?} does not live on the {}", self.name())),
        }
    }

    /// Geodesic distance d_g(p, q).
    pub fn geodesic_distance(self, p: &Point, q: &Point) -> Result<f64> {
        self.check_point(p)?;
        self.check_point(q)?;
        Ok(p.distance(q))
    }

    /// `n` i.i.d. draws from the normalized volume measure.
    pub fn sample_uniform(self, stream: &mut RandomStream, n: usize) -> Vec<Point> {
        (0..n)
            .map(|_| match self {
                SurfaceModel::FlatTorus => Point::torus(stream.uniform(), stream.uniform()),
                SurfaceModel::UnitSphere => loop {
                    let v = [stream.normal(), stream.normal(), stream.normal()];
                    let r = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                    if r > 1e-150 {
                        break Point::Sphere([v[0] / r, v[1] / r, v[2] / r]);
                    }
                },
            })
            .collect()
    }

    /// Number of points `quadrature(resolution)` produces.
    pub fn quadrature_len(self, resolution: usize) -> usize {
        match self {
            SurfaceModel::FlatTorus => resolution.saturating_mul(resolution),
            SurfaceModel::UnitSphere => resolution,
        }
    }

    /// Equal-weight discretization of `dx`.
    ///
    /// Torus: the cell-centred `K × K` grid `((a+½)/K, (b+½)/K)`.
    /// Sphere: the `N`-point Fibonacci spiral. Its points are not exactly
    /// equal-area, which shows up as an O(N^{-1/2}) bias in W₂ against `dx`.
    pub fn quadrature(self, resolution: usize) -> Result<WeightedPointSet> {
        if resolution == 0 {
            return input("quadrature resolution must be at least 1");
        }
        let points = match self {
            SurfaceModel::FlatTorus => {
                let count = resolution
                    .checked_mul(resolution)
                    .filter(|&c| c <= MAX_QUADRATURE_POINTS)
                    .ok_or_else(|| {
                        Error::Input(format!("torus grid {resolution}² is too large"))
                    })?;
                let h = 1.0 / resolution as f64;
                let mut pts = Vec::with_capacity(count);
                for a in 0..resolution {
                    for b in 0..resolution {
                        pts.push(Point::Torus([(a as f64 + 0.5) * h, (b as f64 + 0.5) * h]));
                    }
                }
                pts
            }
            SurfaceModel::UnitSphere => {
                if resolution > MAX_QUADRATURE_POINTS {
                    return input(format!(
                        "Fibonacci lattice of {resolution} points is too large"
                    ));
                }
                fibonacci_sphere(resolution)
            }
        };
        Ok(WeightedPointSet::uniform(points))
    }
}

/// Fibonacci spiral: z_k = 1 − (2k+1)/N, longitude 2πk/φ.
pub fn fibonacci_sphere(count: usize) -> Vec<Point> {
    let golden = (1.0 + 5f64.sqrt()) / 2.0;
    let nf = count as f64;
    (0..count)
        .map(|k| {
            let z = 1.0 - (2.0 * k as f64 + 1.0) / nf;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let turns = (k as f64 / golden).fract();
            let phi = 2.0 * PI * turns;
            Point::Sphere([r * phi.cos(), r * phi.sin(), z])
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Point {
    /// (u, v) ∈ [0,1)².
    Torus([f64; 2]),
    /// Unit vector in R³.
    Sphere([f64; 3]),
}

impl Point {
    /// Torus point with coordinates reduced into [0, 1).
    pub fn torus(u: f64, v: f64) -> Point {
        Point::Torus([wrap_unit(u), wrap_unit(v)])
    }

    /// Sphere point from a vector that must already be unit length.
    pub fn sphere(v: [f64; 3]) -> Result<Point> {
        let p = Point::Sphere(v);
        SurfaceModel::UnitSphere.check_point(&p)?;
        Ok(p)
    }

    /// Sphere point from any nonzero vector.
    pub fn sphere_normalized(v: [f64; 3]) -> Result<Point> {
        let r = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if !(r > 0.0 && r.is_finite()) {
            return input("cannot normalize a zero or non-finite vector");
        }
        Ok(Point::Sphere([v[0] / r, v[1] / r, v[2] / r]))
    }

    /// Geodesic distance between points of the same surface. Mixed pairs
    /// are a programming error.
    #[inline]
    pub fn distance(&self, other: &Point) -> f64 {
        match (self, other) {
            (Point::Torus(a), Point::Torus(b)) => torus_distance_sq(a, b).sqrt(),
            (Point::Sphere(a), Point::Sphere(b)) => sphere_angle(a, b),
            _ => panic!("distance between points of different surfaces"),
        }
    }

    #[inline]
    pub fn distance_sq(&self, other: &Point) -> f64 {
        match (self, other) {
            (Point::Torus(a), Point::Torus(b)) => torus_distance_sq(a, b),
            (Point::Sphere(a), Point::Sphere(b)) => {
                let t = sphere_angle(a, b);
                t * t
            }
            _ => panic!("distance between points of different surfaces"),
        }
    }
}

#[inline]
pub fn wrap_unit(x: f64) -> f64 {
    let r = x - x.floor();
    // x slightly below an integer can round up to exactly 1.0
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// Shortest signed representative of `d` modulo 1, in [-½, ½].
#[inline]
pub fn wrap_delta(d: f64) -> f64 {
    d - d.round()
}

#[inline]
pub fn torus_distance_sq(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    let dx = wrap_delta(a[0] - b[0]);
    let dy = wrap_delta(a[1] - b[1]);
    dx * dx + dy * dy
}

/// Angle between unit vectors, via atan2(|a×b|, a·b) which stays accurate
/// for nearly parallel and nearly antipodal pairs.
#[inline]
pub fn sphere_angle(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let cx = a[1] * b[2] - a[2] * b[1];
    let cy = a[2] * b[0] - a[0] * b[2];
    let cz = a[0] * b[1] - a[1] * b[0];
    (cx * cx + cy * cy + cz * cz).sqrt().atan2(dot)
}

/// Squared chord |a − b|² between sphere points.
#[inline]
pub fn chord_sq(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let d0 = a[0] - b[0];
    let d1 = a[1] - b[1];
    let d2 = a[2] - b[2];
    d0 * d0 + d1 * d1 + d2 * d2
}

/// Points with nonnegative masses summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedPointSet {
    points: Vec<Point>,
    weights: Vec<f64>,
}

impl WeightedPointSet {
    pub fn new(points: Vec<Point>, weights: Vec<f64>) -> Result<Self> {
        if points.len() != weights.len() {
            return input(format!(
                "{} points but {} weights",
                points.len(),
                weights.len()
            ));
        }
        if points.is_empty() {
            return input("a weighted point set needs at least one point");
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return input(format!("weight {w} is not a nonnegative number"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return input(format!("weights sum to {total}, not 1"));
        }
        Ok(WeightedPointSet { points, weights })
    }

    /// Empirical measure: mass 1/n on each point.
    pub fn uniform(points: Vec<Point>) -> Self {
        assert!(!points.is_empty(), "empirical measure of zero points");
        let w = 1.0 / points.len() as f64;
        let weights = vec![w; points.len()];
        WeightedPointSet { points, weights }
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// True when every weight equals 1/len exactly (as built by `uniform`).
    pub fn is_uniform(&self) -> bool {
        let w = 1.0 / self.points.len() as f64;
        self.weights.iter().all(|&x| x == w)
    }

    pub fn into_parts(self) -> (Vec<Point>, Vec<f64>) {
        (self.points, self.weights)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RandomStream;

    #[test]
    fn torus_wraps_around() {
        let s = SurfaceModel::FlatTorus;
        let d = s
            .geodesic_distance(&Point::torus(0.1, 0.2), &Point::torus(0.9, 0.2))
            .unwrap();
        assert!((d - 0.2).abs() < 1e-15);
    }

    #[test]
    fn antipodes_are_pi_apart() {
        let s = SurfaceModel::UnitSphere;
        let n = Point::sphere([0.0, 0.0, 1.0]).unwrap();
        let south = Point::sphere([0.0, 0.0, -1.0]).unwrap();
        assert_eq!(s.geodesic_distance(&n, &south).unwrap(), PI);
        assert_eq!(s.geodesic_distance(&n, &n).unwrap(), 0.0);
    }

    #[test]
    fn unnormalized_sphere_point_rejected() {
        assert!(Point::sphere([0.0, 0.0, 1.0 + 1e-9]).is_err());
        let bad = Point::Sphere([0.0, 0.0, 1.1]);
        let ok = Point::sphere([1.0, 0.0, 0.0]).unwrap();
        assert!(SurfaceModel::UnitSphere
            .geodesic_distance(&bad, &ok)
            .is_err());
    }

    #[test]
    fn mixed_surfaces_rejected() {
        let t = Point::torus(0.0, 0.0);
        assert!(SurfaceModel::UnitSphere.check_point(&t).is_err());
    }

    #[test]
    fn torus_coordinates_reduced() {
        for &x in &[-1e-17, -0.25, 1.0, 3.75, -2.0] {
            let Point::Torus([u, v]) = Point::torus(x, x) else {
                unreachable!()
            };
            assert!(
                (0.0..1.0).contains(&u) && (0.0..1.0).contains(&v),
                "{x} -> {u}"
            );
        }
    }

    #[test]
    fn empty_sample() {
        let mut s = RandomStream::from_parts(0, "t", 0);
        assert!(SurfaceModel::FlatTorus.sample_uniform(&mut s, 0).is_empty());
    }

    #[test]
    fn torus_sample_moments() {
        let mut s = RandomStream::from_parts(11, "moments", 0);
        let pts = SurfaceModel::FlatTorus.sample_uniform(&mut s, 1_000_000);
        let (mut mu, mut mv) = (0.0, 0.0);
        for p in &pts {
            let Point::Torus([u, v]) = p else {
                unreachable!()
            };
            mu += u;
            mv += v;
        }
        let n = pts.len() as f64;
        let tol = 4.0 * (1.0f64 / 12.0).sqrt() * 1e-3;
        assert!((mu / n - 0.5).abs() <= tol);
        assert!((mv / n - 0.5).abs() <= tol);
    }

    #[test]
    fn sphere_sample_moments() {
        let mut s = RandomStream::from_parts(12, "moments", 0);
        let pts = SurfaceModel::UnitSphere.sample_uniform(&mut s, 1_000_000);
        let mut m = [0.0; 3];
        let mut sq = [0.0; 3];
        for p in &pts {
            SurfaceModel::UnitSphere.check_point(p).unwrap();
            let Point::Sphere(v) = p else { unreachable!() };
            for k in 0..3 {
                m[k] += v[k];
                sq[k] += v[k] * v[k];
            }
        }
        let n = pts.len() as f64;
        let tol = 4.0 * (1.0f64 / 3.0).sqrt() * 1e-3;
        for k in 0..3 {
            assert!((m[k] / n).abs() <= tol);
            // E[component²] = 1/3; the sample variance of x² is 4/45
            assert!((sq[k] / n - 1.0 / 3.0).abs() <= 4.0 * (4.0f64 / 45.0).sqrt() * 1e-3);
        }
    }

    #[test]
    fn torus_grid_two_by_two() {
        let q = SurfaceModel::FlatTorus.quadrature(2).unwrap();
        assert_eq!(q.len(), 4);
        assert!(q.weights().iter().all(|&w| w == 0.25));
    }

    #[test]
    fn quadrature_weights_sum_to_one() {
        for s in [SurfaceModel::FlatTorus, SurfaceModel::UnitSphere] {
            for r in [1, 3, 17, 100] {
                let q = s.quadrature(r).unwrap();
                let total: f64 = q.weights().iter().sum();
                assert!((total - 1.0).abs() < 1e-12);
                for p in q.points() {
                    s.check_point(p).unwrap();
                }
            }
        }
    }

    #[test]
    fn quadrature_rejects_bad_resolution() {
        assert!(SurfaceModel::FlatTorus.quadrature(0).is_err());
        assert!(SurfaceModel::FlatTorus.quadrature(1 << 20).is_err());
        assert!(SurfaceModel::UnitSphere.quadrature(usize::MAX).is_err());
    }

    #[test]
    fn fibonacci_lattice_is_centered() {
        let q = SurfaceModel::UnitSphere.quadrature(10_000).unwrap();
        let mut m = [0.0; 3];
        for p in q.points() {
            let Point::Sphere(v) = p else { unreachable!() };
            for k in 0..3 {
                m[k] += v[k] / 10_000.0;
            }
        }
        for k in 0..3 {
            assert!(m[k].abs() < 2e-2, "component {k} mean {}", m[k]);
        }
    }

    #[test]
    fn weighted_set_validation() {
        let p = vec![Point::torus(0.0, 0.0), Point::torus(0.5, 0.5)];
        assert!(WeightedPointSet::new(p.clone(), vec![0.5]).is_err());
        assert!(WeightedPointSet::new(p.clone(), vec![0.7, 0.7]).is_err());
        assert!(WeightedPointSet::new(p.clone(), vec![1.5, -0.5]).is_err());
        assert!(WeightedPointSet::new(p, vec![0.25, 0.75]).is_ok());
    }
}
