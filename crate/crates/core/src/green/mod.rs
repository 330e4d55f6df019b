//! Mean-zero Green functions of −Δ with respect to the normalized measure.
//!
//! Integrating against `dy = vol(M)^{-1} dvol` instead of the Riemannian
//! volume multiplies the usual Green function by vol(M). On the sphere this
//! gives `G(x, y) = log(2 / (1 − cos θ)) − 1`, whose log singularity carries
//! the coefficient −vol/2π = −2; on the unit torus the two conventions agree.

mod checks;
mod torus;

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use checks::*;
pub use torus::{Ewald, FourierOracle};

use crate::error::{Error, Result};
use crate::numerics::{integrate_graded, NeumaierSum};
use crate::rng::RandomStream;
use crate::surfaces::{chord_sq, Point, SurfaceModel};

/// Ewald splitting parameter used unless the caller picks another.
pub const DEFAULT_EWALD_ALPHA: f64 = 6.0;
pub const DEFAULT_ACCURACY: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GreenMethod {
    SphereClosedForm,
    TorusEwald,
    TorusFourierOracle,
}

#[derive(Debug, Clone)]
enum Evaluator {
    Sphere,
    Ewald(Arc<Ewald>),
    Fourier(Arc<FourierOracle>),
}

/// Evaluable symmetric mean-zero Green function of a surface.
#[derive(Debug, Clone)]
pub struct GreenKernel {
    surface: SurfaceModel,
    method: GreenMethod,
    accuracy: f64,
    /// Constant added to every value. Zero for the true kernel; nonzero
    /// only to build deliberately shifted kernels for fault injection.
    offset: f64,
    eval: Evaluator,
}

impl GreenKernel {
    pub fn sphere() -> GreenKernel {
        GreenKernel {
            surface: SurfaceModel::UnitSphere,
            method: GreenMethod::SphereClosedForm,
            accuracy: 1e-15,
            offset: 0.0,
            eval: Evaluator::Sphere,
        }
    }

    /// Ewald kernel with the interpolation table used in O(n²) sums.
    pub fn torus() -> GreenKernel {
        Self::from_ewald(Ewald::tabulated(DEFAULT_EWALD_ALPHA, DEFAULT_ACCURACY))
    }

    /// Untabulated Ewald sums with the given splitting parameter.
    pub fn torus_ewald(alpha: f64, accuracy: f64) -> GreenKernel {
        Self::from_ewald(Ewald::new(alpha, accuracy))
    }

    fn from_ewald(ewald: Ewald) -> GreenKernel {
        GreenKernel {
            surface: SurfaceModel::FlatTorus,
            method: GreenMethod::TorusEwald,
            // rounding in the real-space sum adds a few ulps of the largest term
            accuracy: ewald.truncation_bound() + 1e-14,
            offset: 0.0,
            eval: Evaluator::Ewald(Arc::new(ewald)),
        }
    }

    /// Smoothed Fourier partial sums; slow, for cross-validation only.
    pub fn torus_fourier_oracle(cutoff: usize, smoothing: f64) -> GreenKernel {
        GreenKernel {
            surface: SurfaceModel::FlatTorus,
            method: GreenMethod::TorusFourierOracle,
            accuracy: f64::NAN,
            offset: 0.0,
            eval: Evaluator::Fourier(Arc::new(FourierOracle::new(cutoff, smoothing))),
        }
    }

    pub fn for_surface(surface: SurfaceModel) -> GreenKernel {
        match surface {
            SurfaceModel::FlatTorus => Self::torus(),
            SurfaceModel::UnitSphere => Self::sphere(),
        }
    }

    /// The same kernel plus a constant `c`. G + c is no longer mean-zero.
    pub fn with_offset(mut self, c: f64) -> GreenKernel {
        self.offset = c;
        self
    }

    pub fn surface(&self) -> SurfaceModel {
        self.surface
    }

    pub fn method(&self) -> GreenMethod {
        self.method
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    /// Target absolute accuracy of a single evaluation (NaN for the oracle).
    pub fn accuracy(&self) -> f64 {
        self.accuracy
    }

    pub fn ewald(&self) -> Option<&Ewald> {
        match &self.eval {
            Evaluator::Ewald(e) => Some(e),
            _ => None,
        }
    }

    /// G(x, y). Coincident points are an error; callers that sum over
    /// random configurations map it to +∞.
    pub fn eval(&self, x: &Point, y: &Point) -> Result<f64> {
        self.surface.check_point(x)?;
        self.surface.check_point(y)?;
        self.try_pair(x, y).ok_or(Error::Diagonal)
    }

    /// Unvalidated evaluation; `None` on coincident points.
    #[inline]
    pub fn try_pair(&self, x: &Point, y: &Point) -> Option<f64> {
        let v = match (&self.eval, x, y) {
            (Evaluator::Sphere, Point::Sphere(a), Point::Sphere(b)) => {
                let c2 = chord_sq(a, b);
                if c2 == 0.0 {
                    return None;
                }
                // 1 − cos θ = |x − y|²/2
                (4.0 / c2).ln() - 1.0
            }
            (Evaluator::Ewald(e), Point::Torus(a), Point::Torus(b)) => {
                let r = [a[0] - b[0], a[1] - b[1]];
                if is_torus_origin(r) {
                    return None;
                }
                e.value(r)
            }
            (Evaluator::Fourier(f), Point::Torus(a), Point::Torus(b)) => {
                let r = [a[0] - b[0], a[1] - b[1]];
                if is_torus_origin(r) {
                    return None;
                }
                f.value(r)
            }
            _ => panic!(
                "kernel for the {} applied to {x:?}, {y:?}",
                self.surface.name()
            ),
        };
        Some(v + self.offset)
    }

    /// Torus kernel as a function of the difference vector.
    pub fn eval_difference(&self, r: [f64; 2]) -> Result<f64> {
        if is_torus_origin(r) {
            return Err(Error::Diagonal);
        }
        match &self.eval {
            Evaluator::Ewald(e) => Ok(e.value(r) + self.offset),
            Evaluator::Fourier(f) => Ok(f.value(r) + self.offset),
            Evaluator::Sphere => Err(Error::Unsupported(
                "difference evaluation on the sphere".into(),
            )),
        }
    }

    /// lim_{y→x} G(x, y) + (vol/2π) log d(x, y), the continuous part H on
    /// the diagonal.
    pub fn regular_part_at_diagonal(&self) -> f64 {
        let h = match &self.eval {
            Evaluator::Sphere => 4f64.ln() - 1.0,
            Evaluator::Ewald(e) => e.regular_part_at_origin(),
            Evaluator::Fourier(_) => {
                Ewald::new(DEFAULT_EWALD_ALPHA, DEFAULT_ACCURACY).regular_part_at_origin()
            }
        };
        h + self.offset
    }
}

#[inline]
fn is_torus_origin(r: [f64; 2]) -> bool {
    crate::surfaces::wrap_delta(r[0]) == 0.0 && crate::surfaces::wrap_delta(r[1]) == 0.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sigma2Method {
    /// Σ_ℓ (2ℓ+1)/(ℓ(ℓ+1))², sphere only.
    SpectralSum,
    /// Σ_{m≠0} (4π²|m|²)^{-2}, torus only.
    LatticeSum,
    MonteCarlo {
        pairs: usize,
        seed: u64,
    },
    /// Product-grid double sum with the diagonal removed.
    Quadrature {
        resolution: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sigma2Report {
    pub value: f64,
    pub method: Sigma2Method,
    /// Certified half-width for the sums, one standard error for Monte
    /// Carlo, an estimate for quadrature.
    pub error: f64,
}

/// σ² = ∫∫ G(x,y)² dx dy.
pub fn sigma2(kernel: &GreenKernel, method: Sigma2Method) -> Result<Sigma2Report> {
    let surface = kernel.surface();
    let (value, error) = match method {
        Sigma2Method::SpectralSum => {
            if surface != SurfaceModel::UnitSphere {
                return Err(Error::Unsupported(
                    "the Legendre spectral sum is for the sphere".into(),
                ));
            }
            sphere_spectral_sum(1e-10)
        }
        Sigma2Method::LatticeSum => {
            if surface != SurfaceModel::FlatTorus {
                return Err(Error::Unsupported(
                    "the lattice sum is for the torus".into(),
                ));
            }
            torus_lattice_sum(1e-9)
        }
        Sigma2Method::MonteCarlo { pairs, seed } => {
            if pairs < 2 {
                return Err(Error::Input(
                    "Monte Carlo σ² needs at least two pairs".into(),
                ));
            }
            let mut stream = RandomStream::from_parts(seed, "sigma2/monte_carlo", 0);
            let mut s1 = NeumaierSum::default();
            let mut s2 = NeumaierSum::default();
            let mut used = 0usize;
            for _ in 0..pairs {
                let p = surface.sample_uniform(&mut stream, 2);
                if let Some(g) = kernel.try_pair(&p[0], &p[1]) {
                    let g2 = g * g;
                    s1.add(g2);
                    s2.add(g2 * g2);
                    used += 1;
                }
            }
            let n = used as f64;
            let mean = s1.sum() / n;
            let var = (s2.sum() / n - mean * mean) * n / (n - 1.0);
            (mean, (var.max(0.0) / n).sqrt())
        }
        Sigma2Method::Quadrature { resolution } => {
            if resolution < 4 {
                return Err(Error::Input("quadrature σ² needs resolution ≥ 4".into()));
            }
            let coarse_res = match surface {
                SurfaceModel::FlatTorus => resolution / 2,
                SurfaceModel::UnitSphere => resolution / 4,
            };
            let fine = quadrature_sigma2(kernel, resolution)?;
            let coarse = quadrature_sigma2(kernel, coarse_res)?;
            (fine.0, fine.1 + (fine.0 - coarse.0).abs())
        }
    };
    Ok(Sigma2Report {
        value,
        method,
        error,
    })
}

/// Certified σ² of a surface (spectral or lattice sum).
pub fn certified_sigma2(surface: SurfaceModel) -> Sigma2Report {
    let (method, (value, error)) = match surface {
        SurfaceModel::FlatTorus => (Sigma2Method::LatticeSum, torus_lattice_sum(1e-9)),
        SurfaceModel::UnitSphere => (Sigma2Method::SpectralSum, sphere_spectral_sum(1e-10)),
    };
    Sigma2Report {
        value,
        method,
        error,
    }
}

/// Partial sum to L plus the midpoint of the integral-comparison bracket
/// for the tail; terms are decreasing so Σ_{ℓ>L} f ∈ [∫_{L+1}^∞ f, ∫_L^∞ f].
fn sphere_spectral_sum(target: f64) -> (f64, f64) {
    // f(ℓ) = (2ℓ+1)/(ℓ²(ℓ+1)²) = 1/ℓ² − 1/(ℓ+1)², so ∫_a^∞ f = 1/(a(a+1))
    let tail = |a: f64| 1.0 / (a * (a + 1.0));
    let mut l = 16usize;
    while tail(l as f64) - tail(l as f64 + 1.0) > 2.0 * target {
        l *= 2;
    }
    let mut s = NeumaierSum::default();
    for k in (1..=l).rev() {
        let k = k as f64;
        s.add((2.0 * k + 1.0) / (k * k * (k + 1.0) * (k + 1.0)));
    }
    let lo = tail(l as f64 + 1.0);
    let hi = tail(l as f64);
    (s.sum() + 0.5 * (lo + hi), 0.5 * (hi - lo))
}

/// Σ_{m≠0} 1/(16π⁴|m|⁴) over the disc |m| ≤ R plus a bracket for the rest.
///
/// With N(r) the number of lattice points in the closed disc of radius r,
/// π(r − 1/√2)² ≤ N(r) ≤ π(r + 1/√2)², and Stieltjes integration of
/// f(r) = r⁻⁴ against dN gives Σ_{|m|>R} f ∈ π/R² ± (14/(3√2))·π/R³.
fn torus_lattice_sum(target: f64) -> (f64, f64) {
    let scale = 1.0 / (16.0 * PI.powi(4));
    let half_width = |r: f64| 14.0 / (3.0 * 2f64.sqrt()) * PI / (r * r * r);
    let mut radius = 1000.0f64;
    while half_width(radius) * scale > target {
        radius *= 1.25;
    }
    let r = radius.floor() as i64;
    let r2 = r * r;
    let mut s = NeumaierSum::default();
    // one quadrant (a ≥ 1, b ≥ 0) covers Z²∖0 under the four rotations
    for a in (1..=r).rev() {
        let mut row = NeumaierSum::default();
        for b in (0..=r).rev() {
            let m2 = a * a + b * b;
            if m2 <= r2 {
                let m2 = m2 as f64;
                row.add(1.0 / (m2 * m2));
            }
        }
        s.merge(&row);
    }
    let rf = r as f64;
    let value = (4.0 * s.sum() + PI / (rf * rf)) * scale;
    (value, half_width(rf) * scale)
}

/// Diagonal-excluded grid sum of G² plus an estimate of the excluded cell's
/// mass ∫_{cell} G², computed from the local expansion
/// G ≈ −(vol/2π) log ρ + H₀ over the disc of equal area. The polar factor
/// ρ (1+|log ρ|)² is integrable, so this is finite and O(h² log² h).
fn quadrature_sigma2(kernel: &GreenKernel, resolution: usize) -> Result<(f64, f64)> {
    let surface = kernel.surface();
    let (sum, cell_mass) = match surface {
        SurfaceModel::FlatTorus => {
            let h = 1.0 / resolution as f64;
            let mut s = NeumaierSum::default();
            for a in 0..resolution {
                for b in 0..resolution {
                    if a == 0 && b == 0 {
                        continue;
                    }
                    let g = kernel.eval_difference([a as f64 * h, b as f64 * h])?;
                    s.add(g * g);
                }
            }
            (s.sum() * h * h, h * h)
        }
        SurfaceModel::UnitSphere => {
            let q = surface.quadrature(resolution)?;
            let pts = q.points();
            let w = 1.0 / pts.len() as f64;
            let mut s = NeumaierSum::default();
            for i in 0..pts.len() {
                let mut row = NeumaierSum::default();
                for j in (i + 1)..pts.len() {
                    if let Some(g) = kernel.try_pair(&pts[i], &pts[j]) {
                        row.add(g * g);
                    }
                }
                s.merge(&row);
            }
            (2.0 * s.sum() * w * w, w)
        }
    };
    let excluded = excluded_cell_mass(kernel, cell_mass);
    Ok((sum + excluded, excluded))
}

/// ∫ over the disc of normalized area `mass` around the diagonal of G².
pub(crate) fn excluded_cell_mass(kernel: &GreenKernel, mass: f64) -> f64 {
    let vol = kernel.surface().volume();
    let h0 = kernel.regular_part_at_diagonal();
    let coef = vol / (2.0 * PI);
    let rho_c = (vol * mass / PI).sqrt();
    // dy = 2πρ dρ / vol; substitute ρ = ρ_c u
    integrate_graded(
        |u| {
            let rho = rho_c * u;
            let g = -coef * rho.ln() + h0;
            g * g * 2.0 * PI * rho * rho_c / vol
        },
        12,
    )
}
