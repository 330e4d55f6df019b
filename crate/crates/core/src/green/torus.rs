//! Mean-zero Green function of the flat unit torus,
//!
//! ```text
//! G(r) = Σ_{m ∈ Z² \ 0} e^{2πi m·r} / (4π²|m|²)
//! ```
//!
//! Ewald splitting with parameter α turns this into
//!
//! ```text
//! G(r) = (1/4π) Σ_n E1(α²|r+n|²) − 1/(4α²)
//!        + Σ_{m≠0} e^{-π²|m|²/α²} cos(2π m·r) / (4π²|m|²)
//! ```
//!
//! where the constant −1/(4α²) is the m = 0 limit of the screened part,
//! removed because the zero mode is excluded from G.

use std::f64::consts::PI;

use crate::numerics::exp_integral_e1;
use crate::surfaces::wrap_delta;

/// Half-width of the box of image candidates considered.
const SEARCH_BOX: i64 = 40;

#[derive(Debug, Clone)]
pub struct Ewald {
    alpha: f64,
    /// Image offsets n, valid for r reduced to [0, ½]².
    images: Vec<[f64; 2]>,
    /// Reciprocal coefficients, (modes+1)² row-major over (|m1|, |m2|).
    recip: Vec<f64>,
    modes: usize,
    truncation: f64,
    table: Option<PatchTable>,
}

/// Lower bound of |r + n| over r ∈ [0, ½]² along one axis.
fn axis_lower_bound(n: i64) -> f64 {
    match n {
        0 => 0.0,
        n if n > 0 => n as f64,
        n => (-n) as f64 - 0.5,
    }
}

impl Ewald {
    /// Build the image list and reciprocal table so that the certified
    /// truncation error is at most `accuracy`.
    pub fn new(alpha: f64, accuracy: f64) -> Ewald {
        assert!(alpha > 0.0 && accuracy > 0.0);
        let a2 = alpha * alpha;

        // real space: every image gets the bound E1(α² lb²)/4π; keep the
        // largest ones until what is left is below accuracy/2.
        let mut cands: Vec<([f64; 2], f64)> = Vec::new();
        for n1 in -SEARCH_BOX..=SEARCH_BOX {
            for n2 in -SEARCH_BOX..=SEARCH_BOX {
                let l1 = axis_lower_bound(n1);
                let l2 = axis_lower_bound(n2);
                let lb2 = l1 * l1 + l2 * l2;
                let bound = if lb2 == 0.0 {
                    f64::INFINITY
                } else {
                    exp_integral_e1(a2 * lb2) / (4.0 * PI)
                };
                cands.push(([n1 as f64, n2 as f64], bound));
            }
        }
        cands.sort_by(|a, b| b.1.total_cmp(&a.1));
        let mut tail: f64 = cands.iter().filter(|c| c.1.is_finite()).map(|c| c.1).sum();
        let mut images = Vec::new();
        for (n, bound) in &cands {
            if tail <= 0.5 * accuracy && bound.is_finite() {
                break;
            }
            images.push(*n);
            if bound.is_finite() {
                tail -= bound;
            }
        }
        // images outside the search box: at distance ≥ SEARCH_BOX, utterly negligible
        let real_tail = tail.max(0.0);

        // reciprocal space: smallest square table whose complement is below accuracy/2
        let coef = |a: i64, b: i64| -> f64 {
            let m2 = (a * a + b * b) as f64;
            (-PI * PI * m2 / a2).exp() / (4.0 * PI * PI * m2)
        };
        let mult = |a: i64| if a == 0 { 1.0 } else { 2.0 };
        let limit = (12.0 * alpha).ceil() as i64 + 8;
        let mut modes = 0usize;
        let recip_tail = loop {
            let m = modes as i64;
            let mut outside = 0.0;
            for a in 0..=limit {
                for b in 0..=limit {
                    if a.max(b) > m {
                        outside += mult(a) * mult(b) * coef(a, b);
                    }
                }
            }
            if outside <= 0.5 * accuracy || m >= limit {
                break outside;
            }
            modes += 1;
        };
        let size = modes + 1;
        let mut recip = vec![0.0; size * size];
        for a in 0..size {
            for b in 0..size {
                if a + b > 0 {
                    recip[a * size + b] =
                        mult(a as i64) * mult(b as i64) * coef(a as i64, b as i64);
                }
            }
        }
        Ewald {
            alpha,
            images,
            recip,
            modes,
            truncation: real_tail + recip_tail,
            table: None,
        }
    }

    /// As [`Ewald::new`], plus a piecewise Chebyshev table of the regular
    /// part that [`Ewald::value`] then uses. The largest interpolation error
    /// seen on off-node probes is added to the truncation bound.
    pub fn tabulated(alpha: f64, accuracy: f64) -> Ewald {
        let mut e = Ewald::new(alpha, accuracy);
        let table = PatchTable::build(&e, TABLE_PATCHES, TABLE_DEGREE);
        e.truncation += 2.0 * table.probe_error;
        e.table = Some(table);
        e
    }

    pub fn is_tabulated(&self) -> bool {
        self.table.is_some()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Certified bound on the truncation error of [`Ewald::value`].
    pub fn truncation_bound(&self) -> f64 {
        self.truncation
    }

    pub fn image_count(&self) -> usize {
        self.images.len()
    }

    pub fn reciprocal_modes(&self) -> usize {
        self.modes
    }

    /// G at the difference vector `r` (any representative). Diverges at r ≡ 0.
    #[inline]
    pub fn value(&self, r: [f64; 2]) -> f64 {
        let x = wrap_delta(r[0]).abs();
        let y = wrap_delta(r[1]).abs();
        match &self.table {
            Some(t) => t.regular(x, y) - 0.25 * (x * x + y * y).ln() / PI,
            None => self.direct(x, y),
        }
    }

    /// The split sums without the table.
    pub fn value_direct(&self, r: [f64; 2]) -> f64 {
        self.direct(wrap_delta(r[0]).abs(), wrap_delta(r[1]).abs())
    }

    fn direct(&self, x: f64, y: f64) -> f64 {
        let a2 = self.alpha * self.alpha;
        let mut real = 0.0;
        for n in &self.images {
            let dx = x + n[0];
            let dy = y + n[1];
            real += exp_integral_e1(a2 * (dx * dx + dy * dy));
        }
        real / (4.0 * PI) - 0.25 / a2 + self.reciprocal(x, y)
    }

    fn reciprocal(&self, x: f64, y: f64) -> f64 {
        let size = self.modes + 1;
        if size > 64 {
            return self.reciprocal_slow(x, y);
        }
        let mut cx = [0.0f64; 64];
        let mut cy = [0.0f64; 64];
        chebyshev_cosines(x, &mut cx[..size]);
        chebyshev_cosines(y, &mut cy[..size]);
        let mut total = 0.0;
        for a in 0..size {
            let row = &self.recip[a * size..(a + 1) * size];
            let inner: f64 = row.iter().zip(&cy[..size]).map(|(c, v)| c * v).sum();
            total += cx[a] * inner;
        }
        total
    }

    fn reciprocal_slow(&self, x: f64, y: f64) -> f64 {
        let size = self.modes + 1;
        let mut total = 0.0;
        for a in 0..size {
            let cx = (2.0 * PI * a as f64 * x).cos();
            for b in 0..size {
                total += self.recip[a * size + b] * cx * (2.0 * PI * b as f64 * y).cos();
            }
        }
        total
    }

    /// lim_{r→0} G(r) + (1/2π) log|r|.
    pub fn regular_part_at_origin(&self) -> f64 {
        let a2 = self.alpha * self.alpha;
        let mut real = -crate::numerics::EULER_GAMMA - a2.ln();
        for n in &self.images {
            let d2 = n[0] * n[0] + n[1] * n[1];
            if d2 > 0.0 {
                real += exp_integral_e1(a2 * d2);
            }
        }
        real / (4.0 * PI) - 0.25 / a2 + self.reciprocal(0.0, 0.0)
    }
}

/// out[k] = cos(2πk t) by the recurrence cos((k+1)θ) = 2cosθ cos kθ − cos((k−1)θ).
fn chebyshev_cosines(t: f64, out: &mut [f64]) {
    let c = (2.0 * PI * t).cos();
    for k in 0..out.len() {
        out[k] = match k {
            0 => 1.0,
            1 => c,
            _ => 2.0 * c * out[k - 1] - out[k - 2],
        };
    }
}

const TABLE_PATCHES: usize = 32;
const TABLE_DEGREE: usize = 7;

/// H(r) = G(r) + (1/2π) log|r| on [0, ½]², which is analytic there (the
/// nearest other singularity is the image at distance ≥ ½), interpolated
/// on a P×P grid of square patches at Chebyshev nodes.
#[derive(Debug, Clone)]
struct PatchTable {
    patches: usize,
    degree: usize,
    /// per patch, (degree+1)² coefficients, row-major in (x, y)
    coef: Vec<f64>,
    probe_error: f64,
}

impl PatchTable {
    fn build(e: &Ewald, patches: usize, degree: usize) -> PatchTable {
        let d1 = degree + 1;
        let h = 0.5 / patches as f64;
        let nodes: Vec<f64> = (0..d1)
            .map(|k| (PI * (k as f64 + 0.5) / d1 as f64).cos())
            .collect();
        // basis[k * d1 + a] = T_a(node_k)
        let mut basis = vec![0.0; d1 * d1];
        for (k, &t) in nodes.iter().enumerate() {
            chebyshev_polys(t, &mut basis[k * d1..(k + 1) * d1]);
        }
        let regular = |x: f64, y: f64| e.direct(x, y) + 0.25 * (x * x + y * y).ln() / PI;
        let mut coef = vec![0.0; patches * patches * d1 * d1];
        let mut f = vec![0.0; d1 * d1];
        let mut tmp = vec![0.0; d1 * d1];
        for px in 0..patches {
            for py in 0..patches {
                let (x0, y0) = (px as f64 * h, py as f64 * h);
                for i in 0..d1 {
                    for j in 0..d1 {
                        f[i * d1 + j] = regular(
                            x0 + 0.5 * h * (nodes[i] + 1.0),
                            y0 + 0.5 * h * (nodes[j] + 1.0),
                        );
                    }
                }
                // transform along y, then along x
                for i in 0..d1 {
                    for b in 0..d1 {
                        let s: f64 = (0..d1).map(|j| f[i * d1 + j] * basis[j * d1 + b]).sum();
                        tmp[i * d1 + b] = s * if b == 0 { 1.0 } else { 2.0 } / d1 as f64;
                    }
                }
                let out = &mut coef[(px * patches + py) * d1 * d1..][..d1 * d1];
                for a in 0..d1 {
                    for b in 0..d1 {
                        let s: f64 = (0..d1).map(|i| tmp[i * d1 + b] * basis[i * d1 + a]).sum();
                        out[a * d1 + b] = s * if a == 0 { 1.0 } else { 2.0 } / d1 as f64;
                    }
                }
            }
        }
        let mut table = PatchTable {
            patches,
            degree,
            coef,
            probe_error: 0.0,
        };
        // probe between the nodes, including patch edges
        let probes = 3 * patches;
        let mut worst: f64 = 0.0;
        for i in 0..=probes {
            for j in 0..=probes {
                let x = 0.5 * i as f64 / probes as f64 + if i == 0 { 1e-3 } else { 0.0 };
                let y = 0.5 * j as f64 / probes as f64;
                worst = worst.max((table.regular(x, y) - regular(x, y)).abs());
            }
        }
        table.probe_error = worst;
        table
    }

    #[inline]
    fn regular(&self, x: f64, y: f64) -> f64 {
        const MAX: usize = 16;
        let d1 = self.degree + 1;
        debug_assert!(d1 <= MAX);
        let scale = 2.0 * self.patches as f64;
        let last = self.patches - 1;
        let (fx, fy) = (x * scale, y * scale);
        let px = (fx as usize).min(last);
        let py = (fy as usize).min(last);
        let mut tx = [0.0; MAX];
        let mut ty = [0.0; MAX];
        chebyshev_polys(2.0 * (fx - px as f64) - 1.0, &mut tx[..d1]);
        chebyshev_polys(2.0 * (fy - py as f64) - 1.0, &mut ty[..d1]);
        let c = &self.coef[(px * self.patches + py) * d1 * d1..][..d1 * d1];
        let mut total = 0.0;
        for a in 0..d1 {
            let row = &c[a * d1..(a + 1) * d1];
            let mut inner = 0.0;
            for b in 0..d1 {
                inner += row[b] * ty[b];
            }
            total += tx[a] * inner;
        }
        total
    }
}

/// out[k] = T_k(t).
fn chebyshev_polys(t: f64, out: &mut [f64]) {
    for k in 0..out.len() {
        out[k] = match k {
            0 => 1.0,
            1 => t,
            _ => 2.0 * t * out[k - 1] - out[k - 2],
        };
    }
}

/// Cross-validation oracle: the Fourier series itself, truncated to
/// |m|_∞ ≤ L with heat-kernel smoothing factors e^{-4π²|m|² t}.
///
/// Smoothing by the heat flow for time t shifts G by exactly
/// `t − ∫_0^t p_s(r) ds` (p the heat kernel), because −ΔG = δ − 1.
/// Away from the origin the integral is below e^{-|r|²/4t}, so adding back
/// −t leaves an error that is super-exponentially small in L|r|.
#[derive(Debug, Clone)]
pub struct FourierOracle {
    cutoff: usize,
    heat_time: f64,
    coef: Vec<f64>,
}

impl FourierOracle {
    /// `smoothing` is the exponent 4π²L²t reached at the cutoff.
    pub fn new(cutoff: usize, smoothing: f64) -> FourierOracle {
        assert!(cutoff >= 1 && smoothing > 0.0);
        let l = cutoff as f64;
        let heat_time = smoothing / (4.0 * PI * PI * l * l);
        let size = cutoff + 1;
        let mut coef = vec![0.0; size * size];
        for a in 0..size {
            for b in 0..size {
                if a + b == 0 {
                    continue;
                }
                let m2 = (a * a + b * b) as f64;
                let mult = if a == 0 { 1.0 } else { 2.0 } * if b == 0 { 1.0 } else { 2.0 };
                coef[a * size + b] =
                    mult * (-4.0 * PI * PI * m2 * heat_time).exp() / (4.0 * PI * PI * m2);
            }
        }
        FourierOracle {
            cutoff,
            heat_time,
            coef,
        }
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn value(&self, r: [f64; 2]) -> f64 {
        let size = self.cutoff + 1;
        let x = wrap_delta(r[0]);
        let y = wrap_delta(r[1]);
        let cy: Vec<f64> = (0..size).map(|b| (2.0 * PI * b as f64 * y).cos()).collect();
        let mut total = crate::numerics::NeumaierSum::default();
        for a in 0..size {
            let cx = (2.0 * PI * a as f64 * x).cos();
            let row = &self.coef[a * size..(a + 1) * size];
            let inner: f64 = row.iter().zip(&cy).map(|(c, v)| c * v).sum();
            total.add(cx * inner);
        }
        total.sum() - self.heat_time
    }
}
