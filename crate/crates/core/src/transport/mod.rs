//! Quadratic Wasserstein distances between weighted point sets under the
//! squared geodesic cost.

mod assignment;
mod entropic;
mod flow;
mod neighbors;

use serde::{Deserialize, Serialize};

pub use assignment::{assign, assign_multilevel, AssignmentOptions, AssignmentOutput};
pub use entropic::{sinkhorn, EntropicOptions, EntropicOutput, EpsilonSchedule};
pub use flow::{min_cost_flow, FlowSolution};
pub use neighbors::NeighborIndex;

use crate::error::{input, Error, Result};
use crate::numerics::NeumaierSum;
use crate::surfaces::{Point, SurfaceModel, WeightedPointSet};

/// Row access to a cost matrix, either stored or computed on demand.
pub trait CostRows: Sync {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    fn fill_row(&self, i: usize, out: &mut [f64]);
}

/// Dense row-major cost matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<CostMatrix> {
        if data.len() != rows * cols {
            return input(format!(
                "{} cost entries for a {rows}×{cols} matrix",
                data.len()
            ));
        }
        if let Some(c) = data.iter().find(|c| !(c.is_finite() && **c >= 0.0)) {
            return input(format!("cost entry {c} is not finite and nonnegative"));
        }
        Ok(CostMatrix { rows, cols, data })
    }

    /// Squared geodesic distances d(x_i, y_j)².
    pub fn geodesic(rows: &[Point], cols: &[Point]) -> CostMatrix {
        let mut data = Vec::with_capacity(rows.len() * cols.len());
        for x in rows {
            data.extend(cols.iter().map(|y| x.distance_sq(y)));
        }
        CostMatrix {
            rows: rows.len(),
            cols: cols.len(),
            data,
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn transpose(&self) -> CostMatrix {
        let mut data = vec![0.0; self.data.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                data[j * self.rows + i] = self.get(i, j);
            }
        }
        CostMatrix {
            rows: self.cols,
            cols: self.rows,
            data,
        }
    }

    fn select(&self, rows: &[usize], cols: &[usize]) -> CostMatrix {
        let mut data = Vec::with_capacity(rows.len() * cols.len());
        for &i in rows {
            data.extend(cols.iter().map(|&j| self.get(i, j)));
        }
        CostMatrix {
            rows: rows.len(),
            cols: cols.len(),
            data,
        }
    }
}

impl CostRows for CostMatrix {
    fn rows(&self) -> usize {
        self.rows
    }
    fn cols(&self) -> usize {
        self.cols
    }
    fn fill_row(&self, i: usize, out: &mut [f64]) {
        out.copy_from_slice(&self.data[i * self.cols..(i + 1) * self.cols]);
    }
}

/// Squared geodesic costs computed row by row, never stored.
pub struct GeodesicCost<'a> {
    pub rows: &'a [Point],
    pub cols: &'a [Point],
}

impl CostRows for GeodesicCost<'_> {
    fn rows(&self) -> usize {
        self.rows.len()
    }
    fn cols(&self) -> usize {
        self.cols.len()
    }
    fn fill_row(&self, i: usize, out: &mut [f64]) {
        let x = &self.rows[i];
        for (o, y) in out.iter_mut().zip(self.cols) {
            *o = x.distance_sq(y);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    ExactFlow,
    Entropic,
    /// Auction on equal-mass slots; exact up to the reported gap.
    Assignment,
    PermutationOracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransportResult {
    /// W₂² estimate.
    pub value: f64,
    /// Primal value minus a certified dual lower bound (0 for the oracle,
    /// NaN for the entropic solver, which has no certificate).
    pub duality_gap: f64,
    pub solver: SolverKind,
    /// Augmentations, Sinkhorn sweeps, bids, or permutations visited.
    pub iterations: u64,
    pub epsilon: Option<f64>,
    /// Largest deviation of a plan marginal from its weight (L1 for Sinkhorn).
    pub marginal_violation: f64,
}

/// Total quantized mass: a multiple of both counts when the weights are
/// uniform, so the quantization is exact.
const QUANT_BITS: u32 = 40;

fn quantize(weights: &[f64], total: u64, uniform: bool) -> Vec<u64> {
    let n = weights.len() as u64;
    if uniform && total % n == 0 {
        return vec![total / n; weights.len()];
    }
    // largest remainder
    let scaled: Vec<f64> = weights.iter().map(|w| w * total as f64).collect();
    let mut q: Vec<u64> = scaled.iter().map(|s| s.floor() as u64).collect();
    let assigned: u64 = q.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        (scaled[b] - scaled[b].floor())
            .total_cmp(&(scaled[a] - scaled[a].floor()))
            .then(a.cmp(&b))
    });
    let mut left = total.saturating_sub(assigned);
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        q[i] += 1;
        left -= 1;
    }
    q
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn positive_support(set: &WeightedPointSet, side: &str) -> Vec<usize> {
    let keep: Vec<usize> = (0..set.len()).filter(|&i| set.weights()[i] > 0.0).collect();
    if keep.len() < set.len() {
        log::warn!(
            "dropping {} zero-mass {side} point(s)",
            set.len() - keep.len()
        );
    }
    keep
}

fn check_shapes(
    sources: &WeightedPointSet,
    sinks: &WeightedPointSet,
    cost: &dyn CostRows,
) -> Result<()> {
    if cost.rows() != sources.len() || cost.cols() != sinks.len() {
        return input(format!(
            "cost is {}×{} but there are {} sources and {} sinks",
            cost.rows(),
            cost.cols(),
            sources.len(),
            sinks.len()
        ));
    }
    let ta: f64 = sources.weights().iter().sum();
    let tb: f64 = sinks.weights().iter().sum();
    if (ta - 1.0).abs() > 1e-9 || (tb - 1.0).abs() > 1e-9 {
        return input(format!("marginals have masses {ta} and {tb}, not 1"));
    }
    Ok(())
}

/// Exact optimal transport value with a dual certificate.
pub fn solve_exact(
    sources: &WeightedPointSet,
    sinks: &WeightedPointSet,
    cost: &CostMatrix,
) -> Result<TransportResult> {
    check_shapes(sources, sinks, cost)?;
    let rows = positive_support(sources, "source");
    let cols = positive_support(sinks, "sink");
    let cost = cost.select(&rows, &cols);
    let a: Vec<f64> = rows.iter().map(|&i| sources.weights()[i]).collect();
    let b: Vec<f64> = cols.iter().map(|&j| sinks.weights()[j]).collect();
    let (n, m) = (a.len() as u64, b.len() as u64);
    let lcm = n / gcd(n, m) * m;
    let uniform = sources.is_uniform()
        && sinks.is_uniform()
        && rows.len() == sources.len()
        && cols.len() == sinks.len();
    let total = if uniform && lcm <= 1u64 << QUANT_BITS {
        lcm * ((1u64 << QUANT_BITS) / lcm)
    } else {
        1u64 << QUANT_BITS
    };
    let qa = quantize(&a, total, uniform);
    let qb = quantize(&b, total, uniform);
    let sol = min_cost_flow(&qa, &qb, cost.as_slice())?;

    let t = total as f64;
    let mut primal = NeumaierSum::default();
    let mut row_mass = vec![0.0; a.len()];
    let mut col_mass = vec![0.0; b.len()];
    for &(i, j, f) in &sol.flows {
        let mass = f as f64 / t;
        primal.add(mass * cost.get(i, j));
        row_mass[i] += mass;
        col_mass[j] += mass;
    }
    let primal = primal.sum();
    // u_i = −p_i, then v_j = min_i (c_ij − u_i) makes the pair exactly feasible
    let u: Vec<f64> = sol.source_potential.iter().map(|p| -p).collect();
    let mut dual = NeumaierSum::default();
    for (i, ui) in u.iter().enumerate() {
        dual.add(a[i] * ui);
    }
    for (j, bj) in b.iter().enumerate() {
        let vj = (0..a.len())
            .map(|i| cost.get(i, j) - u[i])
            .fold(f64::INFINITY, f64::min);
        dual.add(bj * vj);
    }
    let violation = row_mass
        .iter()
        .zip(&a)
        .chain(col_mass.iter().zip(&b))
        .map(|(x, w)| (x - w).abs())
        .fold(0.0, f64::max);
    Ok(TransportResult {
        value: primal,
        duality_gap: (primal - dual.sum()).max(0.0),
        solver: SolverKind::ExactFlow,
        iterations: sol.augmentations as u64,
        epsilon: None,
        marginal_violation: violation,
    })
}

/// Entropically regularized transport; reports ⟨P, C⟩ of the final plan.
pub fn solve_entropic(
    sources: &WeightedPointSet,
    sinks: &WeightedPointSet,
    cost: &dyn CostRows,
    opts: &EntropicOptions,
) -> Result<TransportResult> {
    check_shapes(sources, sinks, cost)?;
    if sources
        .weights()
        .iter()
        .chain(sinks.weights())
        .any(|&w| w <= 0.0)
    {
        return input("the entropic solver needs strictly positive weights");
    }
    let out = sinkhorn(sources.weights(), sinks.weights(), cost, opts)?;
    Ok(TransportResult {
        value: out.value,
        duality_gap: f64::NAN,
        solver: SolverKind::Entropic,
        iterations: out.iterations as u64,
        epsilon: Some(out.epsilon),
        marginal_violation: out.violation,
    })
}

/// Largest n accepted by [`solve_permutation`].
pub const PERMUTATION_LIMIT: usize = 9;

/// Brute force over all n! matchings of two equal-weight n-point sets.
pub fn solve_permutation(cost: &CostMatrix) -> Result<TransportResult> {
    let n = cost.rows;
    if n != cost.cols || n == 0 || n > PERMUTATION_LIMIT {
        return input(format!(
            "permutation enumeration needs a square matrix with 1..={PERMUTATION_LIMIT} rows"
        ));
    }
    // Heap's algorithm
    let mut perm: Vec<usize> = (0..n).collect();
    let mut ctr = vec![0usize; n];
    let score = |p: &[usize]| {
        p.iter()
            .enumerate()
            .map(|(i, &j)| cost.get(i, j))
            .sum::<f64>()
    };
    let mut best = score(&perm);
    let mut visited = 1u64;
    let mut i = 0;
    while i < n {
        if ctr[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(ctr[i], i);
            }
            best = best.min(score(&perm));
            visited += 1;
            ctr[i] += 1;
            i = 0;
        } else {
            ctr[i] = 0;
            i += 1;
        }
    }
    Ok(TransportResult {
        value: best / n as f64,
        duality_gap: 0.0,
        solver: SolverKind::PermutationOracle,
        iterations: visited,
        epsilon: None,
        marginal_violation: 0.0,
    })
}

/// Equal-mass assignment of `sources` to `targets` (n must divide M).
pub fn solve_assignment(
    sources: &[Point],
    targets: &[Point],
    opts: &AssignmentOptions,
) -> Result<TransportResult> {
    let out = assign(sources, targets, opts)?;
    Ok(TransportResult {
        value: out.value,
        duality_gap: out.gap.max(0.0),
        solver: SolverKind::Assignment,
        iterations: out.bids,
        epsilon: None,
        marginal_violation: 0.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverChoice {
    Exact,
    Entropic,
    Assignment,
    /// Exact when n·M ≤ the exact limit, else assignment when n divides M,
    /// else entropic.
    Auto,
}

impl SolverChoice {
    pub fn from_name(s: &str) -> Result<SolverChoice> {
        match s {
            "exact" => Ok(SolverChoice::Exact),
            "entropic" => Ok(SolverChoice::Entropic),
            "assignment" => Ok(SolverChoice::Assignment),
            "auto" => Ok(SolverChoice::Auto),
            other => input(format!(
                "unknown solver `{other}` (expected exact, entropic, assignment or auto)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub choice: SolverChoice,
    /// Largest n·M for which `auto` picks the exact flow solver.
    pub exact_limit: usize,
    pub entropic: EntropicOptions,
    pub assignment: AssignmentOptions,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            choice: SolverChoice::Auto,
            exact_limit: 1_000_000,
            entropic: EntropicOptions::default(),
            assignment: AssignmentOptions::default(),
        }
    }
}

/// Default quadrature size: torus K ≥ max(64, ⌈8√n⌉) per side, rounded up
/// so that n divides K²; sphere N = max(4096, 64n) rounded up to a multiple
/// of n.
pub fn default_resolution(surface: SurfaceModel, n: usize) -> usize {
    let n = n.max(1);
    match surface {
        SurfaceModel::FlatTorus => {
            let base = 64usize.max((8.0 * (n as f64).sqrt()).ceil() as usize);
            (base..)
                .find(|k| (k * k) % n == 0)
                .expect("K = n always works")
        }
        SurfaceModel::UnitSphere => {
            let base = 4096usize.max(64 * n);
            base.div_ceil(n) * n
        }
    }
}

/// Fibonacci-lattice constant c in b(N) = c/√N.
///
/// W₂(Fib_N, Fib_16N)·√N ≈ 1.45 for N from 64 to 4096. If b(16N) = b(N)/4
/// also bounds the finer lattice, the triangle inequality needs c ≥ 1.45/0.75
/// ≈ 1.94; this keeps about 30% on top.
pub const FIBONACCI_BIAS_CONSTANT: f64 = 2.5;

/// Bound b on W₂(quadrature measure, dx): half a cell diagonal on the torus
/// grid, c·N^{-1/2} on the Fibonacci lattice.
pub fn bias_bound(surface: SurfaceModel, resolution: usize) -> f64 {
    let r = resolution as f64;
    match surface {
        SurfaceModel::FlatTorus => std::f64::consts::SQRT_2 / (2.0 * r),
        SurfaceModel::UnitSphere => FIBONACCI_BIAS_CONSTANT / r.sqrt(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniformW2 {
    pub result: TransportResult,
    pub resolution: usize,
    pub quadrature_points: usize,
    /// b: |W₂(μ_n, proxy) − W₂(μ_n, dx)| ≤ b.
    pub bias_bound: f64,
    /// Interval for W₂²(μ_n, dx) implied by the bias bound.
    pub bracket: [f64; 2],
}

/// Coarser quadrature resolutions (finest first) whose point counts are
/// still multiples of n, used to seed the assignment prices.
fn coarse_resolutions(surface: SurfaceModel, n: usize, resolution: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut r = resolution;
    loop {
        // roughly a quarter of the points, with n still dividing the count
        let next = match surface {
            SurfaceModel::FlatTorus => (1..=r / 2).rev().find(|k| (k * k) % n == 0),
            SurfaceModel::UnitSphere => Some(r / n / 4 * n),
        };
        match next {
            Some(next) if surface.quadrature_len(next) >= 4 * n => {
                out.push(next);
                r = next;
            }
            _ => break,
        }
    }
    out
}

/// W₂²(μ_n, dx) for the empirical measure of `pts`, through the quadrature
/// proxy of dx at `resolution` (default when `None`).
pub fn w2_to_uniform(
    surface: SurfaceModel,
    pts: &[Point],
    resolution: Option<usize>,
    opts: &SolverOptions,
) -> Result<UniformW2> {
    if pts.is_empty() {
        return input("W₂ to the uniform measure needs at least one point");
    }
    for p in pts {
        surface.check_point(p)?;
    }
    let resolution = resolution.unwrap_or_else(|| default_resolution(surface, pts.len()));
    let quad = surface.quadrature(resolution)?;
    let n = pts.len();
    let m = quad.len();
    let divisible = m % n == 0;
    let choice = match opts.choice {
        SolverChoice::Auto if n.saturating_mul(m) <= opts.exact_limit => SolverChoice::Exact,
        SolverChoice::Auto if divisible => SolverChoice::Assignment,
        SolverChoice::Auto => SolverChoice::Entropic,
        c => c,
    };
    let sources = WeightedPointSet::uniform(pts.to_vec());
    let result = match choice {
        SolverChoice::Exact => {
            if n.saturating_mul(m) > 50 * opts.exact_limit {
                return Err(Error::Unsupported(format!(
                    "exact flow on a {n}×{m} cost matrix is too large"
                )));
            }
            solve_exact(&sources, &quad, &CostMatrix::geodesic(pts, quad.points()))?
        }
        SolverChoice::Assignment => {
            let coarse = coarse_resolutions(surface, n, resolution)
                .into_iter()
                .map(|r| surface.quadrature(r))
                .collect::<Result<Vec<_>>>()?;
            let mut levels: Vec<&[Point]> = coarse.iter().rev().map(|q| q.points()).collect();
            levels.push(quad.points());
            let out = assign_multilevel(pts, &levels, &opts.assignment)?;
            TransportResult {
                value: out.value,
                duality_gap: out.gap.max(0.0),
                solver: SolverKind::Assignment,
                iterations: out.bids,
                epsilon: None,
                marginal_violation: 0.0,
            }
        }
        SolverChoice::Entropic => {
            let cost = GeodesicCost {
                rows: pts,
                cols: quad.points(),
            };
            solve_entropic(&sources, &quad, &cost, &opts.entropic)?
        }
        SolverChoice::Auto => unreachable!(),
    };
    let b = bias_bound(surface, resolution);
    let w = result.value.max(0.0).sqrt();
    Ok(UniformW2 {
        result,
        resolution,
        quadrature_points: m,
        bias_bound: b,
        bracket: [(w - b).max(0.0).powi(2), (w + b).powi(2)],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn torus_set(coords: &[(f64, f64)]) -> Vec<Point> {
        coords.iter().map(|&(u, v)| Point::torus(u, v)).collect()
    }

    #[test]
    fn identical_sets_cost_nothing() {
        let pts = torus_set(&[(0.1, 0.2), (0.5, 0.5), (0.9, 0.3)]);
        let set = WeightedPointSet::uniform(pts.clone());
        let r = solve_exact(&set, &set, &CostMatrix::geodesic(&pts, &pts)).unwrap();
        assert_eq!(r.value, 0.0);
        assert!(r.duality_gap <= 1e-15);
    }

    #[test]
    fn forced_plan_two_to_one() {
        let src = torus_set(&[(0.1, 0.1), (0.3, 0.6)]);
        let dst = torus_set(&[(0.7, 0.2)]);
        let a = WeightedPointSet::uniform(src.clone());
        let b = WeightedPointSet::uniform(dst.clone());
        let r = solve_exact(&a, &b, &CostMatrix::geodesic(&src, &dst)).unwrap();
        let expect = 0.5 * src[0].distance_sq(&dst[0]) + 0.5 * src[1].distance_sq(&dst[0]);
        assert!((r.value - expect).abs() < 1e-15);
    }

    #[test]
    fn zero_mass_points_are_dropped() {
        let src = torus_set(&[(0.1, 0.1), (0.3, 0.6)]);
        let a = WeightedPointSet::new(src.clone(), vec![1.0, 0.0]).unwrap();
        let b = WeightedPointSet::uniform(src[..1].to_vec());
        let r = solve_exact(&a, &b, &CostMatrix::geodesic(&src, &src[..1])).unwrap();
        assert_eq!(r.value, 0.0);
    }

    #[test]
    fn shape_mismatch_is_input_error() {
        let src = torus_set(&[(0.1, 0.1), (0.3, 0.6)]);
        let a = WeightedPointSet::uniform(src.clone());
        let cost = CostMatrix::geodesic(&src[..1], &src);
        assert!(matches!(solve_exact(&a, &a, &cost), Err(Error::Input(_))));
        assert!(CostMatrix::new(1, 2, vec![0.0, -1.0]).is_err());
        assert!(CostMatrix::new(1, 2, vec![0.0]).is_err());
    }

    #[test]
    fn largest_remainder_preserves_total() {
        let q = quantize(&[0.3, 0.3, 0.4], 10, false);
        assert_eq!(q.iter().sum::<u64>(), 10);
        let q = quantize(&[1.0 / 3.0; 3], 1 << 40, false);
        assert_eq!(q.iter().sum::<u64>(), 1 << 40);
    }

    #[test]
    fn default_resolutions() {
        let torus: Vec<usize> = [128, 256, 512, 1024, 2048, 4096]
            .iter()
            .map(|&n| default_resolution(SurfaceModel::FlatTorus, n))
            .collect();
        assert_eq!(torus, vec![96, 128, 192, 256, 384, 512]);
        assert_eq!(default_resolution(SurfaceModel::FlatTorus, 1), 64);
        assert_eq!(default_resolution(SurfaceModel::UnitSphere, 10), 4100);
        assert_eq!(default_resolution(SurfaceModel::UnitSphere, 100), 6400);
    }

    #[test]
    fn permutation_oracle_small() {
        let cost = CostMatrix::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(solve_permutation(&cost).unwrap().value, 0.0);
        assert!(solve_permutation(&CostMatrix::new(1, 2, vec![0.0, 0.0]).unwrap()).is_err());
    }

    #[test]
    fn solver_names() {
        assert_eq!(SolverChoice::from_name("auto").unwrap(), SolverChoice::Auto);
        assert!(SolverChoice::from_name("simplex").is_err());
    }
}
