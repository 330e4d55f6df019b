//! Monte Carlo scans of E[W₂²(μ_n, dx)], the log-slope fit and the implied
//! constant L_n.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy::green_energy;
use crate::error::{input, Error, Result};
use crate::green::{certified_sigma2, GreenKernel, GreenMethod};
use crate::rng::RandomStream;
use crate::stats::{bootstrap_interval, least_squares, Estimate, LinearFit, Z95};
use crate::surfaces::{Point, SurfaceModel};
use crate::transport::{
    default_resolution, solve_exact, w2_to_uniform, CostMatrix, SolverChoice, SolverKind,
    SolverOptions,
};

/// Torus grid used when nothing else is asked for.
pub const DEFAULT_N_GRID: [usize; 6] = [128, 256, 512, 1024, 2048, 4096];
pub const DEFAULT_SCAN_REPLICAS: usize = 200;
pub const DEFAULT_BOOTSTRAP_RESAMPLES: usize = 1000;

/// A scan aborts once more than this fraction of its replicas failed.
pub const MAX_FAILED_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanConfig {
    pub surface: SurfaceModel,
    pub n_grid: Vec<usize>,
    pub replicas: usize,
    pub seed: u64,
    pub solver: SolverOptions,
    /// One quadrature resolution for every n; per-n defaults when absent.
    pub resolution: Option<usize>,
    /// Also compute S_n on every replica's points.
    pub with_energy: bool,
}

impl ScanConfig {
    pub fn new(
        surface: SurfaceModel,
        n_grid: Vec<usize>,
        replicas: usize,
        seed: u64,
    ) -> ScanConfig {
        ScanConfig {
            surface,
            n_grid,
            replicas,
            seed,
            solver: SolverOptions::default(),
            resolution: None,
            with_energy: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_grid.is_empty() {
            return input("the n-grid is empty");
        }
        if self.n_grid[0] < 2 || self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return input("the n-grid must be strictly increasing with every n ≥ 2");
        }
        if self.replicas < 2 {
            return input("a scan needs at least two replicas per n");
        }
        if self.resolution == Some(0) {
            return input("quadrature resolution must be at least 1");
        }
        Ok(())
    }

    pub fn resolution_for(&self, n: usize) -> usize {
        self.resolution
            .unwrap_or_else(|| default_resolution(self.surface, n))
    }
}

/// Label of the stream that draws the points of every replica at size n.
pub fn scan_stream_label(surface: SurfaceModel, n: usize) -> String {
    format!("w2/{}/n={n}", surface.name())
}

/// The point set of replica `r` at size n.
pub fn replica_points(surface: SurfaceModel, seed: u64, n: usize, r: u64) -> Vec<Point> {
    let mut stream = RandomStream::from_parts(seed, &scan_stream_label(surface, n), r);
    surface.sample_uniform(&mut stream, n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicaRecord {
    pub n: usize,
    pub replica: u64,
    /// W₂² against the quadrature proxy.
    pub w2: f64,
    /// Bracket for W₂² against dx.
    pub bracket: [f64; 2],
    /// S_n on the same points (+∞ if two coincide).
    pub energy: Option<f64>,
    pub solver: SolverKind,
    pub duality_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub n: usize,
    /// Replicas that entered the aggregates.
    pub replicas: usize,
    pub failed: usize,
    pub resolution: usize,
    pub bias_bound: f64,
    pub solver: SolverKind,
    pub mean_w2: Estimate,
    /// 95% interval for E[W₂²(μ_n, dx)], widened by the bias brackets.
    pub ci: [f64; 2],
    /// n·Ê[W₂²].
    pub scaled_w2: Estimate,
    pub mean_abs_energy: Option<Estimate>,
    pub energy_coincidences: usize,
    /// L_n = n·Ê[W₂²] / (2(1 + √2 σ)).
    pub implied_constant: Option<Estimate>,
    pub implied_ci: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanTable {
    pub surface: SurfaceModel,
    pub rows: Vec<ScanRow>,
    pub records: Vec<Vec<ReplicaRecord>>,
}

/// Denominator 2(1 + √2 σ) of the implied constant.
pub fn implied_constant_scale(surface: SurfaceModel) -> f64 {
    2.0 * (1.0 + 2f64.sqrt() * certified_sigma2(surface).value.sqrt())
}

fn run_replica(cfg: &ScanConfig, kernel: &GreenKernel, n: usize, r: u64) -> Result<ReplicaRecord> {
    let pts = replica_points(cfg.surface, cfg.seed, n, r);
    let w = w2_to_uniform(cfg.surface, &pts, Some(cfg.resolution_for(n)), &cfg.solver)?;
    let energy = cfg.with_energy.then(|| green_energy(kernel, &pts));
    Ok(ReplicaRecord {
        n,
        replica: r,
        w2: w.result.value,
        bracket: w.bracket,
        energy,
        solver: w.result.solver,
        duality_gap: w.result.duality_gap,
    })
}

fn aggregate(cfg: &ScanConfig, n: usize, records: &[ReplicaRecord], failed: usize) -> ScanRow {
    let resolution = cfg.resolution_for(n);
    let w2: Vec<f64> = records.iter().map(|r| r.w2).collect();
    let lower: Vec<f64> = records.iter().map(|r| r.bracket[0]).collect();
    let upper: Vec<f64> = records.iter().map(|r| r.bracket[1]).collect();
    let mean_w2 = Estimate::from_samples(&w2);
    let lo = Estimate::from_samples(&lower);
    let hi = Estimate::from_samples(&upper);
    let scaled = mean_w2.scaled(n as f64);
    let energies: Vec<f64> = records.iter().filter_map(|r| r.energy).collect();
    let finite: Vec<f64> = energies
        .iter()
        .copied()
        .filter(|e| e.is_finite())
        .map(f64::abs)
        .collect();
    let (implied, implied_ci) = if cfg.with_energy {
        let l = scaled.scaled(1.0 / implied_constant_scale(cfg.surface));
        (Some(l), Some(l.ci95()))
    } else {
        (None, None)
    };
    ScanRow {
        n,
        replicas: records.len(),
        failed,
        resolution,
        bias_bound: crate::transport::bias_bound(cfg.surface, resolution),
        solver: records
            .first()
            .map(|r| r.solver)
            .unwrap_or(SolverKind::ExactFlow),
        mean_w2,
        ci: [lo.value - Z95 * lo.se, hi.value + Z95 * hi.se],
        scaled_w2: scaled,
        mean_abs_energy: cfg.with_energy.then(|| Estimate::from_samples(&finite)),
        energy_coincidences: energies.len() - finite.len(),
        implied_constant: implied,
        implied_ci,
    }
}

/// Runs every replica at every n, calling `on_row` as each n completes.
/// Replicas run in parallel and are combined in index order.
pub fn w2_scan(cfg: &ScanConfig, mut on_row: impl FnMut(&ScanRow)) -> Result<ScanTable> {
    cfg.validate()?;
    let kernel = GreenKernel::for_surface(cfg.surface);
    let mut table = ScanTable {
        surface: cfg.surface,
        rows: Vec::new(),
        records: Vec::new(),
    };
    for &n in &cfg.n_grid {
        let results: Vec<Result<ReplicaRecord>> = (0..cfg.replicas as u64)
            .into_par_iter()
            .map(|r| run_replica(cfg, &kernel, n, r))
            .collect();
        let mut records = Vec::with_capacity(results.len());
        let mut failed = 0;
        let mut last_error = None;
        for res in results {
            match res {
                Ok(rec) => records.push(rec),
                Err(e) => {
                    log::warn!("n = {n}: replica failed: {e}");
                    failed += 1;
                    last_error = Some(e);
                }
            }
        }
        if failed as f64 > MAX_FAILED_FRACTION * cfg.replicas as f64 || records.len() < 2 {
            let cause = last_error.map(|e| e.to_string()).unwrap_or_default();
            return Err(Error::Solver(format!(
                "{failed} of {} replicas failed at n = {n} (last: {cause})",
                cfg.replicas
            )));
        }
        let row = aggregate(cfg, n, &records, failed);
        log::info!(
            "n = {n}: E[W2^2] = {:.6e} ± {:.2e}",
            row.mean_w2.value,
            row.mean_w2.se
        );
        on_row(&row);
        table.rows.push(row);
        table.records.push(records);
    }
    Ok(table)
}

/// Least-squares fit of y_n = n·Ê[W₂²] against log n.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub n_grid: Vec<usize>,
    pub fit: LinearFit,
    /// 95% bootstrap interval for the slope, resampling replicas within each n.
    pub slope_ci: [f64; 2],
    /// vol(M)/4π.
    pub target_slope: f64,
    pub slope_ratio: f64,
    /// √(log n · log log n) at each n: the size of the next-order correction
    /// up to its unknown constant.
    pub systematic_band: Vec<f64>,
    pub bootstrap_resamples: usize,
}

/// Regression of the implied constant L_n on log n.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FalsifierReport {
    pub sigma2: f64,
    pub fit: LinearFit,
    pub slope_ci: [f64; 2],
    /// vol(M) / (8π(1 + √2 σ)).
    pub predicted_slope: f64,
    pub increments: Vec<Increment>,
    /// Every increment in the upper half of the grid beats its noise.
    pub top_half_increasing: bool,
    /// The slope interval lies above zero.
    pub slope_positive: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Increment {
    pub from_n: usize,
    pub to_n: usize,
    pub delta: f64,
    /// 2·√(SE₁² + SE₂²).
    pub noise: f64,
    pub exceeds: bool,
}

fn log_grid(n_grid: &[usize]) -> Vec<f64> {
    n_grid.iter().map(|&n| (n as f64).ln()).collect()
}

fn scaled_means(n_grid: &[usize], groups: &[Vec<f64>]) -> Vec<f64> {
    n_grid
        .iter()
        .zip(groups)
        .map(|(&n, g)| n as f64 * g.iter().sum::<f64>() / g.len() as f64)
        .collect()
}

fn slope_of(x: &[f64], y: &[f64]) -> f64 {
    least_squares(x, y).map(|f| f.slope).unwrap_or(f64::NAN)
}

fn w2_groups(table: &ScanTable) -> Vec<Vec<f64>> {
    table
        .records
        .iter()
        .map(|rs| rs.iter().map(|r| r.w2).collect())
        .collect()
}

fn check_fit_input(table: &ScanTable) -> Result<Vec<usize>> {
    let n_grid: Vec<usize> = table.rows.iter().map(|r| r.n).collect();
    let mut distinct = n_grid.clone();
    distinct.dedup();
    if distinct.len() < 2 {
        return input("regression needs at least two distinct n");
    }
    if n_grid.len() < 4 {
        return input("the log-slope fit needs at least four grid points");
    }
    if table.records.len() != n_grid.len() || table.records.iter().any(|g| g.is_empty()) {
        return input("every grid point needs its replica values");
    }
    Ok(n_grid)
}

pub fn fit_log_slope(table: &ScanTable, resamples: usize, seed: u64) -> Result<FitReport> {
    let n_grid = check_fit_input(table)?;
    let x = log_grid(&n_grid);
    let groups = w2_groups(table);
    let fit = least_squares(&x, &scaled_means(&n_grid, &groups))?;
    let mut stream = RandomStream::from_parts(seed, "bootstrap/w2_slope", 0);
    let slope_ci = bootstrap_interval(
        &groups,
        |g| slope_of(&x, &scaled_means(&n_grid, g)),
        resamples,
        0.95,
        &mut stream,
    );
    let target = table.surface.volume() / (4.0 * PI);
    let systematic_band = x.iter().map(|&l| (l * l.ln().max(0.0)).sqrt()).collect();
    Ok(FitReport {
        n_grid,
        fit,
        slope_ci,
        target_slope: target,
        slope_ratio: fit.slope / target,
        systematic_band,
        bootstrap_resamples: resamples,
    })
}

/// Implied constants, their increments across the grid and their log-slope.
pub fn falsifier_report(table: &ScanTable, resamples: usize, seed: u64) -> Result<FalsifierReport> {
    let n_grid = check_fit_input(table)?;
    let scale = implied_constant_scale(table.surface);
    let x = log_grid(&n_grid);
    let groups = w2_groups(table);
    let implied = |g: &[Vec<f64>]| -> Vec<f64> {
        scaled_means(&n_grid, g).iter().map(|y| y / scale).collect()
    };
    let fit = least_squares(&x, &implied(&groups))?;
    let mut stream = RandomStream::from_parts(seed, "bootstrap/implied_slope", 0);
    let slope_ci = bootstrap_interval(
        &groups,
        |g| slope_of(&x, &implied(g)),
        resamples,
        0.95,
        &mut stream,
    );
    let estimates: Vec<Estimate> = table
        .rows
        .iter()
        .map(|r| r.scaled_w2.scaled(1.0 / scale))
        .collect();
    let increments: Vec<Increment> = estimates
        .windows(2)
        .zip(n_grid.windows(2))
        .map(|(e, n)| {
            let delta = e[1].value - e[0].value;
            let noise = 2.0 * (e[0].se * e[0].se + e[1].se * e[1].se).sqrt();
            Increment {
                from_n: n[0],
                to_n: n[1],
                delta,
                noise,
                exceeds: delta > noise,
            }
        })
        .collect();
    let top = increments.len().div_ceil(2);
    let top_half_increasing = increments[increments.len() - top..]
        .iter()
        .all(|i| i.exceeds);
    let sigma2 = certified_sigma2(table.surface).value;
    Ok(FalsifierReport {
        sigma2,
        fit,
        slope_ci,
        predicted_slope: table.surface.volume() / (8.0 * PI * (1.0 + (2.0 * sigma2).sqrt())),
        increments,
        top_half_increasing,
        slope_positive: slope_ci[0] > 0.0,
    })
}

/// Scan with S_n on the same replicas, plus the implied-constant report.
pub fn falsifier_scan(
    cfg: &ScanConfig,
    resamples: usize,
    on_row: impl FnMut(&ScanRow),
) -> Result<(ScanTable, FalsifierReport)> {
    let mut cfg = cfg.clone();
    cfg.with_energy = true;
    let table = w2_scan(&cfg, on_row)?;
    let report = falsifier_report(&table, resamples, cfg.seed)?;
    Ok((table, report))
}

/// W₂(μ_n, dx) / (n^{-1/2} + |S_n|^{1/2}/n) for one configuration; 0 when two
/// points coincide, since the denominator is then infinite.
pub fn per_config_ratio(
    kernel: &GreenKernel,
    pts: &[Point],
    opts: &SolverOptions,
    resolution: Option<usize>,
) -> Result<f64> {
    let n = pts.len();
    if n < 2 {
        return input("the ratio needs n ≥ 2");
    }
    let energy = green_energy(kernel, pts);
    if !energy.is_finite() {
        return Ok(0.0);
    }
    let w = w2_to_uniform(kernel.surface(), pts, resolution, opts)?;
    let nf = n as f64;
    Ok(w.result.value.max(0.0).sqrt() / (nf.powf(-0.5) + energy.abs().sqrt() / nf))
}

/// A non-exact solve checked against the exact solver on the same instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossCheck {
    pub n: usize,
    pub solver: SolverKind,
    pub value: f64,
    pub exact: f64,
    pub relative_error: f64,
}

/// Re-solves replica 0 of the grid point with the smallest cost matrix
/// exactly, when the scan used another solver there and the matrix is small
/// enough. Runs only for entropic or automatic solver choices.
pub fn cross_check(cfg: &ScanConfig, table: &ScanTable) -> Result<Option<CrossCheck>> {
    if matches!(
        cfg.solver.choice,
        SolverChoice::Exact | SolverChoice::Assignment
    ) {
        return Ok(None);
    }
    let size = |n: usize| n.saturating_mul(cfg.surface.quadrature_len(cfg.resolution_for(n)));
    let candidate = table
        .rows
        .iter()
        .zip(&table.records)
        .filter(|(row, recs)| row.solver != SolverKind::ExactFlow && !recs.is_empty())
        .min_by_key(|(row, _)| size(row.n));
    let Some((row, recs)) = candidate else {
        return Ok(None);
    };
    if size(row.n) > 50 * cfg.solver.exact_limit {
        return Ok(None);
    }
    let rec = recs[0];
    let pts = replica_points(cfg.surface, cfg.seed, row.n, rec.replica);
    let quad = cfg.surface.quadrature(cfg.resolution_for(row.n))?;
    let sources = crate::surfaces::WeightedPointSet::uniform(pts.clone());
    let exact = solve_exact(&sources, &quad, &CostMatrix::geodesic(&pts, quad.points()))?.value;
    Ok(Some(CrossCheck {
        n: row.n,
        solver: rec.solver,
        value: rec.w2,
        exact,
        relative_error: (rec.w2 - exact).abs() / exact,
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub method: GreenMethod,
    pub ewald_alpha: Option<f64>,
    pub tabulated: bool,
    pub accuracy: f64,
    pub offset: f64,
}

impl KernelParams {
    pub fn of(kernel: &GreenKernel) -> KernelParams {
        KernelParams {
            method: kernel.method(),
            ewald_alpha: kernel.ewald().map(|e| e.alpha()),
            tabulated: kernel.ewald().is_some_and(|e| e.is_tabulated()),
            accuracy: kernel.accuracy(),
            offset: kernel.offset(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WallClock {
    pub started_unix_ms: u64,
    pub elapsed_seconds: f64,
}

/// Everything needed to rerun a scan, and what it produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub command: String,
    pub version: String,
    pub surface: SurfaceModel,
    pub kernel: KernelParams,
    pub n_grid: Vec<usize>,
    pub replicas: usize,
    pub seed: u64,
    pub grid_res: Option<usize>,
    pub solver: SolverOptions,
    pub bootstrap_resamples: usize,
    pub rows: Vec<ScanRow>,
    pub fit: Option<FitReport>,
    pub falsifier: Option<FalsifierReport>,
    pub cross_check: Option<CrossCheck>,
    pub partial: bool,
    pub error: Option<String>,
    pub wall_clock: WallClock,
}

impl ExperimentManifest {
    pub fn new(command: &str, cfg: &ScanConfig, resamples: usize) -> ExperimentManifest {
        ExperimentManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            surface: cfg.surface,
            kernel: KernelParams::of(&GreenKernel::for_surface(cfg.surface)),
            n_grid: cfg.n_grid.clone(),
            replicas: cfg.replicas,
            seed: cfg.seed,
            grid_res: cfg.resolution,
            solver: cfg.solver,
            bootstrap_resamples: resamples,
            rows: Vec::new(),
            fit: None,
            falsifier: None,
            cross_check: None,
            partial: true,
            error: None,
            wall_clock: WallClock {
                started_unix_ms: 0,
                elapsed_seconds: 0.0,
            },
        }
    }

    /// The configuration this manifest records.
    pub fn config(&self) -> ScanConfig {
        ScanConfig {
            surface: self.surface,
            n_grid: self.n_grid.clone(),
            replicas: self.replicas,
            seed: self.seed,
            solver: self.solver,
            resolution: self.grid_res,
            with_energy: self.falsifier.is_some() || self.command == "falsify",
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<ExperimentManifest> {
        Ok(serde_json::from_str(s)?)
    }
}
