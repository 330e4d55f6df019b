//! Command-line front end.
//!
//! Every flag can also be set through an environment variable named
//! `GREENW2_` followed by the flag in upper snake case (for example
//! `GREENW2_REPLICAS=50`). Command-line flags win over the environment.

use std::ffi::OsString;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::energy::{energy_moments, EnergyMomentReport};
use crate::error::{Error, Result};
use crate::experiments::{
    cross_check, falsifier_report, fit_log_slope, w2_scan, ExperimentManifest, KernelParams,
    ScanConfig, ScanRow, ScanTable, WallClock, DEFAULT_BOOTSTRAP_RESAMPLES, DEFAULT_SCAN_REPLICAS,
};
use crate::green::{run_green_checks, CheckOutcome, GreenCheckConfig, GreenKernel};
use crate::surfaces::SurfaceModel;
use crate::transport::{EpsilonSchedule, SolverChoice, SolverOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

pub const ENERGY_COLUMNS: [&str; 10] = [
    "n",
    "replicas",
    "mean_s_n",
    "se_s_n",
    "mean_s_n_sq",
    "se_s_n_sq",
    "predicted_s_n_sq",
    "ratio",
    "ratio_ci_low",
    "ratio_ci_high",
];
pub const W2_COLUMNS: [&str; 6] = [
    "n",
    "replicas",
    "mean_w2",
    "ci_low",
    "ci_high",
    "bias_bound",
];
pub const FALSIFY_EXTRA_COLUMNS: [&str; 4] = ["mean_abs_s_n", "l_n", "l_n_ci_low", "l_n_ci_high"];
pub const REPLICA_COLUMNS: [&str; 8] = [
    "n",
    "replica",
    "w2",
    "bracket_low",
    "bracket_high",
    "s_n",
    "solver",
    "duality_gap",
];
pub const CHECK_COLUMNS: [&str; 4] = ["check", "measured", "threshold", "passed"];

#[derive(Debug, Parser)]
#[command(
    name = "greenw2",
    version,
    about = "Green energies and W₂ scans on the flat torus and the sphere"
)]
pub struct Cli {
    /// Worker threads (default: available parallelism). Results do not
    /// depend on it.
    #[arg(long, global = true, env = "GREENW2_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Symmetry, mean-zero, eigenfunction, near-diagonal and σ² checks of the
    /// Green kernel. Writes green_check.csv.
    GreenCheck(GreenCheckArgs),
    /// Moments of the Green energy S_n. Writes energy_moments.csv and .json.
    EnergyMoments(EnergyArgs),
    /// E[W₂²(μ_n, dx)] across an n-grid with the log-slope fit. Writes
    /// w2_scan.csv, w2_scan_replicas.csv and w2_scan.json.
    W2Scan(ScanArgs),
    /// The W₂ scan plus S_n on the same replicas and the implied constants
    /// L_n. Writes falsify.csv, falsify_replicas.csv and falsify.json.
    Falsify(ScanArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SurfaceArg {
    Torus,
    Sphere,
}

impl From<SurfaceArg> for SurfaceModel {
    fn from(s: SurfaceArg) -> SurfaceModel {
        match s {
            SurfaceArg::Torus => SurfaceModel::FlatTorus,
            SurfaceArg::Sphere => SurfaceModel::UnitSphere,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SolverArg {
    Exact,
    Entropic,
    Assignment,
    Auto,
}

impl From<SolverArg> for SolverChoice {
    fn from(s: SolverArg) -> SolverChoice {
        match s {
            SolverArg::Exact => SolverChoice::Exact,
            SolverArg::Entropic => SolverChoice::Entropic,
            SolverArg::Assignment => SolverChoice::Assignment,
            SolverArg::Auto => SolverChoice::Auto,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    #[arg(long, value_enum, default_value = "torus", env = "GREENW2_SURFACE")]
    pub surface: SurfaceArg,
    /// Master seed.
    #[arg(long, default_value_t = 20_240_601, env = "GREENW2_SEED")]
    pub seed: u64,
    /// Existing output directory.
    #[arg(long, default_value = ".", env = "GREENW2_OUT")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct GreenCheckArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Quadrature resolution for the mean-zero and mode checks (torus grid
    /// side, default 512; sphere Fibonacci nodes, default 1000000).
    #[arg(long, env = "GREENW2_GRID_RES")]
    pub grid_res: Option<usize>,
    /// Constant added to the kernel, to see the checks fail.
    #[arg(
        long,
        default_value_t = 0.0,
        allow_negative_numbers = true,
        env = "GREENW2_KERNEL_OFFSET"
    )]
    pub kernel_offset: f64,
}

#[derive(Debug, Clone, Args)]
pub struct EnergyArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Comma-separated sizes n ≥ 2.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "5,10,50,100",
        env = "GREENW2_N_GRID"
    )]
    pub n_grid: Vec<usize>,
    /// Configurations per n (at least 100).
    #[arg(long, default_value_t = 10_000, env = "GREENW2_REPLICAS")]
    pub replicas: usize,
}

#[derive(Debug, Clone, Args)]
pub struct ScanArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Comma-separated, strictly increasing sizes n ≥ 2.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "128,256,512,1024,2048,4096",
        env = "GREENW2_N_GRID"
    )]
    pub n_grid: Vec<usize>,
    #[arg(long, default_value_t = DEFAULT_SCAN_REPLICAS, env = "GREENW2_REPLICAS")]
    pub replicas: usize,
    /// exact below n·M = 10⁶, then assignment when n divides M, else
    /// entropic.
    #[arg(long, value_enum, default_value = "auto", env = "GREENW2_SOLVER")]
    pub solver: SolverArg,
    /// Quadrature resolution for every n (torus grid side or sphere node
    /// count). Default per n: torus the smallest K ≥ max(64, ⌈8√n⌉) with n | K²,
    /// sphere the smallest multiple of n ≥ max(4096, 64n).
    #[arg(long, env = "GREENW2_GRID_RES")]
    pub grid_res: Option<usize>,
    /// Entropic ε schedule start:end:factor, relative to the mean cost.
    #[arg(long, default_value = "1:3e-4:0.5", env = "GREENW2_EPSILON_SCHEDULE")]
    pub epsilon_schedule: String,
    /// L1 marginal tolerance of the entropic solver.
    #[arg(long, default_value_t = 1e-6, env = "GREENW2_ENTROPIC_TOL")]
    pub entropic_tol: f64,
    /// Largest n·M solved exactly under --solver auto.
    #[arg(long, default_value_t = 1_000_000, env = "GREENW2_EXACT_LIMIT")]
    pub exact_limit: usize,
    /// Bootstrap resamples for the slope intervals.
    #[arg(long, default_value_t = DEFAULT_BOOTSTRAP_RESAMPLES, env = "GREENW2_BOOTSTRAP")]
    pub bootstrap: usize,
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    if let Some(t) = cli.threads {
        if t == 0 {
            eprintln!("error: --threads must be at least 1");
            return EXIT_USAGE;
        }
        // fails only if a pool already exists, e.g. when called twice in one process
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global();
    }
    let outcome = match &cli.command {
        Command::GreenCheck(a) => green_check(a),
        Command::EnergyMoments(a) => energy(a),
        Command::W2Scan(a) => scan(a, false),
        Command::Falsify(a) => scan(a, true),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Input(_) => EXIT_USAGE,
                _ => EXIT_INTERNAL,
            }
        }
    }
}

fn check_out_dir(dir: &Path) -> Result<()> {
    if !dir.is_dir() {
        return Err(Error::Input(format!(
            "output directory {} does not exist",
            dir.display()
        )));
    }
    Ok(())
}

fn num(x: f64) -> String {
    format!("{x}")
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = File::create(path)?;
    f.write_all(serde_json::to_string_pretty(value)?.as_bytes())?;
    f.write_all(b"\n")?;
    Ok(())
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn green_check(a: &GreenCheckArgs) -> Result<i32> {
    check_out_dir(&a.common.out)?;
    let surface: SurfaceModel = a.common.surface.into();
    let kernel = GreenKernel::for_surface(surface).with_offset(a.kernel_offset);
    let mut cfg = GreenCheckConfig {
        seed: a.common.seed,
        ..Default::default()
    };
    if let Some(r) = a.grid_res {
        match surface {
            SurfaceModel::FlatTorus => cfg.torus_grid = r,
            SurfaceModel::UnitSphere => cfg.sphere_nodes = r,
        }
    }
    let checks = run_green_checks(&kernel, &cfg)?;
    let rows: Vec<Vec<String>> = checks
        .iter()
        .map(|c| {
            vec![
                c.name.clone(),
                num(c.measured),
                num(c.threshold),
                c.passed.to_string(),
            ]
        })
        .collect();
    write_csv(&a.common.out.join("green_check.csv"), &CHECK_COLUMNS, &rows)?;
    for c in &checks {
        println!(
            "{} {}: measured {:e}, threshold {:e}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.measured,
            c.threshold
        );
    }
    let failed: Vec<&CheckOutcome> = checks.iter().filter(|c| !c.passed).collect();
    if failed.is_empty() {
        Ok(EXIT_OK)
    } else {
        let names: Vec<&str> = failed.iter().map(|c| c.name.as_str()).collect();
        eprintln!("failed checks: {}", names.join(", "));
        Ok(EXIT_CHECK_FAILED)
    }
}

/// Manifest of an energy-moments run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyManifest {
    pub command: String,
    pub version: String,
    pub surface: SurfaceModel,
    pub kernel: KernelParams,
    pub n_grid: Vec<usize>,
    pub replicas: usize,
    pub seed: u64,
    pub reports: Vec<EnergyMomentReport>,
    pub wall_clock: WallClock,
}

pub fn energy_row(r: &EnergyMomentReport) -> Vec<String> {
    vec![
        r.n.to_string(),
        r.replicas.to_string(),
        num(r.mean.value),
        num(r.mean.se),
        num(r.second_moment.value),
        num(r.second_moment.se),
        num(r.predicted_second_moment),
        num(r.ratio.value),
        num(r.ratio_ci[0]),
        num(r.ratio_ci[1]),
    ]
}

fn energy(a: &EnergyArgs) -> Result<i32> {
    check_out_dir(&a.common.out)?;
    if a.n_grid.is_empty() || a.n_grid.iter().any(|&n| n < 2) {
        return Err(Error::Input("the n-grid needs sizes n ≥ 2".into()));
    }
    if a.replicas < 100 {
        return Err(Error::Input(
            "energy moments need at least 100 replicas".into(),
        ));
    }
    let surface: SurfaceModel = a.common.surface.into();
    let kernel = GreenKernel::for_surface(surface);
    let started = now_ms();
    let clock = Instant::now();
    let mut reports = Vec::new();
    for &n in &a.n_grid {
        let r = energy_moments(&kernel, n, a.replicas, a.common.seed)?;
        println!(
            "n = {n}: mean S_n = {:.4e} ± {:.2e}, E[S_n²]/predicted = {:.4} ± {:.4}",
            r.mean.value, r.mean.se, r.ratio.value, r.ratio.se
        );
        reports.push(r);
    }
    let rows: Vec<Vec<String>> = reports.iter().map(energy_row).collect();
    write_csv(
        &a.common.out.join("energy_moments.csv"),
        &ENERGY_COLUMNS,
        &rows,
    )?;
    let manifest = EnergyManifest {
        command: "energy-moments".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        surface,
        kernel: KernelParams::of(&kernel),
        n_grid: a.n_grid.clone(),
        replicas: a.replicas,
        seed: a.common.seed,
        reports,
        wall_clock: WallClock {
            started_unix_ms: started,
            elapsed_seconds: clock.elapsed().as_secs_f64(),
        },
    };
    write_json(&a.common.out.join("energy_moments.json"), &manifest)?;
    Ok(EXIT_OK)
}

pub fn scan_row(r: &ScanRow, falsify: bool) -> Vec<String> {
    let mut row = vec![
        r.n.to_string(),
        r.replicas.to_string(),
        num(r.mean_w2.value),
        num(r.ci[0]),
        num(r.ci[1]),
        num(r.bias_bound),
    ];
    if falsify {
        let abs = r.mean_abs_energy.map_or(f64::NAN, |e| e.value);
        let l = r.implied_constant.map_or(f64::NAN, |e| e.value);
        let ci = r.implied_ci.unwrap_or([f64::NAN; 2]);
        row.extend([num(abs), num(l), num(ci[0]), num(ci[1])]);
    }
    row
}

fn replica_rows(table: &ScanTable) -> Vec<Vec<String>> {
    table
        .records
        .iter()
        .flatten()
        .map(|r| {
            vec![
                r.n.to_string(),
                r.replica.to_string(),
                num(r.w2),
                num(r.bracket[0]),
                num(r.bracket[1]),
                r.energy.map(num).unwrap_or_default(),
                format!("{:?}", r.solver),
                num(r.duality_gap),
            ]
        })
        .collect()
}

pub fn scan_config(a: &ScanArgs, falsify: bool) -> Result<ScanConfig> {
    let mut solver = SolverOptions {
        choice: a.solver.into(),
        exact_limit: a.exact_limit,
        ..Default::default()
    };
    solver.entropic.schedule = EpsilonSchedule::parse(&a.epsilon_schedule)?;
    if !(a.entropic_tol > 0.0) {
        return Err(Error::Input("--entropic-tol must be positive".into()));
    }
    solver.entropic.tolerance = a.entropic_tol;
    let cfg = ScanConfig {
        surface: a.common.surface.into(),
        n_grid: a.n_grid.clone(),
        replicas: a.replicas,
        seed: a.common.seed,
        solver,
        resolution: a.grid_res,
        with_energy: falsify,
    };
    cfg.validate()?;
    if a.bootstrap < 10 {
        return Err(Error::Input(
            "--bootstrap needs at least 10 resamples".into(),
        ));
    }
    Ok(cfg)
}

fn scan(a: &ScanArgs, falsify: bool) -> Result<i32> {
    check_out_dir(&a.common.out)?;
    let cfg = scan_config(a, falsify)?;
    let name = if falsify { "falsify" } else { "w2_scan" };
    let header: Vec<&str> = if falsify {
        W2_COLUMNS
            .iter()
            .chain(&FALSIFY_EXTRA_COLUMNS)
            .copied()
            .collect()
    } else {
        W2_COLUMNS.to_vec()
    };
    let out = &a.common.out;
    let csv_path = out.join(format!("{name}.csv"));
    let json_path = out.join(format!("{name}.json"));
    let mut manifest = ExperimentManifest::new(
        if falsify { "falsify" } else { "w2-scan" },
        &cfg,
        a.bootstrap,
    );
    manifest.wall_clock.started_unix_ms = now_ms();
    let clock = Instant::now();

    // rows are flushed as each n completes so an aborted run leaves them behind
    let mut writer = csv::Writer::from_path(&csv_path)?;
    writer.write_record(&header)?;
    writer.flush()?;
    let mut write_error: Option<Error> = None;
    let result = w2_scan(&cfg, |row| {
        manifest.rows.push(row.clone());
        let res = writer
            .write_record(scan_row(row, falsify))
            .and_then(|_| writer.flush().map_err(csv::Error::from));
        if let Err(e) = res {
            write_error.get_or_insert(e.into());
        }
    });
    if let Some(e) = write_error {
        return Err(e);
    }
    let table = match result {
        Ok(t) => t,
        Err(e) => {
            manifest.partial = true;
            manifest.error = Some(e.to_string());
            manifest.wall_clock.elapsed_seconds = clock.elapsed().as_secs_f64();
            write_json(&json_path, &manifest)?;
            return Err(e);
        }
    };
    write_csv(
        &out.join(format!("{name}_replicas.csv")),
        &REPLICA_COLUMNS,
        &replica_rows(&table),
    )?;

    if table.rows.len() >= 4 {
        manifest.fit = Some(fit_log_slope(&table, a.bootstrap, cfg.seed)?);
        if falsify {
            manifest.falsifier = Some(falsifier_report(&table, a.bootstrap, cfg.seed)?);
        }
    } else {
        log::warn!("fewer than four grid points: no slope fit");
    }
    manifest.cross_check = cross_check(&cfg, &table)?;
    manifest.partial = false;
    manifest.wall_clock.elapsed_seconds = clock.elapsed().as_secs_f64();
    write_json(&json_path, &manifest)?;

    if let Some(fit) = &manifest.fit {
        println!(
            "slope of n·E[W2^2] on log n: {:.4e} (95% CI {:.4e} to {:.4e}), target {:.4e}, ratio {:.3}",
            fit.fit.slope, fit.slope_ci[0], fit.slope_ci[1], fit.target_slope, fit.slope_ratio
        );
    }
    if let Some(c) = &manifest.cross_check {
        println!(
            "cross-check at n = {}: {:?} vs exact, relative error {:.2e}",
            c.n, c.solver, c.relative_error
        );
    }
    if let Some(f) = &manifest.falsifier {
        println!(
            "slope of L_n on log n: {:.4e} (95% CI {:.4e} to {:.4e}); top-half increments above noise: {}",
            f.fit.slope, f.slope_ci[0], f.slope_ci[1], f.top_half_increasing
        );
        if !(f.slope_positive && f.top_half_increasing) {
            eprintln!("the implied constants do not grow clearly across this grid");
            return Ok(EXIT_CHECK_FAILED);
        }
    }
    Ok(EXIT_OK)
}
