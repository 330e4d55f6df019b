//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Criteria 10 and 11 share one torus scan that takes
//! about half an hour on one core.

use std::f64::consts::PI;
use std::time::Instant;

use greenw2::energy::{energy_moments, EnergyMomentReport};
use greenw2::experiments::{falsifier_scan, fit_log_slope, ScanConfig, DEFAULT_N_GRID};
use greenw2::green::{
    fourier_mode_check, legendre_coefficient, mean_zero_residual, sigma2, GreenKernel, Sigma2Method,
};
use greenw2::rng::RandomStream;
use greenw2::surfaces::{Point, SurfaceModel, WeightedPointSet};
use greenw2::transport::{
    solve_entropic, solve_exact, solve_permutation, w2_to_uniform, CostMatrix, EntropicOptions,
    SolverChoice, SolverOptions,
};

const SEED: u64 = 20_240_601;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn c1_sphere_sigma2() -> Verdict {
    let k = GreenKernel::sphere();
    let spectral = sigma2(&k, Sigma2Method::SpectralSum).unwrap();
    // telescoping partial sums Σ_{ℓ≤L} (1/ℓ² − 1/(ℓ+1)²) = 1 − 1/(L+1)²
    let l = 1_000_000f64;
    let partial: f64 = (1..=1_000_000u64)
        .rev()
        .map(|l| {
            let l = l as f64;
            (2.0 * l + 1.0) / (l * l * (l + 1.0) * (l + 1.0))
        })
        .sum();
    let telescoped = 1.0 - 1.0 / ((l + 1.0) * (l + 1.0));
    let mc = sigma2(
        &k,
        Sigma2Method::MonteCarlo {
            pairs: 1_000_000,
            seed: SEED,
        },
    )
    .unwrap();
    let z = (mc.value - 1.0).abs() / mc.error;
    let pass =
        (spectral.value - 1.0).abs() <= 1e-9 && (partial - telescoped).abs() <= 1e-12 && z <= 4.0;
    verdict(
        pass,
        format!(
            "spectral {:.12} (|Δ| {:.1e}), Monte Carlo {:.5} ± {:.5} ({z:.2} SE)",
            spectral.value,
            (spectral.value - 1.0).abs(),
            mc.value,
            mc.error
        ),
    )
}

fn c2_torus_sigma2() -> Verdict {
    let v = sigma2(&GreenKernel::torus(), Sigma2Method::LatticeSum).unwrap();
    // independent oracle: direct sum over |m|_∞ ≤ 1000, tail outside the
    // disk of radius 1000 bounded by π/999²
    let r: i64 = 1000;
    let mut s = 0.0;
    for a in -r..=r {
        for b in -r..=r {
            if a != 0 || b != 0 {
                let m2 = (a * a + b * b) as f64;
                s += 1.0 / (m2 * m2);
            }
        }
    }
    let scale = 16.0 * PI.powi(4);
    let (lo, hi) = (s / scale, (s + PI / 999f64.powi(2)) / scale);
    let pass =
        (v.value - 3.8670e-3).abs() <= 1e-6 && v.value >= lo - 1e-15 && v.value <= hi + 1e-15;
    verdict(
        pass,
        format!("σ² = {:.7e}, oracle bracket [{lo:.7e}, {hi:.7e}]", v.value),
    )
}

fn worst_mean_zero(k: &GreenKernel, q: &WeightedPointSet, label: &str) -> f64 {
    let mut s = RandomStream::from_parts(SEED, label, 0);
    let xs = k.surface().sample_uniform(&mut s, 100);
    xs.iter()
        .map(|x| mean_zero_residual(k, x, q).abs())
        .fold(0.0, f64::max)
}

fn c3_mean_zero() -> Verdict {
    let torus = worst_mean_zero(
        &GreenKernel::torus(),
        &SurfaceModel::FlatTorus.quadrature(512).unwrap(),
        "acceptance/mean_zero/torus",
    );
    let sphere = worst_mean_zero(
        &GreenKernel::sphere(),
        &SurfaceModel::UnitSphere.quadrature(1_000_000).unwrap(),
        "acceptance/mean_zero/sphere",
    );
    verdict(
        torus <= 1e-3 && sphere <= 5e-3,
        format!("torus K=512 max {torus:.2e} (≤ 1e-3), sphere N=1e6 max {sphere:.2e} (≤ 5e-3)"),
    )
}

fn c4_pde() -> Verdict {
    let k = GreenKernel::torus();
    let q = SurfaceModel::FlatTorus.quadrature(512).unwrap();
    let mut worst_mode: f64 = 0.0;
    for x in [[0.0, 0.0], [0.25, 0.25], [0.5, 0.125], [0.375, 0.75]] {
        for m1 in -4i64..=4 {
            for m2 in -4i64..=4 {
                if (m1, m2) != (0, 0) && m1 * m1 + m2 * m2 <= 16 {
                    let r =
                        fourier_mode_check(&k, [m1, m2], &Point::torus(x[0], x[1]), &q).unwrap();
                    worst_mode = worst_mode.max(r);
                }
            }
        }
    }
    // spot check the target used inside the residual
    let direct: f64 = {
        let x = Point::torus(0.0, 0.0);
        q.points()
            .iter()
            .zip(q.weights())
            .map(|(y, w)| {
                let Point::Torus(c) = y else { unreachable!() };
                w * k.eval(&x, y).unwrap() * (2.0 * PI * c[0]).cos()
            })
            .sum()
    };
    let target = 1.0 / (4.0 * PI * PI);
    let sphere = GreenKernel::sphere();
    let mut worst_legendre: f64 = 0.0;
    for l in 1..=8 {
        let lf = l as f64;
        let c = legendre_coefficient(&sphere, l).unwrap();
        worst_legendre = worst_legendre.max((c - (2.0 * lf + 1.0) / (lf * (lf + 1.0))).abs());
    }
    verdict(
        worst_mode <= 1e-6 && (direct - target).abs() <= 1e-6 && worst_legendre <= 1e-6,
        format!(
            "torus modes |m| ≤ 4 max residual {worst_mode:.2e}, m=(1,0) at 0: {direct:.8} vs {target:.8}; \
             Legendre ℓ ≤ 8 max error {worst_legendre:.2e}"
        ),
    )
}

struct EnergyRuns {
    reports: Vec<EnergyMomentReport>,
}

fn energy_runs() -> EnergyRuns {
    let mut reports = Vec::new();
    for surface in [SurfaceModel::FlatTorus, SurfaceModel::UnitSphere] {
        let k = GreenKernel::for_surface(surface);
        for n in [5usize, 10, 50, 100] {
            let replicas = if n == 10 { 100_000 } else { 10_000 };
            reports.push(energy_moments(&k, n, replicas, SEED).unwrap());
        }
    }
    EnergyRuns { reports }
}

fn c5_mean(runs: &EnergyRuns) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for r in runs.reports.iter().filter(|r| r.n == 10 || r.n == 100) {
        let z = r.mean.z_score(0.0);
        pass &= z <= 3.0 && r.coincidences == 0;
        parts.push(format!(
            "{} n={} R={}: {:.2} SE",
            r.surface.name(),
            r.n,
            r.replicas,
            z
        ));
    }
    verdict(pass, parts.join("; "))
}

fn c6_second_moment(runs: &EnergyRuns) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for r in &runs.reports {
        let nf = r.n as f64;
        let predicted = 2.0 * nf * (nf - 1.0) * r.sigma2;
        let z = r.ratio.z_score(1.0);
        pass &= z <= 3.0 && (r.predicted_second_moment - predicted).abs() <= 1e-12 * predicted;
        parts.push(format!(
            "{} n={}: {:.4} ({:.2} SE)",
            r.surface.name(),
            r.n,
            r.ratio.value,
            z
        ));
    }
    verdict(pass, parts.join("; "))
}

fn c7_exact_ot() -> Verdict {
    let mut worst_diff: f64 = 0.0;
    let mut worst_gap: f64 = 0.0;
    let mut pass = true;
    for surface in [SurfaceModel::FlatTorus, SurfaceModel::UnitSphere] {
        for t in 0..200u64 {
            let n = 1 + (t % 7) as usize;
            let mut s = RandomStream::from_parts(SEED, "acceptance/permutation", t);
            let a = surface.sample_uniform(&mut s, n);
            let b = surface.sample_uniform(&mut s, n);
            let cost = CostMatrix::geodesic(&a, &b);
            let r = solve_exact(
                &WeightedPointSet::uniform(a),
                &WeightedPointSet::uniform(b),
                &cost,
            )
            .unwrap();
            let oracle = solve_permutation(&cost).unwrap().value;
            let diff = (r.value - oracle).abs();
            worst_diff = worst_diff.max(diff);
            worst_gap = worst_gap.max(r.duality_gap / (1.0 + r.value));
            pass &= diff <= 1e-9 && r.duality_gap <= 1e-9 * (1.0 + r.value);
        }
    }
    verdict(
        pass,
        format!("400 instances, max |exact − enumeration| {worst_diff:.1e}, max gap/(1+v) {worst_gap:.1e}"),
    )
}

fn c8_entropic() -> Verdict {
    let surface = SurfaceModel::FlatTorus;
    let q = surface.quadrature(64).unwrap();
    let mut worst: f64 = 0.0;
    for t in 0..20u64 {
        let mut s = RandomStream::from_parts(SEED, "acceptance/entropic", t);
        let pts = WeightedPointSet::uniform(surface.sample_uniform(&mut s, 64));
        let cost = CostMatrix::geodesic(pts.points(), q.points());
        let exact = solve_exact(&pts, &q, &cost).unwrap().value;
        let value = match solve_entropic(&pts, &q, &cost, &EntropicOptions::default()) {
            Ok(r) => r.value,
            Err(e) => return verdict(false, format!("instance {t}: {e}")),
        };
        worst = worst.max((value - exact).abs() / exact);
    }
    verdict(
        worst <= 1e-3,
        format!("20 torus instances n=64, 4096 nodes, max relative error {worst:.2e}"),
    )
}

/// ∫_0^π θ² (sin θ / 2) dθ by composite Simpson.
fn sphere_one_atom_oracle() -> f64 {
    let m = 20_000;
    let h = PI / m as f64;
    let f = |t: f64| t * t * t.sin() / 2.0;
    let mut s = f(0.0) + f(PI);
    for i in 1..m {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
    }
    s * h / 3.0
}

fn c9_one_atom() -> Verdict {
    let opts = SolverOptions {
        choice: SolverChoice::Exact,
        ..SolverOptions::default()
    };
    let mut s = RandomStream::from_parts(SEED, "acceptance/one_atom", 0);
    let x = SurfaceModel::FlatTorus.sample_uniform(&mut s, 1);
    let torus = w2_to_uniform(SurfaceModel::FlatTorus, &x, Some(256), &opts)
        .unwrap()
        .result
        .value;
    let y = SurfaceModel::UnitSphere.sample_uniform(&mut s, 1);
    let sphere = w2_to_uniform(SurfaceModel::UnitSphere, &y, Some(100_000), &opts)
        .unwrap()
        .result
        .value;
    let oracle = sphere_one_atom_oracle();
    let closed = (PI * PI - 4.0) / 2.0;
    verdict(
        (torus - 1.0 / 6.0).abs() <= 1e-3 && (sphere - closed).abs() <= 5e-3 && (oracle - closed).abs() <= 1e-9,
        format!("torus K=256 {torus:.6} vs 1/6; sphere N=1e5 {sphere:.5} vs {closed:.5} (quadrature oracle {oracle:.9})"),
    )
}

fn c10_c11_scan() -> (Verdict, Verdict) {
    let cfg = ScanConfig::new(SurfaceModel::FlatTorus, DEFAULT_N_GRID.to_vec(), 200, SEED);
    let start = Instant::now();
    let (table, falsifier) = match falsifier_scan(&cfg, 1000, |row| {
        eprintln!(
            "  scan n = {:>4}: n·E[W2²] = {:.5} ± {:.5}  ({:.0} s)",
            row.n,
            row.scaled_w2.value,
            row.scaled_w2.se,
            start.elapsed().as_secs_f64()
        )
    }) {
        Ok(r) => r,
        Err(e) => {
            let v = verdict(false, format!("scan failed: {e}"));
            return (v, verdict(false, "scan failed".into()));
        }
    };
    let fit = fit_log_slope(&table, 1000, SEED).unwrap();
    let target = 1.0 / (4.0 * PI);
    let ratio = fit.fit.slope / target;
    let c10 = verdict(
        (0.6..=1.4).contains(&ratio),
        format!(
            "slope {:.5} ± {:.5} (bootstrap CI [{:.5}, {:.5}]) = {ratio:.3} × 1/(4π)",
            fit.fit.slope, fit.fit.slope_se, fit.slope_ci[0], fit.slope_ci[1]
        ),
    );
    let l: Vec<String> = table
        .rows
        .iter()
        .map(|r| format!("{:.4}", r.implied_constant.unwrap().value))
        .collect();
    let top: Vec<String> = falsifier
        .increments
        .iter()
        .map(|i| {
            format!(
                "{}→{}: {:.4} vs noise {:.4}",
                i.from_n, i.to_n, i.delta, i.noise
            )
        })
        .collect();
    let c11 = verdict(
        falsifier.top_half_increasing && falsifier.slope_positive && falsifier.fit.slope > 0.0,
        format!(
            "L_n = [{}]; increments {}; slope {:.5}, CI [{:.5}, {:.5}] (asymptotic {:.5})",
            l.join(", "),
            top.join(", "),
            falsifier.fit.slope,
            falsifier.slope_ci[0],
            falsifier.slope_ci[1],
            falsifier.predicted_slope
        ),
    );
    (c10, c11)
}

fn report(id: usize, name: &str, v: &Verdict, secs: f64) -> bool {
    println!(
        "{} criterion {id:>2} {name}: {} [{secs:.1} s]",
        if v.pass { "PASS" } else { "FAIL" },
        v.detail
    );
    v.pass
}

fn main() {
    let mut all = true;
    let mut run = |id: usize, name: &str, f: &dyn Fn() -> Verdict| {
        let t = Instant::now();
        let v = f();
        all &= report(id, name, &v, t.elapsed().as_secs_f64());
    };
    run(1, "sphere sigma2", &c1_sphere_sigma2);
    run(2, "torus sigma2", &c2_torus_sigma2);
    run(3, "mean zero", &c3_mean_zero);
    run(4, "weak equation", &c4_pde);
    let t = Instant::now();
    let energy = energy_runs();
    let shared = t.elapsed().as_secs_f64();
    run(5, "energy mean", &|| c5_mean(&energy));
    run(6, "energy second moment", &|| c6_second_moment(&energy));
    eprintln!("  (energy replicas for criteria 5 and 6 took {shared:.1} s)");
    run(7, "exact transport", &c7_exact_ot);
    run(8, "entropic vs exact", &c8_entropic);
    run(9, "one-atom closed forms", &c9_one_atom);
    let t = Instant::now();
    let (c10, c11) = c10_c11_scan();
    let secs = t.elapsed().as_secs_f64();
    all &= report(10, "log-law slope", &c10, secs);
    all &= report(11, "implied constant growth", &c11, secs);
    if !all {
        std::process::exit(1);
    }
}
