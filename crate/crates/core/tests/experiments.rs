use greenw2::energy::green_energy;
use greenw2::experiments::{
    falsifier_scan, per_config_ratio, replica_points, w2_scan, ExperimentManifest, ScanConfig,
    ScanTable,
};
use greenw2::green::GreenKernel;
use greenw2::rng::RandomStream;
use greenw2::surfaces::SurfaceModel;
use greenw2::transport::{SolverChoice, SolverOptions};

fn small(surface: SurfaceModel, grid: Vec<usize>, replicas: usize, seed: u64) -> ScanConfig {
    let mut cfg = ScanConfig::new(surface, grid, replicas, seed);
    cfg.resolution = Some(match surface {
        SurfaceModel::FlatTorus => 16,
        SurfaceModel::UnitSphere => 512,
    });
    cfg
}

fn scan(cfg: &ScanConfig) -> ScanTable {
    w2_scan(cfg, |_| {}).unwrap()
}

#[test]
fn statistical_width_scales_like_inverse_root_replicas() {
    let widths: Vec<f64> = [100, 200, 400]
        .iter()
        .map(|&r| {
            let t = scan(&small(SurfaceModel::FlatTorus, vec![8], r, 21));
            let [lo, hi] = t.rows[0].mean_w2.ci95();
            hi - lo
        })
        .collect();
    let doubled = widths[1] / widths[0];
    let quadrupled = widths[2] / widths[0];
    assert!((doubled / 0.5f64.sqrt() - 1.0).abs() <= 0.3, "{widths:?}");
    assert!((quadrupled / 0.5 - 1.0).abs() <= 0.3, "{widths:?}");
}

#[test]
fn independent_of_worker_count() {
    let cfg = small(SurfaceModel::UnitSphere, vec![2, 4, 8, 16], 8, 5);
    let one = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let three = rayon::ThreadPoolBuilder::new()
        .num_threads(3)
        .build()
        .unwrap();
    let a = one.install(|| falsifier_scan(&cfg, 50, |_| {}).unwrap());
    let b = three.install(|| falsifier_scan(&cfg, 50, |_| {}).unwrap());
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
}

#[test]
fn energies_come_from_the_same_points() {
    let cfg = small(SurfaceModel::FlatTorus, vec![2, 4, 8, 16], 10, 8);
    let (table, report) = falsifier_scan(&cfg, 50, |_| {}).unwrap();
    let k = GreenKernel::torus();
    for recs in &table.records {
        for r in recs {
            let pts = replica_points(cfg.surface, cfg.seed, r.n, r.replica);
            assert_eq!(r.energy, Some(green_energy(&k, &pts)));
        }
    }
    for row in &table.rows {
        let l = row.implied_constant.unwrap();
        assert!(l.value >= 0.0);
        assert!(row.mean_abs_energy.is_some());
    }
    assert!(report.predicted_slope > 0.0);
}

#[test]
fn rows_are_streamed_in_grid_order() {
    let cfg = small(SurfaceModel::FlatTorus, vec![2, 4, 8], 4, 1);
    let mut seen = Vec::new();
    let table = w2_scan(&cfg, |row| seen.push(row.n)).unwrap();
    assert_eq!(seen, vec![2, 4, 8]);
    for row in &table.rows {
        assert!(row.ci[0] <= row.mean_w2.value && row.mean_w2.value <= row.ci[1]);
        assert_eq!(row.replicas, 4);
    }
}

#[test]
fn manifest_reproduces_the_run() {
    let mut cfg = small(SurfaceModel::FlatTorus, vec![4, 8], 6, 13);
    cfg.solver = SolverOptions {
        choice: SolverChoice::Assignment,
        ..SolverOptions::default()
    };
    let table = scan(&cfg);
    let mut m = ExperimentManifest::new("w2-scan", &cfg, 10);
    m.rows = table.rows.clone();
    let json = m.to_json().unwrap();
    let back = ExperimentManifest::from_json(&json).unwrap();
    assert_eq!(back, m);
    assert_eq!(back.to_json().unwrap(), json);
    assert_eq!(scan(&back.config()).rows, table.rows);
}

#[test]
fn per_config_ratio_is_well_defined() {
    let k = GreenKernel::torus();
    let mut s = RandomStream::from_parts(99, "ratio", 0);
    let pts = SurfaceModel::FlatTorus.sample_uniform(&mut s, 1024);
    let r = per_config_ratio(&k, &pts, &SolverOptions::default(), None).unwrap();
    assert!(r.is_finite() && r > 0.0, "{r}");

    let nodes = SurfaceModel::FlatTorus
        .quadrature(8)
        .unwrap()
        .into_parts()
        .0;
    let r = per_config_ratio(&k, &nodes, &SolverOptions::default(), Some(8)).unwrap();
    assert!(r.abs() < 1e-6, "{r}");

    let mut twice = pts[..10].to_vec();
    twice.push(pts[0]);
    assert_eq!(
        per_config_ratio(&k, &twice, &SolverOptions::default(), None).unwrap(),
        0.0
    );
    assert!(per_config_ratio(&k, &pts[..1], &SolverOptions::default(), None).is_err());
}

#[test]
fn invalid_configurations_are_rejected() {
    for grid in [vec![], vec![1, 4], vec![8, 4], vec![4, 4]] {
        assert!(w2_scan(&small(SurfaceModel::FlatTorus, grid, 4, 0), |_| {}).is_err());
    }
    assert!(w2_scan(&small(SurfaceModel::FlatTorus, vec![4], 1, 0), |_| {}).is_err());
}
