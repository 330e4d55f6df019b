use greenw2::energy::{energy_moments, green_energy};
use greenw2::green::{certified_sigma2, GreenKernel};
use greenw2::rng::RandomStream;
use greenw2::surfaces::{Point, SurfaceModel};
use proptest::prelude::*;

fn kernels() -> [GreenKernel; 2] {
    [GreenKernel::torus(), GreenKernel::sphere()]
}

/// Ordered double loop over i ≠ j.
fn naive(k: &GreenKernel, pts: &[Point]) -> f64 {
    let mut s = 0.0;
    for (i, x) in pts.iter().enumerate() {
        for (j, y) in pts.iter().enumerate() {
            if i != j {
                s += k.eval(x, y).unwrap();
            }
        }
    }
    s
}

#[test]
fn matches_naive_sum() {
    for k in kernels() {
        for (t, n) in [2usize, 20, 77, 200].into_iter().enumerate() {
            let mut s = RandomStream::from_parts(1, "naive", t as u64);
            let pts = k.surface().sample_uniform(&mut s, n);
            let (a, b) = (green_energy(&k, &pts), naive(&k, &pts));
            assert!(
                (a - b).abs() <= 1e-10,
                "{:?} n = {n}: {a} vs {b}",
                k.surface()
            );
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn permutation_invariant(seed in any::<u64>(), n in 2usize..40, shuffle in any::<u64>(), sphere in any::<bool>()) {
        let k = if sphere { GreenKernel::sphere() } else { GreenKernel::torus() };
        let mut s = RandomStream::from_parts(seed, "perm", 0);
        let pts = k.surface().sample_uniform(&mut s, n);
        let mut shuffled = pts.clone();
        let mut r = RandomStream::from_parts(shuffle, "shuffle", 0);
        for i in (1..n).rev() {
            shuffled.swap(i, r.below(i + 1));
        }
        prop_assert_eq!(green_energy(&k, &pts).to_bits(), green_energy(&k, &shuffled).to_bits());
    }

    #[test]
    fn constant_shift(seed in any::<u64>(), n in 2usize..40, c in -5.0..5.0f64) {
        let k = GreenKernel::torus();
        let mut s = RandomStream::from_parts(seed, "shift", 0);
        let pts = k.surface().sample_uniform(&mut s, n);
        let nf = n as f64;
        let shifted = green_energy(&k.clone().with_offset(c), &pts);
        let expected = green_energy(&k, &pts) + nf * (nf - 1.0) * c;
        prop_assert!((shifted - expected).abs() <= 1e-11 * (1.0 + expected.abs()), "{} {}", shifted, expected);
    }
}

#[test]
fn moments_follow_the_identities() {
    for k in kernels() {
        let sigma = certified_sigma2(k.surface()).value.sqrt();
        for n in [5usize, 10, 50] {
            let rep = energy_moments(&k, n, 4000, 17).unwrap();
            assert_eq!(rep.coincidences, 0);
            assert!(rep.mean.se >= 0.0 && rep.second_moment.se >= 0.0);
            assert!(
                rep.mean.z_score(0.0) <= 3.0,
                "{:?} n = {n}: mean {:?}",
                k.surface(),
                rep.mean
            );
            assert!(
                rep.ratio.z_score(1.0) <= 3.0,
                "{:?} n = {n}: ratio {:?}",
                k.surface(),
                rep.ratio
            );
            assert!(rep.mean_abs.value <= 2f64.sqrt() * sigma * n as f64 + 3.0 * rep.mean_abs.se);
            let nf = n as f64;
            approx::assert_relative_eq!(
                rep.predicted_second_moment,
                2.0 * nf * (nf - 1.0) * sigma * sigma,
                max_relative = 1e-14
            );
        }
    }
    let rep = energy_moments(&GreenKernel::sphere(), 2, 100, 0).unwrap();
    assert!((rep.predicted_second_moment - 4.0).abs() < 1e-9);
}

#[test]
fn moments_are_reproducible() {
    let k = GreenKernel::torus();
    let a = energy_moments(&k, 10, 500, 3).unwrap();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(3)
        .build()
        .unwrap();
    let b = pool.install(|| energy_moments(&k, 10, 500, 3).unwrap());
    assert_eq!(a, b);
    assert_ne!(a, energy_moments(&k, 10, 500, 4).unwrap());
    assert_eq!(SurfaceModel::FlatTorus, a.surface);
}
