//! Small numerical building blocks: the exponential integral, Gauss-Legendre
//! rules, Legendre polynomials and compensated summation.

use std::f64::consts::PI;

pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Exponential integral E1(x) = ∫_x^∞ e^{-t}/t dt for x > 0.
///
/// Power series below 1, modified Lentz continued fraction above.
/// Relative accuracy is near machine precision on the whole range.
pub fn exp_integral_e1(x: f64) -> f64 {
    debug_assert!(x > 0.0);
    if x > 700.0 {
        return 0.0;
    }
    if x <= 1.0 {
        let mut sum = 0.0;
        let mut term = 1.0;
        let mut k = 1.0;
        loop {
            term *= -x / k;
            let add = term / k;
            sum += add;
            if add.abs() < 1e-17 * sum.abs().max(1e-300) {
                break;
            }
            k += 1.0;
        }
        -EULER_GAMMA - x.ln() - sum
    } else {
        // E1(x) = e^{-x} · 1/(x+1- 1/(x+3- 4/(x+5- ...)))
        let tiny = 1e-300;
        let mut b = x + 1.0;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        let mut i = 1.0;
        loop {
            let an = -i * i;
            b += 2.0;
            d = 1.0 / (an * d + b);
            c = b + an / c;
            let del = c * d;
            h *= del;
            if (del - 1.0).abs() < 1e-16 {
                break;
            }
            i += 1.0;
        }
        h * (-x).exp()
    }
}

/// Nodes and weights of the n-point Gauss-Legendre rule on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp;
        loop {
            let (p, d) = legendre_with_derivative(n, z);
            dp = d;
            let z1 = z;
            z = z1 - p / d;
            if (z - z1).abs() < 1e-15 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, z);
        dp = if d != 0.0 { d } else { dp };
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let nf = n as f64;
    (p1, nf * (z * p1 - p0) / (z * z - 1.0))
}

/// Legendre polynomial P_l(t) by the three-term recurrence.
pub fn legendre(l: usize, t: f64) -> f64 {
    match l {
        0 => 1.0,
        1 => t,
        _ => {
            let (mut p0, mut p1) = (1.0, t);
            for k in 2..=l {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * t * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            p1
        }
    }
}

/// ∫_0^1 f(u) du for integrands with an integrable (logarithmic or weaker)
/// endpoint singularity at u = 0, by composite Gauss-Legendre on
/// geometrically graded panels [2^{-k-1}, 2^{-k}], k < 110. Halving keeps
/// the singularity far enough from each panel for Gauss-Legendre to
/// converge geometrically; the omitted [0, 2^{-110}] is far below rounding
/// for log-type integrands.
pub fn integrate_graded(f: impl Fn(f64) -> f64, order: usize) -> f64 {
    let (x, w) = gauss_legendre(order);
    let levels = 110;
    let ratio: f64 = 0.5;
    let mut total = NeumaierSum::default();
    let mut hi = 1.0;
    for _ in 0..levels {
        let lo = hi * ratio;
        let half = 0.5 * (hi - lo);
        let mid = 0.5 * (hi + lo);
        for (xi, wi) in x.iter().zip(&w) {
            total.add(wi * half * f(mid + half * xi));
        }
        hi = lo;
    }
    total.sum()
}

/// Gauss-Legendre on [a, b] split into `panels` equal pieces.
pub fn integrate_panels(
    f: impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    panels: usize,
    order: usize,
) -> f64 {
    let (x, w) = gauss_legendre(order);
    let h = (b - a) / panels as f64;
    let mut total = NeumaierSum::default();
    for p in 0..panels {
        let lo = a + h * p as f64;
        let mid = lo + 0.5 * h;
        for (xi, wi) in x.iter().zip(&w) {
            total.add(wi * 0.5 * h * f(mid + 0.5 * h * xi));
        }
    }
    total.sum()
}

/// Neumaier's variant of Kahan compensated summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn sum(&self) -> f64 {
        self.sum + self.comp
    }

    pub fn merge(&mut self, other: &NeumaierSum) {
        self.add(other.sum);
        self.add(other.comp);
    }
}

impl std::iter::FromIterator<f64> for NeumaierSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = NeumaierSum::default();
        for x in iter {
            s.add(x);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn e1_reference_values() {
        // values from Abramowitz & Stegun table 5.1
        assert_relative_eq!(
            exp_integral_e1(0.5),
            0.559_773_594_776_160_8,
            max_relative = 1e-14
        );
        assert_relative_eq!(
            exp_integral_e1(1.0),
            0.219_383_934_395_520_3,
            max_relative = 1e-14
        );
        assert_relative_eq!(
            exp_integral_e1(2.0),
            0.048_900_510_708_061_12,
            max_relative = 1e-14
        );
        assert_relative_eq!(
            exp_integral_e1(10.0),
            4.156_968_929_685_324e-6,
            max_relative = 1e-13
        );
    }

    #[test]
    fn e1_continuous_across_branch_switch() {
        let below = exp_integral_e1(1.0 - 1e-12);
        let above = exp_integral_e1(1.0 + 1e-12);
        assert!((below - above).abs() < 1e-11);
    }

    #[test]
    fn e1_matches_quadrature() {
        for &x in &[0.01, 0.3, 3.0, 25.0] {
            // substitute t = x + s/(1-s)
            let q = integrate_panels(
                |s: f64| {
                    let t = x + s / (1.0 - s);
                    (-t).exp() / t / ((1.0 - s) * (1.0 - s))
                },
                0.0,
                1.0 - 1e-12,
                400,
                16,
            );
            assert_relative_eq!(exp_integral_e1(x), q, max_relative = 1e-10);
        }
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(10);
        let s: f64 = w.iter().sum();
        assert_relative_eq!(s, 2.0, epsilon = 1e-14);
        let m18: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(18)).sum();
        assert_relative_eq!(m18, 2.0 / 19.0, epsilon = 1e-14);
    }

    #[test]
    fn legendre_orthogonality() {
        let (x, w) = gauss_legendre(40);
        for l in 0..8 {
            for k in 0..8 {
                let s: f64 = x
                    .iter()
                    .zip(&w)
                    .map(|(x, w)| w * legendre(l, *x) * legendre(k, *x))
                    .sum();
                let expect = if l == k {
                    2.0 / (2 * l + 1) as f64
                } else {
                    0.0
                };
                assert!((s - expect).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn graded_rule_handles_log_singularity() {
        // ∫_0^1 -ln u du = 1, ∫_0^1 ln²u du = 2
        assert_relative_eq!(integrate_graded(|u| -u.ln(), 12), 1.0, epsilon = 1e-13);
        assert_relative_eq!(
            integrate_graded(|u| u.ln().powi(2), 12),
            2.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn neumaier_recovers_cancellation() {
        let s: NeumaierSum = [1.0, 1e100, 1.0, -1e100].into_iter().collect();
        assert_eq!(s.sum(), 2.0);
    }
}
