//! Log-domain Sinkhorn iterations with ε-scaling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::CostRows;

/// Geometric sequence of regularization strengths start, start·factor, …,
/// ending exactly at `end`, in units of the mean entry of the cost matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub factor: f64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        EpsilonSchedule {
            start: 1.0,
            end: 3e-4,
            factor: 0.5,
        }
    }
}

impl EpsilonSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.end > 0.0 && self.start >= self.end && self.factor > 0.0 && self.factor < 1.0) {
            return Err(Error::Input(format!(
                "ε schedule needs start ≥ end > 0 and factor in (0, 1), got {}:{}:{}",
                self.start, self.end, self.factor
            )));
        }
        Ok(())
    }

    pub fn steps(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut eps = self.start;
        while eps > self.end * (1.0 + 1e-12) {
            out.push(eps);
            eps *= self.factor;
        }
        out.push(self.end);
        out
    }

    /// Parses `start:end:factor`.
    pub fn parse(s: &str) -> Result<EpsilonSchedule> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || Error::Input(format!("ε schedule `{s}` is not start:end:factor"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let v: Vec<f64> = parts
            .iter()
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        let sched = EpsilonSchedule {
            start: v[0],
            end: v[1],
            factor: v[2],
        };
        sched.validate()?;
        Ok(sched)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropicOptions {
    pub schedule: EpsilonSchedule,
    /// L1 tolerance on the source marginal at the final ε.
    pub tolerance: f64,
    /// Iteration cap per ε step.
    pub max_iterations: usize,
    /// Over-relaxation factor in [1, 2); 1 is plain Sinkhorn.
    pub relaxation: f64,
}

impl Default for EntropicOptions {
    fn default() -> Self {
        EntropicOptions {
            schedule: EpsilonSchedule::default(),
            tolerance: 1e-6,
            max_iterations: 100_000,
            relaxation: 1.9,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EntropicOutput {
    /// ⟨P, C⟩ for the final plan.
    pub value: f64,
    /// L1 distance of the plan's row sums from `a` (columns are exact).
    pub violation: f64,
    /// Final ε in cost units.
    pub epsilon: f64,
    pub iterations: usize,
}

/// Cost matrices up to this many entries are stored rather than recomputed
/// every sweep.
const DENSE_LIMIT: usize = 1 << 24;

const STALL_WINDOW: usize = 200;

enum Rows<'a> {
    Dense(Vec<f64>, usize),
    Lazy(&'a dyn CostRows, Vec<f64>),
}

impl Rows<'_> {
    fn row(&mut self, i: usize) -> &[f64] {
        match self {
            Rows::Dense(data, m) => &data[i * *m..(i + 1) * *m],
            Rows::Lazy(cost, buf) => {
                cost.fill_row(i, buf);
                buf
            }
        }
    }
}

/// Sinkhorn between weights `a` (rows) and `b` (columns), all positive.
pub fn sinkhorn(
    a: &[f64],
    b: &[f64],
    cost: &dyn CostRows,
    opts: &EntropicOptions,
) -> Result<EntropicOutput> {
    opts.schedule.validate()?;
    if !(1.0..2.0).contains(&opts.relaxation) || !(opts.tolerance > 0.0) || opts.max_iterations == 0
    {
        return Err(Error::Input("invalid entropic options".into()));
    }
    let n = a.len();
    let m = b.len();
    let mut rows = if n.saturating_mul(m) <= DENSE_LIMIT {
        let mut data = vec![0.0; n * m];
        for (i, r) in data.chunks_mut(m.max(1)).enumerate().take(n) {
            cost.fill_row(i, r);
        }
        Rows::Dense(data, m)
    } else {
        Rows::Lazy(cost, vec![0.0; m])
    };
    let mut total = crate::numerics::NeumaierSum::default();
    for i in 0..n {
        total.add(rows.row(i).iter().sum());
    }
    let scale = match total.sum() / (n * m) as f64 {
        x if x > 0.0 && x.is_finite() => x,
        _ => 1.0,
    };
    let log_a: Vec<f64> = a.iter().map(|x| x.ln()).collect();
    let log_b: Vec<f64> = b.iter().map(|x| x.ln()).collect();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut t = vec![0.0; m];
    let mut col_max = vec![0.0; m];
    let mut col_sum = vec![0.0; m];
    let steps: Vec<f64> = opts.schedule.steps().iter().map(|e| e * scale).collect();
    let mut iterations = 0;
    for (s, &eps) in steps.iter().enumerate() {
        let last = s + 1 == steps.len();
        // intermediate steps only need a rough fit before ε shrinks
        let tol = if last {
            opts.tolerance
        } else {
            opts.tolerance.max(1e-3)
        };
        // relaxation is only safe close to the fixed point
        let mut omega = 1.0;
        let (mut best, mut window_best) = (f64::INFINITY, f64::INFINITY);
        let mut engaged = false;
        let mut k = 0;
        loop {
            // f-update; the change in f gives the row marginal error of the
            // current plan
            let mut violation = 0.0;
            for i in 0..n {
                let row = rows.row(i);
                let mut mx = f64::NEG_INFINITY;
                for j in 0..m {
                    let v = (g[j] - row[j]) / eps + log_b[j];
                    t[j] = v;
                    mx = mx.max(v);
                }
                let sum: f64 = t.iter().map(|v| (v - mx).exp()).sum();
                let new = -eps * (mx + sum.ln());
                violation += a[i] * ((f[i] - new) / eps).exp_m1().abs();
                f[i] += omega * (new - f[i]);
            }
            // g-update with per-column streaming log-sum-exp
            col_max.fill(f64::NEG_INFINITY);
            col_sum.fill(0.0);
            for i in 0..n {
                let row = rows.row(i);
                for j in 0..m {
                    let v = (f[i] - row[j]) / eps + log_a[i];
                    if v > col_max[j] {
                        col_sum[j] = col_sum[j] * (col_max[j] - v).exp() + 1.0;
                        col_max[j] = v;
                    } else {
                        col_sum[j] += (v - col_max[j]).exp();
                    }
                }
            }
            for j in 0..m {
                let new = -eps * (col_max[j] + col_sum[j].ln());
                g[j] += omega * (new - g[j]);
            }
            k += 1;
            iterations += 1;
            if !violation.is_finite() {
                return Err(Error::Convergence {
                    iterations,
                    violation,
                });
            }
            if violation <= tol && k > 1 {
                if omega == 1.0 {
                    break;
                }
                // finish with plain sweeps so the reported plan is a
                // Sinkhorn iterate
                omega = 1.0;
                engaged = true;
                continue;
            }
            if violation < 0.1 && !engaged {
                omega = opts.relaxation;
                engaged = true;
            }
            log::trace!("ε {eps:.3e} k {k} ω {omega} violation {violation:.3e}");
            best = best.min(violation);
            if k % STALL_WINDOW == 0 {
                // over-relaxation can stall; back off towards plain Sinkhorn
                if best > 0.99 * window_best {
                    omega = 1.0 + 0.5 * (omega - 1.0);
                }
                window_best = best;
            }
            if k >= opts.max_iterations {
                if last {
                    return Err(Error::Convergence {
                        iterations,
                        violation,
                    });
                }
                break;
            }
        }
    }
    let eps = *steps.last().unwrap();
    // one plain g-update makes the columns exact; then measure the rows
    col_max.fill(f64::NEG_INFINITY);
    col_sum.fill(0.0);
    for i in 0..n {
        let row = rows.row(i);
        for j in 0..m {
            let v = (f[i] - row[j]) / eps + log_a[i];
            if v > col_max[j] {
                col_sum[j] = col_sum[j] * (col_max[j] - v).exp() + 1.0;
                col_max[j] = v;
            } else {
                col_sum[j] += (v - col_max[j]).exp();
            }
        }
    }
    for j in 0..m {
        g[j] = -eps * (col_max[j] + col_sum[j].ln());
    }
    let mut value = crate::numerics::NeumaierSum::default();
    let mut violation = 0.0;
    for i in 0..n {
        let row = rows.row(i);
        let (mut acc, mut mass) = (0.0, 0.0);
        for j in 0..m {
            let c = row[j];
            let p = ((f[i] + g[j] - c) / eps + log_a[i] + log_b[j]).exp();
            acc += c * p;
            mass += p;
        }
        value.add(acc);
        violation += (mass - a[i]).abs();
    }
    Ok(EntropicOutput {
        value: value.sum(),
        violation,
        epsilon: eps,
        iterations,
    })
}
