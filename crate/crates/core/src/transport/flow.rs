//! Exact transportation by successive shortest paths on integer masses.
//!
//! Sources push integral supply to sinks along shortest augmenting paths in
//! the residual graph, with node potentials keeping reduced costs
//! nonnegative so every path search is a Dijkstra run. At termination the
//! potentials are an optimal dual solution.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

/// Output of [`min_cost_flow`]: integral flow triplets and node potentials.
#[derive(Debug, Clone)]
pub struct FlowSolution {
    /// (source, sink, amount) for every arc carrying flow.
    pub flows: Vec<(usize, usize, u64)>,
    /// Potentials p with c_ij + p_source(i) − p_sink(j) ≥ 0 on every arc.
    pub source_potential: Vec<f64>,
    pub sink_potential: Vec<f64>,
    pub augmentations: usize,
}

#[derive(Clone, Copy)]
struct Key(f64);
impl PartialEq for Key {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other).is_eq()
    }
}
impl Eq for Key {}
impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Key {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

const NONE: usize = usize::MAX;

/// Min-cost flow on the complete bipartite graph with costs `cost[i*m + j]`.
/// Supplies and demands must have equal totals.
pub fn min_cost_flow(supply: &[u64], demand: &[u64], cost: &[f64]) -> Result<FlowSolution> {
    let n = supply.len();
    let m = demand.len();
    if cost.len() != n * m {
        return Err(Error::Input(format!(
            "cost has {} entries, expected {n}×{m}",
            cost.len()
        )));
    }
    let total: u128 = supply.iter().map(|&a| a as u128).sum();
    if total != demand.iter().map(|&b| b as u128).sum::<u128>() {
        return Err(Error::Input("supply and demand totals differ".into()));
    }
    let mut excess = supply.to_vec();
    let mut deficit = demand.to_vec();
    let mut ps = vec![0.0; n];
    let mut pt: Vec<f64> = (0..m)
        .map(|j| {
            (0..n)
                .map(|i| cost[i * m + j])
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    // reverse residual arcs: sink j → source i for every positive flow
    let mut on_sink: Vec<Vec<(usize, u64)>> = vec![Vec::new(); m];

    let mut dist = vec![f64::INFINITY; n + m];
    let mut pred = vec![NONE; n + m];
    let mut done = vec![false; n + m];
    let mut touched: Vec<usize> = Vec::new();
    let mut heap: BinaryHeap<Reverse<(Key, usize)>> = BinaryHeap::new();
    let mut augmentations = 0;

    let mut remaining: u128 = total;
    while remaining > 0 {
        heap.clear();
        for &v in &touched {
            dist[v] = f64::INFINITY;
            pred[v] = NONE;
            done[v] = false;
        }
        touched.clear();
        for i in 0..n {
            if excess[i] > 0 {
                dist[i] = 0.0;
                touched.push(i);
                heap.push(Reverse((Key(0.0), i)));
            }
        }
        // sinks with unmet demand are endpoints: they are never expanded, and
        // nothing at or beyond the best one found so far needs expanding
        let mut target = NONE;
        let mut bound = f64::INFINITY;
        while let Some(Reverse((Key(d), v))) = heap.pop() {
            if d >= bound {
                break;
            }
            if done[v] || d > dist[v] {
                continue;
            }
            done[v] = true;
            if v < n {
                let i = v;
                let row = &cost[i * m..(i + 1) * m];
                for j in 0..m {
                    let w = n + j;
                    let nd = d + (row[j] + ps[i] - pt[j]).max(0.0);
                    if nd >= dist[w] || nd >= bound || done[w] {
                        continue;
                    }
                    if dist[w] == f64::INFINITY {
                        touched.push(w);
                    }
                    dist[w] = nd;
                    pred[w] = i;
                    if deficit[j] > 0 {
                        bound = nd;
                        target = j;
                    } else {
                        heap.push(Reverse((Key(nd), w)));
                    }
                }
            } else {
                let j = v - n;
                for &(i, _) in &on_sink[j] {
                    if done[i] {
                        continue;
                    }
                    let nd = d + (-cost[i * m + j] + pt[j] - ps[i]).max(0.0);
                    if nd < dist[i] && nd < bound {
                        if dist[i] == f64::INFINITY {
                            touched.push(i);
                        }
                        dist[i] = nd;
                        pred[i] = v;
                        heap.push(Reverse((Key(nd), i)));
                    }
                }
            }
        }
        if target == NONE {
            return Err(Error::Solver(
                "no augmenting path although mass remains".into(),
            ));
        }
        // nodes the search did not finish (or reach) shift by the full distance
        let reach = dist[n + target];
        for (i, p) in ps.iter_mut().enumerate() {
            *p += dist[i].min(reach);
        }
        for (j, p) in pt.iter_mut().enumerate() {
            *p += dist[n + j].min(reach);
        }

        // bottleneck along the path: root excess, target deficit, reverse flows
        let mut amount = deficit[target];
        let mut w = n + target;
        loop {
            let i = pred[w];
            if pred[i] == NONE {
                amount = amount.min(excess[i]);
                break;
            }
            let j = pred[i] - n;
            let f = on_sink[j]
                .iter()
                .find(|e| e.0 == i)
                .map(|e| e.1)
                .unwrap_or(0);
            amount = amount.min(f);
            w = pred[i];
        }
        debug_assert!(amount > 0);
        let mut w = n + target;
        loop {
            let i = pred[w];
            let j = w - n;
            match on_sink[j].iter_mut().find(|e| e.0 == i) {
                Some(e) => e.1 += amount,
                None => on_sink[j].push((i, amount)),
            }
            if pred[i] == NONE {
                excess[i] -= amount;
                break;
            }
            let jr = pred[i] - n;
            let pos = on_sink[jr]
                .iter()
                .position(|e| e.0 == i)
                .expect("reverse arc carries flow");
            on_sink[jr][pos].1 -= amount;
            if on_sink[jr][pos].1 == 0 {
                on_sink[jr].swap_remove(pos);
            }
            w = pred[i];
        }
        deficit[target] -= amount;
        remaining -= amount as u128;
        augmentations += 1;
    }

    let mut flows = Vec::new();
    for (j, list) in on_sink.iter().enumerate() {
        for &(i, f) in list {
            flows.push((i, j, f));
        }
    }
    flows.sort_unstable();
    Ok(FlowSolution {
        flows,
        source_potential: ps,
        sink_potential: pt,
        augmentations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two() {
        // cheapest: 0→1 and 1→0
        let cost = [5.0, 1.0, 1.0, 5.0];
        let sol = min_cost_flow(&[3, 3], &[3, 3], &cost).unwrap();
        assert_eq!(sol.flows, vec![(0, 1, 3), (1, 0, 3)]);
    }

    #[test]
    fn needs_a_reverse_arc() {
        // greedy sends source 0 to sink 0; the optimum reroutes it
        let cost = [1.0, 2.0, 1.0, 10.0];
        let sol = min_cost_flow(&[1, 1], &[1, 1], &cost).unwrap();
        let value: f64 = sol
            .flows
            .iter()
            .map(|&(i, j, f)| f as f64 * cost[i * 2 + j])
            .sum();
        assert_eq!(value, 3.0);
        for i in 0..2 {
            for j in 0..2 {
                assert!(
                    cost[i * 2 + j] + sol.source_potential[i] - sol.sink_potential[j] >= -1e-12
                );
            }
        }
    }

    #[test]
    fn unbalanced_totals_rejected() {
        assert!(min_cost_flow(&[2], &[1], &[0.0]).is_err());
    }
}
