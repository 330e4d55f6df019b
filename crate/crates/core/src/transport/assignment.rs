//! Exact W₂² between n equal-mass sources and M equal-mass targets when n
//! divides M, as an assignment of targets to the c = M/n slots of each
//! source.
//!
//! This is a forward auction with ε-scaling in which targets bid for the
//! cheapest slot of a source. A bid raises that slot's price by the margin
//! over the best *other* source plus ε, so each target is within ε of its
//! best class at the current class prices (the cheapest slot price of each
//! source). That condition survives later price rises, and it bounds the
//! duality gap by ε per target. Targets only consider their k nearest
//! sources. Every source left out is at least as far as the (k+1)-th
//! nearest, and its class price is at least the lowest price in its
//! spatial cluster; the bid uses the resulting lower bound. A target whose
//! best candidate is beyond that bound has its list widened.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::NeumaierSum;
use crate::surfaces::{Point, SurfaceModel};

use super::neighbors::NeighborIndex;

const NONE: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssignmentOptions {
    /// Candidate sources per target.
    pub neighbors: usize,
    /// ε is divided by this between phases.
    pub epsilon_reduction: f64,
    /// Target duality gap relative to a lower estimate of the value.
    pub relative_gap: f64,
    /// Starting ε as a fraction of the mean spread of candidate distances.
    pub initial_epsilon: f64,
    /// Same, when prices are carried over from a coarser level.
    pub warm_epsilon: f64,
}

impl Default for AssignmentOptions {
    fn default() -> Self {
        AssignmentOptions {
            neighbors: 12,
            epsilon_reduction: 8.0,
            relative_gap: 1e-7,
            initial_epsilon: 0.05,
            warm_epsilon: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AssignmentOutput {
    /// Mean squared distance of the final assignment.
    pub value: f64,
    /// Value minus a dual lower bound; never negative beyond rounding.
    pub gap: f64,
    pub bids: u64,
    pub phases: usize,
    /// Targets whose candidate list had to be widened.
    pub widened: usize,
}

/// Per-target candidate lists: k entries inline, or a longer list in the
/// overflow arena once widened.
struct Candidates {
    k: usize,
    ids: Vec<u32>,
    cost: Vec<f64>,
    /// lower bound on d² + price for every source left out (prices only
    /// rise, so it stays valid) and on d² alone
    bound: Vec<f64>,
    beyond: Vec<f64>,
    /// (start, len) into the overflow arena; len 0 means not widened
    wide: Vec<(u32, u32)>,
    wide_ids: Vec<u32>,
    wide_cost: Vec<f64>,
    widened: usize,
}

impl Candidates {
    #[inline]
    fn get(&self, j: usize) -> (&[u32], &[f64]) {
        let (start, len) = self.wide[j];
        if len > 0 {
            let r = start as usize..(start + len) as usize;
            return (&self.wide_ids[r.clone()], &self.wide_cost[r]);
        }
        (
            &self.ids[j * self.k..(j + 1) * self.k],
            &self.cost[j * self.k..(j + 1) * self.k],
        )
    }

    fn outside(&self, j: usize, t: &Point, clusters: &Clusters) -> f64 {
        self.bound[j].max(clusters.lower_bound(t, self.beyond[j]))
    }

    fn len(&self, j: usize) -> usize {
        match self.wide[j].1 {
            0 => self.k,
            l => l as usize,
        }
    }

    fn widen(&mut self, j: usize, list: &[(u32, f64)], bound: f64, beyond: f64) {
        if self.wide[j].1 == 0 {
            self.widened += 1;
        }
        self.wide[j] = (self.wide_ids.len() as u32, list.len() as u32);
        self.wide_ids.extend(list.iter().map(|e| e.0));
        self.wide_cost.extend(list.iter().map(|e| e.1));
        self.bound[j] = bound;
        self.beyond[j] = beyond;
    }
}

/// Min-heaps of slot prices, one per source, stored contiguously, with the
/// heap tops mirrored in `class` for locality.
struct Slots {
    c: usize,
    price: Vec<f64>,
    owner: Vec<u32>,
    class: Vec<f64>,
}

impl Slots {
    #[inline]
    fn min_price(&self, i: usize) -> f64 {
        self.class[i]
    }

    fn sift_down(&mut self, base: usize, mut pos: usize) {
        let c = self.c;
        loop {
            let l = 2 * pos + 1;
            if l >= c {
                break;
            }
            let r = l + 1;
            let child = if r < c && self.price[base + r] < self.price[base + l] {
                r
            } else {
                l
            };
            if self.price[base + child] >= self.price[base + pos] {
                break;
            }
            self.price.swap(base + pos, base + child);
            self.owner.swap(base + pos, base + child);
            pos = child;
        }
    }

    fn heapify(&mut self, i: usize) {
        for start in (0..self.c / 2).rev() {
            self.sift_down(i * self.c, start);
        }
        self.class[i] = self.price[i * self.c];
    }

    /// Give the cheapest slot of `i` to `j` at `price`; returns the evicted owner.
    fn replace_min(&mut self, i: usize, price: f64, j: u32) -> u32 {
        let base = i * self.c;
        let evicted = self.owner[base];
        self.price[base] = price;
        self.owner[base] = j;
        self.sift_down(base, 0);
        self.class[i] = self.price[base];
        evicted
    }
}

/// Sources grouped around a few centres, with the lowest class price seen
/// in each group. Prices only rise, so stale minima remain lower bounds.
struct Clusters {
    centers: Vec<Point>,
    radius: Vec<f64>,
    members: Vec<Vec<u32>>,
    min_price: Vec<f64>,
}

impl Clusters {
    fn new(sources: &[Point]) -> Clusters {
        let centers = match sources[0] {
            Point::Torus(_) => SurfaceModel::FlatTorus.quadrature(8),
            Point::Sphere(_) => SurfaceModel::UnitSphere.quadrature(64),
        }
        .expect("fixed quadrature sizes are valid")
        .into_parts()
        .0;
        let mut members = vec![Vec::new(); centers.len()];
        let mut radius = vec![0.0f64; centers.len()];
        for (i, s) in sources.iter().enumerate() {
            let (best, d) = centers
                .iter()
                .enumerate()
                .map(|(c, p)| (c, s.distance(p)))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .expect("centres exist");
            members[best].push(i as u32);
            radius[best] = radius[best].max(d);
        }
        let min_price = vec![0.0; centers.len()];
        Clusters {
            centers,
            radius,
            members,
            min_price,
        }
    }

    fn refresh(&mut self, slots: &Slots) {
        for (mp, list) in self.min_price.iter_mut().zip(&self.members) {
            *mp = list
                .iter()
                .map(|&i| slots.min_price(i as usize))
                .fold(f64::INFINITY, f64::min);
        }
    }

    /// Lower bound on d(t, s)² + price(s) over sources s at squared
    /// distance at least `beyond` from t.
    fn lower_bound(&self, t: &Point, beyond: f64) -> f64 {
        let mut lb = f64::INFINITY;
        for c in 0..self.centers.len() {
            if self.members[c].is_empty() {
                continue;
            }
            let gap = (t.distance(&self.centers[c]) - self.radius[c]).max(0.0);
            // shaved so the bound stays below the true distance after rounding
            let near = gap * gap * (1.0 - 1e-12);
            lb = lb.min(near.max(beyond) + self.min_price[c]);
        }
        lb
    }
}

/// (best source, its distance², best value, second best value).
#[inline]
fn best_two(ids: &[u32], costs: &[f64], slots: &Slots) -> (u32, f64, f64, f64) {
    let (mut w1, mut w2, mut i1, mut d1) = (f64::INFINITY, f64::INFINITY, 0u32, 0.0);
    for (&i, &d) in ids.iter().zip(costs) {
        let v = d + slots.min_price(i as usize);
        if v < w1 {
            w2 = w1;
            w1 = v;
            i1 = i;
            d1 = d;
        } else if v < w2 {
            w2 = v;
        }
    }
    (i1, d1, w1, w2)
}

/// Best value over candidate classes other than `skip`, capped by `bound`.
#[inline]
fn best_other(ids: &[u32], costs: &[f64], skip: u32, bound: f64, slots: &Slots) -> f64 {
    ids.iter()
        .zip(costs)
        .filter(|&(&i, _)| i != skip)
        .map(|(&i, &d)| d + slots.min_price(i as usize))
        .fold(bound, f64::min)
}

/// Optimal assignment cost between `sources` (mass 1/n each) and `targets`
/// (mass 1/M each).
pub fn assign(
    sources: &[Point],
    targets: &[Point],
    opts: &AssignmentOptions,
) -> Result<AssignmentOutput> {
    assign_from(sources, targets, opts, None).map(|(out, _)| out)
}

/// Solves on each target set in turn, coarse to fine, seeding the class
/// prices of each level with those of the previous one. Only the last
/// level's result is returned.
pub fn assign_multilevel(
    sources: &[Point],
    levels: &[&[Point]],
    opts: &AssignmentOptions,
) -> Result<AssignmentOutput> {
    let mut prices: Option<Vec<f64>> = None;
    let mut out = None;
    for targets in levels {
        let (o, p) = assign_from(sources, targets, opts, prices.as_deref())?;
        prices = Some(p);
        out = Some(o);
    }
    out.ok_or_else(|| Error::Input("no target levels".into()))
}

fn assign_from(
    sources: &[Point],
    targets: &[Point],
    opts: &AssignmentOptions,
    init: Option<&[f64]>,
) -> Result<(AssignmentOutput, Vec<f64>)> {
    let n = sources.len();
    let m = targets.len();
    if n == 0 || m == 0 || !m.is_multiple_of(n) {
        return Err(Error::Input(format!(
            "{n} sources do not evenly divide {m} targets"
        )));
    }
    if m >= NONE as usize {
        return Err(Error::Input("too many targets".into()));
    }
    let valid = opts.neighbors >= 1
        && opts.epsilon_reduction > 1.0
        && opts.relative_gap > 0.0
        && opts.initial_epsilon > 0.0
        && opts.warm_epsilon > 0.0;
    if !valid {
        return Err(Error::Input("invalid assignment options".into()));
    }
    let c = m / n;
    let init: Vec<f64> = match init {
        Some(p) if p.len() == n => {
            let low = p.iter().copied().fold(f64::INFINITY, f64::min);
            p.iter().map(|&x| x - low).collect()
        }
        Some(_) => {
            return Err(Error::Input(
                "initial prices do not match the sources".into(),
            ))
        }
        None => vec![0.0; n],
    };
    let warm = init.iter().any(|&x| x > 0.0);
    let index = NeighborIndex::new(sources);
    let k = opts.neighbors.min(n);
    let mut cand = Candidates {
        k,
        ids: vec![0; m * k],
        cost: vec![0.0; m * k],
        bound: vec![0.0; m],
        beyond: vec![0.0; m],
        wide: vec![(0, 0); m],
        wide_ids: Vec::new(),
        wide_cost: Vec::new(),
        widened: 0,
    };
    let mut buf = Vec::with_capacity(k);
    let top = init.iter().copied().fold(0.0, f64::max);
    for (j, t) in targets.iter().enumerate() {
        let bound = if warm {
            index.k_lowest(t, k, &init, &mut buf)
        } else {
            index.k_nearest(t, k, &mut buf)
        };
        cand.bound[j] = bound;
        cand.beyond[j] = (bound - top).max(0.0);
        for (s, &(id, d)) in buf.iter().enumerate() {
            cand.ids[j * k + s] = id;
            cand.cost[j * k + s] = d;
        }
    }
    let mut clusters = Clusters::new(sources);
    // lower bound on the value of every source outside j's list; prices
    // start at zero or above
    let mut outside: Vec<f64> = cand.bound.clone();

    let (mut nearest, mut spread) = (0.0, 0.0);
    for list in cand.cost.chunks(k) {
        let (lo, hi) = list.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &d| {
            (lo.min(d), hi.max(d))
        });
        nearest += lo / m as f64;
        spread += (hi - lo) / m as f64;
    }
    let eps_final = (opts.relative_gap * nearest)
        .max(1e-15 * (nearest + spread))
        .max(1e-300);
    let start = if warm {
        opts.warm_epsilon
    } else {
        opts.initial_epsilon
    };
    let mut eps = (start * spread).max(eps_final);

    let price = init
        .iter()
        .flat_map(|&p| std::iter::repeat_n(p, c))
        .collect();
    let mut slots = Slots {
        c,
        price,
        owner: vec![NONE; m],
        class: init,
    };
    let mut assigned_cost = vec![0.0; m];
    let mut queue: VecDeque<u32> = VecDeque::with_capacity(m);
    // no price ever exceeds this
    let mut ceiling = top;
    let mut bids: u64 = 0;
    let mut phases = 0;
    loop {
        phases += 1;
        queue.clear();
        if phases == 1 {
            queue.extend(0..m as u32);
        } else {
            // keep every target that is still within the new ε of its best
            // other class, lowering its slot price as far as that allows
            // (never below the class price, so no class price moves)
            for i in 0..n {
                let base = i * c;
                let class_price = slots.price[base];
                for pos in base..base + c {
                    let j = slots.owner[pos];
                    let d = assigned_cost[j as usize];
                    let (ids, costs) = cand.get(j as usize);
                    let other = best_other(ids, costs, i as u32, outside[j as usize], &slots);
                    if d + class_price <= other + eps {
                        slots.price[pos] = slots.price[pos].min(other - d + eps).max(class_price);
                    } else {
                        slots.owner[pos] = NONE;
                        queue.push_back(j);
                    }
                }
                slots.heapify(i);
            }
        }
        let phase_start = bids;
        clusters.refresh(&slots);
        while let Some(j) = queue.pop_front() {
            let ju = j as usize;
            if bids.is_multiple_of(n as u64) {
                clusters.refresh(&slots);
            }
            let mut fresh = false;
            let (i1, d1, w1, w2) = loop {
                let (ids, costs) = cand.get(ju);
                let (i1, d1, w1, w2) = best_two(ids, costs, &slots);
                let w2 = w2.min(outside[ju]);
                if w2 >= w1 {
                    break (i1, d1, w1, w2);
                }
                if !fresh {
                    outside[ju] = cand.outside(ju, &targets[ju], &clusters);
                    fresh = true;
                    continue;
                }
                // a source outside the list might beat the best candidate
                let wider = (cand.len(ju) * 4).min(n);
                let bound = index.k_lowest(&targets[ju], wider, &slots.class, &mut buf);
                cand.widen(ju, &buf, bound, (bound - ceiling).max(0.0));
                outside[ju] = cand.outside(ju, &targets[ju], &clusters);
            };
            let increment = if w2.is_finite() { w2 - w1 + eps } else { eps };
            let price = slots.min_price(i1 as usize) + increment;
            ceiling = ceiling.max(price);
            let evicted = slots.replace_min(i1 as usize, price, j);
            if evicted != NONE {
                queue.push_back(evicted);
            }
            assigned_cost[ju] = d1;
            bids += 1;
        }
        log::debug!(
            "assignment phase {phases}: ε = {eps:.3e}, {} bids",
            bids - phase_start
        );
        if eps <= eps_final {
            break;
        }
        eps = (eps / opts.epsilon_reduction).max(eps_final);
    }

    let value = assigned_cost.iter().copied().collect::<NeumaierSum>().sum() / m as f64;
    // dual lower bound: u_j = min_i (d_ij + p_i), v_i = −p_i with p_i the class price
    clusters.refresh(&slots);
    let mut dual = NeumaierSum::default();
    let mut scanned = 0;
    for j in 0..m {
        let (ids, costs) = cand.get(j);
        let mut u = ids
            .iter()
            .zip(costs)
            .map(|(&i, &d)| d + slots.min_price(i as usize))
            .fold(f64::INFINITY, f64::min);
        if cand.outside(j, &targets[j], &clusters) < u {
            // a left-out source could be cheaper: scan them all
            scanned += 1;
            u = sources
                .iter()
                .enumerate()
                .map(|(i, s)| targets[j].distance_sq(s) + slots.min_price(i))
                .fold(f64::INFINITY, f64::min);
        }
        dual.add(u);
    }
    for i in 0..n {
        dual.add(-(c as f64) * slots.min_price(i));
    }
    let dual = dual.sum() / m as f64;
    let widened = cand.widened;
    log::debug!("assignment {n}→{m}: {bids} bids, {widened} widened, {scanned} full scans");
    let prices = (0..n).map(|i| slots.min_price(i)).collect();
    Ok((
        AssignmentOutput {
            value,
            gap: value - dual,
            bids,
            phases,
            widened,
        },
        prices,
    ))
}
