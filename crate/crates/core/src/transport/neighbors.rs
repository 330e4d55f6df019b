//! Bucket grids for k-nearest-source queries.
//!
//! Torus points are bucketed on a periodic B×B grid of the unit square.
//! Sphere points are bucketed on a B³ grid of the cube [-1, 1]³ and ranked
//! by chord length, which orders them the same way as geodesic distance.

use crate::surfaces::Point;

#[derive(Debug, Clone)]
pub struct NeighborIndex {
    kind: Kind,
    /// cells per axis
    side: usize,
    /// CSR layout: members of cell c are ids[start[c]..start[c+1]]
    start: Vec<u32>,
    ids: Vec<u32>,
    points: Vec<Point>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Torus,
    Sphere,
}

impl NeighborIndex {
    pub fn new(points: &[Point]) -> NeighborIndex {
        assert!(!points.is_empty());
        let n = points.len();
        let kind = match points[0] {
            Point::Torus(_) => Kind::Torus,
            Point::Sphere(_) => Kind::Sphere,
        };
        // about two points per occupied cell; a sphere crosses ~1.5πB² cells
        let side = match kind {
            Kind::Torus => ((n as f64 / 2.0).sqrt() as usize).max(1),
            Kind::Sphere => ((n as f64 / 9.0).sqrt() as usize).clamp(1, 128),
        };
        let mut index = NeighborIndex {
            kind,
            side,
            start: Vec::new(),
            ids: Vec::new(),
            points: points.to_vec(),
        };
        let cells = match kind {
            Kind::Torus => side * side,
            Kind::Sphere => side * side * side,
        };
        let mut count = vec![0u32; cells + 1];
        let cell_of: Vec<usize> = points.iter().map(|p| index.cell_of(p)).collect();
        for &c in &cell_of {
            count[c + 1] += 1;
        }
        for c in 0..cells {
            count[c + 1] += count[c];
        }
        let mut fill = count.clone();
        let mut ids = vec![0u32; n];
        for (i, &c) in cell_of.iter().enumerate() {
            ids[fill[c] as usize] = i as u32;
            fill[c] += 1;
        }
        index.start = count;
        index.ids = ids;
        index
    }

    fn to_squared_distances(&self, q: &Point, offsets: Option<&[f64]>, out: &mut [(u32, f64)]) {
        if offsets.is_some() || self.kind == Kind::Sphere {
            for e in out.iter_mut() {
                e.1 = q.distance_sq(&self.points[e.0 as usize]);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn coords(&self, p: &Point) -> [usize; 3] {
        let b = self.side;
        let clamp = |t: f64| ((t * b as f64) as usize).min(b - 1);
        match p {
            Point::Torus([u, v]) => [clamp(*u), clamp(*v), 0],
            Point::Sphere([x, y, z]) => [
                clamp(0.5 * (x + 1.0)),
                clamp(0.5 * (y + 1.0)),
                clamp(0.5 * (z + 1.0)),
            ],
        }
    }

    fn cell_of(&self, p: &Point) -> usize {
        let [a, b, c] = self.coords(p);
        (a * self.side + b)
            * if self.kind == Kind::Sphere {
                self.side
            } else {
                1
            }
            + c
    }

    fn cell_members(&self, cell: usize) -> &[u32] {
        &self.ids[self.start[cell] as usize..self.start[cell + 1] as usize]
    }

    /// The `k` nearest indexed points to `q` in increasing squared geodesic
    /// distance, written to `out`. Returns a lower bound on the squared
    /// distance of every point not in `out` (+∞ if all points were returned).
    pub fn k_nearest(&self, q: &Point, k: usize, out: &mut Vec<(u32, f64)>) -> f64 {
        self.search(q, k, None, out)
    }

    /// Like `k_nearest`, but ranks point i by squared distance plus
    /// `offsets[i]` (all offsets must be ≥ 0). `out` still holds plain
    /// squared distances; the returned bound is on distance plus offset.
    pub fn k_lowest(&self, q: &Point, k: usize, offsets: &[f64], out: &mut Vec<(u32, f64)>) -> f64 {
        debug_assert_eq!(offsets.len(), self.points.len());
        self.search(q, k, Some(offsets), out)
    }

    fn search(
        &self,
        q: &Point,
        k: usize,
        offsets: Option<&[f64]>,
        out: &mut Vec<(u32, f64)>,
    ) -> f64 {
        out.clear();
        let n = self.points.len();
        let key = |id: usize| match offsets {
            None => key(q, &self.points[id]),
            Some(off) => q.distance_sq(&self.points[id]) + off[id],
        };
        if k >= n {
            out.extend((0..n).map(|i| (i as u32, key(i))));
            out.sort_by(|a, b| a.1.total_cmp(&b.1));
            self.to_squared_distances(q, offsets, out);
            return f64::INFINITY;
        }
        // keep k + 1 so the (k+1)-th key is the bound for everything left out
        let want = k + 1;
        let mut best: Vec<(u32, f64)> = Vec::with_capacity(want + 1);
        let push = |best: &mut Vec<(u32, f64)>, id: u32, d: f64| {
            if best.len() == want && d >= best[want - 1].1 {
                return;
            }
            let pos = best.partition_point(|e| e.1 <= d);
            best.insert(pos, (id, d));
            best.truncate(want);
        };
        let b = self.side as i64;
        let h = match self.kind {
            Kind::Torus => 1.0 / b as f64,
            Kind::Sphere => 2.0 / b as f64,
        };
        let [c0, c1, c2] = self.coords(q).map(|c| c as i64);
        let max_ring = match self.kind {
            Kind::Torus => b / 2 + 1,
            Kind::Sphere => b,
        };
        let mut visited_all = false;
        for r in 0..=max_ring {
            match self.kind {
                Kind::Torus => {
                    if 2 * r + 1 >= b {
                        // the ring wraps onto itself: finish with every cell once
                        best.clear();
                        for i in 0..n {
                            push(&mut best, i as u32, key(i));
                        }
                        visited_all = true;
                        break;
                    }
                    for da in -r..=r {
                        for db in -r..=r {
                            if da.abs().max(db.abs()) != r {
                                continue;
                            }
                            let cell =
                                ((c0 + da).rem_euclid(b) * b + (c1 + db).rem_euclid(b)) as usize;
                            for &id in self.cell_members(cell) {
                                push(&mut best, id, key(id as usize));
                            }
                        }
                    }
                }
                Kind::Sphere => {
                    for da in (-r..=r).filter(|d| (0..b).contains(&(c0 + d))) {
                        for db in (-r..=r).filter(|d| (0..b).contains(&(c1 + d))) {
                            let shell = da.abs().max(db.abs()) == r;
                            for dc in -r..=r {
                                let c = c2 + dc;
                                if !(0..b).contains(&c) || !(shell || dc.abs() == r) {
                                    continue;
                                }
                                let cell = (((c0 + da) * b + c1 + db) * b + c) as usize;
                                for &id in self.cell_members(cell) {
                                    push(&mut best, id, key(id as usize));
                                }
                            }
                        }
                    }
                }
            }
            // every unvisited cell is at least r·h away along some axis
            let reach = r as f64 * h;
            if best.len() == want && best[want - 1].1 <= reach * reach {
                break;
            }
        }
        debug_assert!(visited_all || best.len() == want);
        let bound = if best.len() == want {
            best[want - 1].1
        } else {
            f64::INFINITY
        };
        best.truncate(k);
        out.extend_from_slice(&best);
        self.to_squared_distances(q, offsets, out);
        match self.kind {
            _ if offsets.is_some() => bound,
            Kind::Torus => bound,
            // shaved so rounding in asin cannot lift it above the truth
            Kind::Sphere => chord_to_geodesic_sq(bound) * (1.0 - 1e-12),
        }
    }
}

/// Ranking key: squared torus distance, or squared chord on the sphere.
#[inline]
fn key(q: &Point, p: &Point) -> f64 {
    match (q, p) {
        (Point::Torus(a), Point::Torus(b)) => crate::surfaces::torus_distance_sq(a, b),
        (Point::Sphere(a), Point::Sphere(b)) => crate::surfaces::chord_sq(a, b),
        _ => panic!("mixed surfaces in a neighbor query"),
    }
}

fn chord_to_geodesic_sq(c2: f64) -> f64 {
    if !c2.is_finite() {
        return c2;
    }
    let theta = 2.0 * (0.5 * c2.sqrt()).min(1.0).asin();
    theta * theta
}
