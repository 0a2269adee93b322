//! Exact kd-tree over 3D points.
//!
//! Every query returns exactly what an exhaustive scan would return: pruning
//! uses per-node bounding boxes whose squared distance is a floating-point
//! lower bound of any contained point's [`dist2`], and ties are resolved by
//! the lowest point index.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::cloud::{dist2, PointCloud, Vec3};
use crate::error::{Error, Result};

pub const DEFAULT_LEAF_SIZE: usize = 16;

#[derive(Debug, Clone)]
struct Node {
    lo: Vec3,
    hi: Vec3,
    start: usize,
    end: usize,
    // both children or neither
    children: Option<(usize, usize)>,
}

/// Immutable kd-tree. Safe to share across threads for read-only queries.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    points: Vec<Vec3>,
    order: Vec<usize>,
    nodes: Vec<Node>,
    leaf_size: usize,
}

#[inline]
pub(crate) fn box_dist2(q: Vec3, lo: Vec3, hi: Vec3) -> f64 {
    let mut g = [0.0; 3];
    for a in 0..3 {
        g[a] = if q[a] < lo[a] {
            lo[a] - q[a]
        } else if q[a] > hi[a] {
            q[a] - hi[a]
        } else {
            0.0
        };
    }
    g[0] * g[0] + g[1] * g[1] + g[2] * g[2]
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    d2: f64,
    idx: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d2.total_cmp(&other.d2).then(self.idx.cmp(&other.idx))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

pub fn build_index(cloud: &PointCloud) -> Result<SpatialIndex> {
    SpatialIndex::build(cloud.coords(), DEFAULT_LEAF_SIZE)
}

impl SpatialIndex {
    pub fn build(points: &[Vec3], leaf_size: usize) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if leaf_size == 0 {
            return Err(Error::invalid("leaf size must be positive"));
        }
        let mut tree = SpatialIndex {
            points: points.to_vec(),
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
            leaf_size,
        };
        tree.build_node(0, points.len());
        Ok(tree)
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in &self.order[start..end] {
            let p = self.points[i];
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let id = self.nodes.len();
        self.nodes.push(Node { lo, hi, start, end, children: None });
        if end - start <= self.leaf_size {
            return id;
        }
        let axis = (0..3)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
            .unwrap_or(0);
        if hi[axis] == lo[axis] {
            // all points coincide
            return id;
        }
        let points = &self.points;
        let mid = start + (end - start) / 2;
        self.order[start..end].select_nth_unstable_by(mid - start, |&i, &j| {
            points[i][axis].total_cmp(&points[j][axis]).then(i.cmp(&j))
        });
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id].children = Some((left, right));
        id
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn leaf_size(&self) -> usize {
        self.leaf_size
    }

    /// Index and Euclidean distance of the closest stored point.
    pub fn nearest_neighbor(&self, query: Vec3) -> (usize, f64) {
        let (i, d2) = self.nearest_neighbor_d2(query);
        (i, d2.sqrt())
    }

    /// Like [`nearest_neighbor`](Self::nearest_neighbor) but returns the
    /// squared distance.
    pub fn nearest_neighbor_d2(&self, query: Vec3) -> (usize, f64) {
        let mut best = Candidate { d2: f64::INFINITY, idx: usize::MAX };
        self.nn_rec(0, query, &mut best);
        (best.idx, best.d2)
    }

    fn nn_rec(&self, node: usize, q: Vec3, best: &mut Candidate) {
        let n = &self.nodes[node];
        match n.children {
            None => {
                for &i in &self.order[n.start..n.end] {
                    let c = Candidate { d2: dist2(q, self.points[i]), idx: i };
                    if c < *best {
                        *best = c;
                    }
                }
            }
            Some((l, r)) => {
                let dl = box_dist2(q, self.nodes[l].lo, self.nodes[l].hi);
                let dr = box_dist2(q, self.nodes[r].lo, self.nodes[r].hi);
                let (first, df, second, ds) = if dl <= dr { (l, dl, r, dr) } else { (r, dr, l, dl) };
                if df <= best.d2 {
                    self.nn_rec(first, q, best);
                }
                if ds <= best.d2 {
                    self.nn_rec(second, q, best);
                }
            }
        }
    }

    /// All indices within distance `r` (inclusive) of `center`, ascending.
    pub fn radius_query(&self, center: Vec3, r: f64) -> Result<Vec<usize>> {
        if !(r > 0.0) {
            return Err(Error::invalid(format!("radius must be positive, got {r}")));
        }
        let r2 = r * r;
        let mut out = Vec::new();
        self.radius_rec(0, center, r2, &mut out);
        out.sort_unstable();
        Ok(out)
    }

    fn radius_rec(&self, node: usize, q: Vec3, r2: f64, out: &mut Vec<usize>) {
        let n = &self.nodes[node];
        if box_dist2(q, n.lo, n.hi) > r2 {
            return;
        }
        match n.children {
            None => out.extend(self.order[n.start..n.end].iter().copied().filter(|&i| dist2(q, self.points[i]) <= r2)),
            Some((l, r)) => {
                self.radius_rec(l, q, r2, out);
                self.radius_rec(r, q, r2, out);
            }
        }
    }

    /// The `k` nearest stored points to `query` as (index, squared distance),
    /// sorted by distance then index. `exclude` removes one index from
    /// consideration (used for self-excluding neighbourhood graphs).
    pub fn knn(&self, query: Vec3, k: usize, exclude: Option<usize>) -> Vec<(usize, f64)> {
        let mut heap = BinaryHeap::with_capacity(k + 1);
        if k > 0 {
            self.knn_rec(0, query, k, exclude, &mut heap);
        }
        let mut out: Vec<Candidate> = heap.into_vec();
        out.sort_unstable();
        out.into_iter().map(|c| (c.idx, c.d2)).collect()
    }

    fn knn_rec(&self, node: usize, q: Vec3, k: usize, exclude: Option<usize>, heap: &mut BinaryHeap<Candidate>) {
        let n = &self.nodes[node];
        match n.children {
            None => {
                for &i in &self.order[n.start..n.end] {
                    if Some(i) == exclude {
                        continue;
                    }
                    let c = Candidate { d2: dist2(q, self.points[i]), idx: i };
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().unwrap() {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            Some((l, r)) => {
                let dl = box_dist2(q, self.nodes[l].lo, self.nodes[l].hi);
                let dr = box_dist2(q, self.nodes[r].lo, self.nodes[r].hi);
                let (first, df, second, ds) = if dl <= dr { (l, dl, r, dr) } else { (r, dr, l, dl) };
                for (child, bound) in [(first, df), (second, ds)] {
                    if heap.len() < k || bound <= heap.peek().unwrap().d2 {
                        self.knn_rec(child, q, k, exclude, heap);
                    }
                }
            }
        }
    }

    /// Depth-first walk with caller-supplied pruning, used by metrics whose
    /// distance is not point-to-point. `visit_box` returns whether to descend;
    /// `visit_point` is called on each surviving leaf point.
    pub(crate) fn walk(&self, visit_box: &mut dyn FnMut(Vec3, Vec3) -> bool, visit_point: &mut dyn FnMut(usize)) {
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            let n = &self.nodes[id];
            if !visit_box(n.lo, n.hi) {
                continue;
            }
            match n.children {
                None => self.order[n.start..n.end].iter().for_each(|&i| visit_point(i)),
                Some((l, r)) => {
                    stack.push(r);
                    stack.push(l);
                }
            }
        }
    }
}

/// Exhaustive nearest neighbour; the reference the tree is tested against.
pub fn brute_nearest(points: &[Vec3], q: Vec3) -> (usize, f64) {
    let mut best = (usize::MAX, f64::INFINITY);
    for (i, p) in points.iter().enumerate() {
        let d = dist2(q, *p);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use rand::Rng;

    fn random_points(n: usize, seed: u64) -> Vec<Vec3> {
        let mut rng = rng_from(seed);
        (0..n).map(|_| [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()]).collect()
    }

    #[test]
    fn single_point() {
        let t = SpatialIndex::build(&[[1.0, 2.0, 3.0]], 4).unwrap();
        assert_eq!(t.nearest_neighbor([9.0, 9.0, 9.0]).0, 0);
        assert!(SpatialIndex::build(&[], 4).is_err());
    }

    #[test]
    fn hand_cases() {
        let t = SpatialIndex::build(&[[0.0; 3], [1.0, 0.0, 0.0]], 1).unwrap();
        let (i, d) = t.nearest_neighbor([0.2, 0.0, 0.0]);
        assert_eq!(i, 0);
        assert!((d - 0.2).abs() < 1e-15);
        assert_eq!(t.nearest_neighbor([1.0, 0.0, 0.0]), (1, 0.0));

        let t = SpatialIndex::build(&[[0.0; 3], [2.0, 0.0, 0.0]], 1).unwrap();
        assert_eq!(t.radius_query([0.0; 3], 1.0).unwrap(), vec![0]);
        assert_eq!(t.radius_query([0.0; 3], 10.0).unwrap(), vec![0, 1]);
        assert!(t.radius_query([5.0, 5.0, 5.0], 0.5).unwrap().is_empty());
        assert!(t.radius_query([0.0; 3], 0.0).is_err());
        assert!(t.radius_query([0.0; 3], -1.0).is_err());
    }

    #[test]
    fn tie_break_lowest_index() {
        let mut pts = random_points(10, 1);
        for p in pts.iter_mut() {
            p[0] += 10.0;
        }
        pts[3] = [1.0, 0.0, 0.0];
        pts[7] = [-1.0, 0.0, 0.0];
        for leaf in [1, 2, 16] {
            let t = SpatialIndex::build(&pts, leaf).unwrap();
            assert_eq!(t.nearest_neighbor([0.0; 3]), (3, 1.0));
        }
    }

    #[test]
    fn duplicates_are_fine() {
        let pts = vec![[0.5, 0.5, 0.5]; 40];
        let t = SpatialIndex::build(&pts, 2).unwrap();
        assert_eq!(t.nearest_neighbor([0.5, 0.5, 0.5]), (0, 0.0));
        assert_eq!(t.knn([0.5; 3], 3, Some(0)).iter().map(|c| c.0).collect::<Vec<_>>(), vec![1, 2, 3]);
    }

    #[test]
    fn matches_exhaustive_search() {
        let pts = random_points(1000, 2);
        let t = SpatialIndex::build(&pts, DEFAULT_LEAF_SIZE).unwrap();
        let queries = random_points(100, 3);
        for q in queries {
            let (i, d2) = t.nearest_neighbor_d2(q);
            assert_eq!((i, d2), brute_nearest(&pts, q));
            let r = 0.15;
            let expected: Vec<usize> = (0..pts.len()).filter(|&i| dist2(q, pts[i]) <= r * r).collect();
            assert_eq!(t.radius_query(q, r).unwrap(), expected);
            let mut all: Vec<(usize, f64)> = (0..pts.len()).filter(|&i| i != 5).map(|i| (i, dist2(q, pts[i]))).collect();
            all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            all.truncate(16);
            assert_eq!(t.knn(q, 16, Some(5)), all);
        }
    }

    #[test]
    fn knn_larger_than_cloud() {
        let pts = random_points(5, 8);
        let t = SpatialIndex::build(&pts, 2).unwrap();
        assert_eq!(t.knn(pts[0], 10, Some(0)).len(), 4);
        assert!(t.knn(pts[0], 0, None).is_empty());
    }
}
