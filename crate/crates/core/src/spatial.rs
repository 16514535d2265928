//! Exact k-nearest-neighbor and radius queries over a fixed point set.
//!
//! Results are identical to a brute-force scan: neighbors are ordered by
//! ascending squared distance with ties broken by ascending point index.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::cloud::{CloudError, IntensityCloud};

const LEAF_SIZE: usize = 12;
const NO_CHILD: u32 = u32::MAX;

#[derive(Debug, Clone)]
struct Node {
    start: u32,
    end: u32,
    axis: u8,
    split: f64,
    left: u32,
    right: u32,
}

/// A k-d tree over a snapshot of point positions.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    points: Vec<[f64; 3]>,
    order: Vec<u32>,
    nodes: Vec<Node>,
}

/// Neighbor entry ordered by (squared distance, index).
#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    dist2: f64,
    index: u32,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist2.total_cmp(&other.dist2).then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[inline]
pub(crate) fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

impl SpatialIndex {
    pub fn new(cloud: &IntensityCloud) -> Self {
        Self::from_positions(cloud.iter().map(|p| p.coords()).collect())
    }

    pub fn from_positions(points: Vec<[f64; 3]>) -> Self {
        assert!(points.len() < u32::MAX as usize, "too many points for the index");
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        let mut nodes = Vec::new();
        if !points.is_empty() {
            build(&points, &mut order, 0, points.len(), &mut nodes);
        }
        Self { points, order, nodes }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn position(&self, i: usize) -> [f64; 3] {
        self.points[i]
    }

    /// The `k` nearest points to `query` as `(index, distance)`, nearest first.
    /// Returns every point when `k` exceeds the cloud size.
    pub fn knn(&self, query: &[f64; 3], k: usize) -> Result<Vec<(usize, f64)>, CloudError> {
        if self.points.is_empty() {
            return Err(CloudError::EmptyCloud);
        }
        let k = k.max(1).min(self.points.len());
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        self.knn_recurse(0, query, k, &mut heap);
        let mut out: Vec<Candidate> = heap.into_vec();
        out.sort_unstable();
        Ok(out.into_iter().map(|c| (c.index as usize, c.dist2.sqrt())).collect())
    }

    fn knn_recurse(&self, node: usize, q: &[f64; 3], k: usize, heap: &mut BinaryHeap<Candidate>) {
        let n = &self.nodes[node];
        if n.left == NO_CHILD {
            for &idx in &self.order[n.start as usize..n.end as usize] {
                let c = Candidate {
                    dist2: dist2(q, &self.points[idx as usize]),
                    index: idx,
                };
                if heap.len() < k {
                    heap.push(c);
                } else if c < *heap.peek().unwrap() {
                    heap.pop();
                    heap.push(c);
                }
            }
            return;
        }
        let diff = q[n.axis as usize] - n.split;
        let (near, far) = if diff < 0.0 {
            (n.left, n.right)
        } else {
            (n.right, n.left)
        };
        self.knn_recurse(near as usize, q, k, heap);
        // Points on the far side are at least |diff| away; equality must still
        // be visited because a tie may carry a smaller index.
        if heap.len() < k || diff * diff <= heap.peek().unwrap().dist2 {
            self.knn_recurse(far as usize, q, k, heap);
        }
    }

    /// Indices of all points within `radius` (inclusive) of `query`, ascending by index.
    pub fn within_radius(&self, query: &[f64; 3], radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        if !self.points.is_empty() {
            self.radius_recurse(0, query, radius * radius, &mut out);
        }
        out.sort_unstable();
        out
    }

    fn radius_recurse(&self, node: usize, q: &[f64; 3], r2: f64, out: &mut Vec<usize>) {
        let n = &self.nodes[node];
        if n.left == NO_CHILD {
            for &idx in &self.order[n.start as usize..n.end as usize] {
                if dist2(q, &self.points[idx as usize]) <= r2 {
                    out.push(idx as usize);
                }
            }
            return;
        }
        let diff = q[n.axis as usize] - n.split;
        if diff <= 0.0 || diff * diff <= r2 {
            self.radius_recurse(n.left as usize, q, r2, out);
        }
        if diff >= 0.0 || diff * diff <= r2 {
            self.radius_recurse(n.right as usize, q, r2, out);
        }
    }
}

fn build(points: &[[f64; 3]], order: &mut [u32], start: usize, end: usize, nodes: &mut Vec<Node>) -> u32 {
    let id = nodes.len() as u32;
    nodes.push(Node {
        start: start as u32,
        end: end as u32,
        axis: 0,
        split: 0.0,
        left: NO_CHILD,
        right: NO_CHILD,
    });
    if end - start <= LEAF_SIZE {
        return id;
    }
    let slice = &mut order[start..end];
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in slice.iter() {
        let p = &points[i as usize];
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let axis = (0..3)
        .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
        .unwrap();
    if !(hi[axis] > lo[axis]) {
        // all points coincide
        return id;
    }
    // midpoint split: coordinates below `split` go left, so ties never straddle it
    let half = lo[axis] + 0.5 * (hi[axis] - lo[axis]);
    let split = if half > lo[axis] { half } else { hi[axis] };
    let mut mid = 0;
    for j in 0..slice.len() {
        if points[slice[j] as usize][axis] < split {
            slice.swap(mid, j);
            mid += 1;
        }
    }
    let left = build(points, order, start, start + mid, nodes);
    let right = build(points, order, start + mid, end, nodes);
    let node = &mut nodes[id as usize];
    node.axis = axis as u8;
    node.split = split;
    node.left = left;
    node.right = right;
    id
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::Point3I;
    use proptest::prelude::*;

    fn brute_knn(points: &[[f64; 3]], q: &[f64; 3], k: usize) -> Vec<(usize, f64)> {
        let mut all: Vec<(f64, usize)> = points.iter().enumerate().map(|(i, p)| (dist2(q, p), i)).collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        all.into_iter().take(k).map(|(d, i)| (i, d.sqrt())).collect()
    }

    fn lattice() -> Vec<[f64; 3]> {
        let mut pts = Vec::new();
        for x in 0..3 {
            for y in 0..3 {
                for z in 0..3 {
                    pts.push([x as f64, y as f64, z as f64]);
                }
            }
        }
        pts
    }

    #[test]
    fn single_point() {
        let cloud = IntensityCloud::from_points(vec![Point3I::new(0.0, 0.0, 0.0, 1.0)]).unwrap();
        let index = SpatialIndex::new(&cloud);
        assert_eq!(index.knn(&[0.0, 0.0, 0.0], 1).unwrap(), vec![(0, 0.0)]);
    }

    #[test]
    fn lattice_center_face_neighbors() {
        let pts = lattice();
        let index = SpatialIndex::from_positions(pts.clone());
        let got = index.knn(&[1.0, 1.0, 1.0], 7).unwrap();
        assert_eq!(got, brute_knn(&pts, &[1.0, 1.0, 1.0], 7));
        assert_eq!(got[0], (13, 0.0));
        assert!(got[1..].iter().all(|&(_, d)| d == 1.0));
        // face neighbours of (1,1,1) in x-major order
        let idx: Vec<usize> = got[1..].iter().map(|&(i, _)| i).collect();
        assert_eq!(idx, vec![4, 10, 12, 14, 16, 22]);
    }

    #[test]
    fn k_larger_than_cloud_returns_all() {
        let index = SpatialIndex::from_positions(lattice());
        assert_eq!(index.knn(&[0.3, 0.2, 0.1], 100).unwrap().len(), 27);
    }

    #[test]
    fn empty_cloud_errors() {
        let index = SpatialIndex::from_positions(vec![]);
        assert_eq!(index.knn(&[0.0; 3], 1), Err(CloudError::EmptyCloud));
    }

    #[test]
    fn duplicate_points_tie_break_by_index() {
        let pts = vec![[1.0, 0.0, 0.0]; 40];
        let index = SpatialIndex::from_positions(pts);
        let got = index.knn(&[0.0; 3], 5).unwrap();
        assert_eq!(got.iter().map(|g| g.0).collect::<Vec<_>>(), vec![0, 1, 2, 3, 4]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn knn_matches_brute_force(
            pts in prop::collection::vec((-5i32..5, -5i32..5, -5i32..5), 1..2000),
            q in (-6.0f64..6.0, -6.0f64..6.0, -6.0f64..6.0),
            k in 1usize..40,
        ) {
            // integer lattice coordinates force many exact distance ties
            let pts: Vec<[f64; 3]> = pts.into_iter().map(|(x, y, z)| [x as f64 * 0.5, y as f64 * 0.5, z as f64 * 0.5]).collect();
            let index = SpatialIndex::from_positions(pts.clone());
            let q = [q.0.round(), q.1.round(), q.2];
            prop_assert_eq!(index.knn(&q, k).unwrap(), brute_knn(&pts, &q, k));
        }

        #[test]
        fn radius_matches_brute_force(
            pts in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0, -3.0f64..3.0), 1..800),
            r in 0.0f64..2.0,
        ) {
            let pts: Vec<[f64; 3]> = pts.into_iter().map(|(x, y, z)| [x, y, z]).collect();
            let index = SpatialIndex::from_positions(pts.clone());
            let q = pts[0];
            let expected: Vec<usize> = (0..pts.len()).filter(|&i| dist2(&q, &pts[i]) <= r * r).collect();
            prop_assert_eq!(index.within_radius(&q, r), expected);
        }
    }
}
