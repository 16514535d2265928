//! Euclidean clustering and PCA oriented bounding boxes.

use std::collections::VecDeque;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use thiserror::Error;

use crate::cloud::IntensityCloud;
use crate::geometry::RigidTransform;
use crate::spatial::SpatialIndex;

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("cluster of {size} points is degenerate (fewer than 3 points or collinear)")]
    DegenerateCluster { size: usize },
}

/// Member indices of one connected component, ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cluster {
    pub members: Vec<usize>,
}

impl Cluster {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Connected components of the graph linking points closer than `tol`,
/// restricted to sizes in `[min_size, max_size]`. Sorted by descending size,
/// then by smallest member index.
pub fn euclidean_cluster(cloud: &IntensityCloud, tol: f64, min_size: usize, max_size: usize) -> Vec<Cluster> {
    let index = SpatialIndex::new(cloud);
    euclidean_cluster_indexed(cloud, &index, tol, min_size, max_size)
}

pub fn euclidean_cluster_indexed(
    cloud: &IntensityCloud,
    index: &SpatialIndex,
    tol: f64,
    min_size: usize,
    max_size: usize,
) -> Vec<Cluster> {
    let n = cloud.len();
    let mut visited = vec![false; n];
    let mut clusters = Vec::new();
    let mut queue = VecDeque::new();
    for seed in 0..n {
        if visited[seed] {
            continue;
        }
        visited[seed] = true;
        queue.push_back(seed);
        let mut members = Vec::new();
        while let Some(i) = queue.pop_front() {
            members.push(i);
            for j in index.within_radius(&cloud.point(i).coords(), tol) {
                if !visited[j] {
                    visited[j] = true;
                    queue.push_back(j);
                }
            }
        }
        if members.len() >= min_size && members.len() <= max_size {
            members.sort_unstable();
            clusters.push(Cluster { members });
        }
    }
    clusters.sort_by(|a, b| b.len().cmp(&a.len()).then(a.members[0].cmp(&b.members[0])));
    clusters
}

/// Mean distance from each point to its nearest other point.
pub fn mean_nn_spacing(cloud: &IntensityCloud, index: &SpatialIndex) -> f64 {
    if cloud.len() < 2 {
        return 0.0;
    }
    let mut acc = 0.0;
    for p in cloud.iter() {
        acc += index.knn(&p.coords(), 2).expect("non-empty")[1].1;
    }
    acc / cloud.len() as f64
}

/// Oriented bounding box with axes along the cluster's principal components.
#[derive(Debug, Clone, PartialEq)]
pub struct ObbCandidate {
    /// Box frame in map coordinates: columns of the rotation are the length,
    /// width and height axes; the translation is the box center.
    pub pose: RigidTransform,
    /// `[l, w, h]` with `l ≥ w ≥ h`.
    pub extents: [f64; 3],
    pub members: Cluster,
}

impl ObbCandidate {
    pub fn length(&self) -> f64 {
        self.extents[0]
    }

    pub fn width(&self) -> f64 {
        self.extents[1]
    }

    pub fn height(&self) -> f64 {
        self.extents[2]
    }

    pub fn diagonal(&self) -> f64 {
        let [l, w, h] = self.extents;
        (l * l + w * w + h * h).sqrt()
    }

    pub fn center(&self) -> Vector3<f64> {
        self.pose.translation
    }

    /// Whether a map point lies inside the box grown by `inflate` on every face.
    pub fn contains(&self, p: &Vector3<f64>, inflate: f64) -> bool {
        let local = self.pose.inverse_apply(p);
        (0..3).all(|k| local[k].abs() <= self.extents[k] / 2.0 + inflate)
    }
}

/// Makes the largest-magnitude component of `v` positive (first one on ties).
fn fix_sign(v: Vector3<f64>) -> Vector3<f64> {
    let mut best = 0;
    for k in 1..3 {
        if v[k].abs() > v[best].abs() {
            best = k;
        }
    }
    if v[best] < 0.0 {
        -v
    } else {
        v
    }
}

/// PCA bounding box of `cluster` (indices into `cloud`).
pub fn compute_obb(cloud: &IntensityCloud, cluster: &Cluster) -> Result<ObbCandidate, ClusterError> {
    let size = cluster.len();
    if size < 3 {
        return Err(ClusterError::DegenerateCluster { size });
    }
    let pts: Vec<Vector3<f64>> = cluster.members.iter().map(|&i| cloud.position(i)).collect();
    let mean = crate::geometry::centroid(&pts);
    let mut cov = Matrix3::zeros();
    for p in &pts {
        let d = p - mean;
        cov += d * d.transpose();
    }
    cov /= size as f64;

    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let largest = eig.eigenvalues[order[0]];
    if !(largest > 0.0) || eig.eigenvalues[order[1]] <= 1e-12 * largest {
        return Err(ClusterError::DegenerateCluster { size });
    }
    let first = fix_sign(eig.eigenvectors.column(order[0]).into_owned().normalize());
    let second = fix_sign(eig.eigenvectors.column(order[1]).into_owned().normalize());
    let third = first.cross(&second).normalize();
    let mut axes = [first, second, third];

    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in &pts {
        let d = p - mean;
        for k in 0..3 {
            let s = axes[k].dot(&d);
            lo[k] = lo[k].min(s);
            hi[k] = hi[k].max(s);
        }
    }
    let mut spans: Vec<(usize, f64)> = (0..3).map(|k| (k, hi[k] - lo[k])).collect();
    // stable: equal extents keep PCA order
    spans.sort_by(|a, b| b.1.total_cmp(&a.1));

    let mut center = mean;
    for k in 0..3 {
        center += axes[k] * ((lo[k] + hi[k]) / 2.0);
    }
    if spans.iter().map(|s| s.0).ne(0..3) {
        let sorted = [axes[spans[0].0], axes[spans[1].0], axes[spans[2].0]];
        axes = [sorted[0], sorted[1], sorted[0].cross(&sorted[1]).normalize()];
    }
    Ok(ObbCandidate {
        pose: RigidTransform::new(Matrix3::from_columns(&axes), center),
        extents: [spans[0].1, spans[1].1, spans[2].1],
        members: cluster.clone(),
    })
}
