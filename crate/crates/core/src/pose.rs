//! Tag pose from four corresponded corners.

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::Serialize;
use thiserror::Error;

use crate::geometry::{centroid, RigidTransform};

#[derive(Debug, Error, PartialEq)]
pub enum PoseError {
    #[error("vertices are collinear or coincident")]
    DegenerateVertices,
    #[error("vertices deviate {deviation} m from their plane (limit {limit} m)")]
    PlanarityViolation { deviation: f64, limit: f64 },
    #[error("expected matching non-empty point sets")]
    SizeMismatch,
}

/// Tag-frame corners `(±a/2, ±a/2, 0)`, counter-clockwise seen from +Z,
/// starting top-left.
pub fn canonical_corners(side: f64) -> [Vector3<f64>; 4] {
    let h = side / 2.0;
    [
        Vector3::new(-h, h, 0.0),
        Vector3::new(-h, -h, 0.0),
        Vector3::new(h, -h, 0.0),
        Vector3::new(h, h, 0.0),
    ]
}

/// Proper rotation `R` maximizing `tr(R·cross)`.
fn kabsch_rotation(cross: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = cross.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let mut rotation = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    // The iterative SVD stops around 1e-12 relative error, worse when singular
    // values coincide (a square's corners). Newton steps on `tr(exp([ω]×)·K)`
    // with `K = R·cross` bring R to full precision.
    for _ in 0..2 {
        let k = rotation * cross;
        let g = Vector3::new(k[(1, 2)] - k[(2, 1)], k[(2, 0)] - k[(0, 2)], k[(0, 1)] - k[(1, 0)]);
        let sym = (k + k.transpose()) / 2.0;
        let hessian = Matrix3::identity() * k.trace() - sym;
        match hessian.try_inverse() {
            Some(inv) => rotation = Rotation3::new(inv * g).into_inner() * rotation,
            None => break,
        }
    }
    rotation
}

/// Least-squares rigid `T` with `T(canonical[i]) ≈ detected[i]`, and the RMS residual.
pub fn solve_pose_svd(
    canonical: &[Vector3<f64>],
    detected: &[Vector3<f64>],
) -> Result<(RigidTransform, f64), PoseError> {
    if canonical.len() != detected.len() || canonical.is_empty() {
        return Err(PoseError::SizeMismatch);
    }
    let (cs, cd) = (centroid(canonical), centroid(detected));
    let mut cross = Matrix3::zeros();
    let mut spread = Matrix3::zeros();
    for (s, d) in canonical.iter().zip(detected) {
        cross += (s - cs) * (d - cd).transpose();
        spread += (d - cd) * (d - cd).transpose();
    }
    let sv = spread.singular_values();
    let mut sorted = [sv[0], sv[1], sv[2]];
    sorted.sort_by(|a, b| b.total_cmp(a));
    if !(sorted[0] > 0.0) || sorted[1] <= 1e-12 * sorted[0] {
        return Err(PoseError::DegenerateVertices);
    }
    let rotation = kabsch_rotation(&cross);
    let translation = cd - rotation * cs;
    let pose = RigidTransform::new(rotation, translation);
    let sq: f64 = canonical
        .iter()
        .zip(detected)
        .map(|(s, d)| (pose.apply(s) - d).norm_squared())
        .sum();
    Ok((pose, (sq / canonical.len() as f64).sqrt()))
}

/// Largest distance of a point from the least-squares plane of the set.
pub fn planarity_deviation(points: &[Vector3<f64>]) -> f64 {
    let c = centroid(points);
    let mut cov = Matrix3::zeros();
    for p in points {
        cov += (p - c) * (p - c).transpose();
    }
    let eig = cov.symmetric_eigen();
    let k = eig.eigenvalues.imin();
    let normal = eig.eigenvectors.column(k).into_owned();
    points.iter().map(|p| (p - c).dot(&normal).abs()).fold(0.0, f64::max)
}

/// A localized tag.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TagDetection {
    pub id: usize,
    pub mirrored: bool,
    /// Map-frame corners in tag index order.
    pub vertices: [Vector3<f64>; 4],
    /// Tag frame to map frame: the tag's pose in the map.
    pub pose: RigidTransform,
    pub rms_residual: f64,
}

/// Puts decoder-ordered vertices into tag index order (exchanging 1 and 3
/// for mirrored reads), solves the pose and checks planarity within `2δ`.
pub fn assemble_detection(
    id: usize,
    mirrored: bool,
    decoded_vertices: [Vector3<f64>; 4],
    side: f64,
    thickness: f64,
) -> Result<TagDetection, PoseError> {
    let mut vertices = decoded_vertices;
    if mirrored {
        vertices.swap(1, 3);
    }
    let deviation = planarity_deviation(&vertices);
    let limit = 2.0 * thickness;
    if deviation > limit {
        return Err(PoseError::PlanarityViolation { deviation, limit });
    }
    let (pose, rms_residual) = solve_pose_svd(&canonical_corners(side), &vertices)?;
    Ok(TagDetection {
        id,
        mirrored,
        vertices,
        pose,
        rms_residual,
    })
}
