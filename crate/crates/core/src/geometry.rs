//! Rigid transforms and small linear-algebra helpers.

use nalgebra::{Matrix3, Matrix4, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

/// Rigid motion `p ↦ R·p + t`.
///
/// Poses in this crate follow one convention: a pose of frame F expressed in
/// the map frame maps F-coordinates to map coordinates, so `t` is the origin
/// of F in the map and the columns of `R` are F's axes. `inverse_apply`
/// takes map points into F.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn identity() -> Self {
        Self::new(Matrix3::identity(), Vector3::zeros())
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self::new(Matrix3::identity(), t)
    }

    #[inline]
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// `R⁻¹·p − R⁻¹·t`, with `R⁻¹ = Rᵀ`.
    #[inline]
    pub fn inverse_apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p - self.translation)
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self::new(rt, -(rt * self.translation))
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        Self::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// The 16 entries of the homogeneous matrix in row-major order.
    pub fn to_row_major(&self) -> [f64; 16] {
        let m = self.to_homogeneous();
        let mut out = [0.0; 16];
        for r in 0..4 {
            for c in 0..4 {
                out[r * 4 + c] = m[(r, c)];
            }
        }
        out
    }

    /// Max deviation of `RᵀR` from identity, and `det R`.
    pub fn orthonormality(&self) -> (f64, f64) {
        let err = (self.rotation.transpose() * self.rotation - Matrix3::identity())
            .abs()
            .max();
        (err, self.rotation.determinant())
    }

    pub fn is_rigid(&self, tol: f64) -> bool {
        let (err, det) = self.orthonormality();
        err <= tol && (det - 1.0).abs() <= tol
    }
}

/// Angle of the relative rotation `a·bᵀ`, radians.
pub fn rotation_angle_between(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let rel = a * b.transpose();
    let c = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    c.acos()
}

/// ZYX (yaw-pitch-roll) decomposition `R = Rz(yaw)·Ry(pitch)·Rx(roll)`,
/// returned as `(roll, pitch, yaw)` in radians.
pub fn euler_zyx(r: &Matrix3<f64>) -> (f64, f64, f64) {
    Rotation3::from_matrix_unchecked(*r).euler_angles()
}

/// Builds a right-handed frame whose Z axis is `normal`. X is horizontal
/// (perpendicular to world Z) unless the normal is vertical, in which case
/// world X is used as the reference. `spin` rotates X/Y about Z, radians.
pub fn frame_from_normal(normal: &Vector3<f64>, spin: f64) -> Matrix3<f64> {
    let z = normal.normalize();
    let up = Vector3::z();
    let mut x = up.cross(&z);
    if x.norm() < 1e-9 {
        x = Vector3::y().cross(&z);
    }
    let x = x.normalize();
    let y = z.cross(&x);
    let (s, c) = spin.sin_cos();
    let xs = x * c + y * s;
    let ys = -x * s + y * c;
    Matrix3::from_columns(&[xs, ys, z])
}

pub fn centroid(points: &[Vector3<f64>]) -> Vector3<f64> {
    let mut acc = Vector3::zeros();
    for p in points {
        acc += p;
    }
    acc / points.len().max(1) as f64
}
