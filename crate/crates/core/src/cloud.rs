//! Intensity-annotated point clouds.

use nalgebra::Vector3;
use thiserror::Error;

/// A single LiDAR return: position in meters plus reflectance intensity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point3I {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub intensity: f64,
}

impl Point3I {
    pub fn new(x: f64, y: f64, z: f64, intensity: f64) -> Self {
        Self { x, y, z, intensity }
    }

    pub fn from_position(p: &Vector3<f64>, intensity: f64) -> Self {
        Self::new(p.x, p.y, p.z, intensity)
    }

    #[inline]
    pub fn position(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    #[inline]
    pub fn coords(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn is_valid(&self) -> bool {
        self.x.is_finite()
            && self.y.is_finite()
            && self.z.is_finite()
            && self.intensity.is_finite()
            && self.intensity >= 0.0
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum CloudError {
    #[error("point {index} is invalid (non-finite coordinate or negative intensity)")]
    InvalidPoint { index: usize },
    #[error("the cloud is empty")]
    EmptyCloud,
}

/// Ordered point set. Index `i` refers to the same point for the cloud's lifetime.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IntensityCloud {
    points: Vec<Point3I>,
}

impl IntensityCloud {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a cloud, rejecting NaN/Inf coordinates and negative intensities.
    pub fn from_points(points: Vec<Point3I>) -> Result<Self, CloudError> {
        if let Some(index) = points.iter().position(|p| !p.is_valid()) {
            return Err(CloudError::InvalidPoint { index });
        }
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3I] {
        &self.points
    }

    #[inline]
    pub fn point(&self, i: usize) -> &Point3I {
        &self.points[i]
    }

    #[inline]
    pub fn position(&self, i: usize) -> Vector3<f64> {
        self.points[i].position()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Point3I> {
        self.points.iter()
    }

    /// New cloud holding the given source indices, in the order given.
    pub fn select(&self, indices: &[usize]) -> IntensityCloud {
        IntensityCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
        }
    }

    pub fn into_points(self) -> Vec<Point3I> {
        self.points
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite_points() {
        let pts = vec![Point3I::new(0.0, 0.0, 0.0, 1.0), Point3I::new(f64::NAN, 0.0, 0.0, 1.0)];
        assert_eq!(
            IntensityCloud::from_points(pts),
            Err(CloudError::InvalidPoint { index: 1 })
        );
        let pts = vec![Point3I::new(0.0, 0.0, 0.0, -1.0)];
        assert!(IntensityCloud::from_points(pts).is_err());
    }

    #[test]
    fn select_keeps_order() {
        let cloud =
            IntensityCloud::from_points((0..5).map(|i| Point3I::new(i as f64, 0.0, 0.0, 0.0)).collect()).unwrap();
        let sub = cloud.select(&[3, 1]);
        assert_eq!(sub.point(0).x, 3.0);
        assert_eq!(sub.point(1).x, 1.0);
    }
}
