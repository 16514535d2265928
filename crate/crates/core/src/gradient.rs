//! Intensity-gradient downsampling.
//!
//! Around each point the intensity is modelled as a linear function of
//! position, `Î(x) = Aᵀ(x − x̄) + b`, fitted by least squares over the point's
//! `n` nearest neighbors (the point itself included). `b` is the mean
//! neighborhood intensity and `A` the intensity gradient. Points whose
//! gradient norm exceeds a threshold are kept; on a map they trace the
//! outlines of high-contrast patterns such as fiducial tags.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::cloud::IntensityCloud;
use crate::spatial::SpatialIndex;

/// Eigenvalues below this fraction of the largest are treated as zero.
pub const RANK_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Error, PartialEq)]
pub enum GradientError {
    #[error("neighborhood of point {index} is degenerate (all points coincide)")]
    DegenerateNeighborhood { index: usize },
    #[error("need at least {needed} points for the neighborhood, cloud has {available}")]
    NotEnoughPoints { needed: usize, available: usize },
    #[error("invalid downsampling parameters: {0}")]
    InvalidParams(String),
}

/// Local linear intensity model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientModel {
    /// Intensity units per meter.
    pub gradient: Vector3<f64>,
    /// Mean neighborhood intensity.
    pub offset: f64,
    /// Mean neighborhood position; the model is centered here.
    pub center: Vector3<f64>,
    /// Distance from the query point to its farthest neighbor.
    pub radius: f64,
}

impl GradientModel {
    pub fn predict(&self, x: &Vector3<f64>) -> f64 {
        self.gradient.dot(&(x - self.center)) + self.offset
    }
}

pub fn gradient_norm(model: &GradientModel) -> f64 {
    model.gradient.norm()
}

/// Fits the local model of point `i` over its `n` nearest neighbors.
///
/// The centered normal equations `C·A = g` are solved through the eigen
/// decomposition of the coordinate covariance `C`. Directions whose
/// eigenvalue falls below [`RANK_TOLERANCE`] times the largest carry no
/// information (a planar neighborhood has one such direction) and receive a
/// zero gradient component.
pub fn fit_local_model(
    cloud: &IntensityCloud,
    index: &SpatialIndex,
    i: usize,
    n: usize,
) -> Result<GradientModel, GradientError> {
    if n < 4 {
        return Err(GradientError::InvalidParams(format!("neighborhood size {n} < 4")));
    }
    if cloud.len() < n {
        return Err(GradientError::NotEnoughPoints {
            needed: n,
            available: cloud.len(),
        });
    }
    let query = cloud.point(i).coords();
    let neighbors = index.knn(&query, n).expect("cloud is non-empty");
    let radius = neighbors.last().map(|&(_, d)| d).unwrap_or(0.0);

    let count = neighbors.len() as f64;
    let mut center = Vector3::zeros();
    let mut intensity_sum = 0.0;
    for &(j, _) in &neighbors {
        let p = cloud.point(j);
        center += p.position();
        intensity_sum += p.intensity;
    }
    center /= count;
    let offset = intensity_sum / count;

    let mut cov = Matrix3::zeros();
    let mut rhs = Vector3::zeros();
    for &(j, _) in &neighbors {
        let p = cloud.point(j);
        let d = p.position() - center;
        cov += d * d.transpose();
        rhs += d * (p.intensity - offset);
    }

    let gradient = solve_rank_aware(&cov, &rhs).ok_or(GradientError::DegenerateNeighborhood { index: i })?;
    Ok(GradientModel {
        gradient,
        offset,
        center,
        radius,
    })
}

/// Minimum-norm solution of `cov·x = rhs` restricted to the well-conditioned
/// eigen-subspace of `cov`. `None` when `cov` is zero.
fn solve_rank_aware(cov: &Matrix3<f64>, rhs: &Vector3<f64>) -> Option<Vector3<f64>> {
    let eig = SymmetricEigen::new(*cov);
    let largest = eig.eigenvalues.max();
    if !(largest > 0.0) {
        return None;
    }
    let cutoff = RANK_TOLERANCE * largest;
    let mut x = Vector3::zeros();
    for k in 0..3 {
        let lambda = eig.eigenvalues[k];
        if lambda > cutoff {
            let v = eig.eigenvectors.column(k);
            x += v * (v.dot(rhs) / lambda);
        }
    }
    Some(x)
}

/// How the gradient-norm threshold is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "mode", content = "value", rename_all = "snake_case")]
pub enum Threshold {
    /// Fixed threshold in intensity units per meter.
    Absolute(f64),
    /// Threshold at this quantile of all gradient norms in the cloud.
    Quantile(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DownsampleParams {
    pub neighbors: usize,
    pub threshold: Threshold,
}

impl Default for DownsampleParams {
    fn default() -> Self {
        Self {
            neighbors: 20,
            threshold: Threshold::Quantile(0.9),
        }
    }
}

impl DownsampleParams {
    pub fn validate(&self) -> Result<(), GradientError> {
        if self.neighbors < 4 {
            return Err(GradientError::InvalidParams(format!(
                "neighborhood size {} < 4",
                self.neighbors
            )));
        }
        match self.threshold {
            Threshold::Absolute(t) if !(t > 0.0) => Err(GradientError::InvalidParams(format!(
                "absolute threshold {t} must be positive"
            ))),
            Threshold::Quantile(q) if !(q > 0.0 && q < 1.0) => {
                Err(GradientError::InvalidParams(format!("quantile {q} must lie in (0, 1)")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DownsampleDiagnostics {
    pub input_points: usize,
    pub kept_points: usize,
    pub degenerate_points: usize,
    pub effective_tau: f64,
}

#[derive(Debug, Clone)]
pub struct Downsampled {
    pub cloud: IntensityCloud,
    /// `source[k]` is the input index of output point `k`.
    pub source: Vec<usize>,
    /// Gradient norm of each kept point.
    pub norms: Vec<f64>,
    /// Neighborhood radius of each kept point.
    pub radii: Vec<f64>,
    pub diagnostics: DownsampleDiagnostics,
}

/// Value at quantile `q` of `values` (nearest-rank definition).
pub fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Keeps the points whose intensity-gradient norm exceeds the threshold.
///
/// Per-point fits run data-parallel on the current rayon pool; results are
/// written in point order so the output does not depend on thread count.
pub fn downsample_by_gradient(
    cloud: &IntensityCloud,
    index: &SpatialIndex,
    params: &DownsampleParams,
) -> Result<Downsampled, GradientError> {
    params.validate()?;
    if cloud.len() < params.neighbors {
        return Err(GradientError::NotEnoughPoints {
            needed: params.neighbors,
            available: cloud.len(),
        });
    }
    let fits: Vec<Option<(f64, f64)>> = (0..cloud.len())
        .into_par_iter()
        .map(|i| {
            fit_local_model(cloud, index, i, params.neighbors)
                .ok()
                .map(|m| (gradient_norm(&m), m.radius))
        })
        .collect();

    let degenerate_points = fits.iter().filter(|f| f.is_none()).count();
    let tau = match params.threshold {
        Threshold::Absolute(t) => t,
        Threshold::Quantile(q) => {
            let norms: Vec<f64> = fits.iter().flatten().map(|f| f.0).collect();
            quantile(&norms, q)
        }
    };

    let mut source = Vec::new();
    let mut norms = Vec::new();
    let mut radii = Vec::new();
    for (i, fit) in fits.iter().enumerate() {
        if let Some((norm, radius)) = *fit {
            if norm > tau {
                source.push(i);
                norms.push(norm);
                radii.push(radius);
            }
        }
    }
    Ok(Downsampled {
        cloud: cloud.select(&source),
        diagnostics: DownsampleDiagnostics {
            input_points: cloud.len(),
            kept_points: source.len(),
            degenerate_points,
            effective_tau: tau,
        },
        source,
        norms,
        radii,
    })
}
