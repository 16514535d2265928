//! Size and shape tests on cluster boxes, and buffered extraction from the raw map.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloud::IntensityCloud;
use crate::cluster::ObbCandidate;
use crate::spatial::SpatialIndex;

#[derive(Debug, Error, PartialEq)]
pub enum FilterError {
    #[error("invalid tag geometry: side {side}, thickness {thickness}")]
    InvalidGeometry { side: f64, thickness: f64 },
    #[error("no raw map points inside the enlarged box")]
    EmptySelection,
    #[error("invalid buffer factor {0}")]
    InvalidBuffer(f64),
}

/// Physical tag size: side `a` and thickness allowance `δ`, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TagGeometry {
    pub side: f64,
    pub thickness: f64,
}

impl TagGeometry {
    pub fn new(side: f64, thickness: f64) -> Result<Self, FilterError> {
        if !(side > 0.0 && thickness > 0.0 && thickness < side && side.is_finite()) {
            return Err(FilterError::InvalidGeometry { side, thickness });
        }
        Ok(Self { side, thickness })
    }

    /// `[√(2a²+δ²), √(4a²+δ²)]`.
    pub fn diagonal_bounds(&self) -> (f64, f64) {
        let a2 = self.side * self.side;
        let d2 = self.thickness * self.thickness;
        ((2.0 * a2 + d2).sqrt(), (4.0 * a2 + d2).sqrt())
    }
}

pub const DEFAULT_DIAGONAL_MARGIN: f64 = 0.02;
pub const ASPECT_LIMIT: f64 = 1.5;

/// Diagonal test with the bounds widened by a relative `margin` on both sides.
pub fn criterion_diagonal_with_margin(extents: &[f64; 3], geom: &TagGeometry, margin: f64) -> bool {
    let [l, w, h] = *extents;
    if h > geom.thickness {
        return false;
    }
    let diag = (l * l + w * w + h * h).sqrt();
    let (lo, hi) = geom.diagonal_bounds();
    diag >= lo * (1.0 - margin) && diag <= hi * (1.0 + margin)
}

pub fn criterion_diagonal(obb: &ObbCandidate, geom: &TagGeometry) -> bool {
    criterion_diagonal_with_margin(&obb.extents, geom, DEFAULT_DIAGONAL_MARGIN)
}

/// `1/1.5 ≤ l/w ≤ 1.5`. A zero width fails.
pub fn criterion_aspect_extents(extents: &[f64; 3]) -> bool {
    let [l, w, _] = *extents;
    if !(w > 0.0) {
        return false;
    }
    let ratio = l / w;
    ratio >= 1.0 / ASPECT_LIMIT && ratio <= ASPECT_LIMIT
}

pub fn criterion_aspect(obb: &ObbCandidate) -> bool {
    criterion_aspect_extents(&obb.extents)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterParams {
    pub diagonal_margin: f64,
    /// Width of the intensity-edge band that inflates a cluster beyond the
    /// true tag outline, per side, meters. Subtracted from `l` and `w`
    /// before the tests.
    pub band: f64,
}

impl Default for FilterParams {
    fn default() -> Self {
        Self {
            diagonal_margin: DEFAULT_DIAGONAL_MARGIN,
            band: 0.0,
        }
    }
}

/// Per-candidate outcome of the two criteria.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CriteriaRecord {
    /// Extents the criteria were evaluated on.
    pub extents: [f64; 3],
    pub diagonal: f64,
    /// `l/w`; infinite for a zero width.
    pub aspect: f64,
    pub diagonal_pass: bool,
    pub aspect_pass: bool,
}

impl CriteriaRecord {
    pub fn passed(&self) -> bool {
        self.diagonal_pass && self.aspect_pass
    }
}

pub fn evaluate_criteria(obb: &ObbCandidate, geom: &TagGeometry, params: &FilterParams) -> CriteriaRecord {
    let [l, w, h] = obb.extents;
    let shrink = 2.0 * params.band;
    let extents = [(l - shrink).max(0.0), (w - shrink).max(0.0), h];
    let [l, w, h] = extents;
    CriteriaRecord {
        extents,
        diagonal: (l * l + w * w + h * h).sqrt(),
        aspect: if w > 0.0 { l / w } else { f64::INFINITY },
        diagonal_pass: criterion_diagonal_with_margin(&extents, geom, params.diagonal_margin),
        aspect_pass: criterion_aspect_extents(&extents),
    }
}

/// Candidates passing both criteria in input order, and the record for every input.
pub fn filter_candidates_with(
    obbs: &[ObbCandidate],
    geom: &TagGeometry,
    params: &FilterParams,
) -> (Vec<ObbCandidate>, Vec<CriteriaRecord>) {
    let records: Vec<CriteriaRecord> = obbs.iter().map(|o| evaluate_criteria(o, geom, params)).collect();
    let kept = obbs
        .iter()
        .zip(&records)
        .filter(|(_, r)| r.passed())
        .map(|(o, _)| o.clone())
        .collect();
    (kept, records)
}

pub fn filter_candidates(obbs: &[ObbCandidate], geom: &TagGeometry) -> Vec<ObbCandidate> {
    filter_candidates_with(obbs, geom, &FilterParams::default()).0
}

/// How a surviving box is enlarged before the raw-map cut.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum BufferMode {
    /// In-plane extents raised to at least `factor·a`; thickness raised to
    /// at least `δ` and then padded by `δ`.
    Floor { factor: f64 },
    /// Every extent multiplied by `factor`.
    Scale { factor: f64 },
}

impl Default for BufferMode {
    fn default() -> Self {
        BufferMode::Floor { factor: 2.0 }
    }
}

impl BufferMode {
    pub fn enlarged(&self, extents: &[f64; 3], geom: &TagGeometry) -> Result<[f64; 3], FilterError> {
        let [l, w, h] = *extents;
        match *self {
            BufferMode::Floor { factor } => {
                if !(factor > 0.0 && factor.is_finite()) {
                    return Err(FilterError::InvalidBuffer(factor));
                }
                let floor = factor * geom.side;
                Ok([l.max(floor), w.max(floor), h.max(geom.thickness) + geom.thickness])
            }
            BufferMode::Scale { factor } => {
                if !(factor >= 1.0 && factor.is_finite()) {
                    return Err(FilterError::InvalidBuffer(factor));
                }
                Ok([l * factor, w * factor, h * factor])
            }
        }
    }
}

/// Raw-map points inside an enlarged copy of a candidate box.
#[derive(Debug, Clone, PartialEq)]
pub struct BufferedCandidate {
    pub source: ObbCandidate,
    /// Ascending indices into the raw map.
    pub indices: Vec<usize>,
    pub extents: [f64; 3],
}

impl BufferedCandidate {
    /// The source box with its extents replaced by the enlarged ones.
    pub fn enlarged_box(&self) -> ObbCandidate {
        ObbCandidate {
            extents: self.extents,
            ..self.source.clone()
        }
    }
}

pub fn extract_buffered(
    raw: &IntensityCloud,
    raw_index: &SpatialIndex,
    obb: &ObbCandidate,
    geom: &TagGeometry,
    mode: BufferMode,
) -> Result<BufferedCandidate, FilterError> {
    let extents = mode.enlarged(&obb.extents, geom)?;
    let [l, w, h] = extents;
    let reach = 0.5 * (l * l + w * w + h * h).sqrt();
    let center = obb.center();
    let indices: Vec<usize> = raw_index
        .within_radius(&[center.x, center.y, center.z], reach)
        .into_iter()
        .filter(|&i| {
            let local = obb.pose.inverse_apply(&raw.position(i));
            (0..3).all(|k| local[k].abs() <= extents[k] / 2.0)
        })
        .collect();
    if indices.is_empty() {
        return Err(FilterError::EmptySelection);
    }
    Ok(BufferedCandidate {
        source: obb.clone(),
        indices,
        extents,
    })
}
