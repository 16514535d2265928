//! JSON detection report.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::filter::CriteriaRecord;
use crate::geometry::RigidTransform;
use crate::pose::TagDetection;

/// Significant digits of every float in a written report.
pub const REPORT_DIGITS: usize = 9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VertexRecord {
    pub index: usize,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagRecord {
    pub id: usize,
    pub mirrored: bool,
    pub vertices: Vec<VertexRecord>,
    /// Tag frame to map frame.
    pub pose_row_major: [f64; 16],
    /// Map frame to tag frame.
    pub pose_inverse_row_major: [f64; 16],
    pub rms_residual: f64,
}

impl TagRecord {
    pub fn from_detection(d: &TagDetection) -> Self {
        Self {
            id: d.id,
            mirrored: d.mirrored,
            vertices: d
                .vertices
                .iter()
                .enumerate()
                .map(|(index, v)| VertexRecord {
                    index,
                    x: v.x,
                    y: v.y,
                    z: v.z,
                })
                .collect(),
            pose_row_major: d.pose.to_row_major(),
            pose_inverse_row_major: d.pose.inverse().to_row_major(),
            rms_residual: d.rms_residual,
        }
    }

    /// Back to a detection; `None` unless exactly vertices 0..4 are present.
    pub fn to_detection(&self) -> Option<TagDetection> {
        let mut vertices = [Vector3::zeros(); 4];
        let mut seen = [false; 4];
        for v in &self.vertices {
            if v.index >= 4 || seen[v.index] {
                return None;
            }
            seen[v.index] = true;
            vertices[v.index] = Vector3::new(v.x, v.y, v.z);
        }
        if !seen.iter().all(|s| *s) {
            return None;
        }
        let m = &self.pose_row_major;
        Some(TagDetection {
            id: self.id,
            mirrored: self.mirrored,
            vertices,
            pose: RigidTransform::new(
                Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]),
                Vector3::new(m[3], m[7], m[11]),
            ),
            rms_residual: self.rms_residual,
        })
    }
}

/// What happened to one candidate box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct CandidateDiagnostic {
    /// Index into the cluster list.
    pub cluster: usize,
    pub cluster_points: usize,
    pub buffered_points: usize,
    pub image_size: [usize; 2],
    pub quads: usize,
    pub frame_failures: usize,
    pub unmatched: usize,
    pub decoded: Vec<usize>,
    /// Why the candidate was dropped, if it was.
    pub dropped: Option<String>,
}

/// One cluster's box and criteria, for the debug manifest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObbManifestEntry {
    pub cluster: usize,
    pub points: usize,
    pub center: [f64; 3],
    pub pose_row_major: [f64; 16],
    pub extents: [f64; 3],
    pub criteria: CriteriaRecord,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct Diagnostics {
    /// `"pipeline"` or `"baseline"`.
    pub mode: String,
    pub input_points: usize,
    pub downsampled_points: usize,
    pub degenerate_points: usize,
    pub gradient_threshold: f64,
    pub cluster_tolerance: f64,
    pub edge_band: f64,
    pub clusters: usize,
    pub surviving_candidates: usize,
    pub candidates: Vec<CandidateDiagnostic>,
    /// Same-ID detections closer than half a side that were merged.
    pub merged_duplicates: usize,
    /// IDs detected at more than one place.
    pub duplicate_ids: Vec<usize>,
    pub image_size: Option<[usize; 2]>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct DetectionReport {
    pub tags: Vec<TagRecord>,
    pub diagnostics: Diagnostics,
}

impl DetectionReport {
    pub fn detections(&self) -> Vec<TagDetection> {
        self.tags.iter().filter_map(TagRecord::to_detection).collect()
    }

    pub fn ids(&self) -> Vec<usize> {
        self.tags.iter().map(|t| t.id).collect()
    }

    /// Pretty JSON with every float rounded to [`REPORT_DIGITS`] significant digits.
    pub fn to_json(&self) -> String {
        let mut value = serde_json::to_value(self).expect("report serializes");
        round_floats(&mut value, REPORT_DIGITS);
        let mut s = serde_json::to_string_pretty(&value).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Round `x` to `digits` significant digits.
pub fn round_significant(x: f64, digits: usize) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{:.*e}", digits.saturating_sub(1), x)
        .parse()
        .expect("formatted float parses")
}

/// Rounds every non-integer number in `value` in place.
pub fn round_floats(value: &mut Value, digits: usize) {
    match value {
        Value::Number(n) if n.is_f64() => {
            let x = round_significant(n.as_f64().expect("f64"), digits);
            if let Some(r) = serde_json::Number::from_f64(x) {
                *n = r;
            }
        }
        Value::Array(items) => items.iter_mut().for_each(|v| round_floats(v, digits)),
        Value::Object(map) => map.values_mut().for_each(|v| round_floats(v, digits)),
        _ => {}
    }
}
