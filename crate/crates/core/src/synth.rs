//! Synthetic stitched scans of planar scenes carrying tags, and scoring
//! against their ground truth.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloud::{IntensityCloud, Point3I};
use crate::decoder::{BitMatrix, TagDictionary};
use crate::geometry::{euler_zyx, frame_from_normal, RigidTransform};
use crate::pose::{canonical_corners, TagDetection};
use crate::reproject::{rasterize, spherical, ImageGeometry, IntensityImage};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scene: {0}")]
    InvalidSpec(String),
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing scene: {0}")]
    Parse(#[from] toml::de::Error),
}

/// Angular bin of the visibility z-buffer, degrees.
pub const VISIBILITY_BIN_DEG: f64 = 0.05;
/// A point counts as visible when within this range of the nearest return in its bin.
pub const VISIBILITY_SLACK: f64 = 0.02;

fn default_viewpoints() -> Vec<[f64; 3]> {
    vec![[0.0; 3]]
}
fn default_white() -> f64 {
    220.0
}
fn default_black() -> f64 {
    30.0
}
fn default_wall() -> f64 {
    120.0
}

/// Finite rectangular surface. `spin` (degrees) turns its in-plane axes
/// about the normal; `size` is `[width, height]` along those axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneSpec {
    #[serde(default)]
    pub name: String,
    pub center: [f64; 3],
    pub normal: [f64; 3],
    #[serde(default)]
    pub spin: f64,
    pub size: [f64; 2],
    #[serde(default = "default_wall")]
    pub intensity: f64,
}

/// A tag printed on a plane; `normal` points out of its face.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagSpec {
    pub id: usize,
    pub center: [f64; 3],
    pub normal: [f64; 3],
    #[serde(default)]
    pub spin: f64,
    pub side: f64,
}

/// Round poster on a plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscSpec {
    pub center: [f64; 3],
    pub normal: [f64; 3],
    pub diameter: f64,
    pub intensity: f64,
}

/// Rectangular patch of uniform intensity on a plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchSpec {
    pub center: [f64; 3],
    pub normal: [f64; 3],
    #[serde(default)]
    pub spin: f64,
    pub size: [f64; 2],
    pub intensity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    /// Sampling density, points per square meter.
    pub density: f64,
    /// Standard deviation of the range noise, meters.
    #[serde(default)]
    pub range_noise: f64,
    #[serde(default)]
    pub intensity_noise: f64,
    #[serde(default = "default_viewpoints")]
    pub viewpoints: Vec<[f64; 3]>,
    #[serde(default = "default_white")]
    pub tag_white: f64,
    #[serde(default = "default_black")]
    pub tag_black: f64,
    /// Codebook file; the builtin dictionary when absent.
    #[serde(default)]
    pub dictionary: Option<String>,
    #[serde(default, rename = "plane")]
    pub planes: Vec<PlaneSpec>,
    #[serde(default, rename = "tag")]
    pub tags: Vec<TagSpec>,
    #[serde(default, rename = "disc")]
    pub discs: Vec<DiscSpec>,
    #[serde(default, rename = "patch")]
    pub patches: Vec<PatchSpec>,
}

const OCCLUSION_SCENE: &str = include_str!("../scenes/occlusion.toml");

impl SceneSpec {
    pub fn from_toml(text: &str) -> Result<Self, SynthError> {
        let spec: SceneSpec = toml::from_str(text)?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, SynthError> {
        let text = std::fs::read_to_string(path).map_err(|source| SynthError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scene serializes")
    }

    /// Two boards along +X seen from two viewpoints; the back board and its
    /// tag hide behind the front board when viewed from the origin.
    pub fn occlusion_scene() -> Self {
        Self::from_toml(OCCLUSION_SCENE).expect("shipped scene parses")
    }

    /// One tag on a wall facing the origin at `distance` meters along +X.
    pub fn single_tag(distance: f64, side: f64, density: f64, range_noise: f64, id: usize) -> Self {
        Self {
            density,
            range_noise,
            intensity_noise: 0.0,
            viewpoints: default_viewpoints(),
            tag_white: default_white(),
            tag_black: default_black(),
            dictionary: None,
            planes: vec![PlaneSpec {
                name: "wall".into(),
                center: [distance, 0.0, 0.0],
                normal: [-1.0, 0.0, 0.0],
                spin: 0.0,
                size: [1.2, 1.0],
                intensity: default_wall(),
            }],
            tags: vec![TagSpec {
                id,
                center: [distance, 0.1, 0.05],
                normal: [-1.0, 0.0, 0.0],
                spin: 12.0,
                side,
            }],
            discs: vec![],
            patches: vec![],
        }
    }

    fn dictionary(&self) -> Result<TagDictionary, SynthError> {
        match &self.dictionary {
            None => Ok(TagDictionary::builtin()),
            Some(p) => TagDictionary::load(Path::new(p)).map_err(|e| SynthError::InvalidSpec(e.to_string())),
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if !(self.density > 0.0 && self.density.is_finite()) {
            return bad(format!("density {}", self.density));
        }
        if !(self.range_noise >= 0.0 && self.intensity_noise >= 0.0) {
            return bad("negative noise".into());
        }
        if self.viewpoints.is_empty() {
            return bad("no viewpoints".into());
        }
        for p in &self.planes {
            if !(p.size[0] > 0.0 && p.size[1] > 0.0) || Vector3::from(p.normal).norm() == 0.0 {
                return bad(format!("plane {:?}", p.name));
            }
        }
        for t in &self.tags {
            if !(t.side > 0.0) {
                return bad(format!("tag {} side", t.id));
            }
            if host_plane(&self.planes, &t.center, &t.normal).is_none() {
                return bad(format!("tag {} does not lie on a plane", t.id));
            }
        }
        for d in &self.discs {
            if host_plane(&self.planes, &d.center, &d.normal).is_none() {
                return bad("disc does not lie on a plane".into());
            }
        }
        for p in &self.patches {
            if host_plane(&self.planes, &p.center, &p.normal).is_none() {
                return bad("patch does not lie on a plane".into());
            }
        }
        let dict = self.dictionary()?;
        for t in &self.tags {
            if t.id >= dict.len() {
                return bad(format!("tag id {} outside dictionary of {}", t.id, dict.len()));
            }
        }
        Ok(())
    }
}

impl PlaneSpec {
    pub fn frame(&self) -> RigidTransform {
        RigidTransform::new(
            frame_from_normal(&Vector3::from(self.normal), self.spin.to_radians()),
            Vector3::from(self.center),
        )
    }
}

impl TagSpec {
    /// Tag frame to map frame.
    pub fn pose(&self) -> RigidTransform {
        RigidTransform::new(
            frame_from_normal(&Vector3::from(self.normal), self.spin.to_radians()),
            Vector3::from(self.center),
        )
    }
}

/// Index of the first plane containing `center` (within its rectangle) with a parallel normal.
fn host_plane(planes: &[PlaneSpec], center: &[f64; 3], normal: &[f64; 3]) -> Option<usize> {
    let c = Vector3::from(*center);
    let n = Vector3::from(*normal);
    if n.norm() == 0.0 {
        return None;
    }
    let n = n.normalize();
    planes.iter().position(|p| {
        let f = p.frame();
        let local = f.inverse_apply(&c);
        let pn = Vector3::from(p.normal).normalize();
        local.z.abs() <= 1e-6
            && pn.dot(&n).abs() >= 1.0 - 1e-9
            && local.x.abs() <= p.size[0] / 2.0 + 1e-9
            && local.y.abs() <= p.size[1] / 2.0 + 1e-9
    })
}

/// Intensity of a tag at tag-frame point `(x, y)`, or `None` outside it.
/// Module rows count down from the top edge (+Y), columns from the left (−X).
pub fn tag_intensity(code: &BitMatrix, side: f64, x: f64, y: f64, white: f64, black: f64) -> Option<f64> {
    let h = side / 2.0;
    if x.abs() > h || y.abs() > h {
        return None;
    }
    let n = code.size();
    let cells = n + 4;
    let module = side / cells as f64;
    let col = (((x + h) / module).floor() as usize).min(cells - 1);
    let row = (((h - y) / module).floor() as usize).min(cells - 1);
    let ring = row.min(col).min(cells - 1 - row).min(cells - 1 - col);
    let is_white = match ring {
        0 => true,
        1 => false,
        _ => code.get(row - 2, col - 2),
    };
    Some(if is_white { white } else { black })
}

enum Overlay {
    Patch {
        frame: RigidTransform,
        size: [f64; 2],
        intensity: f64,
    },
    Disc {
        center: Vector3<f64>,
        radius: f64,
        intensity: f64,
    },
    Tag {
        frame: RigidTransform,
        side: f64,
        code: BitMatrix,
    },
}

impl Overlay {
    fn intensity(&self, p: &Vector3<f64>, white: f64, black: f64) -> Option<f64> {
        match self {
            Overlay::Patch { frame, size, intensity } => {
                let l = frame.inverse_apply(p);
                (l.x.abs() <= size[0] / 2.0 && l.y.abs() <= size[1] / 2.0).then_some(*intensity)
            }
            Overlay::Disc {
                center,
                radius,
                intensity,
            } => ((p - center).norm() <= *radius).then_some(*intensity),
            Overlay::Tag { frame, side, code } => {
                let l = frame.inverse_apply(p);
                tag_intensity(code, *side, l.x, l.y, white, black)
            }
        }
    }
}

/// Ground truth of one tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthTag {
    pub id: usize,
    pub side: f64,
    /// Map-frame corners in tag index order.
    pub vertices: [[f64; 3]; 4],
    /// Tag frame to map frame, row-major 4×4.
    pub pose_row_major: [f64; 16],
}

impl TruthTag {
    pub fn pose(&self) -> RigidTransform {
        let m = &self.pose_row_major;
        RigidTransform::new(
            Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]),
            Vector3::new(m[3], m[7], m[11]),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct SceneTruth {
    pub tags: Vec<TruthTag>,
}

impl SceneTruth {
    pub fn load(path: &Path) -> Result<Self, SynthError> {
        let text = std::fs::read_to_string(path).map_err(|source| SynthError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| SynthError::InvalidSpec(e.to_string()))
    }
}

fn mix_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Jittered-grid samples of a plane: one point per cell of side `1/√density`.
fn sample_plane(plane: &PlaneSpec, density: f64, seed: u64) -> Vec<Vector3<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = 1.0 / density.sqrt();
    let nu = ((plane.size[0] / s).round() as usize).max(1);
    let nv = ((plane.size[1] / s).round() as usize).max(1);
    let (cu, cv) = (plane.size[0] / nu as f64, plane.size[1] / nv as f64);
    let frame = plane.frame();
    let mut out = Vec::with_capacity(nu * nv);
    for j in 0..nv {
        for i in 0..nu {
            let x = -plane.size[0] / 2.0 + (i as f64 + rng.gen::<f64>()) * cu;
            let y = -plane.size[1] / 2.0 + (j as f64 + rng.gen::<f64>()) * cv;
            out.push(frame.apply(&Vector3::new(x, y, 0.0)));
        }
    }
    out
}

fn bin_key(d: &Vector3<f64>, bin: f64) -> (i64, i64) {
    let (theta, phi, _) = spherical(d);
    ((theta / bin).round() as i64, (phi / bin).round() as i64)
}

/// For each point, the first viewpoint that sees it under the angular z-buffer.
pub fn visibility(points: &[Vector3<f64>], viewpoints: &[Vector3<f64>]) -> Vec<Option<usize>> {
    let bin = VISIBILITY_BIN_DEG.to_radians();
    let mut seen: Vec<Option<usize>> = vec![None; points.len()];
    for (vi, v) in viewpoints.iter().enumerate() {
        let keyed: Vec<((i64, i64), f64)> = points
            .par_iter()
            .map(|p| {
                let d = p - v;
                (bin_key(&d, bin), d.norm())
            })
            .collect();
        let mut nearest: HashMap<(i64, i64), f64> = HashMap::with_capacity(points.len() / 2);
        for (k, r) in &keyed {
            let e = nearest.entry(*k).or_insert(f64::INFINITY);
            if *r < *e {
                *e = *r;
            }
        }
        for (i, (k, r)) in keyed.iter().enumerate() {
            if seen[i].is_none() && *r <= nearest[k] + VISIBILITY_SLACK {
                seen[i] = Some(vi);
            }
        }
    }
    seen
}

/// Samples every plane, applies overlays, keeps points visible from at least
/// one viewpoint and adds range and intensity noise. Deterministic in `seed`
/// and independent of the thread count.
pub fn synth_scene(spec: &SceneSpec, seed: u64) -> Result<(IntensityCloud, SceneTruth), SynthError> {
    spec.validate()?;
    let dict = spec.dictionary()?;
    let mut overlays: Vec<Vec<Overlay>> = (0..spec.planes.len()).map(|_| Vec::new()).collect();
    for p in &spec.patches {
        let host = host_plane(&spec.planes, &p.center, &p.normal).expect("validated");
        overlays[host].push(Overlay::Patch {
            frame: RigidTransform::new(
                frame_from_normal(&Vector3::from(p.normal), p.spin.to_radians()),
                Vector3::from(p.center),
            ),
            size: p.size,
            intensity: p.intensity,
        });
    }
    for d in &spec.discs {
        let host = host_plane(&spec.planes, &d.center, &d.normal).expect("validated");
        overlays[host].push(Overlay::Disc {
            center: Vector3::from(d.center),
            radius: d.diameter / 2.0,
            intensity: d.intensity,
        });
    }
    let mut truth = SceneTruth::default();
    for t in &spec.tags {
        let host = host_plane(&spec.planes, &t.center, &t.normal).expect("validated");
        let pose = t.pose();
        overlays[host].push(Overlay::Tag {
            frame: pose,
            side: t.side,
            code: *dict.codeword(t.id).expect("validated"),
        });
        truth.tags.push(TruthTag {
            id: t.id,
            side: t.side,
            vertices: canonical_corners(t.side).map(|c| {
                let p = pose.apply(&c);
                [p.x, p.y, p.z]
            }),
            pose_row_major: pose.to_row_major(),
        });
    }

    // per-plane samples with their intensities, in plane order
    let sampled: Vec<(Vec<Vector3<f64>>, Vec<f64>)> = spec
        .planes
        .par_iter()
        .enumerate()
        .map(|(k, plane)| {
            let pts = sample_plane(plane, spec.density, mix_seed(seed, 2 * k as u64));
            let vals = pts
                .iter()
                .map(|p| {
                    // later overlays are painted on top
                    overlays[k]
                        .iter()
                        .rev()
                        .find_map(|o| o.intensity(p, spec.tag_white, spec.tag_black))
                        .unwrap_or(plane.intensity)
                })
                .collect();
            (pts, vals)
        })
        .collect();

    let mut points = Vec::new();
    let mut values = Vec::new();
    let mut plane_of = Vec::new();
    for (k, (p, v)) in sampled.into_iter().enumerate() {
        plane_of.extend(std::iter::repeat(k).take(p.len()));
        points.extend(p);
        values.extend(v);
    }
    let viewpoints: Vec<Vector3<f64>> = spec.viewpoints.iter().map(|v| Vector3::from(*v)).collect();
    let seen = visibility(&points, &viewpoints);

    let range = Normal::new(0.0, spec.range_noise.max(0.0)).expect("finite sigma");
    let inten = Normal::new(0.0, spec.intensity_noise.max(0.0)).expect("finite sigma");
    let mut rngs: Vec<ChaCha8Rng> = (0..spec.planes.len())
        .map(|k| ChaCha8Rng::seed_from_u64(mix_seed(seed, 2 * k as u64 + 1)))
        .collect();
    let mut out = Vec::with_capacity(points.len());
    for i in 0..points.len() {
        let rng = &mut rngs[plane_of[i]];
        let (dr, di): (f64, f64) = (rng.sample(range), rng.sample(inten));
        let Some(vi) = seen[i] else { continue };
        let v = viewpoints[vi];
        let ray = points[i] - v;
        let r = ray.norm();
        let p = if r > 0.0 { v + ray * ((r + dr) / r) } else { points[i] };
        let value = (values[i] + di).max(0.0);
        out.push(Point3I::new(
            p.x as f32 as f64,
            p.y as f32 as f64,
            p.z as f32 as f64,
            value as f32 as f64,
        ));
    }
    let cloud = IntensityCloud::from_points(out).map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
    Ok((cloud, truth))
}

/// Geometry covering the whole cloud as seen from the origin at resolution `res`,
/// widened if needed so neither side exceeds `max_pixels`.
pub fn baseline_geometry(cloud: &IntensityCloud, res: f64, max_pixels: usize) -> Option<ImageGeometry> {
    if cloud.is_empty() {
        return None;
    }
    let (mut t0, mut t1, mut p0, mut p1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in cloud.iter() {
        let (t, f, _) = spherical(&p.position());
        t0 = t0.min(t);
        t1 = t1.max(t);
        p0 = p0.min(f);
        p1 = p1.max(f);
    }
    let span = (t1 - t0).max(p1 - p0);
    let res = res.max(span / max_pixels as f64);
    Some(ImageGeometry::covering((t0, t1), (p0, p1), res, 2))
}

/// One global nearest-range image of the map from the origin.
pub fn spherical_project_baseline(cloud: &IntensityCloud, geometry: ImageGeometry) -> IntensityImage {
    let points: Vec<Vector3<f64>> = cloud.iter().map(|p| p.position()).collect();
    let values: Vec<f64> = cloud.iter().map(|p| p.intensity).collect();
    let ids: Vec<usize> = (0..cloud.len()).collect();
    rasterize(&points, &values, &ids, geometry)
}

/// Errors of one ground-truth tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagError {
    pub id: usize,
    pub detected: bool,
    /// More than one detection carried this ID; errors refer to the first.
    pub duplicate: bool,
    /// Estimated minus true translation, meters.
    pub translation_error: Option<[f64; 3]>,
    /// ZYX decomposition `(roll, pitch, yaw)` of `R_est·R_trueᵀ`, degrees.
    pub rotation_error_deg: Option<[f64; 3]>,
    pub vertex_rms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub detected: usize,
    pub expected: usize,
    /// `"k / m"`.
    pub count: String,
    pub tags: Vec<TagError>,
    /// Detected IDs absent from the truth.
    pub false_positives: Vec<usize>,
}

pub fn evaluate(detections: &[TagDetection], truth: &SceneTruth) -> EvalReport {
    let mut tags = Vec::new();
    for t in &truth.tags {
        let hits: Vec<&TagDetection> = detections.iter().filter(|d| d.id == t.id).collect();
        let mut e = TagError {
            id: t.id,
            detected: !hits.is_empty(),
            duplicate: hits.len() > 1,
            translation_error: None,
            rotation_error_deg: None,
            vertex_rms: None,
        };
        if let Some(d) = hits.first() {
            let tp = t.pose();
            let dt = d.pose.translation - tp.translation;
            let (roll, pitch, yaw) = euler_zyx(&(d.pose.rotation * tp.rotation.transpose()));
            let sq: f64 = (0..4)
                .map(|k| (d.vertices[k] - Vector3::from(t.vertices[k])).norm_squared())
                .sum();
            e.translation_error = Some([dt.x, dt.y, dt.z]);
            e.rotation_error_deg = Some([roll.to_degrees(), pitch.to_degrees(), yaw.to_degrees()]);
            e.vertex_rms = Some((sq / 4.0).sqrt());
        }
        tags.push(e);
    }
    let detected = tags.iter().filter(|t| t.detected).count();
    let mut false_positives: Vec<usize> = detections
        .iter()
        .map(|d| d.id)
        .filter(|id| !truth.tags.iter().any(|t| t.id == *id))
        .collect();
    false_positives.sort_unstable();
    EvalReport {
        detected,
        expected: truth.tags.len(),
        count: format!("{} / {}", detected, truth.tags.len()),
        tags,
        false_positives,
    }
}
