//! End-to-end tag localization and the global-projection baseline.

use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloud::IntensityCloud;
use crate::cluster::{compute_obb, euclidean_cluster_indexed, mean_nn_spacing, ObbCandidate};
use crate::decoder::{decode_image, DecodeOutcome, DecoderParams, TagDictionary};
use crate::filter::{evaluate_criteria, extract_buffered, BufferMode, FilterParams, TagGeometry};
use crate::geometry::centroid;
use crate::gradient::{downsample_by_gradient, quantile, DownsampleParams, GradientError, Threshold};
use crate::pcd::{load_pcd, save_pcd, PcdEncoding, PcdError};
use crate::pose::{assemble_detection, TagDetection};
use crate::report::{CandidateDiagnostic, DetectionReport, Diagnostics, ObbManifestEntry, TagRecord};
use crate::reproject::{
    render_intensity_image, render_with_geometry, unproject_vertex, ImageGeometry, IntensityImage, PlaneFrameCandidate,
    RenderParams,
};
use crate::spatial::SpatialIndex;
use crate::synth::baseline_geometry;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Pcd(#[from] PcdError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Every tunable of a run. Field names double as TOML keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub input: Option<PathBuf>,
    /// Tag side `a`, meters, white margin included.
    pub tag_size: f64,
    /// Thickness allowance `δ`, meters.
    pub thickness: f64,
    /// `"builtin"` or a codebook file.
    pub dictionary: String,
    pub gradient_neighbors: usize,
    pub gradient_quantile: f64,
    /// Absolute gradient threshold; replaces the quantile when set.
    pub gradient_tau: Option<f64>,
    /// Clustering distance; by default `cluster_spacing_factor` times the
    /// mean nearest-neighbor spacing of the downsampled cloud.
    pub cluster_tolerance: Option<f64>,
    pub cluster_spacing_factor: f64,
    pub min_cluster: usize,
    pub max_cluster: Option<usize>,
    pub diagonal_margin: f64,
    /// Edge-band width; by default the median neighborhood radius of the kept points.
    pub edge_band: Option<f64>,
    pub buffer: BufferMode,
    pub render: RenderParams,
    /// Angular resolution of the baseline image, radians per pixel.
    pub baseline_resolution: f64,
    pub baseline_max_pixels: usize,
    pub max_correction: u32,
    pub output: Option<PathBuf>,
    pub debug_dir: Option<PathBuf>,
    /// Worker threads; 0 lets rayon decide.
    pub threads: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            input: None,
            tag_size: 0.2,
            thickness: 0.03,
            dictionary: "builtin".into(),
            gradient_neighbors: 20,
            gradient_quantile: 0.9,
            gradient_tau: None,
            cluster_tolerance: None,
            cluster_spacing_factor: 2.5,
            min_cluster: 30,
            max_cluster: None,
            diagonal_margin: crate::filter::DEFAULT_DIAGONAL_MARGIN,
            edge_band: None,
            buffer: BufferMode::default(),
            render: RenderParams::default(),
            baseline_resolution: 1e-3,
            baseline_max_pixels: 4096,
            max_correction: 1,
            output: None,
            debug_dir: None,
            threads: 0,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(io_error(path))?;
        Self::from_toml(&text)
    }

    pub fn tag_geometry(&self) -> Result<TagGeometry, PipelineError> {
        TagGeometry::new(self.tag_size, self.thickness).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn downsample_params(&self) -> DownsampleParams {
        DownsampleParams {
            neighbors: self.gradient_neighbors,
            threshold: match self.gradient_tau {
                Some(t) => Threshold::Absolute(t),
                None => Threshold::Quantile(self.gradient_quantile),
            },
        }
    }

    pub fn decoder_params(&self) -> DecoderParams {
        DecoderParams {
            max_correction: self.max_correction,
            ..DecoderParams::default()
        }
    }

    pub fn load_dictionary(&self) -> Result<TagDictionary, PipelineError> {
        if self.dictionary == "builtin" {
            return Ok(TagDictionary::builtin());
        }
        TagDictionary::load(Path::new(&self.dictionary)).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        self.tag_geometry()?;
        self.downsample_params()
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        if let Some(t) = self.cluster_tolerance {
            if !(t > 0.0 && t.is_finite()) {
                return bad(format!("cluster tolerance {t}"));
            }
        }
        if !(self.cluster_spacing_factor > 0.0) {
            return bad(format!("cluster spacing factor {}", self.cluster_spacing_factor));
        }
        if self.min_cluster == 0 || self.max_cluster.is_some_and(|m| m < self.min_cluster) {
            return bad("cluster size range is empty".into());
        }
        if !(self.diagonal_margin >= 0.0 && self.diagonal_margin < 1.0) {
            return bad(format!("diagonal margin {}", self.diagonal_margin));
        }
        if let Some(b) = self.edge_band {
            if !(b >= 0.0) {
                return bad(format!("edge band {b}"));
            }
        }
        self.buffer
            .enlarged(&[self.tag_size, self.tag_size, 0.0], &self.tag_geometry()?)
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        let r = &self.render;
        if !(r.pixels_per_two_sides > 0.0)
            || r.min_pixels == 0
            || r.max_pixels < r.min_pixels
            || r.median_min_neighbors > 8
        {
            return bad("render parameters".into());
        }
        if !(self.baseline_resolution > 0.0) || self.baseline_max_pixels == 0 {
            return bad("baseline resolution".into());
        }
        if let Some(p) = &self.input {
            if !p.is_file() {
                return bad(format!("input {} does not exist", p.display()));
            }
        }
        if self.dictionary != "builtin" && !Path::new(&self.dictionary).is_file() {
            return bad(format!("dictionary {} does not exist", self.dictionary));
        }
        Ok(())
    }

    fn thread_pool(&self) -> Result<rayon::ThreadPool, PipelineError> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.threads)
            .build()
            .map_err(|e| PipelineError::Config(e.to_string()))
    }

    fn input_cloud(&self) -> Result<IntensityCloud, PipelineError> {
        let path = self
            .input
            .as_ref()
            .ok_or_else(|| PipelineError::Config("no input file".into()))?;
        Ok(load_pcd(path)?)
    }
}

/// Loads `config.input`, runs [`detect_tags`] and writes the report if an output is set.
pub fn run_pipeline(config: &PipelineConfig) -> Result<DetectionReport, PipelineError> {
    config.validate()?;
    let cloud = config.input_cloud()?;
    let report = detect_tags(&cloud, config)?;
    write_output(&report, config)?;
    Ok(report)
}

/// As [`run_pipeline`] with [`detect_tags_baseline`].
pub fn run_baseline(config: &PipelineConfig) -> Result<DetectionReport, PipelineError> {
    config.validate()?;
    let cloud = config.input_cloud()?;
    let report = detect_tags_baseline(&cloud, config)?;
    write_output(&report, config)?;
    Ok(report)
}

fn write_output(report: &DetectionReport, config: &PipelineConfig) -> Result<(), PipelineError> {
    if let Some(path) = &config.output {
        std::fs::write(path, report.to_json()).map_err(io_error(path))?;
    }
    Ok(())
}

fn debug_dir(config: &PipelineConfig) -> Result<Option<&Path>, PipelineError> {
    match &config.debug_dir {
        Some(d) => {
            std::fs::create_dir_all(d).map_err(io_error(d))?;
            Ok(Some(d.as_path()))
        }
        None => Ok(None),
    }
}

/// Per-candidate result of reprojection, decoding and pose assembly.
struct CandidateResult {
    diagnostic: CandidateDiagnostic,
    detections: Vec<TagDetection>,
    image: Option<IntensityImage>,
}

fn process_candidate(
    raw: &IntensityCloud,
    raw_index: &SpatialIndex,
    cluster: usize,
    obb: &ObbCandidate,
    geom: &TagGeometry,
    dict: &TagDictionary,
    config: &PipelineConfig,
) -> CandidateResult {
    let mut out = CandidateResult {
        diagnostic: CandidateDiagnostic {
            cluster,
            cluster_points: obb.members.len(),
            ..Default::default()
        },
        detections: Vec::new(),
        image: None,
    };
    let drop = |mut out: CandidateResult, why: String| {
        out.diagnostic.dropped = Some(why);
        out
    };
    let buffered = match extract_buffered(raw, raw_index, obb, geom, config.buffer) {
        Ok(b) => b,
        Err(e) => return drop(out, e.to_string()),
    };
    out.diagnostic.buffered_points = buffered.indices.len();
    let candidate = match PlaneFrameCandidate::from_buffered(raw, &buffered) {
        Ok(c) => c,
        Err(e) => return drop(out, e.to_string()),
    };
    let image = match render_intensity_image(&candidate, geom.side, None, &config.render) {
        Ok(i) => i,
        Err(e) => return drop(out, e.to_string()),
    };
    out.diagnostic.image_size = [image.width(), image.height()];
    let decoded = decode_image(&image, dict, &config.decoder_params());
    out.image = Some(image);
    let outcome = match decoded {
        Ok(o) => o,
        Err(e) => return drop(out, e.to_string()),
    };
    record_outcome(&mut out.diagnostic, &outcome);
    let geometry = out.image.as_ref().expect("rendered").geometry;
    for tag in &outcome.tags {
        let mut vertices = [Vector3::zeros(); 4];
        let mut ok = true;
        for (k, c) in tag.corners.iter().enumerate() {
            match unproject_vertex((c[0], c[1]), &geometry, &candidate) {
                Ok(v) => vertices[k] = v,
                Err(_) => ok = false,
            }
        }
        if !ok {
            continue;
        }
        if let Ok(d) = assemble_detection(tag.id, tag.mirrored, vertices, geom.side, geom.thickness) {
            out.detections.push(d);
        }
    }
    if out.detections.is_empty() {
        let why = if outcome.tags.is_empty() {
            "no dictionary match".to_string()
        } else {
            "pose rejected".to_string()
        };
        return drop(out, why);
    }
    out
}

fn record_outcome(d: &mut CandidateDiagnostic, outcome: &DecodeOutcome) {
    d.quads = outcome.quads;
    d.frame_failures = outcome.frame_failures;
    d.unmatched = outcome.unmatched;
    d.decoded = outcome.tags.iter().map(|t| t.id).collect();
}

/// Drops detections of an ID already found within `a/2` of an earlier one,
/// then sorts by ID. Returns the merged count and the IDs seen at several places.
fn dedup(detections: Vec<TagDetection>, side: f64) -> (Vec<TagDetection>, usize, Vec<usize>) {
    let mut kept: Vec<TagDetection> = Vec::new();
    let mut merged = 0;
    for d in detections {
        let c = centroid(&d.vertices);
        let near = kept
            .iter()
            .any(|k| k.id == d.id && (centroid(&k.vertices) - c).norm() < side / 2.0);
        if near {
            merged += 1;
        } else {
            kept.push(d);
        }
    }
    kept.sort_by(|a, b| {
        a.id.cmp(&b.id)
            .then(a.pose.translation.x.total_cmp(&b.pose.translation.x))
            .then(a.pose.translation.y.total_cmp(&b.pose.translation.y))
            .then(a.pose.translation.z.total_cmp(&b.pose.translation.z))
    });
    let mut dup: Vec<usize> = kept
        .windows(2)
        .filter(|w| w[0].id == w[1].id)
        .map(|w| w[0].id)
        .collect();
    dup.dedup();
    (kept, merged, dup)
}

/// Gradient downsampling, clustering, box filtering, per-candidate
/// reprojection and decoding, and pose assembly on an in-memory map.
pub fn detect_tags(cloud: &IntensityCloud, config: &PipelineConfig) -> Result<DetectionReport, PipelineError> {
    let geom = config.tag_geometry()?;
    let dict = config.load_dictionary()?;
    let debug = debug_dir(config)?;
    let pool = config.thread_pool()?;
    pool.install(|| detect_inner(cloud, config, &geom, &dict, debug))
}

fn detect_inner(
    cloud: &IntensityCloud,
    config: &PipelineConfig,
    geom: &TagGeometry,
    dict: &TagDictionary,
    debug: Option<&Path>,
) -> Result<DetectionReport, PipelineError> {
    let mut diag = Diagnostics {
        mode: "pipeline".into(),
        input_points: cloud.len(),
        ..Default::default()
    };
    let raw_index = SpatialIndex::new(cloud);
    let down = match downsample_by_gradient(cloud, &raw_index, &config.downsample_params()) {
        Ok(d) => d,
        Err(GradientError::NotEnoughPoints { needed, available }) => {
            diag.notes
                .push(format!("{available} points, gradient fit needs {needed}"));
            return Ok(DetectionReport {
                tags: vec![],
                diagnostics: diag,
            });
        }
        Err(e) => return Err(PipelineError::Config(e.to_string())),
    };
    diag.downsampled_points = down.cloud.len();
    diag.degenerate_points = down.diagnostics.degenerate_points;
    diag.gradient_threshold = down.diagnostics.effective_tau;
    if let Some(dir) = debug {
        save_pcd(&down.cloud, dir.join("downsampled.pcd"), PcdEncoding::Binary)?;
    }
    if down.cloud.len() < config.min_cluster {
        diag.notes.push("too few points above the gradient threshold".into());
        return Ok(DetectionReport {
            tags: vec![],
            diagnostics: diag,
        });
    }

    let down_index = SpatialIndex::new(&down.cloud);
    let tol = config
        .cluster_tolerance
        .unwrap_or_else(|| config.cluster_spacing_factor * mean_nn_spacing(&down.cloud, &down_index));
    diag.cluster_tolerance = tol;
    let clusters = euclidean_cluster_indexed(
        &down.cloud,
        &down_index,
        tol,
        config.min_cluster,
        config.max_cluster.unwrap_or(usize::MAX),
    );
    diag.clusters = clusters.len();
    let obbs: Vec<Option<ObbCandidate>> = clusters
        .par_iter()
        .map(|c| {
            let mut obb = compute_obb(&down.cloud, c).ok()?;
            // members refer to the raw map from here on
            obb.members.members = c.members.iter().map(|&i| down.source[i]).collect();
            Some(obb)
        })
        .collect();

    let band = config.edge_band.unwrap_or_else(|| quantile(&down.radii, 0.5));
    diag.edge_band = band;
    let filter = FilterParams {
        diagonal_margin: config.diagonal_margin,
        band,
    };
    let mut manifest = Vec::new();
    let mut survivors = Vec::new();
    for (k, obb) in obbs.iter().enumerate() {
        let Some(obb) = obb else { continue };
        let record = evaluate_criteria(obb, geom, &filter);
        if debug.is_some() {
            let c = obb.center();
            manifest.push(ObbManifestEntry {
                cluster: k,
                points: obb.members.len(),
                center: [c.x, c.y, c.z],
                pose_row_major: obb.pose.to_row_major(),
                extents: obb.extents,
                criteria: record,
                passed: record.passed(),
            });
        }
        if record.passed() {
            survivors.push((k, obb));
        }
    }
    diag.surviving_candidates = survivors.len();
    if let Some(dir) = debug {
        let path = dir.join("obb_manifest.json");
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(&path, text).map_err(io_error(&path))?;
    }

    let results: Vec<CandidateResult> = survivors
        .par_iter()
        .map(|(k, obb)| process_candidate(cloud, &raw_index, *k, obb, geom, dict, config))
        .collect();
    let mut detections = Vec::new();
    for r in results {
        if let (Some(dir), Some(image)) = (debug, &r.image) {
            image
                .write_pgm(&dir.join(format!("candidate_{:04}.pgm", r.diagnostic.cluster)))
                .map_err(|e| PipelineError::Config(e.to_string()))?;
        }
        detections.extend(r.detections);
        diag.candidates.push(r.diagnostic);
    }
    let (kept, merged, dup) = dedup(detections, geom.side);
    diag.merged_duplicates = merged;
    diag.duplicate_ids = dup;
    Ok(DetectionReport {
        tags: kept.iter().map(TagRecord::from_detection).collect(),
        diagnostics: diag,
    })
}

/// Unit ray from the origin through image coordinate `(u, v)`.
fn ray_of(geometry: &ImageGeometry, u: f64, v: f64) -> Vector3<f64> {
    let (theta, phi) = geometry.angles_of(u, v);
    Vector3::new(phi.cos() * theta.cos(), phi.cos() * theta.sin(), phi.sin())
}

fn inside_convex(q: &[[f64; 2]; 4], p: [f64; 2]) -> bool {
    let mut sign = 0.0;
    for i in 0..4 {
        let (a, b) = (q[i], q[(i + 1) % 4]);
        let cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
        if cross != 0.0 {
            if sign == 0.0 {
                sign = cross.signum();
            } else if cross.signum() != sign {
                return false;
            }
        }
    }
    true
}

/// Least-squares plane `(centroid, unit normal)`.
fn fit_plane(points: &[Vector3<f64>]) -> Option<(Vector3<f64>, Vector3<f64>)> {
    if points.len() < 3 {
        return None;
    }
    let c = centroid(points);
    let mut cov = Matrix3::zeros();
    for p in points {
        cov += (p - c) * (p - c).transpose();
    }
    let eig = cov.symmetric_eigen();
    let n = eig.eigenvectors.column(eig.eigenvalues.imin()).into_owned();
    Some((c, n))
}

/// One nearest-range image of the whole map from the origin, decoded, with
/// corners placed where their rays meet the plane of the points behind the quad.
pub fn detect_tags_baseline(cloud: &IntensityCloud, config: &PipelineConfig) -> Result<DetectionReport, PipelineError> {
    let geom = config.tag_geometry()?;
    let dict = config.load_dictionary()?;
    let debug = debug_dir(config)?;
    let mut diag = Diagnostics {
        mode: "baseline".into(),
        input_points: cloud.len(),
        ..Default::default()
    };
    let Some(geometry) = baseline_geometry(cloud, config.baseline_resolution, config.baseline_max_pixels) else {
        diag.notes.push("empty cloud".into());
        return Ok(DetectionReport {
            tags: vec![],
            diagnostics: diag,
        });
    };
    let points: Vec<Vector3<f64>> = cloud.iter().map(|p| p.position()).collect();
    let values: Vec<f64> = cloud.iter().map(|p| p.intensity).collect();
    let ids: Vec<usize> = (0..cloud.len()).collect();
    let image = render_with_geometry(&points, &values, &ids, geometry, &config.render);
    diag.image_size = Some([image.width(), image.height()]);
    if let Some(dir) = debug {
        image
            .write_pgm(&dir.join("baseline.pgm"))
            .map_err(|e| PipelineError::Config(e.to_string()))?;
    }
    let outcome = match decode_image(&image, &dict, &config.decoder_params()) {
        Ok(o) => o,
        Err(e) => {
            diag.notes.push(e.to_string());
            return Ok(DetectionReport {
                tags: vec![],
                diagnostics: diag,
            });
        }
    };
    let mut cand = CandidateDiagnostic::default();
    record_outcome(&mut cand, &outcome);
    diag.candidates.push(cand);

    let mut detections = Vec::new();
    for tag in &outcome.tags {
        let (u0, u1, v0, v1) = tag.corners.iter().fold(
            (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
            |(a, b, c, d), p| (a.min(p[0]), b.max(p[0]), c.min(p[1]), d.max(p[1])),
        );
        let quad = [tag.corners[0], tag.corners[1], tag.corners[2], tag.corners[3]];
        let mut behind = Vec::new();
        for v in (v0.floor().max(0.0) as usize)..=(v1.ceil() as usize).min(image.height() - 1) {
            for u in (u0.floor().max(0.0) as usize)..=(u1.ceil() as usize).min(image.width() - 1) {
                if inside_convex(&quad, [u as f64, v as f64]) {
                    if let Some(s) = image.source(u, v) {
                        behind.push(points[s]);
                    }
                }
            }
        }
        behind.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)).then(a.z.total_cmp(&b.z)));
        behind.dedup();
        let Some((c, n)) = fit_plane(&behind) else { continue };
        let mut vertices = [Vector3::zeros(); 4];
        let mut ok = true;
        for (k, p) in tag.corners.iter().enumerate() {
            let ray = ray_of(&geometry, p[0], p[1]);
            let denom = n.dot(&ray);
            if denom.abs() < 1e-9 {
                ok = false;
                break;
            }
            vertices[k] = ray * (n.dot(&c) / denom);
        }
        if !ok {
            continue;
        }
        if let Ok(d) = assemble_detection(tag.id, tag.mirrored, vertices, geom.side, geom.thickness) {
            detections.push(d);
        }
    }
    let (kept, merged, dup) = dedup(detections, geom.side);
    diag.merged_duplicates = merged;
    diag.duplicate_ids = dup;
    Ok(DetectionReport {
        tags: kept.iter().map(TagRecord::from_detection).collect(),
        diagnostics: diag,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{synth_scene, SceneSpec};

    #[test]
    fn config_defaults_and_toml() {
        let c = PipelineConfig::default();
        c.validate().unwrap();
        let parsed = PipelineConfig::from_toml("tag_size = 0.167\n[buffer]\nmode = \"scale\"\nfactor = 1.5\n").unwrap();
        assert_eq!(parsed.tag_size, 0.167);
        assert_eq!(parsed.buffer, BufferMode::Scale { factor: 1.5 });
        assert!(PipelineConfig::from_toml("bogus = 1").is_err());
        let bad = PipelineConfig {
            thickness: 0.5,
            ..PipelineConfig::default()
        };
        assert!(bad.validate().is_err());
        let missing = PipelineConfig {
            input: Some("/nonexistent/map.pcd".into()),
            ..PipelineConfig::default()
        };
        assert!(missing.validate().is_err());
    }

    #[test]
    fn dedup_merges_nearby_same_id() {
        let spec = SceneSpec::single_tag(3.0, 0.2, 1e3, 0.0, 2);
        let (_, truth) = synth_scene(&spec, 0).unwrap();
        let t = &truth.tags[0];
        let det = TagDetection {
            id: 2,
            mirrored: false,
            vertices: t.vertices.map(Vector3::from),
            pose: t.pose(),
            rms_residual: 0.0,
        };
        let mut far = det.clone();
        for v in far.vertices.iter_mut() {
            v.y += 1.0;
        }
        far.pose.translation.y += 1.0;
        let (kept, merged, dup) = dedup(vec![det.clone(), det.clone(), far], 0.2);
        assert_eq!((kept.len(), merged, dup), (2, 1, vec![2]));
    }

    #[test]
    fn tiny_and_uniform_clouds_give_no_tags() {
        let c = PipelineConfig::default();
        let empty = IntensityCloud::new();
        assert!(detect_tags(&empty, &c).unwrap().tags.is_empty());
        assert!(detect_tags_baseline(&empty, &c).unwrap().tags.is_empty());
        let mut spec = SceneSpec::single_tag(3.0, 0.2, 2e4, 0.0, 0);
        spec.tags.clear();
        let (cloud, _) = synth_scene(&spec, 0).unwrap();
        let r = detect_tags(&cloud, &c).unwrap();
        assert!(r.tags.is_empty());
        assert_eq!(r.diagnostics.downsampled_points, 0);
    }

    #[test]
    fn single_tag_end_to_end() {
        let spec = SceneSpec::single_tag(3.0, 0.2, 1e5, 0.0, 9);
        let (cloud, truth) = synth_scene(&spec, 4).unwrap();
        let r = detect_tags(&cloud, &PipelineConfig::default()).unwrap();
        assert_eq!(r.ids(), vec![9], "{:#?}", r.diagnostics);
        let e = crate::synth::evaluate(&r.detections(), &truth);
        let te = e.tags[0].translation_error.unwrap();
        assert!(te.iter().all(|x| x.abs() < 0.005), "{te:?}");
        let b = detect_tags_baseline(&cloud, &PipelineConfig::default()).unwrap();
        assert_eq!(b.ids(), vec![9], "{:#?}", b.diagnostics);
    }
}
