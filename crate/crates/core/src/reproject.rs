//! Re-seating a candidate in front of the origin and rendering its intensity image.
//!
//! A buffered candidate is moved into its box frame, rotated so the box's
//! thin axis points along map X, and shifted onto the plane `x = 1`. Seen
//! from the origin the candidate is then a single unoccluded sheet, which is
//! rasterized by azimuth/inclination quantization. Decoded image corners go
//! back through the same chain in reverse.

use std::io::Write;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloud::IntensityCloud;
use crate::filter::BufferedCandidate;
use crate::geometry::RigidTransform;

#[derive(Debug, Error)]
pub enum ReprojectError {
    #[error("candidate has no points")]
    EmptyCandidate,
    #[error("points cover only {width}x{height} pixels")]
    DegenerateImage { width: usize, height: usize },
    #[error("pixel ray ({u}, {v}) does not reach the plane x = 1")]
    RayParallelToPlane { u: f64, v: f64 },
    #[error("writing {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub const PLANE_DISTANCE: f64 = 1.0;

/// `R⁻¹p − R⁻¹t` for every point.
pub fn to_obb_frame(points: &[Vector3<f64>], pose: &RigidTransform) -> Vec<Vector3<f64>> {
    points.iter().map(|p| pose.inverse_apply(p)).collect()
}

/// A proper rotation that permutes coordinate axes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisPermutation {
    pub matrix: Matrix3<f64>,
}

impl AxisPermutation {
    pub fn identity() -> Self {
        Self {
            matrix: Matrix3::identity(),
        }
    }

    /// Cyclic permutation sending axis `thin` to X.
    pub fn thin_axis_to_x(thin: usize) -> Self {
        let mut m = Matrix3::zeros();
        for row in 0..3 {
            m[(row, (thin + row) % 3)] = 1.0;
        }
        Self { matrix: m }
    }

    #[inline]
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.matrix * p
    }

    #[inline]
    pub fn inverse_apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.matrix.transpose() * p
    }
}

/// Rotates box-frame points so the axis with the smallest extent becomes X.
pub fn align_normal_to_view(points: &[Vector3<f64>], extents: &[f64; 3]) -> (Vec<Vector3<f64>>, AxisPermutation) {
    let mut thin = 0;
    for k in 1..3 {
        if extents[k] < extents[thin] {
            thin = k;
        }
    }
    let perm = AxisPermutation::thin_axis_to_x(thin);
    (points.iter().map(|p| perm.apply(p)).collect(), perm)
}

/// Translation by `(1 m, 0, 0)`.
pub fn to_intermediate_plane(points: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
    points
        .iter()
        .map(|p| p + Vector3::new(PLANE_DISTANCE, 0.0, 0.0))
        .collect()
}

pub fn from_intermediate_plane(points: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
    points
        .iter()
        .map(|p| p - Vector3::new(PLANE_DISTANCE, 0.0, 0.0))
        .collect()
}

/// A candidate's points in front of the origin, with the transforms that put them there.
#[derive(Debug, Clone)]
pub struct PlaneFrameCandidate {
    pub points: Vec<Vector3<f64>>,
    pub intensities: Vec<f64>,
    /// Index of each point in the raw map.
    pub sources: Vec<usize>,
    pub obb_pose: RigidTransform,
    pub permutation: AxisPermutation,
    /// Enlarged box extents, in box-frame axis order.
    pub extents: [f64; 3],
}

impl PlaneFrameCandidate {
    pub fn from_buffered(raw: &IntensityCloud, buffered: &BufferedCandidate) -> Result<Self, ReprojectError> {
        if buffered.indices.is_empty() {
            return Err(ReprojectError::EmptyCandidate);
        }
        let positions: Vec<Vector3<f64>> = buffered.indices.iter().map(|&i| raw.position(i)).collect();
        let pose = buffered.source.pose;
        let local = to_obb_frame(&positions, &pose);
        let (aligned, permutation) = align_normal_to_view(&local, &buffered.source.extents);
        Ok(Self {
            points: to_intermediate_plane(&aligned),
            intensities: buffered.indices.iter().map(|&i| raw.point(i).intensity).collect(),
            sources: buffered.indices.clone(),
            obb_pose: pose,
            permutation,
            extents: buffered.extents,
        })
    }

    /// Inverse of the whole chain: plane-frame point to map point.
    pub fn to_map(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let shifted = p - Vector3::new(PLANE_DISTANCE, 0.0, 0.0);
        self.obb_pose.apply(&self.permutation.inverse_apply(&shifted))
    }

    /// Forward chain: map point to plane-frame point.
    pub fn from_map(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.permutation.apply(&self.obb_pose.inverse_apply(p)) + Vector3::new(PLANE_DISTANCE, 0.0, 0.0)
    }
}

/// `(θ, φ, r)`: azimuth about Z from +X, inclination above the XY plane, range.
#[inline]
pub fn spherical(p: &Vector3<f64>) -> (f64, f64, f64) {
    let rho = (p.x * p.x + p.y * p.y).sqrt();
    (p.y.atan2(p.x), p.z.atan2(rho), p.norm())
}

/// Pixel grid of an azimuth/inclination image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageGeometry {
    pub theta_a: f64,
    pub theta_i: f64,
    pub u_o: f64,
    pub v_o: f64,
    pub width: usize,
    pub height: usize,
}

impl ImageGeometry {
    /// Integer pixel of a point; `f64::round` rounds halves away from zero.
    #[inline]
    pub fn pixel_of(&self, theta: f64, phi: f64) -> (i64, i64) {
        (
            ((theta / self.theta_a).round() + self.u_o) as i64,
            ((phi / self.theta_i).round() + self.v_o) as i64,
        )
    }

    /// Continuous image coordinate of a direction, for sub-pixel work.
    pub fn subpixel_of(&self, theta: f64, phi: f64) -> (f64, f64) {
        (theta / self.theta_a + self.u_o, phi / self.theta_i + self.v_o)
    }

    pub fn angles_of(&self, u: f64, v: f64) -> (f64, f64) {
        ((u - self.u_o) * self.theta_a, (v - self.v_o) * self.theta_i)
    }

    /// Image covering the given angular box at resolution `res`, padded by `pad` pixels.
    pub fn covering(theta: (f64, f64), phi: (f64, f64), res: f64, pad: usize) -> Self {
        let u0 = (theta.0 / res).round();
        let u1 = (theta.1 / res).round();
        let v0 = (phi.0 / res).round();
        let v1 = (phi.1 / res).round();
        Self {
            theta_a: res,
            theta_i: res,
            u_o: pad as f64 - u0,
            v_o: pad as f64 - v0,
            width: (u1 - u0) as usize + 1 + 2 * pad,
            height: (v1 - v0) as usize + 1 + 2 * pad,
        }
    }
}

/// Rendering parameters for candidate images.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderParams {
    /// Pixels spanning an angle of `2a` radians.
    pub pixels_per_two_sides: f64,
    pub min_pixels: usize,
    pub max_pixels: usize,
    /// Empty pixels within this many point spacings of a rendered pixel take
    /// its value; `0` disables the fill.
    pub fill_spacings: f64,
    pub median_passes: usize,
    pub median_min_neighbors: usize,
}

impl Default for RenderParams {
    fn default() -> Self {
        Self {
            pixels_per_two_sides: 256.0,
            min_pixels: 64,
            max_pixels: 1024,
            fill_spacings: 1.0,
            median_passes: 2,
            median_min_neighbors: 5,
        }
    }
}

/// Raster of intensities with the contributing point of each pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityImage {
    pub geometry: ImageGeometry,
    values: Vec<Option<f64>>,
    sources: Vec<Option<usize>>,
}

impl IntensityImage {
    pub fn empty(geometry: ImageGeometry) -> Self {
        let n = geometry.width * geometry.height;
        Self {
            geometry,
            values: vec![None; n],
            sources: vec![None; n],
        }
    }

    /// Image from a dense raster; handy for tests and external inputs.
    pub fn from_values(geometry: ImageGeometry, values: Vec<Option<f64>>) -> Self {
        assert_eq!(values.len(), geometry.width * geometry.height);
        let sources = values.iter().map(|v| v.map(|_| 0)).collect();
        Self {
            geometry,
            values,
            sources,
        }
    }

    pub fn width(&self) -> usize {
        self.geometry.width
    }

    pub fn height(&self) -> usize {
        self.geometry.height
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> Option<f64> {
        self.values[v * self.geometry.width + u]
    }

    #[inline]
    pub fn source(&self, u: usize, v: usize) -> Option<usize> {
        self.sources[v * self.geometry.width + u]
    }

    pub fn values(&self) -> &[Option<f64>] {
        &self.values
    }

    pub fn filled_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }

    /// Writes an 8-bit binary PGM; empty pixels are 0, values are clamped to 0..=255.
    pub fn write_pgm(&self, path: &Path) -> Result<(), ReprojectError> {
        let io = |source| ReprojectError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut out = Vec::with_capacity(self.values.len() + 32);
        write!(out, "P5\n{} {}\n255\n", self.width(), self.height()).map_err(io)?;
        out.extend(
            self.values
                .iter()
                .map(|v| v.map_or(0, |x| x.round().clamp(0.0, 255.0) as u8)),
        );
        std::fs::write(path, out).map_err(io)
    }
}

/// Nearest-range rasterization of `points` into `geometry`. `ids` label each
/// point in the resulting pixel-to-source map. Points outside the image are
/// skipped.
pub fn rasterize(
    points: &[Vector3<f64>],
    intensities: &[f64],
    ids: &[usize],
    geometry: ImageGeometry,
) -> IntensityImage {
    let mut image = IntensityImage::empty(geometry);
    let mut best_range = vec![f64::INFINITY; geometry.width * geometry.height];
    for (k, p) in points.iter().enumerate() {
        let (theta, phi, r) = spherical(p);
        let (u, v) = geometry.pixel_of(theta, phi);
        if u < 0 || v < 0 || u as usize >= geometry.width || v as usize >= geometry.height {
            continue;
        }
        let at = v as usize * geometry.width + u as usize;
        // strict comparison keeps the earliest point on exact range ties
        if r < best_range[at] {
            best_range[at] = r;
            image.values[at] = Some(intensities[k]);
            image.sources[at] = Some(ids[k]);
        }
    }
    image
}

/// Gives every empty pixel within `radius` pixels of a filled one the value
/// of its nearest filled pixel (ties go to the lower row, then column).
pub fn fill_nearest(image: &mut IntensityImage, radius: f64) {
    if radius <= 0.0 {
        return;
    }
    let (w, h) = (image.width() as i64, image.height() as i64);
    let reach = radius.floor() as i64;
    let r2 = radius * radius;
    let mut offsets: Vec<(i64, i64, i64)> = Vec::new();
    for dv in -reach..=reach {
        for du in -reach..=reach {
            let d2 = du * du + dv * dv;
            if d2 > 0 && (d2 as f64) <= r2 {
                offsets.push((d2, dv, du));
            }
        }
    }
    offsets.sort_unstable();
    let values = image.values.clone();
    let sources = image.sources.clone();
    for v in 0..h {
        for u in 0..w {
            let at = (v * w + u) as usize;
            if values[at].is_some() {
                continue;
            }
            for &(_, dv, du) in &offsets {
                let (uu, vv) = (u + du, v + dv);
                if uu < 0 || vv < 0 || uu >= w || vv >= h {
                    continue;
                }
                let from = (vv * w + uu) as usize;
                if values[from].is_some() {
                    image.values[at] = values[from];
                    image.sources[at] = sources[from];
                    break;
                }
            }
        }
    }
}

/// One pass closing empty pixels that have at least `min_neighbors` filled
/// 8-neighbors, using the median of those neighbors. Returns the number filled.
pub fn median_fill_pass(image: &mut IntensityImage, min_neighbors: usize) -> usize {
    let (w, h) = (image.width(), image.height());
    let values = image.values.clone();
    let sources = image.sources.clone();
    let mut filled = 0;
    for v in 0..h {
        for u in 0..w {
            let at = v * w + u;
            if values[at].is_some() {
                continue;
            }
            let mut neigh: Vec<(f64, usize)> = Vec::with_capacity(8);
            for dv in -1i64..=1 {
                for du in -1i64..=1 {
                    if du == 0 && dv == 0 {
                        continue;
                    }
                    let (uu, vv) = (u as i64 + du, v as i64 + dv);
                    if uu < 0 || vv < 0 || uu >= w as i64 || vv >= h as i64 {
                        continue;
                    }
                    let from = vv as usize * w + uu as usize;
                    if let Some(x) = values[from] {
                        neigh.push((x, from));
                    }
                }
            }
            if neigh.len() >= min_neighbors {
                neigh.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                let (x, from) = neigh[(neigh.len() - 1) / 2];
                image.values[at] = Some(x);
                image.sources[at] = sources[from];
                filled += 1;
            }
        }
    }
    filled
}

/// Mean spacing between rendered samples in pixels, estimated from how
/// sparsely the occupied bounding box is filled.
fn sample_spacing_px(image: &IntensityImage) -> f64 {
    let (mut u0, mut u1, mut v0, mut v1) = (usize::MAX, 0, usize::MAX, 0);
    let mut count = 0usize;
    for v in 0..image.height() {
        for u in 0..image.width() {
            if image.get(u, v).is_some() {
                count += 1;
                u0 = u0.min(u);
                u1 = u1.max(u);
                v0 = v0.min(v);
                v1 = v1.max(v);
            }
        }
    }
    if count == 0 {
        return 0.0;
    }
    let area = ((u1 - u0 + 1) * (v1 - v0 + 1)) as f64;
    (area / count as f64).sqrt()
}

/// Rasterizes, then applies the nearest fill and the median passes.
pub fn render_with_geometry(
    points: &[Vector3<f64>],
    intensities: &[f64],
    ids: &[usize],
    geometry: ImageGeometry,
    params: &RenderParams,
) -> IntensityImage {
    let mut image = rasterize(points, intensities, ids, geometry);
    if params.fill_spacings > 0.0 {
        let spacing = sample_spacing_px(&image);
        if spacing > 1.0 {
            fill_nearest(&mut image, params.fill_spacings * spacing);
        }
    }
    for _ in 0..params.median_passes {
        if median_fill_pass(&mut image, params.median_min_neighbors) == 0 {
            break;
        }
    }
    image
}

/// Default geometry for a candidate of tag side `side`: `2a` radians span
/// `pixels_per_two_sides` pixels and the image covers the points' angular box,
/// with the longer image side held within `[min_pixels, max_pixels]`.
pub fn candidate_geometry(points: &[Vector3<f64>], side: f64, params: &RenderParams) -> Option<ImageGeometry> {
    if points.is_empty() {
        return None;
    }
    let (mut t0, mut t1, mut p0, mut p1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in points {
        let (t, f, _) = spherical(p);
        t0 = t0.min(t);
        t1 = t1.max(t);
        p0 = p0.min(f);
        p1 = p1.max(f);
    }
    let mut res = 2.0 * side / params.pixels_per_two_sides;
    let span = (t1 - t0).max(p1 - p0);
    let pixels = span / res;
    if pixels > params.max_pixels as f64 {
        res = span / params.max_pixels as f64;
    } else if pixels < params.min_pixels as f64 && span > 0.0 {
        res = span / params.min_pixels as f64;
    }
    Some(ImageGeometry::covering((t0, t1), (p0, p1), res, 2))
}

/// Renders a re-seated candidate. `geometry` overrides the default grid.
pub fn render_intensity_image(
    candidate: &PlaneFrameCandidate,
    side: f64,
    geometry: Option<ImageGeometry>,
    params: &RenderParams,
) -> Result<IntensityImage, ReprojectError> {
    let geometry = match geometry {
        Some(g) => g,
        None => candidate_geometry(&candidate.points, side, params).ok_or(ReprojectError::EmptyCandidate)?,
    };
    let image = render_with_geometry(
        &candidate.points,
        &candidate.intensities,
        &candidate.sources,
        geometry,
        params,
    );
    let (mut u0, mut u1, mut v0, mut v1) = (usize::MAX, 0, usize::MAX, 0);
    for v in 0..image.height() {
        for u in 0..image.width() {
            if image.get(u, v).is_some() {
                u0 = u0.min(u);
                u1 = u1.max(u);
                v0 = v0.min(v);
                v1 = v1.max(v);
            }
        }
    }
    let (w, h) = if u0 == usize::MAX {
        (0, 0)
    } else {
        (u1 - u0 + 1, v1 - v0 + 1)
    };
    if w < 8 || h < 8 {
        return Err(ReprojectError::DegenerateImage { width: w, height: h });
    }
    Ok(image)
}

/// Point where the ray through image coordinate `(u, v)` meets the plane `x = 1`,
/// in the plane frame.
pub fn unproject_to_plane(u: f64, v: f64, geometry: &ImageGeometry) -> Result<Vector3<f64>, ReprojectError> {
    let (theta, phi) = geometry.angles_of(u, v);
    if theta.abs() >= std::f64::consts::FRAC_PI_2 || phi.abs() >= std::f64::consts::FRAC_PI_2 {
        return Err(ReprojectError::RayParallelToPlane { u, v });
    }
    Ok(Vector3::new(
        PLANE_DISTANCE,
        PLANE_DISTANCE * theta.tan(),
        PLANE_DISTANCE * phi.tan() / theta.cos(),
    ))
}

/// Image coordinate to map coordinate through the candidate's transform chain.
pub fn unproject_vertex(
    pixel: (f64, f64),
    geometry: &ImageGeometry,
    candidate: &PlaneFrameCandidate,
) -> Result<Vector3<f64>, ReprojectError> {
    let on_plane = unproject_to_plane(pixel.0, pixel.1, geometry)?;
    Ok(candidate.to_map(&on_plane))
}
