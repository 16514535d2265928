//! Quadrilateral search on binary images with sub-pixel corner refinement.

use std::collections::VecDeque;

use crate::reproject::IntensityImage;

use super::binarize::BinaryImage;

/// Image point `[u, v]`; pixel centers sit on integer coordinates.
pub type Pixel = [f64; 2];

pub const MIN_AREA: f64 = 64.0;
pub const MAX_SIDE_RATIO: f64 = 1.5;
/// Polygon fit tolerance as a fraction of the contour perimeter.
pub const POLY_TOLERANCE: f64 = 0.03;
const MIN_COMPONENT: usize = 16;
/// Opposite sides whose separate fits agree this closely are refitted with a common direction.
pub const PARALLEL_TOLERANCE_DEG: f64 = 2.0;

/// Four corners with positive shoelace area in image coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadDetection {
    pub corners: [Pixel; 4],
}

impl QuadDetection {
    pub fn area(&self) -> f64 {
        shoelace(&self.corners)
    }

    pub fn side_lengths(&self) -> [f64; 4] {
        let c = &self.corners;
        [0, 1, 2, 3].map(|i| dist(&c[i], &c[(i + 1) % 4]))
    }

    pub fn is_convex(&self) -> bool {
        let c = &self.corners;
        (0..4).all(|i| cross(&c[i], &c[(i + 1) % 4], &c[(i + 2) % 4]) > 0.0)
    }
}

fn dist(a: &Pixel, b: &Pixel) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// z-component of `(b − a) × (c − b)`.
fn cross(a: &Pixel, b: &Pixel, c: &Pixel) -> f64 {
    (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0])
}

pub fn shoelace(poly: &[Pixel]) -> f64 {
    let n = poly.len();
    let mut acc = 0.0;
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        acc += a[0] * b[1] - b[0] * a[1];
    }
    acc / 2.0
}

/// 8-connected black components, each as a list of flat pixel indices
/// starting with its first pixel in raster order.
fn black_components(bin: &BinaryImage) -> Vec<Vec<usize>> {
    let (w, h) = (bin.width, bin.height);
    let mut seen = vec![false; w * h];
    let mut comps = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if seen[start] || bin.white[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut comp = Vec::new();
        while let Some(i) = queue.pop_front() {
            comp.push(i);
            let (u, v) = ((i % w) as i64, (i / w) as i64);
            for dv in -1..=1 {
                for du in -1..=1 {
                    if bin.is_black_at(u + du, v + dv) {
                        let j = (v + dv) as usize * w + (u + du) as usize;
                        if !seen[j] {
                            seen[j] = true;
                            queue.push_back(j);
                        }
                    }
                }
            }
        }
        comps.push(comp);
    }
    comps
}

/// Clockwise (on screen, v down) 8-neighborhood starting west.
const RING: [(i64, i64); 8] = [(-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1)];

fn ring_index(du: i64, dv: i64) -> usize {
    RING.iter().position(|&d| d == (du, dv)).expect("unit offset")
}

/// Outer boundary of the component containing `start`, which must be the
/// component's first pixel in raster order. Moore-neighbor tracing.
fn trace_contour(in_comp: &dyn Fn(i64, i64) -> bool, start: (i64, i64), limit: usize) -> Vec<(i64, i64)> {
    let mut contour = vec![start];
    // the west neighbor of the first raster pixel is outside
    let mut p = start;
    let mut back = 0usize;
    let mut second = None;
    for _ in 0..limit {
        let mut next = None;
        for k in 1..=8 {
            let d = (back + k) % 8;
            let q = (p.0 + RING[d].0, p.1 + RING[d].1);
            if in_comp(q.0, q.1) {
                let prev = (back + k - 1) % 8;
                let b = (p.0 + RING[prev].0, p.1 + RING[prev].1);
                next = Some((q, ring_index(b.0 - q.0, b.1 - q.1)));
                break;
            }
        }
        let Some((q, b)) = next else { break };
        // leaving the start the same way as the first time closes the loop
        if p == start && second == Some(q) {
            break;
        }
        if second.is_none() {
            second = Some(q);
        }
        p = q;
        back = b;
        contour.push(p);
    }
    if contour.len() > 1 && contour.last() == Some(&start) {
        contour.pop();
    }
    contour
}

fn point_line_distance(p: &Pixel, a: &Pixel, b: &Pixel) -> f64 {
    let l = dist(a, b);
    if l == 0.0 {
        return dist(p, a);
    }
    ((b[0] - a[0]) * (a[1] - p[1]) - (a[0] - p[0]) * (b[1] - a[1])).abs() / l
}

fn douglas_peucker(points: &[Pixel], eps: f64, out: &mut Vec<Pixel>) {
    let (first, last) = (points[0], points[points.len() - 1]);
    let mut best = (0.0, 0);
    for (i, p) in points.iter().enumerate().take(points.len() - 1).skip(1) {
        let d = point_line_distance(p, &first, &last);
        if d > best.0 {
            best = (d, i);
        }
    }
    if best.0 > eps {
        douglas_peucker(&points[..=best.1], eps, out);
        douglas_peucker(&points[best.1..], eps, out);
    } else {
        out.push(first);
    }
}

/// Polygonal approximation of a closed contour, then removal of vertices
/// lying within `eps` of the chord through their neighbors.
pub fn approximate_polygon(contour: &[Pixel], eps: f64) -> Vec<Pixel> {
    if contour.len() < 3 {
        return contour.to_vec();
    }
    let far = (1..contour.len())
        .max_by(|&a, &b| dist(&contour[0], &contour[a]).total_cmp(&dist(&contour[0], &contour[b])))
        .unwrap();
    let mut poly = Vec::new();
    douglas_peucker(&contour[..=far], eps, &mut poly);
    let mut tail: Vec<Pixel> = contour[far..].to_vec();
    tail.push(contour[0]);
    douglas_peucker(&tail, eps, &mut poly);
    while poly.len() > 3 {
        let n = poly.len();
        let (i, d) = (0..n)
            .map(|i| {
                (
                    i,
                    point_line_distance(&poly[i], &poly[(i + n - 1) % n], &poly[(i + 1) % n]),
                )
            })
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        if d >= eps {
            break;
        }
        poly.remove(i);
    }
    poly
}

/// Bilinear sampler over an image with empty pixels.
#[derive(Debug, Clone)]
pub struct Grid {
    pub width: usize,
    pub height: usize,
    values: Vec<f64>,
}

impl Grid {
    pub fn from_image(image: &IntensityImage) -> Self {
        Self {
            width: image.width(),
            height: image.height(),
            values: image.values().iter().map(|v| v.unwrap_or(f64::NAN)).collect(),
        }
    }

    pub fn from_binary(bin: &BinaryImage) -> Self {
        Self {
            width: bin.width,
            height: bin.height,
            values: bin.white.iter().map(|&w| if w { 1.0 } else { 0.0 }).collect(),
        }
    }

    /// `NaN` outside the image or next to an empty pixel.
    pub fn sample(&self, p: &Pixel) -> f64 {
        let (u, v) = (p[0], p[1]);
        if !(u >= 0.0 && v >= 0.0 && u <= (self.width - 1) as f64 && v <= (self.height - 1) as f64) {
            return f64::NAN;
        }
        let (u0, v0) = (u.floor() as usize, v.floor() as usize);
        let (u1, v1) = ((u0 + 1).min(self.width - 1), (v0 + 1).min(self.height - 1));
        let (fu, fv) = (u - u0 as f64, v - v0 as f64);
        let at = |uu: usize, vv: usize| self.values[vv * self.width + uu];
        let top = at(u0, v0) * (1.0 - fu) + at(u1, v0) * fu;
        let bottom = at(u0, v1) * (1.0 - fu) + at(u1, v1) * fu;
        top * (1.0 - fv) + bottom * fv
    }
}

/// Line `n·x = c` with unit normal `n`.
#[derive(Debug, Clone, Copy)]
struct Line {
    n: Pixel,
    c: f64,
}

fn fit_line(points: &[Pixel]) -> Option<Line> {
    if points.len() < 2 {
        return None;
    }
    let k = points.len() as f64;
    let mx = points.iter().map(|p| p[0]).sum::<f64>() / k;
    let my = points.iter().map(|p| p[1]).sum::<f64>() / k;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in points {
        let (dx, dy) = (p[0] - mx, p[1] - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    // direction of largest spread
    let angle = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    let n = [-angle.sin(), angle.cos()];
    Some(Line {
        n,
        c: n[0] * mx + n[1] * my,
    })
}

/// Two lines sharing one normal, fitted to two point sets by total least
/// squares on their pooled centered scatter.
fn fit_parallel(a: &[Pixel], b: &[Pixel]) -> Option<(Line, Line)> {
    if a.len() < 2 || b.len() < 2 {
        return None;
    }
    let mean = |pts: &[Pixel]| {
        let k = pts.len() as f64;
        [
            pts.iter().map(|p| p[0]).sum::<f64>() / k,
            pts.iter().map(|p| p[1]).sum::<f64>() / k,
        ]
    };
    let (ma, mb) = (mean(a), mean(b));
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (pts, m) in [(a, ma), (b, mb)] {
        for p in pts {
            let (dx, dy) = (p[0] - m[0], p[1] - m[1]);
            sxx += dx * dx;
            sxy += dx * dy;
            syy += dy * dy;
        }
    }
    let angle = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    let n = [-angle.sin(), angle.cos()];
    Some((
        Line {
            n,
            c: n[0] * ma[0] + n[1] * ma[1],
        },
        Line {
            n,
            c: n[0] * mb[0] + n[1] * mb[1],
        },
    ))
}

fn intersect(a: &Line, b: &Line) -> Option<Pixel> {
    let det = a.n[0] * b.n[1] - a.n[1] * b.n[0];
    if det.abs() < 1e-9 {
        return None;
    }
    Some([(a.c * b.n[1] - b.c * a.n[1]) / det, (a.n[0] * b.c - b.n[0] * a.c) / det])
}

/// Sub-pixel edge points along the side `a → b`: on each normal profile,
/// the level crossing halfway between the profile's extremes nearest the
/// coarse side.
fn edge_points(grid: &Grid, a: &Pixel, b: &Pixel, reach: f64, min_contrast: f64) -> Vec<Pixel> {
    let len = dist(a, b);
    let d = [(b[0] - a[0]) / len, (b[1] - a[1]) / len];
    let n = [-d[1], d[0]];
    let step = 0.25;
    let steps = (reach / step).round() as i64;
    let margin = (reach + 1.0).max(0.1 * len);
    let mut out = Vec::new();
    let mut t = margin;
    while t <= len - margin {
        let base = [a[0] + d[0] * t, a[1] + d[1] * t];
        let profile: Vec<f64> = (-steps..=steps)
            .map(|k| {
                let s = k as f64 * step;
                grid.sample(&[base[0] + n[0] * s, base[1] + n[1] * s])
            })
            .collect();
        t += 1.0;
        if profile.iter().any(|x| x.is_nan()) {
            continue;
        }
        let lo = profile.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = profile.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi - lo <= min_contrast.max(1e-9) {
            continue;
        }
        let level = 0.5 * (lo + hi);
        let mut best: Option<f64> = None;
        for k in 0..profile.len() - 1 {
            let (p0, p1) = (profile[k] - level, profile[k + 1] - level);
            if (p0 <= 0.0 && p1 > 0.0) || (p0 > 0.0 && p1 <= 0.0) {
                let s = (k as i64 - steps) as f64 * step + step * p0 / (p0 - p1);
                if best.map_or(true, |b| s.abs() < b.abs()) {
                    best = Some(s);
                }
            }
        }
        if let Some(s) = best {
            out.push([base[0] + n[0] * s, base[1] + n[1] * s]);
        }
    }
    out
}

/// Moves each corner to the intersection of lines fitted to the edge
/// crossings of its two sides, repeating while the corners still move.
/// A corner whose intersection lies farther than the polygon-fit tolerance
/// (and `reach`) keeps its previous position.
pub fn refine_quad(grid: &Grid, quad: &QuadDetection, reach: f64) -> QuadDetection {
    let mut current = *quad;
    for _ in 0..4 {
        let next = refine_once(grid, &current, reach);
        let moved = (0..4)
            .map(|i| dist(&next.corners[i], &current.corners[i]))
            .fold(0.0, f64::max);
        current = next;
        if moved < 0.01 {
            break;
        }
    }
    current
}

fn refine_once(grid: &Grid, quad: &QuadDetection, reach: f64) -> QuadDetection {
    let c = &quad.corners;
    let perimeter: f64 = quad.side_lengths().iter().sum();
    let limit = reach.max(POLY_TOLERANCE * perimeter);
    let mut lines = [None; 4];
    let mut kept: [Vec<Pixel>; 4] = Default::default();
    for i in 0..4 {
        let mut pts = edge_points(grid, &c[i], &c[(i + 1) % 4], reach, 0.0);
        let Some(mut line) = fit_line(&pts) else { continue };
        // one round of outlier rejection
        pts.retain(|p| (line.n[0] * p[0] + line.n[1] * p[1] - line.c).abs() <= 1.0);
        if let Some(l) = fit_line(&pts) {
            line = l;
        }
        if pts.len() >= 3 {
            lines[i] = Some(line);
            kept[i] = pts;
        }
    }
    // near-affine views: opposite sides share a direction
    let parallel = PARALLEL_TOLERANCE_DEG.to_radians().cos();
    for (i, j) in [(0, 2), (1, 3)] {
        if let (Some(a), Some(b)) = (lines[i], lines[j]) {
            if (a.n[0] * b.n[0] + a.n[1] * b.n[1]).abs() >= parallel {
                if let Some((la, lb)) = fit_parallel(&kept[i], &kept[j]) {
                    lines[i] = Some(la);
                    lines[j] = Some(lb);
                }
            }
        }
    }
    let mut refined = *quad;
    for i in 0..4 {
        let prev = (i + 3) % 4;
        if let (Some(a), Some(b)) = (lines[prev], lines[i]) {
            if let Some(p) = intersect(&a, &b) {
                if dist(&p, &c[i]) <= limit {
                    refined.corners[i] = p;
                }
            }
        }
    }
    refined
}

fn line_through(a: &Pixel, b: &Pixel) -> Line {
    let l = dist(a, b);
    let n = [-(b[1] - a[1]) / l, (b[0] - a[0]) / l];
    Line {
        n,
        c: n[0] * a[0] + n[1] * a[1],
    }
}

fn cleaned_fit(mut pts: Vec<Pixel>) -> Option<(Line, Vec<Pixel>)> {
    let line = fit_line(&pts)?;
    pts.retain(|p| (line.n[0] * p[0] + line.n[1] * p[1] - line.c).abs() <= 1.0);
    let line = fit_line(&pts)?;
    (pts.len() >= 3).then_some((line, pts))
}

/// Corners of the square around a refined, near-parallelogram quad, grown
/// outward by `ratio` of the quad's size on every side.
///
/// Each grown side is predicted by shifting the quad's side, then located
/// on the image where it shows an edge of at least `min_contrast`.
/// The sides of one direction share a normal fitted to the edge points of
/// the inner and outer sides together, and each outer offset averages the
/// prediction with the located edge when the two agree within half a shift.
/// `None` when opposite sides are not parallel or an edge cannot be fitted.
pub fn grown_square(
    grid: &Grid,
    quad: &QuadDetection,
    ratio: f64,
    reach: f64,
    min_contrast: f64,
) -> Option<[Pixel; 4]> {
    let c = &quad.corners;
    let center = [
        c.iter().map(|p| p[0]).sum::<f64>() / 4.0,
        c.iter().map(|p| p[1]).sum::<f64>() / 4.0,
    ];
    let parallel = PARALLEL_TOLERANCE_DEG.to_radians().cos();
    // inner sides, normals pointing away from the center
    let mut inner: Vec<Line> = (0..4).map(|i| line_through(&c[i], &c[(i + 1) % 4])).collect();
    for l in inner.iter_mut() {
        if l.n[0] * center[0] + l.n[1] * center[1] > l.c {
            l.n = [-l.n[0], -l.n[1]];
            l.c = -l.c;
        }
    }
    let mut shift = [0.0; 4];
    for (i, j) in [(0, 2), (1, 3)] {
        let (a, b) = (inner[i], inner[j]);
        if (a.n[0] * b.n[0] + a.n[1] * b.n[1]) > -parallel {
            return None;
        }
        // distance between the two opposite sides
        let width = a.c + b.c;
        if !(width > 0.0) {
            return None;
        }
        shift[i] = ratio * width;
        shift[j] = ratio * width;
    }
    let predicted: Vec<Line> = (0..4)
        .map(|i| Line {
            n: inner[i].n,
            c: inner[i].c + shift[i],
        })
        .collect();
    let outer_corners: Vec<Pixel> = (0..4)
        .map(|i| intersect(&predicted[(i + 3) % 4], &predicted[i]))
        .collect::<Option<Vec<_>>>()?;

    let mut inner_pts: Vec<Vec<Pixel>> = Vec::with_capacity(4);
    for i in 0..4 {
        let (_, pts) = cleaned_fit(edge_points(grid, &c[i], &c[(i + 1) % 4], reach, 0.0))?;
        inner_pts.push(pts);
    }
    let outer_pts: Vec<Option<Vec<Pixel>>> = (0..4)
        .map(|i| {
            let pts = edge_points(
                grid,
                &outer_corners[i],
                &outer_corners[(i + 1) % 4],
                reach,
                min_contrast,
            );
            cleaned_fit(pts).map(|(_, p)| p)
        })
        .collect();

    let mut lines = predicted.clone();
    for (i, j) in [(0, 2), (1, 3)] {
        // pooled scatter of every side of this direction about its own mean
        let mut sets: Vec<&[Pixel]> = vec![&inner_pts[i], &inner_pts[j]];
        for k in [i, j] {
            if let Some(p) = &outer_pts[k] {
                sets.push(p);
            }
        }
        let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
        for pts in &sets {
            let k = pts.len() as f64;
            let m = [
                pts.iter().map(|p| p[0]).sum::<f64>() / k,
                pts.iter().map(|p| p[1]).sum::<f64>() / k,
            ];
            for p in pts.iter() {
                let (dx, dy) = (p[0] - m[0], p[1] - m[1]);
                sxx += dx * dx;
                sxy += dx * dy;
                syy += dy * dy;
            }
        }
        let angle = 0.5 * (2.0 * sxy).atan2(sxx - syy);
        let mut n = [-angle.sin(), angle.cos()];
        if n[0] * inner[i].n[0] + n[1] * inner[i].n[1] < 0.0 {
            n = [-n[0], -n[1]];
        }
        let offset =
            |pts: &[Pixel], n: [f64; 2]| pts.iter().map(|p| n[0] * p[0] + n[1] * p[1]).sum::<f64>() / pts.len() as f64;
        for (k, sign) in [(i, 1.0), (j, -1.0)] {
            let nk = [sign * n[0], sign * n[1]];
            let from_inner = offset(&inner_pts[k], nk) + shift[k];
            let c = match &outer_pts[k] {
                Some(p) => {
                    let direct = offset(p, nk);
                    if (direct - from_inner).abs() <= 0.5 * shift[k] {
                        0.5 * (direct + from_inner)
                    } else {
                        from_inner
                    }
                }
                None => from_inner,
            };
            lines[k] = Line { n: nk, c };
        }
    }
    let mut out = [[0.0; 2]; 4];
    for i in 0..4 {
        out[i] = intersect(&lines[(i + 3) % 4], &lines[i])?;
    }
    Some(out)
}

/// Coarse quads from the outer contours of black components.
pub fn detect_quads_coarse(bin: &BinaryImage) -> Vec<QuadDetection> {
    let w = bin.width;
    let mut labels = vec![usize::MAX; bin.width * bin.height];
    let comps = black_components(bin);
    let mut quads = Vec::new();
    for (label, comp) in comps.iter().enumerate() {
        for &i in comp {
            labels[i] = label;
        }
        if comp.len() < MIN_COMPONENT {
            continue;
        }
        let in_comp = |u: i64, v: i64| {
            u >= 0
                && v >= 0
                && (u as usize) < bin.width
                && (v as usize) < bin.height
                && labels[v as usize * w + u as usize] == label
        };
        let start = comp[0];
        let contour = trace_contour(&in_comp, ((start % w) as i64, (start / w) as i64), 4 * comp.len() + 8);
        if contour.len() < 8 {
            continue;
        }
        let pts: Vec<Pixel> = contour.iter().map(|&(u, v)| [u as f64, v as f64]).collect();
        let perimeter: f64 = (0..pts.len()).map(|k| dist(&pts[k], &pts[(k + 1) % pts.len()])).sum();
        let mut poly = approximate_polygon(&pts, POLY_TOLERANCE * perimeter);
        if poly.len() != 4 {
            continue;
        }
        if shoelace(&poly) < 0.0 {
            poly.reverse();
        }
        let quad = QuadDetection {
            corners: [poly[0], poly[1], poly[2], poly[3]],
        };
        if accept(&quad) {
            quads.push(quad);
        }
    }
    quads
}

fn accept(quad: &QuadDetection) -> bool {
    let sides = quad.side_lengths();
    let lo = sides.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = sides.iter().copied().fold(0.0, f64::max);
    quad.is_convex() && quad.area() >= MIN_AREA && lo > 0.0 && hi / lo <= MAX_SIDE_RATIO
}

/// Quads in `bin`, with corners refined on `grid` (the binary image itself
/// when `None`).
pub fn detect_quads(bin: &BinaryImage, grid: Option<&Grid>) -> Vec<QuadDetection> {
    let own;
    let grid = match grid {
        Some(g) => g,
        None => {
            own = Grid::from_binary(bin);
            &own
        }
    };
    detect_quads_coarse(bin)
        .into_iter()
        .map(|q| refine_quad(grid, &q, 3.0))
        .filter(accept)
        .collect()
}
