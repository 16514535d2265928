//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

use std::sync::OnceLock;
use std::time::Instant;

use maptag::cloud::{IntensityCloud, Point3I};
use maptag::cluster::{compute_obb, Cluster};
use maptag::decoder::{match_dictionary, BitMatrix, TagDictionary};
use maptag::filter::{criterion_diagonal, TagGeometry};
use maptag::geometry::RigidTransform;
use maptag::gradient::fit_local_model;
use maptag::pipeline::{detect_tags, detect_tags_baseline, PipelineConfig};
use maptag::pose::{canonical_corners, solve_pose_svd};
use maptag::reproject::{
    align_normal_to_view, candidate_geometry, from_intermediate_plane, rasterize, spherical, to_intermediate_plane,
    to_obb_frame, unproject_to_plane, RenderParams,
};
use maptag::synth::{evaluate, synth_scene, SceneSpec, SceneTruth};
use maptag::SpatialIndex;
use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_rotation(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
    let axis = Vector3::new(
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
    );
    let axis = if axis.norm() < 1e-6 {
        Vector3::z()
    } else {
        axis.normalize()
    };
    Rotation3::from_scaled_axis(axis * rng.gen_range(0.0..std::f64::consts::PI)).into_inner()
}

fn random_vector(rng: &mut ChaCha8Rng, half: f64) -> Vector3<f64> {
    Vector3::new(
        rng.gen_range(-half..half),
        rng.gen_range(-half..half),
        rng.gen_range(-half..half),
    )
}

fn config(side: f64, thickness: f64, threads: usize) -> PipelineConfig {
    PipelineConfig {
        tag_size: side,
        thickness,
        threads,
        ..PipelineConfig::default()
    }
}

fn occlusion_scene() -> &'static (IntensityCloud, SceneTruth) {
    static SCENE: OnceLock<(IntensityCloud, SceneTruth)> = OnceLock::new();
    SCENE.get_or_init(|| synth_scene(&SceneSpec::occlusion_scene(), 0).expect("shipped scene synthesizes"))
}

// 1. Occlusion: the pipeline reads both boards, one global image reads only the front one.
fn occlusion() -> Outcome {
    let (cloud, truth) = occlusion_scene();
    let cfg = config(0.2, 0.03, 1);
    let start = Instant::now();
    let report = detect_tags(cloud, &cfg).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed().as_secs_f64();
    let baseline = detect_tags_baseline(cloud, &cfg).map_err(|e| e.to_string())?;
    let ours = evaluate(&report.detections(), truth);
    let theirs = evaluate(&baseline.detections(), truth);
    let ok = ours.detected == 2
        && ours.false_positives.is_empty()
        && report.ids() == vec![3, 11]
        && theirs.detected == 1
        && theirs.false_positives.is_empty()
        && cloud.len() >= 1_000_000
        && elapsed <= 30.0;
    check(
        ok,
        format!(
            "pipeline {} ids {:?}, baseline {} ids {:?}, {} points in {:.1} s on one thread",
            ours.count,
            report.ids(),
            theirs.count,
            baseline.ids(),
            cloud.len(),
            elapsed
        ),
    )
}

/// Largest per-axis absolute translation (m) and rotation (deg) error of the
/// single truth tag, or `None` when it was missed or confused.
fn single_tag_errors(distance: f64, noise: f64, seed: u64, thickness: f64) -> Option<([f64; 3], [f64; 3])> {
    let spec = SceneSpec::single_tag(distance, 0.167, 1e5, noise, 5);
    let (cloud, truth) = synth_scene(&spec, seed).ok()?;
    let report = detect_tags(&cloud, &config(0.167, thickness, 1)).ok()?;
    let eval = evaluate(&report.detections(), &truth);
    if eval.detected != 1 || !eval.false_positives.is_empty() {
        return None;
    }
    let t = eval.tags[0].translation_error?;
    let r = eval.tags[0].rotation_error_deg?;
    Some((t.map(f64::abs), r.map(f64::abs)))
}

fn nearest_rank(values: &mut [f64], q: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    values[((q * values.len() as f64).ceil() as usize).max(1) - 1]
}

// 2. Pose accuracy at 2, 3 and 4 m.
fn pose_accuracy() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for distance in [2.0, 3.0, 4.0] {
        let (mut t_max, mut r_max) = (0.0f64, 0.0f64);
        for seed in 0..3 {
            match single_tag_errors(distance, 0.0, seed, 0.03) {
                Some((t, r)) => {
                    t_max = t_max.max(t.iter().cloned().fold(0.0, f64::max));
                    r_max = r_max.max(r.iter().cloned().fold(0.0, f64::max));
                }
                None => {
                    t_max = f64::INFINITY;
                    r_max = f64::INFINITY;
                }
            }
        }
        ok &= t_max <= 0.01 && r_max <= 0.5;
        lines.push(format!("{distance} m noiseless max {:.4} m {:.3} deg", t_max, r_max));

        let mut t_axes = [Vec::new(), Vec::new(), Vec::new()];
        let mut r_axes = [Vec::new(), Vec::new(), Vec::new()];
        for seed in 0..20 {
            let (t, r) = single_tag_errors(distance, 0.005, 100 + seed, 0.05)
                .unwrap_or(([f64::INFINITY; 3], [f64::INFINITY; 3]));
            for k in 0..3 {
                t_axes[k].push(t[k]);
                r_axes[k].push(r[k]);
            }
        }
        let t95 = t_axes.iter_mut().map(|v| nearest_rank(v, 0.95)).fold(0.0, f64::max);
        let r95 = r_axes.iter_mut().map(|v| nearest_rank(v, 0.95)).fold(0.0, f64::max);
        ok &= t95 <= 0.02 && r95 <= 1.0;
        lines.push(format!("5 mm noise p95 {:.4} m {:.3} deg", t95, r95));
    }
    check(ok, lines.join("; "))
}

fn cloud_with_field(points: &[Vector3<f64>], field: impl Fn(&Vector3<f64>) -> f64) -> IntensityCloud {
    IntensityCloud::from_points(points.iter().map(|p| Point3I::from_position(p, field(p))).collect()).unwrap()
}

/// Gradient fitted at point 0 over the whole cloud.
fn fitted_gradient(points: &[Vector3<f64>], field: impl Fn(&Vector3<f64>) -> f64) -> Vector3<f64> {
    let cloud = cloud_with_field(points, field);
    let index = SpatialIndex::new(&cloud);
    fit_local_model(&cloud, &index, 0, points.len()).unwrap().gradient
}

/// Unit offsets in a ball (`planar = false`) or a disc in the plane spanned by `basis`.
fn stencil(rng: &mut ChaCha8Rng, count: usize, basis: Option<(Vector3<f64>, Vector3<f64>)>) -> Vec<Vector3<f64>> {
    let mut out = vec![Vector3::zeros()];
    while out.len() < count {
        let p = match basis {
            None => random_vector(rng, 1.0),
            Some((e1, e2)) => e1 * rng.gen_range(-1.0..1.0) + e2 * rng.gen_range(-1.0..1.0),
        };
        if p.norm() <= 1.0 {
            out.push(p);
        }
    }
    out
}

// 3. Gradient fit on linear and smooth nonlinear fields.
fn gradient() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut linear_err = 0.0f64;
    for trial in 0..400 {
        let planar = trial % 2 == 1;
        let r = random_rotation(&mut rng);
        let (e1, e2) = (r.column(0).into_owned(), r.column(1).into_owned());
        let base = random_vector(&mut rng, 20.0);
        let scale = rng.gen_range(0.01..1.0);
        let offsets = stencil(&mut rng, 20, planar.then_some((e1, e2)));
        let points: Vec<Vector3<f64>> = offsets.iter().map(|o| base + o * scale).collect();
        let g = if planar {
            e1 * rng.gen_range(-500.0..500.0) + e2 * rng.gen_range(-500.0..500.0)
        } else {
            random_vector(&mut rng, 500.0)
        };
        let b = rng.gen_range(3e4..4e4);
        let fit = fitted_gradient(&points, |p| g.dot(p) + b);
        linear_err = linear_err.max((fit - g).norm() / g.norm());
    }

    // f = 200 + 80 sin(3x + 1) + 40 cos(2y - z) + 15 x z, evaluated near (0.4, -0.2, 0.3)
    let field =
        |p: &Vector3<f64>| 200.0 + 80.0 * (3.0 * p.x + 1.0).sin() + 40.0 * (2.0 * p.y - p.z).cos() + 15.0 * p.x * p.z;
    let center = Vector3::new(0.4, -0.2, 0.3);
    let h = 1e-6;
    let fd = Vector3::new(
        (field(&(center + Vector3::x() * h)) - field(&(center - Vector3::x() * h))) / (2.0 * h),
        (field(&(center + Vector3::y() * h)) - field(&(center - Vector3::y() * h))) / (2.0 * h),
        (field(&(center + Vector3::z() * h)) - field(&(center - Vector3::z() * h))) / (2.0 * h),
    );
    let mut ok = linear_err <= 1e-9;
    let mut lines = vec![format!("linear max relative error {:.2e}", linear_err)];
    for planar in [false, true] {
        let r = random_rotation(&mut rng);
        let (e1, e2) = (r.column(0).into_owned(), r.column(1).into_owned());
        let offsets = stencil(&mut rng, 30, planar.then_some((e1, e2)));
        let expected = if planar {
            e1 * fd.dot(&e1) + e2 * fd.dot(&e2)
        } else {
            fd
        };
        let error_at = |radius: f64| {
            let points: Vec<Vector3<f64>> = offsets.iter().map(|o| center + o * radius).collect();
            (fitted_gradient(&points, field) - expected).norm() / expected.norm()
        };
        let (coarse, fine) = (error_at(0.01), error_at(0.005));
        let ratio = coarse / fine;
        ok &= fine <= 0.05 && ratio >= 1.7;
        lines.push(format!(
            "{} nonlinear error {:.2e} at r, {:.2e} at r/2, ratio {:.2}",
            if planar { "planar" } else { "full-rank" },
            coarse,
            fine,
            ratio
        ));
    }
    check(ok, lines.join("; "))
}

// 4. Bounding-square area of a rotated square, and the diagonal criterion on rotated tag clusters.
fn diagonal_bound() -> Outcome {
    let a = 0.2f64;
    let square = [
        (-a / 2.0, -a / 2.0),
        (a / 2.0, -a / 2.0),
        (a / 2.0, a / 2.0),
        (-a / 2.0, a / 2.0),
    ];
    let area_at = |theta: f64| {
        let (s, c) = theta.sin_cos();
        let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for &(x, y) in &square {
            let (u, v) = (c * x - s * y, s * x + c * y);
            x0 = x0.min(u);
            x1 = x1.max(u);
            y0 = y0.min(v);
            y1 = y1.max(v);
        }
        (x1 - x0) * (y1 - y0)
    };
    let mut in_range = true;
    let mut equality = 0.0f64;
    for step in 0..3600 {
        let deg = step as f64 * 0.1;
        let area = area_at(deg.to_radians());
        in_range &= area >= a * a - 1e-12 && area <= 2.0 * a * a + 1e-12;
        if step % 900 == 0 {
            equality = equality.max((area - a * a).abs());
        }
        if step % 900 == 450 {
            equality = equality.max((area - 2.0 * a * a).abs());
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut passed = 0;
    let mut total = 0;
    for side in [0.167, 0.2] {
        let geom = TagGeometry::new(side, 0.03).unwrap();
        let steps = 40;
        let mut local = Vec::new();
        for i in 0..=steps {
            for j in 0..=steps {
                let x = -side / 2.0 + side * i as f64 / steps as f64;
                let y = -side / 2.0 + side * j as f64 / steps as f64;
                local.push(Vector3::new(x, y, 0.0));
            }
        }
        for deg in 0..360 {
            let spin = Rotation3::from_axis_angle(&Vector3::z_axis(), (deg as f64).to_radians()).into_inner();
            let r = random_rotation(&mut rng);
            let t = random_vector(&mut rng, 10.0);
            let points: Vec<Point3I> = local
                .iter()
                .map(|p| Point3I::from_position(&(r * spin * p + t), 100.0))
                .collect();
            let cloud = IntensityCloud::from_points(points).unwrap();
            let members = Cluster {
                members: (0..cloud.len()).collect(),
            };
            let obb = compute_obb(&cloud, &members).unwrap();
            total += 1;
            if criterion_diagonal(&obb, &geom) {
                passed += 1;
            }
        }
    }
    check(
        in_range && equality <= 1e-9 && passed == total,
        format!(
            "area within [a^2, 2a^2] at all 3600 angles: {in_range}, equality deviation {:.1e}, clusters passing {passed}/{total}",
            equality
        ),
    )
}

// 5. Transform chain and render/unproject round trips.
fn round_trips() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut chain_err = 0.0f64;
    for _ in 0..10_000 {
        let pose = RigidTransform::new(random_rotation(&mut rng), random_vector(&mut rng, 10.0));
        let mut extents: [f64; 3] = [
            rng.gen_range(0.0..1.0),
            rng.gen_range(0.0..1.0),
            rng.gen_range(0.0..1.0),
        ];
        extents.sort_by(|a, b| b.total_cmp(a));
        let p = pose.translation + random_vector(&mut rng, 1.0);
        let local = to_obb_frame(&[p], &pose);
        let (aligned, perm) = align_normal_to_view(&local, &extents);
        let seated = to_intermediate_plane(&aligned);
        let back = pose.apply(&perm.inverse_apply(&from_intermediate_plane(&seated)[0]));
        chain_err = chain_err.max((back - p).norm());
    }

    let params = RenderParams::default();
    let side = 0.2;
    let points: Vec<Vector3<f64>> = (0..20_000)
        .map(|_| Vector3::new(1.0, rng.gen_range(-0.25..0.25), rng.gen_range(-0.25..0.25)))
        .collect();
    let geometry = candidate_geometry(&points, side, &params).unwrap();
    let mut exact_err = 0.0f64;
    for p in &points {
        let (theta, phi, _) = spherical(p);
        let (u, v) = geometry.subpixel_of(theta, phi);
        exact_err = exact_err.max((unproject_to_plane(u, v, &geometry).unwrap() - p).norm());
    }
    let intensities = vec![100.0; points.len()];
    let ids: Vec<usize> = (0..points.len()).collect();
    let image = rasterize(&points, &intensities, &ids, geometry);
    let mut pixel_err = 0.0f64;
    let mut pixels = 0;
    for v in 0..image.height() {
        for u in 0..image.width() {
            if let Some(src) = image.source(u, v) {
                let q = unproject_to_plane(u as f64, v as f64, &geometry).unwrap();
                pixel_err = pixel_err.max((q - points[src]).norm());
                pixels += 1;
            }
        }
    }
    check(
        chain_err <= 1e-12 && exact_err <= 1e-9 && pixel_err <= 1.5e-3 && pixels > 0,
        format!(
            "chain max error {:.1e} m over 10000 poses, sub-pixel {:.1e} m, pixel-center {:.3} mm over {pixels} pixels",
            chain_err,
            exact_err,
            pixel_err * 1e3
        ),
    )
}

type Grid = Vec<Vec<bool>>;

fn to_grid(m: &BitMatrix) -> Grid {
    let n = m.size();
    (0..n).map(|r| (0..n).map(|c| m.get(r, c)).collect()).collect()
}

/// Clockwise quarter turn.
fn turn(g: &Grid) -> Grid {
    let n = g.len();
    (0..n).map(|r| (0..n).map(|c| g[n - 1 - c][r]).collect()).collect()
}

fn transpose(g: &Grid) -> Grid {
    let n = g.len();
    (0..n).map(|r| (0..n).map(|c| g[c][r]).collect()).collect()
}

fn variant(g: &Grid, rotation: u8, mirrored: bool) -> Grid {
    let mut out = if mirrored { transpose(g) } else { g.clone() };
    for _ in 0..rotation {
        out = turn(&out);
    }
    out
}

fn distance(a: &Grid, b: &Grid) -> u32 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .filter(|(x, y)| x != y)
        .count() as u32
}

// 6. Dictionary matching closure and minimum distance.
fn decoder_closure() -> Outcome {
    let dict = TagDictionary::builtin();
    let words: Vec<Grid> = dict.codewords().iter().map(to_grid).collect();
    let n = dict.grid();
    let mut cases = 0;
    let mut failures = 0;
    for (id, word) in words.iter().enumerate() {
        for rotation in 0..4u8 {
            for mirrored in [false, true] {
                let clean = variant(word, rotation, mirrored);
                for flip in 0..=n * n {
                    let mut read = clean.clone();
                    if flip < n * n {
                        read[flip / n][flip % n] ^= true;
                    }
                    let mut oracle = Vec::new();
                    for (j, w) in words.iter().enumerate() {
                        for r in 0..4u8 {
                            for m in [false, true] {
                                if distance(&read, &variant(w, r, m)) <= 1 {
                                    oracle.push((j, r, m));
                                }
                            }
                        }
                    }
                    let got = match_dictionary(&BitMatrix::from_rows(&read), &dict, 1)
                        .ok()
                        .flatten()
                        .map(|h| (h.id, h.rotation, h.mirrored));
                    cases += 1;
                    if oracle != vec![(id, rotation, mirrored)] || got != Some((id, rotation, mirrored)) {
                        failures += 1;
                    }
                }
            }
        }
    }
    let mut min_d = u32::MAX;
    for i in 0..words.len() {
        for j in i..words.len() {
            for r in 0..4u8 {
                for m in [false, true] {
                    if i == j && r == 0 && !m {
                        continue;
                    }
                    min_d = min_d.min(distance(&words[i], &variant(&words[j], r, m)));
                }
            }
        }
    }
    check(
        failures == 0 && cases == 50 * 8 * 17 && words.len() == 50 && min_d >= 4,
        format!("{cases} reads, {failures} mismatches, minimum distance {min_d}"),
    )
}

// 7. Rigid alignment recovery and reflection exclusion.
fn svd_recovery() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut rot_err = 0.0f64;
    let mut trans_err = 0.0f64;
    let mut residual = 0.0f64;
    let mut det_ok = true;
    for trial in 0..1000 {
        let truth = RigidTransform::new(random_rotation(&mut rng), random_vector(&mut rng, 10.0));
        let canonical: Vec<Vector3<f64>> = if trial % 2 == 0 {
            canonical_corners(rng.gen_range(0.05..1.0)).to_vec()
        } else {
            (0..6).map(|_| random_vector(&mut rng, 1.0)).collect()
        };
        let detected: Vec<Vector3<f64>> = canonical.iter().map(|p| truth.apply(p)).collect();
        let (pose, rms) = solve_pose_svd(&canonical, &detected).map_err(|e| e.to_string())?;
        rot_err = rot_err.max((pose.rotation - truth.rotation).abs().max());
        trans_err = trans_err.max((pose.translation - truth.translation).abs().max());
        residual = residual.max(rms);
        det_ok &= (pose.rotation.determinant() - 1.0).abs() < 1e-9;

        let flip = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        let mirrored: Vec<Vector3<f64>> = detected.iter().map(|p| flip * p).collect();
        let (mpose, _) = solve_pose_svd(&canonical, &mirrored).map_err(|e| e.to_string())?;
        det_ok &= (mpose.rotation.determinant() - 1.0).abs() < 1e-9;
    }
    check(
        rot_err <= 1e-9 && trans_err <= 1e-9 && residual < 1e-12 && det_ok,
        format!(
            "1000 motions: rotation {:.1e}, translation {:.1e} m, residual {:.1e} m, det +1 incl. mirrors: {det_ok}",
            rot_err, trans_err, residual
        ),
    )
}

// 8. Byte-identical reports across runs and thread counts.
fn determinism() -> Outcome {
    let (cloud, _) = occlusion_scene();
    let mut reports = Vec::new();
    for threads in [1, 4, 8, 1] {
        let report = detect_tags(cloud, &config(0.2, 0.03, threads)).map_err(|e| e.to_string())?;
        reports.push(report.to_json());
    }
    let (again, _) = synth_scene(&SceneSpec::occlusion_scene(), 0).map_err(|e| e.to_string())?;
    reports.push(
        detect_tags(&again, &config(0.2, 0.03, 4))
            .map_err(|e| e.to_string())?
            .to_json(),
    );
    let identical = reports.windows(2).all(|w| w[0] == w[1]);
    check(
        identical,
        format!(
            "{} reports of {} bytes, identical: {identical}",
            reports.len(),
            reports[0].len()
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("occlusion", occlusion),
        ("pose accuracy", pose_accuracy),
        ("gradient", gradient),
        ("diagonal bound", diagonal_bound),
        ("round trips", round_trips),
        ("decoder closure", decoder_closure),
        ("svd recovery", svd_recovery),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {} {name}: PASS ({detail}) [{secs:.1} s]", k + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({detail}) [{secs:.1} s]", k + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
