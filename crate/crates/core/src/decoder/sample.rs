//! Reading the module grid inside a detected quad.

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};

use crate::reproject::IntensityImage;

use super::bits::BitMatrix;
use super::quad::{Pixel, QuadDetection};
use super::DecodeError;

/// Fraction of border (black) and margin (white) modules that must read correctly.
pub const FRAME_AGREEMENT: f64 = 0.8;

/// Projective map from the unit square onto a quad:
/// `(0,0) → q0, (1,0) → q1, (1,1) → q2, (0,1) → q3`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography(pub Matrix3<f64>);

impl Homography {
    pub fn unit_square_to(quad: &[Pixel; 4]) -> Option<Self> {
        let src = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let mut a = SMatrix::<f64, 8, 8>::zeros();
        let mut b = SVector::<f64, 8>::zeros();
        for k in 0..4 {
            let ([x, y], [u, v]) = (src[k], quad[k]);
            a.set_row(
                2 * k,
                &SMatrix::<f64, 1, 8>::from_row_slice(&[x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y]),
            );
            a.set_row(
                2 * k + 1,
                &SMatrix::<f64, 1, 8>::from_row_slice(&[0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y]),
            );
            b[2 * k] = u;
            b[2 * k + 1] = v;
        }
        let h = a.lu().solve(&b)?;
        Some(Self(Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], 1.0)))
    }

    pub fn apply(&self, x: f64, y: f64) -> Pixel {
        let p = self.0 * Vector3::new(x, y, 1.0);
        [p.x / p.z, p.y / p.z]
    }
}

/// Mean of the non-empty pixels in the 3×3 patch around `p`.
fn patch_mean(image: &IntensityImage, p: &Pixel) -> Option<f64> {
    let (cu, cv) = (p[0].round() as i64, p[1].round() as i64);
    let (mut acc, mut n) = (0.0, 0);
    for dv in -1..=1 {
        for du in -1..=1 {
            let (u, v) = (cu + du, cv + dv);
            if u < 0 || v < 0 || u as usize >= image.width() || v as usize >= image.height() {
                continue;
            }
            if let Some(x) = image.get(u as usize, v as usize) {
                acc += x;
                n += 1;
            }
        }
    }
    (n > 0).then(|| acc / n as f64)
}

/// Samples the `n×n` payload of a tag whose black border, `border` modules
/// wide, spans `quad`. The threshold sits halfway between the mean border
/// value and the mean value of the white margin ring just outside the quad.
pub fn sample_bits(
    image: &IntensityImage,
    quad: &QuadDetection,
    n: usize,
    border: usize,
) -> Result<BitMatrix, DecodeError> {
    sample_frame(image, quad, n, border).map(|f| f.bits)
}

/// Payload bits with the mean border (black) and margin (white) levels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameSample {
    pub bits: BitMatrix,
    pub black: f64,
    pub white: f64,
}

/// As [`sample_bits`], also returning the frame levels.
pub fn sample_frame(
    image: &IntensityImage,
    quad: &QuadDetection,
    n: usize,
    border: usize,
) -> Result<FrameSample, DecodeError> {
    let h = Homography::unit_square_to(&quad.corners).ok_or(DecodeError::FrameCheckFailed)?;
    let cells = n + 2 * border;
    let module = 1.0 / cells as f64;
    let at = |r: f64, c: f64| patch_mean(image, &h.apply((c + 0.5) * module, (r + 0.5) * module));

    let mut border_vals = Vec::new();
    for r in 0..cells {
        for c in 0..cells {
            let inside = (border..border + n).contains(&r) && (border..border + n).contains(&c);
            if !inside {
                border_vals.push(at(r as f64, c as f64));
            }
        }
    }
    let mut margin_vals = Vec::new();
    for k in -1..=cells as i64 {
        let k = k as f64;
        margin_vals.push(at(-1.0, k));
        margin_vals.push(at(cells as f64, k));
    }
    for k in 0..cells {
        let k = k as f64;
        margin_vals.push(at(k, -1.0));
        margin_vals.push(at(k, cells as f64));
    }
    let mean = |vals: &[Option<f64>]| {
        let got: Vec<f64> = vals.iter().flatten().copied().collect();
        (!got.is_empty()).then(|| got.iter().sum::<f64>() / got.len() as f64)
    };
    let (Some(black), Some(white)) = (mean(&border_vals), mean(&margin_vals)) else {
        return Err(DecodeError::FrameCheckFailed);
    };
    if white <= black {
        return Err(DecodeError::FrameCheckFailed);
    }
    let threshold = 0.5 * (black + white);
    let share = |vals: &[Option<f64>], want_white: bool| {
        let good = vals
            .iter()
            .filter(|v| matches!(v, Some(x) if (*x > threshold) == want_white))
            .count();
        good as f64 / vals.len() as f64
    };
    if share(&border_vals, false) < FRAME_AGREEMENT || share(&margin_vals, true) < FRAME_AGREEMENT {
        return Err(DecodeError::FrameCheckFailed);
    }
    let mut bits = BitMatrix::zeros(n);
    for r in 0..n {
        for c in 0..n {
            let x = at((r + border) as f64, (c + border) as f64).ok_or(DecodeError::FrameCheckFailed)?;
            bits.set(r, c, x > threshold);
        }
    }
    Ok(FrameSample { bits, black, white })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::decoder::dictionary::TagDictionary;
    use crate::reproject::ImageGeometry;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn geometry(width: usize, height: usize) -> ImageGeometry {
        ImageGeometry {
            theta_a: 1e-3,
            theta_i: 1e-3,
            u_o: 0.0,
            v_o: 0.0,
            width,
            height,
        }
    }

    /// Axis-aligned tag raster: `px` pixels per module, margin ring included,
    /// placed at `offset`, on a grey background.
    pub(crate) fn render_tag(code: &BitMatrix, px: usize, offset: usize, size: usize) -> IntensityImage {
        let n = code.size();
        let cells = n + 4;
        let mut vals = vec![Some(120.0); size * size];
        for v in 0..cells * px {
            for u in 0..cells * px {
                let (r, c) = (v / px, u / px);
                let white = if r == 0 || c == 0 || r == cells - 1 || c == cells - 1 {
                    true
                } else if r == 1 || c == 1 || r == cells - 2 || c == cells - 2 {
                    false
                } else {
                    code.get(r - 2, c - 2)
                };
                vals[(v + offset) * size + u + offset] = Some(if white { 220.0 } else { 30.0 });
            }
        }
        IntensityImage::from_values(geometry(size, size), vals)
    }

    /// The black-border quad of `render_tag`, starting at grid top-left.
    pub(crate) fn border_quad(n: usize, px: usize, offset: usize) -> QuadDetection {
        let lo = (offset + px) as f64 - 0.5;
        let hi = (offset + (n + 3) * px) as f64 - 0.5;
        QuadDetection {
            corners: [[lo, lo], [hi, lo], [hi, hi], [lo, hi]],
        }
    }

    #[test]
    fn homography_maps_corners() {
        let q = [[10.0, 12.0], [50.0, 8.0], [55.0, 60.0], [7.0, 49.0]];
        let h = Homography::unit_square_to(&q).unwrap();
        for (k, &(x, y)) in [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)].iter().enumerate() {
            let p = h.apply(x, y);
            assert!((p[0] - q[k][0]).abs() < 1e-9 && (p[1] - q[k][1]).abs() < 1e-9);
        }
    }

    #[test]
    fn reads_rendered_codeword() {
        let dict = TagDictionary::builtin();
        for id in [0, 7, 49] {
            let code = *dict.codeword(id).unwrap();
            let img = render_tag(&code, 12, 20, 140);
            let bits = sample_bits(&img, &border_quad(4, 12, 20), 4, 1).unwrap();
            assert_eq!(bits, code);
            // starting the quad one corner later reads the grid a quarter turn back
            let mut q = border_quad(4, 12, 20);
            q.corners.rotate_left(1);
            let turned = sample_bits(&img, &q, 4, 1).unwrap();
            assert_eq!(turned, code.rotated(3));
        }
    }

    #[test]
    fn noise_fails_frame_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut failures = 0;
        for _ in 0..100 {
            let vals = (0..120 * 120).map(|_| Some(rng.gen_range(0.0..255.0))).collect();
            let img = IntensityImage::from_values(geometry(120, 120), vals);
            if sample_bits(&img, &border_quad(4, 10, 20), 4, 1).is_err() {
                failures += 1;
            }
        }
        assert!(failures >= 95, "{failures}");
    }
}
