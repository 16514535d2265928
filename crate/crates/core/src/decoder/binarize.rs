//! Adaptive thresholding of intensity images.

use crate::reproject::IntensityImage;

use super::DecodeError;

pub const WINDOW: usize = 31;
pub const MIN_PIXELS: usize = 64;

/// Black/white raster; `true` = white.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryImage {
    pub width: usize,
    pub height: usize,
    pub white: Vec<bool>,
}

impl BinaryImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            white: vec![false; width * height],
        }
    }

    #[inline]
    pub fn is_white(&self, u: usize, v: usize) -> bool {
        self.white[v * self.width + u]
    }

    /// Black test that treats everything outside the raster as white.
    #[inline]
    pub fn is_black_at(&self, u: i64, v: i64) -> bool {
        u >= 0
            && v >= 0
            && (u as usize) < self.width
            && (v as usize) < self.height
            && !self.is_white(u as usize, v as usize)
    }
}

/// White iff the pixel exceeds the mean of the non-empty pixels in the
/// `WINDOW×WINDOW` neighborhood clamped to the image. Empty pixels are black.
pub fn binarize(image: &IntensityImage) -> Result<BinaryImage, DecodeError> {
    let (w, h) = (image.width(), image.height());
    let filled = image.filled_count();
    if filled < MIN_PIXELS {
        return Err(DecodeError::TooFewPixels { filled });
    }
    // summed-area tables over values and non-empty counts
    let stride = w + 1;
    let mut sum = vec![0.0f64; stride * (h + 1)];
    let mut cnt = vec![0u32; stride * (h + 1)];
    for v in 0..h {
        let mut row_sum = 0.0;
        let mut row_cnt = 0;
        for u in 0..w {
            if let Some(x) = image.get(u, v) {
                row_sum += x;
                row_cnt += 1;
            }
            sum[(v + 1) * stride + u + 1] = sum[v * stride + u + 1] + row_sum;
            cnt[(v + 1) * stride + u + 1] = cnt[v * stride + u + 1] + row_cnt;
        }
    }
    let half = WINDOW / 2;
    let mut out = BinaryImage::new(w, h);
    for v in 0..h {
        let (v0, v1) = (v.saturating_sub(half), (v + half + 1).min(h));
        for u in 0..w {
            let Some(x) = image.get(u, v) else { continue };
            let (u0, u1) = (u.saturating_sub(half), (u + half + 1).min(w));
            let s = sum[v1 * stride + u1] - sum[v0 * stride + u1] - sum[v1 * stride + u0] + sum[v0 * stride + u0];
            let c = cnt[v1 * stride + u1] + cnt[v0 * stride + u0] - cnt[v0 * stride + u1] - cnt[v1 * stride + u0];
            out.white[v * w + u] = x > s / c as f64;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reproject::ImageGeometry;

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

    #[test]
    fn bright_block_is_white() {
        let (w, h) = (40, 30);
        let mut vals = vec![Some(100.0); w * h];
        for v in 10..16 {
            for u in 20..26 {
                vals[v * w + u] = Some(200.0);
            }
        }
        let b = binarize(&IntensityImage::from_values(geometry(w, h), vals)).unwrap();
        for v in 0..h {
            for u in 0..w {
                assert_eq!(b.is_white(u, v), (10..16).contains(&v) && (20..26).contains(&u));
            }
        }
    }

    #[test]
    fn empty_image_rejected() {
        let img = IntensityImage::from_values(geometry(20, 20), vec![None; 400]);
        assert_eq!(binarize(&img), Err(DecodeError::TooFewPixels { filled: 0 }));
    }

    #[test]
    fn empty_pixels_are_black() {
        let mut vals = vec![Some(50.0); 100];
        vals[5] = None;
        vals[7] = Some(255.0);
        let b = binarize(&IntensityImage::from_values(geometry(10, 10), vals)).unwrap();
        assert!(!b.is_white(5, 0));
        assert!(b.is_white(7, 0));
    }
}
