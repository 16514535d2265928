//! Square marker detection and identification on intensity images.
//!
//! Tag layout, outside in: a white margin one module wide, a black border
//! one module wide, then the `n×n` payload. The detector looks for the
//! black border as a quad, reads the payload through the quad's homography
//! and looks the bits up in a [`TagDictionary`] under every rotation and
//! reflection.

pub mod binarize;
pub mod bits;
pub mod dictionary;
pub mod quad;
pub mod sample;

use thiserror::Error;

pub use binarize::{binarize, BinaryImage};
pub use bits::BitMatrix;
pub use dictionary::{match_dictionary, DictionaryMatch, TagDictionary};
pub use quad::{detect_quads, Grid, Pixel, QuadDetection};
pub use sample::{sample_bits, sample_frame, FrameSample};

use crate::reproject::IntensityImage;

#[derive(Debug, Error, PartialEq)]
pub enum DecodeError {
    #[error("only {filled} non-empty pixels")]
    TooFewPixels { filled: usize },
    #[error("tag frame not found inside quad")]
    FrameCheckFailed,
    #[error("{candidates} dictionary entries within the correction limit")]
    AmbiguousMatch { candidates: usize },
    #[error("bit grid {bits} does not match dictionary grid {dictionary}")]
    GridMismatch { bits: usize, dictionary: usize },
    #[error("invalid dictionary: {0}")]
    InvalidDictionary(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecoderParams {
    pub max_correction: u32,
    /// Black border width in modules.
    pub border: usize,
    /// White margin width in modules; reported corners are the outer
    /// corners of the margin.
    pub margin: usize,
    /// Corner refinement search distance, pixels.
    pub refine_reach: f64,
}

impl Default for DecoderParams {
    fn default() -> Self {
        Self {
            max_correction: 1,
            border: 1,
            margin: 1,
            refine_reach: 3.0,
        }
    }
}

/// A decoded tag in one image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodedTag {
    pub id: usize,
    pub rotation: u8,
    pub mirrored: bool,
    pub hamming: u32,
    /// Outer corners of the tag (white margin included), starting at the corner that holds
    /// the codeword's top-left module after undoing the rotation, then
    /// following the codeword's left, bottom and right edges. For mirrored
    /// reads indices 1 and 3 are exchanged relative to the physical tag.
    pub corners: [Pixel; 4],
    /// The black border as detected.
    pub quad: QuadDetection,
}

/// An outer tag edge is used when its contrast reaches this share of the
/// border-to-margin contrast.
pub const OUTER_EDGE_CONTRAST: f64 = 0.25;

/// Corners of the square grown from the black-border quad by `margin`
/// modules on every side, through the quad's homography.
pub fn outer_corners(quad: &QuadDetection, grid: usize, border: usize, margin: usize) -> Option<[Pixel; 4]> {
    let h = sample::Homography::unit_square_to(&quad.corners)?;
    let t = margin as f64 / (grid + 2 * border) as f64;
    let (lo, hi) = (-t, 1.0 + t);
    Some([h.apply(lo, lo), h.apply(hi, lo), h.apply(hi, hi), h.apply(lo, hi)])
}

/// Corner index of the quad (unit-square order TL, TR, BR, BL of the
/// sampled grid) holding codeword corner `k` of TL, BL, BR, TR.
pub fn corner_order(rotation: u8) -> [usize; 4] {
    [0usize, 3, 2, 1].map(|i| (i + rotation as usize) % 4)
}

/// Per-image bookkeeping.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DecodeOutcome {
    pub tags: Vec<DecodedTag>,
    pub quads: usize,
    pub frame_failures: usize,
    pub unmatched: usize,
}

/// Binarize, find quads, refine on the grey image, sample and look up.
pub fn decode_image(
    image: &IntensityImage,
    dict: &TagDictionary,
    params: &DecoderParams,
) -> Result<DecodeOutcome, DecodeError> {
    let bin = binarize(image)?;
    let grid = Grid::from_image(image);
    let quads: Vec<QuadDetection> = quad::detect_quads_coarse(&bin)
        .into_iter()
        .map(|q| quad::refine_quad(&grid, &q, params.refine_reach))
        .collect();
    let mut out = DecodeOutcome {
        quads: quads.len(),
        ..Default::default()
    };
    for q in quads {
        let frame = match sample_frame(image, &q, dict.grid(), params.border) {
            Ok(f) => f,
            Err(_) => {
                out.frame_failures += 1;
                continue;
            }
        };
        match match_dictionary(&frame.bits, dict, params.max_correction) {
            Ok(Some(m)) => {
                let ratio = params.margin as f64 / (dict.grid() + 2 * params.border) as f64;
                let min_contrast = OUTER_EDGE_CONTRAST * (frame.white - frame.black);
                let grown = quad::grown_square(&grid, &q, ratio, params.refine_reach, min_contrast);
                let Some(outer) = grown.or_else(|| outer_corners(&q, dict.grid(), params.border, params.margin)) else {
                    out.frame_failures += 1;
                    continue;
                };
                let order = corner_order(m.rotation);
                out.tags.push(DecodedTag {
                    id: m.id,
                    rotation: m.rotation,
                    mirrored: m.mirrored,
                    hamming: m.distance,
                    corners: order.map(|i| outer[i]),
                    quad: q,
                });
            }
            _ => out.unmatched += 1,
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::sample::tests::render_tag;

    #[test]
    fn decodes_rendered_tags_in_all_orientations() {
        let dict = TagDictionary::builtin();
        for id in [3, 7, 21] {
            let code = *dict.codeword(id).unwrap();
            for mirrored in [false, true] {
                for r in 0..4u8 {
                    let shown = code.transformed(r, mirrored);
                    let img = render_tag(&shown, 12, 20, 140);
                    let out = decode_image(&img, &dict, &DecoderParams::default()).unwrap();
                    assert_eq!(out.tags.len(), 1, "{id} {r} {mirrored}");
                    let t = out.tags[0];
                    assert_eq!((t.id, t.rotation, t.mirrored), (id, r, mirrored));
                    // physical TL of the unrotated grid is where the codeword TL module went
                    let (lo, hi) = (19.5, 115.5);
                    let grid_corners = [[lo, lo], [hi, lo], [hi, hi], [lo, hi]];
                    let want = corner_order(r).map(|i| grid_corners[i]);
                    for k in 0..4 {
                        let d =
                            ((t.corners[k][0] - want[k][0]).powi(2) + (t.corners[k][1] - want[k][1]).powi(2)).sqrt();
                        assert!(d < 0.5, "corner {k}: {:?} vs {:?}", t.corners[k], want[k]);
                    }
                }
            }
        }
    }
}
