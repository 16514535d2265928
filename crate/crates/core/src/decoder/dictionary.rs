//! Tag codebooks: generation, verification, text format and lookup.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::bits::{BitMatrix, MAX_GRID};
use super::DecodeError;

pub const BUILTIN_GRID: usize = 4;
pub const BUILTIN_SIZE: usize = 50;
pub const BUILTIN_MIN_DISTANCE: u32 = 4;
const BUILTIN_SEED: u64 = 0x7a6_1d3c;

/// Ordered codewords; a tag ID is an index into this list.
#[derive(Debug, Clone, PartialEq)]
pub struct TagDictionary {
    grid: usize,
    codewords: Vec<BitMatrix>,
    min_distance: u32,
}

/// A dictionary hit: `bits = rot^rotation(mirror^mirrored(codeword[id]))`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DictionaryMatch {
    pub id: usize,
    /// Clockwise quarter turns.
    pub rotation: u8,
    pub mirrored: bool,
    pub distance: u32,
}

/// Distance between `a` and every symmetric variant of `b`, skipping the
/// identity when `a` and `b` are the same codeword.
fn min_variant_distance(a: &BitMatrix, b: &BitMatrix, same: bool) -> u32 {
    let mut best = u32::MAX;
    for mirrored in [false, true] {
        for r in 0..4u8 {
            if same && r == 0 && !mirrored {
                continue;
            }
            best = best.min(a.hamming(&b.transformed(r, mirrored)));
        }
    }
    best
}

/// Smallest distance over all codeword pairs and symmetric variants,
/// including each codeword against its own non-trivial variants.
pub fn minimum_distance(codewords: &[BitMatrix]) -> u32 {
    let mut best = u32::MAX;
    for (i, a) in codewords.iter().enumerate() {
        for (j, b) in codewords.iter().enumerate().skip(i) {
            best = best.min(min_variant_distance(a, b, i == j));
        }
    }
    best
}

impl TagDictionary {
    /// Checks the grid sizes and computes the minimum distance.
    pub fn new(codewords: Vec<BitMatrix>) -> Result<Self, DecodeError> {
        let grid = codewords
            .first()
            .map(|c| c.size())
            .ok_or_else(|| DecodeError::InvalidDictionary("no codewords".into()))?;
        if codewords.iter().any(|c| c.size() != grid) {
            return Err(DecodeError::InvalidDictionary("mixed grid sizes".into()));
        }
        let min_distance = minimum_distance(&codewords);
        Ok(Self {
            grid,
            codewords,
            min_distance,
        })
    }

    /// Greedy random search: draws codewords from a seeded stream and keeps
    /// each one at distance `≥ min_distance` from everything kept so far.
    pub fn generate(grid: usize, count: usize, min_distance: u32, seed: u64) -> Result<Self, DecodeError> {
        if !(1..=MAX_GRID).contains(&grid) {
            return Err(DecodeError::InvalidDictionary(format!("grid {grid}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut kept: Vec<BitMatrix> = Vec::with_capacity(count);
        let max_draws = 200_000 * count.max(1);
        for _ in 0..max_draws {
            if kept.len() == count {
                break;
            }
            let c = BitMatrix::from_word(grid, rng.gen::<u64>());
            if min_variant_distance(&c, &c, true) < min_distance {
                continue;
            }
            if kept.iter().all(|k| min_variant_distance(k, &c, false) >= min_distance) {
                kept.push(c);
            }
        }
        if kept.len() < count {
            return Err(DecodeError::InvalidDictionary(format!(
                "found only {} of {count} codewords at distance {min_distance}",
                kept.len()
            )));
        }
        Self::new(kept)
    }

    /// The shipped 4×4 dictionary of 50 codewords.
    pub fn builtin() -> Self {
        Self::generate(BUILTIN_GRID, BUILTIN_SIZE, BUILTIN_MIN_DISTANCE, BUILTIN_SEED).expect("builtin dictionary")
    }

    pub fn grid(&self) -> usize {
        self.grid
    }

    pub fn len(&self) -> usize {
        self.codewords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codewords.is_empty()
    }

    pub fn codeword(&self, id: usize) -> Option<&BitMatrix> {
        self.codewords.get(id)
    }

    pub fn codewords(&self) -> &[BitMatrix] {
        &self.codewords
    }

    pub fn min_distance(&self) -> u32 {
        self.min_distance
    }

    /// Largest correction that keeps matches unambiguous.
    pub fn max_safe_correction(&self) -> u32 {
        self.min_distance.saturating_sub(1) / 2
    }

    /// `GRID n` header, then one row-major 0/1 line per codeword.
    pub fn to_text(&self) -> String {
        let mut out = format!("GRID {}\n", self.grid);
        for c in &self.codewords {
            out.push_str(&c.to_bit_string());
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, DecodeError> {
        let mut grid = None;
        let mut codewords = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |reason: String| DecodeError::InvalidDictionary(format!("line {}: {reason}", lineno + 1));
            match grid {
                None => {
                    let mut parts = line.split_whitespace();
                    if parts.next() != Some("GRID") {
                        return Err(bad("expected GRID header".into()));
                    }
                    let n: usize = parts
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| bad("grid size".into()))?;
                    if !(1..=MAX_GRID).contains(&n) || parts.next().is_some() {
                        return Err(bad(format!("unsupported grid {n}")));
                    }
                    grid = Some(n);
                }
                Some(n) => {
                    if line.len() != n * n {
                        return Err(bad(format!("codeword must have {} bits", n * n)));
                    }
                    let mut m = BitMatrix::zeros(n);
                    for (k, ch) in line.chars().enumerate() {
                        match ch {
                            '0' => {}
                            '1' => m.set(k / n, k % n, true),
                            other => return Err(bad(format!("unexpected character {other:?}"))),
                        }
                    }
                    codewords.push(m);
                }
            }
        }
        if grid.is_none() {
            return Err(DecodeError::InvalidDictionary("missing GRID header".into()));
        }
        Self::new(codewords)
    }

    pub fn load(path: &Path) -> Result<Self, DecodeError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| DecodeError::InvalidDictionary(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

/// Every `(id, rotation, mirrored)` within `max_correction` bits of `bits`,
/// in dictionary order.
pub fn all_matches(bits: &BitMatrix, dict: &TagDictionary, max_correction: u32) -> Vec<DictionaryMatch> {
    let mut out = Vec::new();
    for (id, c) in dict.codewords().iter().enumerate() {
        for mirrored in [false, true] {
            for rotation in 0..4u8 {
                let distance = bits.hamming(&c.transformed(rotation, mirrored));
                if distance <= max_correction {
                    out.push(DictionaryMatch {
                        id,
                        rotation,
                        mirrored,
                        distance,
                    });
                }
            }
        }
    }
    out
}

/// The unique dictionary hit within `max_correction` bits, if any.
pub fn match_dictionary(
    bits: &BitMatrix,
    dict: &TagDictionary,
    max_correction: u32,
) -> Result<Option<DictionaryMatch>, DecodeError> {
    if bits.size() != dict.grid() {
        return Err(DecodeError::GridMismatch {
            bits: bits.size(),
            dictionary: dict.grid(),
        });
    }
    let hits = all_matches(bits, dict, max_correction);
    match hits.len() {
        0 => Ok(None),
        1 => Ok(Some(hits[0])),
        n => Err(DecodeError::AmbiguousMatch { candidates: n }),
    }
}
