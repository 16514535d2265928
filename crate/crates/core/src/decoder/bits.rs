//! Square bit grids and their symmetries.

use std::fmt;

pub const MAX_GRID: usize = 8;

/// `n×n` grid of bits, row-major, `true` = white module.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct BitMatrix {
    n: u8,
    bits: u64,
}

impl BitMatrix {
    pub fn zeros(n: usize) -> Self {
        assert!((1..=MAX_GRID).contains(&n), "grid size {n} unsupported");
        Self { n: n as u8, bits: 0 }
    }

    /// From the low `n²` bits of `word`, row-major, bit `r·n + c`.
    pub fn from_word(n: usize, word: u64) -> Self {
        let mut m = Self::zeros(n);
        let cells = n * n;
        m.bits = if cells == 64 {
            word
        } else {
            word & ((1u64 << cells) - 1)
        };
        m
    }

    pub fn from_rows(rows: &[Vec<bool>]) -> Self {
        let n = rows.len();
        let mut m = Self::zeros(n);
        for (r, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), n, "grid rows must be square");
            for (c, &b) in row.iter().enumerate() {
                m.set(r, c, b);
            }
        }
        m
    }

    pub fn size(&self) -> usize {
        self.n as usize
    }

    pub fn word(&self) -> u64 {
        self.bits
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> bool {
        self.bits >> (r * self.size() + c) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, value: bool) {
        let k = r * self.size() + c;
        if value {
            self.bits |= 1 << k;
        } else {
            self.bits &= !(1 << k);
        }
    }

    pub fn hamming(&self, other: &BitMatrix) -> u32 {
        assert_eq!(self.n, other.n);
        (self.bits ^ other.bits).count_ones()
    }

    /// Quarter turn clockwise: `out[r][c] = in[n−1−c][r]`.
    pub fn rot90(&self) -> Self {
        let n = self.size();
        let mut out = Self::zeros(n);
        for r in 0..n {
            for c in 0..n {
                out.set(r, c, self.get(n - 1 - c, r));
            }
        }
        out
    }

    pub fn rotated(&self, quarter_turns: u8) -> Self {
        let mut m = *self;
        for _ in 0..quarter_turns % 4 {
            m = m.rot90();
        }
        m
    }

    /// Reflection about the main diagonal: `out[r][c] = in[c][r]`.
    pub fn mirrored(&self) -> Self {
        let n = self.size();
        let mut out = Self::zeros(n);
        for r in 0..n {
            for c in 0..n {
                out.set(r, c, self.get(c, r));
            }
        }
        out
    }

    /// `rot^r(mirror^m(self))`.
    pub fn transformed(&self, quarter_turns: u8, mirrored: bool) -> Self {
        let base = if mirrored { self.mirrored() } else { *self };
        base.rotated(quarter_turns)
    }

    pub fn to_bit_string(&self) -> String {
        let n = self.size();
        (0..n * n)
            .map(|k| if self.get(k / n, k % n) { '1' } else { '0' })
            .collect()
    }
}

impl fmt::Debug for BitMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = self.size();
        write!(f, "BitMatrix({n}:")?;
        for r in 0..n {
            write!(f, " ")?;
            for c in 0..n {
                write!(f, "{}", if self.get(r, c) { '1' } else { '0' })?;
            }
        }
        write!(f, ")")
    }
}
