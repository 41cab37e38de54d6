//! Bit-packed storage for fixed-arity binary patterns.
//!
//! A pattern over `n` inputs occupies `ceil(n/64)` words; input `j` lives at
//! bit `j % 64` of word `j / 64`. Bits above the arity are always zero, so
//! whole-word comparison and hashing are meaningful.

pub const WORD_BITS: usize = 64;

/// Number of 64-bit words needed to hold `arity` bits (at least one).
pub fn words_for(arity: usize) -> usize {
    arity.div_ceil(WORD_BITS).max(1)
}

/// Mask selecting the valid bits of the last word of a pattern.
pub fn last_word_mask(arity: usize) -> u64 {
    match arity % WORD_BITS {
        0 if arity > 0 => u64::MAX,
        0 => 0,
        r => (1u64 << r) - 1,
    }
}

pub fn get_bit(row: &[u64], j: usize) -> bool {
    row[j / WORD_BITS] >> (j % WORD_BITS) & 1 == 1
}

pub fn set_bit(row: &mut [u64], j: usize, value: bool) {
    let mask = 1u64 << (j % WORD_BITS);
    if value {
        row[j / WORD_BITS] |= mask;
    } else {
        row[j / WORD_BITS] &= !mask;
    }
}

/// A dense list of equal-arity binary patterns, one bit-packed row each.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatternSet {
    arity: usize,
    width: usize,
    len: usize,
    data: Vec<u64>,
}

impl PatternSet {
    pub fn new(arity: usize) -> Self {
        PatternSet { arity, width: words_for(arity), len: 0, data: Vec::new() }
    }

    pub fn with_capacity(arity: usize, rows: usize) -> Self {
        let width = words_for(arity);
        PatternSet { arity, width, len: 0, data: Vec::with_capacity(rows * width) }
    }

    /// All-zero set of `rows` patterns, for callers that fill bits in place.
    pub fn zeros(arity: usize, rows: usize) -> Self {
        let width = words_for(arity);
        PatternSet { arity, width, len: rows, data: vec![0; rows * width] }
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    /// Words per row.
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn row(&self, i: usize) -> &[u64] {
        &self.data[i * self.width..(i + 1) * self.width]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [u64] {
        &mut self.data[i * self.width..(i + 1) * self.width]
    }

    pub fn bit(&self, i: usize, j: usize) -> bool {
        get_bit(self.row(i), j)
    }

    pub fn set_bit(&mut self, i: usize, j: usize, value: bool) {
        let width = self.width;
        set_bit(&mut self.data[i * width..(i + 1) * width], j, value);
    }

    /// Appends a row given as packed words; bits above the arity are cleared.
    pub fn push_row(&mut self, row: &[u64]) {
        assert_eq!(row.len(), self.width, "row width mismatch");
        let start = self.data.len();
        self.data.extend_from_slice(row);
        if self.arity % WORD_BITS != 0 || self.arity == 0 {
            let last = self.data.len() - 1;
            let _ = start;
            self.data[last] &= last_word_mask(self.arity);
        }
        self.len += 1;
    }

    pub fn push_bits(&mut self, bits: &[bool]) {
        assert_eq!(bits.len(), self.arity, "bit count mismatch");
        let mut row = vec![0u64; self.width];
        for (j, &b) in bits.iter().enumerate() {
            if b {
                set_bit(&mut row, j, true);
            }
        }
        self.data.extend_from_slice(&row);
        self.len += 1;
    }

    /// Appends the pattern whose input `j` is bit `j` of `index`.
    /// Only valid for arity <= 64.
    pub fn push_index(&mut self, index: u64) {
        assert!(self.arity <= 64);
        let mut row = vec![0u64; self.width];
        row[0] = index & last_word_mask(self.arity);
        self.data.extend_from_slice(&row);
        self.len += 1;
    }

    pub fn iter(&self) -> impl Iterator<Item = &[u64]> {
        self.data.chunks_exact(self.width.max(1))
    }

    /// Sorts rows lexicographically by word and removes duplicates.
    pub fn sort_dedup(&mut self) {
        let width = self.width;
        let mut order: Vec<usize> = (0..self.len).collect();
        order.sort_unstable_by(|&a, &b| {
            self.data[a * width..(a + 1) * width].cmp(&self.data[b * width..(b + 1) * width])
        });
        let mut out: Vec<u64> = Vec::with_capacity(self.data.len());
        let mut kept = 0;
        for &i in &order {
            let row = &self.data[i * width..(i + 1) * width];
            if kept == 0 || &out[(kept - 1) * width..kept * width] != row {
                out.extend_from_slice(row);
                kept += 1;
            }
        }
        self.data = out;
        self.len = kept;
    }

    /// Binary search over a set previously normalized with `sort_dedup`.
    pub fn contains_sorted(&self, row: &[u64]) -> bool {
        let width = self.width;
        let mut lo = 0usize;
        let mut hi = self.len;
        while lo < hi {
            let mid = (lo + hi) / 2;
            match self.data[mid * width..(mid + 1) * width].cmp(row) {
                std::cmp::Ordering::Less => lo = mid + 1,
                std::cmp::Ordering::Greater => hi = mid,
                std::cmp::Ordering::Equal => return true,
            }
        }
        false
    }

    /// Renders row `i` as a `0`/`1` string, input 0 first.
    pub fn row_string(&self, i: usize) -> String {
        (0..self.arity).map(|j| if self.bit(i, j) { '1' } else { '0' }).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn push_and_read_bits() {
        let mut p = PatternSet::new(70);
        let mut bits = vec![false; 70];
        bits[0] = true;
        bits[63] = true;
        bits[64] = true;
        bits[69] = true;
        p.push_bits(&bits);
        assert_eq!(p.len(), 1);
        assert_eq!(p.width(), 2);
        assert!(p.bit(0, 0) && p.bit(0, 63) && p.bit(0, 64) && p.bit(0, 69));
        assert!(!p.bit(0, 1) && !p.bit(0, 68));
    }

    #[test]
    fn push_row_masks_high_bits() {
        let mut p = PatternSet::new(3);
        p.push_row(&[0b1111_1010]);
        assert_eq!(p.row(0), &[0b010]);
    }

    #[test]
    fn sort_dedup_orders_and_removes_duplicates() {
        let mut p = PatternSet::new(8);
        p.push_index(9);
        p.push_index(3);
        p.push_index(9);
        p.push_index(1);
        p.sort_dedup();
        assert_eq!(p.len(), 3);
        assert_eq!(p.row(0), &[1]);
        assert_eq!(p.row(1), &[3]);
        assert_eq!(p.row(2), &[9]);
        assert!(p.contains_sorted(&[3]));
        assert!(!p.contains_sorted(&[4]));
    }

    #[test]
    fn row_string_is_input_order() {
        let mut p = PatternSet::new(4);
        p.push_bits(&[true, false, false, true]);
        assert_eq!(p.row_string(0), "1001");
    }
}
