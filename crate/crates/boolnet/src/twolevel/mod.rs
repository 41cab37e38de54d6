//! Two-level (sum-of-products) minimization of incompletely specified
//! functions.
//!
//! The minimizer expands each uncovered ON minterm into a prime cube against
//! the OFF set (don't-cares are free space by omission), then selects an
//! irredundant subset of the expanded cubes: essentials first, greedy
//! largest-remaining-coverage next, and a final prune of cubes whose
//! minterms are all covered at least twice.
//!
//! Everything hot is bit-parallel over minterm indices: the OFF and ON sets
//! are transposed once into per-input column bitvectors, and cube expansion
//! decides every literal with word-wide ANDs via running prefix/suffix
//! agreement products.

use crate::bits::{self, PatternSet};
use crate::extract::Isf;
use std::cmp::Reverse;
use std::collections::BinaryHeap;
use thiserror::Error;

pub mod exact;

/// Exhaustive don't-care enumeration in [`verify_cover`] is attempted up to
/// this arity (2^16 patterns).
pub const DC_ENUM_LIMIT: usize = 16;

/// ON sets up to this size expand every minterm into a candidate prime;
/// larger ones expand only minterms no earlier cube already covers.
pub const EXPAND_ALL_LIMIT: usize = 2048;

/// Rotated raise orders are tried while |ON|·arity stays below this, one
/// rotation per input; beyond it each seed expands once.
pub const ROTATION_WORK_LIMIT: usize = 16384;

/// Candidate-pool and row bounds under which the greedy selection is refined
/// by a budgeted branch-and-bound search for a smaller sub-cover.
const REFINE_POOL_LIMIT: usize = 1024;
const REFINE_ROWS_LIMIT: usize = 1024;
const REFINE_NODE_BUDGET: usize = 500_000;

/// Directed expansion abandons a seed after this many consecutive
/// infeasible merge attempts.
const DIRECTED_FAIL_LIMIT: usize = 32;

/// Up to this arity the small-instance path enumerates every prime that
/// contains an ON minterm (2^arity raise subsets per seed).
const FULL_PRIME_ARITY_LIMIT: usize = 8;

#[derive(Debug, Error)]
pub enum TwoLevelError {
    #[error("ON and OFF sets overlap at minterm {pattern}")]
    OnOffOverlap { pattern: String },
    #[error("cube {cube} covers OFF minterm {pattern}")]
    CubeCoversOff { cube: String, pattern: String },
    #[error("arity mismatch: {left} vs {right}")]
    ArityMismatch { left: usize, right: usize },
    #[error("cover misses ON minterm {pattern}")]
    UncoveredOn { pattern: String },
}

/// A product term: `mask` selects the inputs that appear as literals and
/// `value` gives their required levels. Bits of `value` outside `mask` are
/// always zero, so (mask, value) pairs compare and hash canonically.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Cube {
    arity: usize,
    mask: Vec<u64>,
    value: Vec<u64>,
}

impl Cube {
    /// The cube with no literals, covering every pattern.
    pub fn universal(arity: usize) -> Cube {
        let w = bits::words_for(arity);
        Cube { arity, mask: vec![0; w], value: vec![0; w] }
    }

    pub fn from_minterm(arity: usize, row: &[u64]) -> Cube {
        let w = bits::words_for(arity);
        assert_eq!(row.len(), w);
        let mut mask = vec![u64::MAX; w];
        mask[w - 1] = bits::last_word_mask(arity);
        let value: Vec<u64> = row.iter().zip(&mask).map(|(r, m)| r & m).collect();
        Cube { arity, mask, value }
    }

    pub fn from_literals(arity: usize, lits: &[(usize, bool)]) -> Cube {
        let mut c = Cube::universal(arity);
        for &(j, positive) in lits {
            assert!(j < arity);
            bits::set_bit(&mut c.mask, j, true);
            bits::set_bit(&mut c.value, j, positive);
        }
        c
    }

    /// Parses "01-" notation, position j = input j.
    pub fn from_pattern(pattern: &str) -> Option<Cube> {
        let mut c = Cube::universal(pattern.len());
        for (j, ch) in pattern.chars().enumerate() {
            match ch {
                '0' => bits::set_bit(&mut c.mask, j, true),
                '1' => {
                    bits::set_bit(&mut c.mask, j, true);
                    bits::set_bit(&mut c.value, j, true);
                }
                '-' => {}
                _ => return None,
            }
        }
        Some(c)
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn covers(&self, row: &[u64]) -> bool {
        self.mask.iter().zip(&self.value).zip(row).all(|((m, v), r)| r & m == *v)
    }

    /// True when every pattern of `other` is also covered by `self`.
    pub fn contains_cube(&self, other: &Cube) -> bool {
        self.mask.iter().zip(&self.value).zip(other.mask.iter().zip(&other.value)).all(
            |((m, v), (om, ov))| {
                // Every literal of self must appear in other with the same level.
                om & m == *m && ov & m == *v
            },
        )
    }

    pub fn literal_count(&self) -> usize {
        self.mask.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn literals(&self) -> impl Iterator<Item = (usize, bool)> + '_ {
        self.mask.iter().enumerate().flat_map(move |(w, &m)| {
            let value = self.value[w];
            let mut rest = m;
            std::iter::from_fn(move || {
                if rest == 0 {
                    return None;
                }
                let t = rest.trailing_zeros() as usize;
                rest &= rest - 1;
                Some((w * 64 + t, value >> t & 1 == 1))
            })
        })
    }

    pub fn pattern_string(&self) -> String {
        (0..self.arity)
            .map(|j| match (bits::get_bit(&self.mask, j), bits::get_bit(&self.value, j)) {
                (false, _) => '-',
                (true, false) => '0',
                (true, true) => '1',
            })
            .collect()
    }
}

/// Spec-level predicate: does cube `c` cover minterm `m`?
pub fn cube_covers_minterm(c: &Cube, m: &[u64]) -> bool {
    c.covers(m)
}

/// A disjunction of cubes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Cover {
    arity: usize,
    cubes: Vec<Cube>,
}

impl Cover {
    pub fn new(arity: usize) -> Cover {
        Cover { arity, cubes: Vec::new() }
    }

    pub fn from_cubes(arity: usize, cubes: Vec<Cube>) -> Result<Cover, TwoLevelError> {
        for c in &cubes {
            if c.arity() != arity {
                return Err(TwoLevelError::ArityMismatch { left: arity, right: c.arity() });
            }
        }
        Ok(Cover { arity, cubes })
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn cubes(&self) -> &[Cube] {
        &self.cubes
    }

    pub fn len(&self) -> usize {
        self.cubes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cubes.is_empty()
    }

    pub fn literal_count(&self) -> usize {
        self.cubes.iter().map(Cube::literal_count).sum()
    }

    pub fn eval(&self, row: &[u64]) -> bool {
        self.cubes.iter().any(|c| c.covers(row))
    }

    /// Canonical order: cubes sorted by (mask, value), duplicates dropped.
    /// Cover semantics are a set, so this never changes the function.
    pub fn normalize(&mut self) {
        self.cubes.sort_unstable();
        self.cubes.dedup();
    }
}

/// Pattern sets transposed to one bitvector per input: bit m of column j is
/// minterm m's value of input j.
pub struct ColumnIndex {
    arity: usize,
    rows: usize,
    words: usize,
    cols: Vec<u64>,
}

impl ColumnIndex {
    pub fn new(set: &PatternSet) -> ColumnIndex {
        let arity = set.arity();
        let rows = set.len();
        let words = rows.div_ceil(64).max(1);
        let mut cols = vec![0u64; arity * words];
        for m in 0..rows {
            for (w, &rw) in set.row(m).iter().enumerate() {
                let mut b = rw;
                while b != 0 {
                    let j = w * 64 + b.trailing_zeros() as usize;
                    cols[j * words + m / 64] |= 1 << (m % 64);
                    b &= b - 1;
                }
            }
        }
        ColumnIndex { arity, rows, words, cols }
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    fn col(&self, j: usize) -> &[u64] {
        &self.cols[j * self.words..(j + 1) * self.words]
    }

    /// All-ones over the row range, zero above it.
    fn ones(&self) -> Vec<u64> {
        let mut v = vec![u64::MAX; self.words];
        let tail = self.rows % 64;
        if self.rows == 0 {
            v[0] = 0;
        } else if tail != 0 {
            v[self.words - 1] = (1u64 << tail) - 1;
        }
        v
    }

    /// acc &= rows that agree with literal (j, positive). The accumulator
    /// starts masked to the row range, so complements need no re-masking.
    fn and_agree(&self, acc: &mut [u64], j: usize, positive: bool) {
        for (a, &c) in acc.iter_mut().zip(self.col(j)) {
            *a &= if positive { c } else { !c };
        }
    }

    fn row_pattern(&self, m: usize) -> String {
        (0..self.arity)
            .map(|j| if self.col(j)[m / 64] >> (m % 64) & 1 == 1 { '1' } else { '0' })
            .collect()
    }
}

fn any_set(v: &[u64]) -> bool {
    v.iter().any(|&w| w != 0)
}

fn first_set(v: &[u64]) -> Option<usize> {
    v.iter().enumerate().find(|(_, &w)| w != 0).map(|(i, w)| i * 64 + w.trailing_zeros() as usize)
}

fn popcount(v: &[u64]) -> u64 {
    v.iter().map(|w| w.count_ones() as u64).sum()
}

/// Rows of the indexed set covered by `cube`, as a bitvector in `out`.
pub fn cover_rows(cube: &Cube, cols: &ColumnIndex, out: &mut Vec<u64>) {
    out.clear();
    out.extend_from_slice(&cols.ones());
    for (j, positive) in cube.literals() {
        cols.and_agree(out, j, positive);
    }
}

/// Literal raising order during expansion.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum RaiseOrder {
    /// Ascending input index.
    #[default]
    Ascending,
    /// Inputs on which the most OFF minterms disagree first, ties ascending.
    WeightedConflicts,
}

#[derive(Clone, Debug, Default)]
pub struct MinimizeOptions {
    pub raise_order: RaiseOrder,
}

/// Grow-only expansion of `cube` against an OFF-set index.
///
/// Literals are visited in the configured order; a literal is raised
/// (dropped) unless some OFF minterm agrees with every other remaining
/// literal, in which case raising would cover it. Once illegal, a raise
/// stays illegal — removing literals only grows the cube — so a second
/// identical pass confirms primality without changing the result.
pub fn expand(cube: &Cube, off: &ColumnIndex) -> Result<Cube, TwoLevelError> {
    expand_with(cube, off, RaiseOrder::Ascending)
}

pub fn expand_with(
    cube: &Cube,
    off: &ColumnIndex,
    order: RaiseOrder,
) -> Result<Cube, TwoLevelError> {
    expand_rotated(cube, off, order, 0)
}

/// Like [`expand_with`] but starts the literal tour `rotation` positions in
/// (wrapping around). Different starting points reach different primes from
/// the same seed, which widens the candidate pool on small problems.
pub fn expand_rotated(
    cube: &Cube,
    off: &ColumnIndex,
    order: RaiseOrder,
    rotation: usize,
) -> Result<Cube, TwoLevelError> {
    if cube.arity() != off.arity() {
        return Err(TwoLevelError::ArityMismatch { left: cube.arity(), right: off.arity() });
    }
    let words = off.words;
    let mut lits: Vec<(usize, bool)> = cube.literals().collect();
    if let RaiseOrder::WeightedConflicts = order {
        let mut weighted: Vec<(u64, usize, bool)> = lits
            .iter()
            .map(|&(j, positive)| {
                let col = off.col(j);
                let ones = popcount(col);
                let disagree = if positive { off.rows as u64 - ones } else { ones };
                (disagree, j, positive)
            })
            .collect();
        weighted.sort_unstable_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        lits = weighted.into_iter().map(|(_, j, p)| (j, p)).collect();
    }
    if !lits.is_empty() {
        let r = rotation % lits.len();
        lits.rotate_left(r);
    }

    // suffix[i] = OFF rows agreeing with every literal from position i on.
    let mut suffix: Vec<u64> = Vec::new();
    let mut left = off.ones();
    for pass in 0..2 {
        suffix.resize((lits.len() + 1) * words, 0);
        suffix[lits.len() * words..].copy_from_slice(&off.ones());
        for i in (0..lits.len()).rev() {
            let (lo, hi) = (i * words, (i + 1) * words);
            let (dst, src) = suffix.split_at_mut(hi);
            dst[lo..hi].copy_from_slice(&src[..words]);
            let (j, positive) = lits[i];
            off.and_agree(&mut dst[lo..hi], j, positive);
        }
        if pass == 0 {
            // Precondition: the cube itself must be disjoint from OFF.
            if let Some(m) = first_set(&suffix[..words]) {
                return Err(TwoLevelError::CubeCoversOff {
                    cube: cube.pattern_string(),
                    pattern: off.row_pattern(m),
                });
            }
        }
        left.copy_from_slice(&off.ones());
        let mut kept: Vec<(usize, bool)> = Vec::with_capacity(lits.len());
        for (i, &(j, positive)) in lits.iter().enumerate() {
            // OFF rows agreeing with every remaining literal except this one:
            // raising it would cover them.
            let blocked = left
                .iter()
                .zip(&suffix[(i + 1) * words..(i + 2) * words])
                .any(|(l, s)| l & s != 0);
            if blocked {
                kept.push((j, positive));
                off.and_agree(&mut left, j, positive);
            }
        }
        lits = kept;
    }
    Ok(Cube::from_literals(cube.arity(), &lits))
}

/// Directed expansion for large ISFs: starting from an ON minterm, merge
/// other ON minterms into the cube nearest-first — dropping exactly the
/// literals they disagree on — whenever the grown cube stays disjoint from
/// the OFF set, then raise whatever remains to reach a prime. Aiming the
/// expansion at recorded ON minterms points the don't-care resolution at
/// the regions the data actually occupies, which both shrinks covers and
/// keeps them sensible on patterns near, but not in, the recorded set.
fn expand_toward_on(
    seed_idx: usize,
    on: &PatternSet,
    off: &ColumnIndex,
    buckets: &mut Vec<Vec<u32>>,
    finish_order: RaiseOrder,
) -> Result<Cube, TwoLevelError> {
    let arity = on.arity();
    let words = bits::words_for(arity);
    let seed = on.row(seed_idx);
    let mut mask = vec![u64::MAX; words];
    mask[words - 1] = bits::last_word_mask(arity);

    // Candidates nearest-first; a counting sort keeps this linear and
    // deterministic (ascending row index within each distance).
    buckets.resize(arity + 1, Vec::new());
    for b in buckets.iter_mut() {
        b.clear();
    }
    for i in 0..on.len() {
        if i == seed_idx {
            continue;
        }
        let d: u32 = on.row(i).iter().zip(seed).map(|(r, s)| (r ^ s).count_ones()).sum();
        if d > 0 {
            buckets[d as usize].push(i as u32);
        }
    }

    let ones = off.ones();
    let mut agree = vec![0u64; ones.len()];
    let mut fails = 0usize;
    'merge: for bucket in buckets.iter() {
        for &cand in bucket {
            if fails >= DIRECTED_FAIL_LIMIT {
                break 'merge;
            }
            let row = on.row(cand as usize);
            if (0..words).all(|w| (row[w] ^ seed[w]) & mask[w] == 0) {
                continue; // already inside the cube
            }
            // Trial cube: raise the literals the candidate disagrees on.
            // Legal when no OFF row agrees with every literal that remains.
            agree.copy_from_slice(&ones);
            let mut legal = false;
            let mut checked = 0usize;
            for j in 0..arity {
                let w = j / 64;
                let bit = 1u64 << (j % 64);
                if mask[w] & bit != 0 && (row[w] ^ seed[w]) & bit == 0 {
                    off.and_agree(&mut agree, j, seed[w] & bit != 0);
                    checked += 1;
                    if checked % 8 == 0 && !any_set(&agree) {
                        legal = true;
                        break;
                    }
                }
            }
            legal = legal || !any_set(&agree);
            if legal {
                for w in 0..words {
                    mask[w] &= !(row[w] ^ seed[w]);
                }
                fails = 0;
            } else {
                fails += 1;
            }
        }
    }

    let lits: Vec<(usize, bool)> = (0..arity)
        .filter(|&j| bits::get_bit(&mask, j))
        .map(|j| (j, bits::get_bit(seed, j)))
        .collect();
    expand_with(&Cube::from_literals(arity, &lits), off, finish_order)
}

/// Reduces `cubes` to an irredundant subset still covering every row of the
/// ON index: essential cubes (sole cover of some row), then greedy selection
/// by most uncovered rows (ties to the lower candidate index), then a prune
/// dropping any cube whose rows are all covered twice over.
fn select_irredundant(cubes: &[Cube], on: &ColumnIndex) -> Vec<Cube> {
    let words = on.words;
    let mut buf: Vec<u64> = Vec::with_capacity(words);
    let mut counts = vec![0u32; on.rows];
    let add_counts = |counts: &mut [u32], bitsv: &[u64], delta: i64| {
        for (w, &b) in bitsv.iter().enumerate() {
            let mut b = b;
            while b != 0 {
                let m = w * 64 + b.trailing_zeros() as usize;
                counts[m] = (counts[m] as i64 + delta) as u32;
                b &= b - 1;
            }
        }
    };
    for cube in cubes {
        cover_rows(cube, on, &mut buf);
        add_counts(&mut counts, &buf, 1);
    }

    let mut selected = vec![false; cubes.len()];
    let mut uncovered = on.ones();
    for (i, cube) in cubes.iter().enumerate() {
        cover_rows(cube, on, &mut buf);
        let essential = buf.iter().enumerate().any(|(w, &b)| {
            let mut b = b;
            while b != 0 {
                let m = w * 64 + b.trailing_zeros() as usize;
                if counts[m] == 1 {
                    return true;
                }
                b &= b - 1;
            }
            false
        });
        if essential {
            selected[i] = true;
            for (u, &b) in uncovered.iter_mut().zip(&buf) {
                *u &= !b;
            }
        }
    }

    // Greedy with a lazy max-heap: stored gains only ever overestimate, so an
    // entry whose recomputed gain still beats the next key is the true max.
    let mut heap: BinaryHeap<(u64, Reverse<usize>)> = BinaryHeap::new();
    for (i, cube) in cubes.iter().enumerate() {
        if selected[i] {
            continue;
        }
        cover_rows(cube, on, &mut buf);
        let gain = buf.iter().zip(&uncovered).map(|(b, u)| (b & u).count_ones() as u64).sum();
        if gain > 0 {
            heap.push((gain, Reverse(i)));
        }
    }
    while any_set(&uncovered) {
        let Some((_, Reverse(i))) = heap.pop() else {
            break;
        };
        cover_rows(&cubes[i], on, &mut buf);
        let gain: u64 = buf.iter().zip(&uncovered).map(|(b, u)| (b & u).count_ones() as u64).sum();
        if gain == 0 {
            continue;
        }
        if heap.peek().is_none_or(|&(top, _)| gain >= top) {
            selected[i] = true;
            for (u, &b) in uncovered.iter_mut().zip(&buf) {
                *u &= !b;
            }
        } else {
            heap.push((gain, Reverse(i)));
        }
    }

    counts.fill(0);
    for (i, cube) in cubes.iter().enumerate() {
        if selected[i] {
            cover_rows(cube, on, &mut buf);
            add_counts(&mut counts, &buf, 1);
        }
    }
    for (i, cube) in cubes.iter().enumerate() {
        if !selected[i] {
            continue;
        }
        cover_rows(cube, on, &mut buf);
        let removable = buf.iter().enumerate().all(|(w, &b)| {
            let mut b = b;
            while b != 0 {
                let m = w * 64 + b.trailing_zeros() as usize;
                if counts[m] < 2 {
                    return false;
                }
                b &= b - 1;
            }
            true
        });
        if removable {
            selected[i] = false;
            add_counts(&mut counts, &buf, -1);
        }
    }

    cubes.iter().zip(&selected).filter(|(_, &s)| s).map(|(c, _)| c.clone()).collect()
}

/// Every prime implicant of the ISF containing at least one ON minterm.
/// Feasibility of a raise set is monotone downward (raising more literals
/// only grows the cube), so primes are the maximal feasible raise subsets
/// of each seed. Brute force over 2^arity subsets per seed.
fn all_primes(on: &PatternSet, off: &ColumnIndex) -> Vec<Cube> {
    let arity = on.arity();
    let mut seen: std::collections::HashSet<Cube> = std::collections::HashSet::new();
    let mut out: Vec<Cube> = Vec::new();
    let mut covered = vec![0u64; off.words];
    let mut feasible = vec![false; 1usize << arity];
    for i in 0..on.len() {
        let lits: Vec<(usize, bool)> =
            (0..arity).map(|j| (j, bits::get_bit(on.row(i), j))).collect();
        for raise in 0..1usize << arity {
            covered.copy_from_slice(&off.ones());
            for &(j, positive) in lits.iter().filter(|&&(j, _)| raise >> j & 1 == 0) {
                off.and_agree(&mut covered, j, positive);
            }
            feasible[raise] = !any_set(&covered);
        }
        for raise in 0..1usize << arity {
            if !feasible[raise] {
                continue;
            }
            let maximal =
                (0..arity).all(|j| raise >> j & 1 == 1 || !feasible[raise | 1 << j]);
            if maximal {
                let kept: Vec<(usize, bool)> =
                    lits.iter().copied().filter(|&(j, _)| raise >> j & 1 == 0).collect();
                let cube = Cube::from_literals(arity, &kept);
                if seen.insert(cube.clone()) {
                    out.push(cube);
                }
            }
        }
    }
    out
}

/// Searches the candidate pool for a smaller sub-cover than the incumbent:
/// essential and dominance reduction down to the cyclic core, then
/// branch-and-bound on the most-constrained row within a fixed node budget.
/// Falls back to the incumbent when nothing smaller is proven in budget.
fn refine_selection(cubes: &[Cube], on: &ColumnIndex, incumbent: Vec<Cube>) -> Vec<Cube> {
    let words = on.words;
    let mut sets: Vec<Vec<u64>> = Vec::with_capacity(cubes.len());
    let mut buf = Vec::new();
    for cube in cubes {
        cover_rows(cube, on, &mut buf);
        sets.push(buf.clone());
    }

    let mut alive = vec![true; cubes.len()];
    let mut uncovered = on.ones();
    let mut forced: Vec<usize> = Vec::new();
    let covering = |sets: &[Vec<u64>], alive: &[bool], m: usize| -> Vec<usize> {
        sets.iter()
            .enumerate()
            .filter(|(ci, s)| alive[*ci] && s[m / 64] >> (m % 64) & 1 == 1)
            .map(|(ci, _)| ci)
            .collect()
    };
    loop {
        let mut changed = false;
        // Essential cubes: sole cover of some still-uncovered row.
        for m in 0..on.rows {
            if uncovered[m / 64] >> (m % 64) & 1 == 0 {
                continue;
            }
            let cands = covering(&sets, &alive, m);
            if cands.len() == 1 {
                let ci = cands[0];
                forced.push(ci);
                alive[ci] = false;
                for (u, &s) in uncovered.iter_mut().zip(&sets[ci]) {
                    *u &= !s;
                }
                changed = true;
            }
        }
        // Dominated cubes: remaining coverage contained in another's.
        for i in 0..cubes.len() {
            if !alive[i] {
                continue;
            }
            let ri: Vec<u64> = sets[i].iter().zip(&uncovered).map(|(s, u)| s & u).collect();
            if !any_set(&ri) {
                alive[i] = false;
                changed = true;
                continue;
            }
            for j in 0..cubes.len() {
                if i == j || !alive[j] {
                    continue;
                }
                let dominated = (0..words).all(|w| ri[w] & !(sets[j][w] & uncovered[w]) == 0);
                let strictly = (0..words)
                    .any(|w| sets[j][w] & uncovered[w] & !ri[w] != 0);
                if dominated && (strictly || j < i) {
                    alive[i] = false;
                    changed = true;
                    break;
                }
            }
        }
        if !changed {
            break;
        }
    }

    if !any_set(&uncovered) {
        return if forced.len() < incumbent.len() {
            forced.iter().map(|&ci| cubes[ci].clone()).collect()
        } else {
            incumbent
        };
    }

    struct Search<'a> {
        sets: &'a [Vec<u64>],
        by_row: &'a [Vec<usize>],
        max_cover: u64,
        best_size: usize,
        best: Option<Vec<usize>>,
        nodes: usize,
    }
    impl Search<'_> {
        fn run(&mut self, uncovered: &[u64], chosen: &mut Vec<usize>) {
            if self.nodes >= REFINE_NODE_BUDGET {
                return;
            }
            self.nodes += 1;
            let remaining = popcount(uncovered);
            if remaining == 0 {
                if chosen.len() < self.best_size {
                    self.best_size = chosen.len();
                    self.best = Some(chosen.clone());
                }
                return;
            }
            let lower = remaining.div_ceil(self.max_cover) as usize;
            if chosen.len() + lower >= self.best_size {
                return;
            }
            // Branch on the uncovered row with the fewest candidate cubes.
            let mut row = usize::MAX;
            let mut fewest = usize::MAX;
            for (w, &u) in uncovered.iter().enumerate() {
                let mut u = u;
                while u != 0 {
                    let m = w * 64 + u.trailing_zeros() as usize;
                    u &= u - 1;
                    let k = self.by_row[m].len();
                    if k < fewest {
                        fewest = k;
                        row = m;
                    }
                }
            }
            if row == usize::MAX {
                return;
            }
            for &ci in &self.by_row[row] {
                let next: Vec<u64> =
                    uncovered.iter().zip(&self.sets[ci]).map(|(u, s)| u & !s).collect();
                chosen.push(ci);
                self.run(&next, chosen);
                chosen.pop();
            }
        }
    }
    let mut by_row: Vec<Vec<usize>> = vec![Vec::new(); on.rows];
    for (m, row) in by_row.iter_mut().enumerate() {
        if uncovered[m / 64] >> (m % 64) & 1 == 1 {
            *row = covering(&sets, &alive, m);
            // Larger remaining coverage first finds tight incumbents sooner.
            row.sort_by_key(|&ci| {
                Reverse(sets[ci].iter().zip(&uncovered).map(|(s, u)| (s & u).count_ones()).sum::<u32>())
            });
        }
    }
    let max_cover = sets
        .iter()
        .enumerate()
        .filter(|(ci, _)| alive[*ci])
        .map(|(_, s)| s.iter().zip(&uncovered).map(|(a, b)| (a & b).count_ones() as u64).sum())
        .max()
        .unwrap_or(1)
        .max(1);
    let budget = incumbent.len().saturating_sub(forced.len());
    let mut search = Search {
        sets: &sets,
        by_row: &by_row,
        max_cover,
        best_size: budget,
        best: None,
        nodes: 0,
    };
    search.run(&uncovered, &mut Vec::new());
    match search.best {
        Some(chosen) => forced.iter().chain(&chosen).map(|&ci| cubes[ci].clone()).collect(),
        None => incumbent,
    }
}

/// Removes redundant cubes from a cover that already covers every ON row.
pub fn irredundant(cover: &Cover, on: &PatternSet) -> Result<Cover, TwoLevelError> {
    if cover.arity() != on.arity() {
        return Err(TwoLevelError::ArityMismatch { left: cover.arity(), right: on.arity() });
    }
    let on_cols = ColumnIndex::new(on);
    let mut covered = vec![0u64; on_cols.words];
    let mut buf = Vec::new();
    for cube in cover.cubes() {
        cover_rows(cube, &on_cols, &mut buf);
        for (c, &b) in covered.iter_mut().zip(&buf) {
            *c |= b;
        }
    }
    let all = on_cols.ones();
    if let Some(m) =
        first_set(&covered.iter().zip(&all).map(|(c, a)| !c & a).collect::<Vec<_>>())
    {
        return Err(TwoLevelError::UncoveredOn { pattern: on.row_string(m) });
    }
    let mut out = Cover::from_cubes(cover.arity(), select_irredundant(cover.cubes(), &on_cols))?;
    out.normalize();
    Ok(out)
}

/// Minimizes an ISF into a prime, irredundant cover: ON covered, OFF
/// untouched, don't-cares free. Deterministic for a given input.
pub fn minimize(isf: &Isf) -> Result<Cover, TwoLevelError> {
    minimize_with(isf, &MinimizeOptions::default())
}

pub fn minimize_with(isf: &Isf, opts: &MinimizeOptions) -> Result<Cover, TwoLevelError> {
    let arity = isf.arity();
    let on = isf.on();
    let off = isf.off();
    // The ISF constructor keeps the sets disjoint; re-verify cheaply anyway.
    {
        let (mut i, mut j) = (0, 0);
        while i < on.len() && j < off.len() {
            match on.row(i).cmp(off.row(j)) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    return Err(TwoLevelError::OnOffOverlap { pattern: on.row_string(i) });
                }
            }
        }
    }
    if on.is_empty() {
        return Ok(Cover::new(arity));
    }
    let off_cols = ColumnIndex::new(off);
    let on_cols = ColumnIndex::new(on);
    // Candidate pool, smallest problems to largest: tiny arities take every
    // prime touching the ON set; small ON sets expand every minterm under
    // rotated raise orders; at scale each still-uncovered minterm grows by
    // directed expansion toward its nearest ON neighbors, keeping the
    // expansion count near the final cube count. All paths are
    // deterministic.
    let expand_all = on.len() <= EXPAND_ALL_LIMIT;
    let mut expanded: Vec<Cube> = Vec::new();
    if expand_all && arity <= FULL_PRIME_ARITY_LIMIT {
        expanded = all_primes(on, &off_cols);
    } else if expand_all {
        let rotations =
            if on.len().saturating_mul(arity) <= ROTATION_WORK_LIMIT { arity.max(1) } else { 1 };
        // Many seeds can expand to one prime; dedup the pool.
        let mut seen: std::collections::HashSet<Cube> = std::collections::HashSet::new();
        for i in 0..on.len() {
            let seed = Cube::from_minterm(arity, on.row(i));
            for rot in 0..rotations {
                let cube = expand_rotated(&seed, &off_cols, opts.raise_order, rot)?;
                if seen.insert(cube.clone()) {
                    expanded.push(cube);
                }
            }
        }
    } else {
        let mut covered = vec![0u64; on_cols.words];
        let mut buf = Vec::new();
        let mut buckets: Vec<Vec<u32>> = Vec::new();
        for i in 0..on.len() {
            if covered[i / 64] >> (i % 64) & 1 == 1 {
                continue;
            }
            let cube = expand_toward_on(i, on, &off_cols, &mut buckets, opts.raise_order)?;
            cover_rows(&cube, &on_cols, &mut buf);
            debug_assert!(buf[i / 64] >> (i % 64) & 1 == 1, "expanded cube lost its seed");
            for (c, &b) in covered.iter_mut().zip(&buf) {
                *c |= b;
            }
            expanded.push(cube);
        }
    }
    let mut selected = select_irredundant(&expanded, &on_cols);
    if expanded.len() <= REFINE_POOL_LIMIT && on.len() <= REFINE_ROWS_LIMIT {
        selected = refine_selection(&expanded, &on_cols, selected);
    }
    let mut cover = Cover::from_cubes(arity, selected)?;
    cover.normalize();
    Ok(cover)
}

/// Don't-care statistics from [`verify_cover`] when the domain is small
/// enough to enumerate.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DcStats {
    pub total: u64,
    pub covered: u64,
}

/// Independent check of a cover against an ISF.
#[derive(Clone, Debug)]
pub struct CoverReport {
    pub on_total: usize,
    pub on_covered: usize,
    pub off_total: usize,
    pub off_covered: usize,
    /// Up to eight ON minterms the cover misses.
    pub missed_on: Vec<String>,
    /// Up to eight OFF minterms the cover wrongly includes.
    pub covered_off: Vec<String>,
    pub dc: Option<DcStats>,
}

impl CoverReport {
    pub fn is_valid(&self) -> bool {
        self.on_covered == self.on_total && self.off_covered == 0
    }
}

pub fn verify_cover(cover: &Cover, isf: &Isf) -> Result<CoverReport, TwoLevelError> {
    if cover.arity() != isf.arity() {
        return Err(TwoLevelError::ArityMismatch { left: cover.arity(), right: isf.arity() });
    }
    let tally = |set: &PatternSet| {
        let cols = ColumnIndex::new(set);
        let mut covered = vec![0u64; cols.words];
        let mut b = Vec::new();
        for cube in cover.cubes() {
            cover_rows(cube, &cols, &mut b);
            for (c, &x) in covered.iter_mut().zip(&b) {
                *c |= x;
            }
        }
        covered
    };
    let on_bits = tally(isf.on());
    let off_bits = tally(isf.off());
    let mut missed_on = Vec::new();
    for i in 0..isf.on().len() {
        if on_bits[i / 64] >> (i % 64) & 1 == 0 {
            if missed_on.len() < 8 {
                missed_on.push(isf.on().row_string(i));
            }
        }
    }
    let mut covered_off = Vec::new();
    let mut off_covered = 0usize;
    for i in 0..isf.off().len() {
        if off_bits[i / 64] >> (i % 64) & 1 == 1 {
            off_covered += 1;
            if covered_off.len() < 8 {
                covered_off.push(isf.off().row_string(i));
            }
        }
    }
    let on_covered = popcount(&on_bits) as usize;
    let dc = if isf.arity() <= DC_ENUM_LIMIT {
        let mut total = 0u64;
        let mut covered = 0u64;
        let mut row = vec![0u64; bits::words_for(isf.arity())];
        for idx in 0..1usize << isf.arity() {
            crate::extract::row_for_tt_index(idx, isf.arity(), &mut row);
            if isf.classify(&row).is_none() {
                total += 1;
                if cover.eval(&row) {
                    covered += 1;
                }
            }
        }
        Some(DcStats { total, covered })
    } else {
        None
    };
    Ok(CoverReport {
        on_total: isf.on().len(),
        on_covered,
        off_total: isf.off().len(),
        off_covered,
        missed_on,
        covered_off,
        dc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extract::TruthTable;

    /// f over (a0,a1,a2): ON at indices 1,4,5,7 of the truth table
    /// (index = a0 a1 a2 read as binary, a0 most significant).
    fn sample_tt() -> TruthTable {
        let mut tt = TruthTable::new(3);
        for idx in [1, 4, 5, 7] {
            tt.set(idx, true);
        }
        tt
    }

    #[test]
    fn minimizes_sample_function_to_three_cubes() {
        let isf = Isf::from_truth_table(&sample_tt());
        let cover = minimize(&isf).unwrap();
        let mut got: Vec<String> = cover.cubes().iter().map(Cube::pattern_string).collect();
        got.sort();
        assert_eq!(got, vec!["-01", "1-1", "10-"]);
        let report = verify_cover(&cover, &isf).unwrap();
        assert!(report.is_valid());
        assert_eq!(report.dc, Some(DcStats { total: 0, covered: 0 }));
    }

    #[test]
    fn empty_on_set_gives_empty_cover() {
        let mut off = PatternSet::new(4);
        off.push_index(3);
        let isf = Isf::from_sets(PatternSet::new(4), off).unwrap();
        let cover = minimize(&isf).unwrap();
        assert!(cover.is_empty());
        assert!(!cover.eval(&[3]));
    }

    #[test]
    fn empty_off_set_gives_universal_cube() {
        let mut on = PatternSet::new(70);
        on.push_bits(&vec![true; 70]);
        let isf = Isf::from_sets(on, PatternSet::new(70)).unwrap();
        let cover = minimize(&isf).unwrap();
        assert_eq!(cover.len(), 1);
        assert_eq!(cover.cubes()[0].literal_count(), 0);
        assert!(cover.eval(&vec![0u64; 2]));
    }

    #[test]
    fn expand_rejects_cube_touching_off() {
        let mut off = PatternSet::new(3);
        off.push_index(0b011);
        let cols = ColumnIndex::new(&off);
        let cube = Cube::from_pattern("11-").unwrap();
        match expand(&cube, &cols) {
            Err(TwoLevelError::CubeCoversOff { cube, pattern }) => {
                assert_eq!(cube, "11-");
                assert_eq!(pattern, "110");
            }
            other => panic!("expected CubeCoversOff, got {other:?}"),
        }
    }

    #[test]
    fn expanded_cubes_are_prime() {
        // Against a random OFF set, no literal of an expanded cube can be
        // dropped without covering an OFF minterm.
        let mut on = PatternSet::new(7);
        let mut off = PatternSet::new(7);
        let mut state = 0x2545f4914f6cdd1du64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            state
        };
        for idx in 0..128u64 {
            match next() % 3 {
                0 => on.push_index(idx),
                1 => off.push_index(idx),
                _ => {}
            }
        }
        let isf = Isf::from_sets(on, off).unwrap();
        let cover = minimize(&isf).unwrap();
        let report = verify_cover(&cover, &isf).unwrap();
        assert!(report.is_valid(), "{report:?}");
        for cube in cover.cubes() {
            for (j, _) in cube.literals() {
                let mut weaker: Vec<(usize, bool)> =
                    cube.literals().filter(|&(k, _)| k != j).collect();
                let raised = Cube::from_literals(7, &weaker);
                weaker.clear();
                let hits_off = isf.off().iter().any(|row| raised.covers(row));
                assert!(hits_off, "literal {j} of {} is removable", cube.pattern_string());
            }
        }
    }

    #[test]
    fn irredundant_drops_contained_cube() {
        let mut on = PatternSet::new(3);
        for idx in [0b100u64, 0b101, 0b110, 0b111] {
            on.push_index(idx);
        }
        let cover = Cover::from_cubes(
            3,
            vec![Cube::from_pattern("--1").unwrap(), Cube::from_pattern("-11").unwrap()],
        )
        .unwrap();
        let slim = irredundant(&cover, &on).unwrap();
        assert_eq!(slim.len(), 1);
        assert_eq!(slim.cubes()[0].pattern_string(), "--1");
    }

    #[test]
    fn irredundant_requires_on_coverage() {
        let mut on = PatternSet::new(3);
        on.push_index(0b000);
        let cover =
            Cover::from_cubes(3, vec![Cube::from_pattern("1--").unwrap()]).unwrap();
        match irredundant(&cover, &on) {
            Err(TwoLevelError::UncoveredOn { pattern }) => assert_eq!(pattern, "000"),
            other => panic!("expected UncoveredOn, got {other:?}"),
        }
    }

    #[test]
    fn minimize_is_deterministic() {
        let mut on = PatternSet::new(9);
        let mut off = PatternSet::new(9);
        for idx in 0..512u64 {
            match idx.wrapping_mul(0x9e3779b97f4a7c15) >> 61 {
                0 | 1 => on.push_index(idx),
                2 | 3 | 4 => off.push_index(idx),
                _ => {}
            }
        }
        let isf = Isf::from_sets(on, off).unwrap();
        let a = minimize(&isf).unwrap();
        let b = minimize(&isf).unwrap();
        assert_eq!(a, b);
        let w = minimize_with(&isf, &MinimizeOptions { raise_order: RaiseOrder::WeightedConflicts })
            .unwrap();
        assert!(verify_cover(&w, &isf).unwrap().is_valid());
    }

    #[test]
    fn cube_pattern_round_trip() {
        let c = Cube::from_pattern("1-0-1").unwrap();
        assert_eq!(c.pattern_string(), "1-0-1");
        assert_eq!(c.literal_count(), 3);
        assert!(c.covers(&[0b10001]));
        assert!(c.covers(&[0b11001]));
        assert!(!c.covers(&[0b10101]));
        assert!(Cube::universal(5).contains_cube(&c));
        assert!(!c.contains_cube(&Cube::universal(5)));
    }
}
