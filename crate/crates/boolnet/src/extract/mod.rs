//! Extraction of Boolean functions from trained layers.
//!
//! A linear unit followed by batch normalization and a sign activation is a
//! threshold function of its binary inputs. This module folds the batch-norm
//! parameters into a single threshold comparison, enumerates complete truth
//! tables for small fan-in, and collects incompletely specified functions
//! (ON/OFF sets, don't-care elsewhere) from recorded activations for large
//! fan-in.

use crate::bits::{self, PatternSet};
use crate::nn::{BatchNormParams, Tensor};
use thiserror::Error;

pub mod pla;

/// Largest fan-in for which complete truth-table enumeration is attempted
/// by default (2^20 rows).
pub const N_ENUM_MAX: usize = 20;

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error("fan-in {arity} exceeds enumeration limit {max}")]
    ArityTooLarge { arity: usize, max: usize },
    #[error("activation at row {row}, column {col} is {value}, not ±1")]
    NonBinaryActivation { row: usize, col: usize, value: f32 },
    #[error("batch-norm parameters for unit {unit} are not finite")]
    NonFiniteParams { unit: usize },
    #[error("pattern {pattern} recorded as both ON and OFF")]
    OnOffConflict { pattern: String },
    #[error("arity mismatch: {left} vs {right}")]
    ArityMismatch { left: usize, right: usize },
    #[error("{got} output bits recorded for {want} input rows")]
    LengthMismatch { got: usize, want: usize },
}

/// Encoding of the two binary activation levels as real inputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputAlgebra {
    /// bit 1 -> +1.0, bit 0 -> -1.0 (the network's activation levels).
    PlusMinusOne,
    /// bit 1 -> 1.0, bit 0 -> 0.0.
    ZeroOne,
}

/// A linear unit reduced to `polarity * (w·a - threshold) >= 0`.
///
/// The weighted sum is accumulated in f32 in ascending input order — the
/// same order the dense kernel uses — so the folded neuron reproduces the
/// network's arithmetic bit for bit; the final comparison runs in f64.
#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdNeuron {
    pub weights: Vec<f32>,
    pub threshold: f64,
    pub polarity: i8,
}

impl ThresholdNeuron {
    pub fn new(weights: Vec<f32>, threshold: f64, polarity: i8) -> Self {
        assert!(polarity == 1 || polarity == -1, "polarity must be ±1");
        ThresholdNeuron { weights, threshold, polarity }
    }

    pub fn arity(&self) -> usize {
        self.weights.len()
    }

    /// Evaluates the neuron on a bit-packed input pattern.
    pub fn eval_bits(&self, row: &[u64], algebra: InputAlgebra) -> bool {
        let mut s = 0f32;
        for (j, &w) in self.weights.iter().enumerate() {
            let bit = bits::get_bit(row, j);
            match algebra {
                InputAlgebra::PlusMinusOne => s += if bit { w } else { -w },
                InputAlgebra::ZeroOne => {
                    if bit {
                        s += w;
                    }
                }
            }
        }
        let lhs = s as f64 - self.threshold;
        if self.polarity >= 0 {
            lhs >= 0.0
        } else {
            lhs <= 0.0
        }
    }
}

/// Result of folding batch normalization into a linear unit.
#[derive(Clone, Debug, PartialEq)]
pub enum FoldedNeuron {
    Threshold(ThresholdNeuron),
    /// gamma == 0 freezes the unit: the output is sign(beta) regardless of input.
    Constant(bool),
}

/// Folds unit `unit` of a batch-norm layer into the preceding linear unit.
///
/// With s = w·a, the activation is sign(gamma·(s-mean)/sqrt(var+eps) + beta),
/// which equals `polarity·(s - threshold) >= 0` for
/// `threshold = mean - beta·sqrt(var+eps)/gamma` and `polarity = sign(gamma)`.
/// All folding arithmetic runs in f64.
pub fn fold_batchnorm(
    weights: &[f32],
    bn: &BatchNormParams,
    unit: usize,
) -> Result<FoldedNeuron, ExtractError> {
    let gamma = bn.gamma[unit] as f64;
    let beta = bn.beta[unit] as f64;
    let mean = bn.running_mean[unit] as f64;
    let var = bn.running_var[unit] as f64;
    let finite = gamma.is_finite() && beta.is_finite() && mean.is_finite() && var.is_finite();
    if !finite || var < 0.0 {
        return Err(ExtractError::NonFiniteParams { unit });
    }
    if gamma == 0.0 {
        return Ok(FoldedNeuron::Constant(beta >= 0.0));
    }
    let sd = (var + bn.epsilon as f64).sqrt();
    let threshold = mean - beta * sd / gamma;
    if !threshold.is_finite() {
        return Err(ExtractError::NonFiniteParams { unit });
    }
    let polarity = if gamma > 0.0 { 1 } else { -1 };
    Ok(FoldedNeuron::Threshold(ThresholdNeuron::new(weights.to_vec(), threshold, polarity)))
}

/// Complete truth table over `arity` inputs. The row index is the input
/// pattern read as a binary number with input 0 as the most significant bit.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TruthTable {
    arity: usize,
    words: Vec<u64>,
}

/// Truth-table row index of a packed pattern (input 0 most significant).
pub fn tt_index(row: &[u64], arity: usize) -> usize {
    let mut idx = 0usize;
    for j in 0..arity {
        idx = idx << 1 | bits::get_bit(row, j) as usize;
    }
    idx
}

/// Inverse of [`tt_index`]: writes the pattern for `idx` into `row`.
pub fn row_for_tt_index(idx: usize, arity: usize, row: &mut [u64]) {
    row.iter_mut().for_each(|w| *w = 0);
    for j in 0..arity {
        if idx >> (arity - 1 - j) & 1 == 1 {
            bits::set_bit(row, j, true);
        }
    }
}

impl TruthTable {
    pub fn new(arity: usize) -> Self {
        assert!(arity <= 26, "truth table arity {arity} too large to materialize");
        TruthTable { arity, words: vec![0; (1usize << arity).div_ceil(64)] }
    }

    /// Builds a table by evaluating `f` on every packed input pattern.
    pub fn from_fn(arity: usize, mut f: impl FnMut(&[u64]) -> bool) -> Self {
        let mut tt = TruthTable::new(arity);
        let mut row = vec![0u64; bits::words_for(arity)];
        for idx in 0..1usize << arity {
            row_for_tt_index(idx, arity, &mut row);
            if f(&row) {
                tt.set(idx, true);
            }
        }
        tt
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn num_rows(&self) -> usize {
        1 << self.arity
    }

    pub fn get(&self, idx: usize) -> bool {
        self.words[idx / 64] >> (idx % 64) & 1 == 1
    }

    pub fn set(&mut self, idx: usize, value: bool) {
        if value {
            self.words[idx / 64] |= 1 << (idx % 64);
        } else {
            self.words[idx / 64] &= !(1 << (idx % 64));
        }
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }
}

/// Enumerates the complete truth table of a folded neuron.
pub fn enumerate_truth_table(
    neuron: &ThresholdNeuron,
    algebra: InputAlgebra,
    max_arity: usize,
) -> Result<TruthTable, ExtractError> {
    let arity = neuron.arity();
    if arity > max_arity {
        return Err(ExtractError::ArityTooLarge { arity, max: max_arity });
    }
    Ok(TruthTable::from_fn(arity, |row| neuron.eval_bits(row, algebra)))
}

/// An incompletely specified function: explicit ON and OFF minterm sets,
/// every other pattern a don't-care. Both sets are kept sorted, deduplicated,
/// and disjoint.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Isf {
    arity: usize,
    on: PatternSet,
    off: PatternSet,
}

impl Isf {
    pub fn from_sets(mut on: PatternSet, mut off: PatternSet) -> Result<Isf, ExtractError> {
        if on.arity() != off.arity() {
            return Err(ExtractError::ArityMismatch { left: on.arity(), right: off.arity() });
        }
        on.sort_dedup();
        off.sort_dedup();
        // Merge scan: both sorted, so a shared pattern shows up in lockstep.
        let (mut i, mut j) = (0, 0);
        while i < on.len() && j < off.len() {
            match on.row(i).cmp(off.row(j)) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    return Err(ExtractError::OnOffConflict { pattern: on.row_string(i) });
                }
            }
        }
        Ok(Isf { arity: on.arity(), on, off })
    }

    /// Completely specified ISF (empty don't-care set) from a truth table.
    pub fn from_truth_table(tt: &TruthTable) -> Isf {
        let arity = tt.arity();
        let mut on = PatternSet::new(arity);
        let mut off = PatternSet::new(arity);
        let mut row = vec![0u64; bits::words_for(arity)];
        for idx in 0..tt.num_rows() {
            row_for_tt_index(idx, arity, &mut row);
            if tt.get(idx) {
                on.push_row(&row);
            } else {
                off.push_row(&row);
            }
        }
        on.sort_dedup();
        off.sort_dedup();
        Isf { arity, on, off }
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn on(&self) -> &PatternSet {
        &self.on
    }

    pub fn off(&self) -> &PatternSet {
        &self.off
    }

    /// Some(true) for ON, Some(false) for OFF, None for don't-care.
    pub fn classify(&self, row: &[u64]) -> Option<bool> {
        if self.on.contains_sorted(row) {
            Some(true)
        } else if self.off.contains_sorted(row) {
            Some(false)
        } else {
            None
        }
    }
}

/// Converts a matrix of ±1 activations (one sample per row) into packed
/// patterns: +1 -> bit 1, -1 -> bit 0. Any other value is an error.
pub fn activations_to_patterns(t: &Tensor) -> Result<PatternSet, ExtractError> {
    assert!(t.rank() >= 2, "expected a batch of activation vectors");
    let rows = t.dim(0);
    let cols = t.len() / rows.max(1);
    let mut set = PatternSet::zeros(cols, rows);
    let data = t.data();
    for r in 0..rows {
        for c in 0..cols {
            let v = data[r * cols + c];
            if v == 1.0 {
                set.set_bit(r, c, true);
            } else if v != -1.0 {
                return Err(ExtractError::NonBinaryActivation { row: r, col: c, value: v });
            }
        }
    }
    Ok(set)
}

/// Builds an ISF from recorded input patterns and the recorded output bit of
/// one unit for each pattern. Duplicate rows collapse; a pattern recorded
/// with both outputs is an error.
pub fn collect_isf(inputs: &PatternSet, outputs: &[bool]) -> Result<Isf, ExtractError> {
    if outputs.len() != inputs.len() {
        return Err(ExtractError::LengthMismatch { got: outputs.len(), want: inputs.len() });
    }
    let mut on = PatternSet::new(inputs.arity());
    let mut off = PatternSet::new(inputs.arity());
    for (i, row) in inputs.iter().enumerate() {
        if outputs[i] {
            on.push_row(row);
        } else {
            off.push_row(row);
        }
    }
    Isf::from_sets(on, off)
}

/// Builds an ISF by evaluating a folded neuron on every recorded pattern.
pub fn collect_isf_neuron(
    inputs: &PatternSet,
    neuron: &ThresholdNeuron,
    algebra: InputAlgebra,
) -> Result<Isf, ExtractError> {
    if neuron.arity() != inputs.arity() {
        return Err(ExtractError::ArityMismatch { left: neuron.arity(), right: inputs.arity() });
    }
    let outputs: Vec<bool> = inputs.iter().map(|row| neuron.eval_bits(row, algebra)).collect();
    collect_isf(inputs, &outputs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_neuron() -> ThresholdNeuron {
        ThresholdNeuron::new(vec![1.4, -3.4, 2.8], 0.5, 1)
    }

    #[test]
    fn enumerates_known_threshold_function() {
        // Three inputs in {0,1}, weights (1.4, -3.4, 2.8), threshold 0.5:
        // sums 0.0, 2.8, -3.4, -0.6, 1.4, 4.2, -2.0, 0.8.
        let tt = enumerate_truth_table(&sample_neuron(), InputAlgebra::ZeroOne, N_ENUM_MAX).unwrap();
        let expected = [false, true, false, false, true, true, false, true];
        for (idx, &want) in expected.iter().enumerate() {
            assert_eq!(tt.get(idx), want, "row {idx}");
        }
        assert_eq!(tt.count_ones(), 4);
    }

    #[test]
    fn tt_index_round_trip() {
        let mut row = vec![0u64; 1];
        for idx in 0..32 {
            row_for_tt_index(idx, 5, &mut row);
            assert_eq!(tt_index(&row, 5), idx);
        }
    }

    #[test]
    fn enumeration_rejects_large_arity() {
        let n = ThresholdNeuron::new(vec![0.5; 21], 0.0, 1);
        match enumerate_truth_table(&n, InputAlgebra::ZeroOne, N_ENUM_MAX) {
            Err(ExtractError::ArityTooLarge { arity: 21, max: 20 }) => {}
            other => panic!("expected arity error, got {other:?}"),
        }
    }

    #[test]
    fn fold_matches_batchnorm_sign() {
        let bn = BatchNormParams {
            gamma: vec![2.0, -1.5],
            beta: vec![0.25, 0.7],
            running_mean: vec![0.1, -0.4],
            running_var: vec![0.9, 1.3],
            epsilon: 1e-5,
            momentum: 0.1,
        };
        let weights = [0.3f32, -1.2, 0.8];
        for unit in 0..2 {
            let folded = match fold_batchnorm(&weights, &bn, unit).unwrap() {
                FoldedNeuron::Threshold(t) => t,
                FoldedNeuron::Constant(_) => panic!("unexpected constant"),
            };
            // Check agreement with the unfolded form on all 8 binary inputs.
            let mut row = vec![0u64; 1];
            for idx in 0..8 {
                row_for_tt_index(idx, 3, &mut row);
                let mut s = 0f32;
                for (j, &w) in weights.iter().enumerate() {
                    s += if bits::get_bit(&row, j) { w } else { -w };
                }
                let sd = (bn.running_var[unit] as f64 + bn.epsilon as f64).sqrt();
                let y = bn.gamma[unit] as f64 * (s as f64 - bn.running_mean[unit] as f64) / sd
                    + bn.beta[unit] as f64;
                assert_eq!(
                    folded.eval_bits(&row, InputAlgebra::PlusMinusOne),
                    y >= 0.0,
                    "unit {unit} idx {idx}"
                );
            }
        }
    }

    #[test]
    fn fold_zero_gamma_is_constant() {
        let bn = BatchNormParams {
            gamma: vec![0.0, 0.0],
            beta: vec![0.3, -0.3],
            running_mean: vec![0.0, 0.0],
            running_var: vec![1.0, 1.0],
            epsilon: 1e-5,
            momentum: 0.1,
        };
        assert_eq!(fold_batchnorm(&[1.0], &bn, 0).unwrap(), FoldedNeuron::Constant(true));
        assert_eq!(fold_batchnorm(&[1.0], &bn, 1).unwrap(), FoldedNeuron::Constant(false));
    }

    #[test]
    fn collect_isf_deduplicates_and_partitions() {
        let mut inputs = PatternSet::new(4);
        for idx in [3u64, 5, 3, 9, 5] {
            inputs.push_index(idx);
        }
        let isf = collect_isf(&inputs, &[true, false, true, true, false]).unwrap();
        assert_eq!(isf.on().len(), 2);
        assert_eq!(isf.off().len(), 1);
        assert_eq!(isf.classify(&[3]), Some(true));
        assert_eq!(isf.classify(&[5]), Some(false));
        assert_eq!(isf.classify(&[9]), Some(true));
        assert_eq!(isf.classify(&[0]), None);
    }

    #[test]
    fn collect_isf_rejects_conflict() {
        let mut inputs = PatternSet::new(2);
        inputs.push_index(1);
        inputs.push_index(1);
        match collect_isf(&inputs, &[true, false]) {
            Err(ExtractError::OnOffConflict { pattern }) => assert_eq!(pattern, "10"),
            other => panic!("expected conflict, got {other:?}"),
        }
    }

    #[test]
    fn activations_must_be_binary() {
        let t = Tensor::from_vec(&[2, 2], vec![1.0, -1.0, 1.0, 0.5]);
        match activations_to_patterns(&t) {
            Err(ExtractError::NonBinaryActivation { row: 1, col: 1, value }) => {
                assert_eq!(value, 0.5)
            }
            other => panic!("expected non-binary error, got {other:?}"),
        }
        let ok = Tensor::from_vec(&[1, 3], vec![1.0, -1.0, -1.0]);
        let p = activations_to_patterns(&ok).unwrap();
        assert_eq!(p.row(0), &[0b001]);
    }
}
