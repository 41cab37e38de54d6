//! Mixed-precision inference over a compiled network: the leading block up
//! to the first sign activation runs in 32-bit float, the binary middle
//! layers run as bit-parallel logic simulation of the stage graphs, and the
//! final dense layer is evaluated as additions and subtractions of its
//! weights (its inputs are ±1, so no multiplies are needed), followed by the
//! trailing batch norm (if any) and an argmax.
//!
//! Wire encoding between the float and logic worlds: activation +1 ↔ bit 1,
//! −1 ↔ bit 0, packed little-endian within 64-bit words (input j at bit j of
//! word j/64 after flattening the activation tensor row-major).

use crate::bits::PatternSet;
use crate::extract::{activations_to_patterns, ExtractError};
use crate::multilevel::{MultiLevelError, Stage};
use crate::nn::{argmax_rows, Layer, Network, NnError, Tensor};
use thiserror::Error;

/// Samples processed per internal chunk. Chunking bounds peak memory (the
/// float prefix of a convolutional network materializes large activation
/// tensors) and has no effect on results: every step is row-independent.
pub const HYBRID_CHUNK: usize = 1024;

#[derive(Debug, Error)]
pub enum HybridError {
    #[error("model not hybrid-compatible: {0}")]
    Model(String),
    #[error("stage {stage} width mismatch: expected {expected}, found {found}")]
    StageWidth { stage: usize, expected: usize, found: usize },
    #[error("forward pass failed: {0}")]
    Nn(#[from] NnError),
    #[error("activation packing failed: {0}")]
    Extract(#[from] ExtractError),
    #[error("logic simulation failed: {0}")]
    Logic(#[from] MultiLevelError),
}

/// Layer-index split of a network into the float prefix (up to and
/// including the first sign), the logic middle, and the float suffix (the
/// last dense layer onward).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HybridSplit {
    /// Layers `0..prefix_end` run in float; the layer at `prefix_end - 1`
    /// is the first sign activation.
    pub prefix_end: usize,
    /// Layers `suffix_start..` run in float; the layer at `suffix_start`
    /// is the last dense layer.
    pub suffix_start: usize,
}

/// Derives the split from the layer structure. The middle region
/// (everything the stage plan must realize) is `prefix_end..suffix_start`.
pub fn hybrid_split(net: &Network) -> Result<HybridSplit, HybridError> {
    let first_sign = net
        .layers
        .iter()
        .position(|l| matches!(l, Layer::Sign))
        .ok_or_else(|| HybridError::Model("no sign activation".into()))?;
    let last_dense = net
        .layers
        .iter()
        .rposition(|l| matches!(l, Layer::Dense { .. }))
        .ok_or_else(|| HybridError::Model("no dense output layer".into()))?;
    if last_dense <= first_sign {
        return Err(HybridError::Model(
            "last dense layer precedes the first sign activation".into(),
        ));
    }
    for (i, layer) in net.layers.iter().enumerate().skip(last_dense + 1) {
        if !matches!(layer, Layer::BatchNorm { .. }) {
            return Err(HybridError::Model(format!(
                "layer {i} after the output dense layer is not a batch norm"
            )));
        }
    }
    Ok(HybridSplit { prefix_end: first_sign + 1, suffix_start: last_dense })
}

/// Add/sub realization of a ±1-input dense layer: for each output unit the
/// weight is added when the input bit is 1 and subtracted when it is 0, in
/// ascending input order. This matches the float dot product with ±1 inputs
/// exactly (same operand order, and negating an f32 is exact).
pub fn addsub_scores(patterns: &PatternSet, weights: &Tensor) -> Tensor {
    let (in_units, out_units) = (weights.dim(0), weights.dim(1));
    assert_eq!(patterns.arity(), in_units, "input width mismatch");
    let w = weights.data();
    let mut out = Tensor::zeros(&[patterns.len(), out_units]);
    for (r, row) in patterns.iter().enumerate() {
        let acc = &mut out.data_mut()[r * out_units..(r + 1) * out_units];
        for j in 0..in_units {
            let take = row[j / 64] >> (j % 64) & 1 == 1;
            let base = j * out_units;
            for (k, slot) in acc.iter_mut().enumerate() {
                let v = w[base + k];
                *slot += if take { v } else { -v };
            }
        }
    }
    out
}

fn stage_widths(net: &Network, split: HybridSplit, stages: &[Stage]) -> Result<(), HybridError> {
    let shapes = net.shapes()?;
    let mut width: usize = shapes[split.prefix_end - 1].iter().product();
    for (s, stage) in stages.iter().enumerate() {
        if stage.aig.num_inputs() != width {
            return Err(HybridError::StageWidth {
                stage: s,
                expected: width,
                found: stage.aig.num_inputs(),
            });
        }
        width = stage.aig.outputs().len();
    }
    let in_units = match &net.layers[split.suffix_start] {
        Layer::Dense { weights } => weights.dim(0),
        _ => unreachable!("split points at a dense layer"),
    };
    if width != in_units {
        return Err(HybridError::StageWidth {
            stage: stages.len(),
            expected: in_units,
            found: width,
        });
    }
    Ok(())
}

/// Raw output scores of the hybrid realization, chunked over the batch.
pub fn hybrid_scores(
    net: &Network,
    stages: &[Stage],
    batch: &Tensor,
) -> Result<Tensor, HybridError> {
    let split = hybrid_split(net)?;
    stage_widths(net, split, stages)?;
    let prefix = Network {
        input_shape: net.input_shape.clone(),
        layers: net.layers[..split.prefix_end].to_vec(),
    };
    let dense_weights = match &net.layers[split.suffix_start] {
        Layer::Dense { weights } => weights,
        _ => unreachable!("split points at a dense layer"),
    };
    let suffix = Network {
        input_shape: vec![dense_weights.dim(1)],
        layers: net.layers[split.suffix_start + 1..].to_vec(),
    };

    let n = batch.dim(0);
    let shapes = net.shapes()?;
    let classes = *shapes.last().expect("network has layers").first().expect("1-d scores");
    let mut scores = Tensor::zeros(&[n, classes]);
    for lo in (0..n).step_by(HYBRID_CHUNK) {
        let hi = (lo + HYBRID_CHUNK).min(n);
        let acts = prefix.forward_eval(&batch.slice_rows(lo, hi))?;
        let signed = acts.last().expect("prefix has layers");
        let mut bits = activations_to_patterns(signed)?;
        for stage in stages {
            bits = stage.aig.simulate(&bits)?;
        }
        let mut chunk = addsub_scores(&bits, dense_weights);
        if !suffix.layers.is_empty() {
            chunk = suffix.forward_eval(&chunk)?.pop().expect("suffix has layers");
        }
        scores.data_mut()[lo * classes..hi * classes].copy_from_slice(chunk.data());
    }
    Ok(scores)
}

/// Predicted labels of the hybrid realization. Argmax ties resolve to the
/// lowest class index, as in arithmetic evaluation.
pub fn hybrid_infer(
    net: &Network,
    stages: &[Stage],
    batch: &Tensor,
) -> Result<Vec<u8>, HybridError> {
    Ok(argmax_rows(&hybrid_scores(net, stages, batch)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extract::{enumerate_truth_table, fold_batchnorm, FoldedNeuron, InputAlgebra};
    use crate::multilevel::{cover_to_aig, optimize_layer, stitch_network};
    use crate::nn::LayerSpec;
    use crate::twolevel::{minimize, Cover};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Compile every binary-to-binary dense layer of `net` into an exact
    /// logic stage via truth-table enumeration.
    fn compile_exact(net: &Network) -> Vec<Stage> {
        let split = hybrid_split(net).unwrap();
        let mut aigs = Vec::new();
        let mut i = split.prefix_end;
        while i < split.suffix_start {
            let Layer::Dense { weights } = &net.layers[i] else {
                panic!("middle region should start each block with a dense layer");
            };
            let Layer::BatchNorm { params } = &net.layers[i + 1] else {
                panic!("dense layer should be followed by batch norm");
            };
            assert!(matches!(net.layers[i + 2], Layer::Sign));
            let (in_units, out_units) = (weights.dim(0), weights.dim(1));
            let mut covers: Vec<Cover> = Vec::new();
            for unit in 0..out_units {
                let col: Vec<f32> =
                    (0..in_units).map(|j| weights.data()[j * out_units + unit]).collect();
                let tt = match fold_batchnorm(&col, params, unit).unwrap() {
                    FoldedNeuron::Threshold(t) => {
                        enumerate_truth_table(&t, InputAlgebra::PlusMinusOne, 20).unwrap()
                    }
                    FoldedNeuron::Constant(_) => panic!("degenerate unit in test net"),
                };
                covers.push(minimize(&crate::extract::Isf::from_truth_table(&tt)).unwrap());
            }
            aigs.push(optimize_layer(&cover_to_aig(in_units, &covers).unwrap()));
            i += 3;
        }
        let groups: Vec<Vec<usize>> = (0..aigs.len()).map(|k| vec![k]).collect();
        stitch_network(&aigs, &groups).unwrap().stages
    }

    fn toy_net(seed: u64) -> Network {
        let specs = [
            LayerSpec::Dense { out_units: 8 },
            LayerSpec::BatchNorm,
            LayerSpec::Sign,
            LayerSpec::Dense { out_units: 7 },
            LayerSpec::BatchNorm,
            LayerSpec::Sign,
            LayerSpec::Dense { out_units: 6 },
            LayerSpec::BatchNorm,
            LayerSpec::Sign,
            LayerSpec::Dense { out_units: 4 },
            LayerSpec::BatchNorm,
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Network::init(&[5], &specs, &mut rng).unwrap();
        // Spread the batch-norm statistics so folding sees nontrivial
        // thresholds and polarities.
        for layer in &mut net.layers {
            if let Layer::BatchNorm { params } = layer {
                for c in 0..params.features() {
                    params.running_mean[c] = rng.gen_range(-0.5..0.5);
                    params.running_var[c] = rng.gen_range(0.5..2.0);
                    params.gamma[c] = rng.gen_range(-1.0..1.0);
                    params.beta[c] = rng.gen_range(-0.3..0.3);
                }
            }
        }
        net
    }

    #[test]
    fn split_finds_first_sign_and_last_dense() {
        let net = toy_net(1);
        let split = hybrid_split(&net).unwrap();
        assert_eq!(split, HybridSplit { prefix_end: 3, suffix_start: 9 });
    }

    #[test]
    fn split_rejects_pure_float_networks() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = Network::init(
            &[4],
            &[LayerSpec::Dense { out_units: 3 }, LayerSpec::Relu, LayerSpec::Dense { out_units: 2 }],
            &mut rng,
        )
        .unwrap();
        assert!(matches!(hybrid_split(&net), Err(HybridError::Model(_))));
    }

    #[test]
    fn addsub_equals_float_dot_product_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (in_units, out_units, n) = (33, 9, 40);
        let weights = Tensor::from_vec(
            &[in_units, out_units],
            (0..in_units * out_units).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        );
        let signs = Tensor::from_vec(
            &[n, in_units],
            (0..n * in_units).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect(),
        );
        let bits = activations_to_patterns(&signs).unwrap();
        let fast = addsub_scores(&bits, &weights);
        let slow = crate::nn::ops::matmul(&signs, &weights);
        assert_eq!(fast.data(), slow.data());
    }

    #[test]
    fn enumeration_compiled_net_matches_arithmetic_exactly() {
        let net = toy_net(42);
        let stages = compile_exact(&net);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let batch = Tensor::from_vec(
            &[200, 5],
            (0..200 * 5).map(|_| rng.gen_range(-2.0..2.0_f32)).collect(),
        );
        let hybrid = hybrid_infer(&net, &stages, &batch).unwrap();
        let arith = argmax_rows(&net.scores(&batch).unwrap());
        assert_eq!(hybrid, arith);
        // Scores agree exactly, not just argmax: the logic reproduces each
        // sign bit and the suffix arithmetic is operand-for-operand equal.
        let hs = hybrid_scores(&net, &stages, &batch).unwrap();
        let as_ = net.scores(&batch).unwrap();
        assert_eq!(hs.data(), as_.data());
    }

    #[test]
    fn constant_middle_unit_still_runs() {
        let mut net = toy_net(3);
        // Force one hidden unit constant: zero gamma makes the fold yield a
        // constant equal to sign(beta).
        if let Layer::BatchNorm { params } = &mut net.layers[4] {
            params.gamma[2] = 0.0;
            params.beta[2] = -0.4;
        }
        let split = hybrid_split(&net).unwrap();
        let mut aigs = Vec::new();
        let mut i = split.prefix_end;
        while i < split.suffix_start {
            let Layer::Dense { weights } = &net.layers[i] else { unreachable!() };
            let Layer::BatchNorm { params } = &net.layers[i + 1] else { unreachable!() };
            let (in_units, out_units) = (weights.dim(0), weights.dim(1));
            let mut covers: Vec<Cover> = Vec::new();
            for unit in 0..out_units {
                let col: Vec<f32> =
                    (0..in_units).map(|j| weights.data()[j * out_units + unit]).collect();
                let cover = match fold_batchnorm(&col, params, unit).unwrap() {
                    FoldedNeuron::Threshold(t) => minimize(
                        &crate::extract::Isf::from_truth_table(
                            &enumerate_truth_table(&t, InputAlgebra::PlusMinusOne, 20).unwrap(),
                        ),
                    )
                    .unwrap(),
                    FoldedNeuron::Constant(v) => {
                        assert!(!v, "forced constant should be false");
                        Cover::new(in_units)
                    }
                };
                covers.push(cover);
            }
            aigs.push(optimize_layer(&cover_to_aig(in_units, &covers).unwrap()));
            i += 3;
        }
        let groups: Vec<Vec<usize>> = (0..aigs.len()).map(|k| vec![k]).collect();
        let stages = stitch_network(&aigs, &groups).unwrap().stages;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let batch = Tensor::from_vec(
            &[64, 5],
            (0..64 * 5).map(|_| rng.gen_range(-2.0..2.0_f32)).collect(),
        );
        let hybrid = hybrid_infer(&net, &stages, &batch).unwrap();
        // The arithmetic net computes sign(0·x_hat − 0.4) = −1 for that unit,
        // matching the constant-false wire.
        let arith = argmax_rows(&net.scores(&batch).unwrap());
        assert_eq!(hybrid, arith);
    }

    #[test]
    fn width_mismatch_is_reported() {
        let net = toy_net(5);
        let mut stages = compile_exact(&net);
        stages.remove(1);
        match hybrid_infer(&net, &stages, &Tensor::from_vec(&[1, 5], vec![0.5; 5])) {
            Err(HybridError::StageWidth { stage: 1, expected: 6, found: 7 }) => {}
            other => panic!("expected width mismatch, got {other:?}"),
        }
    }
}
