//! Network definition, training with binary activations, and arithmetic
//! inference.
//!
//! Layers: dense and 3×3 valid convolution (no bias — batch norm's beta
//! supplies the affine offset), 2×2 max pooling, batch normalization, the
//! sign nonlinearity with a straight-through estimator, relu, and inverted
//! dropout. Every kernel is single-threaded with a pinned accumulation
//! order, so runs are bit-reproducible for a fixed seed.

pub mod ops;
pub mod optim;
pub mod tensor;
pub mod train;

pub use optim::Adamax;
pub use tensor::Tensor;
pub use train::{argmax_rows, evaluate, train, EpochStats, LrSchedule, TrainConfig, TrainData};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("bad architecture: {0}")]
    BadArchitecture(String),
    #[error("layer {layer}: expected input shape {expected:?}, got {found:?}")]
    ShapeMismatch { layer: usize, expected: Vec<usize>, found: Vec<usize> },
    #[error("layer {layer}: non-finite activation")]
    NonFinite { layer: usize },
    #[error("parameter tensor {tensor}: non-finite gradient")]
    NonFiniteGrad { tensor: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("training diverged (non-finite loss) at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },
}

/// Per-feature batch-normalization parameters with running statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchNormParams {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
    pub epsilon: f32,
    pub momentum: f32,
}

impl BatchNormParams {
    pub fn identity(features: usize) -> Self {
        BatchNormParams {
            gamma: vec![1.0; features],
            beta: vec![0.0; features],
            running_mean: vec![0.0; features],
            running_var: vec![1.0; features],
            epsilon: 1e-5,
            momentum: 0.1,
        }
    }

    pub fn features(&self) -> usize {
        self.gamma.len()
    }
}

/// Binarization used throughout: nonnegative maps to 1 (+1), negative to 0 (-1).
/// `-0.0 >= 0.0` holds in IEEE 754, so negative zero maps to +1.
pub fn sign_bit(x: f32) -> bool {
    x >= 0.0
}

/// Architecture description; concrete layers are built from it by
/// [`Network::init`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense { out_units: usize },
    /// 3×3 kernels, valid padding, stride 1.
    Conv2d { out_channels: usize },
    /// 2×2 window, stride 2.
    MaxPool,
    BatchNorm,
    Sign,
    Relu,
    Dropout { rate: f32 },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layer {
    Dense { weights: Tensor },
    Conv2d { weights: Tensor },
    MaxPool,
    BatchNorm { params: BatchNormParams },
    Sign,
    Relu,
    Dropout { rate: f32 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Backward-pass context recorded by the train-mode forward.
enum Cache {
    /// Layer input (dense, conv, sign, relu).
    Input(Tensor),
    ArgMax { indices: Vec<u32>, in_shape: Vec<usize> },
    Norm { x_hat: Tensor, inv_std: Vec<f32> },
    Mask(Vec<f32>),
    None,
}

/// Per-layer parameter gradients, flattened in layer order: dense and conv
/// contribute their weight gradient, batch norm contributes gamma then
/// beta.
pub struct Gradients(Vec<Tensor>);

impl Gradients {
    pub fn tensors(&self) -> &[Tensor] {
        &self.0
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Network {
    pub input_shape: Vec<usize>,
    pub layers: Vec<Layer>,
}

/// Shape after a layer, starting from `input` (without the batch axis).
fn layer_output_shape(spec: &LayerSpec, input: &[usize], index: usize) -> Result<Vec<usize>, NnError> {
    let bad = |msg: String| Err(NnError::BadArchitecture(format!("layer {index}: {msg}")));
    match spec {
        LayerSpec::Dense { out_units } => {
            if *out_units == 0 {
                return bad("dense layer needs at least one unit".into());
            }
            Ok(vec![*out_units])
        }
        LayerSpec::Conv2d { out_channels } => {
            let [_, h, w] = input else {
                return bad(format!("conv2d needs a [channels, h, w] input, got {input:?}"));
            };
            if *out_channels == 0 || *h < 3 || *w < 3 {
                return bad(format!("conv2d cannot apply to {input:?}"));
            }
            Ok(vec![*out_channels, h - 2, w - 2])
        }
        LayerSpec::MaxPool => {
            let [c, h, w] = input else {
                return bad(format!("maxpool needs a [channels, h, w] input, got {input:?}"));
            };
            if *h < 2 || *w < 2 {
                return bad(format!("maxpool cannot apply to {input:?}"));
            }
            Ok(vec![*c, h / 2, w / 2])
        }
        LayerSpec::BatchNorm | LayerSpec::Sign | LayerSpec::Relu => Ok(input.to_vec()),
        LayerSpec::Dropout { rate } => {
            if !(0.0..1.0).contains(rate) {
                return bad(format!("dropout rate {rate} outside [0, 1)"));
            }
            Ok(input.to_vec())
        }
    }
}

impl Network {
    /// Validate an architecture and initialize weights (uniform in
    /// ±1/sqrt(fan_in)) deterministically from `rng`.
    pub fn init(input_shape: &[usize], specs: &[LayerSpec], rng: &mut ChaCha8Rng) -> Result<Network, NnError> {
        let mut layers = Vec::with_capacity(specs.len());
        let mut shape = input_shape.to_vec();
        let mut activations_since_linear = 0usize;
        for (index, spec) in specs.iter().enumerate() {
            if matches!(spec, LayerSpec::Sign | LayerSpec::Relu) {
                activations_since_linear += 1;
                if activations_since_linear > 1 {
                    return Err(NnError::BadArchitecture(format!(
                        "layer {index}: a linear layer may be followed by sign or relu, not both"
                    )));
                }
            } else if matches!(spec, LayerSpec::Dense { .. } | LayerSpec::Conv2d { .. }) {
                activations_since_linear = 0;
            }
            let out_shape = layer_output_shape(spec, &shape, index)?;
            let layer = match spec {
                LayerSpec::Dense { out_units } => {
                    let fan_in: usize = shape.iter().product();
                    let bound = 1.0 / (fan_in as f32).sqrt();
                    let data = (0..fan_in * out_units)
                        .map(|_| rng.gen_range(-bound..bound))
                        .collect();
                    Layer::Dense { weights: Tensor::from_vec(&[fan_in, *out_units], data) }
                }
                LayerSpec::Conv2d { out_channels } => {
                    let ic = shape[0];
                    let fan_in = ic * 9;
                    let bound = 1.0 / (fan_in as f32).sqrt();
                    let data = (0..out_channels * fan_in)
                        .map(|_| rng.gen_range(-bound..bound))
                        .collect();
                    Layer::Conv2d { weights: Tensor::from_vec(&[*out_channels, ic, 3, 3], data) }
                }
                LayerSpec::MaxPool => Layer::MaxPool,
                LayerSpec::BatchNorm => {
                    Layer::BatchNorm { params: BatchNormParams::identity(out_shape[0]) }
                }
                LayerSpec::Sign => Layer::Sign,
                LayerSpec::Relu => Layer::Relu,
                LayerSpec::Dropout { rate } => Layer::Dropout { rate: *rate },
            };
            layers.push(layer);
            shape = out_shape;
        }
        Ok(Network { input_shape: input_shape.to_vec(), layers })
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Dense { weights } => LayerSpec::Dense { out_units: weights.dim(1) },
                Layer::Conv2d { weights } => LayerSpec::Conv2d { out_channels: weights.dim(0) },
                Layer::MaxPool => LayerSpec::MaxPool,
                Layer::BatchNorm { .. } => LayerSpec::BatchNorm,
                Layer::Sign => LayerSpec::Sign,
                Layer::Relu => LayerSpec::Relu,
                Layer::Dropout { rate } => LayerSpec::Dropout { rate: *rate },
            })
            .collect()
    }

    /// Activation shape (without batch axis) after each layer.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>, NnError> {
        let specs = self.specs();
        let mut shape = self.input_shape.clone();
        let mut out = Vec::with_capacity(specs.len());
        for (index, spec) in specs.iter().enumerate() {
            shape = layer_output_shape(spec, &shape, index)?;
            out.push(shape.clone());
        }
        Ok(out)
    }

    fn check_batch(&self, batch: &Tensor) -> Result<usize, NnError> {
        if batch.rank() < 1 || batch.dim(0) == 0 {
            return Err(NnError::EmptyBatch);
        }
        if batch.shape()[1..] != self.input_shape[..] {
            return Err(NnError::ShapeMismatch {
                layer: 0,
                expected: self.input_shape.clone(),
                found: batch.shape()[1..].to_vec(),
            });
        }
        Ok(batch.dim(0))
    }

    /// Eval-mode forward: running batch-norm statistics, dropout inactive.
    /// Returns the output of every layer in order.
    pub fn forward_eval(&self, batch: &Tensor) -> Result<Vec<Tensor>, NnError> {
        let mut scratch = self.clone();
        scratch.forward(batch, Mode::Eval, None).map(|(acts, _)| acts)
    }

    /// Forward in an explicit mode. Train mode updates running batch-norm
    /// statistics and draws dropout masks from `rng`; eval mode ignores
    /// `rng`. Returns the output of every layer in order.
    pub fn forward_mode(
        &mut self,
        batch: &Tensor,
        mode: Mode,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Vec<Tensor>, NnError> {
        self.forward(batch, mode, rng).map(|(acts, _)| acts)
    }

    fn forward(
        &mut self,
        batch: &Tensor,
        mode: Mode,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Vec<Tensor>, Vec<Cache>), NnError> {
        let n = self.check_batch(batch)?;
        let mut acts: Vec<Tensor> = Vec::with_capacity(self.layers.len());
        let mut caches: Vec<Cache> = Vec::with_capacity(self.layers.len());
        let mut x = batch.clone();
        for (index, layer) in self.layers.iter_mut().enumerate() {
            let (y, cache) = match layer {
                Layer::Dense { weights } => {
                    let flat: usize = x.shape()[1..].iter().product();
                    if flat != weights.dim(0) {
                        return Err(NnError::ShapeMismatch {
                            layer: index,
                            expected: vec![weights.dim(0)],
                            found: vec![flat],
                        });
                    }
                    let x2 = x.clone().reshaped(&[n, flat]);
                    let y = ops::matmul(&x2, weights);
                    (y, Cache::Input(x2))
                }
                Layer::Conv2d { weights } => {
                    if x.rank() != 4 || x.dim(1) != weights.dim(1) {
                        return Err(NnError::ShapeMismatch {
                            layer: index,
                            expected: vec![weights.dim(1)],
                            found: x.shape()[1..].to_vec(),
                        });
                    }
                    let y = ops::conv2d(&x, weights);
                    (y, Cache::Input(x.clone()))
                }
                Layer::MaxPool => {
                    if x.rank() != 4 {
                        return Err(NnError::ShapeMismatch {
                            layer: index,
                            expected: vec![4],
                            found: x.shape().to_vec(),
                        });
                    }
                    let (y, indices) = ops::maxpool2(&x);
                    (y, Cache::ArgMax { indices, in_shape: x.shape().to_vec() })
                }
                Layer::BatchNorm { params } => batchnorm_forward(&x, params, mode, index)?,
                Layer::Sign => {
                    if x.data().iter().any(|v| v.is_nan()) {
                        return Err(NnError::NonFinite { layer: index });
                    }
                    let mut y = x.clone();
                    y.data_mut()
                        .iter_mut()
                        .for_each(|v| *v = if sign_bit(*v) { 1.0 } else { -1.0 });
                    (y, Cache::Input(x.clone()))
                }
                Layer::Relu => {
                    let mut y = x.clone();
                    y.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
                    (y, Cache::Input(x.clone()))
                }
                Layer::Dropout { rate } => {
                    if mode == Mode::Eval || *rate == 0.0 {
                        (x.clone(), Cache::None)
                    } else {
                        let rng = rng.as_deref_mut().expect("train mode needs an rng");
                        let keep = 1.0 - *rate;
                        let scale = 1.0 / keep;
                        let mask: Vec<f32> = (0..x.len())
                            .map(|_| if rng.gen::<f32>() < keep { scale } else { 0.0 })
                            .collect();
                        let mut y = x.clone();
                        y.data_mut().iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
                        (y, Cache::Mask(mask))
                    }
                }
            };
            acts.push(y.clone());
            caches.push(cache);
            x = y;
        }
        Ok((acts, caches))
    }

    /// Backward pass over cached contexts; `dscores` is the loss gradient
    /// at the network output.
    fn backward(&self, caches: &[Cache], acts: &[Tensor], dscores: Tensor) -> Gradients {
        let mut grads_rev: Vec<Tensor> = Vec::new();
        let mut dy = dscores;
        for index in (0..self.layers.len()).rev() {
            let cache = &caches[index];
            dy = match (&self.layers[index], cache) {
                (Layer::Dense { weights }, Cache::Input(x)) => {
                    let dw = ops::matmul_tn(x, &dy);
                    let dx = ops::matmul_nt(&dy, weights);
                    grads_rev.push(dw);
                    // Undo the implicit flatten.
                    let shape: Vec<usize> = if index == 0 {
                        std::iter::once(x.dim(0)).chain(self.input_shape.iter().copied()).collect()
                    } else {
                        acts[index - 1].shape().to_vec()
                    };
                    dx.reshaped(&shape)
                }
                (Layer::Conv2d { weights }, Cache::Input(x)) => {
                    let (dx, dw) = ops::conv2d_backward(x, weights, &dy);
                    grads_rev.push(dw);
                    dx
                }
                (Layer::MaxPool, Cache::ArgMax { indices, in_shape }) => {
                    ops::maxpool2_backward(&dy, indices, in_shape)
                }
                (Layer::BatchNorm { params }, Cache::Norm { x_hat, inv_std }) => {
                    let (dx, dgamma, dbeta) = batchnorm_backward(params, x_hat, inv_std, &dy);
                    grads_rev.push(dbeta);
                    grads_rev.push(dgamma);
                    dx
                }
                (Layer::Sign, Cache::Input(x)) => ops::ste_backward(&dy, x),
                (Layer::Relu, Cache::Input(x)) => {
                    let mut dx = dy;
                    dx.data_mut()
                        .iter_mut()
                        .zip(x.data())
                        .for_each(|(g, &v)| if v <= 0.0 { *g = 0.0 });
                    dx
                }
                (Layer::Dropout { .. }, Cache::Mask(mask)) => {
                    let mut dx = dy;
                    dx.data_mut().iter_mut().zip(mask).for_each(|(g, &m)| *g *= m);
                    dx
                }
                (Layer::Dropout { .. }, Cache::None) => dy,
                _ => unreachable!("cache kind matches layer kind"),
            };
        }
        grads_rev.reverse();
        Gradients(grads_rev)
    }

    /// Mutable references to every trainable tensor's storage, in the same
    /// order as [`Gradients`].
    pub fn params_mut(&mut self) -> Vec<&mut [f32]> {
        let mut out: Vec<&mut [f32]> = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Dense { weights } | Layer::Conv2d { weights } => {
                    out.push(weights.data_mut());
                }
                Layer::BatchNorm { params } => {
                    out.push(params.gamma.as_mut_slice());
                    out.push(params.beta.as_mut_slice());
                }
                _ => {}
            }
        }
        out
    }

    /// Train-mode forward plus backward: mean NLL loss on `targets` and
    /// the parameter gradients.
    pub fn loss_and_grads(
        &mut self,
        batch: &Tensor,
        targets: &[u8],
        rng: &mut ChaCha8Rng,
    ) -> Result<(f32, Gradients), NnError> {
        let (acts, caches) = self.forward(batch, Mode::Train, Some(rng))?;
        let scores = acts.last().expect("network has layers");
        let (loss, dscores) = ops::nll_loss(scores, targets);
        let grads = self.backward(&caches, &acts, dscores);
        Ok((loss, grads))
    }

    /// One optimization step on a batch: forward, NLL loss, backward,
    /// Adamax update. Returns the batch loss.
    pub fn train_step(
        &mut self,
        batch: &Tensor,
        targets: &[u8],
        opt: &mut Adamax,
        rng: &mut ChaCha8Rng,
    ) -> Result<f32, NnError> {
        let (loss, grads) = self.loss_and_grads(batch, targets, rng)?;
        let mut params = self.params_mut();
        opt.step(&mut params, grads.tensors())?;
        Ok(loss)
    }

    /// Raw output scores in eval mode.
    pub fn scores(&self, batch: &Tensor) -> Result<Tensor, NnError> {
        let acts = self.forward_eval(batch)?;
        Ok(acts.into_iter().next_back().expect("network has layers"))
    }
}

fn batchnorm_forward(
    x: &Tensor,
    params: &mut BatchNormParams,
    mode: Mode,
    index: usize,
) -> Result<(Tensor, Cache), NnError> {
    let channels = params.features();
    let (per_channel, plane) = match x.rank() {
        2 => (x.dim(1), 1usize),
        4 => (x.dim(1), x.dim(2) * x.dim(3)),
        _ => {
            return Err(NnError::ShapeMismatch {
                layer: index,
                expected: vec![channels],
                found: x.shape().to_vec(),
            })
        }
    };
    if per_channel != channels {
        return Err(NnError::ShapeMismatch {
            layer: index,
            expected: vec![channels],
            found: x.shape()[1..].to_vec(),
        });
    }
    let n = x.dim(0);
    let count = (n * plane) as f32;
    let mut y = x.clone();
    let mut x_hat = Tensor::zeros(x.shape());
    let mut inv_stds = vec![0.0f32; channels];
    for c in 0..channels {
        let (mean, var) = match mode {
            Mode::Train => {
                let mut sum = 0.0f32;
                for_channel(x, c, plane, |v| sum += v);
                let mean = sum / count;
                let mut sq = 0.0f32;
                for_channel(x, c, plane, |v| sq += (v - mean) * (v - mean));
                // Biased variance, also fed into the running estimate.
                let var = sq / count;
                params.running_mean[c] =
                    (1.0 - params.momentum) * params.running_mean[c] + params.momentum * mean;
                params.running_var[c] =
                    (1.0 - params.momentum) * params.running_var[c] + params.momentum * var;
                (mean, var)
            }
            Mode::Eval => (params.running_mean[c], params.running_var[c]),
        };
        let inv_std = 1.0 / (var + params.epsilon).sqrt();
        inv_stds[c] = inv_std;
        let gamma = params.gamma[c];
        let beta = params.beta[c];
        let yd = y.data_mut();
        let xh = x_hat.data_mut();
        for i in 0..n {
            let base = (i * channels + c) * plane;
            for p in base..base + plane {
                let h = (x.data()[p] - mean) * inv_std;
                xh[p] = h;
                yd[p] = gamma * h + beta;
            }
        }
    }
    let cache = match mode {
        Mode::Train => Cache::Norm { x_hat, inv_std: inv_stds },
        Mode::Eval => Cache::None,
    };
    Ok((y, cache))
}

fn for_channel(x: &Tensor, c: usize, plane: usize, mut f: impl FnMut(f32)) {
    let n = x.dim(0);
    let channels = x.dim(1);
    for i in 0..n {
        let base = (i * channels + c) * plane;
        for p in base..base + plane {
            f(x.data()[p]);
        }
    }
}

fn batchnorm_backward(
    params: &BatchNormParams,
    x_hat: &Tensor,
    inv_std: &[f32],
    dy: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let channels = params.features();
    let n = dy.dim(0);
    let plane: usize = dy.shape()[2..].iter().product();
    let count = (n * plane) as f32;
    let mut dx = Tensor::zeros(dy.shape());
    let mut dgamma = Tensor::zeros(&[channels]);
    let mut dbeta = Tensor::zeros(&[channels]);
    for c in 0..channels {
        let mut sum_dy = 0.0f32;
        let mut sum_dy_xhat = 0.0f32;
        for i in 0..n {
            let base = (i * channels + c) * plane;
            for p in base..base + plane {
                sum_dy += dy.data()[p];
                sum_dy_xhat += dy.data()[p] * x_hat.data()[p];
            }
        }
        dgamma.data_mut()[c] = sum_dy_xhat;
        dbeta.data_mut()[c] = sum_dy;
        let scale = params.gamma[c] * inv_std[c];
        let dxd = dx.data_mut();
        for i in 0..n {
            let base = (i * channels + c) * plane;
            for p in base..base + plane {
                dxd[p] = scale
                    * (dy.data()[p] - sum_dy / count - x_hat.data()[p] * sum_dy_xhat / count);
            }
        }
    }
    (dx, dgamma, dbeta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    /// Central finite differences over every parameter against the
    /// analytic gradients, within 1e-3 relative (floored at 1). The step is
    /// small enough that no rectifier kink or pool argmax flips between the
    /// two evaluations while f32 rounding noise stays two decades below the
    /// tolerance.
    fn check_gradients(net: &Network, batch: &Tensor, targets: &[u8]) {
        let (_, grads) = net.clone().loss_and_grads(batch, targets, &mut rng(1)).unwrap();
        let h = 1e-3f32;
        for (t, g) in grads.tensors().iter().enumerate() {
            for i in 0..g.len() {
                let mut lo = net.clone();
                lo.params_mut()[t][i] -= h;
                let (loss_lo, _) = lo.loss_and_grads(batch, targets, &mut rng(1)).unwrap();
                let mut hi = net.clone();
                hi.params_mut()[t][i] += h;
                let (loss_hi, _) = hi.loss_and_grads(batch, targets, &mut rng(1)).unwrap();
                let fd = (loss_hi - loss_lo) / (2.0 * h);
                let a = g.data()[i];
                let tol = 1e-3 * fd.abs().max(a.abs()).max(1.0);
                assert!(
                    (fd - a).abs() <= tol,
                    "tensor {t} element {i}: finite diff {fd} vs analytic {a}"
                );
            }
        }
    }

    fn random_batch(shape: &[usize], seed: u64) -> Tensor {
        use rand::Rng;
        let mut r = rng(seed);
        let data = (0..shape.iter().product::<usize>()).map(|_| r.gen_range(-1.5..1.5)).collect();
        Tensor::from_vec(shape, data)
    }

    #[test]
    fn sign_bit_tie_and_negative_zero() {
        assert!(sign_bit(0.0));
        assert!(sign_bit(-0.0));
        assert!(sign_bit(5.3));
        assert!(!sign_bit(-0.0001));
    }

    #[test]
    fn identity_block_signs_its_input() {
        let mut net = Network::init(
            &[2],
            &[LayerSpec::Dense { out_units: 2 }, LayerSpec::BatchNorm, LayerSpec::Sign],
            &mut rng(0),
        )
        .unwrap();
        if let Layer::Dense { weights } = &mut net.layers[0] {
            *weights = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        }
        let batch = Tensor::from_vec(&[1, 2], vec![2.0, -3.0]);
        let acts = net.forward_eval(&batch).unwrap();
        assert_eq!(acts[2].data(), &[1.0, -1.0]);
    }

    #[test]
    fn deep_sign_network_shapes_and_exact_binaries() {
        let specs = [
            LayerSpec::Dense { out_units: 100 },
            LayerSpec::BatchNorm,
            LayerSpec::Sign,
            LayerSpec::Dense { out_units: 100 },
            LayerSpec::BatchNorm,
            LayerSpec::Sign,
            LayerSpec::Dense { out_units: 100 },
            LayerSpec::BatchNorm,
            LayerSpec::Sign,
            LayerSpec::Dense { out_units: 10 },
        ];
        let net = Network::init(&[784], &specs, &mut rng(4)).unwrap();
        let batch = random_batch(&[64, 784], 5);
        let acts = net.forward_eval(&batch).unwrap();
        for sign_at in [2, 5, 8] {
            assert_eq!(acts[sign_at].shape(), &[64, 100]);
            assert!(acts[sign_at].data().iter().all(|v| v.abs() == 1.0));
        }
        assert_eq!(acts[9].shape(), &[64, 10]);
    }

    #[test]
    fn sign_and_maxpool_commute() {
        let x = random_batch(&[3, 2, 4, 4], 11);
        let (pooled, _) = ops::maxpool2(&x);
        let sign_after: Vec<f32> =
            pooled.data().iter().map(|&v| if sign_bit(v) { 1.0 } else { -1.0 }).collect();
        let mut signed = x.clone();
        signed.data_mut().iter_mut().for_each(|v| *v = if sign_bit(*v) { 1.0 } else { -1.0 });
        let (pool_after, _) = ops::maxpool2(&signed);
        assert_eq!(sign_after, pool_after.data());
    }

    #[test]
    fn ste_passes_inside_closed_unit_interval() {
        let pre = Tensor::from_vec(&[5], vec![0.5, 2.0, -1.0, 1.0, -3.0]);
        let up = Tensor::from_vec(&[5], vec![1.0, 1.0, 0.7, -0.2, 4.0]);
        let out = ops::ste_backward(&up, &pre);
        assert_eq!(out.data(), &[1.0, 0.0, 0.7, -0.2, 0.0]);
    }

    #[test]
    fn dense_batchnorm_gradients_match_finite_differences() {
        let net = Network::init(
            &[4],
            &[
                LayerSpec::Dense { out_units: 5 },
                LayerSpec::BatchNorm,
                LayerSpec::Dense { out_units: 3 },
            ],
            &mut rng(21),
        )
        .unwrap();
        let batch = random_batch(&[5, 4], 22);
        check_gradients(&net, &batch, &[0, 1, 2, 0, 1]);
    }

    #[test]
    fn relu_gradients_match_finite_differences() {
        let net = Network::init(
            &[4],
            &[
                LayerSpec::Dense { out_units: 5 },
                LayerSpec::Relu,
                LayerSpec::Dense { out_units: 3 },
            ],
            &mut rng(21),
        )
        .unwrap();
        let batch = random_batch(&[5, 4], 22);
        check_gradients(&net, &batch, &[0, 1, 2, 0, 1]);
    }

    #[test]
    fn conv_pipeline_gradients_match_finite_differences() {
        let net = Network::init(
            &[1, 6, 6],
            &[
                LayerSpec::Conv2d { out_channels: 2 },
                LayerSpec::MaxPool,
                LayerSpec::BatchNorm,
                LayerSpec::Dense { out_units: 3 },
            ],
            &mut rng(21),
        )
        .unwrap();
        let batch = random_batch(&[2, 1, 6, 6], 22);
        check_gradients(&net, &batch, &[2, 0]);
    }

    #[test]
    fn batchnorm_constant_batch_outputs_beta() {
        let mut net =
            Network::init(&[3], &[LayerSpec::BatchNorm], &mut rng(0)).unwrap();
        if let Layer::BatchNorm { params } = &mut net.layers[0] {
            params.beta = vec![0.25, -1.5, 0.0];
        }
        let batch = Tensor::from_vec(&[4, 3], vec![7.0; 12]);
        let acts = net.forward_mode(&batch, Mode::Train, Some(&mut rng(1))).unwrap();
        for i in 0..4 {
            assert_eq!(&acts[0].data()[i * 3..(i + 1) * 3], &[0.25, -1.5, 0.0]);
        }
    }

    #[test]
    fn batchnorm_eval_is_near_identity_at_init() {
        let net = Network::init(&[3], &[LayerSpec::BatchNorm], &mut rng(0)).unwrap();
        let batch = random_batch(&[2, 3], 41);
        let acts = net.forward_eval(&batch).unwrap();
        for (y, x) in acts[0].data().iter().zip(batch.data()) {
            assert!((y - x).abs() <= 1e-4 * x.abs() + 1e-6);
        }
    }

    #[test]
    fn dropout_masks_in_train_and_passes_in_eval() {
        let mut net =
            Network::init(&[100], &[LayerSpec::Dropout { rate: 0.5 }], &mut rng(0)).unwrap();
        let batch = Tensor::from_vec(&[1, 100], vec![1.0; 100]);
        let train = net.forward_mode(&batch, Mode::Train, Some(&mut rng(3))).unwrap();
        let kept = train[0].data().iter().filter(|&&v| v == 2.0).count();
        let dropped = train[0].data().iter().filter(|&&v| v == 0.0).count();
        assert_eq!(kept + dropped, 100);
        assert!(kept > 20 && kept < 80);
        let eval = net.forward_eval(&batch).unwrap();
        assert!(eval[0].data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn errors_name_the_offending_layer() {
        let net = Network::init(
            &[4],
            &[LayerSpec::Dense { out_units: 2 }, LayerSpec::Sign],
            &mut rng(0),
        )
        .unwrap();
        match net.forward_eval(&Tensor::from_vec(&[1, 5], vec![0.0; 5])) {
            Err(NnError::ShapeMismatch { layer: 0, .. }) => {}
            other => panic!("expected a shape error, got {other:?}"),
        }
        let sign_only = Network::init(&[2], &[LayerSpec::Sign], &mut rng(0)).unwrap();
        match sign_only.forward_eval(&Tensor::from_vec(&[1, 2], vec![f32::NAN, 0.0])) {
            Err(NnError::NonFinite { layer: 0 }) => {}
            other => panic!("expected a numeric error, got {other:?}"),
        }
        let both = Network::init(
            &[4],
            &[LayerSpec::Dense { out_units: 2 }, LayerSpec::Sign, LayerSpec::Relu],
            &mut rng(0),
        );
        assert!(matches!(both, Err(NnError::BadArchitecture(_))));
    }
}
