//! Hand-rolled forward/backward kernels.
//!
//! All loops accumulate in f32 with a fixed ascending index order; the
//! threshold-neuron evaluator in `extract` mirrors the dense and conv
//! orders exactly, so folded neurons reproduce the network bit for bit.

use crate::nn::Tensor;

/// y[n,o] = sum_k x[n,k] * w[k,o], accumulated over ascending k.
pub fn matmul(x: &Tensor, w: &Tensor) -> Tensor {
    let (n, k) = (x.dim(0), x.dim(1));
    let (kw, o) = (w.dim(0), w.dim(1));
    assert_eq!(k, kw, "matmul inner dimension");
    let mut y = Tensor::zeros(&[n, o]);
    let xd = x.data();
    let wd = w.data();
    let yd = y.data_mut();
    for i in 0..n {
        let xrow = &xd[i * k..(i + 1) * k];
        let yrow = &mut yd[i * o..(i + 1) * o];
        for (p, &xv) in xrow.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            let wrow = &wd[p * o..(p + 1) * o];
            for (yv, &wv) in yrow.iter_mut().zip(wrow) {
                *yv += xv * wv;
            }
        }
    }
    y
}

/// dx = dy · wᵀ
pub fn matmul_nt(dy: &Tensor, w: &Tensor) -> Tensor {
    let (n, o) = (dy.dim(0), dy.dim(1));
    let k = w.dim(0);
    assert_eq!(w.dim(1), o, "matmul_nt inner dimension");
    let mut dx = Tensor::zeros(&[n, k]);
    let gd = dy.data();
    let wd = w.data();
    let xd = dx.data_mut();
    for i in 0..n {
        for p in 0..k {
            let mut acc = 0.0f32;
            let wrow = &wd[p * o..(p + 1) * o];
            let grow = &gd[i * o..(i + 1) * o];
            for (gv, wv) in grow.iter().zip(wrow) {
                acc += gv * wv;
            }
            xd[i * k + p] = acc;
        }
    }
    dx
}

/// dw = xᵀ · dy
pub fn matmul_tn(x: &Tensor, dy: &Tensor) -> Tensor {
    let (n, k) = (x.dim(0), x.dim(1));
    let o = dy.dim(1);
    assert_eq!(dy.dim(0), n, "matmul_tn outer dimension");
    let mut dw = Tensor::zeros(&[k, o]);
    let xd = x.data();
    let gd = dy.data();
    let wd = dw.data_mut();
    for i in 0..n {
        let xrow = &xd[i * k..(i + 1) * k];
        let grow = &gd[i * o..(i + 1) * o];
        for (p, &xv) in xrow.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            let wrow = &mut wd[p * o..(p + 1) * o];
            for (wv, &gv) in wrow.iter_mut().zip(grow) {
                *wv += xv * gv;
            }
        }
    }
    dw
}

/// Valid 3×3 convolution, stride 1. x: [n, ic, h, w], weights:
/// [oc, ic, 3, 3], output [n, oc, h-2, w-2]. Accumulation order per output
/// element: ascending (ic, ky, kx).
pub fn conv2d(x: &Tensor, w: &Tensor) -> Tensor {
    let (n, ic, h, wd_) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let (oc, icw) = (w.dim(0), w.dim(1));
    assert_eq!(ic, icw, "conv channel mismatch");
    assert!(h >= 3 && wd_ >= 3, "input smaller than kernel");
    let (oh, ow) = (h - 2, wd_ - 2);
    let mut y = Tensor::zeros(&[n, oc, oh, ow]);
    let xd = x.data();
    let kd = w.data();
    let yd = y.data_mut();
    for i in 0..n {
        for co in 0..oc {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0f32;
                    for ci in 0..ic {
                        for ky in 0..3 {
                            let xbase = ((i * ic + ci) * h + oy + ky) * wd_ + ox;
                            let kbase = ((co * ic + ci) * 3 + ky) * 3;
                            for kx in 0..3 {
                                acc += xd[xbase + kx] * kd[kbase + kx];
                            }
                        }
                    }
                    yd[((i * oc + co) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    y
}

/// Gradients of [`conv2d`] with respect to input and weights.
pub fn conv2d_backward(x: &Tensor, w: &Tensor, dy: &Tensor) -> (Tensor, Tensor) {
    let (n, ic, h, wd_) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let oc = w.dim(0);
    let (oh, ow) = (h - 2, wd_ - 2);
    let mut dx = Tensor::zeros(&[n, ic, h, wd_]);
    let mut dw = Tensor::zeros(&[oc, ic, 3, 3]);
    let xd = x.data();
    let kd = w.data();
    let gd = dy.data();
    let dxd = dx.data_mut();
    let dwd = dw.data_mut();
    for i in 0..n {
        for co in 0..oc {
            for oy in 0..oh {
                for ox in 0..ow {
                    let g = gd[((i * oc + co) * oh + oy) * ow + ox];
                    if g == 0.0 {
                        continue;
                    }
                    for ci in 0..ic {
                        for ky in 0..3 {
                            let xbase = ((i * ic + ci) * h + oy + ky) * wd_ + ox;
                            let kbase = ((co * ic + ci) * 3 + ky) * 3;
                            for kx in 0..3 {
                                dwd[kbase + kx] += xd[xbase + kx] * g;
                                dxd[xbase + kx] += kd[kbase + kx] * g;
                            }
                        }
                    }
                }
            }
        }
    }
    (dx, dw)
}

/// 2×2 max pooling, stride 2, odd trailing rows/columns dropped. Returns
/// the pooled tensor and the flat input index of each selected maximum
/// (first maximum wins on ties) for routing gradients.
pub fn maxpool2(x: &Tensor) -> (Tensor, Vec<u32>) {
    let (n, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let (oh, ow) = (h / 2, w / 2);
    let mut y = Tensor::zeros(&[n, c, oh, ow]);
    let mut arg = vec![0u32; n * c * oh * ow];
    let xd = x.data();
    let yd = y.data_mut();
    for i in 0..n {
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f32::NEG_INFINITY;
                    let mut best_at = 0usize;
                    for ky in 0..2 {
                        for kx in 0..2 {
                            let at = ((i * c + ch) * h + 2 * oy + ky) * w + 2 * ox + kx;
                            if xd[at] > best {
                                best = xd[at];
                                best_at = at;
                            }
                        }
                    }
                    let out_at = ((i * c + ch) * oh + oy) * ow + ox;
                    yd[out_at] = best;
                    arg[out_at] = best_at as u32;
                }
            }
        }
    }
    (y, arg)
}

pub fn maxpool2_backward(dy: &Tensor, arg: &[u32], in_shape: &[usize]) -> Tensor {
    let mut dx = Tensor::zeros(in_shape);
    let dxd = dx.data_mut();
    for (g, &at) in dy.data().iter().zip(arg) {
        dxd[at as usize] += g;
    }
    dx
}

/// Straight-through estimator for the sign nonlinearity: the upstream
/// gradient passes where the pre-activation lies in the closed interval
/// [−1, 1] and is zeroed outside it.
pub fn ste_backward(upstream: &Tensor, pre_activation: &Tensor) -> Tensor {
    assert_eq!(upstream.shape(), pre_activation.shape(), "STE shape mismatch");
    let mut out = upstream.clone();
    out.data_mut()
        .iter_mut()
        .zip(pre_activation.data())
        .for_each(|(g, &v)| {
            if v.abs() > 1.0 {
                *g = 0.0;
            }
        });
    out
}

/// Row-wise log-softmax.
pub fn log_softmax(scores: &Tensor) -> Tensor {
    let (n, c) = (scores.dim(0), scores.dim(1));
    let mut out = scores.clone();
    let d = out.data_mut();
    for i in 0..n {
        let row = &mut d[i * c..(i + 1) * c];
        let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f32;
        for v in row.iter_mut() {
            *v -= max;
            sum += v.exp();
        }
        let log_sum = sum.ln();
        for v in row.iter_mut() {
            *v -= log_sum;
        }
    }
    out
}

/// Mean negative log likelihood of the target classes, plus the gradient
/// with respect to the raw scores.
pub fn nll_loss(scores: &Tensor, targets: &[u8]) -> (f32, Tensor) {
    let (n, c) = (scores.dim(0), scores.dim(1));
    assert_eq!(targets.len(), n, "target count mismatch");
    let logp = log_softmax(scores);
    let lp = logp.data();
    let mut loss = 0.0f32;
    let mut grad = Tensor::zeros(&[n, c]);
    let gd = grad.data_mut();
    let inv_n = 1.0 / n as f32;
    for i in 0..n {
        let t = targets[i] as usize;
        assert!(t < c, "target out of range");
        loss -= lp[i * c + t];
        for j in 0..c {
            gd[i * c + j] = (lp[i * c + j].exp() - if j == t { 1.0 } else { 0.0 }) * inv_n;
        }
    }
    (loss * inv_n, grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        let x = Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let w = Tensor::from_vec(&[3, 2], vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let y = matmul(&x, &w);
        assert_eq!(y.data(), &[4.0, 5.0, 10.0, 11.0]);
    }

    #[test]
    fn conv_all_ones_sums_window() {
        let x = Tensor::from_vec(&[1, 1, 4, 4], vec![1.0; 16]);
        let w = Tensor::from_vec(&[1, 1, 3, 3], vec![1.0; 9]);
        let y = conv2d(&x, &w);
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert!(y.data().iter().all(|&v| v == 9.0));
    }

    #[test]
    fn maxpool_picks_first_max_and_routes_grads() {
        let x = Tensor::from_vec(&[1, 1, 2, 4], vec![1.0, 3.0, 2.0, 2.0, 3.0, 0.0, 1.0, 2.0]);
        let (y, arg) = maxpool2(&x);
        assert_eq!(y.data(), &[3.0, 2.0]);
        // Both windows have ties resolved to the first scan position.
        assert_eq!(arg, vec![1, 2]);
        let dy = Tensor::from_vec(&[1, 1, 1, 2], vec![5.0, 7.0]);
        let dx = maxpool2_backward(&dy, &arg, &[1, 1, 2, 4]);
        assert_eq!(dx.data(), &[0.0, 5.0, 7.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn nll_matches_hand_computation() {
        let scores = Tensor::from_vec(&[1, 2], vec![0.0, 0.0]);
        let (loss, grad) = nll_loss(&scores, &[1]);
        assert!((loss - 0.5f32.ln().abs()).abs() < 1e-6);
        assert!((grad.data()[0] - 0.5).abs() < 1e-6);
        assert!((grad.data()[1] + 0.5).abs() < 1e-6);
    }
}
