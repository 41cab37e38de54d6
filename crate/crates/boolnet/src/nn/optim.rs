//! Adamax: Adam with an exponentially weighted infinity norm in place of
//! the second moment.

use crate::nn::NnError;

pub struct Adamax {
    lr: f32,
    beta1: f32,
    beta2: f32,
    step: u64,
    m: Vec<Vec<f32>>,
    u: Vec<Vec<f32>>,
}

impl Adamax {
    pub fn new(lr: f32) -> Adamax {
        Adamax { lr, beta1: 0.9, beta2: 0.999, step: 0, m: Vec::new(), u: Vec::new() }
    }

    pub fn lr(&self) -> f32 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f32) {
        self.lr = lr;
    }

    /// One update: m ← β₁m + (1−β₁)g, u ← max(β₂u, |g|), then
    /// p ← p − lr/(1−β₁ᵗ) · m/u. Entries whose u is still zero (gradient
    /// identically zero so far) are left untouched.
    pub fn step(
        &mut self,
        params: &mut [&mut [f32]],
        grads: &[crate::nn::Tensor],
    ) -> Result<(), NnError> {
        assert_eq!(params.len(), grads.len(), "parameter/gradient tensor counts differ");
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.u = params.iter().map(|p| vec![0.0; p.len()]).collect();
        }
        self.step += 1;
        let correction = 1.0 - self.beta1.powi(self.step.min(i32::MAX as u64) as i32);
        let rate = self.lr / correction;
        for (t, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let g = g.data();
            assert_eq!(p.len(), g.len(), "tensor {t} size mismatch");
            if g.iter().any(|v| !v.is_finite()) {
                return Err(NnError::NonFiniteGrad { tensor: t });
            }
            let m = &mut self.m[t];
            let u = &mut self.u[t];
            for i in 0..g.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                u[i] = (self.beta2 * u[i]).max(g[i].abs());
                if u[i] != 0.0 {
                    p[i] -= rate * m[i] / u[i];
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    #[test]
    fn zero_gradients_leave_params_alone() {
        let mut w = vec![1.5f32, -2.0];
        let mut opt = Adamax::new(0.003);
        for _ in 0..10 {
            let g = Tensor::from_vec(&[2], vec![0.0, 0.0]);
            opt.step(&mut [w.as_mut_slice()], &[g]).unwrap();
        }
        assert_eq!(w, vec![1.5, -2.0]);
    }

    #[test]
    fn first_step_moves_by_lr_for_unit_gradient() {
        let mut w = vec![0.0f32];
        let mut opt = Adamax::new(0.003);
        let g = Tensor::from_vec(&[1], vec![1.0]);
        opt.step(&mut [w.as_mut_slice()], &[g]).unwrap();
        // m=0.1, u=1, rate=0.003/0.1 → Δ = −0.003.
        assert!((w[0] + 0.003).abs() < 1e-7, "got {}", w[0]);
    }

    #[test]
    fn quadratic_converges() {
        let mut w = vec![1.0f32];
        let mut opt = Adamax::new(0.01);
        for _ in 0..2000 {
            let g = Tensor::from_vec(&[1], vec![2.0 * w[0]]);
            opt.step(&mut [w.as_mut_slice()], &[g]).unwrap();
        }
        assert!(w[0].abs() < 1e-2, "got {}", w[0]);
    }

    #[test]
    fn non_finite_gradient_is_an_error() {
        let mut w = vec![0.0f32];
        let mut opt = Adamax::new(0.003);
        let g = Tensor::from_vec(&[1], vec![f32::NAN]);
        assert!(opt.step(&mut [w.as_mut_slice()], &[g]).is_err());
    }
}
