//! Adam optimizer with bias correction.

use crate::error::{contract, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub struct Adam<S> {
    lr: S,
    beta1: S,
    beta2: S,
    eps: S,
    /// Running beta powers, updated incrementally each step.
    beta1_t: S,
    beta2_t: S,
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(lr: f64) -> Self {
        Self::with(lr, 0.9, 0.999, 1e-8)
    }

    pub fn with(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            lr: S::from_f64(lr),
            beta1: S::from_f64(beta1),
            beta2: S::from_f64(beta2),
            eps: S::from_f64(eps),
            beta1_t: S::one(),
            beta2_t: S::one(),
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// One update over the full parameter list. The list must have the
    /// same length and shapes on every call; a `None` gradient counts
    /// as zero (moments still decay). First call sizes the state.
    pub fn step(
        &mut self,
        params: &mut [&mut Tensor<S>],
        grads: &[Option<&Tensor<S>>],
    ) -> Result<()> {
        contract!(
            params.len() == grads.len(),
            "{} params vs {} grads",
            params.len(),
            grads.len()
        );
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![S::zero(); p.len()]).collect();
            self.v = self.m.clone();
        }
        contract!(self.m.len() == params.len(), "parameter list changed size");

        self.beta1_t *= self.beta1;
        self.beta2_t *= self.beta2;
        let bc1 = S::one() / (S::one() - self.beta1_t);
        let bc2 = S::one() / (S::one() - self.beta2_t);
        let one = S::one();

        for (i, (param, grad)) in params.iter_mut().zip(grads).enumerate() {
            contract!(self.m[i].len() == param.len(), "param {i} changed shape");
            if let Some(g) = grad {
                contract!(
                    g.shape() == param.shape(),
                    "param {i} is {:?} but grad is {:?}",
                    param.shape(),
                    g.shape()
                );
            }
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            match grad {
                Some(g) => {
                    for (((pv, mv), vv), &gv) in
                        param.data_mut().iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g.data())
                    {
                        *mv = self.beta1 * *mv + (one - self.beta1) * gv;
                        *vv = self.beta2 * *vv + (one - self.beta2) * gv * gv;
                        let m_hat = *mv * bc1;
                        let v_hat = *vv * bc2;
                        *pv -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
                    }
                }
                None => {
                    for ((pv, mv), vv) in
                        param.data_mut().iter_mut().zip(m.iter_mut()).zip(v.iter_mut())
                    {
                        *mv = self.beta1 * *mv;
                        *vv = self.beta2 * *vv;
                        let m_hat = *mv * bc1;
                        let v_hat = *vv * bc2;
                        *pv -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        // With g=1: m_hat = v_hat = 1, so the step is lr / (1 + eps).
        let mut adam = Adam::new(0.1);
        let mut p = Tensor::from_vec(1, 1, vec![1.0f64]).unwrap();
        let g = Tensor::from_vec(1, 1, vec![1.0]).unwrap();
        adam.step(&mut [&mut p], &[Some(&g)]).unwrap();
        let expected = 1.0 - 0.1 / (1.0 + 1e-8);
        assert!((p.data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_keeps_unit_ratio() {
        // Bias correction makes m_hat = v_hat = 1 at every step for g=1.
        let mut adam = Adam::new(0.01);
        let mut p = Tensor::from_vec(1, 1, vec![0.0f64]).unwrap();
        let g = Tensor::from_vec(1, 1, vec![1.0]).unwrap();
        for _ in 0..5 {
            adam.step(&mut [&mut p], &[Some(&g)]).unwrap();
        }
        let expected = -5.0 * 0.01 / (1.0 + 1e-8);
        assert!((p.data()[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn descends_a_quadratic() {
        // Minimize (p - 3)^2; gradient is 2(p - 3).
        let mut adam = Adam::new(0.05);
        let mut p = Tensor::from_vec(1, 1, vec![0.0f64]).unwrap();
        for _ in 0..2000 {
            let g = Tensor::from_vec(1, 1, vec![2.0 * (p.data()[0] - 3.0)]).unwrap();
            adam.step(&mut [&mut p], &[Some(&g)]).unwrap();
        }
        assert!((p.data()[0] - 3.0).abs() < 1e-3, "ended at {}", p.data()[0]);
    }

    #[test]
    fn missing_gradient_decays_momentum() {
        let mut adam = Adam::new(0.1);
        let mut p = Tensor::from_vec(1, 1, vec![1.0f64]).unwrap();
        let g = Tensor::from_vec(1, 1, vec![1.0]).unwrap();
        adam.step(&mut [&mut p], &[Some(&g)]).unwrap();
        let after_first = p.data()[0];
        adam.step(&mut [&mut p], &[None]).unwrap();
        // Momentum keeps moving the parameter in the same direction.
        assert!(p.data()[0] < after_first);
    }

    #[test]
    fn shape_changes_are_rejected() {
        let mut adam = Adam::new(0.1);
        let mut p = Tensor::from_vec(1, 2, vec![1.0f64, 2.0]).unwrap();
        let g = Tensor::from_vec(1, 2, vec![1.0, 1.0]).unwrap();
        adam.step(&mut [&mut p], &[Some(&g)]).unwrap();
        let mut q = Tensor::from_vec(1, 3, vec![0.0; 3]).unwrap();
        assert!(adam.step(&mut [&mut q], &[None]).is_err());
    }
}
