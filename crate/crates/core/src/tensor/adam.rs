//! Adam optimizer with bias correction.

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Per-parameter first/second moment estimates plus the shared step counter.
/// Moment arrays are zero-initialized and aligned with the parameter list
/// order they were created from.
pub struct AdamState<S: Scalar> {
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
    t: u64,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(params: &[Tensor<S>]) -> Self {
        AdamState {
            m: params.iter().map(|p| vec![S::zero(); p.numel()]).collect(),
            v: params.iter().map(|p| vec![S::zero(); p.numel()]).collect(),
            t: 0,
        }
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn moments(&self) -> (&[Vec<S>], &[Vec<S>]) {
        (&self.m, &self.v)
    }

    /// Rebuild state from checkpointed moments.
    pub fn restore(m: Vec<Vec<S>>, v: Vec<Vec<S>>, t: u64) -> Self {
        assert_eq!(m.len(), v.len());
        AdamState { m, v, t }
    }

    /// One Adam update over `params` using the gradients stored in their
    /// grad slots. Deterministic; errors if any parameter has no gradient.
    pub fn step(&mut self, params: &[Tensor<S>], cfg: &AdamConfig) -> Result<()> {
        assert_eq!(params.len(), self.m.len(), "optimizer state does not match parameter list");
        self.t += 1;
        let b1 = S::from_f64(cfg.beta1);
        let b2 = S::from_f64(cfg.beta2);
        let one_m_b1 = S::from_f64(1.0 - cfg.beta1);
        let one_m_b2 = S::from_f64(1.0 - cfg.beta2);
        let bc1 = S::from_f64(1.0 / (1.0 - cfg.beta1.powi(self.t as i32)));
        let bc2 = S::from_f64(1.0 / (1.0 - cfg.beta2.powi(self.t as i32)));
        let lr = S::from_f64(cfg.lr);
        let eps = S::from_f64(cfg.eps);

        for (i, p) in params.iter().enumerate() {
            let mut d = p.inner.borrow_mut();
            let grad = match &d.grad {
                Some(g) => g.clone(),
                None => {
                    return Err(Error::Autodiff(format!(
                        "adam_step: parameter {i} has no gradient (run backward first)"
                    )))
                }
            };
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            for (((pv, &g), mv), vv) in
                d.data.iter_mut().zip(&grad).zip(m.iter_mut()).zip(v.iter_mut())
            {
                *mv = b1 * *mv + one_m_b1 * g;
                *vv = b2 * *vv + one_m_b2 * g * g;
                let mhat = *mv * bc1;
                let vhat = *vv * bc2;
                *pv = *pv - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_sign() {
        let p = Tensor::<f64>::from_f64(&[1], &[0.5], true);
        p.accumulate_grad(&[0.3]);
        let mut st = AdamState::new(std::slice::from_ref(&p));
        st.step(&[p.clone()], &AdamConfig::with_lr(0.01)).unwrap();
        // bias-corrected moments reduce to g/|g| on step 1
        assert!((p.data()[0] - (0.5 - 0.01)).abs() < 1e-6);
    }

    #[test]
    fn zero_grad_leaves_params_unchanged() {
        let p = Tensor::<f64>::from_f64(&[3], &[1.0, -2.0, 0.25], true);
        p.accumulate_grad(&[0.0, 0.0, 0.0]);
        let mut st = AdamState::new(std::slice::from_ref(&p));
        st.step(&[p.clone()], &AdamConfig::with_lr(0.1)).unwrap();
        assert_eq!(p.data(), vec![1.0, -2.0, 0.25]);
        assert_eq!(st.t(), 1);
    }

    #[test]
    fn missing_grad_is_an_error() {
        let p = Tensor::<f64>::from_f64(&[1], &[1.0], true);
        let mut st = AdamState::new(std::slice::from_ref(&p));
        assert!(st.step(&[p], &AdamConfig::with_lr(0.1)).is_err());
    }

    #[test]
    fn converges_on_quadratic_and_matches_scalar_recurrence() {
        // Independent oracle: the Adam recurrence run on plain f64 scalars.
        let (lr, b1, b2, eps) = (0.1, 0.9, 0.999, 1e-8);
        let mut w_ref = 0.0f64;
        let (mut m, mut v) = (0.0f64, 0.0f64);
        for t in 1..=100u32 {
            let g = 2.0 * (w_ref - 3.0);
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mhat = m / (1.0 - b1.powi(t as i32));
            let vhat = v / (1.0 - b2.powi(t as i32));
            w_ref -= lr * mhat / (vhat.sqrt() + eps);
        }
        assert!((w_ref - 3.0).abs() < 0.1, "oracle did not converge: {w_ref}");

        let p = Tensor::<f64>::from_f64(&[1], &[0.0], true);
        let mut st = AdamState::new(std::slice::from_ref(&p));
        for _ in 0..100 {
            let g = 2.0 * (p.data()[0] - 3.0);
            p.zero_grad();
            p.accumulate_grad(&[g]);
            st.step(std::slice::from_ref(&p), &AdamConfig::with_lr(lr)).unwrap();
        }
        assert!((p.data()[0] - w_ref).abs() < 1e-12);
        assert!((p.data()[0] - 3.0).abs() < 0.1);
    }
}
