//! Batch normalization over B x C x H x W (per-channel statistics).

use super::{Node, Phase, Scalar, Tape, Tensor};
use crate::error::{Error, Result};

/// Normalization epsilon (added to the biased variance).
pub const BN_EPS: f64 = 1e-5;
/// Running-statistics update momentum: `run = (1-m)*run + m*batch`.
pub const BN_MOMENTUM: f64 = 0.1;

impl<S: Scalar> Tape<S> {
    /// Batch normalization.
    ///
    /// Train phase normalizes with batch statistics (biased variance) and
    /// updates `running_mean`/`running_var` in place; eval phase uses the
    /// running statistics. Differentiable w.r.t. `input`, `gamma`, `beta` —
    /// in train phase through the batch statistics themselves.
    pub fn batchnorm2d(
        &self,
        input: &Tensor<S>,
        gamma: &Tensor<S>,
        beta: &Tensor<S>,
        running_mean: &Tensor<S>,
        running_var: &Tensor<S>,
        phase: Phase,
    ) -> Result<Tensor<S>> {
        let xs = input.shape();
        if xs.len() != 4 {
            return Err(Error::config(format!("batchnorm2d: input must be 4-D, got {xs:?}")));
        }
        let (b, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        for (name, t) in [
            ("gamma", gamma),
            ("beta", beta),
            ("running_mean", running_mean),
            ("running_var", running_var),
        ] {
            if t.shape() != vec![c] {
                return Err(Error::config(format!(
                    "batchnorm2d: {name} shape {:?} does not match channel dimension {c}",
                    t.shape()
                )));
            }
        }
        let n = b * h * w;
        if phase == Phase::Train && n < 2 {
            return Err(Error::config(
                "batchnorm2d: train mode requires at least 2 values per channel",
            ));
        }

        let plane = h * w;
        let mut out = vec![S::zero(); input.numel()];
        let mut xhat = vec![S::zero(); input.numel()];
        let mut inv_std = vec![S::zero(); c];
        {
            let xd = input.inner.borrow();
            let gd = gamma.inner.borrow();
            let bd = beta.inner.borrow();
            for ci in 0..c {
                let (mean, var) = match phase {
                    Phase::Train => {
                        // two-pass mean/variance in f64 for stability
                        let mut sum = 0.0f64;
                        for bi in 0..b {
                            let sl = &xd.data[(bi * c + ci) * plane..][..plane];
                            for &v in sl {
                                sum += v.as_f64();
                            }
                        }
                        let mean = sum / n as f64;
                        let mut ssq = 0.0f64;
                        for bi in 0..b {
                            let sl = &xd.data[(bi * c + ci) * plane..][..plane];
                            for &v in sl {
                                let d = v.as_f64() - mean;
                                ssq += d * d;
                            }
                        }
                        (mean, ssq / n as f64)
                    }
                    Phase::Eval => {
                        let rm = running_mean.inner.borrow().data[ci].as_f64();
                        let rv = running_var.inner.borrow().data[ci].as_f64();
                        (rm, rv)
                    }
                };
                let istd = 1.0 / (var + BN_EPS).sqrt();
                inv_std[ci] = S::from_f64(istd);
                let (g, be) = (gd.data[ci], bd.data[ci]);
                let mean_s = S::from_f64(mean);
                let istd_s = S::from_f64(istd);
                for bi in 0..b {
                    let base = (bi * c + ci) * plane;
                    for k in 0..plane {
                        let xh = (xd.data[base + k] - mean_s) * istd_s;
                        xhat[base + k] = xh;
                        out[base + k] = g * xh + be;
                    }
                }
                if phase == Phase::Train {
                    let mom = BN_MOMENTUM;
                    let mut rmd = running_mean.inner.borrow_mut();
                    let mut rvd = running_var.inner.borrow_mut();
                    rmd.data[ci] = S::from_f64(rmd.data[ci].as_f64() * (1.0 - mom) + mom * mean);
                    rvd.data[ci] = S::from_f64(rvd.data[ci].as_f64() * (1.0 - mom) + mom * var);
                }
            }
        }
        let out_t = Tensor::new(&xs, out, false);
        self.check_finite("batchnorm2d", &out_t)?;
        if self.tracks(&[input, gamma, beta]) {
            self.record(
                &out_t,
                BatchNormNode {
                    x: input.clone(),
                    gamma: gamma.clone(),
                    beta: beta.clone(),
                    out: out_t.clone(),
                    xhat,
                    inv_std,
                    phase,
                },
            );
        }
        Ok(out_t)
    }
}

struct BatchNormNode<S: Scalar> {
    x: Tensor<S>,
    gamma: Tensor<S>,
    beta: Tensor<S>,
    out: Tensor<S>,
    xhat: Vec<S>,
    inv_std: Vec<S>,
    phase: Phase,
}

impl<S: Scalar> Node<S> for BatchNormNode<S> {
    fn name(&self) -> &'static str {
        "batchnorm2d"
    }

    fn backward(&self) -> Result<()> {
        let og = match self.out.inner.borrow().grad.clone() {
            Some(g) => g,
            None => return Ok(()),
        };
        let xs = self.x.shape();
        let (b, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let plane = h * w;
        let n = (b * plane) as f64;
        let gd = self.gamma.data();

        let mut dgamma = vec![S::zero(); c];
        let mut dbeta = vec![S::zero(); c];
        let mut dx = if self.x.needs_grad() { vec![S::zero(); self.x.numel()] } else { Vec::new() };

        for ci in 0..c {
            let mut s1 = 0.0f64; // sum of dy
            let mut s2 = 0.0f64; // sum of dy * xhat
            for bi in 0..b {
                let base = (bi * c + ci) * plane;
                for k in 0..plane {
                    let dy = og[base + k].as_f64();
                    s1 += dy;
                    s2 += dy * self.xhat[base + k].as_f64();
                }
            }
            dbeta[ci] = S::from_f64(s1);
            dgamma[ci] = S::from_f64(s2);
            if self.x.needs_grad() {
                let gi = gd[ci].as_f64() * self.inv_std[ci].as_f64();
                match self.phase {
                    Phase::Train => {
                        let m1 = s1 / n;
                        let m2 = s2 / n;
                        for bi in 0..b {
                            let base = (bi * c + ci) * plane;
                            for k in 0..plane {
                                let dy = og[base + k].as_f64();
                                let xh = self.xhat[base + k].as_f64();
                                dx[base + k] = S::from_f64(gi * (dy - m1 - xh * m2));
                            }
                        }
                    }
                    Phase::Eval => {
                        for bi in 0..b {
                            let base = (bi * c + ci) * plane;
                            for k in 0..plane {
                                dx[base + k] = S::from_f64(gi * og[base + k].as_f64());
                            }
                        }
                    }
                }
            }
        }

        if self.x.needs_grad() {
            self.x.accumulate_grad(&dx);
        }
        if self.gamma.needs_grad() {
            self.gamma.accumulate_grad(&dgamma);
        }
        if self.beta.needs_grad() {
            self.beta.accumulate_grad(&dbeta);
        }
        Ok(())
    }

    fn written(&self) -> Vec<Tensor<S>> {
        vec![self.x.clone(), self.gamma.clone(), self.beta.clone()]
    }
}
