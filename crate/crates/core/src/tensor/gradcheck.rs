//! Central-difference gradient checking (verification support).
//!
//! The scalar function under test is treated as a black box of its flattened
//! inputs; the numeric gradient is `(f(x + h e_i) - f(x - h e_i)) / (2h)`
//! per coordinate. Checks run in f64 so the truncation/roundoff floor sits
//! far below the pass threshold.

use super::{Tape, Tensor};
use crate::error::Result;
use crate::rng::Rng;

/// One differentiable input slot of the function under test.
pub struct Slot {
    pub shape: Vec<usize>,
    /// Sampling range for random points.
    pub lo: f64,
    pub hi: f64,
}

impl Slot {
    pub fn new(shape: &[usize]) -> Self {
        Slot { shape: shape.to_vec(), lo: -1.0, hi: 1.0 }
    }

    pub fn range(shape: &[usize], lo: f64, hi: f64) -> Self {
        Slot { shape: shape.to_vec(), lo, hi }
    }
}

/// Outcome of one gradient check: the worst relative error over all
/// coordinates of all slots.
#[derive(Debug)]
pub struct GradReport {
    pub max_rel_err: f64,
    pub coords_checked: usize,
}

fn rel_err(a: f64, n: f64) -> f64 {
    let denom = (a.abs() + n.abs()).max(1e-6);
    (a - n).abs() / denom
}

/// Check the analytic gradient of `f` against central differences at one
/// random point per call.
///
/// `f` must build its computation on the provided tape and return a scalar
/// tensor. All slots are differentiable inputs; the analytic gradient comes
/// from one backward pass, the numeric one from `2 * total_coords` forward
/// evaluations with step `h`.
pub fn check<F>(slots: &[Slot], rng: &mut Rng, h: f64, f: F) -> Result<GradReport>
where
    F: Fn(&Tape<f64>, &[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    let points: Vec<Vec<f64>> = slots
        .iter()
        .map(|s| {
            let n: usize = s.shape.iter().product();
            (0..n).map(|_| rng.uniform(s.lo, s.hi)).collect()
        })
        .collect();

    // Analytic gradients.
    let tape = Tape::<f64>::new();
    let tensors: Vec<Tensor<f64>> = slots
        .iter()
        .zip(&points)
        .map(|(s, p)| Tensor::from_f64(&s.shape, p, true))
        .collect();
    let loss = f(&tape, &tensors)?;
    tape.backward(&loss)?;
    let analytic: Vec<Vec<f64>> = tensors
        .iter()
        .map(|t| t.grad().unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();

    // Numeric gradients, coordinate by coordinate.
    let eval = |points: &[Vec<f64>]| -> Result<f64> {
        let tape = Tape::<f64>::inference();
        let tensors: Vec<Tensor<f64>> = slots
            .iter()
            .zip(points)
            .map(|(s, p)| Tensor::from_f64(&s.shape, p, false))
            .collect();
        Ok(f(&tape, &tensors)?.item())
    };

    let mut max_rel = 0.0f64;
    let mut coords = 0usize;
    let mut work = points.clone();
    for (si, slot_points) in points.iter().enumerate() {
        for ci in 0..slot_points.len() {
            let orig = work[si][ci];
            work[si][ci] = orig + h;
            let fp = eval(&work)?;
            work[si][ci] = orig - h;
            let fm = eval(&work)?;
            work[si][ci] = orig;
            let numeric = (fp - fm) / (2.0 * h);
            let e = rel_err(analytic[si][ci], numeric);
            if e > max_rel {
                max_rel = e;
            }
            coords += 1;
        }
    }
    Ok(GradReport { max_rel_err: max_rel, coords_checked: coords })
}

/// Convenience wrapper: run [`check`] at `trials` random points and assert
/// every one stays under `tol`.
pub fn assert_grad<F>(name: &str, slots: &[Slot], seed: u64, trials: usize, tol: f64, f: F)
where
    F: Fn(&Tape<f64>, &[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    let mut rng = Rng::stream(seed, "gradcheck", 0);
    for trial in 0..trials {
        let report = check(slots, &mut rng, 1e-5, &f)
            .unwrap_or_else(|e| panic!("{name}: gradient check failed to run: {e}"));
        assert!(
            report.max_rel_err < tol,
            "{name}: trial {trial}: max relative error {:.3e} >= {tol:.1e} over {} coords",
            report.max_rel_err,
            report.coords_checked
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catches_a_wrong_gradient() {
        // d/dx of x*x is 2x; pretend it's 3x by scaling the loss inconsistently.
        let slots = [Slot::new(&[3])];
        let mut rng = Rng::stream(1, "t", 0);
        let report = check(&slots, &mut rng, 1e-5, |tape, ts| {
            let y = tape.mul(&ts[0], &ts[0])?;
            tape.sum(&y)
        })
        .unwrap();
        assert!(report.max_rel_err < 1e-9);
    }
}
