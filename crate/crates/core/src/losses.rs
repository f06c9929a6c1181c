//! Training objectives: soft Dice, BCE, focal, the generator hybrid loss,
//! the region-guided discriminator loss and its gradient penalty.
//!
//! The discriminator objective averages two soft-Dice terms (realism map vs
//! ground truth, on both real and generated masks) with two BCE terms
//! (map vs all-ones / all-zeros); ablation variants reweight or replace the
//! pairs. Probabilities are clamped to `[1e-7, 1 - 1e-7]` before logarithms
//! so saturated sigmoids keep every loss finite.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Discriminator;
use crate::rng::Rng;
use crate::tensor::{Scalar, Tape, Tensor};

/// Clamp bound applied to probabilities before `ln`.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_dice: f64,
    pub lambda_adv: f64,
    pub lambda_gp: f64,
    pub epsilon: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda_dice: 1.0, lambda_adv: 0.1, lambda_gp: 1.0, epsilon: 1e-8 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_dice < 0.0 || self.lambda_adv < 0.0 || self.lambda_gp < 0.0 {
            return Err(Error::config("loss weights must be >= 0"));
        }
        if self.epsilon <= 0.0 {
            return Err(Error::config("dice epsilon must be > 0"));
        }
        Ok(())
    }
}

/// Discriminator supervision variants compared in the loss ablation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DiscLossVariant {
    DiceBceEqual,
    BceOnly,
    DiceOnly,
    DiceBceWeighted { w_dice: f64, w_bce: f64 },
    FocalBce { alpha: f64, gamma: f64 },
}

impl Default for DiscLossVariant {
    fn default() -> Self {
        DiscLossVariant::DiceBceEqual
    }
}

impl DiscLossVariant {
    pub fn validate(&self) -> Result<()> {
        match *self {
            DiscLossVariant::DiceBceWeighted { w_dice, w_bce } => {
                if w_dice < 0.0 || w_bce < 0.0 || (w_dice == 0.0 && w_bce == 0.0) {
                    return Err(Error::config(
                        "dice_bce_weighted weights must be >= 0 and not all zero",
                    ));
                }
            }
            DiscLossVariant::FocalBce { alpha, gamma } => {
                if !(0.0..=1.0).contains(&alpha) || gamma < 0.0 {
                    return Err(Error::config("focal_bce requires alpha in [0,1] and gamma >= 0"));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Short identifier used in ablation reports.
    pub fn label(&self) -> String {
        match *self {
            DiscLossVariant::DiceBceEqual => "dice_bce_equal".into(),
            DiscLossVariant::BceOnly => "bce_only".into(),
            DiscLossVariant::DiceOnly => "dice_only".into(),
            DiscLossVariant::DiceBceWeighted { w_dice, w_bce } => {
                format!("dice{w_dice}_bce{w_bce}")
            }
            DiscLossVariant::FocalBce { .. } => "focal_bce".into(),
        }
    }

    /// The variant set exercised by the ablation harness.
    pub fn ablation_set() -> Vec<DiscLossVariant> {
        vec![
            DiscLossVariant::BceOnly,
            DiscLossVariant::DiceOnly,
            DiscLossVariant::DiceBceEqual,
            DiscLossVariant::DiceBceWeighted { w_dice: 0.75, w_bce: 0.25 },
            DiscLossVariant::DiceBceWeighted { w_dice: 0.25, w_bce: 0.75 },
            DiscLossVariant::FocalBce { alpha: 0.25, gamma: 2.0 },
        ]
    }
}

/// Soft Dice loss `1 - 2*sum(g*p) / (sum(g) + sum(p) + eps)`.
///
/// Accepts soft predictions; value lies in `[0, 1]` up to the epsilon term.
pub fn dice_loss<S: Scalar>(
    tape: &Tape<S>,
    y_g: &Tensor<S>,
    y_p: &Tensor<S>,
    eps: f64,
) -> Result<Tensor<S>> {
    if y_g.shape() != y_p.shape() {
        return Err(Error::config(format!(
            "dice_loss: shape mismatch {:?} vs {:?}",
            y_g.shape(),
            y_p.shape()
        )));
    }
    let inter = tape.sum(&tape.mul(y_g, y_p)?)?;
    let denom = tape.add_scalar(&tape.add(&tape.sum(y_g)?, &tape.sum(y_p)?)?, S::from_f64(eps))?;
    let ratio = tape.div(&tape.mul_scalar(&inter, S::from_f64(2.0))?, &denom)?;
    tape.add_scalar(&tape.mul_scalar(&ratio, S::from_f64(-1.0))?, S::one())
}

fn clamped<S: Scalar>(tape: &Tape<S>, pred: &Tensor<S>) -> Result<Tensor<S>> {
    tape.clamp(pred, PROB_CLAMP, 1.0 - PROB_CLAMP)
}

fn one_minus<S: Scalar>(tape: &Tape<S>, t: &Tensor<S>) -> Result<Tensor<S>> {
    tape.add_scalar(&tape.mul_scalar(t, S::from_f64(-1.0))?, S::one())
}

/// Mean binary cross-entropy against a same-shape target tensor.
pub fn bce_loss<S: Scalar>(
    tape: &Tape<S>,
    pred: &Tensor<S>,
    target: &Tensor<S>,
) -> Result<Tensor<S>> {
    if pred.shape() != target.shape() {
        return Err(Error::config(format!(
            "bce_loss: shape mismatch {:?} vs {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let p = clamped(tape, pred)?;
    let pos = tape.mul(target, &tape.ln(&p)?)?;
    let neg = tape.mul(&one_minus(tape, target)?, &tape.ln(&one_minus(tape, &p)?)?)?;
    tape.mul_scalar(&tape.mean(&tape.add(&pos, &neg)?)?, S::from_f64(-1.0))
}

/// Mean binary cross-entropy against a constant 0/1 target.
pub fn bce_const<S: Scalar>(tape: &Tape<S>, pred: &Tensor<S>, target: f64) -> Result<Tensor<S>> {
    let p = clamped(tape, pred)?;
    let inner = if target >= 0.5 { tape.ln(&p)? } else { tape.ln(&one_minus(tape, &p)?)? };
    tape.mul_scalar(&tape.mean(&inner)?, S::from_f64(-1.0))
}

/// Focal loss `mean(-alpha_t (1 - p_t)^gamma ln(p_t))` with binary targets.
pub fn focal_loss<S: Scalar>(
    tape: &Tape<S>,
    pred: &Tensor<S>,
    target: &Tensor<S>,
    alpha: f64,
    gamma: f64,
) -> Result<Tensor<S>> {
    if pred.shape() != target.shape() {
        return Err(Error::config(format!(
            "focal_loss: shape mismatch {:?} vs {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let p = clamped(tape, pred)?;
    // p_t = t*p + (1-t)*(1-p)
    let pt = tape.add(
        &tape.mul(target, &p)?,
        &tape.mul(&one_minus(tape, target)?, &one_minus(tape, &p)?)?,
    )?;
    // alpha_t = t*(2a-1) + (1-a)
    let at = tape.add_scalar(
        &tape.mul_scalar(target, S::from_f64(2.0 * alpha - 1.0))?,
        S::from_f64(1.0 - alpha),
    )?;
    let focus = tape.powf(&one_minus(tape, &pt)?, gamma)?;
    let term = tape.mul(&at, &tape.mul(&focus, &tape.ln(&pt)?)?)?;
    tape.mul_scalar(&tape.mean(&term)?, S::from_f64(-1.0))
}

/// Generator objective `lambda_dice * Dice(y_g, y_p) + lambda_adv * BCE(D(y_p), 1)`.
///
/// `d_on_fake` is the discriminator's map on the *live* (non-detached)
/// prediction so adversarial gradients reach the generator through it; it is
/// not needed (and not consumed) when `lambda_adv` is zero, which reduces
/// the objective to the plain U-Net Dice baseline.
pub fn generator_loss<S: Scalar>(
    tape: &Tape<S>,
    y_g: &Tensor<S>,
    y_p: &Tensor<S>,
    d_on_fake: Option<&Tensor<S>>,
    w: &LossWeights,
) -> Result<Tensor<S>> {
    w.validate()?;
    let dice = dice_loss(tape, y_g, y_p, w.epsilon)?;
    let dice_term = tape.mul_scalar(&dice, S::from_f64(w.lambda_dice))?;
    if w.lambda_adv == 0.0 {
        return Ok(dice_term);
    }
    let d = d_on_fake.ok_or_else(|| {
        Error::config("generator_loss: lambda_adv > 0 requires the discriminator map")
    })?;
    let adv = bce_const(tape, d, 1.0)?;
    tape.add(&dice_term, &tape.mul_scalar(&adv, S::from_f64(w.lambda_adv))?)
}

/// Region-guided discriminator objective (gradient penalty added separately).
///
/// Base form averages `Dice(y_g, D(y_g))`, `Dice(y_g, D(y_p))`,
/// `BCE(D(y_g), 1)` and `BCE(D(y_p), 0)`; variants reweight the pair means
/// or swap the Dice pair for focal terms.
pub fn discriminator_loss<S: Scalar>(
    tape: &Tape<S>,
    y_g: &Tensor<S>,
    d_on_real: &Tensor<S>,
    d_on_fake: &Tensor<S>,
    variant: DiscLossVariant,
) -> Result<Tensor<S>> {
    variant.validate()?;
    if y_g.shape() != d_on_real.shape() || y_g.shape() != d_on_fake.shape() {
        return Err(Error::config(format!(
            "discriminator_loss: shape mismatch gt {:?}, real {:?}, fake {:?}",
            y_g.shape(),
            d_on_real.shape(),
            d_on_fake.shape()
        )));
    }
    let eps = LossWeights::default().epsilon;
    let half = S::from_f64(0.5);
    let bce_pair = |tape: &Tape<S>| -> Result<Tensor<S>> {
        let b1 = bce_const(tape, d_on_real, 1.0)?;
        let b2 = bce_const(tape, d_on_fake, 0.0)?;
        tape.mul_scalar(&tape.add(&b1, &b2)?, half)
    };
    match variant {
        DiscLossVariant::DiceBceEqual => {
            let d1 = dice_loss(tape, y_g, d_on_real, eps)?;
            let d2 = dice_loss(tape, y_g, d_on_fake, eps)?;
            let b1 = bce_const(tape, d_on_real, 1.0)?;
            let b2 = bce_const(tape, d_on_fake, 0.0)?;
            let sum = tape.add(&tape.add(&d1, &d2)?, &tape.add(&b1, &b2)?)?;
            tape.mul_scalar(&sum, S::from_f64(0.25))
        }
        DiscLossVariant::BceOnly => bce_pair(tape),
        DiscLossVariant::DiceOnly => {
            let d1 = dice_loss(tape, y_g, d_on_real, eps)?;
            let d2 = dice_loss(tape, y_g, d_on_fake, eps)?;
            tape.mul_scalar(&tape.add(&d1, &d2)?, half)
        }
        DiscLossVariant::DiceBceWeighted { w_dice, w_bce } => {
            let d1 = dice_loss(tape, y_g, d_on_real, eps)?;
            let d2 = dice_loss(tape, y_g, d_on_fake, eps)?;
            let dice_mean = tape.mul_scalar(&tape.add(&d1, &d2)?, half)?;
            let bce_mean = bce_pair(tape)?;
            tape.add(
                &tape.mul_scalar(&dice_mean, S::from_f64(w_dice))?,
                &tape.mul_scalar(&bce_mean, S::from_f64(w_bce))?,
            )
        }
        DiscLossVariant::FocalBce { alpha, gamma } => {
            let f1 = focal_loss(tape, d_on_real, y_g, alpha, gamma)?;
            let f2 = focal_loss(tape, d_on_fake, y_g, alpha, gamma)?;
            let b1 = bce_const(tape, d_on_real, 1.0)?;
            let b2 = bce_const(tape, d_on_fake, 0.0)?;
            let sum = tape.add(&tape.add(&f1, &f2)?, &tape.add(&b1, &b2)?)?;
            tape.mul_scalar(&sum, S::from_f64(0.25))
        }
    }
}

/// Gradient penalty over an arbitrary forward map.
///
/// Estimates the squared input-sensitivity of `forward` at the real masks by
/// central finite differences along `k_dirs` random unit-norm direction
/// fields: `mean_batch sum_pixels ((f(y+ev) - f(y-ev)) / 2e)^2 / k_dirs`.
/// The two evaluations are ordinary recorded forwards, so the result is
/// differentiable w.r.t. the map's parameters; the probe point `y_g` itself
/// receives no gradient.
pub fn gradient_penalty_with<S, F>(
    tape: &Tape<S>,
    forward: F,
    y_g: &Tensor<S>,
    rng: &mut Rng,
    eps_fd: f64,
    k_dirs: usize,
) -> Result<Tensor<S>>
where
    S: Scalar,
    F: Fn(&Tape<S>, &Tensor<S>) -> Result<Tensor<S>>,
{
    if k_dirs == 0 {
        return Err(Error::config("gradient_penalty: k_dirs must be >= 1"));
    }
    let shape = y_g.shape();
    let batch = shape.first().copied().unwrap_or(1);
    let per = y_g.numel() / batch.max(1);
    let base = y_g.data_f64();

    let mut total: Option<Tensor<S>> = None;
    for _ in 0..k_dirs {
        // unit-norm direction field per batch sample
        let mut v = vec![0.0f64; base.len()];
        for bi in 0..batch {
            let sl = &mut v[bi * per..(bi + 1) * per];
            let mut norm_sq = 0.0;
            for x in sl.iter_mut() {
                *x = rng.normal();
                norm_sq += *x * *x;
            }
            let norm = norm_sq.sqrt().max(1e-12);
            for x in sl.iter_mut() {
                *x /= norm;
            }
        }
        let plus: Vec<f64> = base.iter().zip(&v).map(|(&y, &d)| y + eps_fd * d).collect();
        let minus: Vec<f64> = base.iter().zip(&v).map(|(&y, &d)| y - eps_fd * d).collect();
        let xp = Tensor::from_f64(&shape, &plus, false);
        let xm = Tensor::from_f64(&shape, &minus, false);
        let op = forward(tape, &xp)?;
        let om = forward(tape, &xm)?;
        let diff = tape.mul_scalar(&tape.sub(&op, &om)?, S::from_f64(1.0 / (2.0 * eps_fd)))?;
        let term = tape.sum(&tape.mul(&diff, &diff)?)?;
        total = Some(match total {
            Some(t) => tape.add(&t, &term)?,
            None => term,
        });
    }
    tape.mul_scalar(&total.unwrap(), S::from_f64(1.0 / (batch.max(1) * k_dirs) as f64))
}

/// Gradient penalty of a discriminator at the real masks.
pub fn gradient_penalty<S: Scalar>(
    tape: &Tape<S>,
    disc: &Discriminator<S>,
    y_g: &Tensor<S>,
    rng: &mut Rng,
    eps_fd: f64,
    k_dirs: usize,
) -> Result<Tensor<S>> {
    gradient_penalty_with(tape, |t, x| disc.forward(t, x), y_g, rng, eps_fd, k_dirs)
}

#[cfg(test)]
mod tests {
    use super::*;

    type T64 = Tape<f64>;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, data, false)
    }

    const LN2: f64 = std::f64::consts::LN_2;

    #[test]
    fn dice_identical_masks_is_near_zero() {
        let tape = T64::new();
        let m = t(&[1, 1, 2, 2], &[1.0, 0.0, 1.0, 1.0]);
        let loss = dice_loss(&tape, &m, &m, 1e-8).unwrap().item();
        assert!(loss >= 0.0 && loss < 1e-6, "{loss}");
    }

    #[test]
    fn dice_disjoint_masks_is_one() {
        let tape = T64::new();
        let a = t(&[4], &[1.0, 1.0, 0.0, 0.0]);
        let b = t(&[4], &[0.0, 0.0, 1.0, 1.0]);
        let loss = dice_loss(&tape, &a, &b, 1e-8).unwrap().item();
        assert!((loss - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dice_half_overlap_case() {
        // |g|=4, |p|=4, overlap 2 -> 1 - 4/8 = 0.5
        let tape = T64::new();
        let g = t(&[8], &[1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        let p = t(&[8], &[1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        let loss = dice_loss(&tape, &g, &p, 1e-8).unwrap().item();
        assert!((loss - 0.5).abs() < 1e-8);
    }

    #[test]
    fn dice_symmetric_when_eps_is_zero() {
        let tape = T64::new();
        let a = t(&[6], &[1.0, 0.0, 1.0, 0.3, 0.9, 0.0]);
        let b = t(&[6], &[0.0, 1.0, 1.0, 0.8, 0.1, 0.2]);
        let ab = dice_loss(&tape, &a, &b, 0.0).unwrap().item();
        let ba = dice_loss(&tape, &b, &a, 0.0).unwrap().item();
        assert_eq!(ab, ba);
    }

    #[test]
    fn bce_reference_values() {
        let tape = T64::new();
        let half = t(&[4], &[0.5; 4]);
        let one = t(&[4], &[1.0; 4]);
        let v = bce_loss(&tape, &half, &one).unwrap().item();
        assert!((v - LN2).abs() < 1e-12);

        let v = bce_const(&tape, &half, 1.0).unwrap().item();
        assert!((v - LN2).abs() < 1e-12);

        let exact = bce_loss(&tape, &one, &one).unwrap().item();
        assert!(exact.abs() < 1e-6, "{exact}"); // clamp leaves ~1e-7

        let q = t(&[3], &[0.25; 3]);
        let v = bce_const(&tape, &q, 0.0).unwrap().item();
        assert!((v + 0.75f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn generator_loss_composition() {
        let tape = T64::new();
        let g = t(&[1, 1, 2, 2], &[1.0, 0.0, 1.0, 0.0]);
        let d_half = t(&[1, 1, 2, 2], &[0.5; 4]);
        let w = LossWeights::default();
        let loss = generator_loss(&tape, &g, &g, Some(&d_half), &w).unwrap().item();
        assert!((loss - 0.1 * LN2).abs() < 1e-7, "{loss}");

        // lambda_adv = 0 reduces exactly to the dice loss
        let w0 = LossWeights { lambda_adv: 0.0, ..Default::default() };
        let p = t(&[1, 1, 2, 2], &[0.9, 0.2, 0.7, 0.1]);
        let reduced = generator_loss(&tape, &g, &p, None, &w0).unwrap().item();
        let dice = dice_loss(&tape, &g, &p, w0.epsilon).unwrap().item();
        assert_eq!(reduced, dice);
    }

    #[test]
    fn generator_loss_matches_scalar_reevaluation() {
        // independent re-evaluation with plain f64 arithmetic
        let tape = T64::new();
        let gv = [1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0];
        let pv = [0.8, 0.1, 0.3, 0.7, 0.9, 0.2, 0.1, 0.05, 0.6, 0.85, 0.15, 0.4, 0.3, 0.2, 0.95, 0.1];
        let dv = [0.3, 0.6, 0.2, 0.8, 0.5, 0.4, 0.7, 0.1, 0.9, 0.2, 0.3, 0.6, 0.5, 0.8, 0.4, 0.7];
        let w = LossWeights::default();

        let inter: f64 = gv.iter().zip(&pv).map(|(a, b)| a * b).sum();
        let dice = 1.0 - 2.0 * inter / (gv.iter().sum::<f64>() + pv.iter().sum::<f64>() + w.epsilon);
        let bce =
            -dv.iter().map(|&d: &f64| d.clamp(1e-7, 1.0 - 1e-7).ln()).sum::<f64>() / dv.len() as f64;
        let want = w.lambda_dice * dice + w.lambda_adv * bce;

        let got = generator_loss(
            &tape,
            &t(&[1, 1, 4, 4], &gv),
            &t(&[1, 1, 4, 4], &pv),
            Some(&t(&[1, 1, 4, 4], &dv)),
            &w,
        )
        .unwrap()
        .item();
        assert!((got - want).abs() < 1e-12, "got {got}, want {want}");
    }

    #[test]
    fn discriminator_loss_flat_half_maps() {
        // 4x4 mask with 4 foreground pixels; D outputs 0.5 everywhere:
        // dice terms 2/3 each, bce terms ln 2 each.
        let tape = T64::new();
        let mut gv = vec![0.0; 16];
        for i in 0..4 {
            gv[i] = 1.0;
        }
        let g = t(&[1, 1, 4, 4], &gv);
        let half = t(&[1, 1, 4, 4], &[0.5; 16]);
        let loss =
            discriminator_loss(&tape, &g, &half, &half, DiscLossVariant::DiceBceEqual)
                .unwrap()
                .item();
        let want = (2.0 / 3.0 + 2.0 / 3.0 + LN2 + LN2) / 4.0;
        assert!((loss - want).abs() < 1e-8, "got {loss}, want {want}");
        assert!((want - 0.6799).abs() < 1e-4);
    }

    #[test]
    fn discriminator_loss_perfect_discriminator_limit() {
        // all-ones ground truth: D(real)=y_g, D(fake)=0 gives (0+1+0+0)/4.
        let tape = T64::new();
        let g = t(&[1, 1, 2, 2], &[1.0; 4]);
        let zero = t(&[1, 1, 2, 2], &[0.0; 4]);
        let loss = discriminator_loss(&tape, &g, &g, &zero, DiscLossVariant::DiceBceEqual)
            .unwrap()
            .item();
        assert!((loss - 0.25).abs() < 1e-5, "{loss}");
    }

    #[test]
    fn discriminator_loss_bce_only_half() {
        let tape = T64::new();
        let g = t(&[4], &[1.0, 0.0, 0.0, 1.0]);
        let half = t(&[4], &[0.5; 4]);
        let loss =
            discriminator_loss(&tape, &g, &half, &half, DiscLossVariant::BceOnly).unwrap().item();
        assert!((loss - LN2).abs() < 1e-12);
    }

    #[test]
    fn discriminator_loss_weighted_composes() {
        let tape = T64::new();
        let g = t(&[4], &[1.0, 0.0, 0.0, 1.0]);
        let r = t(&[4], &[0.7, 0.2, 0.4, 0.9]);
        let f = t(&[4], &[0.3, 0.5, 0.2, 0.6]);
        let dice =
            discriminator_loss(&tape, &g, &r, &f, DiscLossVariant::DiceOnly).unwrap().item();
        let bce = discriminator_loss(&tape, &g, &r, &f, DiscLossVariant::BceOnly).unwrap().item();
        let w = discriminator_loss(
            &tape,
            &g,
            &r,
            &f,
            DiscLossVariant::DiceBceWeighted { w_dice: 0.75, w_bce: 0.25 },
        )
        .unwrap()
        .item();
        assert!((w - (0.75 * dice + 0.25 * bce)).abs() < 1e-12);
        let eq = discriminator_loss(&tape, &g, &r, &f, DiscLossVariant::DiceBceEqual)
            .unwrap()
            .item();
        assert!((eq - 0.5 * (dice + bce)).abs() < 1e-12);
    }

    #[test]
    fn discriminator_loss_bounded_and_finite() {
        let mut rng = Rng::from_seed(17);
        let upper = (2.0 + 2.0 * -(PROB_CLAMP.ln())) / 4.0 + 1e-9;
        for _ in 0..50 {
            let tape = T64::new();
            let gv: Vec<f64> = (0..16).map(|_| if rng.chance(0.4) { 1.0 } else { 0.0 }).collect();
            let rv: Vec<f64> = (0..16).map(|_| rng.next_f64()).collect();
            let fv: Vec<f64> = (0..16).map(|_| rng.next_f64()).collect();
            let loss = discriminator_loss(
                &tape,
                &t(&[16], &gv),
                &t(&[16], &rv),
                &t(&[16], &fv),
                DiscLossVariant::DiceBceEqual,
            )
            .unwrap()
            .item();
            assert!(loss.is_finite() && loss >= 0.0 && loss <= upper, "{loss}");
        }
    }

    #[test]
    fn focal_reference_values() {
        let tape = T64::new();
        let one = t(&[2], &[1.0; 2]);
        let exact = focal_loss(&tape, &one, &one, 0.25, 2.0).unwrap().item();
        assert!(exact.abs() < 1e-12, "{exact}"); // (1-p_t)^2 crushes the clamp residue

        let half = t(&[2], &[0.5; 2]);
        let v = focal_loss(&tape, &half, &one, 0.25, 2.0).unwrap().item();
        assert!((v - 0.25 * 0.25 * LN2).abs() < 1e-12);
        assert!((v - 0.0433).abs() < 1e-4);

        // gamma=0, alpha=0.5 halves BCE exactly
        let p = t(&[4], &[0.3, 0.8, 0.6, 0.2]);
        let tgt = t(&[4], &[0.0, 1.0, 1.0, 0.0]);
        let f = focal_loss(&tape, &p, &tgt, 0.5, 0.0).unwrap().item();
        let b = bce_loss(&tape, &p, &tgt).unwrap().item();
        assert!((f - 0.5 * b).abs() < 1e-15);
    }

    #[test]
    fn gradient_penalty_constant_map_is_zero() {
        let tape = T64::new();
        let y = t(&[2, 1, 2, 2], &[1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0]);
        let mut rng = Rng::from_seed(5);
        let gp = gradient_penalty_with(
            &tape,
            |_, x| Ok(Tensor::from_f64(&x.shape(), &vec![0.7; x.numel()], false)),
            &y,
            &mut rng,
            1e-3,
            2,
        )
        .unwrap()
        .item();
        assert_eq!(gp, 0.0);
    }

    #[test]
    fn gradient_penalty_nonnegative() {
        let tape = T64::new();
        let y = t(&[1, 1, 2, 2], &[0.2, 0.8, 0.5, 0.1]);
        let mut rng = Rng::from_seed(6);
        let gp = gradient_penalty_with(
            &tape,
            |tp, x| tp.sigmoid(&tp.mul_scalar(x, 3.0)?),
            &y,
            &mut rng,
            1e-3,
            3,
        )
        .unwrap()
        .item();
        assert!(gp >= 0.0 && gp.is_finite());
    }

    #[test]
    fn gradient_penalty_matches_sigmoid_affine_derivative() {
        // single-pixel map D(x) = sigmoid(a*x): squared directional derivative
        // is (sigmoid'(a x) * a)^2 for the only unit directions +-1.
        let a = 1.7;
        let x0 = 0.3;
        let tape = T64::new();
        let y = t(&[1, 1, 1, 1], &[x0]);
        let mut rng = Rng::from_seed(9);
        let gp = gradient_penalty_with(
            &tape,
            |tp, x| tp.sigmoid(&tp.mul_scalar(x, a)?),
            &y,
            &mut rng,
            1e-3,
            1,
        )
        .unwrap()
        .item();
        let s = 1.0 / (1.0 + (-a * x0).exp());
        let want = (s * (1.0 - s) * a).powi(2);
        assert!((gp - want).abs() < 1e-4, "got {gp}, want {want}");
    }

    #[test]
    fn shape_mismatches_error() {
        let tape = T64::new();
        let a = t(&[4], &[0.5; 4]);
        let b = t(&[3], &[0.5; 3]);
        assert!(dice_loss(&tape, &a, &b, 1e-8).is_err());
        assert!(bce_loss(&tape, &a, &b).is_err());
        assert!(focal_loss(&tape, &a, &b, 0.25, 2.0).is_err());
        assert!(discriminator_loss(&tape, &a, &b, &b, DiscLossVariant::DiceBceEqual).is_err());
    }

    #[test]
    fn variant_validation() {
        assert!(DiscLossVariant::DiceBceWeighted { w_dice: 0.0, w_bce: 0.0 }.validate().is_err());
        assert!(DiscLossVariant::FocalBce { alpha: 1.5, gamma: 2.0 }.validate().is_err());
        assert!(DiscLossVariant::ablation_set().iter().all(|v| v.validate().is_ok()));
        assert_eq!(DiscLossVariant::ablation_set().len(), 6);
    }
}
