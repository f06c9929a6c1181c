//! Adversarial training loop: dual Adam optimizers, per-epoch validation on
//! mean Dice, early stopping and checkpointing.
//!
//! Each step runs in a fixed order: (1) generator forward producing `y_p`;
//! (2) discriminator update on the detached `y_p` (variant loss plus scaled
//! gradient penalty); (3) generator update with a fresh discriminator
//! forward on the live `y_p`. The discriminator's parameters are frozen
//! during (3) so adversarial gradients flow through it into the generator
//! without computing discriminator weight gradients.
//!
//! Every random stream is derived from `(seed, purpose, epoch)`, so a run
//! resumed from the end-of-epoch checkpoint consumes exactly the draws an
//! uninterrupted run would.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{save_checkpoint, CheckpointMeta};
use crate::data::{apply_normalization, augment, AugmentationConfig, Image, Mask, NormStats, Sample};
use crate::error::{Error, Result};
use crate::losses::{
    discriminator_loss, generator_loss, gradient_penalty, DiscLossVariant, LossWeights,
};
use crate::metrics::{self, MetricsReport};
use crate::models::{Discriminator, Generator};
use crate::postprocess;
use crate::rng::Rng;
use crate::tensor::{AdamConfig, AdamState, Phase, Scalar, Tape, Tensor};

/// Improvement smaller than this does not reset the patience counter.
pub const IMPROVEMENT_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr_generator: f64,
    pub lr_discriminator: f64,
    pub lambda_dice: f64,
    pub lambda_adv: f64,
    pub lambda_gp: f64,
    pub dice_epsilon: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub disc_variant: DiscLossVariant,
    pub seed: u64,
    pub eval_threshold: f64,
    /// Finite-difference step of the gradient penalty probe.
    pub gp_eps: f64,
    /// Number of random directions per gradient-penalty estimate.
    pub gp_dirs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let w = LossWeights::default();
        TrainConfig {
            lr_generator: 5e-4,
            lr_discriminator: 1e-5,
            lambda_dice: w.lambda_dice,
            lambda_adv: w.lambda_adv,
            lambda_gp: w.lambda_gp,
            dice_epsilon: w.epsilon,
            max_epochs: 1000,
            patience: 50,
            batch_size: 4,
            disc_variant: DiscLossVariant::DiceBceEqual,
            seed: 42,
            eval_threshold: 0.3,
            gp_eps: 1e-3,
            gp_dirs: 1,
        }
    }
}

impl TrainConfig {
    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            lambda_dice: self.lambda_dice,
            lambda_adv: self.lambda_adv,
            lambda_gp: self.lambda_gp,
            epsilon: self.dice_epsilon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss_weights().validate()?;
        self.disc_variant.validate()?;
        if self.batch_size < 2 {
            return Err(Error::config("batch_size must be >= 2 (batch-norm constraint)"));
        }
        if self.patience < 1 {
            return Err(Error::config("patience must be >= 1"));
        }
        if self.max_epochs < 1 {
            return Err(Error::config("max_epochs must be >= 1"));
        }
        if !(0.0 < self.eval_threshold && self.eval_threshold < 1.0) {
            return Err(Error::config("eval_threshold must lie in (0, 1)"));
        }
        if self.lr_generator < 0.0 || self.lr_discriminator < 0.0 {
            return Err(Error::config("learning rates must be >= 0"));
        }
        if self.gp_eps <= 0.0 || self.gp_dirs == 0 {
            return Err(Error::config("gradient penalty needs gp_eps > 0 and gp_dirs >= 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    pub loss_g: f64,
    pub loss_d: f64,
    pub gp: f64,
    pub val_dice: f64,
    pub seconds: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct StepLosses {
    pub loss_g: f64,
    pub loss_d: f64,
    pub gp: f64,
}

/// Early stopping on validation Dice: stop after `patience` consecutive
/// epochs without an improvement greater than [`IMPROVEMENT_EPS`]; ties and
/// marginal gains keep the earlier best epoch.
pub struct EarlyStopper {
    patience: usize,
    pub best: f64,
    pub best_epoch: usize,
    since_improvement: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        EarlyStopper { patience, best: f64::NEG_INFINITY, best_epoch: 0, since_improvement: 0 }
    }

    /// Returns (improved, should_stop).
    pub fn observe(&mut self, epoch: usize, val_dice: f64) -> (bool, bool) {
        let improved = val_dice > self.best + IMPROVEMENT_EPS;
        if improved {
            self.best = val_dice;
            self.best_epoch = epoch;
            self.since_improvement = 0;
        } else {
            self.since_improvement += 1;
        }
        (improved, self.since_improvement >= self.patience)
    }
}

/// Normalized image batch + mask batch as tensors.
fn batch_tensors<S: Scalar>(
    samples: &[&Sample],
    norm: &NormStats,
) -> Result<(Tensor<S>, Tensor<S>)> {
    let b = samples.len();
    let (h, w) = (samples[0].image.h, samples[0].image.w);
    let mut img = Vec::with_capacity(b * 3 * h * w);
    let mut mask = Vec::with_capacity(b * h * w);
    for s in samples {
        if s.image.h != h || s.image.w != w {
            return Err(Error::config("batch contains mixed image sizes"));
        }
        img.extend(apply_normalization(&s.image, norm).into_iter().map(|v| S::from_f64(v as f64)));
        mask.extend(s.mask.data.iter().map(|&v| S::from_f64(v as f64)));
    }
    Ok((
        Tensor::new(&[b, Image::CHANNELS, h, w], img, false),
        Tensor::new(&[b, 1, h, w], mask, false),
    ))
}

fn check_loss(value: f64, term: &'static str) -> Result<()> {
    if !value.is_finite() {
        return Err(Error::Numeric { op: term, detail: format!("loss became {value}") });
    }
    Ok(())
}

/// One adversarial training step on an already-normalized batch.
pub fn train_step<S: Scalar>(
    gen: &Generator<S>,
    disc: &Discriminator<S>,
    opt_g: &mut AdamState<S>,
    opt_d: &mut AdamState<S>,
    images: &Tensor<S>,
    masks: &Tensor<S>,
    cfg: &TrainConfig,
    gp_rng: &mut Rng,
) -> Result<StepLosses> {
    let w = cfg.loss_weights();

    // (1) generator forward (train phase: batch statistics)
    let tape_g = Tape::new();
    let y_p = gen.forward(&tape_g, images, Phase::Train)?;

    // (2) discriminator update on the detached prediction
    let tape_d = Tape::new();
    let y_p_det = y_p.detach();
    let d_real = disc.forward(&tape_d, masks)?;
    let d_fake = disc.forward(&tape_d, &y_p_det)?;
    let base = discriminator_loss(&tape_d, masks, &d_real, &d_fake, cfg.disc_variant)?;
    let gp = gradient_penalty(&tape_d, disc, masks, gp_rng, cfg.gp_eps, cfg.gp_dirs)?;
    let gp_value = gp.item().as_f64();
    check_loss(gp_value, "gradient_penalty")?;
    let loss_d = tape_d.add(&base, &tape_d.mul_scalar(&gp, S::from_f64(w.lambda_gp))?)?;
    let loss_d_value = loss_d.item().as_f64();
    check_loss(loss_d_value, "discriminator_loss")?;
    disc.params.zero_grads();
    tape_d.backward(&loss_d)?;
    opt_d.step(&disc.params.trainable(), &AdamConfig::with_lr(cfg.lr_discriminator))?;

    // (3) generator update with a fresh discriminator forward on y_p
    let d_on_fake = if w.lambda_adv > 0.0 {
        disc.params.set_requires_grad(false);
        let out = disc.forward(&tape_g, &y_p);
        disc.params.set_requires_grad(true);
        Some(out?)
    } else {
        None
    };
    let loss_g = generator_loss(&tape_g, masks, &y_p, d_on_fake.as_ref(), &w)?;
    let loss_g_value = loss_g.item().as_f64();
    check_loss(loss_g_value, "generator_loss")?;
    gen.params.zero_grads();
    tape_g.backward(&loss_g)?;
    opt_g.step(&gen.params.trainable(), &AdamConfig::with_lr(cfg.lr_generator))?;

    Ok(StepLosses { loss_g: loss_g_value, loss_d: loss_d_value, gp: gp_value })
}

/// Eval-mode mask probabilities for one sample.
pub fn predict_probs<S: Scalar>(
    gen: &Generator<S>,
    sample: &Sample,
    norm: &NormStats,
) -> Result<Vec<f32>> {
    let (img, _) = batch_tensors::<S>(&[sample], norm)?;
    let tape = Tape::inference();
    let probs = gen.forward(&tape, &img, Phase::Eval)?;
    Ok(probs.data().iter().map(|v| v.as_f64() as f32).collect())
}

/// Mean Dice of per-sample predictions binarized at `threshold`
/// (no component filtering; this is the validation signal).
pub fn validate<S: Scalar>(
    gen: &Generator<S>,
    val: &[Sample],
    norm: &NormStats,
    threshold: f64,
) -> Result<f64> {
    if val.is_empty() {
        return Err(Error::config("validate: empty validation set"));
    }
    let mut total = 0.0;
    for s in val {
        let probs = predict_probs(gen, s, norm)?;
        let pred = postprocess::binarize(&probs, s.mask.h, s.mask.w, threshold)?;
        total += metrics::dice(&pred, &s.mask)?;
    }
    Ok(total / val.len() as f64)
}

/// Full test-set evaluation; `use_postprocess` switches component filtering
/// on (threshold + 8-connectivity area filter) or off (threshold only).
pub fn evaluate_split<S: Scalar>(
    gen: &Generator<S>,
    samples: &[Sample],
    norm: &NormStats,
    tau: f64,
    min_area: Option<usize>,
    use_postprocess: bool,
) -> Result<MetricsReport> {
    let ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
    let mut preds = Vec::with_capacity(samples.len());
    for s in samples {
        let probs = predict_probs(gen, s, norm)?;
        let mask = if use_postprocess {
            postprocess::postprocess(&probs, s.mask.h, s.mask.w, tau, min_area)?
        } else {
            postprocess::binarize(&probs, s.mask.h, s.mask.w, tau)?
        };
        preds.push(mask);
    }
    let gts: Vec<Mask> = samples.iter().map(|s| s.mask.clone()).collect();
    metrics::evaluate_set(&ids, &preds, &gts)
}

pub struct FitOutcome {
    pub history: Vec<EpochReport>,
    pub best_epoch: usize,
    pub best_val_dice: f64,
    pub best_path: PathBuf,
    pub last_path: PathBuf,
}

pub fn history_csv(history: &[EpochReport]) -> String {
    let mut out = String::from("epoch,loss_g,loss_d,gp,val_dice,seconds\n");
    for r in history {
        let _ = writeln!(
            out,
            "{},{:.9},{:.9},{:.9},{:.9},{:.3}",
            r.epoch, r.loss_g, r.loss_d, r.gp, r.val_dice, r.seconds
        );
    }
    out
}

/// Train until `max_epochs` or early stop; writes `history.csv` and the
/// `best.ckpt` / `last.ckpt` pair under `out_dir`, returns the history plus
/// the best checkpoint's location.
///
/// `resume` restores parameters, optimizer state and the epoch counter from
/// an end-of-epoch checkpoint; the patience window restarts at that point.
#[allow(clippy::too_many_arguments)]
pub fn fit<S: Scalar>(
    gen: Generator<S>,
    disc: Discriminator<S>,
    train: &[Sample],
    val: &[Sample],
    norm: &NormStats,
    cfg: &TrainConfig,
    aug: &AugmentationConfig,
    out_dir: &Path,
    resume_from: Option<CheckpointMeta>,
    mut opt_g: AdamState<S>,
    mut opt_d: AdamState<S>,
) -> Result<FitOutcome> {
    cfg.validate()?;
    aug.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::config("fit: train and validation splits must be nonempty"));
    }
    let size = gen.cfg.image_size;
    if train.iter().chain(val.iter()).any(|s| s.image.h != size || s.image.w != size) {
        return Err(Error::config(format!("fit: all samples must be resized to {size}x{size}")));
    }

    std::fs::create_dir_all(out_dir)?;
    let best_path = out_dir.join("best.ckpt");
    let last_path = out_dir.join("last.ckpt");
    let history_path = out_dir.join("history.csv");

    let mut stopper = EarlyStopper::new(cfg.patience);
    let mut history: Vec<EpochReport> = Vec::new();
    let start_epoch = match resume_from {
        Some(meta) => {
            stopper.best = meta.best_val_dice;
            stopper.best_epoch = meta.epoch as usize;
            meta.epoch as usize
        }
        None => 0,
    };

    for epoch in start_epoch + 1..=cfg.max_epochs {
        let t0 = Instant::now();
        let mut order: Vec<usize> = (0..train.len()).collect();
        Rng::stream(cfg.seed, "shuffle", epoch as u64).shuffle(&mut order);
        let mut aug_rng = Rng::stream(cfg.seed, "augment", epoch as u64);
        let mut gp_rng = Rng::stream(cfg.seed, "gp", epoch as u64);

        let (mut sum_g, mut sum_d, mut sum_gp, mut steps) = (0.0, 0.0, 0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue; // batch norm needs more than one value per channel
            }
            let augmented: Vec<Sample> =
                chunk.iter().map(|&i| augment(&train[i], aug, &mut aug_rng, size)).collect();
            let refs: Vec<&Sample> = augmented.iter().collect();
            let (images, masks) = batch_tensors::<S>(&refs, norm)?;
            let losses =
                train_step(&gen, &disc, &mut opt_g, &mut opt_d, &images, &masks, cfg, &mut gp_rng)?;
            sum_g += losses.loss_g;
            sum_d += losses.loss_d;
            sum_gp += losses.gp;
            steps += 1;
        }
        if steps == 0 {
            return Err(Error::config("fit: no batch of size >= 2 could be formed"));
        }

        let val_dice = validate(&gen, val, norm, cfg.eval_threshold)?;
        let (improved, stop) = stopper.observe(epoch, val_dice);

        let report = EpochReport {
            epoch,
            loss_g: sum_g / steps as f64,
            loss_d: sum_d / steps as f64,
            gp: sum_gp / steps as f64,
            val_dice,
            seconds: t0.elapsed().as_secs_f64(),
        };
        history.push(report);
        std::fs::write(&history_path, history_csv(&history))
            .map_err(|e| Error::file(&history_path, e.to_string()))?;

        let meta = CheckpointMeta { epoch: epoch as u64, best_val_dice: stopper.best };
        if improved {
            save_checkpoint(&best_path, &gen, &disc, &opt_g, &opt_d, norm, meta)?;
        }
        save_checkpoint(&last_path, &gen, &disc, &opt_g, &opt_d, norm, meta)?;

        if stop {
            break;
        }
    }

    Ok(FitOutcome {
        history,
        best_epoch: stopper.best_epoch,
        best_val_dice: stopper.best,
        best_path,
        last_path,
    })
}
