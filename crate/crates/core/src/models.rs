//! The two networks: a 4-level U-Net generator producing mask probabilities
//! and a 2-level U-Net-like discriminator producing a per-pixel realism map.
//!
//! Widths follow the doubling ladder `w, 2w, 4w, 8w` (bottleneck `16w`) for
//! the generator and `w, 2w` (bottleneck `4w`) for the discriminator. The
//! paper-scale width is `w = 64` at 256x256; the desk preset `w = 8` at
//! 64x64 keeps the exact topology at laptop cost. All 3x3 convolutions use
//! padding 1, downsampling is 2x2 max-pool, upsampling is a 2x2 stride-2
//! transposed convolution that halves the channel count. The discriminator
//! uses plain conv+ReLU blocks (no batch norm).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Phase, Scalar, Tape, Tensor};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub in_channels: usize,
    pub base_width: usize,
    pub image_size: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        // desk preset; the paper configuration is base_width 64 at 256.
        GeneratorConfig { in_channels: 3, base_width: 8, image_size: 64 }
    }
}

impl GeneratorConfig {
    pub fn paper() -> Self {
        GeneratorConfig { in_channels: 3, base_width: 64, image_size: 256 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 || self.image_size % 16 != 0 {
            return Err(Error::config(format!(
                "generator image_size {} must be divisible by 16 (four pooling levels)",
                self.image_size
            )));
        }
        if self.base_width < 2 {
            return Err(Error::config("generator base_width must be >= 2"));
        }
        if self.in_channels == 0 {
            return Err(Error::config("generator in_channels must be >= 1"));
        }
        Ok(())
    }

    /// Encoder channel ladder `w, 2w, 4w, 8w`.
    pub fn encoder_widths(&self) -> [usize; 4] {
        let w = self.base_width;
        [w, 2 * w, 4 * w, 8 * w]
    }

    pub fn bottleneck_channels(&self) -> usize {
        16 * self.base_width
    }

    pub fn bottleneck_resolution(&self) -> usize {
        self.image_size / 16
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscriminatorConfig {
    pub base_width: usize,
    pub image_size: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig { base_width: 8, image_size: 64 }
    }
}

impl DiscriminatorConfig {
    pub fn paper() -> Self {
        DiscriminatorConfig { base_width: 64, image_size: 256 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 || self.image_size % 4 != 0 {
            return Err(Error::config(format!(
                "discriminator image_size {} must be divisible by 4 (two pooling levels)",
                self.image_size
            )));
        }
        if self.base_width < 2 {
            return Err(Error::config("discriminator base_width must be >= 2"));
        }
        Ok(())
    }

    pub fn encoder_widths(&self) -> [usize; 2] {
        [self.base_width, 2 * self.base_width]
    }

    pub fn bottleneck_channels(&self) -> usize {
        4 * self.base_width
    }

    pub fn bottleneck_resolution(&self) -> usize {
        self.image_size / 4
    }
}

/// Ordered, named collection of parameter tensors and (non-trainable)
/// buffers. Names are unique and the order is stable, which the checkpoint
/// format and optimizer state rely on.
pub struct ModelParams<S: Scalar> {
    params: Vec<(String, Tensor<S>)>,
    buffers: Vec<(String, Tensor<S>)>,
}

impl<S: Scalar> ModelParams<S> {
    pub fn new() -> Self {
        ModelParams { params: Vec::new(), buffers: Vec::new() }
    }

    fn add_param(&mut self, name: impl Into<String>, t: Tensor<S>) {
        let name = name.into();
        debug_assert!(self.lookup(&name).is_none(), "duplicate parameter {name}");
        self.params.push((name, t));
    }

    fn add_buffer(&mut self, name: impl Into<String>, t: Tensor<S>) {
        let name = name.into();
        debug_assert!(self.lookup(&name).is_none(), "duplicate buffer {name}");
        self.buffers.push((name, t));
    }

    fn lookup(&self, name: &str) -> Option<&Tensor<S>> {
        self.params
            .iter()
            .chain(self.buffers.iter())
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub fn tensor(&self, name: &str) -> &Tensor<S> {
        self.lookup(name).unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn params(&self) -> &[(String, Tensor<S>)] {
        &self.params
    }

    pub fn buffers(&self) -> &[(String, Tensor<S>)] {
        &self.buffers
    }

    /// Trainable tensors in registration order (the optimizer order).
    pub fn trainable(&self) -> Vec<Tensor<S>> {
        self.params.iter().map(|(_, t)| t.clone()).collect()
    }

    /// Total number of trainable parameter elements.
    pub fn param_count(&self) -> usize {
        self.params.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn zero_grads(&self) {
        for (_, t) in &self.params {
            t.zero_grad();
        }
    }

    pub fn set_requires_grad(&self, on: bool) {
        for (_, t) in &self.params {
            t.set_requires_grad(on);
        }
    }

    /// FNV-1a hash over the raw bits of all parameters and buffers; used to
    /// verify that an update to one network never touches the other.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |x: u64| {
            for b in x.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        for (_, t) in self.params.iter().chain(self.buffers.iter()) {
            for v in t.data() {
                eat(v.as_f64().to_bits());
            }
        }
        h
    }
}

impl<S: Scalar> Default for ModelParams<S> {
    fn default() -> Self {
        Self::new()
    }
}

/// He-initialized 3x3/1x1 convolution parameters.
fn init_conv<S: Scalar>(
    p: &mut ModelParams<S>,
    prefix: &str,
    cin: usize,
    cout: usize,
    k: usize,
    rng: &mut Rng,
) {
    let fan_in = cin * k * k;
    let std = (2.0 / fan_in as f64).sqrt();
    let data: Vec<S> =
        (0..cout * cin * k * k).map(|_| S::from_f64(rng.normal() * std)).collect();
    p.add_param(format!("{prefix}.w"), Tensor::new(&[cout, cin, k, k], data, true));
    p.add_param(format!("{prefix}.b"), Tensor::zeros(&[cout], true));
}

fn init_bn<S: Scalar>(p: &mut ModelParams<S>, prefix: &str, c: usize) {
    let ones: Vec<S> = vec![S::one(); c];
    p.add_param(format!("{prefix}.gamma"), Tensor::new(&[c], ones.clone(), true));
    p.add_param(format!("{prefix}.beta"), Tensor::zeros(&[c], true));
    p.add_buffer(format!("{prefix}.mean"), Tensor::zeros(&[c], false));
    p.add_buffer(format!("{prefix}.var"), Tensor::new(&[c], ones, false));
}

/// Transposed-conv parameters (2x2, stride 2, no bias), He-initialized on
/// the input fan.
fn init_up<S: Scalar>(p: &mut ModelParams<S>, prefix: &str, cin: usize, cout: usize, rng: &mut Rng) {
    let std = (2.0 / (cin * 4) as f64).sqrt();
    let data: Vec<S> = (0..cin * cout * 4).map(|_| S::from_f64(rng.normal() * std)).collect();
    p.add_param(format!("{prefix}.w"), Tensor::new(&[cin, cout, 2, 2], data, true));
}

/// ROIsGAN generator: 4-level encoder/decoder U-Net, sigmoid head.
pub struct Generator<S: Scalar> {
    pub cfg: GeneratorConfig,
    pub params: ModelParams<S>,
}

/// Realism-map discriminator: 2-level U-Net-like network, conv+ReLU blocks,
/// no batch norm.
pub struct Discriminator<S: Scalar> {
    pub cfg: DiscriminatorConfig,
    pub params: ModelParams<S>,
}

pub fn build_generator<S: Scalar>(cfg: &GeneratorConfig, seed: u64) -> Result<Generator<S>> {
    cfg.validate()?;
    let mut rng = Rng::stream(seed, "init.generator", 0);
    let mut p = ModelParams::new();
    let w = cfg.encoder_widths();
    let bott = cfg.bottleneck_channels();

    let block = |p: &mut ModelParams<S>, name: &str, cin: usize, cout: usize, rng: &mut Rng| {
        init_conv(p, &format!("{name}.conv1"), cin, cout, 3, rng);
        init_bn(p, &format!("{name}.bn1"), cout);
        init_conv(p, &format!("{name}.conv2"), cout, cout, 3, rng);
        init_bn(p, &format!("{name}.bn2"), cout);
    };

    block(&mut p, "enc1", cfg.in_channels, w[0], &mut rng);
    block(&mut p, "enc2", w[0], w[1], &mut rng);
    block(&mut p, "enc3", w[1], w[2], &mut rng);
    block(&mut p, "enc4", w[2], w[3], &mut rng);
    block(&mut p, "bott", w[3], bott, &mut rng);
    // decoder: upsample halves channels, concat doubles them again
    init_up(&mut p, "dec4.up", bott, w[3], &mut rng);
    block(&mut p, "dec4", 2 * w[3], w[3], &mut rng);
    init_up(&mut p, "dec3.up", w[3], w[2], &mut rng);
    block(&mut p, "dec3", 2 * w[2], w[2], &mut rng);
    init_up(&mut p, "dec2.up", w[2], w[1], &mut rng);
    block(&mut p, "dec2", 2 * w[1], w[1], &mut rng);
    init_up(&mut p, "dec1.up", w[1], w[0], &mut rng);
    block(&mut p, "dec1", 2 * w[0], w[0], &mut rng);
    init_conv(&mut p, "head", w[0], 1, 1, &mut rng);

    Ok(Generator { cfg: *cfg, params: p })
}

pub fn build_discriminator<S: Scalar>(
    cfg: &DiscriminatorConfig,
    seed: u64,
) -> Result<Discriminator<S>> {
    cfg.validate()?;
    let mut rng = Rng::stream(seed, "init.discriminator", 0);
    let mut p = ModelParams::new();
    let w = cfg.encoder_widths();
    let bott = cfg.bottleneck_channels();

    let block = |p: &mut ModelParams<S>, name: &str, cin: usize, cout: usize, rng: &mut Rng| {
        init_conv(p, &format!("{name}.conv1"), cin, cout, 3, rng);
        init_conv(p, &format!("{name}.conv2"), cout, cout, 3, rng);
    };

    block(&mut p, "enc1", 1, w[0], &mut rng);
    block(&mut p, "enc2", w[0], w[1], &mut rng);
    block(&mut p, "bott", w[1], bott, &mut rng);
    init_up(&mut p, "dec2.up", bott, w[1], &mut rng);
    block(&mut p, "dec2", 2 * w[1], w[1], &mut rng);
    init_up(&mut p, "dec1.up", w[1], w[0], &mut rng);
    block(&mut p, "dec1", 2 * w[0], w[0], &mut rng);
    init_conv(&mut p, "head", w[0], 1, 1, &mut rng);

    Ok(Discriminator { cfg: *cfg, params: p })
}

fn conv_bn_relu<S: Scalar>(
    tape: &Tape<S>,
    p: &ModelParams<S>,
    conv: &str,
    bn: &str,
    x: &Tensor<S>,
    phase: Phase,
) -> Result<Tensor<S>> {
    let y = tape.conv2d(x, p.tensor(&format!("{conv}.w")), p.tensor(&format!("{conv}.b")), 1, 1)?;
    let y = tape.batchnorm2d(
        &y,
        p.tensor(&format!("{bn}.gamma")),
        p.tensor(&format!("{bn}.beta")),
        p.tensor(&format!("{bn}.mean")),
        p.tensor(&format!("{bn}.var")),
        phase,
    )?;
    tape.relu(&y)
}

fn conv_relu<S: Scalar>(
    tape: &Tape<S>,
    p: &ModelParams<S>,
    conv: &str,
    x: &Tensor<S>,
) -> Result<Tensor<S>> {
    let y = tape.conv2d(x, p.tensor(&format!("{conv}.w")), p.tensor(&format!("{conv}.b")), 1, 1)?;
    tape.relu(&y)
}

impl<S: Scalar> Generator<S> {
    fn block(
        &self,
        tape: &Tape<S>,
        name: &str,
        x: &Tensor<S>,
        phase: Phase,
    ) -> Result<Tensor<S>> {
        let h = conv_bn_relu(
            tape,
            &self.params,
            &format!("{name}.conv1"),
            &format!("{name}.bn1"),
            x,
            phase,
        )?;
        conv_bn_relu(
            tape,
            &self.params,
            &format!("{name}.conv2"),
            &format!("{name}.bn2"),
            &h,
            phase,
        )
    }

    /// Forward pass: image batch B x in_channels x S x S to mask
    /// probabilities B x 1 x S x S (strictly inside (0,1)).
    pub fn forward(&self, tape: &Tape<S>, image: &Tensor<S>, phase: Phase) -> Result<Tensor<S>> {
        Ok(self.forward_trace(tape, image, phase)?.0)
    }

    /// Forward pass that also returns the final decoder block activations
    /// (the Grad-CAM target layer).
    pub fn forward_trace(
        &self,
        tape: &Tape<S>,
        image: &Tensor<S>,
        phase: Phase,
    ) -> Result<(Tensor<S>, Tensor<S>)> {
        self.forward_impl(tape, image, phase, false)
    }

    fn forward_impl(
        &self,
        tape: &Tape<S>,
        image: &Tensor<S>,
        phase: Phase,
        zero_skips: bool,
    ) -> Result<(Tensor<S>, Tensor<S>)> {
        let shape = image.shape();
        if shape.len() != 4 || shape[1] != self.cfg.in_channels {
            return Err(Error::config(format!(
                "generator expects 4-D input with {} channels, got {shape:?}",
                self.cfg.in_channels
            )));
        }
        if shape[2] % 16 != 0 || shape[3] % 16 != 0 {
            return Err(Error::config(format!(
                "generator input spatial size {}x{} must be divisible by 16",
                shape[2], shape[3]
            )));
        }
        let p = &self.params;
        let skip = |t: &Tensor<S>| -> Tensor<S> {
            if zero_skips {
                Tensor::zeros(&t.shape(), false)
            } else {
                t.clone()
            }
        };

        let e1 = self.block(tape, "enc1", image, phase)?;
        let p1 = tape.maxpool2x2(&e1)?;
        let e2 = self.block(tape, "enc2", &p1, phase)?;
        let p2 = tape.maxpool2x2(&e2)?;
        let e3 = self.block(tape, "enc3", &p2, phase)?;
        let p3 = tape.maxpool2x2(&e3)?;
        let e4 = self.block(tape, "enc4", &p3, phase)?;
        let p4 = tape.maxpool2x2(&e4)?;
        let bt = self.block(tape, "bott", &p4, phase)?;

        let u4 = tape.conv_transpose2d(&bt, p.tensor("dec4.up.w"))?;
        let d4 = self.block(tape, "dec4", &tape.concat_channels(&u4, &skip(&e4))?, phase)?;
        let u3 = tape.conv_transpose2d(&d4, p.tensor("dec3.up.w"))?;
        let d3 = self.block(tape, "dec3", &tape.concat_channels(&u3, &skip(&e3))?, phase)?;
        let u2 = tape.conv_transpose2d(&d3, p.tensor("dec2.up.w"))?;
        let d2 = self.block(tape, "dec2", &tape.concat_channels(&u2, &skip(&e2))?, phase)?;
        let u1 = tape.conv_transpose2d(&d2, p.tensor("dec1.up.w"))?;
        let d1 = self.block(tape, "dec1", &tape.concat_channels(&u1, &skip(&e1))?, phase)?;

        let logits = tape.conv2d(&d1, p.tensor("head.w"), p.tensor("head.b"), 1, 0)?;
        Ok((tape.sigmoid(&logits)?, d1))
    }
}

impl<S: Scalar> Discriminator<S> {
    fn block(&self, tape: &Tape<S>, name: &str, x: &Tensor<S>) -> Result<Tensor<S>> {
        let h = conv_relu(tape, &self.params, &format!("{name}.conv1"), x)?;
        conv_relu(tape, &self.params, &format!("{name}.conv2"), &h)
    }

    /// Forward pass: mask batch B x 1 x S x S to realism map B x 1 x S x S.
    pub fn forward(&self, tape: &Tape<S>, mask: &Tensor<S>) -> Result<Tensor<S>> {
        let shape = mask.shape();
        if shape.len() != 4 || shape[1] != 1 {
            return Err(Error::config(format!(
                "discriminator expects single-channel 4-D input, got {shape:?}"
            )));
        }
        if shape[2] % 4 != 0 || shape[3] % 4 != 0 {
            return Err(Error::config(format!(
                "discriminator input spatial size {}x{} must be divisible by 4",
                shape[2], shape[3]
            )));
        }
        let p = &self.params;
        let e1 = self.block(tape, "enc1", mask)?;
        let p1 = tape.maxpool2x2(&e1)?;
        let e2 = self.block(tape, "enc2", &p1)?;
        let p2 = tape.maxpool2x2(&e2)?;
        let bt = self.block(tape, "bott", &p2)?;
        let u2 = tape.conv_transpose2d(&bt, p.tensor("dec2.up.w"))?;
        let d2 = self.block(tape, "dec2", &tape.concat_channels(&u2, &e2)?)?;
        let u1 = tape.conv_transpose2d(&d2, p.tensor("dec1.up.w"))?;
        let d1 = self.block(tape, "dec1", &tape.concat_channels(&u1, &e1)?)?;
        let logits = tape.conv2d(&d1, p.tensor("head.w"), p.tensor("head.b"), 1, 0)?;
        tape.sigmoid(&logits)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv_n(cin: usize, cout: usize, k: usize) -> usize {
        cout * cin * k * k + cout
    }

    fn gen_block_n(cin: usize, cout: usize) -> usize {
        conv_n(cin, cout, 3) + 2 * cout + conv_n(cout, cout, 3) + 2 * cout
    }

    fn disc_block_n(cin: usize, cout: usize) -> usize {
        conv_n(cin, cout, 3) + conv_n(cout, cout, 3)
    }

    #[test]
    fn paper_config_ladders() {
        let g = GeneratorConfig::paper();
        assert_eq!(g.encoder_widths(), [64, 128, 256, 512]);
        assert_eq!(g.bottleneck_channels(), 1024);
        assert_eq!(g.bottleneck_resolution(), 16);

        let d = DiscriminatorConfig::paper();
        assert_eq!(d.encoder_widths(), [64, 128]);
        assert_eq!(d.bottleneck_channels(), 256);
        assert_eq!(d.bottleneck_resolution(), 64);
    }

    #[test]
    fn desk_config_ladders() {
        let g = GeneratorConfig { in_channels: 3, base_width: 8, image_size: 64 };
        assert_eq!(g.encoder_widths(), [8, 16, 32, 64]);
        assert_eq!(g.bottleneck_channels(), 128);
        assert_eq!(g.bottleneck_resolution(), 4);

        let d = DiscriminatorConfig { base_width: 8, image_size: 64 };
        assert_eq!(d.encoder_widths(), [8, 16]);
        assert_eq!(d.bottleneck_channels(), 32);
        assert_eq!(d.bottleneck_resolution(), 16);
    }

    #[test]
    fn invalid_sizes_rejected() {
        assert!(GeneratorConfig { in_channels: 3, base_width: 8, image_size: 60 }
            .validate()
            .is_err());
        assert!(GeneratorConfig { in_channels: 3, base_width: 1, image_size: 64 }
            .validate()
            .is_err());
        assert!(DiscriminatorConfig { base_width: 8, image_size: 30 }.validate().is_err());
    }

    #[test]
    fn generator_param_count_matches_ladder_formula() {
        for w in [2usize, 4, 8] {
            let cfg = GeneratorConfig { in_channels: 3, base_width: w, image_size: 32 };
            let gen = build_generator::<f64>(&cfg, 1).unwrap();
            let want = gen_block_n(3, w)
                + gen_block_n(w, 2 * w)
                + gen_block_n(2 * w, 4 * w)
                + gen_block_n(4 * w, 8 * w)
                + gen_block_n(8 * w, 16 * w)
                + 16 * w * 8 * w * 4
                + gen_block_n(16 * w, 8 * w)
                + 8 * w * 4 * w * 4
                + gen_block_n(8 * w, 4 * w)
                + 4 * w * 2 * w * 4
                + gen_block_n(4 * w, 2 * w)
                + 2 * w * w * 4
                + gen_block_n(2 * w, w)
                + conv_n(w, 1, 1);
            assert_eq!(gen.params.param_count(), want, "width {w}");
        }
    }

    #[test]
    fn discriminator_param_count_matches_ladder_formula() {
        for w in [2usize, 4, 8] {
            let cfg = DiscriminatorConfig { base_width: w, image_size: 16 };
            let disc = build_discriminator::<f64>(&cfg, 1).unwrap();
            let want = disc_block_n(1, w)
                + disc_block_n(w, 2 * w)
                + disc_block_n(2 * w, 4 * w)
                + 4 * w * 2 * w * 4
                + disc_block_n(4 * w, 2 * w)
                + 2 * w * w * 4
                + disc_block_n(2 * w, w)
                + conv_n(w, 1, 1);
            assert_eq!(disc.params.param_count(), want, "width {w}");
        }
    }

    #[test]
    fn generator_forward_shape_range_determinism() {
        let cfg = GeneratorConfig { in_channels: 3, base_width: 4, image_size: 16 };
        let gen = build_generator::<f64>(&cfg, 7).unwrap();
        let mut rng = Rng::from_seed(3);
        let img: Vec<f64> = (0..2 * 3 * 16 * 16).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let x = Tensor::from_f64(&[2, 3, 16, 16], &img, false);

        let tape = Tape::inference();
        let y1 = gen.forward(&tape, &x, Phase::Eval).unwrap();
        assert_eq!(y1.shape(), vec![2, 1, 16, 16]);
        assert!(y1.data().iter().all(|&v| v > 0.0 && v < 1.0));

        let tape = Tape::inference();
        let y2 = gen.forward(&tape, &x, Phase::Eval).unwrap();
        assert_eq!(y1.data(), y2.data(), "eval forward must be bitwise deterministic");

        // wrong channel count
        let bad = Tensor::<f64>::zeros(&[1, 2, 16, 16], false);
        assert!(gen.forward(&tape, &bad, Phase::Eval).is_err());
    }

    #[test]
    fn discriminator_forward_shape_range_and_input_grad() {
        let cfg = DiscriminatorConfig { base_width: 4, image_size: 16 };
        let disc = build_discriminator::<f64>(&cfg, 11).unwrap();
        let mut rng = Rng::from_seed(5);
        let m: Vec<f64> = (0..16 * 16).map(|_| rng.next_f64()).collect();
        let x = Tensor::from_f64(&[1, 1, 16, 16], &m, true);

        let tape = Tape::new();
        let y = disc.forward(&tape, &x).unwrap();
        assert_eq!(y.shape(), vec![1, 1, 16, 16]);
        assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));

        let loss = tape.sum(&y).unwrap();
        tape.backward(&loss).unwrap();
        let g = x.grad().expect("input gradient");
        assert!(g.iter().all(|v| v.is_finite()));
        assert!(g.iter().any(|&v| v != 0.0), "realism map must be sensitive to its input");

        // multi-channel input rejected
        let bad = Tensor::<f64>::zeros(&[1, 2, 16, 16], false);
        assert!(disc.forward(&tape, &bad).is_err());
    }

    #[test]
    fn zeroing_skips_changes_the_output() {
        let cfg = GeneratorConfig { in_channels: 3, base_width: 4, image_size: 16 };
        let gen = build_generator::<f64>(&cfg, 9).unwrap();
        let mut rng = Rng::from_seed(13);
        let img: Vec<f64> = (0..3 * 16 * 16).map(|_| rng.uniform(0.0, 1.0)).collect();
        let x = Tensor::from_f64(&[1, 3, 16, 16], &img, false);
        let tape = Tape::inference();
        let (normal, _) = gen.forward_impl(&tape, &x, Phase::Eval, false).unwrap();
        let (ablated, _) = gen.forward_impl(&tape, &x, Phase::Eval, true).unwrap();
        assert_ne!(normal.data(), ablated.data(), "skip connections are not wired");
    }

    #[test]
    fn he_init_variance_close_to_two_over_fan_in() {
        // base width 16 gives 3x3 kernels with >= 1000 draws
        let cfg = GeneratorConfig { in_channels: 3, base_width: 16, image_size: 16 };
        let gen = build_generator::<f64>(&cfg, 21).unwrap();
        let mut checked = 0;
        for (name, t) in gen.params.params() {
            if !name.ends_with(".w") || name.contains("up") || name.starts_with("head") {
                continue;
            }
            let shape = t.shape();
            if t.numel() < 1000 {
                continue;
            }
            let fan_in = shape[1] * shape[2] * shape[3];
            let want = 2.0 / fan_in as f64;
            let data = t.data();
            let mean: f64 = data.iter().sum::<f64>() / data.len() as f64;
            let var: f64 =
                data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / data.len() as f64;
            assert!(
                var > want / 2.0 && var < want * 2.0,
                "{name}: var {var:.3e}, expected about {want:.3e}"
            );
            checked += 1;
        }
        assert!(checked >= 5, "too few kernels large enough to test ({checked})");
    }

    #[test]
    fn fingerprint_tracks_parameter_changes() {
        let cfg = DiscriminatorConfig { base_width: 2, image_size: 8 };
        let disc = build_discriminator::<f64>(&cfg, 3).unwrap();
        let h1 = disc.params.fingerprint();
        let t = disc.params.tensor("enc1.conv1.w");
        let mut d = t.data();
        d[0] += 1.0;
        t.set_data(&d);
        assert_ne!(h1, disc.params.fingerprint());
    }
}
