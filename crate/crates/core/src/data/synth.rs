//! Deterministic synthetic hippocampus-like dataset.
//!
//! Each sample draws one ROI band shape — a parabolic V-band (DG-like), an
//! upper arc band (CA1-like) or an inward-curling hook band (CA3-like) —
//! rendered as the binary mask. The image carries style-dependent texture:
//! `neun` stamps dense nuclear puncta (about 60% coverage) on channel 1,
//! `cfos` sparse puncta (about 5% coverage) on channel 0, `multiplexed` both
//! plus a diffuse third channel. Background clutter blobs sit outside the
//! ROI and all channels get sigma 0.05 Gaussian noise. Everything is a pure
//! function of the seed, so regenerated datasets are bit-identical.

use std::path::Path;

use crate::data::{netpbm, write_manifest, Image, ManifestRow, Mask, RegionTag, Sample};
use crate::error::Result;
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SynthStyle {
    Cfos,
    Neun,
    Multiplexed,
}

impl SynthStyle {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "cfos" => Some(SynthStyle::Cfos),
            "neun" => Some(SynthStyle::Neun),
            "multiplexed" => Some(SynthStyle::Multiplexed),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            SynthStyle::Cfos => "cfos",
            SynthStyle::Neun => "neun",
            SynthStyle::Multiplexed => "multiplexed",
        }
    }
}

/// Normalized-coordinate frame transform shared by all shapes: a rotation
/// about the frame center so bands appear in varied orientations.
struct Frame {
    cos: f64,
    sin: f64,
}

impl Frame {
    fn draw(rng: &mut Rng) -> Self {
        let phi = rng.uniform(-0.4, 0.4);
        Frame { cos: phi.cos(), sin: phi.sin() }
    }

    /// Map pixel-center coordinates to the shape's local frame.
    fn local(&self, x: f64, y: f64) -> (f64, f64) {
        let (dx, dy) = (x - 0.5, y - 0.5);
        (self.cos * dx + self.sin * dy + 0.5, -self.sin * dx + self.cos * dy + 0.5)
    }
}

fn render_mask<F: Fn(f64, f64) -> bool>(s: usize, inside: F) -> Mask {
    let mut mask = Mask::zeros(s, s);
    for y in 0..s {
        let fy = (y as f64 + 0.5) / s as f64;
        for x in 0..s {
            let fx = (x as f64 + 0.5) / s as f64;
            if inside(fx, fy) {
                mask.data[y * s + x] = 1;
            }
        }
    }
    mask
}

/// Parabolic V-band (dentate-gyrus-like).
fn dg_band(s: usize, rng: &mut Rng) -> Mask {
    let frame = Frame::draw(rng);
    let cx = rng.uniform(0.42, 0.58);
    let cy = rng.uniform(0.38, 0.52);
    let a = rng.uniform(1.4, 2.4);
    let half_span = rng.uniform(0.26, 0.34);
    let half_t = rng.uniform(0.042, 0.058);
    render_mask(s, |x, y| {
        let (lx, ly) = frame.local(x, y);
        let dx = lx - cx;
        dx.abs() <= half_span && (ly - (cy + a * dx * dx)).abs() <= half_t
    })
}

/// Upper arc band (CA1-like).
fn ca1_band(s: usize, rng: &mut Rng) -> Mask {
    let frame = Frame::draw(rng);
    let cx = rng.uniform(0.45, 0.55);
    let cy = rng.uniform(0.60, 0.72);
    let r = rng.uniform(0.26, 0.34);
    let half_t = rng.uniform(0.040, 0.055);
    let a0 = rng.uniform(-3.00, -2.70); // radians
    let a1 = rng.uniform(-0.45, -0.15);
    render_mask(s, |x, y| {
        let (lx, ly) = frame.local(x, y);
        let (dx, dy) = (lx - cx, ly - cy);
        let dist = (dx * dx + dy * dy).sqrt();
        if (dist - r).abs() > half_t {
            return false;
        }
        let ang = dy.atan2(dx);
        ang >= a0 && ang <= a1
    })
}

/// Hook band (CA3-like): an arc whose radius shrinks along the sweep,
/// stamped as overlapping discs.
fn ca3_band(s: usize, rng: &mut Rng) -> Mask {
    let cx = rng.uniform(0.42, 0.58);
    let cy = rng.uniform(0.42, 0.58);
    let r0 = rng.uniform(0.24, 0.30);
    let r_end = rng.uniform(0.08, 0.12);
    let span = rng.uniform(3.5, 4.9); // radians
    let theta0 = rng.uniform(0.0, std::f64::consts::TAU);
    let half_t = rng.uniform(0.040, 0.055);

    let mut mask = Mask::zeros(s, s);
    let steps = (span / 0.02).ceil() as usize;
    let sf = s as f64;
    for i in 0..=steps {
        let u = i as f64 / steps as f64;
        let theta = theta0 + span * u;
        let r = r0 + (r_end - r0) * u;
        let px = cx + r * theta.cos();
        let py = cy + r * theta.sin();
        // stamp a disc of radius half_t
        let rad = half_t * sf;
        let (pxs, pys) = (px * sf, py * sf);
        let x_lo = ((pxs - rad).floor().max(0.0)) as usize;
        let x_hi = ((pxs + rad).ceil().min(sf - 1.0)) as usize;
        let y_lo = ((pys - rad).floor().max(0.0)) as usize;
        let y_hi = ((pys + rad).ceil().min(sf - 1.0)) as usize;
        for y in y_lo..=y_hi {
            for x in x_lo..=x_hi {
                let ddx = x as f64 + 0.5 - pxs;
                let ddy = y as f64 + 0.5 - pys;
                if ddx * ddx + ddy * ddy <= rad * rad {
                    mask.data[y * s + x] = 1;
                }
            }
        }
    }
    mask
}

/// Stamp round puncta on one channel inside the band. `density` is the
/// per-pixel seeding probability; returns without touching other channels.
fn stamp_puncta(img: &mut Image, mask: &Mask, channel: usize, density: f64, rng: &mut Rng) {
    let (h, w) = (img.h, img.w);
    for y in 0..h {
        for x in 0..w {
            if mask.at(y, x) == 0 || !rng.chance(density) {
                continue;
            }
            let r = if rng.chance(0.5) { 1.0 } else { 2.0 };
            let intensity = rng.uniform(0.65, 1.0) as f32;
            let (y_lo, y_hi) = (y.saturating_sub(r as usize), (y + r as usize).min(h - 1));
            let (x_lo, x_hi) = (x.saturating_sub(r as usize), (x + r as usize).min(w - 1));
            for yy in y_lo..=y_hi {
                for xx in x_lo..=x_hi {
                    let d2 = (yy as f64 - y as f64).powi(2) + (xx as f64 - x as f64).powi(2);
                    if d2 <= r * r {
                        let v = img.at_mut(channel, yy, xx);
                        *v = v.max(intensity);
                    }
                }
            }
        }
    }
}

fn stamp_clutter(img: &mut Image, mask: &Mask, channels: &[usize], rng: &mut Rng) {
    let (h, w) = (img.h, img.w);
    let blobs = 3 + rng.below(6) as usize;
    for _ in 0..blobs {
        // place outside the ROI (rejection with a bounded number of tries)
        let mut placed = None;
        for _ in 0..50 {
            let y = rng.below(h as u64) as usize;
            let x = rng.below(w as u64) as usize;
            if mask.at(y, x) == 0 {
                placed = Some((y, x));
                break;
            }
        }
        let Some((cy, cx)) = placed else { continue };
        let radius = rng.uniform(0.02, 0.05) * h as f64;
        let intensity = rng.uniform(0.25, 0.5) as f32;
        let channel = channels[rng.below(channels.len() as u64) as usize];
        let r = radius.ceil() as usize;
        for yy in cy.saturating_sub(r)..=(cy + r).min(h - 1) {
            for xx in cx.saturating_sub(r)..=(cx + r).min(w - 1) {
                let d2 = (yy as f64 - cy as f64).powi(2) + (xx as f64 - cx as f64).powi(2);
                if d2 <= radius * radius && mask.at(yy, xx) == 0 {
                    let v = img.at_mut(channel, yy, xx);
                    *v = v.max(intensity);
                }
            }
        }
    }
}

/// 3x3 box blur of the mask as a diffuse intensity field.
fn diffuse_field(mask: &Mask) -> Vec<f32> {
    let (h, w) = (mask.h, mask.w);
    let src: Vec<f32> = mask.data.iter().map(|&v| v as f32).collect();
    let blur = |src: &[f32]| -> Vec<f32> {
        let mut out = vec![0.0f32; src.len()];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                let mut n = 0.0;
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let yy = y as i64 + dy;
                        let xx = x as i64 + dx;
                        if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w {
                            acc += src[yy as usize * w + xx as usize];
                            n += 1.0;
                        }
                    }
                }
                out[y * w + x] = acc / n;
            }
        }
        out
    };
    blur(&blur(&src))
}

/// Per-pixel density targets: roughly 60% disc coverage for dense nuclei,
/// about 5% for sparse activity puncta (mean disc area ~7 px).
const DENSE_PUNCTA_DENSITY: f64 = 0.13;
const SPARSE_PUNCTA_DENSITY: f64 = 0.0074;

/// Generate one sample. Consumes `rng` draws in a fixed documented order:
/// shape choice, shape parameters, texture, clutter, noise.
pub fn synth_sample(style: SynthStyle, s: usize, rng: &mut Rng) -> (Image, Mask, RegionTag) {
    let (mask, region) = match rng.below(3) {
        0 => (dg_band(s, rng), RegionTag::Dg),
        1 => (ca1_band(s, rng), RegionTag::Ca1),
        _ => (ca3_band(s, rng), RegionTag::Ca3),
    };
    let mut img = Image::zeros(s, s);
    match style {
        SynthStyle::Cfos => {
            stamp_puncta(&mut img, &mask, 0, SPARSE_PUNCTA_DENSITY, rng);
            stamp_clutter(&mut img, &mask, &[0], rng);
        }
        SynthStyle::Neun => {
            stamp_puncta(&mut img, &mask, 1, DENSE_PUNCTA_DENSITY, rng);
            stamp_clutter(&mut img, &mask, &[1], rng);
        }
        SynthStyle::Multiplexed => {
            stamp_puncta(&mut img, &mask, 0, SPARSE_PUNCTA_DENSITY, rng);
            stamp_puncta(&mut img, &mask, 1, DENSE_PUNCTA_DENSITY, rng);
            let diffuse = diffuse_field(&mask);
            let plane = s * s;
            for (i, &d) in diffuse.iter().enumerate() {
                img.data[2 * plane + i] = 0.55 * d;
            }
            stamp_clutter(&mut img, &mask, &[0, 1], rng);
        }
    }
    // Gaussian pixel noise, clamped back into [0, 1]
    for v in &mut img.data {
        *v = (*v + 0.05 * rng.normal() as f32).clamp(0.0, 1.0);
    }
    (img, mask, region)
}

/// Write `n` samples plus `manifest.tsv` under `out_dir`.
pub fn generate(
    out_dir: &Path,
    n: usize,
    style: SynthStyle,
    s: usize,
    seed: u64,
) -> Result<Vec<ManifestRow>> {
    std::fs::create_dir_all(out_dir.join("images"))?;
    std::fs::create_dir_all(out_dir.join("masks"))?;
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = Rng::stream(seed, "synth", i as u64);
        let (img, mask, region) = synth_sample(style, s, &mut rng);
        let id = format!("synth_{i:04}");
        let image_rel = format!("images/{id}.ppm");
        let mask_rel = format!("masks/{id}.pgm");
        netpbm::write_ppm(&out_dir.join(&image_rel), s, s, &img.to_rgb8())?;
        netpbm::write_pgm(&out_dir.join(&mask_rel), s, s, &mask.to_gray8())?;
        rows.push(ManifestRow { id, image: image_rel.into(), mask: mask_rel.into(), region });
    }
    write_manifest(&out_dir.join("manifest.tsv"), &rows)?;
    Ok(rows)
}

/// In-memory generation (same draws as [`generate`], no disk round trip).
pub fn generate_in_memory(n: usize, style: SynthStyle, s: usize, seed: u64) -> Vec<Sample> {
    (0..n)
        .map(|i| {
            let mut rng = Rng::stream(seed, "synth", i as u64);
            let (image, mask, region) = synth_sample(style, s, &mut rng);
            Sample { id: format!("synth_{i:04}"), image, mask, region }
        })
        .collect()
}
