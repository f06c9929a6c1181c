//! Dataset ingestion, preprocessing, augmentation and splitting.
//!
//! The canonical on-disk layout is a `manifest.tsv` (columns `id`, `image`,
//! `mask`, `region`; paths relative to the manifest) pointing at binary PPM
//! images and PGM masks. Images are 3-channel values in [0, 1] before
//! z-score normalization; masks are strictly binary after loading and stay
//! binary through every pipeline stage.

pub mod netpbm;
pub mod synth;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Planar (channel-major) 3-channel image, values in [0, 1] pre-normalization.
#[derive(Clone, Debug)]
pub struct Image {
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub const CHANNELS: usize = 3;

    pub fn zeros(h: usize, w: usize) -> Self {
        Image { h, w, data: vec![0.0; Self::CHANNELS * h * w] }
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.h + y) * self.w + x]
    }

    #[inline]
    pub fn at_mut(&mut self, c: usize, y: usize, x: usize) -> &mut f32 {
        &mut self.data[(c * self.h + y) * self.w + x]
    }

    /// Quantize to interleaved 8-bit RGB.
    pub fn to_rgb8(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.h * self.w * 3];
        for y in 0..self.h {
            for x in 0..self.w {
                for c in 0..3 {
                    out[(y * self.w + x) * 3 + c] =
                        (self.at(c, y, x).clamp(0.0, 1.0) * 255.0).round() as u8;
                }
            }
        }
        out
    }

    pub fn from_rgb8(w: usize, h: usize, rgb: &[u8]) -> Self {
        let mut img = Image::zeros(h, w);
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    *img.at_mut(c, y, x) = rgb[(y * w + x) * 3 + c] as f32 / 255.0;
                }
            }
        }
        img
    }
}

/// Binary mask, one byte per pixel in {0, 1}.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub h: usize,
    pub w: usize,
    pub data: Vec<u8>,
}

impl Mask {
    pub fn zeros(h: usize, w: usize) -> Self {
        Mask { h, w, data: vec![0; h * w] }
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.w + x]
    }

    pub fn foreground(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v <= 1)
    }

    pub fn to_gray8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| if v == 1 { 255 } else { 0 }).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegionTag {
    Dg,
    Ca1,
    Ca3,
    Synth,
}

impl RegionTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            RegionTag::Dg => "DG",
            RegionTag::Ca1 => "CA1",
            RegionTag::Ca3 => "CA3",
            RegionTag::Synth => "SYNTH",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "DG" => Ok(RegionTag::Dg),
            "CA1" => Ok(RegionTag::Ca1),
            "CA3" => Ok(RegionTag::Ca3),
            "SYNTH" => Ok(RegionTag::Synth),
            other => Err(Error::config(format!("unknown region tag {other:?}"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    pub image: Image,
    pub mask: Mask,
    pub region: RegionTag,
}

/// Per-channel z-score statistics, computed on the training split only.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec { train: 0.80, val: 0.05, test: 0.15, seed: 42 }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if self.train < 0.0 || self.val < 0.0 || self.test < 0.0 {
            return Err(Error::config("split fractions must be >= 0"));
        }
        if (self.train + self.val + self.test - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!(
                "split fractions must sum to 1, got {}",
                self.train + self.val + self.test
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentationConfig {
    pub p_hflip: f64,
    pub p_rotate: f64,
    /// Rotation drawn uniformly from [-max_rotate_deg, +max_rotate_deg].
    pub max_rotate_deg: f64,
    pub p_brightness_contrast: f64,
    /// Multiplicative contrast factor range.
    pub contrast_lo: f64,
    pub contrast_hi: f64,
    /// Additive brightness drawn from [-brightness_max, +brightness_max].
    pub brightness_max: f64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            p_hflip: 0.5,
            p_rotate: 0.3,
            max_rotate_deg: 10.0,
            p_brightness_contrast: 0.2,
            contrast_lo: 0.8,
            contrast_hi: 1.2,
            brightness_max: 0.2,
        }
    }
}

impl AugmentationConfig {
    pub fn disabled() -> Self {
        AugmentationConfig {
            p_hflip: 0.0,
            p_rotate: 0.0,
            p_brightness_contrast: 0.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("p_hflip", self.p_hflip),
            ("p_rotate", self.p_rotate),
            ("p_brightness_contrast", self.p_brightness_contrast),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!("{name} must be in [0,1], got {p}")));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// loading

/// Load an image/mask pair. PPM (P6) + PGM (P5) natively; PNG behind the
/// `png` feature. Pixel values are scaled to [0, 1]; the mask is binarized
/// at 0.5 after scaling.
pub fn load_sample(image_path: &Path, mask_path: &Path) -> Result<(Image, Mask)> {
    let img_raw = read_auto(image_path, 3)?;
    let mask_raw = read_auto(mask_path, 1)?;
    if img_raw.w != mask_raw.w || img_raw.h != mask_raw.h {
        return Err(Error::file(
            image_path,
            format!(
                "image size {}x{} does not match mask size {}x{} ({})",
                img_raw.w,
                img_raw.h,
                mask_raw.w,
                mask_raw.h,
                mask_path.display()
            ),
        ));
    }
    let image = Image::from_rgb8(img_raw.w, img_raw.h, &img_raw.data);
    let mask = Mask {
        h: mask_raw.h,
        w: mask_raw.w,
        data: mask_raw.data.iter().map(|&v| u8::from(v >= 128)).collect(),
    };
    Ok((image, mask))
}

fn read_auto(path: &Path, channels: usize) -> Result<netpbm::RawImage> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    match ext.to_ascii_lowercase().as_str() {
        "ppm" => netpbm::read_ppm(path),
        "pgm" => netpbm::read_pgm(path),
        #[cfg(feature = "png")]
        "png" => read_png(path, channels),
        other => Err(Error::file(
            path,
            format!("unsupported image format {other:?} (expected ppm/pgm{})",
                if cfg!(feature = "png") { "/png" } else { "" }),
        )),
    }
    .and_then(|raw| {
        if raw.channels != channels {
            Err(Error::file(
                path,
                format!("expected {channels}-channel image, found {}", raw.channels),
            ))
        } else {
            Ok(raw)
        }
    })
}

#[cfg(feature = "png")]
fn read_png(path: &Path, channels: usize) -> Result<netpbm::RawImage> {
    let img = image::open(path).map_err(|e| Error::file(path, e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = if channels == 3 { img.to_rgb8().into_raw() } else { img.to_luma8().into_raw() };
    Ok(netpbm::RawImage { w, h, channels, data })
}

// ---------------------------------------------------------------------------
// manifest

#[derive(Clone, Debug)]
pub struct ManifestRow {
    pub id: String,
    pub image: PathBuf,
    pub mask: PathBuf,
    pub region: RegionTag,
}

pub const MANIFEST_HEADER: &str = "id\timage\tmask\tregion";

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e.to_string()))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim_end() == MANIFEST_HEADER => {}
        other => {
            return Err(Error::file(
                path,
                format!("manifest must start with {MANIFEST_HEADER:?}, found {other:?}"),
            ))
        }
    }
    let mut rows = Vec::new();
    for (ln, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(Error::file(path, format!("line {}: expected 4 columns", ln + 2)));
        }
        rows.push(ManifestRow {
            id: cols[0].to_string(),
            image: PathBuf::from(cols[1]),
            mask: PathBuf::from(cols[2]),
            region: RegionTag::parse(cols[3])?,
        });
    }
    Ok(rows)
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let mut text = String::from(MANIFEST_HEADER);
    text.push('\n');
    for r in rows {
        text.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            r.id,
            r.image.display(),
            r.mask.display(),
            r.region.as_str()
        ));
    }
    std::fs::write(path, text).map_err(|e| Error::file(path, e.to_string()))
}

/// Load every sample referenced by a manifest (paths resolved relative to
/// the manifest's directory).
pub fn load_dataset(manifest_path: &Path) -> Result<Vec<Sample>> {
    let rows = read_manifest(manifest_path)?;
    let root = manifest_path.parent().unwrap_or(Path::new("."));
    rows.into_iter()
        .map(|r| {
            let (image, mask) = load_sample(&root.join(&r.image), &root.join(&r.mask))?;
            Ok(Sample { id: r.id, image, mask, region: r.region })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// resizing

/// Bilinear resize with half-pixel-center sampling.
pub fn resize_image(img: &Image, target: usize) -> Image {
    if img.h == target && img.w == target {
        return img.clone();
    }
    let mut out = Image::zeros(target, target);
    let sy = img.h as f64 / target as f64;
    let sx = img.w as f64 / target as f64;
    for c in 0..Image::CHANNELS {
        for oy in 0..target {
            let fy = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, (img.h - 1) as f64);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(img.h - 1);
            let wy = (fy - y0 as f64) as f32;
            for ox in 0..target {
                let fx = ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, (img.w - 1) as f64);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(img.w - 1);
                let wx = (fx - x0 as f64) as f32;
                let v = img.at(c, y0, x0) * (1.0 - wy) * (1.0 - wx)
                    + img.at(c, y0, x1) * (1.0 - wy) * wx
                    + img.at(c, y1, x0) * wy * (1.0 - wx)
                    + img.at(c, y1, x1) * wy * wx;
                *out.at_mut(c, oy, ox) = v;
            }
        }
    }
    out
}

/// Nearest-neighbor resize (keeps masks strictly binary).
pub fn resize_mask(mask: &Mask, target: usize) -> Mask {
    if mask.h == target && mask.w == target {
        return mask.clone();
    }
    let mut out = Mask::zeros(target, target);
    let sy = mask.h as f64 / target as f64;
    let sx = mask.w as f64 / target as f64;
    for oy in 0..target {
        let y = (((oy as f64 + 0.5) * sy).floor() as usize).min(mask.h - 1);
        for ox in 0..target {
            let x = (((ox as f64 + 0.5) * sx).floor() as usize).min(mask.w - 1);
            out.data[oy * target + ox] = mask.at(y, x);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// normalization

/// Per-channel mean/std over all pixels of the given (training) samples.
pub fn compute_norm_stats(samples: &[Sample]) -> Result<NormStats> {
    if samples.is_empty() {
        return Err(Error::config("compute_norm_stats: no training samples"));
    }
    let mut mean = [0.0f64; 3];
    let mut count = 0usize;
    for s in samples {
        let plane = s.image.h * s.image.w;
        for c in 0..3 {
            mean[c] += s.image.data[c * plane..(c + 1) * plane]
                .iter()
                .map(|&v| v as f64)
                .sum::<f64>();
        }
        count += plane;
    }
    for m in &mut mean {
        *m /= count as f64;
    }
    let mut var = [0.0f64; 3];
    for s in samples {
        let plane = s.image.h * s.image.w;
        for c in 0..3 {
            var[c] += s.image.data[c * plane..(c + 1) * plane]
                .iter()
                .map(|&v| {
                    let d = v as f64 - mean[c];
                    d * d
                })
                .sum::<f64>();
        }
    }
    let mut std = [0.0f64; 3];
    for c in 0..3 {
        std[c] = (var[c] / count as f64).sqrt();
        if std[c] <= 0.0 {
            return Err(Error::config(format!(
                "compute_norm_stats: channel {c} has zero standard deviation"
            )));
        }
    }
    Ok(NormStats { mean, std })
}

/// Z-score normalize (not clamped; output is the network input).
pub fn apply_normalization(img: &Image, stats: &NormStats) -> Vec<f32> {
    let plane = img.h * img.w;
    let mut out = vec![0.0f32; img.data.len()];
    for c in 0..3 {
        let m = stats.mean[c] as f32;
        let s = stats.std[c] as f32;
        for i in 0..plane {
            out[c * plane + i] = (img.data[c * plane + i] - m) / s;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// augmentation

fn hflip(sample: &mut Sample) {
    let (h, w) = (sample.image.h, sample.image.w);
    for c in 0..Image::CHANNELS {
        for y in 0..h {
            for x in 0..w / 2 {
                let a = (c * h + y) * w + x;
                let b = (c * h + y) * w + (w - 1 - x);
                sample.image.data.swap(a, b);
            }
        }
    }
    for y in 0..h {
        for x in 0..w / 2 {
            sample.mask.data.swap(y * w + x, y * w + (w - 1 - x));
        }
    }
}

fn rotate(sample: &Sample, degrees: f64) -> (Image, Mask) {
    let (h, w) = (sample.image.h, sample.image.w);
    let theta = degrees.to_radians();
    let (cos, sin) = (theta.cos(), theta.sin());
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let mut img = Image::zeros(h, w);
    let mut mask = Mask::zeros(h, w);
    for oy in 0..h {
        for ox in 0..w {
            // inverse mapping; zero fill outside the source frame
            let dy = oy as f64 - cy;
            let dx = ox as f64 - cx;
            let sx = cos * dx + sin * dy + cx;
            let sy = -sin * dx + cos * dy + cy;
            // bilinear for the image
            if sx >= -1.0 && sx <= w as f64 && sy >= -1.0 && sy <= h as f64 {
                let x0 = sx.floor();
                let y0 = sy.floor();
                let wx = (sx - x0) as f32;
                let wy = (sy - y0) as f32;
                let fetch = |c: usize, yy: f64, xx: f64| -> f32 {
                    if yy < 0.0 || xx < 0.0 || yy >= h as f64 || xx >= w as f64 {
                        0.0
                    } else {
                        sample.image.at(c, yy as usize, xx as usize)
                    }
                };
                for c in 0..Image::CHANNELS {
                    let v = fetch(c, y0, x0) * (1.0 - wy) * (1.0 - wx)
                        + fetch(c, y0, x0 + 1.0) * (1.0 - wy) * wx
                        + fetch(c, y0 + 1.0, x0) * wy * (1.0 - wx)
                        + fetch(c, y0 + 1.0, x0 + 1.0) * wy * wx;
                    *img.at_mut(c, oy, ox) = v;
                }
            }
            // nearest for the mask
            let nx = sx.round();
            let ny = sy.round();
            if nx >= 0.0 && ny >= 0.0 && (nx as usize) < w && (ny as usize) < h {
                mask.data[oy * w + ox] = sample.mask.at(ny as usize, nx as usize);
            }
        }
    }
    (img, mask)
}

/// Apply the augmentation pipeline: horizontal flip, small rotation,
/// brightness/contrast (image only), then a forced resize to `target`.
/// Draws from `rng` in a fixed order so streams replay exactly.
pub fn augment(sample: &Sample, cfg: &AugmentationConfig, rng: &mut Rng, target: usize) -> Sample {
    let mut out = sample.clone();
    if rng.chance(cfg.p_hflip) {
        hflip(&mut out);
    }
    if rng.chance(cfg.p_rotate) {
        let deg = rng.uniform(-cfg.max_rotate_deg, cfg.max_rotate_deg);
        let (img, mask) = rotate(&out, deg);
        out.image = img;
        out.mask = mask;
    }
    if rng.chance(cfg.p_brightness_contrast) {
        let contrast = rng.uniform(cfg.contrast_lo, cfg.contrast_hi) as f32;
        let brightness = rng.uniform(-cfg.brightness_max, cfg.brightness_max) as f32;
        for v in &mut out.image.data {
            *v = (contrast * *v + brightness).clamp(0.0, 1.0);
        }
    }
    out.image = resize_image(&out.image, target);
    out.mask = resize_mask(&out.mask, target);
    out
}

// ---------------------------------------------------------------------------
// splitting

/// Deterministic train/val/test partition: a seeded shuffle followed by
/// contiguous slices of `round(train*n)` and `max(1, round(val*n))`;
/// the remainder is the test split.
pub fn split_dataset(
    ids: &[String],
    spec: &SplitSpec,
) -> Result<(Vec<String>, Vec<String>, Vec<String>)> {
    spec.validate()?;
    let n = ids.len();
    if n < 3 {
        return Err(Error::config(format!("split requires at least 3 samples, got {n}")));
    }
    let mut shuffled: Vec<String> = ids.to_vec();
    let mut rng = Rng::stream(spec.seed, "split", 0);
    rng.shuffle(&mut shuffled);

    let n_train = (spec.train * n as f64).round() as usize;
    let n_val = ((spec.val * n as f64).round() as usize).max(1);
    if n_train + n_val > n {
        return Err(Error::config(format!(
            "split leaves no room: train {n_train} + val {n_val} > {n}"
        )));
    }
    let train = shuffled[..n_train].to_vec();
    let val = shuffled[n_train..n_train + n_val].to_vec();
    let test = shuffled[n_train + n_val..].to_vec();
    Ok((train, val, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp_dir(name: &str) -> PathBuf {
        let dir = std::env::temp_dir().join("roisgan_data_tests").join(name);
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    fn flat_image(h: usize, w: usize, v: f32) -> Image {
        Image { h, w, data: vec![v; 3 * h * w] }
    }

    #[test]
    fn load_sample_binarizes_and_scales() {
        let dir = tmp_dir("load");
        let img_path = dir.join("a.ppm");
        let mask_path = dir.join("a.pgm");
        // one red pixel at (0,0), rest black
        let mut rgb = vec![0u8; 2 * 2 * 3];
        rgb[0] = 255;
        netpbm::write_ppm(&img_path, 2, 2, &rgb).unwrap();
        netpbm::write_pgm(&mask_path, 2, 2, &[255, 255, 255, 255]).unwrap();

        let (img, mask) = load_sample(&img_path, &mask_path).unwrap();
        assert_eq!(img.at(0, 0, 0), 1.0);
        assert_eq!(img.at(1, 0, 0), 0.0);
        assert_eq!(img.at(2, 0, 0), 0.0);
        assert_eq!(mask.data, vec![1, 1, 1, 1]); // all-255 mask -> all ones
        assert!(mask.is_binary());
    }

    #[test]
    fn load_sample_size_mismatch_names_both_sizes() {
        let dir = tmp_dir("mismatch");
        let img_path = dir.join("b.ppm");
        let mask_path = dir.join("b.pgm");
        netpbm::write_ppm(&img_path, 2, 2, &vec![0; 12]).unwrap();
        netpbm::write_pgm(&mask_path, 3, 2, &vec![0; 6]).unwrap();
        let err = load_sample(&img_path, &mask_path).unwrap_err().to_string();
        assert!(err.contains("2x2") && err.contains("3x2"), "{err}");
    }

    #[test]
    fn resize_constant_image_stays_constant() {
        let img = flat_image(8, 8, 0.37);
        let out = resize_image(&img, 4);
        assert!(out.data.iter().all(|&v| (v - 0.37).abs() < 1e-6));
        let up = resize_image(&img, 16);
        assert!(up.data.iter().all(|&v| (v - 0.37).abs() < 1e-6));
    }

    #[test]
    fn nearest_upsample_of_single_pixel_blocks() {
        let mut m = Mask::zeros(2, 2);
        m.data[3] = 1; // pixel (1,1)
        let up = resize_mask(&m, 4);
        // 2x upsample: the (1,1) source pixel covers the 2x2 block at (2..4, 2..4)
        let mut want = Mask::zeros(4, 4);
        for y in 2..4 {
            for x in 2..4 {
                want.data[y * 4 + x] = 1;
            }
        }
        assert_eq!(up, want);
        assert!(up.is_binary());
    }

    #[test]
    fn bilinear_checkerboard_downsample_gives_half() {
        // 2x2 checkerboard -> 1x1 with half-pixel centers samples (0.5, 0.5)
        let mut img = Image::zeros(2, 2);
        *img.at_mut(0, 0, 0) = 1.0;
        *img.at_mut(0, 1, 1) = 1.0;
        let out = resize_image(&img, 1);
        assert!((out.at(0, 0, 0) - 0.5).abs() < 1e-6);
    }

    #[test]
    fn norm_stats_constant_input_errors() {
        let s = Sample {
            id: "x".into(),
            image: flat_image(4, 4, 0.5),
            mask: Mask::zeros(4, 4),
            region: RegionTag::Synth,
        };
        assert!(compute_norm_stats(&[s]).is_err());
    }

    #[test]
    fn norm_stats_two_point_distribution() {
        let a = Sample {
            id: "a".into(),
            image: flat_image(2, 2, 0.0),
            mask: Mask::zeros(2, 2),
            region: RegionTag::Synth,
        };
        let b = Sample {
            id: "b".into(),
            image: flat_image(2, 2, 1.0),
            mask: Mask::zeros(2, 2),
            region: RegionTag::Synth,
        };
        let stats = compute_norm_stats(&[a.clone(), b]).unwrap();
        for c in 0..3 {
            assert!((stats.mean[c] - 0.5).abs() < 1e-12);
            assert!((stats.std[c] - 0.5).abs() < 1e-12);
        }
        let na = apply_normalization(&a.image, &stats);
        assert!(na.iter().all(|&v| (v + 1.0).abs() < 1e-6));
    }

    #[test]
    fn normalized_training_set_has_zero_mean_unit_std() {
        let mut rng = Rng::from_seed(11);
        let samples: Vec<Sample> = (0..10)
            .map(|i| {
                let mut img = Image::zeros(6, 6);
                for v in &mut img.data {
                    *v = rng.next_f64() as f32;
                }
                Sample {
                    id: format!("s{i}"),
                    image: img,
                    mask: Mask::zeros(6, 6),
                    region: RegionTag::Synth,
                }
            })
            .collect();
        let stats = compute_norm_stats(&samples).unwrap();
        // recompute stats after normalization: mean ~ 0, std ~ 1
        let mut sums = [0.0f64; 3];
        let mut sq = [0.0f64; 3];
        let mut count = 0usize;
        for s in &samples {
            let plane = s.image.h * s.image.w;
            let normed = apply_normalization(&s.image, &stats);
            for c in 0..3 {
                for i in 0..plane {
                    let v = normed[c * plane + i] as f64;
                    sums[c] += v;
                    sq[c] += v * v;
                }
            }
            count += plane;
        }
        for c in 0..3 {
            let mean = sums[c] / count as f64;
            let std = (sq[c] / count as f64 - mean * mean).sqrt();
            assert!(mean.abs() < 1e-6, "mean {mean}");
            assert!((std - 1.0).abs() < 1e-4, "std {std}");
        }
    }

    fn demo_sample() -> Sample {
        let mut img = Image::zeros(8, 8);
        let mut mask = Mask::zeros(8, 8);
        for y in 0..8 {
            for x in 0..8 {
                *img.at_mut(0, y, x) = (x as f32) / 7.0;
                *img.at_mut(1, y, x) = (y as f32) / 7.0;
                if x >= 2 && x < 5 && y >= 3 && y < 6 {
                    mask.data[y * 8 + x] = 1;
                }
            }
        }
        Sample { id: "demo".into(), image: img, mask, region: RegionTag::Dg }
    }

    #[test]
    fn augment_with_zero_probabilities_is_identity() {
        let s = demo_sample();
        let cfg = AugmentationConfig::disabled();
        let mut rng = Rng::from_seed(1);
        let out = augment(&s, &cfg, &mut rng, 8);
        assert_eq!(out.image.data, s.image.data);
        assert_eq!(out.mask, s.mask);
    }

    #[test]
    fn hflip_twice_restores_sample() {
        let s = demo_sample();
        let mut once = s.clone();
        hflip(&mut once);
        assert_ne!(once.image.data, s.image.data);
        hflip(&mut once);
        assert_eq!(once.image.data, s.image.data);
        assert_eq!(once.mask, s.mask);
    }

    #[test]
    fn zero_degree_rotation_is_identity_on_grid() {
        let s = demo_sample();
        let (img, mask) = rotate(&s, 0.0);
        assert_eq!(img.data, s.image.data);
        assert_eq!(mask, s.mask);
    }

    #[test]
    fn augmentation_keeps_mask_binary_and_image_in_range() {
        let s = demo_sample();
        let cfg = AugmentationConfig::default();
        let mut rng = Rng::from_seed(77);
        for _ in 0..50 {
            let out = augment(&s, &cfg, &mut rng, 8);
            assert!(out.mask.is_binary());
            assert!(out.image.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn split_fractions_match_paper_counts() {
        let ids: Vec<String> = (0..100).map(|i| format!("s{i}")).collect();
        let (tr, va, te) = split_dataset(&ids, &SplitSpec::default()).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (80, 5, 15));

        let ids: Vec<String> = (0..20).map(|i| format!("s{i}")).collect();
        let (tr, va, te) = split_dataset(&ids, &SplitSpec::default()).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (16, 1, 3));
    }

    #[test]
    fn split_is_deterministic_and_a_partition() {
        let ids: Vec<String> = (0..57).map(|i| format!("s{i}")).collect();
        let spec = SplitSpec::default();
        let (tr1, va1, te1) = split_dataset(&ids, &spec).unwrap();
        let (tr2, va2, te2) = split_dataset(&ids, &spec).unwrap();
        assert_eq!((&tr1, &va1, &te1), (&tr2, &va2, &te2));

        let mut all: Vec<String> =
            tr1.iter().chain(va1.iter()).chain(te1.iter()).cloned().collect();
        all.sort();
        let mut want = ids.clone();
        want.sort();
        assert_eq!(all, want, "splits must partition the id set");

        // different seed shuffles differently
        let spec2 = SplitSpec { seed: 43, ..SplitSpec::default() };
        let (tr3, _, _) = split_dataset(&ids, &spec2).unwrap();
        assert_ne!(tr1, tr3);
    }

    #[test]
    fn split_rejects_tiny_sets() {
        let ids: Vec<String> = (0..2).map(|i| format!("s{i}")).collect();
        assert!(split_dataset(&ids, &SplitSpec::default()).is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tmp_dir("manifest");
        let path = dir.join("manifest.tsv");
        let rows = vec![
            ManifestRow {
                id: "a".into(),
                image: "images/a.ppm".into(),
                mask: "masks/a.pgm".into(),
                region: RegionTag::Ca1,
            },
            ManifestRow {
                id: "b".into(),
                image: "images/b.ppm".into(),
                mask: "masks/b.pgm".into(),
                region: RegionTag::Synth,
            },
        ];
        write_manifest(&path, &rows).unwrap();
        let back = read_manifest(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].id, "a");
        assert_eq!(back[1].region, RegionTag::Synth);
    }
}
