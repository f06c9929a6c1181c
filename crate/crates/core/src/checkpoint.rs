//! Checkpoint serialization.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic            8 bytes        "ROISGAN1"
//! param count      u64
//! param records    ...            generator, discriminator, normalization
//! opt count        u64
//! opt records      ...            Adam moments and step counters
//! footer           f64 epoch, f64 best validation Dice
//! ```
//!
//! Each record is `(name length: u64, name bytes, rank: u64,
//! extents: u64 x rank, values: f32 x prod(extents))`. Parameter names are
//! prefixed `gen.` / `disc.` (batch-norm running statistics included);
//! `norm.mean` / `norm.std` carry the training-split normalization
//! statistics so a checkpoint is self-contained for inference. Optimizer
//! records are `{gen,disc}.opt.t` plus per-parameter `.m` / `.v` arrays.
//! Values are stored as 32-bit IEEE-754 regardless of the build's compute
//! precision, so save -> load -> save is byte-identical.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use crate::data::NormStats;
use crate::error::{Error, Result};
use crate::models::{
    build_discriminator, build_generator, Discriminator, DiscriminatorConfig, Generator,
    GeneratorConfig, ModelParams,
};
use crate::tensor::{AdamState, Scalar, Tensor};

pub const MAGIC: &[u8; 8] = b"ROISGAN1";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CheckpointMeta {
    pub epoch: u64,
    pub best_val_dice: f64,
}

/// Everything a checkpoint restores.
pub struct Checkpoint<S: Scalar> {
    pub gen: Generator<S>,
    pub disc: Discriminator<S>,
    pub opt_g: AdamState<S>,
    pub opt_d: AdamState<S>,
    pub norm: NormStats,
    pub meta: CheckpointMeta,
}

struct Record {
    name: String,
    extents: Vec<u64>,
    values: Vec<f32>,
}

fn push_record(buf: &mut Vec<u8>, rec: &Record) {
    buf.extend_from_slice(&(rec.name.len() as u64).to_le_bytes());
    buf.extend_from_slice(rec.name.as_bytes());
    buf.extend_from_slice(&(rec.extents.len() as u64).to_le_bytes());
    for e in &rec.extents {
        buf.extend_from_slice(&e.to_le_bytes());
    }
    for v in &rec.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn tensor_record<S: Scalar>(name: String, t: &Tensor<S>) -> Record {
    Record {
        name,
        extents: t.shape().iter().map(|&e| e as u64).collect(),
        values: t.data().iter().map(|v| v.as_f64() as f32).collect(),
    }
}

fn model_records<S: Scalar>(prefix: &str, p: &ModelParams<S>, out: &mut Vec<Record>) {
    for (name, t) in p.params().iter().chain(p.buffers().iter()) {
        out.push(tensor_record(format!("{prefix}.{name}"), t));
    }
}

fn opt_records<S: Scalar>(prefix: &str, p: &ModelParams<S>, st: &AdamState<S>, out: &mut Vec<Record>) {
    out.push(Record {
        name: format!("{prefix}.opt.t"),
        extents: vec![1],
        values: vec![st.t() as f32],
    });
    let (m, v) = st.moments();
    for (i, (name, t)) in p.params().iter().enumerate() {
        let extents: Vec<u64> = t.shape().iter().map(|&e| e as u64).collect();
        out.push(Record {
            name: format!("{prefix}.opt.{name}.m"),
            extents: extents.clone(),
            values: m[i].iter().map(|x| x.as_f64() as f32).collect(),
        });
        out.push(Record {
            name: format!("{prefix}.opt.{name}.v"),
            extents,
            values: v[i].iter().map(|x| x.as_f64() as f32).collect(),
        });
    }
}

#[allow(clippy::too_many_arguments)]
pub fn save_checkpoint<S: Scalar>(
    path: &Path,
    gen: &Generator<S>,
    disc: &Discriminator<S>,
    opt_g: &AdamState<S>,
    opt_d: &AdamState<S>,
    norm: &NormStats,
    meta: CheckpointMeta,
) -> Result<()> {
    let mut params = Vec::new();
    model_records("gen", &gen.params, &mut params);
    model_records("disc", &disc.params, &mut params);
    params.push(Record {
        name: "norm.mean".into(),
        extents: vec![3],
        values: norm.mean.iter().map(|&v| v as f32).collect(),
    });
    params.push(Record {
        name: "norm.std".into(),
        extents: vec![3],
        values: norm.std.iter().map(|&v| v as f32).collect(),
    });
    let mut opts = Vec::new();
    opt_records("gen", &gen.params, opt_g, &mut opts);
    opt_records("disc", &disc.params, opt_d, &mut opts);

    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for r in &params {
        push_record(&mut buf, r);
    }
    buf.extend_from_slice(&(opts.len() as u64).to_le_bytes());
    for r in &opts {
        push_record(&mut buf, r);
    }
    buf.extend_from_slice(&(meta.epoch as f64).to_le_bytes());
    buf.extend_from_slice(&meta.best_val_dice.to_le_bytes());

    let mut file =
        std::fs::File::create(path).map_err(|e| Error::file(path, e.to_string()))?;
    file.write_all(&buf).map_err(|e| Error::file(path, e.to_string()))?;
    Ok(())
}

impl<S: Scalar> Checkpoint<S> {
    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(path, &self.gen, &self.disc, &self.opt_g, &self.opt_d, &self.norm, self.meta)
    }
}

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::file(
                self.path,
                format!("truncated checkpoint at byte {} (wanted {n} more)", self.pos),
            ));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn record(&mut self) -> Result<Record> {
        let name_len = self.u64()? as usize;
        if name_len > 4096 {
            return Err(Error::file(self.path, format!("implausible name length {name_len}")));
        }
        let name = String::from_utf8(self.take(name_len)?.to_vec())
            .map_err(|_| Error::file(self.path, "record name is not UTF-8"))?;
        let rank = self.u64()? as usize;
        if rank > 8 {
            return Err(Error::file(self.path, format!("implausible rank {rank} for {name}")));
        }
        let mut extents = Vec::with_capacity(rank);
        for _ in 0..rank {
            extents.push(self.u64()?);
        }
        let count: u64 = extents.iter().product();
        let raw = self.take(count as usize * 4)?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Record { name, extents, values })
    }
}

fn fill_model<S: Scalar>(
    path: &Path,
    prefix: &str,
    p: &ModelParams<S>,
    records: &HashMap<String, Record>,
) -> Result<()> {
    for (name, t) in p.params().iter().chain(p.buffers().iter()) {
        let key = format!("{prefix}.{name}");
        let rec = records
            .get(&key)
            .ok_or_else(|| Error::file(path, format!("missing parameter record {key}")))?;
        let want: Vec<u64> = t.shape().iter().map(|&e| e as u64).collect();
        if rec.extents != want {
            return Err(Error::file(
                path,
                format!("{key}: extents {:?} do not match model shape {want:?}", rec.extents),
            ));
        }
        let data: Vec<S> = rec.values.iter().map(|&v| S::from_f64(v as f64)).collect();
        t.set_data(&data);
    }
    Ok(())
}

fn restore_opt<S: Scalar>(
    path: &Path,
    prefix: &str,
    p: &ModelParams<S>,
    records: &HashMap<String, Record>,
) -> Result<AdamState<S>> {
    let t_rec = records
        .get(&format!("{prefix}.opt.t"))
        .ok_or_else(|| Error::file(path, format!("missing optimizer record {prefix}.opt.t")))?;
    let t = t_rec.values.first().copied().unwrap_or(0.0) as u64;
    let mut m = Vec::new();
    let mut v = Vec::new();
    for (name, tensor) in p.params() {
        for (slot, dst) in [("m", &mut m), ("v", &mut v)] {
            let key = format!("{prefix}.opt.{name}.{slot}");
            let rec = records
                .get(&key)
                .ok_or_else(|| Error::file(path, format!("missing optimizer record {key}")))?;
            if rec.values.len() != tensor.numel() {
                return Err(Error::file(path, format!("{key}: moment size mismatch")));
            }
            dst.push(rec.values.iter().map(|&x| S::from_f64(x as f64)).collect::<Vec<S>>());
        }
    }
    Ok(AdamState::restore(m, v, t))
}

/// Load with explicit model configurations (shapes are verified).
pub fn load_checkpoint<S: Scalar>(
    path: &Path,
    gen_cfg: &GeneratorConfig,
    disc_cfg: &DiscriminatorConfig,
) -> Result<Checkpoint<S>> {
    let bytes = std::fs::read(path).map_err(|e| Error::file(path, e.to_string()))?;
    let mut r = Reader { path, bytes: &bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::file(path, "bad magic: not a ROISGAN1 checkpoint"));
    }
    let mut records = HashMap::new();
    let n_params = r.u64()?;
    for _ in 0..n_params {
        let rec = r.record()?;
        records.insert(rec.name.clone(), rec);
    }
    let n_opt = r.u64()?;
    for _ in 0..n_opt {
        let rec = r.record()?;
        records.insert(rec.name.clone(), rec);
    }
    let epoch = r.f64()?;
    let best = r.f64()?;

    // seed is irrelevant: every value is overwritten from the records
    let gen = build_generator::<S>(gen_cfg, 0)?;
    let disc = build_discriminator::<S>(disc_cfg, 0)?;
    fill_model(path, "gen", &gen.params, &records)?;
    fill_model(path, "disc", &disc.params, &records)?;
    let opt_g = restore_opt(path, "gen", &gen.params, &records)?;
    let opt_d = restore_opt(path, "disc", &disc.params, &records)?;

    let norm = {
        let mean = records
            .get("norm.mean")
            .ok_or_else(|| Error::file(path, "missing norm.mean record"))?;
        let std = records
            .get("norm.std")
            .ok_or_else(|| Error::file(path, "missing norm.std record"))?;
        if mean.values.len() != 3 || std.values.len() != 3 {
            return Err(Error::file(path, "normalization records must have 3 channels"));
        }
        NormStats {
            mean: [mean.values[0] as f64, mean.values[1] as f64, mean.values[2] as f64],
            std: [std.values[0] as f64, std.values[1] as f64, std.values[2] as f64],
        }
    };

    Ok(Checkpoint {
        gen,
        disc,
        opt_g,
        opt_d,
        norm,
        meta: CheckpointMeta { epoch: epoch as u64, best_val_dice: best },
    })
}

/// Load while inferring the width configuration from the stored shapes
/// (the networks are fully convolutional, so any /16 input size works).
pub fn load_checkpoint_auto<S: Scalar>(path: &Path) -> Result<Checkpoint<S>> {
    let bytes = std::fs::read(path).map_err(|e| Error::file(path, e.to_string()))?;
    let mut r = Reader { path, bytes: &bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::file(path, "bad magic: not a ROISGAN1 checkpoint"));
    }
    let n_params = r.u64()?;
    let mut gen_w = None;
    let mut gen_in = None;
    let mut disc_w = None;
    for _ in 0..n_params {
        let rec = r.record()?;
        if rec.name == "gen.enc1.conv1.w" {
            gen_w = Some(rec.extents[0] as usize);
            gen_in = Some(rec.extents[1] as usize);
        } else if rec.name == "disc.enc1.conv1.w" {
            disc_w = Some(rec.extents[0] as usize);
        }
    }
    let (Some(w), Some(cin), Some(dw)) = (gen_w, gen_in, disc_w) else {
        return Err(Error::file(path, "checkpoint is missing the first-layer records"));
    };
    let gen_cfg = GeneratorConfig { in_channels: cin, base_width: w, image_size: 64 };
    let disc_cfg = DiscriminatorConfig { base_width: dw, image_size: 64 };
    load_checkpoint(path, &gen_cfg, &disc_cfg)
}
