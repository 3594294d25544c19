//! Versioned checkpoint bundle.
//!
//! ```text
//! magic    8 bytes "EMBFCKPT"
//! version  u32
//! hash     u64  FNV-1a of the config text
//! step     u64
//! text_len u32, config text (UTF-8)
//! payload  tensor payload: parameters of every component and the moment
//!          estimates of every optimizer
//! ```
//!
//! The per-step random streams are derived from `(seed, step)`, so the step
//! counter is the whole random state.

use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use crate::generator::{Backbone, Generator};
use crate::numerics::nn::ParamStore;
use crate::numerics::{read_payload, write_payload, AdamW, PayloadEntry, Tensor};
use crate::objectives::VariationalModel;
use crate::encoders::Encoders;

use super::config::TrainConfig;
use super::train::{mix, Trainer};
use super::HarnessError;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"EMBFCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;
const BACKBONE_MAGIC: &[u8; 8] = b"EMBFBKBN";

fn store_entries(prefix: &str, store: &ParamStore, out: &mut Vec<PayloadEntry>) {
    for (_, p) in store.iter() {
        out.push(PayloadEntry { name: format!("{prefix}/{}", p.name), tensor: p.value.clone() });
    }
}

fn backbone_entries(backbone: &Backbone, out: &mut Vec<PayloadEntry>) {
    store_entries("backbone", &backbone.store, out);
    let prior = &backbone.prior;
    for (name, t) in [("mean", &prior.mean), ("basis", &prior.basis), ("variances", &prior.variances)] {
        out.push(PayloadEntry { name: format!("backbone.prior/{name}"), tensor: t.clone() });
    }
}

fn optimizer_entries(prefix: &str, store: &ParamStore, opt: &AdamW, out: &mut Vec<PayloadEntry>) {
    out.push(PayloadEntry { name: format!("{prefix}.step"), tensor: Tensor::scalar(opt.state.step as f64) });
    for (((_, p), m), v) in store.iter().zip(&opt.state.first_moment).zip(&opt.state.second_moment) {
        out.push(PayloadEntry { name: format!("{prefix}.m/{}", p.name), tensor: m.clone() });
        out.push(PayloadEntry { name: format!("{prefix}.v/{}", p.name), tensor: v.clone() });
    }
}

struct Lookup(std::collections::HashMap<String, Tensor>);

impl Lookup {
    fn take(&mut self, name: &str, shape: &[usize]) -> Result<Tensor, HarnessError> {
        let t = self.0.remove(name).ok_or_else(|| HarnessError::Checkpoint(format!("missing tensor `{name}`")))?;
        if t.shape() != shape {
            return Err(HarnessError::Checkpoint(format!("`{name}` has shape {:?}, expected {shape:?}", t.shape())));
        }
        Ok(t)
    }

    fn fill_store(&mut self, prefix: &str, store: &mut ParamStore) -> Result<(), HarnessError> {
        let ids: Vec<_> = store.iter().map(|(id, p)| (id, p.name.clone(), p.value.shape().to_vec())).collect();
        for (id, name, shape) in ids {
            *store.value_mut(id) = self.take(&format!("{prefix}/{name}"), &shape)?;
        }
        Ok(())
    }

    fn fill_backbone(&mut self, backbone: &mut Backbone) -> Result<(), HarnessError> {
        self.fill_store("backbone", &mut backbone.store)?;
        let c = backbone.config.token_dim;
        backbone.prior.mean = self.take("backbone.prior/mean", &[c])?;
        backbone.prior.basis = self.take("backbone.prior/basis", &[c, c])?;
        backbone.prior.variances = self.take("backbone.prior/variances", &[c])?;
        Ok(())
    }

    fn fill_optimizer(&mut self, prefix: &str, store: &ParamStore, opt: &mut AdamW) -> Result<(), HarnessError> {
        opt.state.step = self.take(&format!("{prefix}.step"), Tensor::scalar(0.0).shape())?.item() as u64;
        for (i, (_, p)) in store.iter().enumerate() {
            let shape = p.value.shape().to_vec();
            opt.state.first_moment[i] = self.take(&format!("{prefix}.m/{}", p.name), &shape)?;
            opt.state.second_moment[i] = self.take(&format!("{prefix}.v/{}", p.name), &shape)?;
        }
        Ok(())
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32, HarnessError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64, HarnessError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

impl Trainer {
    pub fn to_bytes(&self) -> Result<Vec<u8>, HarnessError> {
        let text = self.config.to_text();
        let mut out = Vec::new();
        out.write_all(CHECKPOINT_MAGIC)?;
        out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        out.write_all(&self.config.hash().to_le_bytes())?;
        out.write_all(&(self.step as u64).to_le_bytes())?;
        out.write_all(&(text.len() as u32).to_le_bytes())?;
        out.write_all(text.as_bytes())?;
        let mut entries = Vec::new();
        backbone_entries(&self.generator.backbone, &mut entries);
        store_entries("encoders", &self.encoders.store, &mut entries);
        store_entries("adapter", &self.generator.adapter.store, &mut entries);
        store_entries("q", &self.q.store, &mut entries);
        optimizer_entries("opt.encoders", &self.encoders.store, &self.enc_opt, &mut entries);
        optimizer_entries("opt.adapter", &self.generator.adapter.store, &self.adapter_opt, &mut entries);
        optimizer_entries("opt.q", &self.q.store, &self.q.optimizer, &mut entries);
        write_payload(&mut out, &entries)?;
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, HarnessError> {
        let mut r = Cursor::new(bytes);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(HarnessError::Checkpoint("not a checkpoint".into()));
        }
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(HarnessError::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let hash = read_u64(&mut r)?;
        let step = read_u64(&mut r)? as usize;
        let len = read_u32(&mut r)? as usize;
        let mut text = vec![0u8; len];
        r.read_exact(&mut text)?;
        let text = String::from_utf8(text).map_err(|_| HarnessError::Checkpoint("config text is not UTF-8".into()))?;
        let config = TrainConfig::parse(&text)?;
        if config.hash() != hash {
            return Err(HarnessError::Checkpoint("config hash mismatch".into()));
        }
        let mut lookup = Lookup(read_payload(&mut r)?.into_iter().map(|e| (e.name, e.tensor)).collect());
        let mut backbone = Backbone::new(
            crate::generator::BackboneConfig::for_layout(&config.layout(), config.gen_hidden, config.gen_heads, 2, config.depth),
            0,
        );
        lookup.fill_backbone(&mut backbone)?;
        backbone.freeze();
        let mut t = Trainer::new(config, backbone)?;
        lookup.fill_store("encoders", &mut t.encoders.store)?;
        lookup.fill_store("adapter", &mut t.generator.adapter.store)?;
        lookup.fill_store("q", &mut t.q.store)?;
        lookup.fill_optimizer("opt.encoders", &t.encoders.store, &mut t.enc_opt)?;
        lookup.fill_optimizer("opt.adapter", &t.generator.adapter.store, &mut t.adapter_opt)?;
        let q_store = t.q.store.clone();
        lookup.fill_optimizer("opt.q", &q_store, &mut t.q.optimizer)?;
        if let Some(extra) = lookup.0.keys().next() {
            return Err(HarnessError::Checkpoint(format!("unexpected tensor `{extra}`")));
        }
        t.step = step;
        Ok(t)
    }

    pub fn save(&self, path: &Path) -> Result<(), HarnessError> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Components needed for evaluation and sampling.
    pub fn models(&self) -> (&Encoders, &Generator, &VariationalModel) {
        (&self.encoders, &self.generator, &self.q)
    }
}

/// Writes a frozen backbone with its architecture header.
pub fn save_backbone(backbone: &Backbone, path: &Path) -> Result<(), HarnessError> {
    let c = &backbone.config;
    let mut out = Vec::new();
    out.write_all(BACKBONE_MAGIC)?;
    for v in [c.tokens, c.frames, c.token_dim, c.hidden, c.heads, c.mlp_ratio, c.depth] {
        out.write_all(&(v as u64).to_le_bytes())?;
    }
    let mut entries = Vec::new();
    backbone_entries(backbone, &mut entries);
    write_payload(&mut out, &entries)?;
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_backbone(path: &Path) -> Result<Backbone, HarnessError> {
    let bytes = fs::read(path).map_err(|e| HarnessError::MissingBackbone(format!("{}: {e}", path.display())))?;
    let mut r = Cursor::new(bytes.as_slice());
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != BACKBONE_MAGIC {
        return Err(HarnessError::Checkpoint(format!("{} is not a backbone file", path.display())));
    }
    let mut v = [0usize; 7];
    for x in &mut v {
        *x = read_u64(&mut r)? as usize;
    }
    let config = crate::generator::BackboneConfig { tokens: v[0], frames: v[1], token_dim: v[2], hidden: v[3], heads: v[4], mlp_ratio: v[5], depth: v[6] };
    let mut backbone = Backbone::new(config, mix(0));
    let mut lookup = Lookup(read_payload(&mut r)?.into_iter().map(|e| (e.name, e.tensor)).collect());
    lookup.fill_backbone(&mut backbone)?;
    backbone.freeze();
    Ok(backbone)
}
