//! `key = value` run configuration.

use std::fmt::Write as _;
use std::path::PathBuf;

use crate::encoders::EncoderConfig;
use crate::generator::{AdapterConfig, FlowTrainConfig, SamplerConfig, VideoLayout};
use crate::objectives::LossWeights;
use crate::synthworld::{DatasetConfig, WorldConfig};

use super::HarnessError;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub dataset: Option<PathBuf>,
    pub backbone: Option<PathBuf>,
    pub frames: usize,
    pub size: usize,
    pub card_size: usize,
    pub seeds_per_cell: usize,
    pub data_seed: u64,
    pub val_fraction: f64,
    pub test_fraction: f64,

    pub enc_hidden: usize,
    pub d_z: usize,
    pub enc_heads: usize,

    pub gen_hidden: usize,
    pub gen_heads: usize,
    pub depth: usize,
    pub adapter_depth: usize,
    pub patch: usize,

    pub pretrain_steps: usize,
    pub pretrain_batch: usize,
    pub pretrain_lr: f64,
    pub pretrain_eval_every: usize,
    pub pretrain_patience: usize,

    pub steps: usize,
    /// Samples per (task class, embodiment) cell in each batch.
    pub repeats: usize,
    pub lr: f64,
    pub var_lr: f64,
    pub var_hidden: usize,
    pub weight_decay: f64,
    pub clip: f64,
    pub lambda_dis: f64,
    pub lambda_task: f64,
    pub lambda_emb: f64,
    pub temperature: f64,
    pub club_apply_every: usize,
    pub use_dis: bool,
    pub use_task_contrast: bool,
    pub use_emb_contrast: bool,
    pub seed: u64,
    pub checkpoint_every: usize,

    pub sampler_steps: usize,
    pub eval_seed: u64,
    pub var_fit_steps: usize,
    /// Learning rate of the variational model refit during evaluation.
    pub mi_lr: f64,
    /// Upper bound on transfer sources evaluated; 0 evaluates all.
    pub transfer_sources: usize,
    pub recon_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let w = WorldConfig::default();
        let e = EncoderConfig::default();
        let lw = LossWeights::default();
        Self {
            dataset: None,
            backbone: None,
            frames: w.frames,
            size: w.size,
            card_size: w.card_size,
            seeds_per_cell: 50,
            data_seed: 0,
            val_fraction: 0.1,
            test_fraction: 0.1,
            enc_hidden: e.hidden,
            d_z: e.d_z,
            enc_heads: e.heads,
            gen_hidden: 64,
            gen_heads: 4,
            depth: 4,
            adapter_depth: 4,
            patch: 8,
            pretrain_steps: 2000,
            pretrain_batch: 8,
            pretrain_lr: 1e-3,
            pretrain_eval_every: 100,
            pretrain_patience: 3,
            steps: 2000,
            repeats: 1,
            lr: 1e-5,
            var_lr: 1e-4,
            var_hidden: 64,
            weight_decay: 0.01,
            clip: 1.0,
            lambda_dis: lw.dis,
            lambda_task: lw.task,
            lambda_emb: lw.emb,
            temperature: 1.0,
            club_apply_every: 10,
            use_dis: true,
            use_task_contrast: true,
            use_emb_contrast: true,
            seed: 0,
            checkpoint_every: 0,
            sampler_steps: 50,
            eval_seed: 7,
            var_fit_steps: 500,
            mi_lr: 3e-3,
            transfer_sources: 0,
            recon_samples: 24,
        }
    }
}

macro_rules! keys {
    ($($name:ident),* $(,)?) => {
        const KEYS: &[&str] = &[$(stringify!($name)),*];

        impl TrainConfig {
            fn set_parsed(&mut self, key: &str, value: &str) -> Result<(), String> {
                match key {
                    "dataset" => self.dataset = (!value.is_empty()).then(|| PathBuf::from(value)),
                    "backbone" => self.backbone = (!value.is_empty()).then(|| PathBuf::from(value)),
                    $(stringify!($name) => self.$name = Parse::parse(value)?,)*
                    _ => return Err(format!("unknown key `{key}`")),
                }
                Ok(())
            }

            fn write_values(&self, out: &mut String) {
                $(let _ = writeln!(out, "{} = {}", stringify!($name), Show::show(&self.$name));)*
            }
        }
    };
}

keys!(
    frames, size, card_size, seeds_per_cell, data_seed, val_fraction, test_fraction, enc_hidden, d_z, enc_heads,
    gen_hidden, gen_heads, depth, adapter_depth, patch, pretrain_steps, pretrain_batch, pretrain_lr,
    pretrain_eval_every, pretrain_patience, steps, repeats, lr, var_lr, var_hidden, weight_decay, clip, lambda_dis,
    lambda_task, lambda_emb, temperature, club_apply_every, use_dis, use_task_contrast, use_emb_contrast, seed,
    checkpoint_every, sampler_steps, eval_seed, var_fit_steps, mi_lr, transfer_sources, recon_samples,
);

trait Parse: Sized {
    fn parse(s: &str) -> Result<Self, String>;
}

impl Parse for usize {
    fn parse(s: &str) -> Result<Self, String> {
        s.parse().map_err(|_| format!("expected a non-negative integer, got `{s}`"))
    }
}

impl Parse for u64 {
    fn parse(s: &str) -> Result<Self, String> {
        s.parse().map_err(|_| format!("expected a non-negative integer, got `{s}`"))
    }
}

impl Parse for f64 {
    fn parse(s: &str) -> Result<Self, String> {
        s.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| format!("expected a finite number, got `{s}`"))
    }
}

impl Parse for bool {
    fn parse(s: &str) -> Result<Self, String> {
        match s {
            "true" | "1" | "yes" | "on" => Ok(true),
            "false" | "0" | "no" | "off" => Ok(false),
            _ => Err(format!("expected true or false, got `{s}`")),
        }
    }
}

trait Show {
    fn show(&self) -> String;
}

impl Show for usize {
    fn show(&self) -> String {
        self.to_string()
    }
}

impl Show for u64 {
    fn show(&self) -> String {
        self.to_string()
    }
}

impl Show for bool {
    fn show(&self) -> String {
        self.to_string()
    }
}

impl Show for f64 {
    fn show(&self) -> String {
        format!("{self:?}")
    }
}

impl TrainConfig {
    /// Every recognised key, in canonical order.
    pub fn keys() -> impl Iterator<Item = &'static str> {
        ["dataset", "backbone"].into_iter().chain(KEYS.iter().copied())
    }

    /// Parses `key = value` lines over the defaults. Blank lines and `#`
    /// comments are skipped.
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies `key = value` lines over the current values without
    /// validating.
    pub fn apply_text(&mut self, text: &str) -> Result<(), HarnessError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| HarnessError::Config { line: i + 1, message: format!("expected `key = value`, got `{line}`") })?;
            self.set_parsed(k.trim(), v.trim()).map_err(|message| HarnessError::Config { line: i + 1, message })?;
        }
        Ok(())
    }

    /// Applies one override, as from a command-line flag.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), HarnessError> {
        self.set_parsed(key, value).map_err(|message| HarnessError::Config { line: 0, message: format!("`{key}`: {message}") })
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config { line: 0, message: m });
        if self.club_apply_every == 0 {
            return bad("club_apply_every must be at least 1".into());
        }
        if self.repeats == 0 || self.sampler_steps == 0 {
            return bad("repeats and sampler_steps must be at least 1".into());
        }
        if self.adapter_depth == 0 || self.adapter_depth > self.depth {
            return bad(format!("adapter_depth {} must be in 1..={}", self.adapter_depth, self.depth));
        }
        if self.enc_hidden % self.enc_heads != 0 || self.gen_hidden % self.gen_heads != 0 {
            return bad("hidden sizes must be divisible by head counts".into());
        }
        if self.size % self.patch != 0 || self.card_size % self.patch != 0 {
            return bad(format!("patch {} must tile frames and cards", self.patch));
        }
        if self.temperature <= 0.0 || self.lr <= 0.0 || self.var_lr <= 0.0 || self.mi_lr <= 0.0 {
            return bad("temperature and learning rates must be positive".into());
        }
        for (name, v) in [("lambda_dis", self.lambda_dis), ("lambda_task", self.lambda_task), ("lambda_emb", self.lambda_emb)] {
            if v < 0.0 {
                return bad(format!("{name} must be non-negative"));
            }
        }
        Ok(())
    }

    /// Canonical text form; parsing it gives back an equal config.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let _ = writeln!(out, "dataset = {}", path(&self.dataset));
        let _ = writeln!(out, "backbone = {}", path(&self.backbone));
        self.write_values(&mut out);
        out
    }

    /// FNV-1a hash of the canonical text.
    pub fn hash(&self) -> u64 {
        fnv1a(self.to_text().as_bytes())
    }

    pub fn world(&self) -> WorldConfig {
        WorldConfig { frames: self.frames, size: self.size, card_size: self.card_size }
    }

    pub fn dataset_config(&self) -> DatasetConfig {
        DatasetConfig {
            world: self.world(),
            seeds_per_cell: self.seeds_per_cell,
            base_seed: self.data_seed,
            val_fraction: self.val_fraction,
            test_fraction: self.test_fraction,
            ..DatasetConfig::default()
        }
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            hidden: self.enc_hidden,
            d_z: self.d_z,
            heads: self.enc_heads,
            patch: self.patch,
            frames: self.frames,
            card_size: self.card_size,
            ..EncoderConfig::default()
        }
    }

    pub fn layout(&self) -> VideoLayout {
        VideoLayout { frames: self.frames, size: self.size, channels: WorldConfig::CHANNELS, patch: self.patch }
    }

    pub fn adapter_config(&self) -> AdapterConfig {
        AdapterConfig { depth: self.adapter_depth, d_z: self.d_z }
    }

    pub fn pretrain_config(&self) -> FlowTrainConfig {
        FlowTrainConfig {
            max_steps: self.pretrain_steps,
            batch: self.pretrain_batch,
            lr: self.pretrain_lr,
            seed: self.seed,
            eval_every: self.pretrain_eval_every,
            patience: self.pretrain_patience,
            ..FlowTrainConfig::default()
        }
    }

    pub fn sampler(&self, seed: u64) -> SamplerConfig {
        SamplerConfig { steps: self.sampler_steps, seed }
    }

    /// Loss weights with ablated terms set to zero.
    pub fn effective_weights(&self) -> LossWeights {
        LossWeights {
            dis: if self.use_dis { self.lambda_dis } else { 0.0 },
            task: if self.use_task_contrast { self.lambda_task } else { 0.0 },
            emb: if self.use_emb_contrast { self.lambda_emb } else { 0.0 },
        }
    }
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_text() {
        let mut c = TrainConfig::default();
        c.set("lr", "0.003").unwrap();
        c.set("use_dis", "false").unwrap();
        c.set("dataset", "data/x").unwrap();
        let back = TrainConfig::parse(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        assert_eq!(TrainConfig::keys().count(), KEYS.len() + 2);
    }

    #[test]
    fn defaults_and_comments() {
        let c = TrainConfig::parse("# run\n\nsteps = 10  # short\n").unwrap();
        assert_eq!(c.steps, 10);
        assert_eq!((c.lambda_dis, c.lambda_task, c.lambda_emb), (1.0, 0.5, 0.5));
        assert_eq!((c.lr, c.var_lr, c.club_apply_every), (1e-5, 1e-4, 10));
    }

    #[test]
    fn errors_carry_line_numbers() {
        match TrainConfig::parse("steps = 1\nbogus = 2\n") {
            Err(HarnessError::Config { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("bogus"));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(TrainConfig::parse("lr = fast"), Err(HarnessError::Config { line: 1, .. })));
        assert!(matches!(TrainConfig::parse("steps 3"), Err(HarnessError::Config { line: 1, .. })));
        assert!(TrainConfig::parse("club_apply_every = 0").is_err());
    }

    #[test]
    fn ablation_switches_independent() {
        let mut c = TrainConfig::default();
        c.use_task_contrast = false;
        let w = c.effective_weights();
        assert_eq!((w.dis, w.task, w.emb), (1.0, 0.0, 0.5));
    }
}
