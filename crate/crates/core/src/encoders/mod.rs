//! Task and embodiment encoders.
//!
//! The task encoder reads the goal token, the lifted motion sequence and the
//! lifted object trajectory. Each modality goes through its own [CLS]
//! encoder; the three summaries are concatenated and fused by a two-layer
//! MLP. The embodiment encoder splits the card into 8×8 patches, projects
//! them with a fixed random matrix that stays frozen, and pools them with a
//! [CLS] encoder. Video pixels never enter the task encoder.

mod pool;

pub use pool::ClsPool;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::numerics::nn::{Bound, Linear, ParamId, ParamStore};
use crate::numerics::{patchify, NumericsError, Tape, Tensor, Var};
use crate::synthworld::{DemoSample, GOAL_VOCAB, LIFTED_MOTION_COLS, LIFTED_OBJECT_COLS};

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("motion has {motion} frames, object trajectory {object}")]
    FrameMismatch { motion: usize, object: usize },
    #[error("goal token {0} outside vocabulary")]
    UnknownToken(usize),
    #[error("card has {got} pixels, expected {expected}")]
    Resolution { got: usize, expected: usize },
    #[error("empty token sequence")]
    EmptySequence,
    #[error("shape: {0}")]
    Shape(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncoderConfig {
    pub hidden: usize,
    pub d_z: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub patch: usize,
    pub frames: usize,
    pub card_size: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { hidden: 64, d_z: 64, heads: 4, mlp_ratio: 2, patch: 8, frames: 16, card_size: 32 }
    }
}

/// An embedding vector with a cached unit-norm copy.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding {
    pub z: Vec<f64>,
    pub unit: Vec<f64>,
}

pub type TaskEmbedding = Embedding;
pub type EmbodimentEmbedding = Embedding;

impl Embedding {
    pub fn new(z: Vec<f64>) -> Result<Self, EncoderError> {
        if z.iter().any(|v| !v.is_finite()) {
            return Err(NumericsError::NonFinite { op: "embedding" }.into());
        }
        let n = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n == 0.0 {
            return Err(NumericsError::ZeroNorm.into());
        }
        let unit = z.iter().map(|v| v / n).collect();
        Ok(Self { z, unit })
    }
}

/// Inputs of the task encoder for one demonstration.
#[derive(Clone, Copy, Debug)]
pub struct TaskInput<'a> {
    pub goal_token: usize,
    /// Lifted motion, `frames × 10`.
    pub motion: &'a [f64],
    /// Lifted object trajectory, `frames × 9`.
    pub object: &'a [f64],
}

#[derive(Clone, Debug)]
pub struct TaskEncoder {
    pub tokens: ParamId,
    motion_proj: Linear,
    object_proj: Linear,
    text_pool: ClsPool,
    motion_pool: ClsPool,
    object_pool: ClsPool,
    fuse1: Linear,
    fuse2: Linear,
}

#[derive(Clone, Debug)]
pub struct EmbodimentEncoder {
    /// Fixed random patch features; frozen.
    pub patch_proj: Linear,
    pool: ClsPool,
    out: Linear,
}

/// Both encoders and their parameters.
#[derive(Clone, Debug)]
pub struct Encoders {
    pub config: EncoderConfig,
    pub store: ParamStore,
    pub task: TaskEncoder,
    pub embodiment: EmbodimentEncoder,
}

impl Encoders {
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self, EncoderError> {
        if config.card_size % config.patch != 0 || config.frames == 0 || config.hidden % config.heads != 0 {
            return Err(EncoderError::Shape(format!("invalid encoder config {config:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let (d, h, r) = (config.hidden, config.heads, config.mlp_ratio);
        let task = TaskEncoder {
            tokens: store.add("task.tokens", Tensor::randn([GOAL_VOCAB, d], 1.0, &mut rng)),
            motion_proj: Linear::new(&mut store, "task.motion_proj", LIFTED_MOTION_COLS, d, &mut rng),
            object_proj: Linear::new(&mut store, "task.object_proj", LIFTED_OBJECT_COLS, d, &mut rng),
            text_pool: ClsPool::new(&mut store, "task.text_pool", d, h, r, false, &mut rng),
            motion_pool: ClsPool::new(&mut store, "task.motion_pool", d, h, r, true, &mut rng),
            object_pool: ClsPool::new(&mut store, "task.object_pool", d, h, r, true, &mut rng),
            fuse1: Linear::new(&mut store, "task.fuse1", 3 * d, d, &mut rng),
            fuse2: Linear::new(&mut store, "task.fuse2", d, config.d_z, &mut rng),
        };
        let pdim = config.patch * config.patch;
        let patch_proj = Linear::new(&mut store, "emb.patch_proj", pdim, d, &mut rng);
        store.set_frozen(patch_proj.w, true);
        store.set_frozen(patch_proj.b, true);
        let embodiment = EmbodimentEncoder {
            patch_proj,
            pool: ClsPool::new(&mut store, "emb.pool", d, h, r, true, &mut rng),
            out: Linear::new(&mut store, "emb.out", d, config.d_z, &mut rng),
        };
        Ok(Self { config, store, task, embodiment })
    }

    fn check_task(&self, x: &TaskInput<'_>) -> Result<(), EncoderError> {
        if x.goal_token >= GOAL_VOCAB {
            return Err(EncoderError::UnknownToken(x.goal_token));
        }
        let (fm, fo) = (x.motion.len() / LIFTED_MOTION_COLS, x.object.len() / LIFTED_OBJECT_COLS);
        if x.motion.len() % LIFTED_MOTION_COLS != 0 || x.object.len() % LIFTED_OBJECT_COLS != 0 || fm != fo {
            return Err(EncoderError::FrameMismatch { motion: fm, object: fo });
        }
        if fm != self.config.frames {
            return Err(EncoderError::Shape(format!("{fm} frames, encoder expects {}", self.config.frames)));
        }
        Ok(())
    }

    /// `[batch, d_z]` task embeddings on `tape`.
    pub fn forward_task<'t>(&self, tape: &'t Tape, p: &Bound<'t>, inputs: &[TaskInput<'_>]) -> Result<Var<'t>, EncoderError> {
        if inputs.is_empty() {
            return Err(EncoderError::EmptySequence);
        }
        for x in inputs {
            self.check_task(x)?;
        }
        let b = inputs.len();
        let n = self.config.frames;
        let motion: Vec<f64> = inputs.iter().flat_map(|x| x.motion.iter().copied()).collect();
        let object: Vec<f64> = inputs.iter().flat_map(|x| x.object.iter().copied()).collect();
        let motion = tape.constant(Tensor::new([b * n, LIFTED_MOTION_COLS], motion)?);
        let object = tape.constant(Tensor::new([b * n, LIFTED_OBJECT_COLS], object)?);
        let t = &self.task;
        let ids: Vec<usize> = inputs.iter().map(|x| x.goal_token).collect();
        let text = t.text_pool.forward(tape, p, p.get(t.tokens).gather_rows(&ids), b)?;
        let m = t.motion_pool.forward(tape, p, t.motion_proj.forward(p, motion), b)?;
        let o = t.object_pool.forward(tape, p, t.object_proj.forward(p, object), b)?;
        let fused = t.fuse1.forward(p, Var::concat_cols(&[text, m, o])).gelu();
        Ok(t.fuse2.forward(p, fused))
    }

    /// `[batch, d_z]` embodiment embeddings on `tape`.
    pub fn forward_embodiment<'t>(&self, tape: &'t Tape, p: &Bound<'t>, cards: &[&[f64]]) -> Result<Var<'t>, EncoderError> {
        if cards.is_empty() {
            return Err(EncoderError::EmptySequence);
        }
        let c = self.config.card_size;
        let mut patches = Vec::new();
        for card in cards {
            if card.len() != c * c {
                return Err(EncoderError::Resolution { got: card.len(), expected: c * c });
            }
            patches.extend(patchify(card, 1, c, 1, self.config.patch)?.into_data());
        }
        let pdim = self.config.patch * self.config.patch;
        let x = tape.constant(Tensor::new([patches.len() / pdim, pdim], patches)?);
        let e = &self.embodiment;
        let pooled = e.pool.forward(tape, p, e.patch_proj.forward(p, x), cards.len())?;
        Ok(e.out.forward(p, pooled))
    }

    pub fn encode_task(&self, goal_token: usize, motion: &[f64], object: &[f64]) -> Result<TaskEmbedding, EncoderError> {
        let tape = Tape::new();
        let p = self.store.bind_constant(&tape);
        let z = self.forward_task(&tape, &p, &[TaskInput { goal_token, motion, object }])?;
        Embedding::new(z.value().into_data())
    }

    pub fn encode_embodiment(&self, card: &[f64]) -> Result<EmbodimentEmbedding, EncoderError> {
        let tape = Tape::new();
        let p = self.store.bind_constant(&tape);
        let z = self.forward_embodiment(&tape, &p, &[card])?;
        Embedding::new(z.value().into_data())
    }

    /// Task embedding of a rendered demonstration.
    pub fn encode_demo_task(&self, s: &DemoSample) -> Result<TaskEmbedding, EncoderError> {
        self.encode_task(s.goal_token, &s.lifted_motion(), &s.lifted_object())
    }

    /// Raw `[n, d_z]` embeddings for many demos at once, in chunks.
    pub fn embed_all(&self, samples: &[&DemoSample]) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>), EncoderError> {
        let mut zt = Vec::with_capacity(samples.len());
        let mut ze = Vec::with_capacity(samples.len());
        for chunk in samples.chunks(32) {
            let tape = Tape::new();
            let p = self.store.bind_constant(&tape);
            let lifted: Vec<(Vec<f64>, Vec<f64>)> = chunk.iter().map(|s| (s.lifted_motion(), s.lifted_object())).collect();
            let inputs: Vec<TaskInput<'_>> = chunk
                .iter()
                .zip(&lifted)
                .map(|(s, (m, o))| TaskInput { goal_token: s.goal_token, motion: m, object: o })
                .collect();
            let cards: Vec<Vec<f64>> = chunk.iter().map(|s| s.card_f64()).collect();
            let card_refs: Vec<&[f64]> = cards.iter().map(|c| c.as_slice()).collect();
            let t = self.forward_task(&tape, &p, &inputs)?.value();
            let e = self.forward_embodiment(&tape, &p, &card_refs)?.value();
            for r in 0..chunk.len() {
                zt.push(t.row(r).to_vec());
                ze.push(e.row(r).to_vec());
            }
        }
        Ok((zt, ze))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{sampled_gradient_check, scalar_fn};
    use crate::synthworld::{build_dataset, DatasetConfig, WorldConfig};

    fn setup() -> (Encoders, Vec<DemoSample>) {
        let world = WorldConfig { frames: 8, size: 16, card_size: 16 };
        let cfg = EncoderConfig { hidden: 16, d_z: 8, heads: 2, frames: 8, card_size: 16, ..EncoderConfig::default() };
        let data = DatasetConfig { world, seeds_per_cell: 1, val_fraction: 0.0, test_fraction: 0.0, ..Default::default() };
        (Encoders::new(cfg, 5).unwrap(), build_dataset(&data).unwrap().samples)
    }

    #[test]
    fn deterministic_and_normalized() {
        let (enc, data) = setup();
        let a = enc.encode_demo_task(&data[0]).unwrap();
        assert_eq!(a, enc.encode_demo_task(&data[0]).unwrap());
        let n: f64 = a.unit.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-6);
    }

    #[test]
    fn frame_order_matters() {
        let (enc, data) = setup();
        let s = &data[0];
        let m = s.lifted_motion();
        let mut rev = Vec::new();
        for r in m.chunks(LIFTED_MOTION_COLS).rev() {
            rev.extend_from_slice(r);
        }
        let a = enc.encode_task(s.goal_token, &m, &s.lifted_object()).unwrap();
        let b = enc.encode_task(s.goal_token, &rev, &s.lifted_object()).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn input_errors() {
        let (enc, data) = setup();
        let s = &data[0];
        let m = s.lifted_motion();
        let o = s.lifted_object();
        assert!(matches!(enc.encode_task(GOAL_VOCAB, &m, &o), Err(EncoderError::UnknownToken(_))));
        assert!(matches!(
            enc.encode_task(0, &m[..LIFTED_MOTION_COLS * 7], &o),
            Err(EncoderError::FrameMismatch { .. })
        ));
        assert!(matches!(enc.encode_embodiment(&[0.0; 10]), Err(EncoderError::Resolution { .. })));
    }

    #[test]
    fn blank_card_finite() {
        let (enc, _) = setup();
        let z = enc.encode_embodiment(&[0.0; 256]).unwrap();
        assert!(z.z.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn batch_matches_single() {
        let (enc, data) = setup();
        let refs: Vec<&DemoSample> = data.iter().take(3).collect();
        let (zt, ze) = enc.embed_all(&refs).unwrap();
        assert_eq!(zt[2], enc.encode_demo_task(&data[2]).unwrap().z);
        assert_eq!(ze[1], enc.encode_embodiment(&data[1].card_f64()).unwrap().z);
    }

    #[test]
    fn patch_projection_frozen() {
        let (enc, _) = setup();
        assert!(enc.store.get(enc.embodiment.patch_proj.w).frozen);
    }

    #[test]
    fn task_encoder_gradients() {
        let (enc, data) = setup();
        let inputs: Vec<(usize, Vec<f64>, Vec<f64>)> =
            data.iter().take(2).map(|s| (s.goal_token, s.lifted_motion(), s.lifted_object())).collect();
        let params: Vec<Tensor> = enc.store.iter().map(|(_, p)| p.value.clone()).collect();
        let f = scalar_fn(|t, v| {
            let p = Bound::from_vars(v.to_vec());
            let x: Vec<TaskInput<'_>> =
                inputs.iter().map(|(g, m, o)| TaskInput { goal_token: *g, motion: m, object: o }).collect();
            enc.forward_task(t, &p, &x).unwrap().square().sum()
        });
        let err = sampled_gradient_check(f, &params, 1e-6, 6, 11).unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn embodiment_encoder_gradients() {
        let (enc, data) = setup();
        let cards: Vec<Vec<f64>> = data.iter().take(2).map(|s| s.card_f64()).collect();
        let params: Vec<Tensor> = enc.store.iter().map(|(_, p)| p.value.clone()).collect();
        let f = scalar_fn(|t, v| {
            let p = Bound::from_vars(v.to_vec());
            let refs: Vec<&[f64]> = cards.iter().map(|c| c.as_slice()).collect();
            enc.forward_embodiment(t, &p, &refs).unwrap().square().sum()
        });
        let err = sampled_gradient_check(f, &params, 1e-6, 6, 12).unwrap();
        assert!(err < 1e-4, "{err}");
    }
}
