//! Conditional velocity predictor and ODE sampler.
//!
//! A small diffusion transformer over patch tokens serves as the frozen
//! backbone. The adapter runs a parallel stream of blocks, initialized from
//! the backbone's, over `[z_task, z_emb, background tokens, noisy tokens]`
//! and adds a zero-initialized projection of its token outputs to the
//! backbone features after each mirrored block.

mod adapter;
mod backbone;
mod export;
mod pretrain;
mod sampler;

pub use adapter::{Adapter, AdapterConfig, Conditioning};
pub use backbone::{Backbone, BackboneConfig, TokenPrior, MIN_PRIOR_VARIANCE};
pub use export::{read_pgm, write_pgm, write_ppm, write_video_artifacts, VideoMetadata};
pub(crate) use pretrain::flow_batch;
pub use pretrain::{pretrain_backbone, train_unconditional, FlowTrainConfig, PretrainReport};
pub use sampler::{euler_integrate, SamplerConfig};

use thiserror::Error;

use crate::encoders::{EncoderError, Encoders};
use crate::numerics::nn::Bound;
use crate::numerics::{patchify, unpatchify, NumericsError, Tape, Tensor, Var};
use crate::objectives::ObjectiveError;
use crate::synthworld::{DemoSample, SynthError, WorldConfig};

#[derive(Debug, Error)]
pub enum GeneratorError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("backbone is not frozen")]
    Unfrozen,
    #[error("non-finite state at integration step {0}")]
    NonFiniteState(usize),
    #[error("training diverged at step {step}: loss {loss} vs initial {initial}")]
    Diverged { step: usize, loss: f64, initial: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// How frames map to tokens.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VideoLayout {
    pub frames: usize,
    pub size: usize,
    pub channels: usize,
    pub patch: usize,
}

impl VideoLayout {
    pub fn for_world(world: &WorldConfig, patch: usize) -> Result<Self, GeneratorError> {
        let l = Self { frames: world.frames, size: world.size, channels: WorldConfig::CHANNELS, patch };
        l.validate()?;
        Ok(l)
    }

    pub fn validate(&self) -> Result<(), GeneratorError> {
        if self.patch == 0 || self.size % self.patch != 0 || self.frames == 0 || self.channels == 0 {
            return Err(GeneratorError::Config(format!("patch {} does not tile {self:?}", self.patch)));
        }
        Ok(())
    }

    pub fn grid(&self) -> usize {
        self.size / self.patch
    }

    pub fn tokens(&self) -> usize {
        self.frames * self.grid() * self.grid()
    }

    pub fn token_dim(&self) -> usize {
        self.patch * self.patch * self.channels
    }

    /// Background image (single channel) tokens.
    pub fn background_tokens(&self) -> usize {
        self.grid() * self.grid()
    }

    pub fn background_token_dim(&self) -> usize {
        self.patch * self.patch
    }

    pub fn video_len(&self) -> usize {
        self.frames * self.size * self.size * self.channels
    }

    pub fn to_tokens(&self, video: &[f64]) -> Result<Tensor, GeneratorError> {
        Ok(patchify(video, self.frames, self.size, self.channels, self.patch)?)
    }

    pub fn from_tokens(&self, tokens: &Tensor) -> Result<Vec<f64>, GeneratorError> {
        Ok(unpatchify(tokens, self.frames, self.size, self.channels, self.patch)?)
    }

    pub fn background_to_tokens(&self, background: &[f64]) -> Result<Tensor, GeneratorError> {
        Ok(patchify(background, 1, self.size, 1, self.patch)?)
    }
}

/// Frozen backbone plus trainable adapter.
#[derive(Clone, Debug)]
pub struct Generator {
    pub layout: VideoLayout,
    pub backbone: Backbone,
    pub adapter: Adapter,
}

impl Generator {
    /// Wraps a backbone, which must already be frozen, with a fresh adapter.
    pub fn new(layout: VideoLayout, backbone: Backbone, cfg: AdapterConfig, seed: u64) -> Result<Self, GeneratorError> {
        layout.validate()?;
        if !backbone.is_frozen() {
            return Err(GeneratorError::Unfrozen);
        }
        let bc = &backbone.config;
        if bc.tokens != layout.tokens() || bc.token_dim != layout.token_dim() {
            return Err(GeneratorError::Shape(format!(
                "backbone expects {}×{} tokens, layout gives {}×{}",
                bc.tokens,
                bc.token_dim,
                layout.tokens(),
                layout.token_dim()
            )));
        }
        let adapter = Adapter::new(&backbone, cfg, layout.background_tokens(), layout.background_token_dim(), seed)?;
        Ok(Self { layout, backbone, adapter })
    }

    /// Conditional velocity on a tape. `x` is `[batch·tokens, token_dim]`.
    pub fn velocity_var<'t>(
        &self,
        tape: &'t Tape,
        bp: &Bound<'t>,
        ap: &Bound<'t>,
        x: Var<'t>,
        t: &[f64],
        cond: &Conditioning<'t>,
    ) -> Result<Var<'t>, GeneratorError> {
        if !self.backbone.is_frozen() {
            return Err(GeneratorError::Unfrozen);
        }
        let b = t.len();
        let h0 = self.backbone.embed(tape, bp, x, t)?;
        let hints = self.adapter.hints(ap, h0, cond, b)?;
        self.backbone.run_blocks(tape, bp, x, h0, &hints, t)
    }

    /// Conditional velocity on plain tensors: `x_t` `[batch·tokens,
    /// token_dim]`, `z_task`/`z_emb` `[batch, d_z]`, `background`
    /// `[batch·bg_tokens, bg_dim]`.
    pub fn predict_velocity(
        &self,
        x_t: &Tensor,
        t: &[f64],
        z_task: &Tensor,
        z_emb: &Tensor,
        background: &Tensor,
    ) -> Result<Tensor, GeneratorError> {
        if t.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(GeneratorError::Shape(format!("time outside [0, 1]: {t:?}")));
        }
        let tape = Tape::new();
        let bp = self.backbone.store.bind(&tape);
        let ap = self.adapter.store.bind_constant(&tape);
        let cond = Conditioning {
            z_task: tape.constant(z_task.clone()),
            z_emb: tape.constant(z_emb.clone()),
            background: tape.constant(background.clone()),
        };
        Ok(self.velocity_var(&tape, &bp, &ap, tape.constant(x_t.clone()), t, &cond)?.value())
    }

    /// Draws one video from `z_task`, `z_emb` and a background image.
    pub fn sample_video(
        &self,
        z_task: &[f64],
        z_emb: &[f64],
        background: &[f64],
        cfg: &SamplerConfig,
    ) -> Result<Vec<f64>, GeneratorError> {
        let bg = self.layout.background_to_tokens(background)?;
        let d = z_task.len();
        let zt = Tensor::new([1, d], z_task.to_vec())?;
        let ze = Tensor::new([1, z_emb.len()], z_emb.to_vec())?;
        let tokens = euler_integrate(self.layout.tokens(), self.layout.token_dim(), cfg, |x, t| {
            self.predict_velocity(x, &[t], &zt, &ze, &bg)
        })?;
        Ok(self.layout.from_tokens(&tokens)?.into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
    }

    /// Unconditional sample from the backbone alone.
    pub fn sample_unconditional(&self, cfg: &SamplerConfig) -> Result<Vec<f64>, GeneratorError> {
        let tokens = euler_integrate(self.layout.tokens(), self.layout.token_dim(), cfg, |x, t| {
            self.backbone.velocity(x, &[t])
        })?;
        Ok(self.layout.from_tokens(&tokens)?.into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
    }

    /// Video showing `source`'s task performed by the agent in `target_card`,
    /// on the source background.
    pub fn compose_transfer(
        &self,
        encoders: &Encoders,
        source: &DemoSample,
        target_card: &[f64],
        cfg: &SamplerConfig,
    ) -> Result<Vec<f64>, GeneratorError> {
        let zt = encoders.encode_demo_task(source)?;
        let ze = encoders.encode_embodiment(target_card)?;
        self.sample_video(&zt.z, &ze.z, &source.background(), cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{sampled_gradient_check, scalar_fn};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn tiny() -> Generator {
        let layout = VideoLayout { frames: 2, size: 8, channels: 2, patch: 4 };
        let mut backbone = Backbone::new(BackboneConfig::for_layout(&layout, 8, 2, 2, 2), 3);
        backbone.freeze();
        Generator::new(layout, backbone, AdapterConfig { depth: 2, d_z: 4 }, 4).unwrap()
    }

    fn inputs(g: &Generator, batch: usize, seed: u64) -> (Tensor, Vec<f64>, Tensor, Tensor, Tensor) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = &g.layout;
        let x = Tensor::randn([batch * l.tokens(), l.token_dim()], 1.0, &mut rng);
        let t: Vec<f64> = (0..batch).map(|i| 0.2 + 0.3 * i as f64).collect();
        let zt = Tensor::randn([batch, 4], 1.0, &mut rng);
        let ze = Tensor::randn([batch, 4], 1.0, &mut rng);
        let bg = Tensor::uniform([batch * l.background_tokens(), l.background_token_dim()], 1.0, &mut rng);
        (x, t, zt, ze, bg)
    }

    /// Nudges every adapter output projection away from zero.
    fn perturb_adapter(g: &mut Generator, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for h in g.adapter.hint_layers().to_vec() {
            *g.adapter.store.value_mut(h.w) = Tensor::randn([h.fan_in, h.fan_out], 0.3, &mut rng);
            *g.adapter.store.value_mut(h.b) = Tensor::randn([h.fan_out], 0.3, &mut rng);
        }
    }

    #[test]
    fn zero_init_adapter_is_bitwise_identity() {
        let g = tiny();
        let (x, t, zt, ze, bg) = inputs(&g, 2, 1);
        let cond = g.predict_velocity(&x, &t, &zt, &ze, &bg).unwrap();
        let plain = g.backbone.velocity(&x, &t).unwrap();
        assert_eq!(cond.shape(), x.shape());
        assert!(cond.data().iter().zip(plain.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn trained_adapter_responds_to_embodiment() {
        let mut g = tiny();
        perturb_adapter(&mut g, 2);
        let (x, t, zt, ze, bg) = inputs(&g, 1, 3);
        let a = g.predict_velocity(&x, &t, &zt, &ze, &bg).unwrap();
        let ze2 = ze.map(|v| v + 0.5);
        let b = g.predict_velocity(&x, &t, &zt, &ze2, &bg).unwrap();
        assert!(a.data().iter().zip(b.data()).any(|(p, q)| (p - q).abs() > 1e-6));
    }

    #[test]
    fn unfrozen_backbone_rejected() {
        let layout = VideoLayout { frames: 2, size: 8, channels: 2, patch: 4 };
        let backbone = Backbone::new(BackboneConfig::for_layout(&layout, 8, 2, 2, 2), 3);
        assert!(matches!(Generator::new(layout, backbone, AdapterConfig { depth: 1, d_z: 4 }, 0), Err(GeneratorError::Unfrozen)));
        let mut g = tiny();
        g.backbone.store.set_frozen(g.backbone.store.find("out.w").unwrap(), false);
        let (x, t, zt, ze, bg) = inputs(&g, 1, 0);
        assert!(matches!(g.predict_velocity(&x, &t, &zt, &ze, &bg), Err(GeneratorError::Unfrozen)));
    }

    #[test]
    fn adapter_gradients_match_finite_differences() {
        let mut g = tiny();
        perturb_adapter(&mut g, 5);
        let (x, t, zt, ze, bg) = inputs(&g, 2, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let target = Tensor::randn(x.shape().to_vec(), 1.0, &mut rng);
        let params: Vec<Tensor> = g.adapter.store.iter().map(|(_, p)| p.value.clone()).collect();
        let mut all = params.clone();
        all.extend([zt.clone(), ze.clone()]);
        let np = params.len();
        let f = scalar_fn(|tape, v| {
            let bp = g.backbone.store.bind(tape);
            let ap = Bound::from_vars(v[..np].to_vec());
            let cond = Conditioning { z_task: v[np], z_emb: v[np + 1], background: tape.constant(bg.clone()) };
            let u = g.velocity_var(tape, &bp, &ap, tape.constant(x.clone()), &t, &cond).unwrap();
            u.sub(tape.constant(target.clone())).square().mean()
        });
        let err = sampled_gradient_check(f, &all, 1e-6, 4, 11).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn backbone_receives_no_gradient() {
        let mut g = tiny();
        perturb_adapter(&mut g, 8);
        let (x, t, zt, ze, bg) = inputs(&g, 2, 9);
        let tape = Tape::new();
        let bp = g.backbone.store.bind(&tape);
        let ap = g.adapter.store.bind(&tape);
        let cond = Conditioning { z_task: tape.constant(zt), z_emb: tape.constant(ze), background: tape.constant(bg) };
        let u = g.velocity_var(&tape, &bp, &ap, tape.constant(x), &t, &cond).unwrap();
        let grads = tape.backward(u.square().mean()).unwrap();
        assert!(bp.grads(&g.backbone.store, &grads).unwrap().is_all_zero());
        assert!(!ap.grads(&g.adapter.store, &grads).unwrap().is_all_zero());
    }

    #[test]
    fn sampling_is_deterministic_and_clamped() {
        let mut g = tiny();
        perturb_adapter(&mut g, 10);
        let bg = vec![0.2; 64];
        let cfg = SamplerConfig { steps: 5, seed: 42 };
        let a = g.sample_video(&[0.1, 0.2, 0.3, 0.4], &[0.5, -0.5, 0.0, 1.0], &bg, &cfg).unwrap();
        let b = g.sample_video(&[0.1, 0.2, 0.3, 0.4], &[0.5, -0.5, 0.0, 1.0], &bg, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), g.layout.video_len());
        assert!(a.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn single_step_is_noise_plus_velocity() {
        let mut g = tiny();
        perturb_adapter(&mut g, 12);
        let zt = [0.3, 0.1, -0.2, 0.0];
        let ze = [0.0, 0.4, 0.2, -0.1];
        let bg = vec![0.3; 64];
        let cfg = SamplerConfig { steps: 1, seed: 9 };
        let out = g.sample_video(&zt, &ze, &bg, &cfg).unwrap();
        let eps = cfg.noise(g.layout.tokens(), g.layout.token_dim());
        let u = g
            .predict_velocity(
                &eps,
                &[0.0],
                &Tensor::new([1, 4], zt.to_vec()).unwrap(),
                &Tensor::new([1, 4], ze.to_vec()).unwrap(),
                &g.layout.background_to_tokens(&bg).unwrap(),
            )
            .unwrap();
        let sum = Tensor::new(eps.shape().to_vec(), eps.data().iter().zip(u.data()).map(|(a, b)| a + b).collect()).unwrap();
        let expect: Vec<f64> = g.layout.from_tokens(&sum).unwrap().into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        assert_eq!(out, expect);
    }
}
