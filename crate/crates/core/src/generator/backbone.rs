use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::numerics::nn::{sinusoidal_row, Bound, LayerNorm, Linear, ParamStore, TransformerBlock};
use crate::numerics::{Tape, Tensor, Var};

use super::{GeneratorError, VideoLayout};

/// Multiplier applied to flow time before the sinusoidal features.
const TIME_SCALE: f64 = 100.0;
/// Floor on the per-direction token variance of the linear prior.
pub const MIN_PRIOR_VARIANCE: f64 = 1e-3;

/// Gaussian model of a single token, `N(mean, basis·diag(variances)·basisᵀ)`.
///
/// Its exact rectified-flow velocity is linear in `x_t`; the backbone adds
/// that term to the network output so the network only models what the
/// Gaussian misses.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenPrior {
    pub mean: Tensor,
    /// Orthonormal eigenvectors as columns, `[dim, dim]`.
    pub basis: Tensor,
    pub variances: Tensor,
}

impl TokenPrior {
    pub fn isotropic(dim: usize) -> Self {
        let mut basis = Tensor::zeros([dim, dim]);
        for i in 0..dim {
            basis.data_mut()[i * dim + i] = 1.0;
        }
        Self { mean: Tensor::zeros([dim]), basis, variances: Tensor::full([dim], 1.0) }
    }

    /// Mean and covariance of all token rows in `samples`.
    pub fn fit(samples: &[Tensor]) -> Result<Self, GeneratorError> {
        let dim = samples.first().map(|s| s.cols()).ok_or_else(|| GeneratorError::Config("no samples for the token prior".into()))?;
        let mut mean = DVector::<f64>::zeros(dim);
        let mut count = 0usize;
        for s in samples {
            if s.cols() != dim {
                return Err(GeneratorError::Shape(format!("token width {} in a set of width {dim}", s.cols())));
            }
            for r in 0..s.rows() {
                mean += DVector::from_column_slice(s.row(r));
                count += 1;
            }
        }
        mean /= count as f64;
        let mut cov = DMatrix::<f64>::zeros(dim, dim);
        for s in samples {
            for r in 0..s.rows() {
                let d = DVector::from_column_slice(s.row(r)) - &mean;
                cov += &d * d.transpose();
            }
        }
        cov /= count as f64;
        let eig = SymmetricEigen::new(cov);
        let basis: Vec<f64> = (0..dim).flat_map(|i| (0..dim).map(move |j| (i, j))).map(|(i, j)| eig.eigenvectors[(i, j)]).collect();
        Ok(Self {
            mean: Tensor::vector(mean.iter().copied().collect()),
            basis: Tensor::matrix(dim, dim, basis)?,
            variances: Tensor::vector(eig.eigenvalues.iter().map(|&l| l.max(MIN_PRIOR_VARIANCE)).collect()),
        })
    }

    /// Gain of the velocity along a direction of variance `var` at time `t`.
    pub fn gain(t: f64, var: f64) -> f64 {
        (t * var - (1.0 - t)) / (t * t * var + (1.0 - t) * (1.0 - t))
    }

    /// Exact velocity under the prior for rows of `x` at per-sample times,
    /// `rows_per_sample` rows each.
    pub fn velocity_var<'t>(&self, tape: &'t Tape, x: Var<'t>, t: &[f64], rows_per_sample: usize) -> Result<Var<'t>, GeneratorError> {
        let dim = self.mean.numel();
        let rows = t.len() * rows_per_sample;
        let mq: Vec<f64> = (0..dim).map(|j| (0..dim).map(|i| self.mean.data()[i] * self.basis.data()[i * dim + j]).sum()).collect();
        let mut shift = Vec::with_capacity(rows * dim);
        let mut gain = Vec::with_capacity(rows * dim);
        for &ti in t {
            let s: Vec<f64> = mq.iter().map(|m| ti * m).collect();
            let g: Vec<f64> = self.variances.data().iter().map(|&v| Self::gain(ti, v)).collect();
            for _ in 0..rows_per_sample {
                shift.extend_from_slice(&s);
                gain.extend_from_slice(&g);
            }
        }
        let mut basis_t = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in 0..dim {
                basis_t[j * dim + i] = self.basis.data()[i * dim + j];
            }
        }
        let mean_rows: Vec<f64> = (0..rows).flat_map(|_| self.mean.data().iter().copied()).collect();
        Ok(x
            .matmul(tape.constant(self.basis.clone()))
            .sub(tape.constant(Tensor::new([rows, dim], shift)?))
            .mul(tape.constant(Tensor::new([rows, dim], gain)?))
            .matmul(tape.constant(Tensor::new([dim, dim], basis_t)?))
            .add(tape.constant(Tensor::new([rows, dim], mean_rows)?)))
    }
}

/// Fixed encoding of (frame, row, column) for each token, `[tokens, dim]`.
/// The row and column features take a third of the width each, the frame
/// the remainder.
fn video_positions(tokens: usize, frames: usize, dim: usize) -> Tensor {
    let per = (tokens / frames.max(1)).max(1);
    let grid = ((per as f64).sqrt().round() as usize).max(1);
    let part = 2 * (dim / 6);
    let mut data = Vec::with_capacity(tokens * dim);
    for i in 0..tokens {
        let (cell, frame) = (i % per, i / per);
        data.extend(sinusoidal_row(frame as f64, dim - 2 * part));
        data.extend(sinusoidal_row((cell / grid) as f64, part));
        data.extend(sinusoidal_row((cell % grid) as f64, part));
    }
    Tensor::from_parts(vec![tokens, dim], data)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BackboneConfig {
    /// Tokens per sample, `frames` square grids in frame-major order.
    pub tokens: usize,
    pub frames: usize,
    pub token_dim: usize,
    pub hidden: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub depth: usize,
}

impl BackboneConfig {
    pub fn for_layout(layout: &VideoLayout, hidden: usize, heads: usize, mlp_ratio: usize, depth: usize) -> Self {
        Self { tokens: layout.tokens(), frames: layout.frames, token_dim: layout.token_dim(), hidden, heads, mlp_ratio, depth }
    }
}

/// Toy diffusion transformer predicting per-token velocity.
///
/// The velocity is the [`TokenPrior`] velocity plus the network head. A patch
/// token is wider than the hidden state, so the head alone could not carry
/// the full-width linear term in `x_t`.
#[derive(Clone, Debug)]
pub struct Backbone {
    pub config: BackboneConfig,
    pub store: ParamStore,
    patch_embed: Linear,
    time1: Linear,
    time2: Linear,
    pub blocks: Vec<TransformerBlock>,
    final_ln: LayerNorm,
    out: Linear,
    positions: Tensor,
    pub prior: TokenPrior,
}

impl Backbone {
    pub fn new(config: BackboneConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = config.hidden;
        let patch_embed = Linear::new(&mut store, "patch_embed", config.token_dim, d, &mut rng);
        let time1 = Linear::new(&mut store, "time1", d, d, &mut rng);
        let time2 = Linear::new(&mut store, "time2", d, d, &mut rng);
        let blocks = (0..config.depth)
            .map(|i| TransformerBlock::new(&mut store, &format!("block{i}"), d, config.heads, config.mlp_ratio, &mut rng))
            .collect();
        let final_ln = LayerNorm::new(&mut store, "final_ln", d);
        let out = Linear::new(&mut store, "out", d, config.token_dim, &mut rng);
        let positions = video_positions(config.tokens, config.frames, d);
        let prior = TokenPrior::isotropic(config.token_dim);
        Self { config, store, patch_embed, time1, time2, blocks, final_ln, out, positions, prior }
    }

    pub fn freeze(&mut self) {
        self.store.freeze_all();
    }

    pub fn is_frozen(&self) -> bool {
        self.store.is_frozen()
    }

    fn check(&self, x: &[usize], batch: usize) -> Result<(), GeneratorError> {
        let c = &self.config;
        if batch == 0 || x.len() != 2 || x[0] != batch * c.tokens || x[1] != c.token_dim {
            return Err(GeneratorError::Shape(format!(
                "tokens {x:?} for batch {batch}, expected [{}, {}]",
                batch * c.tokens,
                c.token_dim
            )));
        }
        Ok(())
    }

    /// Token embedding plus positions plus per-sample time embedding,
    /// `[batch·tokens, hidden]`.
    pub fn embed<'t>(&self, tape: &'t Tape, p: &Bound<'t>, x: Var<'t>, t: &[f64]) -> Result<Var<'t>, GeneratorError> {
        let b = t.len();
        self.check(&x.shape(), b)?;
        let (n, d) = (self.config.tokens, self.config.hidden);
        let feats: Vec<f64> = t.iter().flat_map(|&t| sinusoidal_row(t * TIME_SCALE, d)).collect();
        let temb = self.time2.forward(p, self.time1.forward(p, tape.constant(Tensor::new([b, d], feats)?)).gelu());
        let idx: Vec<usize> = (0..b).flat_map(|i| std::iter::repeat(i).take(n)).collect();
        let pos: Vec<f64> = (0..b).flat_map(|_| self.positions.data().iter().copied()).collect();
        let h = self.patch_embed.forward(p, x).add(tape.constant(Tensor::new([b * n, d], pos)?));
        Ok(h.add(temb.gather_rows(&idx)))
    }

    /// Runs the blocks from the embedded stream `h0` of tokens `x`, adding
    /// `hints[k]` after block `k` when present, then the velocity head.
    pub fn run_blocks<'t>(
        &self,
        tape: &'t Tape,
        p: &Bound<'t>,
        x: Var<'t>,
        h0: Var<'t>,
        hints: &[Var<'t>],
        t: &[f64],
    ) -> Result<Var<'t>, GeneratorError> {
        let batch = t.len();
        if hints.len() > self.blocks.len() {
            return Err(GeneratorError::Shape(format!("{} hints for {} blocks", hints.len(), self.blocks.len())));
        }
        let mut h = h0;
        for (k, block) in self.blocks.iter().enumerate() {
            h = block.forward(p, h, batch);
            if let Some(hint) = hints.get(k) {
                h = h.add(*hint);
            }
        }
        let residual = self.out.forward(p, self.final_ln.forward(p, h));
        Ok(self.prior.velocity_var(tape, x, t, self.config.tokens)?.add(residual))
    }

    pub fn forward<'t>(&self, tape: &'t Tape, p: &Bound<'t>, x: Var<'t>, t: &[f64]) -> Result<Var<'t>, GeneratorError> {
        let h0 = self.embed(tape, p, x, t)?;
        self.run_blocks(tape, p, x, h0, &[], t)
    }

    /// Unconditional velocity on plain tensors.
    pub fn velocity(&self, x: &Tensor, t: &[f64]) -> Result<Tensor, GeneratorError> {
        let tape = Tape::new();
        let p = self.store.bind_constant(&tape);
        Ok(self.forward(&tape, &p, tape.constant(x.clone()), t)?.value())
    }
}
