use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::numerics::nn::{Bound, Linear, ParamStore, TransformerBlock};
use crate::numerics::Var;

use super::{Backbone, GeneratorError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AdapterConfig {
    /// Mirrored blocks; injection goes into the first `depth` backbone blocks.
    pub depth: usize,
    pub d_z: usize,
}

/// Conditioning inputs on a tape: `z_task` and `z_emb` are `[batch, d_z]`,
/// `background` is `[batch·bg_tokens, bg_dim]`.
#[derive(Clone, Copy)]
pub struct Conditioning<'t> {
    pub z_task: Var<'t>,
    pub z_emb: Var<'t>,
    pub background: Var<'t>,
}

#[derive(Clone, Debug)]
pub struct Adapter {
    pub config: AdapterConfig,
    pub store: ParamStore,
    task_proj: Linear,
    emb_proj: Linear,
    bg_proj: Linear,
    blocks: Vec<TransformerBlock>,
    hints: Vec<Linear>,
    bg_tokens: usize,
    tokens: usize,
}

impl Adapter {
    /// Blocks start as copies of the backbone's; output projections start at
    /// zero.
    pub fn new(backbone: &Backbone, config: AdapterConfig, bg_tokens: usize, bg_dim: usize, seed: u64) -> Result<Self, GeneratorError> {
        if config.depth == 0 || config.depth > backbone.blocks.len() {
            return Err(GeneratorError::Config(format!(
                "adapter depth {} with {} backbone blocks",
                config.depth,
                backbone.blocks.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = backbone.config.hidden;
        let task_proj = Linear::new(&mut store, "adapter.task_proj", config.d_z, d, &mut rng);
        let emb_proj = Linear::new(&mut store, "adapter.emb_proj", config.d_z, d, &mut rng);
        let bg_proj = Linear::new(&mut store, "adapter.bg_proj", bg_dim, d, &mut rng);
        let mut blocks = Vec::with_capacity(config.depth);
        let mut hints = Vec::with_capacity(config.depth);
        for (k, src) in backbone.blocks.iter().take(config.depth).enumerate() {
            blocks.push(TransformerBlock::copy_of(&mut store, &format!("adapter.block{k}"), src, &backbone.store));
            hints.push(Linear::zeros(&mut store, &format!("adapter.hint{k}"), d, d));
        }
        Ok(Self { config, store, task_proj, emb_proj, bg_proj, blocks, hints, bg_tokens, tokens: backbone.config.tokens })
    }

    /// The zero-initialized output projections, one per block.
    pub fn hint_layers(&self) -> &[Linear] {
        &self.hints
    }

    /// Per-block additive features for the backbone stream `h0`.
    pub fn hints<'t>(&self, p: &Bound<'t>, h0: Var<'t>, cond: &Conditioning<'t>, batch: usize) -> Result<Vec<Var<'t>>, GeneratorError> {
        let (n, g) = (self.tokens, self.bg_tokens);
        let (zs, es, bs) = (cond.z_task.shape(), cond.z_emb.shape(), cond.background.shape());
        if zs != [batch, self.config.d_z] || es != [batch, self.config.d_z] || bs.first() != Some(&(batch * g)) {
            return Err(GeneratorError::Shape(format!(
                "conditioning z_task {zs:?}, z_emb {es:?}, background {bs:?} for batch {batch}"
            )));
        }
        let ct = self.task_proj.forward(p, cond.z_task);
        let ce = self.emb_proj.forward(p, cond.z_emb);
        let cb = self.bg_proj.forward(p, cond.background);
        let per_token: Vec<usize> = (0..batch).flat_map(|b| std::iter::repeat(b).take(n)).collect();
        let stream = h0.add(ct.add(ce).gather_rows(&per_token));
        let mut parts = Vec::with_capacity(4 * batch);
        for b in 0..batch {
            parts.extend([ct.slice_rows(b, 1), ce.slice_rows(b, 1), cb.slice_rows(b * g, g), stream.slice_rows(b * n, n)]);
        }
        let seq = 2 + g;
        let mut a = Var::concat_rows(&parts);
        let mut out = Vec::with_capacity(self.blocks.len());
        for (block, hint) in self.blocks.iter().zip(&self.hints) {
            a = block.forward(p, a, batch);
            let rows: Vec<Var<'t>> = (0..batch).map(|b| a.slice_rows(b * (seq + n) + seq, n)).collect();
            let tok = if rows.len() == 1 { rows[0] } else { Var::concat_rows(&rows) };
            out.push(hint.forward(p, tok));
        }
        Ok(out)
    }
}
