//! Named parameter storage and the small set of layers shared by the
//! encoders, the variational model and the generator.

use rand::Rng;

use super::{Grads, NumericsError, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub frozen: bool,
}

/// Ordered, named parameter tensors of one model component.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(self.params.iter().all(|p| p.name != name), "duplicate parameter name `{name}`");
        self.params.push(Param { name, value, frozen: false });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Total scalar count.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn num_trainable_scalars(&self) -> usize {
        self.params.iter().filter(|p| !p.frozen).map(|p| p.value.numel()).sum()
    }

    pub fn freeze_all(&mut self) {
        self.params.iter_mut().for_each(|p| p.frozen = true);
    }

    pub fn set_frozen(&mut self, id: ParamId, frozen: bool) {
        self.params[id.0].frozen = frozen;
    }

    pub fn is_frozen(&self) -> bool {
        !self.params.is_empty() && self.params.iter().all(|p| p.frozen)
    }

    /// Registers every parameter on `tape`. Frozen parameters become
    /// constants and can never receive a gradient.
    pub fn bind<'t>(&self, tape: &'t Tape) -> Bound<'t> {
        self.bind_with(tape, false)
    }

    /// Registers every parameter as a constant regardless of its flag.
    pub fn bind_constant<'t>(&self, tape: &'t Tape) -> Bound<'t> {
        self.bind_with(tape, true)
    }

    fn bind_with<'t>(&self, tape: &'t Tape, all_constant: bool) -> Bound<'t> {
        let vars = self
            .params
            .iter()
            .map(|p| tape.leaf(p.value.clone(), !p.frozen && !all_constant))
            .collect();
        Bound { vars }
    }

    /// Overwrites values from another store with identical names and shapes.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<(), NumericsError> {
        for p in &mut self.params {
            let src = other
                .params
                .iter()
                .find(|q| q.name == p.name)
                .ok_or_else(|| NumericsError::Payload(format!("missing parameter `{}`", p.name)))?;
            if src.value.shape() != p.value.shape() {
                return Err(NumericsError::Shape(format!(
                    "`{}`: {:?} vs {:?}",
                    p.name,
                    src.value.shape(),
                    p.value.shape()
                )));
            }
            p.value = src.value.clone();
        }
        Ok(())
    }
}

/// Parameters of one store registered on a tape.
pub struct Bound<'t> {
    vars: Vec<Var<'t>>,
}

impl<'t> Bound<'t> {
    /// Wraps externally created variables, one per parameter in store order.
    /// Used to differentiate a model with respect to tensors supplied by a
    /// gradient checker.
    pub fn from_vars(vars: Vec<Var<'t>>) -> Self {
        Self { vars }
    }

    pub fn get(&self, id: ParamId) -> Var<'t> {
        self.vars[id.0]
    }

    /// Extracts per-parameter gradients. A gradient that reached a frozen
    /// parameter is an error.
    pub fn grads(&self, store: &ParamStore, grads: &Grads) -> Result<ParamGrads, NumericsError> {
        let mut out = Vec::with_capacity(self.vars.len());
        for (var, p) in self.vars.iter().zip(&store.params) {
            let g = grads.get(*var);
            if p.frozen {
                if let Some(g) = &g {
                    if g.data().iter().any(|&v| v != 0.0) {
                        return Err(NumericsError::FrozenGradient(p.name.clone()));
                    }
                }
                out.push(None);
            } else {
                out.push(g);
            }
        }
        Ok(ParamGrads { grads: out })
    }
}

/// Gradients for the parameters of one [`ParamStore`], by position.
#[derive(Clone, Debug)]
pub struct ParamGrads {
    grads: Vec<Option<Tensor>>,
}

impl ParamGrads {
    pub fn empty(store: &ParamStore) -> Self {
        Self { grads: vec![None; store.len()] }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// True when no parameter received a nonzero gradient.
    pub fn is_all_zero(&self) -> bool {
        self.grads.iter().flatten().all(|g| g.data().iter().all(|&v| v == 0.0))
    }

    /// Adds `other` into `self`.
    pub fn accumulate(&mut self, other: &ParamGrads) {
        assert_eq!(self.grads.len(), other.grads.len());
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            match (a.as_mut(), b) {
                (Some(a), Some(b)) => a.data_mut().iter_mut().zip(b.data()).for_each(|(x, y)| *x += y),
                (None, Some(b)) => *a = Some(b.clone()),
                _ => {}
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.grads.iter_mut().flatten() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.grads.iter().flatten().flat_map(|g| g.data()).map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Rescales so the global norm does not exceed `max_norm`.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let n = self.global_norm();
        if n > max_norm && n > 0.0 {
            self.scale(max_norm / n);
        }
        n
    }
}

/// Weight init scale `1 / sqrt(fan_in)`.
fn init_std(fan_in: usize) -> f64 {
    1.0 / (fan_in as f64).sqrt()
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let w = store.add(format!("{name}.w"), Tensor::randn([fan_in, fan_out], init_std(fan_in), rng));
        let b = store.add(format!("{name}.b"), Tensor::zeros([fan_out]));
        Self { w, b, fan_in, fan_out }
    }

    /// Zero weights and bias.
    pub fn zeros(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize) -> Self {
        let w = store.add(format!("{name}.w"), Tensor::zeros([fan_in, fan_out]));
        let b = store.add(format!("{name}.b"), Tensor::zeros([fan_out]));
        Self { w, b, fan_in, fan_out }
    }

    /// A new layer in `store` holding a copy of `src`'s values from `src_store`.
    pub fn copy_of(store: &mut ParamStore, name: &str, src: &Linear, src_store: &ParamStore) -> Self {
        let w = store.add(format!("{name}.w"), src_store.value(src.w).clone());
        let b = store.add(format!("{name}.b"), src_store.value(src.b).clone());
        Self { w, b, fan_in: src.fan_in, fan_out: src.fan_out }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Var<'t> {
        x.matmul(p.get(self.w)).add_row(p.get(self.b))
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        let gamma = store.add(format!("{name}.gamma"), Tensor::full([dim], 1.0));
        let beta = store.add(format!("{name}.beta"), Tensor::zeros([dim]));
        Self { gamma, beta }
    }

    pub fn copy_of(store: &mut ParamStore, name: &str, src: &LayerNorm, src_store: &ParamStore) -> Self {
        let gamma = store.add(format!("{name}.gamma"), src_store.value(src.gamma).clone());
        let beta = store.add(format!("{name}.beta"), src_store.value(src.beta).clone());
        Self { gamma, beta }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Var<'t> {
        x.layer_norm(p.get(self.gamma), p.get(self.beta))
    }
}

/// Multi-head self-attention over `batch` independent sequences of equal
/// length stacked row-wise.
#[derive(Clone, Debug)]
pub struct SelfAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl SelfAttention {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, dim: usize, heads: usize, rng: &mut R) -> Self {
        assert!(dim % heads == 0, "hidden size {dim} not divisible by {heads} heads");
        Self {
            q: Linear::new(store, &format!("{name}.q"), dim, dim, rng),
            k: Linear::new(store, &format!("{name}.k"), dim, dim, rng),
            v: Linear::new(store, &format!("{name}.v"), dim, dim, rng),
            o: Linear::new(store, &format!("{name}.o"), dim, dim, rng),
            heads,
        }
    }

    pub fn copy_of(store: &mut ParamStore, name: &str, src: &SelfAttention, src_store: &ParamStore) -> Self {
        Self {
            q: Linear::copy_of(store, &format!("{name}.q"), &src.q, src_store),
            k: Linear::copy_of(store, &format!("{name}.k"), &src.k, src_store),
            v: Linear::copy_of(store, &format!("{name}.v"), &src.v, src_store),
            o: Linear::copy_of(store, &format!("{name}.o"), &src.o, src_store),
            heads: src.heads,
        }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>, batch: usize) -> Var<'t> {
        let rows = x.shape()[0];
        assert!(batch > 0 && rows % batch == 0, "attention: {rows} rows into {batch} sequences");
        let seq = rows / batch;
        let dim = self.q.fan_out;
        let hd = dim / self.heads;
        let q = self.q.forward(p, x);
        let k = self.k.forward(p, x);
        let v = self.v.forward(p, x);
        let mut per_seq = Vec::with_capacity(batch);
        for b in 0..batch {
            let mut heads = Vec::with_capacity(self.heads);
            for h in 0..self.heads {
                let qh = q.block(b * seq, seq, h * hd, hd);
                let kh = k.block(b * seq, seq, h * hd, hd);
                let vh = v.block(b * seq, seq, h * hd, hd);
                heads.push(Var::attention(qh, kh, vh));
            }
            per_seq.push(if heads.len() == 1 { heads[0] } else { Var::concat_cols(&heads) });
        }
        let joined = if per_seq.len() == 1 { per_seq[0] } else { Var::concat_rows(&per_seq) };
        self.o.forward(p, joined)
    }
}

/// Pre-norm transformer block: attention then a GELU MLP, both residual.
#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pub ln1: LayerNorm,
    pub attn: SelfAttention,
    pub ln2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl TransformerBlock {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        mlp_ratio: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), dim),
            attn: SelfAttention::new(store, &format!("{name}.attn"), dim, heads, rng),
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), dim),
            fc1: Linear::new(store, &format!("{name}.fc1"), dim, dim * mlp_ratio, rng),
            fc2: Linear::new(store, &format!("{name}.fc2"), dim * mlp_ratio, dim, rng),
        }
    }

    pub fn copy_of(store: &mut ParamStore, name: &str, src: &TransformerBlock, src_store: &ParamStore) -> Self {
        Self {
            ln1: LayerNorm::copy_of(store, &format!("{name}.ln1"), &src.ln1, src_store),
            attn: SelfAttention::copy_of(store, &format!("{name}.attn"), &src.attn, src_store),
            ln2: LayerNorm::copy_of(store, &format!("{name}.ln2"), &src.ln2, src_store),
            fc1: Linear::copy_of(store, &format!("{name}.fc1"), &src.fc1, src_store),
            fc2: Linear::copy_of(store, &format!("{name}.fc2"), &src.fc2, src_store),
        }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>, batch: usize) -> Var<'t> {
        let h = x.add(self.attn.forward(p, self.ln1.forward(p, x), batch));
        let m = self.fc2.forward(p, self.fc1.forward(p, self.ln2.forward(p, h)).gelu());
        h.add(m)
    }
}

/// Sinusoidal encoding of integer positions, shape `[len, dim]`.
pub fn sinusoidal_positions(len: usize, dim: usize) -> Tensor {
    let mut data = Vec::with_capacity(len * dim);
    for pos in 0..len {
        data.extend(sinusoidal_row(pos as f64, dim));
    }
    Tensor::from_parts(vec![len, dim], data)
}

/// Sinusoidal features of a real scalar (used for flow time), length `dim`.
pub fn sinusoidal_row(x: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut row = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        row[2 * i] = (x * freq).sin();
        row[2 * i + 1] = (x * freq).cos();
    }
    row
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn frozen_params_bind_as_constants() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let lin = Linear::new(&mut store, "l", 3, 2, &mut rng);
        store.freeze_all();
        let tape = Tape::new();
        let p = store.bind(&tape);
        let x = tape.param(Tensor::full([1, 3], 1.0));
        let y = lin.forward(&p, x).square().sum();
        let grads = tape.backward(y).unwrap();
        let pg = p.grads(&store, &grads).unwrap();
        assert!(pg.is_all_zero());
        assert!(grads.get(x).is_some());
    }

    #[test]
    fn attention_output_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let block = TransformerBlock::new(&mut store, "b", 8, 2, 2, &mut rng);
        let tape = Tape::new();
        let p = store.bind(&tape);
        let x = tape.constant(Tensor::randn([6, 8], 1.0, &mut rng));
        assert_eq!(block.forward(&p, x, 2).shape(), vec![6, 8]);
    }

    #[test]
    fn copied_block_matches_source() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut a = ParamStore::new();
        let src = TransformerBlock::new(&mut a, "src", 8, 2, 2, &mut rng);
        let mut b = ParamStore::new();
        let dst = TransformerBlock::copy_of(&mut b, "dst", &src, &a);
        let tape = Tape::new();
        let (pa, pb) = (a.bind(&tape), b.bind(&tape));
        let x = tape.constant(Tensor::randn([4, 8], 1.0, &mut rng));
        assert_eq!(src.forward(&pa, x, 1).value(), dst.forward(&pb, x, 1).value());
    }
}
