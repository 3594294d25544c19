use rand::Rng;

use crate::numerics::nn::{sinusoidal_positions, Bound, LayerNorm, Linear, ParamId, ParamStore};
use crate::numerics::{Tape, Tensor, Var};

use super::EncoderError;

/// Single-layer encoder summarizing a token sequence by a learnable [CLS]
/// token.
///
/// The [CLS] query attends over the input tokens (not over itself), then
/// passes through the usual pre-norm residual MLP. Only the [CLS] position is
/// computed because nothing else is read. Without positional encoding the
/// output is a symmetric function of the tokens, and for identical tokens it
/// does not depend on their number.
#[derive(Clone, Debug)]
pub struct ClsPool {
    pub cls: ParamId,
    ln1: LayerNorm,
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    ln2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
    heads: usize,
    dim: usize,
    pub positional: bool,
}

impl ClsPool {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        mlp_ratio: usize,
        positional: bool,
        rng: &mut R,
    ) -> Self {
        assert!(dim % heads == 0, "hidden size {dim} not divisible by {heads} heads");
        Self {
            cls: store.add(format!("{name}.cls"), Tensor::randn([1, dim], 0.5, rng)),
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), dim),
            q: Linear::new(store, &format!("{name}.q"), dim, dim, rng),
            k: Linear::new(store, &format!("{name}.k"), dim, dim, rng),
            v: Linear::new(store, &format!("{name}.v"), dim, dim, rng),
            o: Linear::new(store, &format!("{name}.o"), dim, dim, rng),
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), dim),
            fc1: Linear::new(store, &format!("{name}.fc1"), dim, dim * mlp_ratio, rng),
            fc2: Linear::new(store, &format!("{name}.fc2"), dim * mlp_ratio, dim, rng),
            heads,
            dim,
            positional,
        }
    }

    /// Pools `batch` sequences of `tokens.rows() / batch` tokens each into
    /// `[batch, dim]`.
    pub fn forward<'t>(&self, tape: &'t Tape, p: &Bound<'t>, tokens: Var<'t>, batch: usize) -> Result<Var<'t>, EncoderError> {
        let shape = tokens.shape();
        if shape.len() != 2 || shape[1] != self.dim {
            return Err(EncoderError::Shape(format!("tokens {shape:?}, expected [n, {}]", self.dim)));
        }
        if batch == 0 || shape[0] % batch != 0 {
            return Err(EncoderError::Shape(format!("{} tokens do not split into {batch} sequences", shape[0])));
        }
        let seq = shape[0] / batch;
        if seq == 0 {
            return Err(EncoderError::EmptySequence);
        }
        let x = if self.positional {
            let pe = sinusoidal_positions(seq, self.dim);
            let tiled: Vec<f64> = (0..batch).flat_map(|_| pe.data().iter().copied()).collect();
            tokens.add(tape.constant(Tensor::new([batch * seq, self.dim], tiled).expect("tiled positions")))
        } else {
            tokens
        };
        let cls = p.get(self.cls);
        let xn = self.ln1.forward(p, x);
        let k = self.k.forward(p, xn);
        let v = self.v.forward(p, xn);
        let q = self.q.forward(p, self.ln1.forward(p, cls));
        let hd = self.dim / self.heads;
        let mut rows = Vec::with_capacity(batch);
        for b in 0..batch {
            let heads: Vec<Var<'t>> = (0..self.heads)
                .map(|h| {
                    Var::attention(
                        q.block(0, 1, h * hd, hd),
                        k.block(b * seq, seq, h * hd, hd),
                        v.block(b * seq, seq, h * hd, hd),
                    )
                })
                .collect();
            rows.push(if heads.len() == 1 { heads[0] } else { Var::concat_cols(&heads) });
        }
        let attn = if rows.len() == 1 { rows[0] } else { Var::concat_rows(&rows) };
        let h = self.o.forward(p, attn).add_row(cls);
        let m = self.fc2.forward(p, self.fc1.forward(p, self.ln2.forward(p, h)).gelu());
        Ok(h.add(m))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pool(positional: bool) -> (ParamStore, ClsPool) {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut store = ParamStore::new();
        let pool = ClsPool::new(&mut store, "pool", 16, 4, 2, positional, &mut rng);
        (store, pool)
    }

    fn run(store: &ParamStore, pool: &ClsPool, tokens: Tensor, batch: usize) -> Result<Tensor, EncoderError> {
        let tape = Tape::new();
        let p = store.bind(&tape);
        Ok(pool.forward(&tape, &p, tape.constant(tokens), batch)?.value())
    }

    #[test]
    fn output_length_fixed() {
        let (store, pool) = pool(true);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = run(&store, &pool, Tensor::randn([1, 16], 1.0, &mut rng), 1).unwrap();
        let b = run(&store, &pool, Tensor::randn([50, 16], 1.0, &mut rng), 1).unwrap();
        assert_eq!(a.shape(), b.shape());
    }

    #[test]
    fn identical_tokens_length_invariant_without_positions() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let row = Tensor::randn([16], 1.0, &mut rng);
        let rep = |n: usize| Tensor::new([n, 16], row.data().repeat(n)).unwrap();
        let (store, plain) = pool(false);
        let a = run(&store, &plain, rep(1), 1).unwrap();
        let b = run(&store, &plain, rep(50), 1).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-12);
        }
        let (store, with_pe) = pool(true);
        let a = run(&store, &with_pe, rep(1), 1).unwrap();
        let b = run(&store, &with_pe, rep(50), 1).unwrap();
        assert!(a.data().iter().zip(b.data()).any(|(x, y)| (x - y).abs() > 1e-6));
    }

    #[test]
    fn permutation_invariant_without_positions() {
        let (store, pool) = pool(false);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = Tensor::randn([6, 16], 1.0, &mut rng);
        let mut rev = Vec::new();
        for r in (0..6).rev() {
            rev.extend_from_slice(t.row(r));
        }
        let a = run(&store, &pool, t, 1).unwrap();
        let b = run(&store, &pool, Tensor::new([6, 16], rev).unwrap(), 1).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn batched_matches_single() {
        let (store, pool) = pool(true);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = Tensor::randn([10, 16], 1.0, &mut rng);
        let both = run(&store, &pool, t.clone(), 2).unwrap();
        let second = run(&store, &pool, Tensor::new([5, 16], t.data()[80..].to_vec()).unwrap(), 1).unwrap();
        assert_eq!(both.row(1), second.data());
    }

    #[test]
    fn empty_sequence_rejected() {
        let (store, pool) = pool(false);
        assert!(matches!(run(&store, &pool, Tensor::zeros([0, 16]), 1), Err(EncoderError::EmptySequence)));
    }
}
