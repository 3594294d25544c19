use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::numerics::nn::{Bound, Linear, ParamStore};
use crate::numerics::{AdamW, AdamWConfig, Tape, Tensor, Var};

use super::ObjectiveError;

/// Diagonal-Gaussian model `q(y | x)` used by the CLUB bound.
///
/// Two GELU hidden layers feed a mean head and a log-variance head; the
/// log-variance is `bound · tanh(·)`, so it stays within `±bound`.
#[derive(Clone, Debug)]
pub struct VariationalModel {
    pub store: ParamStore,
    l1: Linear,
    l2: Linear,
    mu: Linear,
    logvar: Linear,
    pub logvar_bound: f64,
    pub optimizer: AdamW,
    pub x_dim: usize,
    pub y_dim: usize,
}

impl VariationalModel {
    pub const DEFAULT_LOGVAR_BOUND: f64 = 8.0;

    pub fn new(x_dim: usize, y_dim: usize, hidden: usize, lr: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let l1 = Linear::new(&mut store, "q.l1", x_dim, hidden, &mut rng);
        let l2 = Linear::new(&mut store, "q.l2", hidden, hidden, &mut rng);
        let mu = Linear::new(&mut store, "q.mu", hidden, y_dim, &mut rng);
        let logvar = Linear::zeros(&mut store, "q.logvar", hidden, y_dim);
        let optimizer = AdamW::new(&store, AdamWConfig::with_lr(lr));
        Self { store, l1, l2, mu, logvar, logvar_bound: Self::DEFAULT_LOGVAR_BOUND, optimizer, x_dim, y_dim }
    }

    /// Mean and log-variance for each row of `x`.
    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> (Var<'t>, Var<'t>) {
        let h = self.l2.forward(p, self.l1.forward(p, x).gelu()).gelu();
        let mu = self.mu.forward(p, h);
        let lv = self.logvar.forward(p, h).tanh().scale(self.logvar_bound);
        (mu, lv)
    }

    fn check(&self, x: &Tensor, y: &Tensor) -> Result<(), ObjectiveError> {
        if x.shape().len() != 2 || y.shape().len() != 2 || x.rows() != y.rows() || x.cols() != self.x_dim || y.cols() != self.y_dim {
            return Err(ObjectiveError::ShapeMismatch(x.shape().to_vec(), y.shape().to_vec()));
        }
        Ok(())
    }

    /// Mean over rows of `log q(y_i | x_i)`.
    pub fn log_likelihood(&self, x: &Tensor, y: &Tensor) -> Result<f64, ObjectiveError> {
        self.check(x, y)?;
        let tape = Tape::new();
        let p = self.store.bind_constant(&tape);
        let (mu, lv) = self.forward(&p, tape.constant(x.clone()));
        let ll = gaussian_log_likelihood(mu, lv, tape.constant(y.clone())).item();
        if !ll.is_finite() {
            return Err(ObjectiveError::NonFiniteLikelihood);
        }
        Ok(ll)
    }

    /// One AdamW step maximizing the mean log-likelihood of the true pairs.
    /// Inputs are plain tensors, so nothing upstream receives a gradient.
    /// Returns the log-likelihood before the step.
    pub fn fit_step(&mut self, x: &Tensor, y: &Tensor) -> Result<f64, ObjectiveError> {
        self.check(x, y)?;
        if x.rows() < 2 {
            return Err(ObjectiveError::BatchTooSmall(x.rows()));
        }
        let tape = Tape::new();
        let p = self.store.bind(&tape);
        let (mu, lv) = self.forward(&p, tape.constant(x.clone()));
        let ll = gaussian_log_likelihood(mu, lv, tape.constant(y.clone()));
        let value = ll.item();
        if !value.is_finite() {
            return Err(ObjectiveError::NonFiniteLikelihood);
        }
        let grads = tape.backward(ll.neg())?;
        let g = p.grads(&self.store, &grads)?;
        self.optimizer.step(&mut self.store, &g)?;
        Ok(value)
    }

    /// CLUB estimate on tensors, averaging the negative term over `shifts`
    /// seeded derangements.
    pub fn club_estimate(&self, x: &Tensor, y: &Tensor, shifts: usize, seed: u64) -> Result<f64, ObjectiveError> {
        self.check(x, y)?;
        let n = x.rows();
        if n < 2 {
            return Err(ObjectiveError::BatchTooSmall(n));
        }
        let tape = Tape::new();
        let p = self.store.bind_constant(&tape);
        let (mu, lv) = self.forward(&p, tape.constant(x.clone()));
        let yv = tape.constant(y.clone());
        let pos = gaussian_log_likelihood(mu, lv, yv).item();
        let mut neg = 0.0;
        for s in 0..shifts.max(1) {
            let k = derangement_shift(n, seed.wrapping_add(s as u64));
            let perm: Vec<usize> = (0..n).map(|i| (i + k) % n).collect();
            neg += gaussian_log_likelihood(mu, lv, yv.gather_rows(&perm)).item();
        }
        let v = pos - neg / shifts.max(1) as f64;
        if !v.is_finite() {
            return Err(ObjectiveError::NonFiniteLikelihood);
        }
        Ok(v)
    }
}

/// Mean over rows of the diagonal-Gaussian log-density of `y` (summed over
/// dimensions).
pub fn gaussian_log_likelihood<'t>(mu: Var<'t>, logvar: Var<'t>, y: Var<'t>) -> Var<'t> {
    let rows = mu.shape()[0] as f64;
    let d = mu.shape()[1] as f64;
    let sq = y.sub(mu).square().mul(logvar.neg().exp());
    sq.add(logvar).sum().scale(-0.5 / rows).add_scalar(-0.5 * d * (2.0 * PI).ln())
}

/// Offset in `1..batch` of a seeded cyclic derangement.
pub fn derangement_shift(batch: usize, seed: u64) -> usize {
    assert!(batch >= 2, "derangement of fewer than 2 elements");
    let mut z = seed.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^= z >> 31;
    1 + (z % (batch as u64 - 1)) as usize
}

/// CLUB loss on a tape: mean log-likelihood of the true pairs minus that of
/// pairs re-matched by a cyclic shift of `z_emb`. `q` must be bound as
/// constants so the loss only moves the embeddings.
pub fn club_loss_var<'t>(
    q: &VariationalModel,
    qp: &Bound<'t>,
    z_task: Var<'t>,
    z_emb: Var<'t>,
    shift: usize,
) -> Result<Var<'t>, ObjectiveError> {
    let (st, se) = (z_task.shape(), z_emb.shape());
    if st.len() != 2 || se.len() != 2 || st[0] != se[0] || st[1] != q.x_dim || se[1] != q.y_dim {
        return Err(ObjectiveError::ShapeMismatch(st, se));
    }
    let b = st[0];
    if b < 2 {
        return Err(ObjectiveError::BatchTooSmall(b));
    }
    if shift == 0 || shift >= b {
        return Err(ObjectiveError::ShapeMismatch(vec![shift], vec![b]));
    }
    let (mu, lv) = q.forward(qp, z_task);
    let pos = gaussian_log_likelihood(mu, lv, z_emb);
    let perm: Vec<usize> = (0..b).map(|i| (i + shift) % b).collect();
    let neg = gaussian_log_likelihood(mu, lv, z_emb.gather_rows(&perm));
    Ok(pos.sub(neg))
}

/// CLUB loss on plain tensors with one seeded derangement.
pub fn club_loss(z_task: &Tensor, z_emb: &Tensor, q: &VariationalModel, seed: u64) -> Result<f64, ObjectiveError> {
    let b = z_task.shape().first().copied().unwrap_or(0);
    if b < 2 {
        return Err(ObjectiveError::BatchTooSmall(b));
    }
    let tape = Tape::new();
    let qp = q.store.bind_constant(&tape);
    let l = club_loss_var(q, &qp, tape.constant(z_task.clone()), tape.constant(z_emb.clone()), derangement_shift(b, seed))?;
    Ok(l.item())
}
