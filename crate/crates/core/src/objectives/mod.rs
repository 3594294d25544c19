//! Training objectives: flow matching, the CLUB mutual-information upper
//! bound with its variational model, InfoNCE, and their weighted sum.

mod club;

pub use club::{club_loss, club_loss_var, derangement_shift, gaussian_log_likelihood, VariationalModel};

use thiserror::Error;

use crate::numerics::{cosine_similarity, NumericsError, Tensor, Var};

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("interpolation time {0} outside [0, 1]")]
    TimeOutOfRange(f64),
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch(Vec<usize>, Vec<usize>),
    #[error("batch of {0} has no negative pairing")]
    BatchTooSmall(usize),
    #[error("InfoNCE anchor {0} has no positive or no negative in the batch")]
    MissingPair(usize),
    #[error("need at least one negative")]
    NoNegatives,
    #[error("loss term `{0}` is not finite")]
    NonFinite(&'static str),
    #[error("non-finite likelihood")]
    NonFiniteLikelihood,
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// A point on the straight path from noise `x0` to data `x1`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowSample {
    pub x0: Tensor,
    pub x1: Tensor,
    pub t: f64,
    pub x_t: Tensor,
    pub v_t: Tensor,
}

pub fn flow_interpolate(x0: &Tensor, x1: &Tensor, t: f64) -> Result<FlowSample, ObjectiveError> {
    if x0.shape() != x1.shape() {
        return Err(ObjectiveError::ShapeMismatch(x0.shape().to_vec(), x1.shape().to_vec()));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(ObjectiveError::TimeOutOfRange(t));
    }
    let shape = x0.shape().to_vec();
    let (a, b) = (x0.data(), x1.data());
    let x_t = a.iter().zip(b).map(|(x0, x1)| t * x1 + (1.0 - t) * x0).collect();
    let v_t = a.iter().zip(b).map(|(x0, x1)| x1 - x0).collect();
    Ok(FlowSample {
        x0: x0.clone(),
        x1: x1.clone(),
        t,
        x_t: Tensor::new(shape.clone(), x_t)?,
        v_t: Tensor::new(shape, v_t)?,
    })
}

/// Mean squared error between predicted and target velocity.
pub fn loss_fm(u_pred: &Tensor, v_t: &Tensor) -> Result<f64, ObjectiveError> {
    if u_pred.shape() != v_t.shape() {
        return Err(ObjectiveError::ShapeMismatch(u_pred.shape().to_vec(), v_t.shape().to_vec()));
    }
    let n = u_pred.numel();
    Ok(u_pred.data().iter().zip(v_t.data()).map(|(u, v)| (u - v) * (u - v)).sum::<f64>() / n as f64)
}

pub fn loss_fm_var<'t>(u_pred: Var<'t>, v_t: Var<'t>) -> Result<Var<'t>, ObjectiveError> {
    if u_pred.shape() != v_t.shape() {
        return Err(ObjectiveError::ShapeMismatch(u_pred.shape(), v_t.shape()));
    }
    Ok(u_pred.sub(v_t).square().mean())
}

pub fn info_nce(anchor: &[f64], positive: &[f64], negatives: &[&[f64]]) -> Result<f64, ObjectiveError> {
    info_nce_with_temperature(anchor, positive, negatives, 1.0)
}

/// `−log softmax` of the positive similarity among positive and negatives,
/// similarities being cosines divided by `temperature`.
pub fn info_nce_with_temperature(
    anchor: &[f64],
    positive: &[f64],
    negatives: &[&[f64]],
    temperature: f64,
) -> Result<f64, ObjectiveError> {
    if negatives.is_empty() {
        return Err(ObjectiveError::NoNegatives);
    }
    let mut sims = vec![cosine_similarity(anchor, positive)? / temperature];
    for n in negatives {
        sims.push(cosine_similarity(anchor, n)? / temperature);
    }
    let m = sims.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok((m - sims[0]) + sims.iter().map(|s| (s - m).exp()).sum::<f64>().ln())
}

/// Mean InfoNCE over every row of `z` as an anchor. The positive of anchor
/// `i` is the next row (cyclically) with the same label; negatives are all
/// rows with a different label.
pub fn info_nce_batch<'t>(z: Var<'t>, labels: &[usize], temperature: f64) -> Result<Var<'t>, ObjectiveError> {
    let b = labels.len();
    let shape = z.shape();
    if shape.len() != 2 || shape[0] != b {
        return Err(ObjectiveError::ShapeMismatch(shape, vec![b]));
    }
    let zn = z.value();
    for r in 0..b {
        if zn.row(r).iter().all(|&v| v == 0.0) {
            return Err(NumericsError::ZeroNorm.into());
        }
    }
    let u = z.l2_normalize_rows();
    let sims = u.matmul(u.t()).scale(1.0 / temperature).reshape([b * b]);
    let mut terms = Vec::with_capacity(b);
    for i in 0..b {
        let pos = (1..b).map(|d| (i + d) % b).find(|&j| labels[j] == labels[i]).ok_or(ObjectiveError::MissingPair(i))?;
        let mut idx = vec![i * b + pos];
        idx.extend((0..b).filter(|&k| labels[k] != labels[i]).map(|k| i * b + k));
        if idx.len() < 2 {
            return Err(ObjectiveError::MissingPair(i));
        }
        let n = idx.len();
        terms.push(sims.gather(&idx).reshape([1, n]).log_softmax().gather(&[0]));
    }
    Ok(Var::concat_cols(&terms.iter().map(|t| t.reshape([1, 1])).collect::<Vec<_>>()).mean().neg())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub dis: f64,
    pub task: f64,
    pub emb: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { dis: 1.0, task: 0.5, emb: 0.5 }
    }
}

/// Values of the four loss terms.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct LossParts {
    pub fm: f64,
    pub dis: f64,
    pub task: f64,
    pub emb: f64,
}

impl LossParts {
    fn check(&self) -> Result<(), ObjectiveError> {
        for (name, v) in [("L_FM", self.fm), ("L_dis", self.dis), ("L_task", self.task), ("L_emb", self.emb)] {
            if !v.is_finite() {
                return Err(ObjectiveError::NonFinite(name));
            }
        }
        Ok(())
    }
}

pub fn total_loss(parts: &LossParts, w: &LossWeights) -> Result<f64, ObjectiveError> {
    parts.check()?;
    Ok(parts.fm + w.dis * parts.dis + w.task * parts.task + w.emb * parts.emb)
}

/// One row of the loss log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRow {
    pub step: usize,
    pub parts: LossParts,
    pub total: f64,
}

impl LossRow {
    pub const CSV_HEADER: &'static str = "step,L_FM,L_dis,L_task,L_emb,total";

    pub fn to_csv(&self) -> String {
        let p = &self.parts;
        format!("{},{},{},{},{},{}", self.step, p.fm, p.dis, p.task, p.emb, self.total)
    }
}
