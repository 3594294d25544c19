use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::numerics::{AdamW, AdamWConfig, Tape, Tensor};
use crate::objectives::{flow_interpolate, loss_fm_var};
use crate::synthworld::{Dataset, Split};

use super::{Backbone, BackboneConfig, GeneratorError, VideoLayout};

/// Loss above `DIVERGENCE_FACTOR ×` the first loss for
/// `DIVERGENCE_PATIENCE` consecutive steps aborts training.
const DIVERGENCE_FACTOR: f64 = 10.0;
const DIVERGENCE_PATIENCE: usize = 500;
const MAX_VAL_SAMPLES: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowTrainConfig {
    pub max_steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    pub eval_every: usize,
    /// Evaluations without relative improvement of `min_delta` before
    /// stopping.
    pub patience: usize,
    pub min_delta: f64,
    pub clip: f64,
}

impl Default for FlowTrainConfig {
    fn default() -> Self {
        Self { max_steps: 2000, batch: 8, lr: 1e-3, seed: 0, eval_every: 100, patience: 3, min_delta: 1e-3, clip: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainReport {
    pub train_losses: Vec<f64>,
    pub val_losses: Vec<(usize, f64)>,
    pub steps_run: usize,
    pub plateaued: bool,
}

/// Stacks rectified-flow training pairs for the given data samples.
pub(crate) fn flow_batch<R: Rng>(samples: &[&Tensor], rng: &mut R, times: Option<&[f64]>) -> Result<(Tensor, Tensor, Vec<f64>), GeneratorError> {
    let shape = samples[0].shape().to_vec();
    let mut xt = Vec::with_capacity(samples.len() * samples[0].numel());
    let mut vt = Vec::with_capacity(xt.capacity());
    let mut ts = Vec::with_capacity(samples.len());
    for (i, x1) in samples.iter().enumerate() {
        let x0 = Tensor::randn(shape.clone(), 1.0, rng);
        let t = match times {
            Some(ts) => ts[i],
            None => rng.random::<f64>(),
        };
        let s = flow_interpolate(&x0, x1, t)?;
        xt.extend_from_slice(s.x_t.data());
        vt.extend_from_slice(s.v_t.data());
        ts.push(t);
    }
    let rows = samples.len() * shape[0];
    Ok((Tensor::new([rows, shape[1]], xt)?, Tensor::new([rows, shape[1]], vt)?, ts))
}

fn validation_loss(backbone: &Backbone, val: &[Tensor], cfg: &FlowTrainConfig) -> Result<f64, GeneratorError> {
    let n = val.len().min(MAX_VAL_SAMPLES);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f_7a11);
    let times: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
    let mut total = 0.0;
    for start in (0..n).step_by(cfg.batch.max(1)) {
        let end = (start + cfg.batch.max(1)).min(n);
        let refs: Vec<&Tensor> = val[start..end].iter().collect();
        let (xt, vt, ts) = flow_batch(&refs, &mut rng, Some(&times[start..end]))?;
        let u = backbone.velocity(&xt, &ts)?;
        total += u.data().iter().zip(vt.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    Ok(total / (n * val[0].numel()) as f64)
}

/// Fits the backbone's token prior to `train`, then runs unconditional flow
/// matching until validation loss plateaus or `max_steps`.
pub fn train_unconditional(
    backbone: &mut Backbone,
    train: &[Tensor],
    val: &[Tensor],
    cfg: &FlowTrainConfig,
) -> Result<PretrainReport, GeneratorError> {
    if train.is_empty() || cfg.batch == 0 || cfg.eval_every == 0 {
        return Err(GeneratorError::Config("pretraining needs data, a batch size and an eval cadence".into()));
    }
    if backbone.is_frozen() {
        return Err(GeneratorError::Config("backbone is already frozen".into()));
    }
    let val = if val.is_empty() { train } else { val };
    backbone.prior = super::TokenPrior::fit(train)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamW::new(&backbone.store, AdamWConfig { weight_decay: 0.0, ..AdamWConfig::with_lr(cfg.lr) });
    let mut report = PretrainReport { train_losses: Vec::new(), val_losses: Vec::new(), steps_run: 0, plateaued: false };
    let mut initial = None;
    let mut above = 0;
    let mut best = f64::INFINITY;
    let mut stale = 0;
    for step in 0..cfg.max_steps {
        let refs: Vec<&Tensor> = (0..cfg.batch).map(|_| &train[rng.random_range(0..train.len())]).collect();
        let (xt, vt, ts) = flow_batch(&refs, &mut rng, None)?;
        let tape = Tape::new();
        let p = backbone.store.bind(&tape);
        let u = backbone.forward(&tape, &p, tape.constant(xt), &ts)?;
        let loss = loss_fm_var(u, tape.constant(vt))?;
        let value = loss.item();
        let init = *initial.get_or_insert(value);
        if !value.is_finite() {
            return Err(GeneratorError::Diverged { step, loss: value, initial: init });
        }
        above = if value > DIVERGENCE_FACTOR * init { above + 1 } else { 0 };
        if above >= DIVERGENCE_PATIENCE {
            return Err(GeneratorError::Diverged { step, loss: value, initial: init });
        }
        let grads = tape.backward(loss)?;
        let mut g = p.grads(&backbone.store, &grads)?;
        g.clip_global_norm(cfg.clip);
        opt.step(&mut backbone.store, &g)?;
        report.train_losses.push(value);
        report.steps_run = step + 1;
        if (step + 1) % cfg.eval_every == 0 {
            let v = validation_loss(backbone, val, cfg)?;
            report.val_losses.push((step + 1, v));
            if v < best * (1.0 - cfg.min_delta) {
                best = v;
                stale = 0;
            } else {
                stale += 1;
                if stale >= cfg.patience {
                    report.plateaued = true;
                    break;
                }
            }
        }
    }
    Ok(report)
}

/// Trains a backbone on the training-split videos of `dataset`, then
/// freezes it.
pub fn pretrain_backbone(
    dataset: &Dataset,
    layout: &VideoLayout,
    hidden: usize,
    heads: usize,
    depth: usize,
    cfg: &FlowTrainConfig,
) -> Result<(Backbone, PretrainReport), GeneratorError> {
    let tokens = |split: Split| -> Result<Vec<Tensor>, GeneratorError> {
        dataset.indices(split).into_iter().map(|i| layout.to_tokens(&dataset.samples[i].video_f64())).collect()
    };
    let train = tokens(Split::Train)?;
    let val = tokens(Split::Val)?;
    let mut backbone = Backbone::new(BackboneConfig::for_layout(layout, hidden, heads, 2, depth), cfg.seed);
    let report = train_unconditional(&mut backbone, &train, &val, cfg)?;
    backbone.freeze();
    Ok((backbone, report))
}
