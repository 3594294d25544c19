use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encoders::{Encoders, TaskInput};
use crate::generator::{flow_batch, Backbone, Conditioning, Generator};
use crate::numerics::{AdamW, AdamWConfig, NumericsError, Tape, Tensor};
use crate::objectives::{
    club_loss_var, derangement_shift, info_nce_batch, loss_fm_var, LossParts, LossRow, VariationalModel,
};
use crate::synthworld::{render_card, Dataset, EmbodimentKind, EmbodimentSpec, Split, TaskClass};

use super::config::{fnv1a, TrainConfig};
use super::HarnessError;

/// Everything logged for one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLog {
    pub row: LossRow,
    /// Whether `λ_dis · L_dis` entered the gradient this step.
    pub dis_applied: bool,
    /// Norm of the encoder gradient of `λ_dis · L_dis` alone (0 when not
    /// applied).
    pub dis_grad_norm: f64,
    /// Norm of the full gradient before clipping.
    pub grad_norm: f64,
    /// Variational log-likelihood before this step's fit.
    pub q_log_likelihood: f64,
    /// Hash of the sample indices and noise seeds of the batch.
    pub batch_hash: u64,
}

impl StepLog {
    pub const GRAD_CSV_HEADER: &'static str = "step,dis_applied,dis_grad_norm,grad_norm,q_log_likelihood,batch_hash";

    pub fn grad_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{:016x}",
            self.row.step, self.dis_applied as u8, self.dis_grad_norm, self.grad_norm, self.q_log_likelihood, self.batch_hash
        )
    }
}

pub(crate) fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Training-split sample indices per `(task, embodiment)` cell.
fn cells(dataset: &Dataset) -> Vec<Vec<usize>> {
    let e = EmbodimentKind::ALL.len();
    let mut out = vec![Vec::new(); TaskClass::ALL.len() * e];
    for i in dataset.indices(Split::Train) {
        let s = &dataset.samples[i];
        out[s.task_class.index() * e + s.embodiment.index()].push(i);
    }
    out
}

/// Encoders, adapter and variational model with their optimizers. The
/// backbone inside `generator` stays frozen.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub config: TrainConfig,
    pub encoders: Encoders,
    pub generator: Generator,
    pub q: VariationalModel,
    pub enc_opt: AdamW,
    pub adapter_opt: AdamW,
    /// Steps completed.
    pub step: usize,
}

impl Trainer {
    pub fn new(config: TrainConfig, backbone: Backbone) -> Result<Self, HarnessError> {
        config.validate()?;
        if !backbone.is_frozen() {
            return Err(HarnessError::MissingBackbone("backbone must be pretrained and frozen".into()));
        }
        let bc = &backbone.config;
        if bc.hidden != config.gen_hidden || bc.heads != config.gen_heads || bc.depth != config.depth {
            return Err(HarnessError::Mismatch(format!(
                "backbone has hidden {}, {} heads, depth {}; config asks for {}, {}, {}",
                bc.hidden, bc.heads, bc.depth, config.gen_hidden, config.gen_heads, config.depth
            )));
        }
        let encoders = Encoders::new(config.encoder_config(), mix(config.seed ^ 0xe1))?;
        let generator = Generator::new(config.layout(), backbone, config.adapter_config(), mix(config.seed ^ 0xad))?;
        let q = VariationalModel::new(config.d_z, config.d_z, config.var_hidden, config.var_lr, mix(config.seed ^ 0xc1));
        let opt = AdamWConfig { weight_decay: config.weight_decay, ..AdamWConfig::with_lr(config.lr) };
        let enc_opt = AdamW::new(&encoders.store, opt);
        let adapter_opt = AdamW::new(&generator.adapter.store, opt);
        Ok(Self { config, encoders, generator, q, enc_opt, adapter_opt, step: 0 })
    }

    /// Whether step `step` includes the disentanglement gradient.
    pub fn dis_applied_at(&self, step: usize) -> bool {
        self.config.use_dis && self.config.lambda_dis > 0.0 && step % self.config.club_apply_every == 0
    }

    /// One training step: batch sampling, a variational fit on detached
    /// embeddings, then one update of encoders and adapter.
    pub fn train_step(&mut self, dataset: &Dataset) -> Result<StepLog, HarnessError> {
        let cfg = &self.config;
        if dataset.config.world != cfg.world() {
            return Err(HarnessError::Mismatch(format!("dataset world {:?} vs config {:?}", dataset.config.world, cfg.world())));
        }
        let step = self.step;
        let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed ^ mix(step as u64 + 1)));
        let cells = cells(dataset);
        let world = cfg.world();
        let e_count = EmbodimentKind::ALL.len();
        let mut picks = Vec::new();
        let mut hash_bytes = Vec::new();
        for t in 0..TaskClass::ALL.len() {
            for e in 0..e_count {
                let cell = &cells[t * e_count + e];
                if cell.len() < cfg.repeats.max(1) {
                    return Err(HarnessError::Mismatch(format!("training cell ({t}, {e}) has {} samples", cell.len())));
                }
                for _ in 0..cfg.repeats {
                    let idx = cell[rng.random_range(0..cell.len())];
                    let card_seed = rng.next_u64();
                    hash_bytes.extend_from_slice(&(idx as u64).to_le_bytes());
                    hash_bytes.extend_from_slice(&card_seed.to_le_bytes());
                    picks.push((idx, card_seed));
                }
            }
        }
        let noise_seed = rng.next_u64();
        hash_bytes.extend_from_slice(&noise_seed.to_le_bytes());
        let batch_hash = fnv1a(&hash_bytes);
        let b = picks.len();
        let samples: Vec<_> = picks.iter().map(|&(i, _)| &dataset.samples[i]).collect();
        let task_labels: Vec<usize> = samples.iter().map(|s| s.task_class.index()).collect();
        let emb_labels: Vec<usize> = samples.iter().map(|s| s.embodiment.index()).collect();
        let cards: Vec<Vec<f64>> = picks
            .iter()
            .zip(&samples)
            .map(|(&(_, seed), s)| render_card(&EmbodimentSpec::canonical(s.embodiment, &world), &world, Some(seed)))
            .collect();
        let lifted: Vec<(Vec<f64>, Vec<f64>)> = samples.iter().map(|s| (s.lifted_motion(), s.lifted_object())).collect();
        let inputs: Vec<TaskInput<'_>> = samples
            .iter()
            .zip(&lifted)
            .map(|(s, (m, o))| TaskInput { goal_token: s.goal_token, motion: m, object: o })
            .collect();
        let layout = self.generator.layout;
        let x1: Vec<Tensor> = samples.iter().map(|s| layout.to_tokens(&s.video_f64())).collect::<Result<_, _>>()?;
        let mut bg = Vec::with_capacity(b * layout.background_tokens() * layout.background_token_dim());
        for s in &samples {
            bg.extend(layout.background_to_tokens(&s.background())?.into_data());
        }

        let tape = Tape::new();
        let ep = self.encoders.store.bind(&tape);
        let bp = self.generator.backbone.store.bind(&tape);
        let ap = self.generator.adapter.store.bind(&tape);
        let card_refs: Vec<&[f64]> = cards.iter().map(|c| c.as_slice()).collect();
        let zt = self.encoders.forward_task(&tape, &ep, &inputs)?;
        let ze = self.encoders.forward_embodiment(&tape, &ep, &card_refs)?;

        let q_ll = self.q.fit_step(&zt.value(), &ze.value())?;

        let qp = self.q.store.bind_constant(&tape);
        let l_dis = club_loss_var(&self.q, &qp, zt, ze, derangement_shift(b, rng.next_u64()))?;
        let l_task = info_nce_batch(zt, &task_labels, cfg.temperature)?;
        let l_emb = info_nce_batch(ze, &emb_labels, cfg.temperature)?;
        let mut noise = ChaCha8Rng::seed_from_u64(noise_seed);
        let refs: Vec<&Tensor> = x1.iter().collect();
        let (xt, vt, ts) = flow_batch(&refs, &mut noise, None)?;
        let bgt = tape.constant(Tensor::new([b * layout.background_tokens(), layout.background_token_dim()], bg)?);
        let cond = Conditioning { z_task: zt, z_emb: ze, background: bgt };
        let u = self.generator.velocity_var(&tape, &bp, &ap, tape.constant(xt), &ts, &cond)?;
        let l_fm = loss_fm_var(u, tape.constant(vt))?;

        let w = cfg.effective_weights();
        let dis_applied = self.dis_applied_at(step);
        let mut objective = l_fm;
        if w.task > 0.0 {
            objective = objective.add(l_task.scale(w.task));
        }
        if w.emb > 0.0 {
            objective = objective.add(l_emb.scale(w.emb));
        }
        let mut dis_grad_norm = 0.0;
        if dis_applied {
            let scaled = l_dis.scale(w.dis);
            dis_grad_norm = ep.grads(&self.encoders.store, &tape.backward(scaled)?)?.global_norm();
            objective = objective.add(scaled);
        }
        let parts = LossParts { fm: l_fm.item(), dis: l_dis.item(), task: l_task.item(), emb: l_emb.item() };
        let total = objective.item();
        for (name, v) in [("L_FM", parts.fm), ("L_dis", parts.dis), ("L_task", parts.task), ("L_emb", parts.emb), ("total", total)] {
            if !v.is_finite() {
                return Err(HarnessError::Diverged { step, message: format!("{name} = {v}") });
            }
        }

        let grads = tape.backward(objective)?;
        if !bp.grads(&self.generator.backbone.store, &grads)?.is_all_zero() {
            return Err(NumericsError::FrozenGradient("backbone".into()).into());
        }
        let mut ge = ep.grads(&self.encoders.store, &grads)?;
        let mut ga = ap.grads(&self.generator.adapter.store, &grads)?;
        let grad_norm = (ge.global_norm().powi(2) + ga.global_norm().powi(2)).sqrt();
        if !grad_norm.is_finite() {
            return Err(HarnessError::Diverged { step, message: "non-finite gradient".into() });
        }
        if cfg.clip > 0.0 {
            ge.clip_global_norm(cfg.clip);
            ga.clip_global_norm(cfg.clip);
        }
        self.enc_opt.step(&mut self.encoders.store, &ge)?;
        self.adapter_opt.step(&mut self.generator.adapter.store, &ga)?;
        self.step += 1;
        Ok(StepLog {
            row: LossRow { step, parts, total },
            dis_applied,
            dis_grad_norm,
            grad_norm,
            q_log_likelihood: q_ll,
            batch_hash,
        })
    }

    /// Runs until `config.steps` steps are done, calling `on_step` after
    /// each one.
    pub fn run<F>(&mut self, dataset: &Dataset, mut on_step: F) -> Result<Vec<StepLog>, HarnessError>
    where
        F: FnMut(&Trainer, &StepLog) -> Result<(), HarnessError>,
    {
        let mut logs = Vec::with_capacity(self.config.steps.saturating_sub(self.step));
        while self.step < self.config.steps {
            let log = self.train_step(dataset)?;
            on_step(self, &log)?;
            logs.push(log);
        }
        Ok(logs)
    }
}

/// Loss CSV text for a sequence of steps, header included.
pub fn loss_csv(logs: &[StepLog]) -> String {
    let mut out = String::from(LossRow::CSV_HEADER);
    out.push('\n');
    for l in logs {
        out.push_str(&l.row.to_csv());
        out.push('\n');
    }
    out
}

pub fn grad_csv(logs: &[StepLog]) -> String {
    let mut out = String::from(StepLog::GRAD_CSV_HEADER);
    out.push('\n');
    for l in logs {
        out.push_str(&l.grad_csv());
        out.push('\n');
    }
    out
}
