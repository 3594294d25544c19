//! Self-contained invariant and oracle suites, runnable from the command
//! line. Each returns a [`CheckOutcome`] with the measured quantities.

use std::time::Instant;

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::encoders::{EncoderConfig, Encoders, TaskInput};
use crate::generator::{AdapterConfig, Backbone, BackboneConfig, Conditioning, Generator, VideoLayout};
use crate::geometry::{trimmed_icp, IcpConfig, PointCloud, Pose};
use crate::numerics::nn::Bound;
use crate::numerics::{finite_difference_check, sampled_gradient_check, scalar_fn, Tape, Tensor, Var};
use crate::objectives::{flow_interpolate, info_nce, loss_fm, VariationalModel};
use crate::synthworld::{build_dataset, Dataset, DatasetConfig, WorldConfig};

use super::config::TrainConfig;
use super::eval::evaluate;
use super::train::{loss_csv, Trainer};
use super::HarnessError;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub id: usize,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl CheckOutcome {
    pub fn line(&self) -> String {
        format!("{} criterion {} {}: {} ({:.1}s)", if self.passed { "PASS" } else { "FAIL" }, self.id, self.name, self.detail, self.seconds)
    }
}

fn timed(id: usize, name: &'static str, f: impl FnOnce() -> Result<(bool, String), HarnessError>) -> CheckOutcome {
    let start = Instant::now();
    let (passed, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
    CheckOutcome { id, name, passed, detail, seconds: start.elapsed().as_secs_f64() }
}

pub const GRADIENT_TOLERANCE: f64 = 1e-4;
const FD_EPS: f64 = 1e-6;

type Kernel = Box<dyn for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>>;

/// Reduces `out` to a scalar through fixed random weights so every output
/// element contributes a distinct gradient.
fn weighted<'t>(tape: &'t Tape, out: Var<'t>, seed: u64) -> Var<'t> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = out.shape();
    let w = Tensor::randn(shape.clone(), 1.0, &mut rng);
    let flat: usize = shape.iter().product();
    out.reshape([flat]).mul(tape.constant(w.reshape([flat]).expect("same size"))).sum()
}

/// The differentiable kernels with random input shapes for one case.
fn kernel_cases(rng: &mut ChaCha8Rng) -> Vec<(&'static str, Vec<Tensor>, Kernel)> {
    let (r, c, k) = (rng.random_range(1..4), rng.random_range(1..5), rng.random_range(1..4));
    let s: u64 = rng.random();
    let mut m = |rows: usize, cols: usize| Tensor::randn([rows, cols], 1.0, rng);
    let idx: Vec<usize> = vec![r - 1, 0, r - 1];
    let flat: Vec<usize> = vec![0, r * c - 1, (r * c) / 2];
    let seq = c + 1;
    vec![
        ("add", vec![m(r, c), m(r, c)], Box::new(move |t, v| weighted(t, v[0].add(v[1]), s))),
        ("sub", vec![m(r, c), m(r, c)], Box::new(move |t, v| weighted(t, v[0].sub(v[1]), s))),
        ("mul", vec![m(r, c), m(r, c)], Box::new(move |t, v| weighted(t, v[0].mul(v[1]), s))),
        ("add_row", vec![m(r, c), m(1, c)], Box::new(move |t, v| weighted(t, v[0].add_row(v[1]), s))),
        ("mul_row", vec![m(r, c), m(1, c)], Box::new(move |t, v| weighted(t, v[0].mul_row(v[1]), s))),
        ("scale", vec![m(r, c)], Box::new(move |t, v| weighted(t, v[0].scale(-1.7).add_scalar(0.3), s))),
        ("matmul", vec![m(r, k), m(k, c)], Box::new(move |t, v| weighted(t, v[0].matmul(v[1]), s))),
        ("transpose", vec![m(r, c)], Box::new(move |t, v| weighted(t, v[0].t(), s))),
        ("reshape", vec![m(r, c)], Box::new(move |t, v| weighted(t, v[0].reshape([c, r]), s))),
        ("concat_rows", vec![m(r, c), m(k, c)], Box::new(move |t, v| weighted(t, Var::concat_rows(&[v[0], v[1]]), s))),
        ("concat_cols", vec![m(r, c), m(r, k)], Box::new(move |t, v| weighted(t, Var::concat_cols(&[v[0], v[1]]), s))),
        ("split", vec![m(r + 1, c + 1)], Box::new(move |t, v| weighted(t, v[0].block(1, r, 0, c).add(v[0].slice_rows(0, r).slice_cols(1, c)), s))),
        ("sum", vec![m(r, c)], Box::new(move |t, v| weighted(t, v[0].sum_rows(), s).add(v[0].square().sum()))),
        ("mean", vec![m(r, c)], Box::new(move |t, v| weighted(t, v[0].mean_rows(), s).add(v[0].square().mean()))),
        ("layer_norm", vec![m(r, c + 1), m(1, c + 1), m(1, c + 1)], Box::new(move |t, v| {
            weighted(t, v[0].layer_norm(v[1].reshape([c + 1]), v[2].reshape([c + 1])), s)
        })),
        ("softmax", vec![m(r, c)], Box::new(move |t, v| weighted(t, v[0].softmax(), s))),
        ("log_softmax", vec![m(r, c)], Box::new(move |t, v| weighted(t, v[0].log_softmax(), s))),
        ("gelu", vec![m(r, c)], Box::new(move |t, v| weighted(t, v[0].gelu(), s))),
        ("tanh", vec![m(r, c)], Box::new(move |t, v| weighted(t, v[0].tanh(), s))),
        ("exp", vec![m(r, c)], Box::new(move |t, v| weighted(t, v[0].scale(0.5).exp(), s))),
        ("log", vec![m(r, c)], Box::new(move |t, v| weighted(t, v[0].square().add_scalar(0.5).ln(), s))),
        ("attention", vec![m(seq, k + 1), m(seq, k + 1), m(seq, c)], Box::new(move |t, v| weighted(t, Var::attention(v[0], v[1], v[2]), s))),
        ("embedding", vec![m(r, c)], Box::new(move |t, v| weighted(t, v[0].gather_rows(&idx), s))),
        ("gather", vec![m(r, c)], Box::new(move |t, v| weighted(t, v[0].gather(&flat), s))),
        ("l2_normalize", vec![m(r, c + 1)], Box::new(move |t, v| weighted(t, v[0].l2_normalize_rows(), s))),
    ]
}

/// Worst relative error per kernel over `cases` seeded cases.
pub fn kernel_gradient_errors(cases: usize, seed: u64) -> Result<Vec<(&'static str, f64)>, HarnessError> {
    let mut worst: Vec<(&'static str, f64)> = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..cases {
        for (name, inputs, f) in kernel_cases(&mut rng) {
            let e = finite_difference_check(f, &inputs, FD_EPS)?;
            match worst.iter_mut().find(|(n, _)| *n == name) {
                Some(w) => w.1 = w.1.max(e),
                None => worst.push((name, e)),
            }
        }
    }
    Ok(worst)
}

fn tiny_world() -> WorldConfig {
    WorldConfig { frames: 4, size: 16, card_size: 16 }
}

fn tiny_dataset(seeds_per_cell: usize) -> Result<Dataset, HarnessError> {
    let cfg = DatasetConfig { world: tiny_world(), seeds_per_cell, val_fraction: 0.0, test_fraction: 0.0, ..DatasetConfig::default() };
    Ok(build_dataset(&cfg)?)
}

/// Worst sampled relative error of both encoders and of the adapter (with
/// its conditioning inputs) over `cases` seeds.
pub fn model_gradient_errors(cases: usize, seed: u64) -> Result<[f64; 3], HarnessError> {
    let data = tiny_dataset(1)?;
    let world = tiny_world();
    let mut worst = [0.0f64; 3];
    for case in 0..cases as u64 {
        let s = seed.wrapping_add(case);
        let enc_cfg = EncoderConfig { hidden: 8, d_z: 4, heads: 2, frames: world.frames, card_size: world.card_size, patch: 4, ..EncoderConfig::default() };
        let enc = Encoders::new(enc_cfg, s)?;
        let params: Vec<Tensor> = enc.store.iter().map(|(_, p)| p.value.clone()).collect();
        let demos: Vec<_> = data.samples.iter().skip(case as usize).take(2).collect();
        let lifted: Vec<(usize, Vec<f64>, Vec<f64>)> = demos.iter().map(|d| (d.goal_token, d.lifted_motion(), d.lifted_object())).collect();
        let f = scalar_fn(|t, v| {
            let p = Bound::from_vars(v.to_vec());
            let x: Vec<TaskInput<'_>> = lifted.iter().map(|(g, m, o)| TaskInput { goal_token: *g, motion: m, object: o }).collect();
            weighted(t, enc.forward_task(t, &p, &x).expect("valid inputs"), s)
        });
        worst[0] = worst[0].max(sampled_gradient_check(f, &params, FD_EPS, 4, s)?);
        let cards: Vec<Vec<f64>> = demos.iter().map(|d| d.card_f64()).collect();
        let f = scalar_fn(|t, v| {
            let p = Bound::from_vars(v.to_vec());
            let refs: Vec<&[f64]> = cards.iter().map(|c| c.as_slice()).collect();
            weighted(t, enc.forward_embodiment(t, &p, &refs).expect("valid inputs"), s)
        });
        worst[1] = worst[1].max(sampled_gradient_check(f, &params, FD_EPS, 4, s)?);

        let layout = VideoLayout { frames: 2, size: 8, channels: 2, patch: 4 };
        let mut backbone = Backbone::new(BackboneConfig::for_layout(&layout, 8, 2, 2, 2), s);
        backbone.freeze();
        let mut g = Generator::new(layout, backbone, AdapterConfig { depth: 2, d_z: 4 }, s)?;
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        for h in g.adapter.hint_layers().to_vec() {
            *g.adapter.store.value_mut(h.w) = Tensor::randn([h.fan_in, h.fan_out], 0.3, &mut rng);
            *g.adapter.store.value_mut(h.b) = Tensor::randn([h.fan_out], 0.3, &mut rng);
        }
        let x = Tensor::randn([2 * layout.tokens(), layout.token_dim()], 1.0, &mut rng);
        let ts = [rng.random::<f64>(), rng.random::<f64>()];
        let bg = Tensor::uniform([2 * layout.background_tokens(), layout.background_token_dim()], 1.0, &mut rng);
        let mut all: Vec<Tensor> = g.adapter.store.iter().map(|(_, p)| p.value.clone()).collect();
        let np = all.len();
        all.extend([Tensor::randn([2, 4], 1.0, &mut rng), Tensor::randn([2, 4], 1.0, &mut rng)]);
        let f = scalar_fn(|tape, v| {
            let bp = g.backbone.store.bind(tape);
            let ap = Bound::from_vars(v[..np].to_vec());
            let cond = Conditioning { z_task: v[np], z_emb: v[np + 1], background: tape.constant(bg.clone()) };
            weighted(tape, g.velocity_var(tape, &bp, &ap, tape.constant(x.clone()), &ts, &cond).expect("valid inputs"), s)
        });
        worst[2] = worst[2].max(sampled_gradient_check(f, &all, FD_EPS, 3, s)?);
    }
    Ok(worst)
}

pub fn gradient_check(cases: usize) -> CheckOutcome {
    timed(1, "gradient correctness", || {
        let kernels = kernel_gradient_errors(cases, 1)?;
        let models = model_gradient_errors(3, 100)?;
        let (kname, kmax) = kernels.iter().copied().fold(("none", 0.0), |a, b| if b.1 > a.1 { b } else { a });
        let worst = kmax.max(models[0]).max(models[1]).max(models[2]);
        Ok((
            worst < GRADIENT_TOLERANCE,
            format!(
                "{} kernels x {cases} cases, worst kernel {kname} {kmax:.2e}; task encoder {:.2e}, embodiment encoder {:.2e}, adapter {:.2e}",
                kernels.len(),
                models[0],
                models[1],
                models[2]
            ),
        ))
    })
}

pub fn flow_check() -> CheckOutcome {
    timed(2, "flow-matching exactness", || {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut ok = true;
        let mut worst_loss: f64 = 0.0;
        for _ in 0..50 {
            let x0 = Tensor::randn([3, 5], 1.0, &mut rng);
            let x1 = Tensor::randn([3, 5], 1.0, &mut rng);
            let a = flow_interpolate(&x0, &x1, 0.0)?;
            let b = flow_interpolate(&x0, &x1, 1.0)?;
            let t = rng.random::<f64>();
            let mid = flow_interpolate(&x0, &x1, t)?;
            let bits = |p: &Tensor, q: &Tensor| p.data().iter().zip(q.data()).all(|(u, v)| u.to_bits() == v.to_bits());
            let v: Vec<f64> = x0.data().iter().zip(x1.data()).map(|(p, q)| q - p).collect();
            ok &= bits(&a.x_t, &x0) && bits(&b.x_t, &x1) && bits(&mid.v_t, &Tensor::new([3, 5], v)?);
            let u = Tensor::randn([3, 5], 1.0, &mut rng);
            let mut naive = 0.0;
            for (p, q) in u.data().iter().zip(mid.v_t.data()) {
                naive += (p - q) * (p - q);
            }
            naive /= 15.0;
            worst_loss = worst_loss.max((loss_fm(&u, &mid.v_t)? - naive).abs());
        }
        Ok((ok && worst_loss <= 1e-12, format!("endpoints and velocity bitwise: {ok}; loss vs naive {worst_loss:.1e}")))
    })
}

fn gaussian_pairs(n: usize, rho: f64, seed: u64) -> (Tensor, Tensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut x, mut y) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for _ in 0..n {
        let a: f64 = StandardNormal.sample(&mut rng);
        let b: f64 = StandardNormal.sample(&mut rng);
        x.push(a);
        y.push(rho * a + (1.0 - rho * rho).sqrt() * b);
    }
    (Tensor::from_parts(vec![n, 1], x), Tensor::from_parts(vec![n, 1], y))
}

/// Fitted-q CLUB values on 10k bivariate Gaussian samples at each `ρ`.
pub fn club_on_gaussians(rhos: &[f64]) -> Result<Vec<f64>, HarnessError> {
    let mut out = Vec::with_capacity(rhos.len());
    for (i, &rho) in rhos.iter().enumerate() {
        let seed = i as u64 + 1;
        let (x, y) = gaussian_pairs(10_000, rho, seed);
        let mut q = VariationalModel::new(1, 1, 32, 3e-3, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..1500 {
            let rows: Vec<usize> = (0..256).map(|_| rng.random_range(0..10_000)).collect();
            let bx = Tensor::from_parts(vec![256, 1], rows.iter().map(|&r| x.data()[r]).collect());
            let by = Tensor::from_parts(vec![256, 1], rows.iter().map(|&r| y.data()[r]).collect());
            q.fit_step(&bx, &by)?;
        }
        out.push(q.club_estimate(&x, &y, 8, seed)?);
    }
    Ok(out)
}

pub fn club_check() -> CheckOutcome {
    timed(3, "CLUB fidelity", || {
        let rhos = [0.0, 0.5, 0.9];
        let est = club_on_gaussians(&rhos)?;
        let mut ok = true;
        let mut parts = Vec::new();
        for (&rho, &e) in rhos.iter().zip(&est) {
            let mi = -0.5 * (1.0 - rho * rho).ln() + 0.0;
            let tol = if rho == 0.0 { 0.05 } else { 0.1 };
            ok &= (e - mi).abs() < tol;
            parts.push(format!("rho {rho}: {e:.4} vs MI {mi:.4}"));
        }
        Ok((ok, parts.join("; ")))
    })
}

pub fn info_nce_check() -> CheckOutcome {
    timed(4, "InfoNCE closed forms", || {
        let a = [1.0, 0.0];
        let negs: Vec<[f64; 2]> = vec![[1.0, 0.0]; 7];
        let refs: Vec<&[f64]> = negs.iter().map(|n| n.as_slice()).collect();
        let uniform = info_nce(&a, &[1.0, 0.0], &refs)?;
        let exact = uniform == 8f64.ln();
        let neg = [[0.0, 1.0], [-1.0, 0.2]];
        let nr: Vec<&[f64]> = neg.iter().map(|n| n.as_slice()).collect();
        let mut prev = f64::INFINITY;
        let mut monotone = true;
        for k in 0..=10 {
            let ang = std::f64::consts::PI * (1.0 - k as f64 / 10.0);
            let l = info_nce(&a, &[ang.cos(), ang.sin()], &nr)?;
            monotone &= l < prev;
            prev = l;
        }
        let p = [0.3, 0.8];
        let base = info_nce(&a, &p, &nr)?;
        let scaled = info_nce(&[5.0, 0.0], &[0.03, 0.08], &[&[0.0, 7.0], &[-2.0, 0.4]])?;
        let invariant = (base - scaled).abs() < 1e-12;
        Ok((
            exact && monotone && invariant,
            format!("uniform {uniform:.12} vs ln 8 {:.12}; monotone {monotone}; scale invariant {invariant}", 8f64.ln()),
        ))
    })
}

fn tiny_config() -> TrainConfig {
    let mut c = TrainConfig::default();
    let w = tiny_world();
    (c.frames, c.size, c.card_size, c.patch) = (w.frames, w.size, w.card_size, 8);
    (c.enc_hidden, c.d_z, c.enc_heads) = (8, 4, 2);
    (c.gen_hidden, c.gen_heads, c.depth, c.adapter_depth) = (8, 2, 2, 2);
    (c.seeds_per_cell, c.val_fraction, c.test_fraction) = (4, 0.25, 0.25);
    (c.lr, c.var_hidden, c.var_fit_steps) = (1e-3, 8, 20);
    (c.sampler_steps, c.recon_samples, c.transfer_sources) = (4, 2, 2);
    c
}

fn tiny_backbone(cfg: &TrainConfig) -> Backbone {
    let mut b = Backbone::new(BackboneConfig::for_layout(&cfg.layout(), cfg.gen_hidden, cfg.gen_heads, 2, cfg.depth), cfg.seed);
    b.freeze();
    b
}

pub fn zero_init_check(steps: usize) -> CheckOutcome {
    timed(5, "zero-init adapter identity", || {
        let mut cfg = tiny_config();
        cfg.steps = steps;
        let ds = build_dataset(&cfg.dataset_config())?;
        let mut trainer = Trainer::new(cfg.clone(), tiny_backbone(&cfg))?;
        let layout = cfg.layout();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::randn([2 * layout.tokens(), layout.token_dim()], 1.0, &mut rng);
        let t = [0.25, 0.75];
        let zt = Tensor::randn([2, cfg.d_z], 1.0, &mut rng);
        let ze = Tensor::randn([2, cfg.d_z], 1.0, &mut rng);
        let bg = Tensor::uniform([2 * layout.background_tokens(), layout.background_token_dim()], 1.0, &mut rng);
        let g = &trainer.generator;
        let cond = g.predict_velocity(&x, &t, &zt, &ze, &bg)?;
        let plain = g.backbone.velocity(&x, &t)?;
        let bitwise = cond.data().iter().zip(plain.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        let before: Vec<Tensor> = g.backbone.store.iter().map(|(_, p)| p.value.clone()).collect();
        // Every step fails if any gradient reaches the backbone.
        trainer.run(&ds, |_, _| Ok(()))?;
        let unchanged = trainer.generator.backbone.store.iter().map(|(_, p)| &p.value).eq(before.iter());
        Ok((
            bitwise && unchanged && trainer.step == steps,
            format!("bitwise identity at init: {bitwise}; {} steps with zero backbone gradient; weights unchanged: {unchanged}", trainer.step),
        ))
    })
}

fn box_cloud(n: usize, rng: &mut ChaCha8Rng) -> PointCloud {
    let pts = (0..n)
        .map(|_| Vector3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.3..0.3), rng.random_range(-0.2..0.2)))
        .collect();
    PointCloud::new(pts, 0)
}

fn random_pose(rng: &mut ChaCha8Rng, max_deg: f64, max_shift: f64) -> Pose {
    let axis: Vector3<f64> = Vector3::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
    let angle = rng.random_range(0.0..max_deg).to_radians();
    let dir: Vector3<f64> = Vector3::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5).normalize();
    Pose::new(dir * rng.random_range(0.0..max_shift), UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle))
}

/// Clean-data worst errors (degrees, extent fractions) and the share of
/// outlier trials under 1°.
pub fn icp_trials(clean: usize, noisy: usize, seed: u64) -> Result<(f64, f64, f64), HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut rot, mut trans) = (0.0f64, 0.0f64);
    for _ in 0..clean {
        let src = box_cloud(500, &mut rng);
        let extent = src.extent();
        let truth = random_pose(&mut rng, 15.0, 0.1 * extent);
        let r = trimmed_icp(&src, &src.transformed(&truth), &IcpConfig { trim_fraction: 0.0, ..IcpConfig::default() })?;
        rot = rot.max(r.pose.rotation_angle_to(&truth).to_degrees());
        trans = trans.max(r.pose.translation_distance(&truth) / extent);
    }
    let mut good = 0;
    for _ in 0..noisy {
        let src = box_cloud(500, &mut rng);
        let extent = src.extent();
        let truth = random_pose(&mut rng, 15.0, 0.1 * extent);
        let mut dst = src.transformed(&truth).points;
        for p in dst.iter_mut().take(100) {
            *p = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        }
        let r = trimmed_icp(&src, &PointCloud::new(dst, 1), &IcpConfig { trim_fraction: 0.3, ..IcpConfig::default() })?;
        good += (r.pose.rotation_angle_to(&truth).to_degrees() < 1.0) as usize;
    }
    Ok((rot, trans, good as f64 / noisy.max(1) as f64))
}

pub fn icp_check() -> CheckOutcome {
    timed(6, "ICP recovery", || {
        let (rot, trans, share) = icp_trials(100, 100, 6)?;
        Ok((
            rot < 0.1 && trans < 1e-3 && share >= 0.95,
            format!("clean worst rotation {rot:.2e} deg, translation {trans:.2e} extent; outliers: {:.0}% under 1 deg", share * 100.0),
        ))
    })
}

/// Trains and evaluates `cfg` from `backbone`, returning the metrics JSON
/// and loss CSV.
pub fn run_once(
    cfg: &TrainConfig,
    dataset: &Dataset,
    backbone: &Backbone,
    oracle: Option<&crate::synthworld::OracleClassifier>,
) -> Result<(String, String), HarnessError> {
    let mut t = Trainer::new(cfg.clone(), backbone.clone())?;
    let logs = t.run(dataset, |_, _| Ok(()))?;
    let report = evaluate("determinism", t.step, &t.encoders, &t.generator, dataset, oracle, cfg)?;
    Ok((report.to_json(), loss_csv(&logs)))
}

pub fn determinism_check(steps: usize) -> CheckOutcome {
    timed(10, "determinism", || {
        let mut cfg = tiny_config();
        cfg.steps = steps;
        let ds = build_dataset(&cfg.dataset_config())?;
        let backbone = tiny_backbone(&cfg);
        let a = run_once(&cfg, &ds, &backbone, None)?;
        let b = run_once(&cfg, &ds, &backbone, None)?;
        Ok((a == b, format!("metrics JSON identical: {}; loss CSV identical: {}", a.0 == b.0, a.1 == b.1)))
    })
}

/// The fast suites: every criterion that does not need a trained model.
pub fn run_fast_checks() -> Vec<CheckOutcome> {
    vec![gradient_check(100), flow_check(), club_check(), info_nce_check(), zero_init_check(100), icp_check(), determinism_check(20)]
}
