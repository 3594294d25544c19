use embodiflow::generator::{pretrain_backbone, Backbone, BackboneConfig};
use embodiflow::harness::{
    eval_disentanglement, evaluate, loss_csv, run_ablation_suite, Arm, TrainConfig, Trainer,
};
use embodiflow::numerics::Tensor;
use embodiflow::synthworld::{build_dataset, Dataset, OracleClassifier, OracleConfig};

fn tiny() -> TrainConfig {
    TrainConfig::parse(
        "frames = 4\nsize = 16\ncard_size = 16\nseeds_per_cell = 4\nval_fraction = 0.25\ntest_fraction = 0.25\n\
         enc_hidden = 8\nd_z = 4\nenc_heads = 2\ngen_hidden = 8\ngen_heads = 2\ndepth = 2\nadapter_depth = 2\n\
         lr = 1e-3\nvar_hidden = 8\nvar_fit_steps = 20\nsampler_steps = 4\nrecon_samples = 4\ntransfer_sources = 2\n",
    )
    .unwrap()
}

fn backbone(cfg: &TrainConfig) -> Backbone {
    let mut b = Backbone::new(BackboneConfig::for_layout(&cfg.layout(), cfg.gen_hidden, cfg.gen_heads, 2, cfg.depth), 1);
    b.freeze();
    b
}

fn data(cfg: &TrainConfig) -> Dataset {
    build_dataset(&cfg.dataset_config()).unwrap()
}

#[test]
fn resume_from_checkpoint_is_bit_identical() {
    let mut cfg = tiny();
    cfg.steps = 16;
    let ds = data(&cfg);
    let mut straight = Trainer::new(cfg.clone(), backbone(&cfg)).unwrap();
    let all = straight.run(&ds, |_, _| Ok(())).unwrap();

    let mut first = Trainer::new(cfg.clone(), backbone(&cfg)).unwrap();
    for _ in 0..4 {
        first.train_step(&ds).unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mid.bin");
    first.save(&path).unwrap();
    let mut resumed = Trainer::load(&path).unwrap();
    assert_eq!(resumed.step, 4);
    let rest = resumed.run(&ds, |_, _| Ok(())).unwrap();
    assert_eq!(rest.len(), 12);
    assert_eq!(loss_csv(&rest), loss_csv(&all[4..]));
    assert_eq!(resumed.to_bytes().unwrap(), straight.to_bytes().unwrap());
}

#[test]
fn disentanglement_gradient_every_tenth_step() {
    let mut cfg = tiny();
    cfg.steps = 31;
    let ds = data(&cfg);
    let mut t = Trainer::new(cfg.clone(), backbone(&cfg)).unwrap();
    let logs = t.run(&ds, |_, _| Ok(())).unwrap();
    for l in &logs {
        let expected = l.row.step % 10 == 0;
        assert_eq!(l.dis_applied, expected, "step {}", l.row.step);
        assert_eq!(l.dis_grad_norm > 0.0, expected, "step {}", l.row.step);
    }
    assert_eq!(logs.iter().filter(|l| l.dis_applied).count(), 4);
}

#[test]
fn training_leaves_backbone_untouched() {
    let mut cfg = tiny();
    cfg.steps = 10;
    let ds = data(&cfg);
    let bb = backbone(&cfg);
    let before: Vec<Tensor> = bb.store.iter().map(|(_, p)| p.value.clone()).collect();
    let mut t = Trainer::new(cfg, bb).unwrap();
    t.run(&ds, |_, _| Ok(())).unwrap();
    let after: Vec<Tensor> = t.generator.backbone.store.iter().map(|(_, p)| p.value.clone()).collect();
    assert_eq!(before, after);
}

#[test]
fn untrained_purity_is_near_chance() {
    let mut cfg = tiny();
    cfg.seeds_per_cell = 20;
    let ds = data(&cfg);
    let t = Trainer::new(cfg.clone(), backbone(&cfg)).unwrap();
    let r = evaluate("untrained", 0, &t.encoders, &t.generator, &ds, None, &cfg).unwrap();
    assert!(r.untrained);
    assert!(r.warnings.iter().any(|w| w.contains("untrained")));
    let d = &r.disentanglement;
    assert!((d.task_purity - 1.0 / 3.0).abs() <= 0.15, "task purity {}", d.task_purity);
    assert!((d.emb_purity - 0.25).abs() <= 0.15, "embodiment purity {}", d.emb_purity);
    for (i, row) in d.correlation.iter().enumerate() {
        assert!((row[i] - 1.0).abs() <= 1e-9);
        for (j, v) in row.iter().enumerate() {
            assert_eq!(*v, d.correlation[j][i]);
        }
    }
}

#[test]
fn identical_embeddings_warn() {
    let cfg = tiny();
    let ds = data(&cfg);
    let mut t = Trainer::new(cfg.clone(), backbone(&cfg)).unwrap();
    let store = &mut t.encoders.store;
    let (w, b) = (store.find("emb.out.w").unwrap(), store.find("emb.out.b").unwrap());
    let zero = store.get(w).value.map(|_| 0.0);
    *store.value_mut(w) = zero;
    let one = store.get(b).value.map(|_| 1.0);
    *store.value_mut(b) = one;
    let mut warnings = Vec::new();
    eval_disentanglement(&t.encoders, &ds, &cfg, &mut warnings).unwrap();
    assert!(warnings.iter().any(|w| w.contains("degenerate") && w.contains("embodiment")), "{warnings:?}");
}

#[test]
fn real_split_mmd_below_untrained_generator() {
    let cfg = tiny();
    let ds = data(&cfg);
    let t = Trainer::new(cfg.clone(), backbone(&cfg)).unwrap();
    let oracle = OracleClassifier::train(&cfg.world(), &OracleConfig::default()).unwrap();
    let r = evaluate("untrained", 0, &t.encoders, &t.generator, &ds, Some(&oracle), &cfg).unwrap();
    let g = r.generation.unwrap();
    assert!(g.mmd_reference < g.mmd, "real/real {} vs generated {}", g.mmd_reference, g.mmd);
    assert_eq!(g.transfer_pairs, 8);
}

#[test]
fn evaluation_is_deterministic() {
    let mut cfg = tiny();
    cfg.steps = 5;
    let ds = data(&cfg);
    let run = || {
        let mut t = Trainer::new(cfg.clone(), backbone(&cfg)).unwrap();
        let logs = t.run(&ds, |_, _| Ok(())).unwrap();
        let r = evaluate("full", t.step, &t.encoders, &t.generator, &ds, None, &cfg).unwrap();
        (r.to_json(), loss_csv(&logs), r.projection_csv())
    };
    assert_eq!(run(), run());
}

#[test]
fn ablation_arms_share_data_order() {
    let mut cfg = tiny();
    cfg.steps = 3;
    let ds = data(&cfg);
    let mut seen = Vec::new();
    let report = run_ablation_suite(&cfg, &ds, &backbone(&cfg), None, |r| seen.push(r.arm));
    assert_eq!(seen, Arm::ALL.to_vec());
    assert!(report.comparison.shared_data_order);
    assert!(report.arms.iter().all(|r| r.outcome.is_ok() && r.batch_hashes.len() == 3));
    assert_eq!(report.comparison.full_higher_ssim, None);
    let v: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
    assert_eq!(v["arms"].as_array().unwrap().len(), 4);
    assert_eq!(report.table().lines().count(), 5);
}

#[test]
fn failing_arm_does_not_stop_suite() {
    let mut cfg = tiny();
    cfg.steps = 2;
    let ds = data(&cfg);
    // A dataset rendered at another size makes every arm fail at its first step.
    let mut other = cfg.clone();
    other.size = 24;
    let wrong = data(&other);
    let report = run_ablation_suite(&cfg, &wrong, &backbone(&cfg), None, |_| {});
    assert_eq!(report.arms.len(), 4);
    assert!(report.arms.iter().all(|r| r.outcome.is_err()));
    assert_eq!(report.comparison.full_lower_cross_correlation, None);
    drop(ds);
}

#[test]
fn unconditional_pretraining_matches_pixel_mean() {
    let mut cfg = tiny();
    cfg.seeds_per_cell = 8;
    (cfg.pretrain_steps, cfg.pretrain_eval_every, cfg.pretrain_patience) = (600, 100, 100);
    let ds = data(&cfg);
    let (bb, report) = pretrain_backbone(&ds, &cfg.layout(), cfg.gen_hidden, cfg.gen_heads, cfg.depth, &cfg.pretrain_config()).unwrap();
    assert!(bb.is_frozen());
    assert!(report.train_losses.last().unwrap() < report.train_losses.first().unwrap());
    let t = Trainer::new(cfg.clone(), bb).unwrap();
    let n = 16;
    let mut gen_mean = 0.0;
    for i in 0..n {
        let v = t.generator.sample_unconditional(&cfg.sampler(i)).unwrap();
        gen_mean += v.iter().sum::<f64>() / v.len() as f64;
    }
    gen_mean /= n as f64;
    let all: Vec<f64> = ds.samples.iter().flat_map(|s| s.video_f64()).collect();
    let data_mean = all.iter().sum::<f64>() / all.len() as f64;
    assert!((gen_mean - data_mean).abs() < 0.1, "generated {gen_mean} vs data {data_mean}");
}

#[test]
fn flow_loss_halves_without_auxiliary_terms() {
    let mut cfg = tiny();
    cfg.seeds_per_cell = 10;
    (cfg.use_dis, cfg.use_task_contrast, cfg.use_emb_contrast) = (false, false, false);
    cfg.steps = 2000;
    let ds = data(&cfg);
    assert_eq!(ds.samples.len(), 120);
    (cfg.pretrain_steps, cfg.pretrain_eval_every, cfg.pretrain_patience) = (600, 100, 100);
    let (bb, _) = pretrain_backbone(&ds, &cfg.layout(), cfg.gen_hidden, cfg.gen_heads, cfg.depth, &cfg.pretrain_config()).unwrap();
    let mut t = Trainer::new(cfg.clone(), bb).unwrap();
    let logs = t.run(&ds, |_, _| Ok(())).unwrap();
    let window = |l: &[embodiflow::harness::StepLog]| l.iter().map(|s| s.row.parts.fm).sum::<f64>() / l.len() as f64;
    let (first, last) = (window(&logs[..50]), window(&logs[logs.len() - 50..]));
    assert!(last <= 0.5 * first, "initial {first}, final {last}");
}
