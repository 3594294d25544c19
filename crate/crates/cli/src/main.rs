use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use embodiflow::generator::{pretrain_backbone, read_pgm, write_video_artifacts, VideoMetadata};
use embodiflow::geometry::textio::{format_depth, format_mask, format_trajectory, parse_depth, parse_mask};
use embodiflow::geometry::{trajectory_from_frames, BoxScene, DepthFrame, IcpConfig, MaskFrame, Pose};
use embodiflow::harness::checks::run_fast_checks;
use embodiflow::harness::{
    evaluate, grad_csv, load_backbone, loss_csv, run_ablation_suite, save_backbone, HarnessError, TrainConfig, Trainer,
};
use embodiflow::synthworld::{build_dataset, decode_record, Dataset, OracleClassifier, OracleConfig, Split};

#[derive(Parser)]
#[command(name = "embodiflow", version, about = "Disentangled task/embodiment video generation on a synthetic world")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Text config with `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Artifact directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic dataset to disk.
    GenData(Common),
    /// Train and freeze the unconditional backbone.
    PretrainBackbone(Common),
    /// Train encoders and adapter over a frozen backbone.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from a checkpoint instead of starting fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Disentanglement and generation metrics for a checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Skip sampling-based metrics.
        #[arg(long)]
        no_generation: bool,
    },
    /// Train and evaluate the four objective arms.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        no_generation: bool,
    },
    /// Render one source demo with a target embodiment card.
    Transfer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Sample record written by gen-data.
        #[arg(long)]
        source: PathBuf,
        /// Greyscale card image (PGM).
        #[arg(long)]
        card: PathBuf,
    },
    /// Object trajectory from depth and mask frames.
    ExtractPoses {
        #[command(flatten)]
        common: Common,
        /// Directory of `depth_NNN.txt` and `mask_NNN.txt` files; a
        /// synthetic sequence is rendered when omitted.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, default_value_t = 8)]
        frames: usize,
        #[arg(long, default_value_t = 2)]
        dilation: usize,
        #[arg(long, default_value_t = 0.2)]
        trim: f64,
    },
    /// Run the invariant and oracle suites.
    Check,
}

/// Bad flags, config values or missing inputs: exit code 2.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(Usage(msg.into()).into())
}

fn load_config(common: &Common, base: TrainConfig) -> Result<TrainConfig> {
    let mut cfg = base;
    if let Some(path) = &common.config {
        let text = fs::read_to_string(path).map_err(|e| Usage(format!("{}: {e}", path.display())))?;
        cfg.apply_text(&text).map_err(|e| Usage(format!("{}: {e}", path.display())))?;
    }
    for kv in &common.overrides {
        let Some((k, v)) = kv.split_once('=') else {
            return usage(format!("--set expects KEY=VALUE, got `{kv}`"));
        };
        cfg.set(k.trim(), v.trim()).map_err(|e| Usage(e.to_string()))?;
    }
    cfg.validate().map_err(|e| Usage(e.to_string()))?;
    Ok(cfg)
}

fn load_dataset(cfg: &TrainConfig) -> Result<Dataset> {
    let ds = match &cfg.dataset {
        Some(dir) => Dataset::load(dir).with_context(|| format!("loading dataset {}", dir.display()))?,
        None => build_dataset(&cfg.dataset_config())?,
    };
    if ds.config.world != cfg.world() {
        return usage(format!("dataset world {:?} does not match config {:?}", ds.config.world, cfg.world()));
    }
    Ok(ds)
}

fn require_backbone(cfg: &TrainConfig) -> Result<embodiflow::generator::Backbone> {
    match &cfg.backbone {
        Some(p) => Ok(load_backbone(p)?),
        None => usage("missing config key `backbone` (no default): run pretrain-backbone and set backbone = <file>"),
    }
}

fn write(dir: &Path, name: &str, contents: impl AsRef<[u8]>) -> Result<String> {
    fs::create_dir_all(dir)?;
    let p = dir.join(name);
    fs::write(&p, contents).with_context(|| format!("writing {}", p.display()))?;
    Ok(p.display().to_string())
}

fn oracle_for(cfg: &TrainConfig) -> Result<OracleClassifier> {
    eprintln!("training oracle classifier");
    Ok(OracleClassifier::train(&cfg.world(), &OracleConfig::default())?)
}

fn gen_data(common: &Common) -> Result<Value> {
    let cfg = load_config(common, TrainConfig::default())?;
    let ds = build_dataset(&cfg.dataset_config())?;
    ds.save(&common.out)?;
    let count = |s: Split| ds.indices(s).len();
    Ok(json!({
        "command": "gen-data",
        "out": common.out.display().to_string(),
        "samples": ds.samples.len(),
        "train": count(Split::Train),
        "val": count(Split::Val),
        "test": count(Split::Test),
    }))
}

fn pretrain(common: &Common) -> Result<Value> {
    let cfg = load_config(common, TrainConfig::default())?;
    let ds = load_dataset(&cfg)?;
    let (backbone, report) = pretrain_backbone(&ds, &cfg.layout(), cfg.gen_hidden, cfg.gen_heads, cfg.depth, &cfg.pretrain_config())?;
    let path = common.out.join("backbone.bin");
    save_backbone(&backbone, &path)?;
    let mut csv = String::from("step,train_loss\n");
    for (i, l) in report.train_losses.iter().enumerate() {
        csv.push_str(&format!("{},{l}\n", i + 1));
    }
    write(&common.out, "pretrain_loss.csv", csv)?;
    Ok(json!({
        "command": "pretrain-backbone",
        "backbone": path.display().to_string(),
        "steps": report.steps_run,
        "plateaued": report.plateaued,
        "first_loss": report.train_losses.first(),
        "last_loss": report.train_losses.last(),
        "val_losses": report.val_losses,
    }))
}

fn train(common: &Common, resume: Option<&Path>) -> Result<Value> {
    let mut trainer = match resume {
        Some(p) => {
            let t = Trainer::load(p)?;
            let cfg = load_config(common, t.config.clone())?;
            if cfg.steps < t.step {
                return usage(format!("checkpoint is at step {} but steps = {}", t.step, cfg.steps));
            }
            let mut t = t;
            // Only the run length may change on resume.
            let mut same = cfg.clone();
            same.steps = t.config.steps;
            if same != t.config {
                return usage("resume may only change `steps`");
            }
            t.config.steps = cfg.steps;
            t
        }
        None => {
            let cfg = load_config(common, TrainConfig::default())?;
            Trainer::new(cfg.clone(), require_backbone(&cfg)?)?
        }
    };
    let ds = load_dataset(&trainer.config)?;
    let out = common.out.clone();
    let every = trainer.config.checkpoint_every;
    let logs = trainer.run(&ds, |t, log| {
        if log.row.step % 100 == 0 {
            eprintln!("step {} fm {:.4} total {:.4}", log.row.step, log.row.parts.fm, log.row.total);
        }
        if every > 0 && t.step % every == 0 {
            t.save(&out.join(format!("checkpoint_{:06}.bin", t.step)))?;
        }
        Ok(())
    })?;
    let ckpt = out.join("checkpoint.bin");
    trainer.save(&ckpt)?;
    let loss = write(&out, "loss.csv", loss_csv(&logs))?;
    let grads = write(&out, "grad.csv", grad_csv(&logs))?;
    let first = logs.first().map(|l| l.row.parts.fm);
    let last = logs.last().map(|l| l.row.parts.fm);
    Ok(json!({
        "command": "train",
        "steps": trainer.step,
        "checkpoint": ckpt.display().to_string(),
        "loss_csv": loss,
        "grad_csv": grads,
        "first_fm": first,
        "last_fm": last,
    }))
}

fn eval(common: &Common, checkpoint: &Path, no_generation: bool) -> Result<Value> {
    let t = Trainer::load(checkpoint)?;
    let cfg = load_config(common, t.config.clone())?;
    let ds = load_dataset(&cfg)?;
    let oracle = if no_generation { None } else { Some(oracle_for(&cfg)?) };
    let report = evaluate("eval", t.step, &t.encoders, &t.generator, &ds, oracle.as_ref(), &cfg)?;
    let metrics = write(&common.out, "metrics.json", report.to_json())?;
    write(&common.out, "projection.csv", report.projection_csv())?;
    write(&common.out, "correlation.csv", report.correlation_csv())?;
    let mut v = report.to_json_value();
    v["command"] = json!("eval");
    v["metrics_json"] = json!(metrics);
    Ok(v)
}

fn ablate(common: &Common, no_generation: bool) -> Result<Value> {
    let cfg = load_config(common, TrainConfig::default())?;
    let backbone = require_backbone(&cfg)?;
    let ds = load_dataset(&cfg)?;
    let oracle = if no_generation { None } else { Some(oracle_for(&cfg)?) };
    let out = common.out.clone();
    let mut write_err = None;
    let report = run_ablation_suite(&cfg, &ds, &backbone, oracle.as_ref(), |r| {
        eprintln!("arm {} finished: {}", r.arm.name(), if r.outcome.is_ok() { "ok" } else { "failed" });
        let dir = out.join(r.arm.name());
        let res = write(&dir, "loss.csv", &r.loss_csv).and_then(|_| match &r.outcome {
            Ok(m) => write(&dir, "metrics.json", m.to_json()),
            Err(e) => write(&dir, "error.txt", e),
        });
        if let Err(e) = res {
            write_err.get_or_insert(e);
        }
    });
    if let Some(e) = write_err {
        return Err(e);
    }
    write(&out, "ablation.json", report.to_json())?;
    write(&out, "ablation.csv", report.table())?;
    let mut v: Value = serde_json::from_str(&report.to_json())?;
    v["command"] = json!("ablate");
    Ok(v)
}

fn transfer(common: &Common, checkpoint: &Path, source: &Path, card: &Path) -> Result<Value> {
    let t = Trainer::load(checkpoint)?;
    let cfg = load_config(common, t.config.clone())?;
    let bytes = fs::read(source).map_err(|e| Usage(format!("{}: {e}", source.display())))?;
    let demo = decode_record(&bytes, 0, &cfg.world())?;
    let (w, h, pixels) = read_pgm(card).map_err(|e| Usage(e.to_string()))?;
    if w != cfg.card_size || h != cfg.card_size {
        return usage(format!("card is {w}×{h}, expected {0}×{0}", cfg.card_size));
    }
    let video = t.generator.compose_transfer(&t.encoders, &demo, &pixels, &cfg.sampler(cfg.eval_seed))?;
    let meta = VideoMetadata::default()
        .with("source", source.display())
        .with("card", card.display())
        .with("source_task", demo.task_class)
        .with("source_embodiment", demo.embodiment)
        .with("sampler_steps", cfg.sampler_steps)
        .with("seed", cfg.eval_seed);
    let files = write_video_artifacts(&common.out, &cfg.layout(), &video, &meta)?;
    Ok(json!({
        "command": "transfer",
        "frames": cfg.frames,
        "files": files.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
    }))
}

fn read_frames(dir: &Path) -> Result<(Vec<DepthFrame>, Vec<MaskFrame>)> {
    let (mut depths, mut masks) = (Vec::new(), Vec::new());
    for k in 0.. {
        let d = dir.join(format!("depth_{k:03}.txt"));
        if !d.exists() {
            break;
        }
        let m = dir.join(format!("mask_{k:03}.txt"));
        let read = |p: &Path| fs::read_to_string(p).map_err(|e| Usage(format!("{}: {e}", p.display())));
        depths.push(parse_depth(&read(&d)?).with_context(|| d.display().to_string())?);
        masks.push(parse_mask(&read(&m)?).with_context(|| m.display().to_string())?);
    }
    if depths.len() < 2 {
        return usage(format!("{} needs at least depth_000.txt and depth_001.txt", dir.display()));
    }
    Ok((depths, masks))
}

fn extract_poses(common: &Common, input: Option<&Path>, frames: usize, dilation: usize, trim: f64) -> Result<Value> {
    let cfg = load_config(common, TrainConfig::default())?;
    let (depths, masks, truth): (_, _, Option<Vec<Pose>>) = match input {
        Some(dir) => {
            let (d, m) = read_frames(dir)?;
            (d, m, None)
        }
        None => {
            let (d, m, truth) = BoxScene::default().sequence(frames, 3.0, 0.01, cfg.seed)?;
            let dir = common.out.join("input");
            for (k, (df, mf)) in d.iter().zip(&m).enumerate() {
                write(&dir, &format!("depth_{k:03}.txt"), format_depth(df))?;
                write(&dir, &format!("mask_{k:03}.txt"), format_mask(mf))?;
            }
            write(&dir, "truth.txt", format_trajectory(&truth))?;
            (d, m, Some(truth))
        }
    };
    if !(0.0..1.0).contains(&trim) {
        return usage(format!("--trim must be in [0, 1), got {trim}"));
    }
    let traj = trajectory_from_frames(&depths, &masks, dilation, &IcpConfig { trim_fraction: trim, ..IcpConfig::default() })?;
    let path = write(&common.out, "trajectory.txt", format_trajectory(&traj.poses))?;
    let errors = truth.map(|t| {
        let rot: Vec<f64> = traj.poses.iter().zip(&t).map(|(p, q)| p.rotation_angle_to(q).to_degrees()).collect();
        let trans: Vec<f64> = traj.poses.iter().zip(&t).map(|(p, q)| p.translation_distance(q)).collect();
        json!({ "rotation_deg": rot, "translation": trans })
    });
    Ok(json!({
        "command": "extract-poses",
        "frames": traj.poses.len(),
        "trajectory": path,
        "residuals": traj.residuals,
        "unconverged": traj.unconverged,
        "errors_vs_truth": errors,
    }))
}

fn check() -> Result<(Value, bool)> {
    let outcomes = run_fast_checks();
    let all = outcomes.iter().all(|c| c.passed);
    for c in &outcomes {
        eprintln!("{}", c.line());
    }
    let list: Vec<Value> = outcomes
        .iter()
        .map(|c| json!({ "criterion": c.id, "name": c.name, "passed": c.passed, "detail": c.detail, "seconds": c.seconds }))
        .collect();
    Ok((json!({ "command": "check", "all_passed": all, "checks": list }), all))
}

fn run(cli: Cli) -> Result<bool> {
    let (value, ok) = match &cli.command {
        Command::GenData(c) => (gen_data(c)?, true),
        Command::PretrainBackbone(c) => (pretrain(c)?, true),
        Command::Train { common, resume } => (train(common, resume.as_deref())?, true),
        Command::Eval { common, checkpoint, no_generation } => (eval(common, checkpoint, *no_generation)?, true),
        Command::Ablate { common, no_generation } => (ablate(common, *no_generation)?, true),
        Command::Transfer { common, checkpoint, source, card } => (transfer(common, checkpoint, source, card)?, true),
        Command::ExtractPoses { common, input, frames, dilation, trim } => {
            if *frames < 2 {
                bail!(Usage("--frames must be at least 2".into()));
            }
            (extract_poses(common, input.as_deref(), *frames, *dilation, *trim)?, true)
        }
        Command::Check => check()?,
    };
    println!("{}", serde_json::to_string_pretty(&value)?);
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            let config_error = e.chain().any(|c| c.is::<Usage>() || matches!(c.downcast_ref::<HarnessError>(), Some(HarnessError::Config { .. })));
            ExitCode::from(if config_error { 2 } else { 1 })
        }
    }
}
