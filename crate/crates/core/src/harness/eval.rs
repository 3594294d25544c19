//! Disentanglement and generation evaluation, reported as JSON.

use std::fmt::Write as _;

use serde_json::json;

use crate::encoders::Encoders;
use crate::generator::Generator;
use crate::numerics::Tensor;
use crate::objectives::VariationalModel;
use crate::synthworld::{render_card, Dataset, DemoSample, EmbodimentKind, EmbodimentSpec, OracleClassifier, Split, TaskClass};

use super::config::TrainConfig;
use super::metrics::{
    cosine_structure, cross_block_mean_abs, frame_features, is_degenerate, kmeans, mmd_rbf, pca_2d, pearson_matrix, psnr, purity,
    silhouette, ssim_video,
};
use super::train::mix;
use super::HarnessError;

pub const KMEANS_RESTARTS: usize = 10;
/// Derangements averaged in the held-out CLUB estimate.
const MI_SHIFTS: usize = 16;
const MI_BATCH: usize = 256;

#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionPoint {
    pub space: &'static str,
    pub sample: usize,
    pub label: usize,
    pub x: f64,
    pub y: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DisentanglementMetrics {
    pub samples: usize,
    /// Pearson correlation over `[z_task dims | z_emb dims]`.
    pub correlation: Vec<Vec<f64>>,
    pub cross_correlation: f64,
    pub task_purity: f64,
    pub emb_purity: f64,
    pub task_silhouette: f64,
    pub emb_silhouette: f64,
    pub task_intra_cosine: f64,
    pub task_inter_cosine: f64,
    pub emb_intra_cosine: f64,
    pub emb_inter_cosine: f64,
    pub mi_estimate: f64,
    pub projection: Vec<ProjectionPoint>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenerationMetrics {
    pub recon_samples: usize,
    pub psnr: f64,
    pub ssim: f64,
    /// Generated vs real frame features.
    pub mmd: f64,
    /// Real vs real frame features from disjoint splits.
    pub mmd_reference: f64,
    pub transfer_pairs: usize,
    pub transfer_task_accuracy: f64,
    pub transfer_embodiment_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub arm: String,
    pub trained_steps: usize,
    pub untrained: bool,
    pub disentanglement: DisentanglementMetrics,
    pub generation: Option<GenerationMetrics>,
    pub warnings: Vec<String>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

fn standardize(rows: &[Vec<f64>], reference: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = reference.first().map_or(0, Vec::len);
    let n = reference.len() as f64;
    let mu: Vec<f64> = (0..d).map(|j| reference.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let sd: Vec<f64> =
        (0..d).map(|j| (reference.iter().map(|r| (r[j] - mu[j]).powi(2)).sum::<f64>() / n).sqrt().max(1e-8)).collect();
    rows.iter().map(|r| r.iter().enumerate().map(|(j, v)| (v - mu[j]) / sd[j]).collect()).collect()
}

fn to_tensor(rows: &[Vec<f64>]) -> Result<Tensor, HarnessError> {
    let d = rows.first().map_or(0, Vec::len);
    Ok(Tensor::new([rows.len(), d], rows.iter().flatten().copied().collect())?)
}

/// CLUB estimate between the two spaces with a fresh variational model fit
/// on `fit_*` and evaluated on `eval_*`. Both spaces are standardized with
/// the fitting statistics.
pub fn held_out_mi(
    fit_task: &[Vec<f64>],
    fit_emb: &[Vec<f64>],
    eval_task: &[Vec<f64>],
    eval_emb: &[Vec<f64>],
    cfg: &TrainConfig,
) -> Result<f64, HarnessError> {
    let d = fit_task.first().map_or(0, Vec::len);
    let (ft, fe) = (standardize(fit_task, fit_task), standardize(fit_emb, fit_emb));
    let (et, ee) = (standardize(eval_task, fit_task), standardize(eval_emb, fit_emb));
    let mut q = VariationalModel::new(d, fit_emb[0].len(), cfg.var_hidden, cfg.mi_lr, mix(cfg.eval_seed ^ 0x6d69));
    let mut order: Vec<usize> = (0..ft.len()).collect();
    let mut state = mix(cfg.eval_seed);
    for _ in 0..cfg.var_fit_steps {
        let b = MI_BATCH.min(ft.len());
        for i in 0..b {
            state = mix(state);
            let j = i + (state as usize) % (order.len() - i);
            order.swap(i, j);
        }
        let x = to_tensor(&order[..b].iter().map(|&i| ft[i].clone()).collect::<Vec<_>>())?;
        let y = to_tensor(&order[..b].iter().map(|&i| fe[i].clone()).collect::<Vec<_>>())?;
        q.fit_step(&x, &y)?;
    }
    Ok(q.club_estimate(&to_tensor(&et)?, &to_tensor(&ee)?, MI_SHIFTS, cfg.eval_seed)?)
}

/// Latent-space structure on the validation split, with the variational
/// model refit on training embeddings and scored on validation and test.
pub fn eval_disentanglement(
    encoders: &Encoders,
    dataset: &Dataset,
    cfg: &TrainConfig,
    warnings: &mut Vec<String>,
) -> Result<DisentanglementMetrics, HarnessError> {
    let pick = |splits: &[Split]| -> Vec<&DemoSample> {
        splits.iter().flat_map(|&s| dataset.indices(s)).map(|i| &dataset.samples[i]).collect()
    };
    let val = pick(&[Split::Val]);
    if val.len() < 2 {
        return Err(HarnessError::Eval(format!("{} validation demos; need at least 2", val.len())));
    }
    let (zt, ze) = encoders.embed_all(&val)?;
    let task_labels: Vec<usize> = val.iter().map(|s| s.task_class.index()).collect();
    let emb_labels: Vec<usize> = val.iter().map(|s| s.embodiment.index()).collect();
    let rows: Vec<Vec<f64>> = zt.iter().zip(&ze).map(|(a, b)| a.iter().chain(b).copied().collect()).collect();
    let correlation = pearson_matrix(&rows);
    let cross_correlation = cross_block_mean_abs(&correlation, zt[0].len());

    let mut space = |name: &str, z: &[Vec<f64>], labels: &[usize], k: usize, salt: u64| {
        if is_degenerate(z) {
            warnings.push(format!("degenerate clusters: every {name} embedding is identical"));
        }
        let km = kmeans(z, k, KMEANS_RESTARTS, mix(cfg.eval_seed ^ salt));
        if km.empty_clusters > 0 {
            warnings.push(format!("degenerate clusters: {} empty {name} clusters", km.empty_clusters));
        }
        (purity(&km.labels, labels), silhouette(z, &km.labels), cosine_structure(z, labels))
    };
    let (task_purity, task_silhouette, (ti, tx)) = space("task", &zt, &task_labels, TaskClass::ALL.len(), 1);
    let (emb_purity, emb_silhouette, (ei, ex)) = space("embodiment", &ze, &emb_labels, EmbodimentKind::ALL.len(), 2);

    let fit = pick(&[Split::Train]);
    let held = pick(&[Split::Val, Split::Test]);
    let mi_estimate = if fit.len() >= 2 && held.len() >= 2 {
        let (ft, fe) = encoders.embed_all(&fit)?;
        let (ht, he) = encoders.embed_all(&held)?;
        held_out_mi(&ft, &fe, &ht, &he, cfg)?
    } else {
        warnings.push("too few demos for the held-out MI estimate".into());
        0.0
    };

    let mut projection = Vec::with_capacity(2 * val.len());
    for (name, z, labels) in [("task", &zt, &task_labels), ("embodiment", &ze, &emb_labels)] {
        for (i, p) in pca_2d(z).into_iter().enumerate() {
            projection.push(ProjectionPoint { space: name, sample: i, label: labels[i], x: p[0], y: p[1] });
        }
    }
    Ok(DisentanglementMetrics {
        samples: val.len(),
        correlation,
        cross_correlation,
        task_purity,
        emb_purity,
        task_silhouette,
        emb_silhouette,
        task_intra_cosine: ti,
        task_inter_cosine: tx,
        emb_intra_cosine: ei,
        emb_inter_cosine: ex,
        mi_estimate,
        projection,
    })
}

/// Self-reconstruction, distribution distance and oracle-judged transfer on
/// the test split.
pub fn eval_generation(
    encoders: &Encoders,
    generator: &Generator,
    dataset: &Dataset,
    oracle: &OracleClassifier,
    cfg: &TrainConfig,
) -> Result<GenerationMetrics, HarnessError> {
    let world = cfg.world();
    if oracle.world() != &world {
        return Err(HarnessError::Eval(format!("oracle world {:?} vs config {:?}", oracle.world(), world)));
    }
    let test: Vec<&DemoSample> = dataset.indices(Split::Test).into_iter().map(|i| &dataset.samples[i]).collect();
    if test.is_empty() {
        return Err(HarnessError::Eval("empty test split".into()));
    }
    let recon: Vec<&DemoSample> = test.iter().copied().take(cfg.recon_samples.max(1)).collect();
    let (mut p, mut s, mut generated) = (Vec::new(), Vec::new(), Vec::new());
    for (i, d) in recon.iter().enumerate() {
        let v = generator.compose_transfer(encoders, d, &d.card_f64(), &cfg.sampler(mix(cfg.eval_seed ^ i as u64)))?;
        let truth = d.video_f64();
        p.push(psnr(&v, &truth));
        s.push(ssim_video(&v, &truth, &world));
        generated.extend(frame_features(&v, &world));
    }
    let feats = |demos: &[&DemoSample]| -> Vec<Vec<f64>> { demos.iter().flat_map(|d| frame_features(&d.video_f64(), &world)).collect() };
    let real_test = feats(&recon);
    let val: Vec<&DemoSample> = dataset.indices(Split::Val).into_iter().take(recon.len()).map(|i| &dataset.samples[i]).collect();
    let real_val = feats(&val);
    let mmd = mmd_rbf(&generated, &real_val);
    let mmd_reference = mmd_rbf(&real_test, &real_val);

    let sources = if cfg.transfer_sources == 0 { test.len() } else { cfg.transfer_sources.min(test.len()) };
    let cards: Vec<(EmbodimentKind, Vec<f64>)> =
        EmbodimentKind::ALL.iter().map(|&k| (k, render_card(&EmbodimentSpec::canonical(k, &world), &world, None))).collect();
    let (mut task_ok, mut emb_ok, mut pairs) = (0usize, 0usize, 0usize);
    for (i, src) in test.iter().take(sources).enumerate() {
        for (k, (kind, card)) in cards.iter().enumerate() {
            let seed = mix(cfg.eval_seed ^ mix((i * cards.len() + k) as u64 + 1));
            let v = generator.compose_transfer(encoders, src, card, &cfg.sampler(seed))?;
            let label = oracle.classify(&v)?;
            task_ok += (label.task == src.task_class) as usize;
            emb_ok += (label.embodiment == *kind) as usize;
            pairs += 1;
        }
    }
    Ok(GenerationMetrics {
        recon_samples: recon.len(),
        psnr: mean(&p),
        ssim: mean(&s),
        mmd,
        mmd_reference,
        transfer_pairs: pairs,
        transfer_task_accuracy: task_ok as f64 / pairs.max(1) as f64,
        transfer_embodiment_accuracy: emb_ok as f64 / pairs.max(1) as f64,
    })
}

/// Full evaluation of trained components. Generation metrics are skipped
/// when no oracle is given.
pub fn evaluate(
    arm: &str,
    trained_steps: usize,
    encoders: &Encoders,
    generator: &Generator,
    dataset: &Dataset,
    oracle: Option<&OracleClassifier>,
    cfg: &TrainConfig,
) -> Result<MetricsReport, HarnessError> {
    let mut warnings = Vec::new();
    let untrained = trained_steps == 0;
    if untrained {
        warnings.push("untrained checkpoint: metrics describe the initialization".into());
    }
    let disentanglement = eval_disentanglement(encoders, dataset, cfg, &mut warnings)?;
    let generation = oracle.map(|o| eval_generation(encoders, generator, dataset, o, cfg)).transpose()?;
    let report = MetricsReport { arm: arm.to_string(), trained_steps, untrained, disentanglement, generation, warnings };
    report.check_finite()?;
    Ok(report)
}

impl MetricsReport {
    fn check_finite(&self) -> Result<(), HarnessError> {
        let d = &self.disentanglement;
        let mut values = vec![
            d.cross_correlation,
            d.task_purity,
            d.emb_purity,
            d.task_silhouette,
            d.emb_silhouette,
            d.task_intra_cosine,
            d.task_inter_cosine,
            d.emb_intra_cosine,
            d.emb_inter_cosine,
            d.mi_estimate,
        ];
        values.extend(d.correlation.iter().flatten());
        values.extend(d.projection.iter().flat_map(|p| [p.x, p.y]));
        if let Some(g) = &self.generation {
            values.extend([g.psnr, g.ssim, g.mmd, g.mmd_reference, g.transfer_task_accuracy, g.transfer_embodiment_accuracy]);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(HarnessError::Eval(format!("non-finite metric in arm `{}`", self.arm)));
        }
        Ok(())
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        let d = &self.disentanglement;
        let generation = self.generation.as_ref().map(|g| {
            json!({
                "recon_samples": g.recon_samples,
                "psnr": g.psnr,
                "ssim": g.ssim,
                "mmd": g.mmd,
                "mmd_reference": g.mmd_reference,
                "transfer_pairs": g.transfer_pairs,
                "transfer_task_accuracy": g.transfer_task_accuracy,
                "transfer_embodiment_accuracy": g.transfer_embodiment_accuracy,
            })
        });
        json!({
            "arm": self.arm,
            "trained_steps": self.trained_steps,
            "untrained": self.untrained,
            "disentanglement": {
                "samples": d.samples,
                "cross_correlation": d.cross_correlation,
                "task_purity": d.task_purity,
                "emb_purity": d.emb_purity,
                "task_silhouette": d.task_silhouette,
                "emb_silhouette": d.emb_silhouette,
                "task_intra_cosine": d.task_intra_cosine,
                "task_inter_cosine": d.task_inter_cosine,
                "emb_intra_cosine": d.emb_intra_cosine,
                "emb_inter_cosine": d.emb_inter_cosine,
                "mi_estimate": d.mi_estimate,
                "correlation": d.correlation,
            },
            "generation": generation,
            "warnings": self.warnings,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_json_value()).unwrap_or_default()
    }

    /// PCA coordinates as `space,sample,label,x,y` rows.
    pub fn projection_csv(&self) -> String {
        let mut out = String::from("space,sample,label,x,y\n");
        for p in &self.disentanglement.projection {
            let _ = writeln!(out, "{},{},{},{:?},{:?}", p.space, p.sample, p.label, p.x, p.y);
        }
        out
    }

    pub fn correlation_csv(&self) -> String {
        let mut out = String::new();
        for row in &self.disentanglement.correlation {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(out, "{}", cells.join(","));
        }
        out
    }
}
