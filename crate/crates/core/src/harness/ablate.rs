//! Four-arm ablation over the disentanglement and contrastive terms.

use serde_json::json;

use crate::generator::Backbone;
use crate::synthworld::{Dataset, OracleClassifier};

use super::config::TrainConfig;
use super::eval::{evaluate, MetricsReport};
use super::train::{loss_csv, StepLog, Trainer};
use super::HarnessError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Arm {
    Full,
    NoDisentangle,
    NoContrast,
    /// Flow matching only.
    NoDualContrast,
}

impl Arm {
    pub const ALL: [Arm; 4] = [Arm::Full, Arm::NoDisentangle, Arm::NoContrast, Arm::NoDualContrast];

    pub fn name(self) -> &'static str {
        match self {
            Arm::Full => "full",
            Arm::NoDisentangle => "no_disentangle",
            Arm::NoContrast => "no_contrast",
            Arm::NoDualContrast => "no_dual_contrast",
        }
    }

    /// `base` with this arm's switches; every other setting is shared.
    pub fn config(self, base: &TrainConfig) -> TrainConfig {
        let mut c = base.clone();
        let (dis, contrast) = match self {
            Arm::Full => (true, true),
            Arm::NoDisentangle => (false, true),
            Arm::NoContrast => (true, false),
            Arm::NoDualContrast => (false, false),
        };
        c.use_dis = dis;
        c.use_task_contrast = contrast;
        c.use_emb_contrast = contrast;
        c
    }
}

#[derive(Clone, Debug)]
pub struct ArmResult {
    pub arm: Arm,
    /// Metrics, or the error that stopped this arm.
    pub outcome: Result<MetricsReport, String>,
    pub loss_csv: String,
    pub batch_hashes: Vec<u64>,
}

/// Directional comparisons between arms; `None` where an arm failed or
/// generation was not evaluated.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Comparison {
    pub full_lower_cross_correlation: Option<bool>,
    pub full_higher_ssim: Option<bool>,
    pub no_disentangle_higher_mi: Option<bool>,
    pub shared_data_order: bool,
}

#[derive(Clone, Debug)]
pub struct AblationReport {
    pub arms: Vec<ArmResult>,
    pub comparison: Comparison,
}

fn train_arm(
    arm: Arm,
    base: &TrainConfig,
    dataset: &Dataset,
    backbone: &Backbone,
    oracle: Option<&OracleClassifier>,
) -> (Result<MetricsReport, HarnessError>, Vec<StepLog>) {
    let mut logs = Vec::new();
    let result = (|| {
        let mut t = Trainer::new(arm.config(base), backbone.clone())?;
        while t.step < t.config.steps {
            logs.push(t.train_step(dataset)?);
        }
        let cfg = t.config.clone();
        evaluate(arm.name(), t.step, &t.encoders, &t.generator, dataset, oracle, &cfg)
    })();
    (result, logs)
}

/// Trains and evaluates every arm from the same backbone, data order and
/// seeds. A failing arm is recorded and the suite continues.
pub fn run_ablation_suite<F>(
    base: &TrainConfig,
    dataset: &Dataset,
    backbone: &Backbone,
    oracle: Option<&OracleClassifier>,
    mut on_arm: F,
) -> AblationReport
where
    F: FnMut(&ArmResult),
{
    let mut arms = Vec::with_capacity(Arm::ALL.len());
    for arm in Arm::ALL {
        let (outcome, logs) = train_arm(arm, base, dataset, backbone, oracle);
        let r = ArmResult {
            arm,
            outcome: outcome.map_err(|e| e.to_string()),
            loss_csv: loss_csv(&logs),
            batch_hashes: logs.iter().map(|l| l.batch_hash).collect(),
        };
        on_arm(&r);
        arms.push(r);
    }
    let comparison = compare(&arms);
    AblationReport { arms, comparison }
}

fn compare(arms: &[ArmResult]) -> Comparison {
    let get = |a: Arm| arms.iter().find(|r| r.arm == a).and_then(|r| r.outcome.as_ref().ok());
    let (full, no_dis, no_dc) = (get(Arm::Full), get(Arm::NoDisentangle), get(Arm::NoDualContrast));
    let shortest = arms.iter().map(|r| r.batch_hashes.len()).min().unwrap_or(0);
    Comparison {
        full_lower_cross_correlation: full.zip(no_dc)
            .map(|(f, n)| f.disentanglement.cross_correlation < n.disentanglement.cross_correlation),
        full_higher_ssim: full.zip(no_dc)
            .and_then(|(f, n)| Some(f.generation.as_ref()?.ssim > n.generation.as_ref()?.ssim)),
        no_disentangle_higher_mi: full.zip(no_dis).map(|(f, n)| n.disentanglement.mi_estimate > f.disentanglement.mi_estimate),
        shared_data_order: arms.windows(2).all(|w| w[0].batch_hashes[..shortest] == w[1].batch_hashes[..shortest]),
    }
}

impl AblationReport {
    pub fn to_json(&self) -> String {
        let arms: Vec<serde_json::Value> = self
            .arms
            .iter()
            .map(|r| match &r.outcome {
                Ok(m) => json!({ "arm": r.arm.name(), "ok": true, "metrics": m.to_json_value() }),
                Err(e) => json!({ "arm": r.arm.name(), "ok": false, "error": e }),
            })
            .collect();
        let c = &self.comparison;
        let v = json!({
            "arms": arms,
            "comparison": {
                "full_lower_cross_correlation": c.full_lower_cross_correlation,
                "full_higher_ssim": c.full_higher_ssim,
                "no_disentangle_higher_mi": c.no_disentangle_higher_mi,
                "shared_data_order": c.shared_data_order,
            },
        });
        serde_json::to_string_pretty(&v).unwrap_or_default()
    }

    /// One row per arm with the headline numbers.
    pub fn table(&self) -> String {
        let mut out = String::from("arm,cross_correlation,task_purity,emb_purity,mi_estimate,ssim,psnr\n");
        for r in &self.arms {
            match &r.outcome {
                Ok(m) => {
                    let d = &m.disentanglement;
                    let (ssim, psnr) = m.generation.as_ref().map_or((f64::NAN, f64::NAN), |g| (g.ssim, g.psnr));
                    out.push_str(&format!(
                        "{},{:.4},{:.4},{:.4},{:.4},{:.4},{:.3}\n",
                        r.arm.name(),
                        d.cross_correlation,
                        d.task_purity,
                        d.emb_purity,
                        d.mi_estimate,
                        ssim,
                        psnr
                    ));
                }
                Err(e) => out.push_str(&format!("{},failed: {e}\n", r.arm.name())),
            }
        }
        out
    }
}
