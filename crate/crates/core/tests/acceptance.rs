//! One PASS/FAIL line per acceptance criterion. Criteria 7 to 9 share one
//! dataset, one pretrained backbone and one four-arm ablation run.

use std::process::ExitCode;
use std::time::Instant;

use embodiflow::generator::pretrain_backbone;
use embodiflow::harness::checks::{self, CheckOutcome};
use embodiflow::harness::{run_ablation_suite, Arm, MetricsReport, TrainConfig};
use embodiflow::synthworld::{build_dataset, OracleClassifier, OracleConfig};

const CONFIG: &str = include_str!("../../../configs/acceptance.cfg");

fn outcome(id: usize, name: &'static str, passed: bool, detail: String, start: Instant) -> CheckOutcome {
    CheckOutcome { id, name, passed, detail, seconds: start.elapsed().as_secs_f64() }
}

fn trained_criteria() -> Vec<CheckOutcome> {
    let start = Instant::now();
    let fail_all = |msg: String| {
        vec![
            outcome(7, "end-to-end disentanglement", false, msg.clone(), start),
            outcome(8, "composition transfer", false, msg.clone(), start),
            outcome(9, "ablation direction", false, msg, start),
        ]
    };
    let cfg = match TrainConfig::parse(CONFIG) {
        Ok(c) => c,
        Err(e) => return fail_all(format!("config: {e}")),
    };
    let prepared = (|| -> Result<_, String> {
        let ds = build_dataset(&cfg.dataset_config()).map_err(|e| e.to_string())?;
        let (backbone, report) =
            pretrain_backbone(&ds, &cfg.layout(), cfg.gen_hidden, cfg.gen_heads, cfg.depth, &cfg.pretrain_config())
                .map_err(|e| e.to_string())?;
        println!(
            "  pretrained backbone: {} steps, loss {:.4} -> {:.4} ({:.0}s)",
            report.steps_run,
            report.train_losses.first().copied().unwrap_or(f64::NAN),
            report.train_losses.last().copied().unwrap_or(f64::NAN),
            start.elapsed().as_secs_f64()
        );
        let oracle = OracleClassifier::train(&cfg.world(), &OracleConfig::default()).map_err(|e| e.to_string())?;
        Ok((ds, backbone, oracle))
    })();
    let (ds, backbone, oracle) = match prepared {
        Ok(p) => p,
        Err(e) => return fail_all(e),
    };
    let suite = run_ablation_suite(&cfg, &ds, &backbone, Some(&oracle), |r| match &r.outcome {
        Ok(m) => println!("  arm {}: {}", r.arm.name(), summary(m)),
        Err(e) => println!("  arm {} failed: {e}", r.arm.name()),
    });
    let elapsed = start.elapsed().as_secs_f64();
    let full = suite.arms.iter().find(|r| r.arm == Arm::Full).and_then(|r| r.outcome.as_ref().ok());
    let mut out = Vec::new();
    out.push(match full {
        Some(m) => {
            let d = &m.disentanglement;
            let pass = d.cross_correlation < 0.2
                && d.task_purity >= 0.9
                && d.emb_purity >= 0.9
                && d.mi_estimate < 0.1
                && elapsed <= 2.0 * 3600.0;
            outcome(
                7,
                "end-to-end disentanglement",
                pass,
                format!(
                    "{} demos; cross |corr| {:.4} (< 0.2), purity task {:.3} emb {:.3} (>= 0.9), MI {:.4} nats (< 0.1)",
                    ds.samples.len(),
                    d.cross_correlation,
                    d.task_purity,
                    d.emb_purity,
                    d.mi_estimate
                ),
                start,
            )
        }
        None => outcome(7, "end-to-end disentanglement", false, "full arm failed".into(), start),
    });
    out.push(match full.and_then(|m| m.generation.as_ref()) {
        Some(g) => outcome(
            8,
            "composition transfer",
            g.transfer_embodiment_accuracy >= 0.8 && g.transfer_task_accuracy >= 0.8,
            format!(
                "{} pairs; embodiment match {:.3} (>= 0.8), task preserved {:.3} (>= 0.8)",
                g.transfer_pairs, g.transfer_embodiment_accuracy, g.transfer_task_accuracy
            ),
            start,
        ),
        None => outcome(8, "composition transfer", false, "no generation metrics for the full arm".into(), start),
    });
    let c = suite.comparison;
    let flag = |v: Option<bool>| v.map_or("n/a".to_string(), |b| b.to_string());
    out.push(outcome(
        9,
        "ablation direction",
        c.full_lower_cross_correlation == Some(true)
            && c.full_higher_ssim == Some(true)
            && c.no_disentangle_higher_mi == Some(true)
            && c.shared_data_order,
        format!(
            "full < no-DC cross |corr|: {}; full > no-DC SSIM: {}; no-dis MI > full MI: {}; shared data order: {}",
            flag(c.full_lower_cross_correlation),
            flag(c.full_higher_ssim),
            flag(c.no_disentangle_higher_mi),
            c.shared_data_order
        ),
        start,
    ));
    println!("{}", suite.table().lines().map(|l| format!("  {l}")).collect::<Vec<_>>().join("\n"));
    out
}

fn summary(m: &MetricsReport) -> String {
    let d = &m.disentanglement;
    let mut s = format!(
        "cross |corr| {:.4}, purity {:.3}/{:.3}, MI {:.4}",
        d.cross_correlation, d.task_purity, d.emb_purity, d.mi_estimate
    );
    if let Some(g) = &m.generation {
        s += &format!(
            ", SSIM {:.4}, PSNR {:.2}, transfer task {:.3} emb {:.3}",
            g.ssim, g.psnr, g.transfer_task_accuracy, g.transfer_embodiment_accuracy
        );
    }
    s
}

fn main() -> ExitCode {
    let mut results = Vec::new();
    let mut report = |c: CheckOutcome| {
        println!("{}", c.line());
        results.push(c);
    };
    report(checks::gradient_check(100));
    report(checks::flow_check());
    report(checks::club_check());
    report(checks::info_nce_check());
    report(checks::zero_init_check(100));
    let icp = checks::icp_check();
    let within = icp.seconds < 120.0;
    report(CheckOutcome { passed: icp.passed && within, ..icp });
    let mut trained = trained_criteria();
    let determinism = checks::determinism_check(20);
    trained.push(determinism);
    for c in trained {
        report(c);
    }
    results.sort_by_key(|c| c.id);
    println!("summary:");
    for c in &results {
        println!("  criterion {:>2}: {}", c.id, if c.passed { "PASS" } else { "FAIL" });
    }
    if results.iter().all(|c| c.passed) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
