//! CSV outputs.
//!
//! Column order is part of the file contract: new columns are appended,
//! existing ones never move. Floats use the shortest representation that
//! round-trips, so reruns produce byte-identical files.

use std::path::Path;

use slime_core::gradient::{GradcheckRow, ProbeRow};
use slime_core::{MetricsRow, TrainOutcome};

pub const METRICS_COLUMNS: [&str; 13] = [
    "step",
    "lr",
    "objective_loss",
    "loss_w",
    "loss_l",
    "loss_dist",
    "hard_margin_violation",
    "soft_gate",
    "mean_delta",
    "preference_accuracy",
    "mean_chosen_loglik",
    "mean_rejected_loglik",
    "min_rejected_token_logprob",
];

pub const GRADCHECK_COLUMNS: [&str; 5] = ["component", "point", "analytic", "numeric", "rel_error"];

pub const PROBE_COLUMNS: [&str; 6] = ["objective", "block", "index", "analytic", "numeric", "rel_error"];

pub const ABLATION_COLUMNS: [&str; 17] = [
    "variant",
    "label",
    "p",
    "enable_chosen",
    "enable_rejected",
    "enable_soft",
    "enable_hard",
    "final_preference_accuracy",
    "final_mean_chosen_loglik",
    "final_min_rejected_token_logprob",
    "final_mean_delta",
    "final_objective_loss",
    "max_abs_loss_w",
    "max_abs_loss_l",
    "max_abs_loss_dist",
    "max_abs_hard_margin_violation",
    "max_abs_soft_gate",
];

pub const SUMMARY_COLUMNS: [&str; 4] = ["metric", "slime", "simpo", "dpo"];

/// Row names of the objective comparison, in file order.
pub const SUMMARY_METRICS: [&str; 5] = [
    "final_preference_accuracy",
    "chosen_loglik_drift",
    "final_min_rejected_token_logprob",
    "final_mean_chosen_loglik",
    "final_mean_delta",
];

fn f(x: f64) -> String {
    x.to_string()
}

pub fn metrics_record(row: &MetricsRow) -> Vec<String> {
    vec![
        row.step.to_string(),
        f(row.lr),
        f(row.objective_loss),
        f(row.loss_w),
        f(row.loss_l),
        f(row.loss_dist),
        f(row.hard_margin_violation),
        f(row.soft_gate),
        f(row.mean_delta),
        f(row.preference_accuracy),
        f(row.mean_chosen_loglik),
        f(row.mean_rejected_loglik),
        f(row.min_rejected_token_logprob),
    ]
}

fn write_table(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> csv::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_metrics(path: &Path, history: &[MetricsRow]) -> csv::Result<()> {
    write_table(path, &METRICS_COLUMNS, history.iter().map(metrics_record))
}

pub fn write_gradcheck(path: &Path, rows: &[GradcheckRow]) -> csv::Result<()> {
    write_table(
        path,
        &GRADCHECK_COLUMNS,
        rows.iter().map(|r| {
            vec![
                r.component.name().to_owned(),
                f(r.point),
                f(r.analytic),
                f(r.numeric),
                f(r.rel_error),
            ]
        }),
    )
}

pub fn write_probe(path: &Path, rows: &[ProbeRow]) -> csv::Result<()> {
    write_table(
        path,
        &PROBE_COLUMNS,
        rows.iter().map(|r| {
            vec![
                r.objective.name().to_owned(),
                r.block.to_owned(),
                r.index.to_string(),
                f(r.analytic),
                f(r.numeric),
                f(r.rel_error),
            ]
        }),
    )
}

fn max_abs(history: &[MetricsRow], field: impl Fn(&MetricsRow) -> f64) -> f64 {
    history.iter().map(|r| field(r).abs()).fold(0.0, f64::max)
}

pub struct AblationResult<'a> {
    pub variant: &'a slime_core::ablation::AblationVariant,
    pub outcome: &'a TrainOutcome,
}

pub fn write_ablation_summary(path: &Path, results: &[AblationResult<'_>]) -> csv::Result<()> {
    write_table(
        path,
        &ABLATION_COLUMNS,
        results.iter().map(|r| {
            let hp = &r.variant.hp;
            let h = &r.outcome.history;
            let last = r.outcome.last();
            vec![
                r.variant.id.to_owned(),
                r.variant.label.to_owned(),
                f(hp.p),
                hp.enable_chosen.to_string(),
                hp.enable_rejected.to_string(),
                hp.enable_soft.to_string(),
                hp.enable_hard.to_string(),
                f(last.preference_accuracy),
                f(last.mean_chosen_loglik),
                f(last.min_rejected_token_logprob),
                f(last.mean_delta),
                f(last.objective_loss),
                f(max_abs(h, |m| m.loss_w)),
                f(max_abs(h, |m| m.loss_l)),
                f(max_abs(h, |m| m.loss_dist)),
                f(max_abs(h, |m| m.hard_margin_violation)),
                f(max_abs(h, |m| m.soft_gate)),
            ]
        }),
    )
}

/// Value of one summary metric for one run.
pub fn summary_value(metric: &str, outcome: &TrainOutcome) -> f64 {
    let (first, last) = (outcome.first(), outcome.last());
    match metric {
        "final_preference_accuracy" => last.preference_accuracy,
        "chosen_loglik_drift" => last.mean_chosen_loglik - first.mean_chosen_loglik,
        "final_min_rejected_token_logprob" => last.min_rejected_token_logprob,
        "final_mean_chosen_loglik" => last.mean_chosen_loglik,
        "final_mean_delta" => last.mean_delta,
        other => panic!("unknown summary metric {other}"),
    }
}

/// `outcomes` must be ordered slime, simpo, dpo to match the header.
pub fn write_compare_summary(path: &Path, outcomes: &[TrainOutcome]) -> csv::Result<()> {
    write_table(
        path,
        &SUMMARY_COLUMNS,
        SUMMARY_METRICS.iter().map(|&metric| {
            let mut row = vec![metric.to_owned()];
            row.extend(outcomes.iter().map(|o| f(summary_value(metric, o))));
            row
        }),
    )
}
