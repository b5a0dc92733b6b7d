//! JSON rendering of single-trial outcomes: one object per replicate on
//! stdout, so runs can be piped into jq or logged line by line.

use cartrial_core::{StageAnalysis, TrialOutcome, VariantStats};
use nalgebra::DMatrix;
use serde_json::{json, Value};

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn variant_json(v: &VariantStats) -> Value {
    json!({
        "se": v.se,
        "wald": v.w,
        "correlation": matrix_rows(&v.r),
    })
}

fn stage_json(s: &StageAnalysis) -> Value {
    json!({
        "n": s.n,
        "mu": s.mu,
        "delta": s.delta,
        "conventional": variant_json(&s.conventional),
        "robust": s.robust.as_ref().map(variant_json),
        "p_value": s.p_value,
        "reject": s.reject,
        "fit_iterations": s.fit_iterations,
        "variance_guarded": s.variance_guarded,
    })
}

pub fn outcome_json(replicate: u64, outcome: &TrialOutcome) -> Value {
    json!({
        "replicate": replicate,
        "selected_arm": outcome.selected_arm,
        "stage1": stage_json(&outcome.stage1),
        "stage2": stage_json(&outcome.stage2),
        "combined_statistic": outcome.combined_statistic,
        "combined_threshold": outcome.combined_threshold,
        "reject_overall": outcome.reject_overall,
    })
}

pub fn failure_json(replicate: u64, message: &str) -> Value {
    json!({ "replicate": replicate, "error": message })
}
