//! Per-parameter posterior summaries and efficiency figures.

use grips::diagnostics::{ess, ess_per_second, mcse};
use grips::mcmc::ChainStore;
use grips::predict::quantile_sorted;
use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct ParameterSummary {
    pub parameter: String,
    pub mean: f64,
    pub sd: f64,
    #[serde(rename = "q02.5")]
    pub q_lo: f64,
    #[serde(rename = "q97.5")]
    pub q_hi: f64,
    /// Unavailable for chains shorter than the estimator needs.
    pub ess: Option<f64>,
    pub ess_per_s: Option<f64>,
    pub mcse: Option<f64>,
    /// The chain never moved, so the ESS is not informative.
    pub degenerate: bool,
}

pub fn summarize_column(name: &str, v: &[f64], wall_time: f64) -> ParameterSummary {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    let mut sorted = v.to_vec();
    sorted.sort_by(f64::total_cmp);
    let e = ess(v).ok();
    ParameterSummary {
        parameter: name.to_string(),
        mean,
        sd,
        q_lo: quantile_sorted(&sorted, 0.025),
        q_hi: quantile_sorted(&sorted, 0.975),
        ess: e.map(|e| e.value),
        ess_per_s: e.and_then(|e| ess_per_second(e.value, wall_time).ok()),
        mcse: mcse(v).ok(),
        degenerate: e.is_some_and(|e| e.degenerate),
    }
}

pub fn summarize_chain(chain: &ChainStore) -> Vec<ParameterSummary> {
    if chain.is_empty() {
        return Vec::new();
    }
    chain
        .columns()
        .iter()
        .map(|c| summarize_column(c, &chain.column(c).unwrap(), chain.wall_time))
        .collect()
}
