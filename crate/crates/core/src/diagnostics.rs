//! Chain efficiency and accuracy metrics.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::predict::quantile_sorted;

/// Effective sample size and whether the chain was constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Ess {
    pub value: f64,
    pub degenerate: bool,
}

/// Effective sample size `T / kappa`, with the autocorrelation sum truncated
/// by Geyer's initial positive sequence on paired autocovariances.
pub fn ess(chain: &[f64]) -> Result<Ess> {
    let n = chain.len();
    if n < 10 {
        return Err(Error::invalid(format!("need at least 10 draws for ESS, got {n}")));
    }
    if chain.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("chain contains non-finite values"));
    }
    if chain.iter().all(|v| *v == chain[0]) {
        return Ok(Ess {
            value: n as f64,
            degenerate: true,
        });
    }
    let acov = autocovariance(chain);
    // Gamma_m = c_{2m} + c_{2m+1}, summed while positive and forced monotone.
    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    let mut m = 0;
    while 2 * m + 1 < n {
        let mut g = acov[2 * m] + acov[2 * m + 1];
        if g <= 0.0 {
            break;
        }
        g = g.min(prev);
        sum += g;
        prev = g;
        m += 1;
    }
    let tau = (2.0 * sum / acov[0] - 1.0).max(1.0 / n as f64);
    Ok(Ess {
        value: n as f64 / tau,
        degenerate: false,
    })
}

/// Biased autocovariances at all lags, via direct summation.
pub fn autocovariance(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let d: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let mut out = Vec::with_capacity(n);
    for lag in 0..n {
        let s: f64 = d[..n - lag].iter().zip(&d[lag..]).map(|(a, b)| a * b).sum();
        out.push(s / n as f64);
        // the truncated sum never looks past the first nonpositive pair
        if lag % 2 == 1 && out[lag] + out[lag - 1] <= 0.0 {
            break;
        }
    }
    out.resize(n, 0.0);
    out
}

/// Monte Carlo standard error of the chain mean.
pub fn mcse(chain: &[f64]) -> Result<f64> {
    let e = ess(chain)?;
    let n = chain.len() as f64;
    let mean = chain.iter().sum::<f64>() / n;
    let var = chain.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((var / e.value).sqrt())
}

pub fn ess_per_second(ess: f64, wall_time: f64) -> Result<f64> {
    if !(wall_time > 0.0) {
        return Err(Error::invalid("wall time must be positive"));
    }
    Ok(ess / wall_time)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Accuracy {
    pub rmse: f64,
    /// Mean absolute relative error over entries with nonzero truth.
    pub mpe: f64,
    /// Entries left out of the relative error because the truth was zero.
    pub mpe_excluded: usize,
    pub coverage: f64,
}

/// RMSE, mean absolute relative error and interval coverage of estimates.
pub fn accuracy_metrics(truth: &[f64], estimates: &[f64], intervals: &[(f64, f64)]) -> Result<Accuracy> {
    let n = truth.len();
    if n == 0 || estimates.len() != n || intervals.len() != n {
        return Err(Error::invalid("truth, estimates and intervals must have the same nonzero length"));
    }
    let rmse = (truth.iter().zip(estimates).map(|(t, e)| (e - t).powi(2)).sum::<f64>() / n as f64).sqrt();
    let rel: Vec<f64> = truth
        .iter()
        .zip(estimates)
        .filter(|(t, _)| **t != 0.0)
        .map(|(t, e)| ((e - t) / t).abs())
        .collect();
    let mpe = if rel.is_empty() {
        f64::NAN
    } else {
        rel.iter().sum::<f64>() / rel.len() as f64
    };
    let covered = truth
        .iter()
        .zip(intervals)
        .filter(|(t, (lo, hi))| lo <= *t && *t <= hi)
        .count();
    Ok(Accuracy {
        rmse,
        mpe,
        mpe_excluded: n - rel.len(),
        coverage: covered as f64 / n as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PredictionMetrics {
    pub rmspe: f64,
    pub crps: f64,
    pub coverage: f64,
}

/// Empirical CRPS of one sample set against an observed value.
pub fn crps_samples(samples: &[f64], y: f64) -> f64 {
    let t = samples.len() as f64;
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let first = s.iter().map(|x| (x - y).abs()).sum::<f64>() / t;
    // sum_{a,b} |x_a - x_b| = 2 sum_i (2i - T + 1) x_(i) over sorted values
    let pair: f64 = s
        .iter()
        .enumerate()
        .map(|(i, x)| (2.0 * i as f64 - t + 1.0) * x)
        .sum::<f64>()
        * 2.0;
    (first - pair / (2.0 * t * t)).max(0.0)
}

/// RMSPE of predictive means, mean CRPS and central 95% interval coverage.
pub fn prediction_metrics(truth: &[f64], samples: &[&[f64]]) -> Result<PredictionMetrics> {
    let n = truth.len();
    if n == 0 || samples.len() != n {
        return Err(Error::invalid("one sample set per test value is required"));
    }
    if samples.iter().any(|s| s.len() < 2) {
        return Err(Error::invalid("need at least 2 predictive samples per test value"));
    }
    let mut sse = 0.0;
    let mut crps = 0.0;
    let mut covered = 0usize;
    for (y, s) in truth.iter().zip(samples) {
        let mean = s.iter().sum::<f64>() / s.len() as f64;
        sse += (mean - y).powi(2);
        crps += crps_samples(s, *y);
        let mut sorted = s.to_vec();
        sorted.sort_by(f64::total_cmp);
        if quantile_sorted(&sorted, 0.025) <= *y && *y <= quantile_sorted(&sorted, 0.975) {
            covered += 1;
        }
    }
    Ok(PredictionMetrics {
        rmspe: (sse / n as f64).sqrt(),
        crps: crps / n as f64,
        coverage: covered as f64 / n as f64,
    })
}
