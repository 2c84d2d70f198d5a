//! Posterior predictive sampling and summaries.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::coreg::CellConditioners;
use crate::data::LinkTransform;
use crate::error::{Error, Result};
use crate::exec::{map_range, try_map_range, ExecMode};
use crate::geometry::{Mesh, Point};
use crate::linalg::{spd_cholesky, standard_normals};
use crate::mcmc::rng::TAG_PREDICT;
use crate::mcmc::{stream, ChainStore};

/// Locations, covariates and the outcomes to predict.
#[derive(Debug, Clone)]
pub struct PredictionRequest {
    pub locations: Vec<Point>,
    /// One row per location, same columns as the training covariates.
    pub covariates: DMatrix<f64>,
    /// Outcome indices to report; all outcomes when empty.
    pub outcomes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictConfig {
    /// Probabilities of the reported quantiles.
    pub quantiles: Vec<f64>,
    /// Inverse links applied to every sample before summarizing, per outcome.
    pub links: Vec<LinkTransform>,
    pub seed: u64,
    pub exec: ExecMode,
}

impl Default for PredictConfig {
    fn default() -> Self {
        Self {
            quantiles: vec![0.025, 0.975],
            links: Vec::new(),
            seed: 1,
            exec: ExecMode::default(),
        }
    }
}

/// Posterior summary of one outcome at one location.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub location: Point,
    pub outcome: usize,
    pub mean: f64,
    /// Quantiles in the order of the requested probabilities.
    pub quantiles: Vec<f64>,
}

/// Predictive samples, one vector per (location, outcome) pair.
#[derive(Debug, Clone)]
pub struct Predictions {
    pub locations: Vec<Point>,
    pub outcomes: Vec<usize>,
    /// Indexed by `location * outcomes.len() + position of the outcome`.
    pub samples: Vec<Vec<f64>>,
}

impl Predictions {
    pub fn samples_at(&self, location: usize, outcome_pos: usize) -> &[f64] {
        &self.samples[location * self.outcomes.len() + outcome_pos]
    }

    pub fn summarize(&self, probs: &[f64]) -> Vec<Summary> {
        let m = self.outcomes.len();
        self.samples
            .iter()
            .enumerate()
            .map(|(idx, s)| summarize_samples(self.locations[idx / m], self.outcomes[idx % m], s, probs))
            .collect()
    }
}

fn summarize_samples(location: Point, outcome: usize, s: &[f64], probs: &[f64]) -> Summary {
    let mut sorted = s.to_vec();
    sorted.sort_by(f64::total_cmp);
    Summary {
        location,
        outcome,
        mean: s.iter().sum::<f64>() / s.len() as f64,
        quantiles: probs.iter().map(|&p| quantile_sorted(&sorted, p)).collect(),
    }
}

/// Linear-interpolation quantile of sorted values.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn check_config(config: &PredictConfig, q: usize) -> Result<()> {
    if config.quantiles.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::invalid("quantile levels must lie in [0, 1]"));
    }
    if !config.links.is_empty() && config.links.len() != q {
        return Err(Error::invalid("one link transform per outcome is required"));
    }
    Ok(())
}

fn link(config: &PredictConfig, j: usize) -> LinkTransform {
    config.links.get(j).copied().unwrap_or(LinkTransform::Identity)
}

/// One predictive draw per stored draw at each requested location:
/// `y* ~ N(x' beta + A u, D + A diag(R) A')` under that draw's parameters.
/// Samples are returned on the outcome scale (inverse links applied).
pub fn predict(mesh: &Mesh, chain: &ChainStore, request: &PredictionRequest, config: &PredictConfig) -> Result<Predictions> {
    let layout = chain
        .layout
        .ok_or_else(|| Error::invalid("chain store has no layout"))?;
    if chain.is_empty() {
        return Err(Error::invalid("cannot predict from an empty chain"));
    }
    if chain.latent.len() != chain.n_draws() {
        return Err(Error::invalid("chain store does not hold the latent field"));
    }
    let (q, p) = (layout.q, layout.p);
    check_config(config, q)?;
    let n = request.locations.len();
    if request.covariates.nrows() != n || request.covariates.ncols() != p {
        return Err(Error::invalid(format!(
            "prediction covariates must be {n} x {p}, got {} x {}",
            request.covariates.nrows(),
            request.covariates.ncols()
        )));
    }
    if request.covariates.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("prediction covariates must be finite"));
    }
    let outcomes = if request.outcomes.is_empty() {
        (0..q).collect()
    } else {
        request.outcomes.clone()
    };
    if outcomes.iter().any(|&j| j >= q) {
        return Err(Error::invalid("requested outcome index out of range"));
    }
    for loc in &request.locations {
        if !mesh.grid.domain().contains(loc) {
            return Err(Error::OutOfDomain { x: loc[0], y: loc[1] });
        }
    }
    let m = outcomes.len();
    let mut samples = vec![Vec::with_capacity(chain.n_draws()); n * m];
    for t in 0..chain.n_draws() {
        let d = chain.params(t)?;
        let field = &chain.latent[t];
        let cells = CellConditioners::new(mesh, &d.factors)?;
        let sites = cells.bases(mesh, &request.locations, config.exec)?;
        let draws = try_map_range(config.exec, n, |i| {
            let u = sites[i].project(mesh, field);
            let z = sites[i].projection(&d.a, 0);
            let mean = DVector::from_fn(q, |j, _| {
                let xb: f64 = (0..p).map(|c| request.covariates[(i, c)] * d.beta[j * p + c]).sum();
                xb + (0..d.a.k()).map(|f| d.a.get(j, f) * u[f]).sum::<f64>()
            });
            let mut cov = z.sigma;
            for j in 0..q {
                cov[(j, j)] += d.tau2[j];
            }
            let mut rng = stream(config.seed, TAG_PREDICT, t as u64, i as u64);
            let e = standard_normals(&mut rng, q);
            let y = if q == 1 {
                mean + e * cov[(0, 0)].sqrt()
            } else {
                mean + spd_cholesky(cov, "predictive covariance")?.l() * e
            };
            Ok(outcomes.iter().map(|&j| link(config, j).inverse(y[j])).collect::<Vec<f64>>())
        })?;
        for (i, v) in draws.into_iter().enumerate() {
            for (c, y) in v.into_iter().enumerate() {
                samples[i * m + c].push(y);
            }
        }
    }
    Ok(Predictions {
        locations: request.locations.clone(),
        outcomes,
        samples,
    })
}

/// Posterior summaries of the latent process `A r` at every reference point.
pub fn latent_map(mesh: &Mesh, chain: &ChainStore, config: &PredictConfig) -> Result<Vec<Summary>> {
    let layout = chain
        .layout
        .ok_or_else(|| Error::invalid("chain store has no layout"))?;
    if chain.is_empty() || chain.latent.len() != chain.n_draws() {
        return Err(Error::invalid("latent map needs stored latent draws"));
    }
    check_config(config, layout.q)?;
    let params = (0..chain.n_draws()).map(|t| chain.params(t)).collect::<Result<Vec<_>>>()?;
    let (q, npts) = (layout.q, mesh.grid.len());
    let out = map_range(config.exec, npts * q, |idx| {
        let (pt, j) = (idx / q, idx % q);
        let s: Vec<f64> = params
            .iter()
            .zip(&chain.latent)
            .map(|(d, f)| (0..layout.k).map(|c| d.a.get(j, c) * f.factor(c)[pt]).sum())
            .collect();
        summarize_samples(mesh.grid.point(pt), j, &s, &config.quantiles)
    });
    Ok(out)
}
