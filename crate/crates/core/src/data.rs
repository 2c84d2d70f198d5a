//! Observed multivariate outcomes with a missing-value mask and covariates.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point;

/// Outcomes at irregular locations. Missing outcomes are stored as NaN.
///
/// Covariates are shared across outcomes; the coefficient vector is laid out
/// outcome-major, so outcome `j` uses `beta[j * p..(j + 1) * p]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedData {
    locations: Vec<Point>,
    y: DMatrix<f64>,
    x: DMatrix<f64>,
    observed: Vec<Vec<usize>>,
}

impl ObservedData {
    pub fn new(locations: Vec<Point>, y: DMatrix<f64>, x: DMatrix<f64>) -> Result<Self> {
        let n = locations.len();
        if y.nrows() != n || x.nrows() != n {
            return Err(Error::invalid(format!(
                "{n} locations but {} outcome rows and {} covariate rows",
                y.nrows(),
                x.nrows()
            )));
        }
        if y.ncols() == 0 {
            return Err(Error::invalid("at least one outcome is required"));
        }
        if let Some(p) = locations.iter().find(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return Err(Error::invalid(format!("non-finite location {p:?}")));
        }
        if y.iter().any(|v| v.is_infinite()) {
            return Err(Error::invalid("infinite outcome value"));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite covariate value"));
        }
        let observed = (0..n)
            .map(|i| (0..y.ncols()).filter(|&j| !y[(i, j)].is_nan()).collect())
            .collect();
        Ok(Self {
            locations,
            y,
            x,
            observed,
        })
    }

    pub fn n(&self) -> usize {
        self.locations.len()
    }

    pub fn q(&self) -> usize {
        self.y.ncols()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn locations(&self) -> &[Point] {
        &self.locations
    }

    pub fn outcomes(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn covariates(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn value(&self, i: usize, j: usize) -> Option<f64> {
        let v = self.y[(i, j)];
        (!v.is_nan()).then_some(v)
    }

    /// Outcome indices observed at location `i`.
    pub fn observed(&self, i: usize) -> &[usize] {
        &self.observed[i]
    }

    pub fn n_observed(&self, j: usize) -> usize {
        self.observed.iter().filter(|o| o.contains(&j)).count()
    }

    /// `x_i^T beta_j`.
    pub fn linear_predictor(&self, i: usize, j: usize, beta: &[f64]) -> f64 {
        let p = self.p();
        (0..p).map(|c| self.x[(i, c)] * beta[j * p + c]).sum()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        let locations = idx.iter().map(|&i| self.locations[i]).collect();
        let y = self.y.select_rows(idx);
        let x = self.x.select_rows(idx);
        Self::new(locations, y, x).expect("subset of valid data is valid")
    }

    /// Applies per-outcome link transforms to the observed outcomes.
    pub fn transformed(&self, links: &[LinkTransform]) -> Result<Self> {
        if links.len() != self.q() {
            return Err(Error::invalid(format!(
                "{} link transforms for {} outcomes",
                links.len(),
                self.q()
            )));
        }
        let mut y = self.y.clone();
        for (j, link) in links.iter().enumerate() {
            for i in 0..self.n() {
                if !y[(i, j)].is_nan() {
                    y[(i, j)] = link.forward(y[(i, j)])?;
                }
            }
        }
        Self::new(self.locations.clone(), y, self.x.clone())
    }

    /// Sample mean and variance of each observed outcome.
    pub fn outcome_moments(&self) -> Vec<(f64, f64)> {
        (0..self.q())
            .map(|j| {
                let v: Vec<f64> = (0..self.n()).filter_map(|i| self.value(i, j)).collect();
                let n = v.len() as f64;
                if v.is_empty() {
                    return (0.0, 1.0);
                }
                let mean = v.iter().sum::<f64>() / n;
                let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
                (mean, var)
            })
            .collect()
    }
}

/// Transform applied to an outcome before modeling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkTransform {
    #[default]
    Identity,
    Log,
    Logit,
}

impl LinkTransform {
    pub fn forward(self, v: f64) -> Result<f64> {
        match self {
            LinkTransform::Identity => Ok(v),
            LinkTransform::Log if v > 0.0 => Ok(v.ln()),
            LinkTransform::Logit if v > 0.0 && v < 1.0 => Ok((v / (1.0 - v)).ln()),
            _ => Err(Error::invalid(format!("value {v} outside the domain of the {self:?} link"))),
        }
    }

    pub fn inverse(self, v: f64) -> f64 {
        match self {
            LinkTransform::Identity => v,
            LinkTransform::Log => v.exp(),
            LinkTransform::Logit => 1.0 / (1.0 + (-v).exp()),
        }
    }
}
