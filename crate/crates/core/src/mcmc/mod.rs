//! Posterior sampling: color-parallel Gibbs updates of the latent field,
//! Gibbs updates of the regression coefficients, and adaptive Metropolis or
//! conjugate updates of the covariance parameters.

mod baseline;
mod chain;
mod priors;
mod ram;
pub(crate) mod rng;
mod sampler;

pub use baseline::run_baseline_latent;
pub use chain::{ChainLayout, ChainStore, DrawParams};
pub use priors::{truncated_normal_positive, InvGamma, Priors};
pub use ram::{acceptance_probability, ram_metropolis_step, RamAdaptState, RamStep};
pub use rng::stream;
pub use sampler::{run_chain, GripsSampler};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::coreg::LoadingMatrix;
use crate::data::ObservedData;
use crate::density::LatentField;
use crate::error::{Error, Result};
use crate::exec::ExecMode;
use crate::geometry::Mesh;
use crate::kernels::MaternFactorParams;

/// Full parameter state of the regression model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub field: LatentField,
    /// Outcome-major regression coefficients.
    pub beta: Vec<f64>,
    pub a: LoadingMatrix,
    pub tau2: Vec<f64>,
    pub factors: Vec<MaternFactorParams>,
}

impl ModelState {
    /// Starting point: least-squares coefficients, half of each residual
    /// variance to the noise and half to the spatial part, zero latent field.
    pub fn initial(spec: &ModelSpec, data: &ObservedData, mesh: &Mesh) -> Result<Self> {
        spec.validate(data)?;
        let (q, k, p) = (spec.q, spec.k, data.p());
        let mut beta = vec![0.0; q * p];
        let mut resid_var = vec![1.0; q];
        for j in 0..q {
            let rows: Vec<usize> = (0..data.n()).filter(|&i| data.value(i, j).is_some()).collect();
            if rows.is_empty() {
                continue;
            }
            let x = data.covariates().select_rows(&rows);
            let y = nalgebra::DVector::from_iterator(rows.len(), rows.iter().map(|&i| data.value(i, j).unwrap()));
            let mut fitted = nalgebra::DVector::zeros(rows.len());
            if p > 0 {
                let xtx = x.transpose() * &x + DMatrix::identity(p, p) * 1e-8;
                if let Some(b) = xtx.lu().solve(&(x.transpose() * &y)) {
                    beta[j * p..(j + 1) * p].copy_from_slice(b.as_slice());
                    fitted = &x * b;
                }
            }
            let e = y - fitted;
            let v = e.norm_squared() / (rows.len() as f64 - 1.0).max(1.0);
            if v > 0.0 && v.is_finite() {
                resid_var[j] = v;
            }
        }
        let [lo, hi] = spec.priors.phi_bounds;
        let factors: Vec<MaternFactorParams> = (0..k)
            .map(|j| MaternFactorParams::new(1.0, spec.phi_init.unwrap_or((lo * hi).sqrt()), spec.nu[j]))
            .collect::<Result<_>>()?;
        let mut a = DMatrix::zeros(q, k);
        for j in 0..k {
            a[(j, j)] = (0.5 * resid_var[j]).sqrt() * factors[j].q_scale() / factors[j].sigma2.sqrt();
        }
        Ok(Self {
            field: LatentField::zeros(k, mesh.grid.len()),
            beta,
            a: LoadingMatrix::new(a)?,
            tau2: resid_var.iter().map(|v| 0.5 * v).collect(),
            factors,
        })
    }

    pub fn validate(&self, spec: &ModelSpec, data: &ObservedData, mesh: &Mesh) -> Result<()> {
        if self.a.q() != spec.q || self.a.k() != spec.k || self.factors.len() != spec.k {
            return Err(Error::invalid("state dimensions do not match the model"));
        }
        if self.beta.len() != spec.q * data.p() || self.tau2.len() != spec.q {
            return Err(Error::invalid("state dimensions do not match the data"));
        }
        if self.field.k() != spec.k || self.field.n_points() != mesh.grid.len() {
            return Err(Error::invalid("latent field does not match the reference grid"));
        }
        if self.tau2.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(Error::invalid("noise variances must be positive"));
        }
        self.factors.iter().try_for_each(|f| f.validate())
    }
}

/// Model dimensions, fixed smoothness and priors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub q: usize,
    pub k: usize,
    /// Smoothness per factor (the starting value when smoothness is sampled).
    pub nu: Vec<f64>,
    pub priors: Priors,
    /// Starting decay; defaults to the geometric midpoint of the prior support.
    pub phi_init: Option<f64>,
}

impl ModelSpec {
    pub fn univariate(nu: f64) -> Self {
        Self {
            q: 1,
            k: 1,
            nu: vec![nu],
            priors: Priors::default(),
            phi_init: None,
        }
    }

    pub fn validate(&self, data: &ObservedData) -> Result<()> {
        if self.k == 0 || self.k > self.q {
            return Err(Error::invalid(format!("need 1 <= k <= q, got q = {}, k = {}", self.q, self.k)));
        }
        if data.q() != self.q {
            return Err(Error::invalid(format!("model has q = {} but data has {} outcomes", self.q, data.q())));
        }
        if self.nu.len() != self.k || self.nu.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::invalid("one positive smoothness value per factor is required"));
        }
        self.priors.validate()
    }
}

/// How the loadings and noise variances are updated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LoadingUpdate {
    /// Adaptive Metropolis on the partially marginalized likelihood.
    #[default]
    Metropolis,
    /// Gibbs updates; only valid when every observation sits on the grid.
    Conjugate,
}

/// Which blocks are updated at each iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schedule {
    pub latent: bool,
    pub beta: bool,
    pub covariance: bool,
    pub loadings: bool,
    pub loading_update: LoadingUpdate,
    pub sample_nu: bool,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            latent: true,
            beta: true,
            covariance: true,
            loadings: true,
            loading_update: LoadingUpdate::Metropolis,
            sample_nu: false,
        }
    }
}

/// Run length, storage and tuning of a chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub target_accept: f64,
    /// Exponent of the adaptation step size `n^-decay`.
    pub adapt_decay: f64,
    /// Initial proposal standard deviation in unconstrained coordinates.
    pub initial_step: f64,
    pub schedule: Schedule,
    pub exec: ExecMode,
    /// Keep the latent field of every stored draw (needed for prediction).
    pub store_latent: bool,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            iterations: 5000,
            burn_in: 2500,
            thin: 1,
            seed: 1,
            target_accept: 0.234,
            adapt_decay: 0.7,
            initial_step: 0.1,
            schedule: Schedule::default(),
            exec: ExecMode::Parallel,
            store_latent: true,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thin == 0 {
            return Err(Error::invalid("thin must be at least 1"));
        }
        if self.burn_in > self.iterations {
            return Err(Error::invalid("burn_in exceeds the number of iterations"));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::invalid("target_accept must lie in (0, 1)"));
        }
        if !(self.adapt_decay > 0.5 && self.adapt_decay <= 1.0) {
            return Err(Error::invalid("adapt_decay must lie in (0.5, 1]"));
        }
        if !(self.initial_step > 0.0 && self.initial_step.is_finite()) {
            return Err(Error::invalid("initial_step must be positive"));
        }
        Ok(())
    }

    pub(crate) fn stores(&self, iteration: usize) -> bool {
        iteration >= self.burn_in && (iteration - self.burn_in).is_multiple_of(self.thin)
    }

    pub fn n_stored(&self) -> usize {
        (self.burn_in..self.iterations).filter(|&i| self.stores(i)).count()
    }
}
