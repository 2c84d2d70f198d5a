//! Prior distributions and the small samplers built on them.

use rand::Rng;
use rand_distr::{Distribution, Exp, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Inverse-gamma distribution with density proportional to
/// `x^(-shape - 1) exp(-scale / x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InvGamma {
    pub shape: f64,
    pub scale: f64,
}

impl InvGamma {
    pub fn new(shape: f64, scale: f64) -> Self {
        Self { shape, scale }
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return f64::NEG_INFINITY;
        }
        self.shape * self.scale.ln() - ln_gamma(self.shape) - (self.shape + 1.0) * x.ln() - self.scale / x
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let g = Gamma::new(self.shape, 1.0 / self.scale).expect("valid inverse-gamma parameters");
        1.0 / g.sample(rng)
    }

    /// Posterior after observing `n` Gaussian residuals with sum of squares `ss`.
    pub fn updated(&self, n: usize, ss: f64) -> Self {
        Self::new(self.shape + 0.5 * n as f64, self.scale + 0.5 * ss)
    }

    fn validate(&self, name: &str) -> Result<()> {
        if !(self.shape > 0.0 && self.scale > 0.0 && self.shape.is_finite() && self.scale.is_finite()) {
            return Err(Error::invalid(format!("{name}: inverse-gamma parameters must be positive")));
        }
        Ok(())
    }
}

/// Prior hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Priors {
    /// Noise variances.
    pub tau2: InvGamma,
    /// Split variances of the latent factors.
    pub sigma2: InvGamma,
    /// Latent variance of the baseline (non-split) sampler.
    pub baseline_sigma2: InvGamma,
    /// Variance of the half-normal prior on the loading diagonal.
    pub loading_diag_var: f64,
    /// Variance of the normal prior on loadings below the diagonal.
    pub loading_offdiag_var: f64,
    /// Support of the uniform prior on decay parameters.
    pub phi_bounds: [f64; 2],
    /// Support of the uniform prior on smoothness, when it is sampled.
    pub nu_bounds: [f64; 2],
    pub beta_mean: f64,
    pub beta_var: f64,
}

impl Default for Priors {
    fn default() -> Self {
        Self {
            tau2: InvGamma::new(2.01, 1.0),
            sigma2: InvGamma::new(1e-3, 1e-3),
            baseline_sigma2: InvGamma::new(2.01, 1.0),
            loading_diag_var: 1.0,
            loading_offdiag_var: 1.0,
            phi_bounds: [0.1, 30.0],
            nu_bounds: [0.1, 3.0],
            beta_mean: 0.0,
            beta_var: 100.0,
        }
    }
}

impl Priors {
    pub fn validate(&self) -> Result<()> {
        self.tau2.validate("tau2")?;
        self.sigma2.validate("sigma2")?;
        self.baseline_sigma2.validate("baseline_sigma2")?;
        for (name, v) in [
            ("loading_diag_var", self.loading_diag_var),
            ("loading_offdiag_var", self.loading_offdiag_var),
            ("beta_var", self.beta_var),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        for (name, [lo, hi]) in [("phi_bounds", self.phi_bounds), ("nu_bounds", self.nu_bounds)] {
            if !(lo > 0.0 && lo < hi && hi.is_finite()) {
                return Err(Error::invalid(format!("{name} must satisfy 0 < lower < upper")));
            }
        }
        if !self.beta_mean.is_finite() {
            return Err(Error::invalid("beta_mean must be finite"));
        }
        Ok(())
    }

    pub fn ln_phi(&self, phi: f64) -> f64 {
        ln_uniform(phi, self.phi_bounds)
    }

    pub fn ln_nu(&self, nu: f64) -> f64 {
        ln_uniform(nu, self.nu_bounds)
    }

    /// Log prior of one loading entry (diagonal entries are half-normal).
    pub fn ln_loading(&self, value: f64, diagonal: bool) -> f64 {
        if diagonal {
            if value <= 0.0 {
                return f64::NEG_INFINITY;
            }
            ln_normal(value, 0.0, self.loading_diag_var) + std::f64::consts::LN_2
        } else {
            ln_normal(value, 0.0, self.loading_offdiag_var)
        }
    }
}

fn ln_uniform(x: f64, [lo, hi]: [f64; 2]) -> f64 {
    if x > lo && x < hi {
        -(hi - lo).ln()
    } else {
        f64::NEG_INFINITY
    }
}

pub(crate) fn ln_normal(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + (x - mean).powi(2) / var)
}

/// Draw from `N(mean, sd^2)` restricted to the positive half-line.
pub fn truncated_normal_positive<R: Rng + ?Sized>(mean: f64, sd: f64, rng: &mut R) -> f64 {
    let alpha = -mean / sd;
    if alpha < 1.0 {
        loop {
            let z: f64 = rng.sample(StandardNormal);
            if z > alpha {
                return mean + sd * z;
            }
        }
    }
    // exponential proposal for a far tail
    let lambda = 0.5 * (alpha + (alpha * alpha + 4.0).sqrt());
    let exp = Exp::new(lambda).expect("positive rate");
    loop {
        let z = alpha + exp.sample(rng);
        if rng.random::<f64>().ln() < -0.5 * (z - lambda).powi(2) {
            return mean + sd * z;
        }
    }
}
