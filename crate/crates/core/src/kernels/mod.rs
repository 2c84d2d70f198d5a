//! Matérn correlations, factor covariances and Gaussian conditioning.

mod bessel;

pub use bessel::{bessel_k, bessel_k_scaled};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::geometry::{distance, Point};
use crate::linalg::{spd_cholesky, symmetrize, Chol};

/// Lags below this are treated as zero.
const ZERO_LAG: f64 = 1e-12;

/// Parameters of one latent factor: split variance, decay and smoothness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaternFactorParams {
    pub sigma2: f64,
    pub phi: f64,
    pub nu: f64,
}

impl MaternFactorParams {
    pub fn new(sigma2: f64, phi: f64, nu: f64) -> Result<Self> {
        let p = Self { sigma2, phi, nu };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("sigma2", self.sigma2), ("phi", self.phi), ("nu", self.nu)] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::invalid(format!("{name} must be positive and finite, got {v}")));
            }
        }
        Ok(())
    }

    /// `phi^nu`, the scale that turns correlations into the rescaled factor.
    pub fn q_scale(&self) -> f64 {
        self.phi.powf(self.nu)
    }

    /// Factor covariance at zero lag, `sigma2 / phi^(2 nu)`.
    pub fn partial_sill(&self) -> f64 {
        self.sigma2 / self.phi.powf(2.0 * self.nu)
    }

    /// `sigma2 * phi^(2 nu)`.
    pub fn microergodic(&self) -> f64 {
        self.sigma2 * self.phi.powf(2.0 * self.nu)
    }
}

#[derive(Debug, Clone, Copy)]
enum Form {
    Exponential,
    ThreeHalves,
    FiveHalves,
    General { log_norm: f64 },
}

/// A Matérn correlation with precomputed constants.
#[derive(Debug, Clone, Copy)]
pub struct Matern {
    phi: f64,
    nu: f64,
    form: Form,
}

impl Matern {
    pub fn new(phi: f64, nu: f64) -> Result<Self> {
        if !phi.is_finite() || phi <= 0.0 || !nu.is_finite() || nu <= 0.0 {
            return Err(Error::invalid(format!(
                "Matérn parameters must be positive and finite, got phi = {phi}, nu = {nu}"
            )));
        }
        let form = if nu == 0.5 {
            Form::Exponential
        } else if nu == 1.5 {
            Form::ThreeHalves
        } else if nu == 2.5 {
            Form::FiveHalves
        } else {
            Form::General {
                log_norm: (1.0 - nu) * std::f64::consts::LN_2 - ln_gamma(nu),
            }
        };
        Ok(Self { phi, nu, form })
    }

    /// Same kernel, always evaluated through the Bessel function.
    pub fn general(phi: f64, nu: f64) -> Result<Self> {
        let mut m = Self::new(phi, nu)?;
        m.form = Form::General {
            log_norm: (1.0 - nu) * std::f64::consts::LN_2 - ln_gamma(nu),
        };
        Ok(m)
    }

    /// Correlation at lag `h >= 0`.
    pub fn correlation(&self, h: f64) -> f64 {
        if h < ZERO_LAG {
            return 1.0;
        }
        let x = self.phi * h;
        match self.form {
            Form::Exponential => (-x).exp(),
            Form::ThreeHalves => (1.0 + x) * (-x).exp(),
            Form::FiveHalves => (1.0 + x + x * x / 3.0) * (-x).exp(),
            Form::General { log_norm } => {
                let k = bessel_k_scaled(self.nu, x);
                (log_norm + self.nu * x.ln() - x + k.ln()).exp().min(1.0)
            }
        }
    }
}

/// `2^(1-nu) / Gamma(nu) (phi h)^nu K_nu(phi h)`, and 1 at zero lag.
pub fn matern_correlation(h: f64, phi: f64, nu: f64) -> Result<f64> {
    if !h.is_finite() || h < 0.0 {
        return Err(Error::invalid(format!("lag must be finite and nonnegative, got {h}")));
    }
    Ok(Matern::new(phi, nu)?.correlation(h))
}

/// `sigma2 * rho(h) / phi^(2 nu)`.
pub fn factor_covariance(h: f64, params: &MaternFactorParams) -> Result<f64> {
    params.validate()?;
    Ok(params.partial_sill() * matern_correlation(h, params.phi, params.nu)?)
}

/// Covariance function of one rescaled latent factor.
#[derive(Debug, Clone, Copy)]
pub struct FactorKernel {
    corr: Matern,
    sill: f64,
}

impl FactorKernel {
    pub fn new(params: &MaternFactorParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            corr: Matern::new(params.phi, params.nu)?,
            sill: params.partial_sill(),
        })
    }

    pub fn sill(&self) -> f64 {
        self.sill
    }

    pub fn eval(&self, h: f64) -> f64 {
        self.sill * self.corr.correlation(h)
    }

    pub fn matrix(&self, a: &[Point], b: &[Point]) -> DMatrix<f64> {
        DMatrix::from_fn(a.len(), b.len(), |i, j| self.eval(distance(&a[i], &b[j])))
    }

    /// Symmetric covariance of one location set.
    pub fn sym_matrix(&self, a: &[Point]) -> DMatrix<f64> {
        let n = a.len();
        let mut m = DMatrix::from_element(n, n, self.sill);
        for i in 0..n {
            for j in 0..i {
                let v = self.eval(distance(&a[i], &a[j]));
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }
}

/// Pairwise factor covariances between two location lists.
pub fn cov_matrix(a: &[Point], b: &[Point], params: &MaternFactorParams) -> Result<DMatrix<f64>> {
    Ok(FactorKernel::new(params)?.matrix(a, b))
}

/// Conditional mean coefficients and residual covariance of target
/// locations given parent locations.
#[derive(Debug, Clone)]
pub struct ConditioningPair {
    pub h: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

/// Factorized covariance of a parent set, reusable across targets.
#[derive(Debug, Clone)]
pub struct ParentFactor {
    kernel: FactorKernel,
    points: Vec<Point>,
    chol: Option<Chol>,
}

impl ParentFactor {
    pub fn new(kernel: FactorKernel, points: Vec<Point>) -> Result<Self> {
        let chol = if points.is_empty() {
            None
        } else {
            Some(spd_cholesky(kernel.sym_matrix(&points), "parent covariance")?)
        };
        Ok(Self {
            kernel,
            points,
            chol,
        })
    }

    pub fn kernel(&self) -> &FactorKernel {
        &self.kernel
    }

    pub fn n_parents(&self) -> usize {
        self.points.len()
    }

    pub fn condition(&self, targets: &[Point]) -> ConditioningPair {
        let c_tt = self.kernel.sym_matrix(targets);
        let Some(chol) = &self.chol else {
            return ConditioningPair {
                h: DMatrix::zeros(targets.len(), 0),
                r: c_tt,
            };
        };
        let c_pt = self.kernel.matrix(&self.points, targets);
        let h = chol.solve(&c_pt).transpose();
        let mut r = c_tt - &h * c_pt;
        symmetrize(&mut r);
        for i in 0..r.nrows() {
            if r[(i, i)] < 0.0 {
                r[(i, i)] = 0.0;
            }
        }
        ConditioningPair { h, r }
    }

    /// Coefficients and residual variance for a single target location.
    pub fn condition_point(&self, target: &Point) -> (Vec<f64>, f64) {
        let Some(chol) = &self.chol else {
            return (Vec::new(), self.kernel.sill());
        };
        let c = nalgebra::DVector::from_iterator(
            self.points.len(),
            self.points.iter().map(|p| self.kernel.eval(distance(p, target))),
        );
        let h = chol.solve(&c);
        let r = (self.kernel.sill() - h.dot(&c)).max(0.0);
        (h.as_slice().to_vec(), r)
    }
}

/// `H = C_tp C_pp^-1` and `R = C_tt - H C_pt`.
pub fn conditioning(
    targets: &[Point],
    parents: &[Point],
    params: &MaternFactorParams,
) -> Result<ConditioningPair> {
    let pf = ParentFactor::new(FactorKernel::new(params)?, parents.to_vec())?;
    Ok(pf.condition(targets))
}
