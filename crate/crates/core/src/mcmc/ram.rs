//! Robust adaptive Metropolis: random-walk proposals whose shape is adapted
//! toward a target acceptance rate.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::standard_normals;

/// Proposal scale and adaptation bookkeeping of one Metropolis block.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RamAdaptState {
    s: DMatrix<f64>,
    pub target_rate: f64,
    pub decay: f64,
    pub adapt: bool,
    steps: usize,
    accepted: usize,
}

impl RamAdaptState {
    pub fn new(dim: usize, initial_scale: f64, target_rate: f64, decay: f64) -> Self {
        Self {
            s: DMatrix::identity(dim, dim) * initial_scale,
            target_rate,
            decay,
            adapt: true,
            steps: 0,
            accepted: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.s.nrows()
    }

    /// Lower-triangular proposal factor.
    pub fn scale(&self) -> &DMatrix<f64> {
        &self.s
    }

    /// Proposal covariance `S S^T`.
    pub fn covariance(&self) -> DMatrix<f64> {
        &self.s * self.s.transpose()
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.accepted as f64 / self.steps as f64
        }
    }

    /// `S S^T <- S (I + eta (alpha - target) u u^T / |u|^2) S^T`.
    fn update(&mut self, u: &DVector<f64>, alpha: f64) {
        let eta = (self.steps as f64).powf(-self.decay).min(1.0);
        let norm2 = u.norm_squared();
        if !self.adapt || norm2 == 0.0 {
            return;
        }
        let c = eta * (alpha - self.target_rate) / norm2;
        let inner = DMatrix::identity(self.dim(), self.dim()) + u * u.transpose() * c;
        let m = &self.s * inner * self.s.transpose();
        // I + c u u^T has eigenvalues 1 and 1 + eta (alpha - target) > 0
        if let Some(ch) = nalgebra::Cholesky::new(m) {
            self.s = ch.unpack();
        }
    }
}

/// Metropolis acceptance probability for a symmetric proposal.
pub fn acceptance_probability(current: f64, proposed: f64) -> f64 {
    let d = proposed - current;
    if d.is_nan() {
        0.0
    } else {
        d.exp().min(1.0)
    }
}

/// Outcome of one Metropolis step.
#[derive(Debug, Clone)]
pub struct RamStep {
    pub accepted: bool,
    pub x: DVector<f64>,
    pub log_density: f64,
}

/// One proposal/accept step in unconstrained coordinates.
///
/// `target` returns the log density (including Jacobians); numerical failures
/// at the proposal count as zero density.
pub fn ram_metropolis_step<F, R>(
    x: &DVector<f64>,
    current: f64,
    mut target: F,
    adapt: &mut RamAdaptState,
    rng: &mut R,
    block: &str,
) -> Result<RamStep>
where
    F: FnMut(&DVector<f64>) -> Result<f64>,
    R: Rng + ?Sized,
{
    if !current.is_finite() {
        return Err(Error::NonFiniteDensity(block.to_string()));
    }
    let u = standard_normals(rng, x.len());
    let proposal = x + &adapt.s * &u;
    let proposed = match target(&proposal) {
        Ok(v) => v,
        Err(e) if e.is_numerical() => {
            log::debug!("{block}: proposal rejected after numerical failure: {e}");
            f64::NEG_INFINITY
        }
        Err(e) => return Err(e),
    };
    let alpha = acceptance_probability(current, proposed);
    let accepted = rng.random::<f64>() < alpha;
    adapt.steps += 1;
    if accepted {
        adapt.accepted += 1;
    }
    adapt.update(&u, alpha);
    Ok(if accepted {
        RamStep {
            accepted,
            x: proposal,
            log_density: proposed,
        }
    } else {
        RamStep {
            accepted,
            x: x.clone(),
            log_density: current,
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn returning_proposal_is_always_accepted() {
        assert_eq!(acceptance_probability(-3.2, -3.2), 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut adapt = RamAdaptState::new(2, 0.5, 0.234, 0.7);
        let x = DVector::from_vec(vec![0.3, -0.1]);
        for _ in 0..200 {
            let step = ram_metropolis_step(&x, -1.0, |_| Ok(-1.0), &mut adapt, &mut rng, "flat").unwrap();
            assert!(step.accepted);
        }
    }

    #[test]
    fn non_finite_current_density_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut adapt = RamAdaptState::new(1, 1.0, 0.234, 0.7);
        let x = DVector::zeros(1);
        let r = ram_metropolis_step(&x, f64::NAN, |_| Ok(0.0), &mut adapt, &mut rng, "b");
        assert!(matches!(r, Err(Error::NonFiniteDensity(_))));
    }

    #[test]
    fn adapted_factor_stays_lower_triangular() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut adapt = RamAdaptState::new(3, 1.0, 0.234, 0.7);
        let mut x = DVector::zeros(3);
        let mut lp = 0.0;
        for _ in 0..2000 {
            let s = ram_metropolis_step(&x, lp, |v| Ok(-0.5 * v.norm_squared()), &mut adapt, &mut rng, "n").unwrap();
            x = s.x;
            lp = s.log_density;
        }
        let s = adapt.scale();
        for i in 0..3 {
            assert!(s[(i, i)] > 0.0);
            for j in (i + 1)..3 {
                assert_eq!(s[(i, j)], 0.0);
            }
        }
    }
}
