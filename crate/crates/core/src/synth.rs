//! Synthetic spatial datasets drawn from the exact dense Gaussian process,
//! plus dense Gaussian posterior and kriging oracles for small problems.

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::cholesky::llt::factor::{cholesky_in_place, cholesky_in_place_scratch, LltRegularization};
use faer::{Mat, Par};
use log::warn;
use nalgebra::{Cholesky, DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::ObservedData;
use crate::error::{Error, Result};
use crate::geometry::{distance, Point};
use crate::kernels::{cov_matrix, Matern, MaternFactorParams};

/// Where training and test locations come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimLayout {
    /// Uniform training locations; the test set is the regular grid.
    #[default]
    Irregular,
    /// Everything on the regular grid; the central block `[0.45, 0.55]^2`
    /// plus 10% of the remaining points at random are held out.
    GridWithHoles,
}

/// Generator settings. Factor `j` has unit variance and Matérn correlation
/// with decay `phi[j]` and smoothness `nu[j]`; outcomes load on factors
/// through `lambda`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationSpec {
    /// Number of uniform training locations (irregular layout only).
    pub n_train: usize,
    /// Points per axis of the regular grid on the unit square.
    pub grid_side: usize,
    pub layout: SimLayout,
    pub lambda: DMatrix<f64>,
    pub phi: Vec<f64>,
    pub nu: Vec<f64>,
    pub tau2: Vec<f64>,
    /// Outcome-major coefficients for the covariates `(1, x)`.
    pub beta: Vec<f64>,
    /// Fraction of training outcomes removed at random, per outcome.
    pub missing: f64,
    pub seed: u64,
}

impl SimulationSpec {
    /// Single outcome with variance `sigma2`, noise 0.1 and coefficients (1, 1).
    pub fn univariate(n_train: usize, grid_side: usize, sigma2: f64, phi: f64, nu: f64, seed: u64) -> Self {
        Self {
            n_train,
            grid_side,
            layout: SimLayout::Irregular,
            lambda: DMatrix::from_element(1, 1, sigma2.sqrt()),
            phi: vec![phi],
            nu: vec![nu],
            tau2: vec![0.1],
            beta: vec![1.0, 1.0],
            missing: 0.0,
            seed,
        }
    }

    pub fn q(&self) -> usize {
        self.lambda.nrows()
    }

    pub fn k(&self) -> usize {
        self.lambda.ncols()
    }

    fn validate(&self) -> Result<()> {
        let (q, k) = (self.q(), self.k());
        if q == 0 || k == 0 || self.phi.len() != k || self.nu.len() != k {
            return Err(Error::invalid("one decay and smoothness per factor is required"));
        }
        if self.tau2.len() != q || self.beta.len() != 2 * q {
            return Err(Error::invalid("need one noise variance and two coefficients per outcome"));
        }
        if self.tau2.iter().any(|t| !(*t >= 0.0)) || !(0.0..1.0).contains(&self.missing) {
            return Err(Error::invalid("noise variances must be nonnegative and missing in [0, 1)"));
        }
        if self.grid_side < 2 {
            return Err(Error::invalid("grid needs at least 2 points per axis"));
        }
        Ok(())
    }
}

/// Generating values, for comparison with posterior summaries.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Truth {
    pub lambda: Vec<Vec<f64>>,
    pub phi: Vec<f64>,
    pub nu: Vec<f64>,
    pub tau2: Vec<f64>,
    pub beta: Vec<f64>,
    /// Marginal variance of each outcome's latent process.
    pub sigma2: Vec<f64>,
    /// Diagonal jitter added to the dense factorizations, if any.
    pub jitter: f64,
}

#[derive(Debug, Clone)]
pub struct SimulatedDataset {
    pub train: ObservedData,
    /// Test outcomes include measurement noise.
    pub test: ObservedData,
    /// Latent outcome processes at the training and test locations.
    pub train_latent: DMatrix<f64>,
    pub test_latent: DMatrix<f64>,
    pub truth: Truth,
}

/// Regular grid `j / side`, `j = 1..=side`, on the unit square with axis 1
/// fastest; the same points as a reference grid with `side` lines per axis.
pub fn unit_grid(side: usize) -> Vec<Point> {
    let step = 1.0 / side as f64;
    (0..side * side)
        .map(|i| [(i / side + 1) as f64 * step, (i % side + 1) as f64 * step])
        .collect()
}

pub fn simulate_dataset(spec: &SimulationSpec) -> Result<SimulatedDataset> {
    spec.validate()?;
    let (q, k) = (spec.q(), spec.k());
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let grid = unit_grid(spec.grid_side);
    let (train_locs, test_locs) = match spec.layout {
        SimLayout::Irregular => {
            let train: Vec<Point> = (0..spec.n_train)
                .map(|_| [rng.random::<f64>(), rng.random::<f64>()])
                .collect();
            (train, grid)
        }
        SimLayout::GridWithHoles => {
            let in_hole = |p: &Point| p.iter().all(|c| (0.45..=0.55).contains(c));
            let outside: Vec<usize> = (0..grid.len()).filter(|&i| !in_hole(&grid[i])).collect();
            let mut held = vec![false; grid.len()];
            for i in 0..grid.len() {
                held[i] = in_hole(&grid[i]);
            }
            for pos in sample(&mut rng, outside.len(), outside.len() / 10) {
                held[outside[pos]] = true;
            }
            let train = (0..grid.len()).filter(|&i| !held[i]).map(|i| grid[i]).collect();
            let test = (0..grid.len()).filter(|&i| held[i]).map(|i| grid[i]).collect();
            (train, test)
        }
    };
    let (n_tr, n_te) = (train_locs.len(), test_locs.len());
    let all: Vec<Point> = train_locs.iter().chain(&test_locs).copied().collect();
    let n_all = all.len();

    let mut factors = DMatrix::zeros(n_all, k);
    let mut jitter: f64 = 0.0;
    for j in 0..k {
        let z: Vec<f64> = (0..n_all).map(|_| rng.sample(StandardNormal)).collect();
        let (w, used) = dense_gp_draw(&all, spec.phi[j], spec.nu[j], &z)?;
        jitter = jitter.max(used);
        factors.set_column(j, &DVector::from_vec(w));
    }
    let latent = &factors * spec.lambda.transpose();
    let x_all = DMatrix::from_fn(n_all, 2, |_, c| if c == 0 { 1.0 } else { 0.0 });
    let mut x_all = x_all;
    for i in 0..n_all {
        x_all[(i, 1)] = rng.sample(StandardNormal);
    }
    let mut y = DMatrix::zeros(n_all, q);
    for i in 0..n_all {
        for j in 0..q {
            let e: f64 = rng.sample(StandardNormal);
            y[(i, j)] = spec.beta[2 * j] + spec.beta[2 * j + 1] * x_all[(i, 1)] + latent[(i, j)] + spec.tau2[j].sqrt() * e;
        }
    }
    if spec.missing > 0.0 {
        let drop = (spec.missing * n_tr as f64).round() as usize;
        for j in 0..q {
            for i in sample(&mut rng, n_tr, drop) {
                y[(i, j)] = f64::NAN;
            }
        }
    }
    let train = ObservedData::new(train_locs, y.rows(0, n_tr).into_owned(), x_all.rows(0, n_tr).into_owned())?;
    let test = ObservedData::new(test_locs, y.rows(n_tr, n_te).into_owned(), x_all.rows(n_tr, n_te).into_owned())?;
    let llt = &spec.lambda * spec.lambda.transpose();
    Ok(SimulatedDataset {
        train,
        test,
        train_latent: latent.rows(0, n_tr).into_owned(),
        test_latent: latent.rows(n_tr, n_te).into_owned(),
        truth: Truth {
            lambda: (0..q).map(|i| spec.lambda.row(i).iter().copied().collect()).collect(),
            phi: spec.phi.clone(),
            nu: spec.nu.clone(),
            tau2: spec.tau2.clone(),
            beta: spec.beta.clone(),
            sigma2: (0..q).map(|i| llt[(i, i)]).collect(),
            jitter,
        },
    })
}

/// `L z` for the lower Cholesky factor of the unit-variance Matérn
/// correlation matrix at `points`. Returns the draw and the diagonal jitter
/// that was needed.
pub fn dense_gp_draw(points: &[Point], phi: f64, nu: f64, z: &[f64]) -> Result<(Vec<f64>, f64)> {
    let n = points.len();
    let kernel = Matern::new(phi, nu)?;
    for jitter in [0.0, 1e-10, 1e-8, 1e-6] {
        let mut a = Mat::<f64>::from_fn(n, n, |i, j| {
            if i < j {
                0.0
            } else if i == j {
                1.0 + jitter
            } else {
                kernel.correlation(distance(&points[i], &points[j]))
            }
        });
        let par = Par::Seq;
        let mut buf = MemBuffer::new(cholesky_in_place_scratch::<f64>(n, par, Default::default()));
        let stack = MemStack::new(&mut buf);
        let ok = cholesky_in_place(a.as_mut(), LltRegularization::default(), par, stack, Default::default()).is_ok();
        if !ok {
            warn!("dense factorization of {n} points failed with jitter {jitter}; retrying");
            continue;
        }
        let mut w = vec![0.0; n];
        for j in 0..n {
            let col = a.col(j);
            let zj = z[j];
            for i in j..n {
                w[i] += col[i] * zj;
            }
        }
        return Ok((w, jitter));
    }
    Err(Error::singular("dense simulation covariance"))
}

/// Gaussian posterior of a latent vector and the marginal likelihood.
#[derive(Debug, Clone)]
pub struct GaussianPosterior {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub log_marginal: f64,
}

/// Posterior of `w ~ N(0, prior_cov)` given `y = Z w + e`, `e ~ N(0, diag(noise))`,
/// with `y` already centered by its fixed mean.
pub fn gaussian_posterior(
    prior_cov: &DMatrix<f64>,
    z: &DMatrix<f64>,
    noise: &DVector<f64>,
    y: &DVector<f64>,
) -> Result<GaussianPosterior> {
    let n = y.len();
    if z.nrows() != n || z.ncols() != prior_cov.nrows() || noise.len() != n {
        return Err(Error::invalid("dimension mismatch in the Gaussian posterior"));
    }
    let cz = prior_cov * z.transpose();
    let mut s = z * &cz;
    for i in 0..n {
        s[(i, i)] += noise[i];
    }
    let chol = Cholesky::new(s).ok_or_else(|| Error::singular("marginal covariance"))?;
    let alpha = chol.solve(y);
    let gain_t = chol.solve(&cz.transpose());
    let mean = &cz * &alpha;
    let cov = prior_cov - &cz * gain_t;
    let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let log_marginal = -0.5 * (n as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + y.dot(&alpha));
    Ok(GaussianPosterior {
        mean,
        cov: (&cov + cov.transpose()) * 0.5,
        log_marginal,
    })
}

/// Exact posterior of the latent process at the observed locations of a
/// single-outcome dataset under the dense Matérn model with fixed parameters.
pub fn dense_posterior_oracle(
    locations: &[Point],
    y_centered: &DVector<f64>,
    params: &MaternFactorParams,
    tau2: f64,
) -> Result<GaussianPosterior> {
    if locations.len() > 500 {
        return Err(Error::invalid("the dense posterior oracle is limited to 500 locations"));
    }
    let c = cov_matrix(locations, locations, params)?;
    let n = locations.len();
    gaussian_posterior(&c, &DMatrix::identity(n, n), &DVector::from_element(n, tau2), y_centered)
}

/// Simple kriging with known parameters: predictive means and variances of
/// noisy outcomes at `targets`.
pub fn dense_kriging(
    train: &[Point],
    y_centered: &DVector<f64>,
    targets: &[Point],
    params: &MaternFactorParams,
    tau2: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = train.len();
    let mut s = cov_matrix(train, train, params)?;
    for i in 0..n {
        s[(i, i)] += tau2;
    }
    let chol = Cholesky::new(s).ok_or_else(|| Error::singular("kriging covariance"))?;
    let alpha = chol.solve(y_centered);
    let cross = cov_matrix(targets, train, params)?;
    let mean = (&cross * alpha).as_slice().to_vec();
    let v = chol.l().solve_lower_triangular(&cross.transpose()).ok_or_else(|| Error::singular("kriging covariance"))?;
    let sill = params.partial_sill();
    let var = (0..targets.len())
        .map(|t| sill - v.column(t).norm_squared() + tau2)
        .collect();
    Ok((mean, var))
}
