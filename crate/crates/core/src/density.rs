//! Log densities of the DAG-factorized latent prior and of the partially
//! marginalized observation model.

use nalgebra::{DMatrix, DVector};

use crate::coreg::{LoadingMatrix, SiteBasis};
use crate::data::ObservedData;
use crate::error::{Error, Result};
use crate::exec::{map_range, map_slice, try_map_range, try_sum_range, ExecMode};
use crate::geometry::Mesh;
use crate::kernels::{FactorKernel, MaternFactorParams, ParentFactor};
use crate::linalg::{chol_logdet, spd_cholesky, Chol};

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Latent factor values at the reference grid, stored factor by factor.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentField {
    factors: Vec<Vec<f64>>,
}

impl LatentField {
    pub fn zeros(k: usize, n_points: usize) -> Self {
        Self {
            factors: vec![vec![0.0; n_points]; k],
        }
    }

    pub fn from_factors(factors: Vec<Vec<f64>>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::invalid("latent field needs at least one factor"));
        }
        let n = factors[0].len();
        if factors.iter().any(|f| f.len() != n) {
            return Err(Error::invalid("latent factors have different lengths"));
        }
        if factors.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("latent field has non-finite values"));
        }
        Ok(Self { factors })
    }

    pub fn k(&self) -> usize {
        self.factors.len()
    }

    pub fn n_points(&self) -> usize {
        self.factors[0].len()
    }

    pub fn factor(&self, j: usize) -> &[f64] {
        &self.factors[j]
    }

    pub fn factor_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.factors[j]
    }

    pub fn gather(&self, j: usize, idx: &[usize]) -> DVector<f64> {
        DVector::from_iterator(idx.len(), idx.iter().map(|&i| self.factors[j][i]))
    }

    pub fn into_factors(self) -> Vec<Vec<f64>> {
        self.factors
    }
}

/// Conditional law `N(H r_parents, R)` of one reference node's values for one
/// factor, with the products the Gibbs sampler needs.
#[derive(Debug, Clone)]
pub struct NodeConditional {
    pub h: DMatrix<f64>,
    pub r_chol: Chol,
    pub r_inv: DMatrix<f64>,
    pub logdet: f64,
    /// `R^-1 H`
    pub rinv_h: DMatrix<f64>,
    /// `H^T R^-1 H`
    pub ht_rinv_h: DMatrix<f64>,
}

impl NodeConditional {
    pub fn compute(mesh: &Mesh, kernel: FactorKernel, node: usize) -> Result<Self> {
        let n = &mesh.dag.ref_nodes[node];
        let own = mesh.points_of(&n.points);
        let parents = mesh.points_of(&n.parent_points);
        let pf = ParentFactor::new(kernel, parents).map_err(|e| e.at_node(node))?;
        let cond = pf.condition(&own);
        let r_chol = spd_cholesky(cond.r, "residual covariance").map_err(|e| e.at_node(node))?;
        let r_inv = r_chol.inverse();
        let logdet = chol_logdet(&r_chol);
        let rinv_h = &r_inv * &cond.h;
        let ht_rinv_h = cond.h.transpose() * &rinv_h;
        Ok(Self {
            h: cond.h,
            r_chol,
            r_inv,
            logdet,
            rinv_h,
            ht_rinv_h,
        })
    }

    /// Residual `r_own - H r_parents`.
    pub fn residual(&self, own: &DVector<f64>, parents: &DVector<f64>) -> DVector<f64> {
        if self.h.ncols() == 0 {
            own.clone()
        } else {
            own - &self.h * parents
        }
    }

    pub fn quad(&self, e: &DVector<f64>) -> f64 {
        crate::linalg::inv_quad_form(&self.r_chol, e)
    }
}

/// Node conditionals of one factor, computed once per prototype class.
#[derive(Debug, Clone)]
pub struct FactorPrior {
    params: MaternFactorParams,
    classes: Vec<NodeConditional>,
}

impl FactorPrior {
    pub fn new(mesh: &Mesh, params: &MaternFactorParams, mode: ExecMode) -> Result<Self> {
        let kernel = FactorKernel::new(params)?;
        let classes = try_map_range(mode, mesh.prototypes.n_classes(), |c| {
            NodeConditional::compute(mesh, kernel, mesh.prototypes.representatives[c])
        })?;
        Ok(Self {
            params: *params,
            classes,
        })
    }

    pub fn params(&self) -> &MaternFactorParams {
        &self.params
    }

    pub fn conditional(&self, mesh: &Mesh, node: usize) -> &NodeConditional {
        &self.classes[mesh.prototypes.class_of[node]]
    }

    /// Quadratic form and log-determinant contributed by one node.
    pub fn node_terms(&self, mesh: &Mesh, node: usize, values: &[f64]) -> (f64, f64) {
        let c = self.conditional(mesh, node);
        let n = &mesh.dag.ref_nodes[node];
        let own = gather(values, &n.points);
        let par = gather(values, &n.parent_points);
        (c.quad(&c.residual(&own, &par)), c.logdet)
    }

    /// Summed quadratic forms and log-determinants over all nodes.
    pub fn quad_and_logdet(&self, mesh: &Mesh, values: &[f64], mode: ExecMode) -> (f64, f64) {
        let terms = map_range(mode, mesh.dag.n_ref(), |id| self.node_terms(mesh, id, values));
        terms
            .into_iter()
            .fold((0.0, 0.0), |(q, l), (a, b)| (q + a, l + b))
    }

    pub fn logdensity(&self, mesh: &Mesh, values: &[f64], mode: ExecMode) -> f64 {
        let (quad, logdet) = self.quad_and_logdet(mesh, values, mode);
        -0.5 * (values.len() as f64 * LN_2PI + logdet + quad)
    }
}

pub(crate) fn gather(values: &[f64], idx: &[usize]) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&i| values[i]))
}

/// `sum_i sum_j log N(r_ij; H_ij r_[i]j, R_ij)` over reference nodes and factors.
pub fn latent_logdensity(
    field: &LatentField,
    mesh: &Mesh,
    factors: &[MaternFactorParams],
    mode: ExecMode,
) -> Result<f64> {
    check_field(field, mesh, factors.len())?;
    let mut total = 0.0;
    for (j, f) in factors.iter().enumerate() {
        total += FactorPrior::new(mesh, f, mode)?.logdensity(mesh, field.factor(j), mode);
    }
    Ok(total)
}

/// Same density computed node by node without the prototype cache.
pub fn latent_logdensity_direct(
    field: &LatentField,
    mesh: &Mesh,
    factors: &[MaternFactorParams],
    mode: ExecMode,
) -> Result<f64> {
    check_field(field, mesh, factors.len())?;
    let mut total = 0.0;
    for (j, f) in factors.iter().enumerate() {
        let kernel = FactorKernel::new(f)?;
        let values = field.factor(j);
        total += try_sum_range(mode, mesh.dag.n_ref(), |id| {
            let c = NodeConditional::compute(mesh, kernel, id)?;
            let n = &mesh.dag.ref_nodes[id];
            let e = c.residual(&gather(values, &n.points), &gather(values, &n.parent_points));
            Ok(-0.5 * (n.points.len() as f64 * LN_2PI + c.logdet + c.quad(&e)))
        })?;
    }
    Ok(total)
}

fn check_field(field: &LatentField, mesh: &Mesh, k: usize) -> Result<()> {
    if field.k() != k || field.n_points() != mesh.grid.len() {
        return Err(Error::invalid(format!(
            "latent field is {}x{}, expected {}x{}",
            field.k(),
            field.n_points(),
            k,
            mesh.grid.len()
        )));
    }
    Ok(())
}

/// Log density of the observed outcomes at one location given the conditional
/// latent means `u` (one per factor).
pub fn site_loglik(
    data: &ObservedData,
    i: usize,
    beta: &[f64],
    a: &LoadingMatrix,
    tau2: &[f64],
    basis: &SiteBasis,
    u: &[f64],
) -> Result<f64> {
    let obs = data.observed(i);
    let k = a.k();
    let resid = |j: usize| {
        let fitted: f64 = (0..k).map(|f| a.get(j, f) * u[f]).sum();
        data.value(i, j).unwrap() - data.linear_predictor(i, j, beta) - fitted
    };
    let cov = |j: usize, l: usize| {
        let s: f64 = (0..k).map(|f| a.get(j, f) * basis.r[f] * a.get(l, f)).sum();
        if j == l {
            s + tau2[j]
        } else {
            s
        }
    };
    match obs.len() {
        0 => Ok(0.0),
        1 => {
            let j = obs[0];
            let v = cov(j, j);
            if v.is_nan() || v <= 0.0 {
                return Err(Error::Singular {
                    what: "observation covariance",
                    node: Some(basis.node),
                });
            }
            let e = resid(j);
            Ok(-0.5 * (LN_2PI + v.ln() + e * e / v))
        }
        l => {
            let c = DMatrix::from_fn(l, l, |x, y| cov(obs[x], obs[y]));
            let e = DVector::from_fn(l, |x, _| resid(obs[x]));
            let chol = spd_cholesky(c, "observation covariance").map_err(|e| e.at_node(basis.node))?;
            Ok(-0.5 * (l as f64 * LN_2PI + chol_logdet(&chol) + crate::linalg::inv_quad_form(&chol, &e)))
        }
    }
}

/// Observation log-likelihood from precomputed latent projections.
#[allow(clippy::too_many_arguments)]
pub fn obs_loglik_projected(
    data: &ObservedData,
    beta: &[f64],
    a: &LoadingMatrix,
    tau2: &[f64],
    sites: &[SiteBasis],
    u: &[Vec<f64>],
    mode: ExecMode,
) -> Result<f64> {
    try_sum_range(mode, data.n(), |i| site_loglik(data, i, beta, a, tau2, &sites[i], &u[i]))
}

/// `sum_l log N(y_l; X_l beta + Z_l r, D + Sigma_l)` restricted to observed
/// outcomes.
#[allow(clippy::too_many_arguments)]
pub fn obs_loglik(
    data: &ObservedData,
    beta: &[f64],
    a: &LoadingMatrix,
    tau2: &[f64],
    sites: &[SiteBasis],
    field: &LatentField,
    mesh: &Mesh,
    mode: ExecMode,
) -> Result<f64> {
    if sites.len() != data.n() || tau2.len() != data.q() || a.q() != data.q() {
        return Err(Error::invalid("observation model dimensions do not match the data"));
    }
    if beta.len() != data.q() * data.p() {
        return Err(Error::invalid(format!(
            "beta has length {}, expected {}",
            beta.len(),
            data.q() * data.p()
        )));
    }
    let u = map_slice(mode, sites, |s| s.project(mesh, field));
    obs_loglik_projected(data, beta, a, tau2, sites, &u, mode)
}

/// Dense Gaussian log density through an `L D L^T` factorization of `cov`.
pub fn dense_gaussian_loglik(
    y: &DVector<f64>,
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
) -> Result<f64> {
    let n = y.len();
    if mean.len() != n || cov.shape() != (n, n) {
        return Err(Error::invalid("dimension mismatch in dense Gaussian density"));
    }
    // unit lower-triangular L and diagonal f with cov = L diag(f) L^T
    let mut l = DMatrix::<f64>::identity(n, n);
    let mut f = vec![0.0; n];
    for j in 0..n {
        let mut d = cov[(j, j)];
        for m in 0..j {
            d -= l[(j, m)] * l[(j, m)] * f[m];
        }
        if !(d > 0.0) {
            return Err(Error::singular("dense covariance"));
        }
        f[j] = d;
        for i in (j + 1)..n {
            let mut s = cov[(i, j)];
            for m in 0..j {
                s -= l[(i, m)] * l[(j, m)] * f[m];
            }
            l[(i, j)] = s / d;
        }
    }
    let u = l
        .solve_lower_triangular(&(y - mean))
        .ok_or_else(|| Error::singular("dense covariance"))?;
    let quad: f64 = u.iter().zip(&f).map(|(u, f)| u * u / f).sum();
    let logdet: f64 = f.iter().map(|f| f.ln()).sum();
    Ok(-0.5 * (n as f64 * LN_2PI + logdet + quad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coreg::CellConditioners;
    use crate::geometry::Domain;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fp(sigma2: f64, phi: f64, nu: f64) -> MaternFactorParams {
        MaternFactorParams::new(sigma2, phi, nu).unwrap()
    }

    /// Dense precision `(I - B)^T F^-1 (I - B)` of the DAG-implied Gaussian,
    /// built from direct per-node conditioning.
    fn dense_dag_precision(mesh: &Mesh, params: &MaternFactorParams) -> DMatrix<f64> {
        let n = mesh.grid.len();
        let mut b = DMatrix::zeros(n, n);
        let mut f_inv = DMatrix::zeros(n, n);
        for node in &mesh.dag.ref_nodes {
            let own = mesh.points_of(&node.points);
            let par = mesh.points_of(&node.parent_points);
            let c = crate::kernels::conditioning(&own, &par, params).unwrap();
            let ri = c.r.clone().try_inverse().unwrap();
            for (a, &pa) in node.points.iter().enumerate() {
                for (bb, &pb) in node.parent_points.iter().enumerate() {
                    b[(pa, pb)] = c.h[(a, bb)];
                }
                for (bb, &pb) in node.points.iter().enumerate() {
                    f_inv[(pa, pb)] = ri[(a, bb)];
                }
            }
        }
        let i_b = DMatrix::identity(n, n) - b;
        i_b.transpose() * f_inv * i_b
    }

    fn dense_logdensity(prec: &DMatrix<f64>, r: &DVector<f64>) -> f64 {
        let cov = prec.clone().try_inverse().unwrap();
        dense_gaussian_loglik(r, &DVector::zeros(r.len()), &cov).unwrap()
    }

    #[test]
    fn single_point_at_mean() {
        let m = Mesh::build(&Domain::unit_square(), [2, 2], [2, 2], &[]).unwrap();
        let f = fp(1.5, 2.0, 0.5);
        // root node only: one point, zero value
        let prior = FactorPrior::new(&m, &f, ExecMode::Sequential).unwrap();
        let (q, ld) = prior.node_terms(&m, 0, &[0.0; 4]);
        let v = f.partial_sill();
        assert_eq!(q, 0.0);
        assert!((-0.5 * (LN_2PI + ld) - (-0.5 * (2.0 * std::f64::consts::PI * v).ln())).abs() < 1e-14);
    }

    #[test]
    fn chain_matches_dense_oracle() {
        let m = Mesh::build(&Domain::unit_square(), [2, 4], [1, 2], &[]).unwrap();
        assert_eq!(m.dag.n_ref(), 2);
        let f = fp(1.0, 3.0, 1.5);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let r: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let field = LatentField::from_factors(vec![r.clone()]).unwrap();
        let sparse = latent_logdensity(&field, &m, &[f], ExecMode::Sequential).unwrap();
        let dense = dense_logdensity(&dense_dag_precision(&m, &f), &DVector::from_vec(r));
        assert!((sparse - dense).abs() < 1e-10);
    }

    #[test]
    fn sixteen_points_match_dense_oracle() {
        let m = Mesh::build(&Domain::unit_square(), [4, 4], [2, 2], &[]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let factors = [fp(1.3, 4.0, 0.5), fp(0.4, 9.0, 0.5)];
        let field = LatentField::from_factors(
            (0..2).map(|_| (0..16).map(|_| rng.random_range(-2.0..2.0)).collect()).collect(),
        )
        .unwrap();
        let sparse = latent_logdensity(&field, &m, &factors, ExecMode::Parallel).unwrap();
        let dense: f64 = factors
            .iter()
            .enumerate()
            .map(|(j, f)| {
                dense_logdensity(&dense_dag_precision(&m, f), &DVector::from_column_slice(field.factor(j)))
            })
            .sum();
        assert!((sparse - dense).abs() < 1e-8);
        let direct = latent_logdensity_direct(&field, &m, &factors, ExecMode::Sequential).unwrap();
        assert!((sparse - direct).abs() < 1e-10);
    }

    #[test]
    fn dense_density_examples() {
        let one = dense_gaussian_loglik(
            &DVector::from_vec(vec![0.3]),
            &DVector::from_vec(vec![0.3]),
            &DMatrix::identity(1, 1),
        )
        .unwrap();
        assert!((one + 0.5 * LN_2PI).abs() < 1e-15);
        let two = dense_gaussian_loglik(
            &DVector::from_vec(vec![1.0, 1.0]),
            &DVector::zeros(2),
            &DMatrix::identity(2, 2),
        )
        .unwrap();
        assert!((two - (-LN_2PI - 1.0)).abs() < 1e-14);
    }

    #[test]
    fn dense_density_matches_explicit_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 50;
        let b = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let cov = &b * b.transpose() + DMatrix::identity(n, n) * 0.5;
        let y = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let mean = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let e = &y - &mean;
        let inv = cov.clone().try_inverse().unwrap();
        let det: f64 = cov.clone().determinant();
        let expected = -0.5 * (n as f64 * LN_2PI + det.ln() + (e.transpose() * inv * &e)[(0, 0)]);
        let got = dense_gaussian_loglik(&y, &mean, &cov).unwrap();
        assert!((got - expected).abs() < 1e-9 * expected.abs().max(1.0));
        assert!(dense_gaussian_loglik(&y, &mean, &(-cov)).is_err());
    }

    fn obs_setup(q: usize, k: usize, n: usize, seed: u64) -> (Mesh, ObservedData, Vec<MaternFactorParams>, LoadingMatrix, LatentField) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let locs: Vec<[f64; 2]> = (0..n).map(|_| [rng.random(), rng.random()]).collect();
        let m = Mesh::build(&Domain::unit_square(), [4, 4], [2, 2], &locs).unwrap();
        let y = DMatrix::from_fn(n, q, |i, j| if (i + j) % 5 == 3 { f64::NAN } else { rng.random_range(-2.0..2.0) });
        let x = DMatrix::from_fn(n, 2, |_, c| if c == 0 { 1.0 } else { rng.random_range(-1.0..1.0) });
        let data = ObservedData::new(locs, y, x).unwrap();
        let factors: Vec<_> = (0..k).map(|j| fp(1.0 + j as f64, 3.0 + 2.0 * j as f64, 0.5)).collect();
        let a = LoadingMatrix::new(DMatrix::from_fn(q, k, |i, j| match i.cmp(&j) {
            std::cmp::Ordering::Less => 0.0,
            std::cmp::Ordering::Equal => 1.0 + 0.3 * i as f64,
            std::cmp::Ordering::Greater => -0.4,
        }))
        .unwrap();
        let field = LatentField::from_factors(
            (0..k).map(|_| (0..16).map(|_| rng.random_range(-1.0..1.0)).collect()).collect(),
        )
        .unwrap();
        (m, data, factors, a, field)
    }

    #[test]
    fn reference_location_reduces_to_scalar_normal() {
        let m = Mesh::build(&Domain::unit_square(), [4, 4], [2, 2], &[[0.5, 0.75]]).unwrap();
        let data = ObservedData::new(
            vec![[0.5, 0.75]],
            DMatrix::from_element(1, 1, 0.8),
            DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap();
        let f = [fp(1.0, 3.0, 0.5)];
        let a = LoadingMatrix::new(DMatrix::from_element(1, 1, 1.4)).unwrap();
        let mut field = LatentField::zeros(1, 16);
        let g = m.grid.coincident_point(&[0.5, 0.75]).unwrap();
        field.factor_mut(0)[g] = 0.3;
        let sites = CellConditioners::new(&m, &f).unwrap().bases(&m, data.locations(), ExecMode::Sequential).unwrap();
        let ll = obs_loglik(&data, &[0.2], &a, &[0.5], &sites, &field, &m, ExecMode::Sequential).unwrap();
        let mean = 0.2 + 1.4 * 0.3;
        let expected = -0.5 * (LN_2PI + 0.5f64.ln() + (0.8f64 - mean).powi(2) / 0.5);
        assert!((ll - expected).abs() < 1e-14);
    }

    /// Dense assembly of the partially marginalized observation model.
    fn dense_obs_loglik(
        mesh: &Mesh,
        data: &ObservedData,
        beta: &[f64],
        a: &LoadingMatrix,
        tau2: &[f64],
        factors: &[MaternFactorParams],
        field: &LatentField,
    ) -> f64 {
        let (q, k) = (a.q(), a.k());
        let n = data.n();
        let mut rows = Vec::new();
        for i in 0..n {
            for &j in data.observed(i) {
                rows.push((i, j));
            }
        }
        let m = rows.len();
        let mut mean = DVector::zeros(m);
        let mut y = DVector::zeros(m);
        let mut cov = DMatrix::zeros(m, m);
        let mut site_r = vec![vec![0.0; k]; n];
        let mut site_u = vec![vec![0.0; k]; n];
        for i in 0..n {
            let loc = data.locations()[i];
            let node = mesh.ref_node_at(&loc).unwrap();
            let own = &mesh.dag.ref_nodes[node].points;
            for (f, params) in factors.iter().enumerate() {
                let c = crate::kernels::conditioning(&[loc], &mesh.points_of(own), params).unwrap();
                site_u[i][f] = (0..own.len()).map(|t| c.h[(0, t)] * field.factor(f)[own[t]]).sum();
                site_r[i][f] = c.r[(0, 0)];
            }
        }
        for (row, &(i, j)) in rows.iter().enumerate() {
            y[row] = data.value(i, j).unwrap();
            mean[row] = data.linear_predictor(i, j, beta)
                + (0..k).map(|f| a.get(j, f) * site_u[i][f]).sum::<f64>();
            for (col, &(i2, j2)) in rows.iter().enumerate() {
                if i2 != i {
                    continue;
                }
                let mut v: f64 = (0..k).map(|f| a.get(j, f) * site_r[i][f] * a.get(j2, f)).sum();
                if j == j2 {
                    v += tau2[j];
                }
                cov[(row, col)] = v;
            }
        }
        let _ = q;
        dense_gaussian_loglik(&y, &mean, &cov).unwrap()
    }

    #[test]
    fn bivariate_matches_dense_assembly() {
        let (m, data, factors, a, field) = obs_setup(2, 2, 20, 21);
        let beta = [0.5, -0.2, 1.0, 0.3];
        let tau2 = [0.3, 0.6];
        let sites = CellConditioners::new(&m, &factors).unwrap().bases(&m, data.locations(), ExecMode::Parallel).unwrap();
        let ll = obs_loglik(&data, &beta, &a, &tau2, &sites, &field, &m, ExecMode::Parallel).unwrap();
        let dense = dense_obs_loglik(&m, &data, &beta, &a, &tau2, &factors, &field);
        assert!((ll - dense).abs() < 1e-8);
    }

    #[test]
    fn missing_second_outcome_marginalizes() {
        let (m, data, factors, a, field) = obs_setup(2, 2, 6, 22);
        let beta = [0.5, -0.2, 1.0, 0.3];
        let tau2 = [0.3, 0.6];
        let cc = CellConditioners::new(&m, &factors).unwrap();
        let i = (0..6).find(|&i| data.observed(i) == [0]).unwrap();
        let b = cc.basis(&m, &data.locations()[i]).unwrap();
        let u = b.project(&m, &field);
        let ll = site_loglik(&data, i, &beta, &a, &tau2, &b, &u).unwrap();
        let lp = b.projection(&a, m.dag.ref_nodes[b.node].points.len());
        let v = lp.sigma[(0, 0)] + tau2[0];
        let mean = data.linear_predictor(i, 0, &beta) + (0..2).map(|f| a.get(0, f) * u[f]).sum::<f64>();
        let e = data.value(i, 0).unwrap() - mean;
        assert!((ll - (-0.5 * (LN_2PI + v.ln() + e * e / v))).abs() < 1e-13);
    }

    #[test]
    fn location_order_does_not_matter() {
        let (m, data, factors, a, field) = obs_setup(2, 1, 25, 23);
        let beta = [0.5, -0.2, 1.0, 0.3];
        let tau2 = [0.3, 0.6];
        let cc = CellConditioners::new(&m, &factors).unwrap();
        let sites = cc.bases(&m, data.locations(), ExecMode::Sequential).unwrap();
        let ll = obs_loglik(&data, &beta, &a, &tau2, &sites, &field, &m, ExecMode::Sequential).unwrap();
        let perm: Vec<usize> = (0..25).rev().collect();
        let shuffled = data.subset(&perm);
        let sites2 = cc.bases(&m, shuffled.locations(), ExecMode::Sequential).unwrap();
        let ll2 = obs_loglik(&shuffled, &beta, &a, &tau2, &sites2, &field, &m, ExecMode::Sequential).unwrap();
        assert!((ll - ll2).abs() < 1e-10);
    }
}
