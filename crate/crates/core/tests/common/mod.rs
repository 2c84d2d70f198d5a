//! Dense oracles shared by the integration tests.
#![allow(dead_code)]

use grips::coreg::LoadingMatrix;
use grips::kernels::{conditioning, cov_matrix};
use grips::{Domain, MaternFactorParams, Mesh, ObservedData, Point};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Precision `(I - B)^T F^-1 (I - B)` of one factor on the reference grid,
/// assembled node by node from brute-force conditioning.
pub fn dag_precision(mesh: &Mesh, params: &MaternFactorParams) -> DMatrix<f64> {
    let n = mesh.grid.len();
    let mut b = DMatrix::zeros(n, n);
    let mut f_inv = DMatrix::zeros(n, n);
    for node in &mesh.dag.ref_nodes {
        let own = mesh.points_of(&node.points);
        let (h, r) = if node.parent_points.is_empty() {
            (DMatrix::zeros(own.len(), 0), cov_matrix(&own, &own, params).unwrap())
        } else {
            let par = mesh.points_of(&node.parent_points);
            let c = conditioning(&own, &par, params).unwrap();
            (c.h, c.r)
        };
        let r_inv = r.try_inverse().unwrap();
        for (a, &pa) in node.points.iter().enumerate() {
            for (c, &pc) in node.parent_points.iter().enumerate() {
                b[(pa, pc)] = h[(a, c)];
            }
            for (c, &pc) in node.points.iter().enumerate() {
                f_inv[(pa, pc)] = r_inv[(a, c)];
            }
        }
    }
    let i_b = DMatrix::identity(n, n) - b;
    i_b.transpose() * f_inv * i_b
}

/// Conditional-mean coefficients over the whole grid and residual variance of
/// one factor at one location, conditioning on the reference points of its
/// cell.
pub fn site_row(mesh: &Mesh, loc: &Point, params: &MaternFactorParams) -> (DVector<f64>, f64) {
    let node = mesh.ref_node_at(loc).unwrap();
    let pts = &mesh.dag.ref_nodes[node].points;
    let own = mesh.points_of(pts);
    let mut row = DVector::zeros(mesh.grid.len());
    if let Some(m) = own.iter().position(|p| (p[0] - loc[0]).abs() < 1e-12 && (p[1] - loc[1]).abs() < 1e-12) {
        row[pts[m]] = 1.0;
        return (row, 0.0);
    }
    let c = conditioning(&[*loc], &own, params).unwrap();
    for (m, &p) in pts.iter().enumerate() {
        row[p] = c.h[(0, m)];
    }
    (row, c.r[(0, 0)].max(0.0))
}

/// Dense Gaussian posterior pieces for the stacked latent vector
/// `[r_1; ...; r_k]` given the data and all other parameters.
pub struct DenseLatentModel {
    pub precision: DMatrix<f64>,
    pub linear: DVector<f64>,
    /// Dense prior precision alone.
    pub prior: DMatrix<f64>,
}

pub fn dense_latent_model(
    mesh: &Mesh,
    data: &ObservedData,
    beta: &[f64],
    a: &LoadingMatrix,
    tau2: &[f64],
    factors: &[MaternFactorParams],
) -> DenseLatentModel {
    let ns = mesh.grid.len();
    let k = factors.len();
    let dim = k * ns;
    let mut prior = DMatrix::zeros(dim, dim);
    for (j, f) in factors.iter().enumerate() {
        prior.view_mut((j * ns, j * ns), (ns, ns)).copy_from(&dag_precision(mesh, f));
    }
    let mut precision = prior.clone();
    let mut linear = DVector::zeros(dim);
    for s in 0..data.n() {
        let obs = data.observed(s);
        if obs.is_empty() {
            continue;
        }
        let loc = data.locations()[s];
        let rows: Vec<(DVector<f64>, f64)> = factors.iter().map(|f| site_row(mesh, &loc, f)).collect();
        let l = obs.len();
        let mut z = DMatrix::zeros(l, dim);
        let mut cov = DMatrix::zeros(l, l);
        for (x, &i) in obs.iter().enumerate() {
            for j in 0..k {
                z.view_mut((x, j * ns), (1, ns))
                    .copy_from(&(rows[j].0.transpose() * a.get(i, j)));
            }
            for (y, &i2) in obs.iter().enumerate() {
                cov[(x, y)] = (0..k).map(|j| a.get(i, j) * rows[j].1 * a.get(i2, j)).sum::<f64>();
            }
            cov[(x, x)] += tau2[i];
        }
        let resid = DVector::from_fn(l, |x, _| {
            data.value(s, obs[x]).unwrap() - data.linear_predictor(s, obs[x], beta)
        });
        let w = cov.try_inverse().unwrap();
        precision += z.transpose() * &w * &z;
        linear += z.transpose() * &w * resid;
    }
    DenseLatentModel {
        precision,
        linear,
        prior,
    }
}

/// Random small dataset on the unit square with missing outcomes.
pub fn random_data(n: usize, q: usize, p: usize, missing: f64, seed: u64) -> ObservedData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let locs: Vec<Point> = (0..n).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect();
    let mut y = DMatrix::from_fn(n, q, |_, _| rng.random_range(-2.0..2.0));
    for i in 0..n {
        for j in 0..q {
            if rng.random::<f64>() < missing {
                y[(i, j)] = f64::NAN;
            }
        }
    }
    let x = DMatrix::from_fn(n, p, |_, c| if c == 0 { 1.0 } else { rng.random_range(-1.0..1.0) });
    ObservedData::new(locs, y, x).unwrap()
}

pub fn unit_mesh(side: usize, splits: usize, data: &ObservedData) -> Mesh {
    Mesh::build(&Domain::unit_square(), [side, side], [splits, splits], data.locations()).unwrap()
}

/// Mean and covariance of the rows of `draws`.
pub fn moments(draws: &[Vec<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let t = draws.len() as f64;
    let d = draws[0].len();
    let mut mean = DVector::zeros(d);
    for r in draws {
        mean += DVector::from_column_slice(r);
    }
    mean /= t;
    let mut cov = DMatrix::zeros(d, d);
    for r in draws {
        let e = DVector::from_column_slice(r) - &mean;
        cov += &e * e.transpose();
    }
    (mean, cov / (t - 1.0))
}
