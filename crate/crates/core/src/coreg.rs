//! Loading matrix of the parametrized-and-split coregionalization model and
//! the per-location projections onto the latent reference field.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::density::LatentField;
use crate::error::{Error, Result};
use crate::exec::{try_map_range, ExecMode};
use crate::geometry::{Mesh, Point};
use crate::kernels::{FactorKernel, MaternFactorParams, ParentFactor};

/// `q x k` loading matrix with zeros above the diagonal and a positive
/// diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadingMatrix {
    a: DMatrix<f64>,
}

impl LoadingMatrix {
    pub fn new(a: DMatrix<f64>) -> Result<Self> {
        let (q, k) = a.shape();
        if k == 0 || k > q {
            return Err(Error::invalid(format!("loading matrix must have 1 <= k <= q, got {q}x{k}")));
        }
        for i in 0..q {
            for j in 0..k {
                let v = a[(i, j)];
                if !v.is_finite() {
                    return Err(Error::invalid("loading matrix has non-finite entries"));
                }
                if j > i && v != 0.0 {
                    return Err(Error::invalid(format!("loading entry ({i}, {j}) above the diagonal")));
                }
                if i == j && v <= 0.0 {
                    return Err(Error::invalid(format!("loading diagonal ({i}, {i}) must be positive")));
                }
            }
        }
        Ok(Self { a })
    }

    pub fn identity(q: usize, k: usize) -> Result<Self> {
        Self::new(DMatrix::identity(q, k))
    }

    pub fn q(&self) -> usize {
        self.a.nrows()
    }

    pub fn k(&self) -> usize {
        self.a.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.a[(i, j)]
    }

    /// Positions of the free (lower-triangular) entries, row by row.
    pub fn free_entries(&self) -> Vec<(usize, usize)> {
        (0..self.q())
            .flat_map(|i| (0..self.k().min(i + 1)).map(move |j| (i, j)))
            .collect()
    }

    /// Number of free entries in row `i`.
    pub fn row_len(&self, i: usize) -> usize {
        self.k().min(i + 1)
    }
}

fn check_factors(k: usize, factors: &[MaternFactorParams]) -> Result<()> {
    if factors.len() != k {
        return Err(Error::invalid(format!("{k} factors expected, got {}", factors.len())));
    }
    factors.iter().try_for_each(|f| f.validate())
}

/// Loading matrix `Λ Q J` with `Q = diag(phi^nu)` and `J = diag(1/sigma)`.
pub fn assemble_a(lambda: &DMatrix<f64>, factors: &[MaternFactorParams]) -> Result<LoadingMatrix> {
    check_factors(lambda.ncols(), factors)?;
    let mut a = lambda.clone();
    for (j, f) in factors.iter().enumerate() {
        a.column_mut(j).scale_mut(f.q_scale() / f.sigma2.sqrt());
    }
    LoadingMatrix::new(a)
}

/// Inverse of [`assemble_a`]: `Λ = A J^-1 Q^-1`.
pub fn recover_lambda(a: &LoadingMatrix, factors: &[MaternFactorParams]) -> Result<DMatrix<f64>> {
    check_factors(a.k(), factors)?;
    let mut lambda = a.matrix().clone();
    for (j, f) in factors.iter().enumerate() {
        lambda.column_mut(j).scale_mut(f.sigma2.sqrt() / f.q_scale());
    }
    Ok(lambda)
}

/// Per-factor conditioning of one location on the reference points of its
/// cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteBasis {
    /// Reference node owning the location's cell.
    pub node: usize,
    /// Position among the node's own points if the location is one of them.
    pub coincident: Option<usize>,
    /// Conditional-mean coefficients per factor (empty when coincident).
    pub h: Vec<Vec<f64>>,
    /// Residual variance per factor (zero when coincident).
    pub r: Vec<f64>,
}

impl SiteBasis {
    pub fn k(&self) -> usize {
        self.r.len()
    }

    /// Conditional mean of each latent factor at the location.
    pub fn project(&self, mesh: &Mesh, field: &LatentField) -> Vec<f64> {
        let own = &mesh.dag.ref_nodes[self.node].points;
        (0..self.k())
            .map(|j| {
                let r = field.factor(j);
                match self.coincident {
                    Some(m) => r[own[m]],
                    None => self.h[j].iter().zip(own).map(|(h, &p)| h * r[p]).sum(),
                }
            })
            .collect()
    }

    /// Coefficient of own point `m` in the conditional mean of factor `j`.
    pub fn coef(&self, j: usize, m: usize) -> f64 {
        match self.coincident {
            Some(c) => f64::from(u8::from(c == m)),
            None => self.h[j][m],
        }
    }

    /// `Z = A H` (columns grouped by factor) and `Sigma = A diag(R) A^T`.
    pub fn projection(&self, a: &LoadingMatrix, n_own: usize) -> LocalProjection {
        let (q, k) = (a.q(), a.k());
        let z = DMatrix::from_fn(q, k * n_own, |i, c| {
            let (j, m) = (c / n_own, c % n_own);
            a.get(i, j) * self.coef(j, m)
        });
        let sigma = DMatrix::from_fn(q, q, |i, l| {
            (0..k).map(|j| a.get(i, j) * self.r[j] * a.get(l, j)).sum()
        });
        LocalProjection { z, sigma }
    }
}

/// `Z_l = A H_l` and `Sigma_l = A R_l A^T` for one location.
#[derive(Debug, Clone)]
pub struct LocalProjection {
    pub z: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
}

/// Factorized own-cell covariances per factor and prototype class, used to
/// condition arbitrary locations on the reference points of their cell.
#[derive(Debug, Clone)]
pub struct CellConditioners {
    per_factor: Vec<Vec<ParentFactor>>,
}

impl CellConditioners {
    pub fn new(mesh: &Mesh, factors: &[MaternFactorParams]) -> Result<Self> {
        let per_factor = factors
            .iter()
            .map(|f| Self::build_factor(mesh, f))
            .collect::<Result<_>>()?;
        Ok(Self { per_factor })
    }

    fn build_factor(mesh: &Mesh, params: &MaternFactorParams) -> Result<Vec<ParentFactor>> {
        let kernel = FactorKernel::new(params)?;
        mesh.prototypes
            .representatives
            .iter()
            .map(|&rep| {
                let pts = mesh.points_of(&mesh.dag.ref_nodes[rep].points);
                ParentFactor::new(kernel, pts).map_err(|e| e.at_node(rep))
            })
            .collect()
    }

    pub fn update_factor(&mut self, mesh: &Mesh, j: usize, params: &MaternFactorParams) -> Result<()> {
        self.per_factor[j] = Self::build_factor(mesh, params)?;
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.per_factor.len()
    }

    pub fn basis(&self, mesh: &Mesh, loc: &Point) -> Result<SiteBasis> {
        let node = mesh.ref_node_at(loc)?;
        let own = &mesh.dag.ref_nodes[node].points;
        let coincident = mesh
            .grid
            .coincident_point(loc)
            .and_then(|g| own.iter().position(|&p| p == g));
        let k = self.k();
        if coincident.is_some() {
            return Ok(SiteBasis {
                node,
                coincident,
                h: vec![Vec::new(); k],
                r: vec![0.0; k],
            });
        }
        let class = mesh.prototypes.class_of[node];
        let rep = mesh.prototypes.representatives[class];
        let anchor = mesh.grid.point(own[0]);
        let rep_anchor = mesh.grid.point(mesh.dag.ref_nodes[rep].points[0]);
        let moved = [
            loc[0] - anchor[0] + rep_anchor[0],
            loc[1] - anchor[1] + rep_anchor[1],
        ];
        let mut h = Vec::with_capacity(k);
        let mut r = Vec::with_capacity(k);
        for pf in &self.per_factor {
            let (hj, rj) = pf[class].condition_point(&moved);
            h.push(hj);
            r.push(rj);
        }
        Ok(SiteBasis {
            node,
            coincident: None,
            h,
            r,
        })
    }

    pub fn bases(&self, mesh: &Mesh, locs: &[Point], mode: ExecMode) -> Result<Vec<SiteBasis>> {
        try_map_range(mode, locs.len(), |i| self.basis(mesh, &locs[i]))
    }
}

/// Projection of a single location under the given loading and factors.
pub fn local_projection(
    loc: &Point,
    mesh: &Mesh,
    a: &LoadingMatrix,
    factors: &[MaternFactorParams],
) -> Result<LocalProjection> {
    check_factors(a.k(), factors)?;
    let basis = CellConditioners::new(mesh, factors)?.basis(mesh, loc)?;
    Ok(basis.projection(a, mesh.dag.ref_nodes[basis.node].points.len()))
}

/// Stacks a site's own-cell latent values in the factor-grouped order used
/// by [`LocalProjection::z`].
pub fn own_block(mesh: &Mesh, node: usize, field: &LatentField) -> DVector<f64> {
    let own = &mesh.dag.ref_nodes[node].points;
    let n = own.len();
    DVector::from_fn(field.k() * n, |c, _| field.factor(c / n)[own[c % n]])
}
