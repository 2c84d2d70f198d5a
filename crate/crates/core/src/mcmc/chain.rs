//! Storage of thinned posterior draws.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::coreg::{recover_lambda, LoadingMatrix};
use crate::density::LatentField;
use crate::error::{Error, Result};
use crate::kernels::MaternFactorParams;

/// Column layout of a stored draw: sampled parameters followed by derived
/// quantities (`lambda`, marginal variances, microergodic parameters).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainLayout {
    pub q: usize,
    pub k: usize,
    pub p: usize,
}

impl ChainLayout {
    fn free(&self) -> Vec<(usize, usize)> {
        (0..self.q)
            .flat_map(|i| (0..self.k.min(i + 1)).map(move |j| (i, j)))
            .collect()
    }

    pub fn columns(&self) -> Vec<String> {
        let mut c = Vec::new();
        for j in 0..self.q {
            for v in 0..self.p {
                c.push(format!("beta_{}_{}", j + 1, v + 1));
            }
        }
        let free = self.free();
        c.extend(free.iter().map(|(i, j)| format!("A_{}_{}", i + 1, j + 1)));
        c.extend((0..self.q).map(|i| format!("tau2_{}", i + 1)));
        c.extend((0..self.k).map(|j| format!("sigma2_{}", j + 1)));
        c.extend((0..self.k).map(|j| format!("phi_{}", j + 1)));
        c.extend((0..self.k).map(|j| format!("nu_{}", j + 1)));
        c.extend(free.iter().map(|(i, j)| format!("lambda_{}_{}", i + 1, j + 1)));
        c.extend((0..self.q).map(|i| format!("marginal_var_{}", i + 1)));
        c.extend((0..self.k).map(|j| format!("microergodic_{}", j + 1)));
        c
    }

    /// One row: sampled values and derived quantities.
    pub fn encode(
        &self,
        beta: &[f64],
        a: &LoadingMatrix,
        tau2: &[f64],
        factors: &[MaternFactorParams],
    ) -> Result<Vec<f64>> {
        let free = self.free();
        let lambda = recover_lambda(a, factors)?;
        let cov = &lambda * lambda.transpose();
        let mut row = Vec::with_capacity(self.columns().len());
        row.extend_from_slice(beta);
        row.extend(free.iter().map(|&(i, j)| a.get(i, j)));
        row.extend_from_slice(tau2);
        row.extend(factors.iter().map(|f| f.sigma2));
        row.extend(factors.iter().map(|f| f.phi));
        row.extend(factors.iter().map(|f| f.nu));
        row.extend(free.iter().map(|&(i, j)| lambda[(i, j)]));
        row.extend((0..self.q).map(|i| cov[(i, i)]));
        row.extend((0..self.k).map(|j| a.get(j, j).powi(2) * factors[j].sigma2));
        Ok(row)
    }

    pub fn decode(&self, row: &[f64]) -> Result<DrawParams> {
        let (q, k, p) = (self.q, self.k, self.p);
        let free = self.free();
        let mut at = 0;
        let mut take = |n: usize| {
            let s = &row[at..at + n];
            at += n;
            s
        };
        let beta = take(q * p).to_vec();
        let mut a = DMatrix::zeros(q, k);
        for (&(i, j), &v) in free.iter().zip(take(free.len())) {
            a[(i, j)] = v;
        }
        let tau2 = take(q).to_vec();
        let sigma2 = take(k).to_vec();
        let phi = take(k).to_vec();
        let nu = take(k).to_vec();
        let factors = (0..k)
            .map(|j| MaternFactorParams::new(sigma2[j], phi[j], nu[j]))
            .collect::<Result<_>>()?;
        Ok(DrawParams {
            beta,
            a: LoadingMatrix::new(a)?,
            tau2,
            factors,
        })
    }
}

/// Parameters of one stored draw.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawParams {
    pub beta: Vec<f64>,
    pub a: LoadingMatrix,
    pub tau2: Vec<f64>,
    pub factors: Vec<MaternFactorParams>,
}

/// Thinned draws of one chain.
#[derive(Debug, Clone, Default)]
pub struct ChainStore {
    pub layout: Option<ChainLayout>,
    pub draws: Vec<Vec<f64>>,
    /// Latent field per stored draw, when requested.
    pub latent: Vec<LatentField>,
    /// Acceptance rate per Metropolis block.
    pub acceptance: Vec<(String, f64)>,
    pub iterations: usize,
    pub seed: u64,
    /// Sampling wall time in seconds.
    pub wall_time: f64,
    /// Factorizations that needed diagonal jitter during the run.
    pub jitter_events: usize,
}

impl ChainStore {
    pub fn new(layout: ChainLayout, seed: u64) -> Self {
        Self {
            layout: Some(layout),
            seed,
            ..Default::default()
        }
    }

    pub fn n_draws(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn columns(&self) -> Vec<String> {
        self.layout.map(|l| l.columns()).unwrap_or_default()
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.columns().iter().position(|c| c == name)?;
        Some(self.draws.iter().map(|r| r[idx]).collect())
    }

    pub fn params(&self, t: usize) -> Result<DrawParams> {
        let layout = self
            .layout
            .ok_or_else(|| Error::invalid("chain store has no layout"))?;
        layout.decode(&self.draws[t])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_decode_round_trip() {
        let layout = ChainLayout { q: 2, k: 2, p: 1 };
        let a = LoadingMatrix::new(DMatrix::from_row_slice(2, 2, &[1.5, 0.0, -0.3, 0.7])).unwrap();
        let factors = vec![
            MaternFactorParams::new(2.0, 3.0, 0.5).unwrap(),
            MaternFactorParams::new(0.5, 7.0, 1.5).unwrap(),
        ];
        let row = layout.encode(&[0.1, 0.2], &a, &[0.3, 0.4], &factors).unwrap();
        assert_eq!(row.len(), layout.columns().len());
        let d = layout.decode(&row).unwrap();
        assert_eq!(d.a, a);
        assert_eq!(d.factors, factors);
        assert_eq!(d.beta, vec![0.1, 0.2]);
        let cols = layout.columns();
        let micro = row[cols.iter().position(|c| c == "microergodic_2").unwrap()];
        assert!((micro - 0.49 * 0.5).abs() < 1e-14);
    }
}
