//! Small dense linear-algebra helpers built on nalgebra.

use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type Chol = Cholesky<f64, Dyn>;

static JITTER_EVENTS: AtomicUsize = AtomicUsize::new(0);

/// Relative jitter levels (times mean diagonal) tried after a plain
/// factorization fails.
const JITTER_LEVELS: [f64; 3] = [1e-10, 1e-8, 1e-6];

/// Number of factorizations that needed diagonal jitter so far.
pub fn jitter_events() -> usize {
    JITTER_EVENTS.load(Ordering::Relaxed)
}

/// Cholesky factorization of a symmetric positive-definite matrix.
///
/// Tries the matrix as given first; on failure adds `level * trace / n` to
/// the diagonal for increasing levels and logs the event.
pub fn spd_cholesky(m: DMatrix<f64>, what: &'static str) -> Result<Chol> {
    let n = m.nrows();
    if n == 0 {
        return Cholesky::new(m).ok_or_else(|| Error::singular(what));
    }
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok(c);
    }
    let scale = m.trace() / n as f64;
    if !scale.is_finite() || scale <= 0.0 {
        return Err(Error::singular(what));
    }
    for level in JITTER_LEVELS {
        let jitter = level * scale;
        let mut jittered = m.clone();
        for i in 0..n {
            jittered[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(jittered) {
            JITTER_EVENTS.fetch_add(1, Ordering::Relaxed);
            log::warn!("{what}: added diagonal jitter {jitter:.3e} to factorize");
            return Ok(c);
        }
    }
    Err(Error::singular(what))
}

pub fn chol_logdet(c: &Chol) -> f64 {
    let l = c.l_dirty();
    (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0
}

/// vᵀ A⁻¹ v for A = L Lᵀ.
pub fn inv_quad_form(c: &Chol, v: &DVector<f64>) -> f64 {
    let z = c
        .l_dirty()
        .solve_lower_triangular(v)
        .expect("cholesky factor has a positive diagonal");
    z.norm_squared()
}

/// Symmetric part, in place.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub fn standard_normals<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// Draws from N(P⁻¹ b, P⁻¹) given the precision P and linear term b.
pub fn sample_from_precision<R: Rng + ?Sized>(
    precision: DMatrix<f64>,
    linear: &DVector<f64>,
    rng: &mut R,
    what: &'static str,
) -> Result<DVector<f64>> {
    let chol = spd_cholesky(precision, what)?;
    let mean = chol.solve(linear);
    let z = standard_normals(rng, linear.len());
    let dev = chol
        .l_dirty()
        .tr_solve_lower_triangular(&z)
        .ok_or_else(|| Error::singular(what))?;
    Ok(mean + dev)
}

/// Posterior mean and covariance for the same Gaussian (no draw).
pub fn moments_from_precision(
    precision: DMatrix<f64>,
    linear: &DVector<f64>,
    what: &'static str,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let chol = spd_cholesky(precision, what)?;
    Ok((chol.solve(linear), chol.inverse()))
}
