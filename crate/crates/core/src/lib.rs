//! Bayesian multivariate spatial regression with meshed Gaussian processes
//! on gridded reference sets.
//!
//! The latent process is represented on a regular grid of reference
//! locations and factorized along a directed acyclic graph built from an
//! axis-parallel tessellation of the domain. Observations anywhere in the
//! domain are linked to the grid by conditioning on the reference points of
//! their cell. Matérn factors are combined through a loading matrix whose
//! diagonal carries the microergodic scale and whose variance is split with
//! the latent factors, which keeps the covariance parameters well mixed in
//! MCMC.

pub mod coreg;
pub mod data;
pub mod density;
pub mod diagnostics;
pub mod error;
pub mod exec;
pub mod geometry;
pub mod kernels;
pub mod linalg;
pub mod mcmc;
pub mod predict;
pub mod synth;

pub use coreg::{assemble_a, recover_lambda, LoadingMatrix};
pub use data::{LinkTransform, ObservedData};
pub use density::LatentField;
pub use error::{Error, Result};
pub use exec::ExecMode;
pub use geometry::{Domain, Mesh, Point};
pub use kernels::MaternFactorParams;
