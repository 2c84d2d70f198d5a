mod common;

use common::{dense_latent_model, random_data, unit_mesh};
use grips::mcmc::{
    run_baseline_latent, run_chain, GripsSampler, LoadingUpdate, McmcConfig, ModelSpec, ModelState, Schedule,
};
use grips::{assemble_a, recover_lambda, Error, ExecMode, LatentField, LoadingMatrix, MaternFactorParams};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn bivariate_state(mesh: &grips::Mesh, p: usize, seed: u64) -> ModelState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = mesh.grid.len();
    let factors = vec![
        MaternFactorParams::new(1.3, 3.0, 0.5).unwrap(),
        MaternFactorParams::new(0.7, 6.0, 1.5).unwrap(),
    ];
    ModelState {
        field: LatentField::from_factors((0..2).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect())
            .unwrap(),
        beta: (0..2 * p).map(|_| rng.random_range(-1.0..1.0)).collect(),
        a: LoadingMatrix::new(DMatrix::from_row_slice(2, 2, &[1.2, 0.0, -0.4, 0.8])).unwrap(),
        tau2: vec![0.3, 0.5],
        factors,
    }
}

fn spec2() -> ModelSpec {
    ModelSpec {
        q: 2,
        k: 2,
        nu: vec![0.5, 1.5],
        priors: Default::default(),
        phi_init: None,
    }
}

#[test]
fn latent_full_conditional_matches_dense_joint() {
    let data = random_data(40, 2, 2, 0.2, 3);
    let mesh = unit_mesh(6, 3, &data);
    let spec = spec2();
    let state = bivariate_state(&mesh, 2, 8);
    let sampler = GripsSampler::new(&mesh, &data, &spec, McmcConfig::default(), state.clone()).unwrap();
    let dense = dense_latent_model(&mesh, &data, &state.beta, &state.a, &state.tau2, &state.factors);
    let ns = mesh.grid.len();
    let r_all = DVector::from_iterator(2 * ns, (0..2).flat_map(|j| state.field.factor(j).to_vec()));
    for node in 0..mesh.dag.n_ref() {
        let pts = &mesh.dag.ref_nodes[node].points;
        let blk: Vec<usize> = (0..2).flat_map(|j| pts.iter().map(move |&p| j * ns + p)).collect();
        let (prec, lin) = sampler.latent_full_conditional(node).unwrap();
        let mut r_rest = r_all.clone();
        for &b in &blk {
            r_rest[b] = 0.0;
        }
        let coupled = &dense.precision * &r_rest;
        for (x, &bx) in blk.iter().enumerate() {
            let expected_lin = dense.linear[bx] - coupled[bx];
            assert!((lin[x] - expected_lin).abs() < 1e-8, "node {node}: {} vs {expected_lin}", lin[x]);
            for (y, &by) in blk.iter().enumerate() {
                assert!((prec[(x, y)] - dense.precision[(bx, by)]).abs() < 1e-8, "node {node}");
            }
        }
    }
}

#[test]
fn beta_full_conditional_matches_dense_regression() {
    let data = random_data(30, 2, 2, 0.25, 5);
    let mesh = unit_mesh(5, 2, &data);
    let spec = spec2();
    let state = bivariate_state(&mesh, 2, 2);
    let sampler = GripsSampler::new(&mesh, &data, &spec, McmcConfig::default(), state.clone()).unwrap();
    let (prec, lin) = sampler.beta_full_conditional().unwrap();
    // stack every observed value into one generalized least-squares problem
    let mut rows = Vec::new();
    for s in 0..data.n() {
        for &j in data.observed(s) {
            rows.push((s, j));
        }
    }
    let m = rows.len();
    let mut xs = DMatrix::zeros(m, 4);
    let mut resid = DVector::zeros(m);
    let mut cov = DMatrix::zeros(m, m);
    let site_rows: Vec<Vec<(DVector<f64>, f64)>> = (0..data.n())
        .map(|s| state.factors.iter().map(|f| common::site_row(&mesh, &data.locations()[s], f)).collect())
        .collect();
    for (x, &(s, j)) in rows.iter().enumerate() {
        for c in 0..2 {
            xs[(x, j * 2 + c)] = data.covariates()[(s, c)];
        }
        let latent: f64 = (0..2)
            .map(|f| state.a.get(j, f) * site_rows[s][f].0.dot(&DVector::from_column_slice(state.field.factor(f))))
            .sum();
        resid[x] = data.value(s, j).unwrap() - latent;
        for (y, &(s2, j2)) in rows.iter().enumerate() {
            if s2 == s {
                cov[(x, y)] = (0..2).map(|f| state.a.get(j, f) * site_rows[s][f].1 * state.a.get(j2, f)).sum::<f64>()
                    + if j == j2 { state.tau2[j] } else { 0.0 };
            }
        }
    }
    let w = cov.try_inverse().unwrap();
    let expected_prec = DMatrix::identity(4, 4) / 100.0 + xs.transpose() * &w * &xs;
    let expected_lin = xs.transpose() * &w * resid;
    assert!((prec - expected_prec).amax() < 1e-9);
    assert!((lin - expected_lin).amax() < 1e-9);
}

fn small_config(iterations: usize, burn_in: usize, exec: ExecMode) -> McmcConfig {
    McmcConfig {
        iterations,
        burn_in,
        seed: 42,
        exec,
        ..Default::default()
    }
}

#[test]
fn sequential_and_parallel_chains_are_bitwise_identical() {
    let data = random_data(60, 2, 2, 0.1, 9);
    let mesh = unit_mesh(8, 4, &data);
    let spec = spec2();
    let a = run_chain(&mesh, &data, &spec, &small_config(40, 10, ExecMode::Sequential), None).unwrap();
    let b = run_chain(&mesh, &data, &spec, &small_config(40, 10, ExecMode::Parallel), None).unwrap();
    assert_eq!(a.n_draws(), 30);
    assert_eq!(a.draws, b.draws);
    assert_eq!(a.latent, b.latent);
}

#[test]
fn same_seed_reproduces_the_chain() {
    let data = random_data(40, 1, 2, 0.0, 4);
    let mesh = unit_mesh(6, 3, &data);
    let spec = ModelSpec::univariate(0.5);
    let cfg = small_config(30, 0, ExecMode::Parallel);
    let a = run_chain(&mesh, &data, &spec, &cfg, None).unwrap();
    let b = run_chain(&mesh, &data, &spec, &cfg, None).unwrap();
    assert_eq!(a.draws, b.draws);
    let other = run_chain(&mesh, &data, &spec, &McmcConfig { seed: 43, ..cfg }, None).unwrap();
    assert_ne!(a.draws, other.draws);
}

#[test]
fn burn_in_covering_the_run_gives_an_empty_store() {
    let data = random_data(20, 1, 1, 0.0, 1);
    let mesh = unit_mesh(4, 2, &data);
    let store = run_chain(&mesh, &data, &ModelSpec::univariate(0.5), &small_config(5, 5, ExecMode::Parallel), None).unwrap();
    assert!(store.is_empty());
    assert_eq!(store.iterations, 5);
}

#[test]
fn stored_draws_stay_positive_and_round_trip_lambda() {
    let data = random_data(50, 2, 2, 0.15, 12);
    let mesh = unit_mesh(6, 3, &data);
    let store = run_chain(&mesh, &data, &spec2(), &small_config(60, 20, ExecMode::Parallel), None).unwrap();
    for t in 0..store.n_draws() {
        let d = store.params(t).unwrap();
        assert!(d.tau2.iter().all(|v| *v > 0.0));
        assert!(d.factors.iter().all(|f| f.sigma2 > 0.0 && f.phi > 0.0));
        assert!((0..2).all(|j| d.a.get(j, j) > 0.0));
        let lambda = recover_lambda(&d.a, &d.factors).unwrap();
        let back = assemble_a(&lambda, &d.factors).unwrap();
        assert!((back.matrix() - d.a.matrix()).amax() < 1e-12);
    }
    for name in ["lambda_2_1", "marginal_var_1", "microergodic_2", "A_2_1", "tau2_2", "beta_2_2"] {
        assert!(store.column(name).is_some(), "{name}");
    }
}

#[test]
fn conjugate_update_refuses_off_grid_observations() {
    let data = random_data(20, 1, 1, 0.0, 2);
    let mesh = unit_mesh(4, 2, &data);
    let mut cfg = small_config(3, 0, ExecMode::Parallel);
    cfg.schedule = Schedule {
        loading_update: LoadingUpdate::Conjugate,
        ..Default::default()
    };
    let err = run_chain(&mesh, &data, &ModelSpec::univariate(0.5), &cfg, None).unwrap_err();
    match err {
        Error::Iteration { iteration, source } => {
            assert_eq!(iteration, 0);
            assert!(matches!(*source, Error::Contract(_)));
        }
        other => panic!("unexpected error {other:?}"),
    }
}

#[test]
fn baseline_requires_a_single_outcome_and_is_deterministic() {
    let data = random_data(30, 2, 1, 0.0, 2);
    let mesh = unit_mesh(5, 2, &data);
    assert!(matches!(
        run_baseline_latent(&mesh, &data, &spec2(), &small_config(2, 0, ExecMode::Parallel)),
        Err(Error::Contract(_))
    ));
    let data = random_data(30, 1, 2, 0.0, 2);
    let mesh = unit_mesh(5, 2, &data);
    let spec = ModelSpec::univariate(0.5);
    let a = run_baseline_latent(&mesh, &data, &spec, &small_config(20, 5, ExecMode::Sequential)).unwrap();
    let b = run_baseline_latent(&mesh, &data, &spec, &small_config(20, 5, ExecMode::Parallel)).unwrap();
    assert_eq!(a.n_draws(), 15);
    assert_eq!(a.draws, b.draws);
}

/// Posterior mean of the latent process averaged over the reference grid.
fn mean_latent_level(store: &grips::mcmc::ChainStore) -> Vec<f64> {
    (0..store.n_draws())
        .map(|t| {
            let a = store.params(t).unwrap().a.get(0, 0);
            let r = store.latent[t].factor(0);
            a * r.iter().sum::<f64>() / r.len() as f64
        })
        .collect()
}

#[test]
fn baseline_and_blocked_sampler_agree_on_a_tiny_dataset() {
    let data = random_data(40, 1, 1, 0.0, 21);
    let mesh = unit_mesh(6, 2, &data);
    let spec = ModelSpec::univariate(0.5);
    let cfg = small_config(6000, 1000, ExecMode::Parallel);
    let g = run_chain(&mesh, &data, &spec, &cfg, None).unwrap();
    let b = run_baseline_latent(&mesh, &data, &spec, &cfg).unwrap();
    let check = |x: &[f64], y: &[f64], what: &str| {
        let mx = x.iter().sum::<f64>() / x.len() as f64;
        let my = y.iter().sum::<f64>() / y.len() as f64;
        let se = (grips::diagnostics::mcse(x).unwrap().powi(2) + grips::diagnostics::mcse(y).unwrap().powi(2)).sqrt();
        assert!((mx - my).abs() < 4.0 * se, "{what}: {mx} vs {my} (se {se})");
    };
    check(&mean_latent_level(&g), &mean_latent_level(&b), "latent level");
    check(&g.column("tau2_1").unwrap(), &b.column("tau2_1").unwrap(), "noise");
    check(&g.column("beta_1_1").unwrap(), &b.column("beta_1_1").unwrap(), "intercept");
}
