mod common;

use common::{random_data, site_row, unit_mesh};
use grips::coreg::LoadingMatrix;
use grips::density::LatentField;
use grips::mcmc::{ChainLayout, ChainStore};
use grips::predict::{latent_map, predict, PredictConfig, PredictionRequest};
use grips::{Error, ExecMode, LinkTransform, MaternFactorParams, Mesh, Point};
use nalgebra::DMatrix;

struct Fixed {
    mesh: Mesh,
    chain: ChainStore,
    beta: Vec<f64>,
    a: f64,
    tau2: f64,
    factor: MaternFactorParams,
}

/// A chain that repeats one parameter draw and one latent field.
fn constant_chain(n_draws: usize, tau2: f64) -> Fixed {
    let data = random_data(20, 1, 2, 0.0, 11);
    let mesh = unit_mesh(6, 3, &data);
    let factor = MaternFactorParams::new(1.5, 3.0, 0.5).unwrap();
    let a = 0.8;
    let beta = vec![0.5, -1.0];
    let layout = ChainLayout { q: 1, k: 1, p: 2 };
    let loading = LoadingMatrix::new(DMatrix::from_element(1, 1, a)).unwrap();
    let row = layout.encode(&beta, &loading, &[tau2], &[factor]).unwrap();
    let field: Vec<f64> = (0..mesh.grid.len()).map(|i| (i as f64 * 0.37).sin()).collect();
    let latent = LatentField::from_factors(vec![field]).unwrap();
    let mut chain = ChainStore::new(layout, 1);
    chain.draws = vec![row; n_draws];
    chain.latent = vec![latent; n_draws];
    Fixed { mesh, chain, beta, a, tau2, factor }
}

fn request(locs: Vec<Point>, x1: f64) -> PredictionRequest {
    let n = locs.len();
    PredictionRequest {
        locations: locs,
        covariates: DMatrix::from_fn(n, 2, |_, c| if c == 0 { 1.0 } else { x1 }),
        outcomes: vec![],
    }
}

fn mean_var(s: &[f64]) -> (f64, f64) {
    let n = s.len() as f64;
    let m = s.iter().sum::<f64>() / n;
    (m, s.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0))
}

#[test]
fn reference_point_with_negligible_noise_collapses() {
    let f = constant_chain(50, 1e-12);
    let pt = f.mesh.grid.point(14);
    let preds = predict(&f.mesh, &f.chain, &request(vec![pt], 2.0), &PredictConfig::default()).unwrap();
    let expect = f.beta[0] + 2.0 * f.beta[1] + f.a * f.chain.latent[0].factor(0)[14];
    for y in preds.samples_at(0, 0) {
        assert!((y - expect).abs() < 1e-5, "{y} vs {expect}");
    }
}

#[test]
fn off_grid_moments_match_conditional() {
    let f = constant_chain(20_000, 0.1);
    let loc = [0.41, 0.63];
    let preds = predict(&f.mesh, &f.chain, &request(vec![loc], 0.0), &PredictConfig::default()).unwrap();
    let (row, r) = site_row(&f.mesh, &loc, &f.factor);
    let u: f64 = row.iter().zip(f.chain.latent[0].factor(0)).map(|(h, w)| h * w).sum();
    let expect_mean = f.beta[0] + f.a * u;
    let expect_var = f.tau2 + f.a * f.a * r;
    let (m, v) = mean_var(preds.samples_at(0, 0));
    assert!((m - expect_mean).abs() < 4.0 * (expect_var / 20_000.0).sqrt());
    assert!((v / expect_var - 1.0).abs() < 0.05, "{v} vs {expect_var}");
}

#[test]
fn quantiles_are_ordered_and_bracket_mean() {
    let f = constant_chain(400, 0.2);
    let locs = vec![[0.1, 0.1], [0.5, 0.5], [0.95, 0.2]];
    let config = PredictConfig { quantiles: vec![0.025, 0.25, 0.5, 0.75, 0.975], ..Default::default() };
    let s = predict(&f.mesh, &f.chain, &request(locs, 1.0), &config).unwrap().summarize(&config.quantiles);
    assert_eq!(s.len(), 3);
    for sm in s {
        assert!(sm.quantiles.windows(2).all(|w| w[0] <= w[1]));
        assert!(sm.quantiles[0] < sm.mean && sm.mean < sm.quantiles[4]);
    }
}

#[test]
fn log_link_gives_positive_samples() {
    let f = constant_chain(200, 0.3);
    let config = PredictConfig { links: vec![LinkTransform::Log], ..Default::default() };
    let p = predict(&f.mesh, &f.chain, &request(vec![[0.3, 0.7]], 0.0), &config).unwrap();
    assert!(p.samples_at(0, 0).iter().all(|&v| v > 0.0));
}

#[test]
fn latent_map_of_constant_chain_is_exact() {
    let f = constant_chain(10, 0.1);
    let map = latent_map(&f.mesh, &f.chain, &PredictConfig::default()).unwrap();
    assert_eq!(map.len(), f.mesh.grid.len());
    for (i, sm) in map.iter().enumerate() {
        let v = f.a * f.chain.latent[0].factor(0)[i];
        assert!((sm.mean - v).abs() < 1e-12);
        assert!(sm.quantiles.iter().all(|q| (q - v).abs() < 1e-12));
        assert_eq!(sm.location, f.mesh.grid.point(i));
    }
}

#[test]
fn execution_modes_agree() {
    let f = constant_chain(30, 0.1);
    let locs: Vec<Point> = (0..25).map(|i| [0.03 + 0.038 * i as f64, 0.9 - 0.03 * i as f64]).collect();
    let run = |exec| {
        let config = PredictConfig { exec, ..Default::default() };
        predict(&f.mesh, &f.chain, &request(locs.clone(), 0.5), &config).unwrap().samples
    };
    assert_eq!(run(ExecMode::Sequential), run(ExecMode::Parallel));
}

#[test]
fn rejects_bad_requests() {
    let f = constant_chain(5, 0.1);
    let cfg = PredictConfig::default();
    assert!(matches!(
        predict(&f.mesh, &f.chain, &request(vec![[1.5, 0.5]], 0.0), &cfg),
        Err(Error::OutOfDomain { .. })
    ));
    let mut bad = request(vec![[0.5, 0.5]], 0.0);
    bad.outcomes = vec![3];
    assert!(predict(&f.mesh, &f.chain, &bad, &cfg).is_err());
    let mut no_latent = f.chain.clone();
    no_latent.latent.clear();
    assert!(predict(&f.mesh, &no_latent, &request(vec![[0.5, 0.5]], 0.0), &cfg).is_err());
    let bad_q = PredictConfig { quantiles: vec![1.2], ..Default::default() };
    assert!(latent_map(&f.mesh, &f.chain, &bad_q).is_err());
}
