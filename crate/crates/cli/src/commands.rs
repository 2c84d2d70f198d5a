use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use grips::diagnostics::{accuracy_metrics, prediction_metrics, PredictionMetrics};
use grips::mcmc::{run_baseline_latent, run_chain, ChainStore, ModelSpec};
use grips::predict::{latent_map, predict, PredictConfig, PredictionRequest, Predictions};
use grips::synth::{simulate_dataset, SimulationSpec};
use grips::{Domain, Mesh, ObservedData};
use log::info;
use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::json;

use crate::config::{self, BenchmarkConfig, FitConfig, Scenario, SimulateConfig, DEFAULT_BETA, DEFAULT_TAU2};
use crate::error::{model, CliError, Result};
use crate::io;
use crate::report::{summarize_chain, summarize_column};

/// Timings of the stages of one command, in seconds.
#[derive(Default)]
struct Clock {
    stages: BTreeMap<String, f64>,
}

impl Clock {
    fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let t = Instant::now();
        let out = f();
        *self.stages.entry(stage.to_string()).or_default() += t.elapsed().as_secs_f64();
        out
    }
}

fn base_dir(config_path: &Path) -> PathBuf {
    config_path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn output_dir(config_path: &Path, configured: &Path, over: Option<&Path>) -> Result<PathBuf> {
    let dir = match over {
        Some(d) => d.to_path_buf(),
        None => config::resolve(&base_dir(config_path), configured),
    };
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    Ok(dir)
}

pub fn threads_in_use() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

fn manifest(command: &str, config_path: &Path, seed: u64, config: &impl Serialize, clock: &Clock, outputs: &[&str]) -> serde_json::Value {
    json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "config_path": config_path.display().to_string(),
        "seed": seed,
        "threads": threads_in_use(),
        "parallel": cfg!(feature = "parallel"),
        "timings_s": clock.stages,
        "outputs": outputs,
        "config": config,
    })
}

/// Runs mesh construction, sampling, prediction and diagnostics, and writes
/// all artifacts. Returns the output directory.
pub fn fit(config_path: &Path, out_override: Option<&Path>) -> Result<PathBuf> {
    let cfg: FitConfig = config::load(config_path)?;
    cfg.validate()?;
    let base = base_dir(config_path);
    let out = output_dir(config_path, &cfg.output.dir, out_override)?;
    let mut clock = Clock::default();
    let total = Instant::now();
    let links = cfg.links();

    let train_path = config::resolve(&base, &cfg.data.train);
    let data = clock.time("load", || {
        let data = io::read_table(&train_path)?.into_data(&train_path)?;
        if data.q() != cfg.model.q {
            return Err(CliError::config(
                "model.q",
                format!("{} outcomes configured but {} has {}", cfg.model.q, train_path.display(), data.q()),
            ));
        }
        data.transformed(&links).map_err(|e| model("applying link transforms", e))
    })?;
    info!("read {} locations with {} covariates", data.n(), data.p());

    let mesh = clock.time("mesh", || {
        let domain = Domain::new(cfg.domain.bounds).map_err(|e| model("domain", e))?;
        Mesh::build(&domain, cfg.grid.n, cfg.partition.m, data.locations()).map_err(|e| model("building the mesh", e))
    })?;
    info!("mesh: {} reference nodes, {} colors", mesh.dag.n_ref(), mesh.coloring.n_colors());

    let spec = cfg.model_spec();
    let mut mcmc = cfg.mcmc.clone();
    mcmc.store_latent = cfg.data.predict.is_some() || cfg.grid.latent_map;
    let chain = clock.time("mcmc", || run_chain(&mesh, &data, &spec, &mcmc, None).map_err(|e| model("sampling", e)))?;
    info!("{} draws stored in {:.1}s", chain.n_draws(), chain.wall_time);

    let mut outputs = vec!["chain.csv", "diagnostics.csv", "diagnostics.json", "manifest.json"];
    io::write_chain(&out.join("chain.csv"), &chain)?;

    let pconf = PredictConfig {
        quantiles: cfg.output.quantiles.clone(),
        links: links.clone(),
        seed: cfg.mcmc.seed,
        exec: cfg.mcmc.exec,
    };
    let mut scores = Vec::new();
    if let Some(p) = &cfg.data.predict {
        let path = config::resolve(&base, p);
        let table = io::read_table(&path)?;
        if table.x.ncols() != data.p() {
            return Err(CliError::io(&path, format!("{} covariates, training data has {}", table.x.ncols(), data.p())));
        }
        let request = PredictionRequest {
            locations: table.locations.clone(),
            covariates: table.x.clone(),
            outcomes: Vec::new(),
        };
        let preds = clock.time("predict", || predict(&mesh, &chain, &request, &pconf).map_err(|e| model("predicting", e)))?;
        io::write_summaries(&out.join("predictions.csv"), &preds.summarize(&pconf.quantiles), &pconf.quantiles)?;
        outputs.push("predictions.csv");
        if table.y.ncols() == cfg.model.q {
            for j in 0..cfg.model.q {
                if let Some(m) = score(&preds, &table.y, j)? {
                    scores.push(json!({ "outcome": j + 1, "metrics": m }));
                }
            }
        }
    }
    if cfg.grid.latent_map {
        let map = clock.time("latent_map", || latent_map(&mesh, &chain, &pconf).map_err(|e| model("latent map", e)))?;
        io::write_summaries(&out.join("latent_grid.csv"), &map, &pconf.quantiles)?;
        outputs.push("latent_grid.csv");
    }

    let params = summarize_chain(&chain);
    io::write_rows(&out.join("diagnostics.csv"), &params)?;
    io::write_json(
        &out.join("diagnostics.json"),
        &json!({
            "wall_time_s": chain.wall_time,
            "iterations": chain.iterations,
            "stored_draws": chain.n_draws(),
            "acceptance": chain.acceptance,
            "jitter_events": chain.jitter_events,
            "parameters": params,
            "prediction": scores,
        }),
    )?;
    clock.stages.insert("total".into(), total.elapsed().as_secs_f64());
    io::write_json(&out.join("manifest.json"), &manifest("fit", config_path, cfg.mcmc.seed, &cfg, &clock, &outputs))?;
    Ok(out)
}

/// Scores the predictions of outcome `j` against the observed values.
fn score(preds: &Predictions, y: &DMatrix<f64>, j: usize) -> Result<Option<PredictionMetrics>> {
    let pos = preds.outcomes.iter().position(|&o| o == j).expect("all outcomes predicted");
    let (mut truth, mut samples) = (Vec::new(), Vec::new());
    for i in 0..y.nrows() {
        if !y[(i, j)].is_nan() {
            truth.push(y[(i, j)]);
            samples.push(preds.samples_at(i, pos));
        }
    }
    if truth.is_empty() || samples[0].len() < 2 {
        return Ok(None);
    }
    prediction_metrics(&truth, &samples).map(Some).map_err(|e| model("scoring predictions", e))
}

pub fn simulate(config_path: &Path, out_override: Option<&Path>) -> Result<PathBuf> {
    let cfg: SimulateConfig = config::load(config_path)?;
    cfg.validate()?;
    let out = output_dir(config_path, &cfg.output.dir, out_override)?;
    let s = &cfg.simulation;
    let (q, k) = (s.lambda.len(), s.lambda[0].len());
    let mut defaults = Vec::new();
    let tau2 = s.tau2.clone().unwrap_or_else(|| {
        defaults.push("tau2");
        vec![DEFAULT_TAU2; q]
    });
    let beta = s.beta.clone().unwrap_or_else(|| {
        defaults.push("beta");
        DEFAULT_BETA.repeat(q)
    });
    let spec = SimulationSpec {
        n_train: s.n_train,
        grid_side: s.grid_side,
        layout: s.layout,
        lambda: DMatrix::from_fn(q, k, |i, j| s.lambda[i][j]),
        phi: s.phi.clone(),
        nu: s.nu.clone(),
        tau2,
        beta,
        missing: s.missing,
        seed: s.seed,
    };
    let mut clock = Clock::default();
    let ds = clock.time("simulate", || simulate_dataset(&spec).map_err(|e| model("simulating", e)))?;
    io::write_data(&out.join("train.csv"), &ds.train)?;
    io::write_data(&out.join("test.csv"), &ds.test)?;
    io::write_json(
        &out.join("truth.json"),
        &json!({
            "truth": ds.truth,
            "configuration_defaults": defaults,
            "note": if defaults.is_empty() { "" } else { "listed values were not configured; they are defaults of this tool, not estimates" },
        }),
    )?;
    let outputs = ["train.csv", "test.csv", "truth.json", "manifest.json"];
    io::write_json(&out.join("manifest.json"), &manifest("simulate", config_path, s.seed, &cfg, &clock, &outputs))?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Grips,
    Baseline,
}

/// One row of the efficiency table.
#[derive(Debug, Clone, Serialize)]
pub struct EfficiencyRow {
    pub scenario: String,
    pub seed: u64,
    pub method: Method,
    pub wall_time_s: f64,
    pub ess_sigma2: Option<f64>,
    pub ess_per_s_sigma2: Option<f64>,
    pub relative_sigma2: Option<f64>,
    pub ess_phi: Option<f64>,
    pub ess_per_s_phi: Option<f64>,
    pub relative_phi: Option<f64>,
    pub ess_tau2: Option<f64>,
    pub ess_per_s_tau2: Option<f64>,
    pub relative_tau2: Option<f64>,
    pub rmspe: f64,
    pub crps: f64,
    pub coverage: f64,
}

/// Estimation accuracy of one parameter across seeds.
#[derive(Debug, Clone, Serialize)]
pub struct AccuracyRow {
    pub scenario: String,
    pub method: Method,
    pub parameter: String,
    pub truth: f64,
    pub rmse: f64,
    pub mpe: f64,
    pub coverage: f64,
}

/// Benchmarked parameters: report label, chain column, true value.
fn tracked(s: &Scenario) -> [(&'static str, &'static str, f64); 3] {
    [
        ("sigma2", "marginal_var_1", s.sigma2),
        ("phi", "phi_1", s.phi),
        ("tau2", "tau2_1", s.tau2.unwrap_or(DEFAULT_TAU2)),
    ]
}

type Estimate = (f64, (f64, f64));

struct MethodRun {
    chain: ChainStore,
    metrics: PredictionMetrics,
}

fn run_method(method: Method, mesh: &Mesh, train: &ObservedData, test: &ObservedData, spec: &ModelSpec, cfg: &BenchmarkConfig, seed: u64) -> Result<MethodRun> {
    let mut mcmc = cfg.benchmark.mcmc.clone();
    mcmc.seed = seed;
    mcmc.store_latent = true;
    let chain = match method {
        Method::Grips => run_chain(mesh, train, spec, &mcmc, None),
        Method::Baseline => run_baseline_latent(mesh, train, spec, &mcmc),
    }
    .map_err(|e| model(&format!("{method:?} sampler, seed {seed}"), e))?;
    let request = PredictionRequest {
        locations: test.locations().to_vec(),
        covariates: test.covariates().clone(),
        outcomes: vec![0],
    };
    let pc = PredictConfig { seed, exec: mcmc.exec, ..Default::default() };
    let preds = predict(mesh, &chain, &request, &pc).map_err(|e| model("predicting", e))?;
    let metrics = score(&preds, test.outcomes(), 0)?.ok_or_else(|| CliError::Numerical("no test values to score".into()))?;
    Ok(MethodRun { chain, metrics })
}

/// Runs both samplers on every scenario and seed. Returns the output
/// directory.
pub fn benchmark(config_path: &Path, out_override: Option<&Path>) -> Result<PathBuf> {
    let cfg: BenchmarkConfig = config::load(config_path)?;
    cfg.validate()?;
    let out = output_dir(config_path, &cfg.output.dir, out_override)?;
    let mut clock = Clock::default();
    let (mut eff, mut acc) = (Vec::new(), Vec::new());
    let methods = [Method::Grips, Method::Baseline];
    for sc in &cfg.scenarios {
        // (method, parameter) -> (posterior mean, 95% interval) per seed
        let mut estimates: BTreeMap<(usize, usize), Vec<Estimate>> = BTreeMap::new();
        for &seed in &cfg.benchmark.seeds {
            let mut sim = SimulationSpec::univariate(sc.n_train, sc.grid_side, sc.sigma2, sc.phi, sc.nu, seed);
            sim.layout = sc.layout;
            sim.tau2 = vec![sc.tau2.unwrap_or(DEFAULT_TAU2)];
            sim.beta = sc.beta.unwrap_or(DEFAULT_BETA).to_vec();
            let ds = clock.time("simulate", || simulate_dataset(&sim).map_err(|e| model("simulating", e)))?;
            let m = sc.partition.unwrap_or([(sc.grid_side / 4).max(1); 2]);
            let mesh = Mesh::build(&Domain::unit_square(), [sc.grid_side; 2], m, ds.train.locations())
                .map_err(|e| model("building the mesh", e))?;
            let spec = ModelSpec { priors: cfg.benchmark.priors.clone(), ..ModelSpec::univariate(sc.nu) };
            let mut rows = Vec::new();
            for (mi, &method) in methods.iter().enumerate() {
                info!("scenario {}, seed {seed}: {method:?}", sc.name);
                let run = clock.time("sampling", || run_method(method, &mesh, &ds.train, &ds.test, &spec, &cfg, seed))?;
                let summaries: Vec<_> = tracked(sc)
                    .iter()
                    .map(|(_, col, _)| summarize_column(col, &run.chain.column(col).unwrap(), run.chain.wall_time))
                    .collect();
                for (pi, s) in summaries.iter().enumerate() {
                    estimates.entry((mi, pi)).or_default().push((s.mean, (s.q_lo, s.q_hi)));
                }
                rows.push((method, run, summaries));
            }
            let base_rate: Vec<Option<f64>> = rows[1].2.iter().map(|s| s.ess_per_s).collect();
            for (method, run, s) in rows {
                let rel = |i: usize| Some(s[i].ess_per_s? / base_rate[i]?);
                eff.push(EfficiencyRow {
                    scenario: sc.name.clone(),
                    seed,
                    method,
                    wall_time_s: run.chain.wall_time,
                    ess_sigma2: s[0].ess,
                    ess_per_s_sigma2: s[0].ess_per_s,
                    relative_sigma2: rel(0),
                    ess_phi: s[1].ess,
                    ess_per_s_phi: s[1].ess_per_s,
                    relative_phi: rel(1),
                    ess_tau2: s[2].ess,
                    ess_per_s_tau2: s[2].ess_per_s,
                    relative_tau2: rel(2),
                    rmspe: run.metrics.rmspe,
                    crps: run.metrics.crps,
                    coverage: run.metrics.coverage,
                });
            }
        }
        for ((mi, pi), est) in estimates {
            let (label, _, truth) = tracked(sc)[pi];
            let truths = vec![truth; est.len()];
            let means: Vec<f64> = est.iter().map(|e| e.0).collect();
            let ints: Vec<(f64, f64)> = est.iter().map(|e| e.1).collect();
            let a = accuracy_metrics(&truths, &means, &ints).map_err(|e| model("accuracy", e))?;
            acc.push(AccuracyRow {
                scenario: sc.name.clone(),
                method: methods[mi],
                parameter: label.to_string(),
                truth,
                rmse: a.rmse,
                mpe: a.mpe,
                coverage: a.coverage,
            });
        }
    }
    io::write_rows(&out.join("efficiency.csv"), &eff)?;
    io::write_rows(&out.join("accuracy.csv"), &acc)?;
    let defaults: Vec<_> = cfg
        .scenarios
        .iter()
        .filter(|s| s.tau2.is_none() || s.beta.is_none())
        .map(|s| s.name.clone())
        .collect();
    io::write_json(
        &out.join("benchmark.json"),
        &json!({
            "efficiency": eff,
            "accuracy": acc,
            "scenarios_using_default_tau2_or_beta": defaults,
            "defaults": { "tau2": DEFAULT_TAU2, "beta": DEFAULT_BETA },
        }),
    )?;
    let outputs = ["efficiency.csv", "accuracy.csv", "benchmark.json", "manifest.json"];
    let seed = cfg.benchmark.seeds[0];
    io::write_json(&out.join("manifest.json"), &manifest("benchmark", config_path, seed, &cfg, &clock, &outputs))?;
    Ok(out)
}

/// Builds the global worker pool.
pub fn configure_threads(threads: Option<usize>) {
    #[cfg(feature = "parallel")]
    if let Some(n) = threads {
        if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            log::warn!("thread pool already initialized; ignoring threads = {n}");
        }
    }
    #[cfg(not(feature = "parallel"))]
    if threads.is_some_and(|n| n > 1) {
        log::warn!("built without parallel support; running on one thread");
    }
}

/// Reads only the `threads` key, so the pool is sized before any work.
pub fn configured_threads(config_path: &Path) -> Option<usize> {
    #[derive(serde::Deserialize)]
    struct Threads {
        threads: Option<usize>,
    }
    let text = std::fs::read_to_string(config_path).ok()?;
    toml::from_str::<Threads>(&text).ok()?.threads
}

