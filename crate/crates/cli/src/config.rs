//! TOML configuration of the three subcommands.

use std::path::{Path, PathBuf};

use grips::mcmc::{McmcConfig, ModelSpec, Priors};
use grips::synth::SimLayout;
use grips::{Domain, LinkTransform};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    /// Worker threads; all cores when unset.
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub domain: DomainSection,
    pub grid: GridSection,
    pub partition: PartitionSection,
    pub model: ModelSection,
    #[serde(default)]
    pub priors: Priors,
    #[serde(default)]
    pub mcmc: McmcConfig,
    pub data: DataSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSection {
    /// `[[lon_min, lon_max], [lat_min, lat_max]]`.
    pub bounds: [[f64; 2]; 2],
}

impl Default for DomainSection {
    fn default() -> Self {
        Self { bounds: [[0.0, 1.0], [0.0, 1.0]] }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    /// Reference points per axis.
    pub n: [usize; 2],
    /// Also export posterior summaries of the latent process on the grid.
    #[serde(default)]
    pub latent_map: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSection {
    /// Cells per axis.
    pub m: [usize; 2],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub q: usize,
    pub k: usize,
    pub nu: Vec<f64>,
    /// One per outcome; identity when empty.
    #[serde(default)]
    pub links: Vec<LinkTransform>,
    #[serde(default)]
    pub phi_init: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub train: PathBuf,
    /// Locations and covariates to predict at. Outcome columns, when
    /// present, are used to score the predictions.
    #[serde(default)]
    pub predict: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub quantiles: Vec<f64>,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("grips-out"),
            quantiles: vec![0.025, 0.975],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub simulation: SimulationSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    pub n_train: usize,
    pub grid_side: usize,
    #[serde(default)]
    pub layout: SimLayout,
    /// Rows of the q x k cross-covariance factor.
    pub lambda: Vec<Vec<f64>>,
    pub phi: Vec<f64>,
    pub nu: Vec<f64>,
    /// Defaults to 0.1 per outcome.
    #[serde(default)]
    pub tau2: Option<Vec<f64>>,
    /// Outcome-major, two per outcome; defaults to (1, 1).
    #[serde(default)]
    pub beta: Option<Vec<f64>>,
    #[serde(default)]
    pub missing: f64,
    #[serde(default = "one")]
    pub seed: u64,
}

fn one() -> u64 {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    #[serde(default)]
    pub threads: Option<usize>,
    pub benchmark: BenchmarkSection,
    pub scenarios: Vec<Scenario>,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkSection {
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub mcmc: McmcConfig,
    #[serde(default)]
    pub priors: Priors,
}

/// Univariate simulation scenario on the unit square.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub n_train: usize,
    /// Side of the test grid, which is also the reference grid.
    pub grid_side: usize,
    /// Cells per axis; a quarter of the grid side when unset.
    #[serde(default)]
    pub partition: Option<[usize; 2]>,
    #[serde(default)]
    pub layout: SimLayout,
    pub sigma2: f64,
    pub phi: f64,
    pub nu: f64,
    #[serde(default)]
    pub tau2: Option<f64>,
    #[serde(default)]
    pub beta: Option<[f64; 2]>,
}

pub const DEFAULT_TAU2: f64 = 0.1;
pub const DEFAULT_BETA: [f64; 2] = [1.0, 1.0];

/// Parses a TOML file, reporting schema violations with their key path.
pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse(&text)
}

pub fn parse<T: DeserializeOwned>(text: &str) -> Result<T> {
    let de = toml::Deserializer::parse(text).map_err(|e| CliError::Config(e.to_string().trim().to_string()))?;
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let key = if path == "." { "<root>".to_string() } else { path };
        CliError::config(&key, e.into_inner().to_string().trim())
    })
}

/// Resolves a path from the config file against the file's directory.
pub fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn check_threads(threads: Option<usize>) -> Result<()> {
    if threads == Some(0) {
        return Err(CliError::config("threads", "must be at least 1"));
    }
    Ok(())
}

fn check_quantiles(out: &OutputSection) -> Result<()> {
    let q = &out.quantiles;
    if q.len() < 2 {
        return Err(CliError::config("output.quantiles", "at least two levels are required"));
    }
    if q.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
        return Err(CliError::config("output.quantiles", "levels must lie in (0, 1)"));
    }
    if q.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CliError::config("output.quantiles", "levels must be strictly increasing"));
    }
    Ok(())
}

fn check_priors(key: &str, p: &Priors) -> Result<()> {
    p.validate().map_err(|e| CliError::config(key, strip(e)))
}

fn check_mcmc(key: &str, m: &McmcConfig) -> Result<()> {
    m.validate().map_err(|e| CliError::config(key, strip(e)))
}

fn strip(e: grips::Error) -> String {
    match e {
        grips::Error::InvalidInput(s) => s,
        other => other.to_string(),
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        check_threads(self.threads)?;
        Domain::new(self.domain.bounds).map_err(|e| CliError::config("domain.bounds", strip(e)))?;
        if self.grid.n.iter().any(|&n| n < 2) {
            return Err(CliError::config("grid.n", "at least 2 reference points per axis"));
        }
        for a in 0..2 {
            if self.partition.m[a] == 0 || self.partition.m[a] > self.grid.n[a] {
                return Err(CliError::config("partition.m", "cells per axis must lie in [1, grid.n]"));
            }
        }
        let m = &self.model;
        if m.q == 0 {
            return Err(CliError::config("model.q", "at least one outcome"));
        }
        if m.k == 0 || m.k > m.q {
            return Err(CliError::config("model.k", "need 1 <= k <= q"));
        }
        if m.nu.len() != m.k || m.nu.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(CliError::config("model.nu", "one positive smoothness per factor"));
        }
        if !m.links.is_empty() && m.links.len() != m.q {
            return Err(CliError::config("model.links", "one link transform per outcome"));
        }
        if let Some(phi) = m.phi_init {
            let [lo, hi] = self.priors.phi_bounds;
            if !(phi >= lo && phi <= hi) {
                return Err(CliError::config("model.phi_init", "must lie inside priors.phi_bounds"));
            }
        }
        check_priors("priors", &self.priors)?;
        check_mcmc("mcmc", &self.mcmc)?;
        check_quantiles(&self.output)
    }

    pub fn links(&self) -> Vec<LinkTransform> {
        if self.model.links.is_empty() {
            vec![LinkTransform::Identity; self.model.q]
        } else {
            self.model.links.clone()
        }
    }

    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec {
            q: self.model.q,
            k: self.model.k,
            nu: self.model.nu.clone(),
            priors: self.priors.clone(),
            phi_init: self.model.phi_init,
        }
    }
}

impl SimulateConfig {
    pub fn validate(&self) -> Result<()> {
        let s = &self.simulation;
        if s.grid_side < 2 {
            return Err(CliError::config("simulation.grid_side", "must be at least 2"));
        }
        if s.n_train == 0 && s.layout == SimLayout::Irregular {
            return Err(CliError::config("simulation.n_train", "must be positive for the irregular layout"));
        }
        let q = s.lambda.len();
        let k = s.lambda.first().map_or(0, Vec::len);
        if q == 0 || k == 0 || s.lambda.iter().any(|r| r.len() != k) {
            return Err(CliError::config("simulation.lambda", "must be a non-empty rectangular matrix"));
        }
        if s.phi.len() != k || s.phi.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(CliError::config("simulation.phi", "one positive decay per factor"));
        }
        if s.nu.len() != k || s.nu.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(CliError::config("simulation.nu", "one positive smoothness per factor"));
        }
        if let Some(t) = &s.tau2 {
            if t.len() != q || t.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(CliError::config("simulation.tau2", "one positive noise variance per outcome"));
            }
        }
        if let Some(b) = &s.beta {
            if b.len() != 2 * q {
                return Err(CliError::config("simulation.beta", "two coefficients per outcome"));
            }
        }
        if !(0.0..1.0).contains(&s.missing) {
            return Err(CliError::config("simulation.missing", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        check_threads(self.threads)?;
        if self.benchmark.seeds.is_empty() {
            return Err(CliError::config("benchmark.seeds", "at least one seed"));
        }
        check_mcmc("benchmark.mcmc", &self.benchmark.mcmc)?;
        check_priors("benchmark.priors", &self.benchmark.priors)?;
        if self.scenarios.is_empty() {
            return Err(CliError::config("scenarios", "at least one scenario"));
        }
        for (i, s) in self.scenarios.iter().enumerate() {
            let key = |f: &str| format!("scenarios[{i}].{f}");
            if s.grid_side < 2 {
                return Err(CliError::config(&key("grid_side"), "must be at least 2"));
            }
            if let Some(m) = s.partition {
                if m.iter().any(|&v| v == 0 || v > s.grid_side) {
                    return Err(CliError::config(&key("partition"), "cells per axis must lie in [1, grid_side]"));
                }
            }
            for (name, v) in [("sigma2", s.sigma2), ("phi", s.phi), ("nu", s.nu), ("tau2", s.tau2.unwrap_or(1.0))] {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(CliError::config(&key(name), "must be positive"));
                }
            }
        }
        check_quantiles(&self.output)
    }
}
