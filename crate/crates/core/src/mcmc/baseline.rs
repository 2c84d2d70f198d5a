//! Reference sampler for a single outcome that updates the latent process
//! directly: values on the reference grid, plus one latent value per
//! observed location off the grid.

use std::ops::AddAssign;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use super::chain::{ChainLayout, ChainStore};
use super::ram::{ram_metropolis_step, RamAdaptState};
use super::rng::{stream, TAG_BETA, TAG_COVARIANCE, TAG_LATENT, TAG_NOISE, TAG_SITES};
use super::{McmcConfig, ModelSpec, ModelState};
use crate::coreg::{CellConditioners, LoadingMatrix, SiteBasis};
use crate::data::ObservedData;
use crate::density::{gather, FactorPrior, LatentField, LN_2PI};
use crate::error::{Error, Result};
use crate::exec::{map_range, try_map_slice, ExecMode};
use crate::geometry::Mesh;
use crate::kernels::MaternFactorParams;
use crate::linalg::{jitter_events, sample_from_precision, standard_normals};

/// Unit-variance conditionals at a given decay.
struct UnitModel {
    phi: f64,
    prior: FactorPrior,
    sites: Vec<SiteBasis>,
}

impl UnitModel {
    fn new(mesh: &Mesh, data: &ObservedData, phi: f64, nu: f64, mode: ExecMode) -> Result<Self> {
        let params = unit_params(phi, nu)?;
        let prior = FactorPrior::new(mesh, &params, mode)?;
        let cells = CellConditioners::new(mesh, &[params])?;
        let sites = cells.bases(mesh, data.locations(), mode)?;
        Ok(Self { phi, prior, sites })
    }
}

fn unit_params(phi: f64, nu: f64) -> Result<MaternFactorParams> {
    MaternFactorParams::new(phi.powf(2.0 * nu), phi, nu)
}

struct Baseline<'a> {
    mesh: &'a Mesh,
    data: &'a ObservedData,
    spec: &'a ModelSpec,
    config: &'a McmcConfig,
    unit: UnitModel,
    nu: f64,
    sigma2: f64,
    tau2: f64,
    beta: Vec<f64>,
    w: Vec<f64>,
    /// Latent value per location; only used off the grid with an observation.
    w_off: Vec<f64>,
    /// Locations carrying an off-grid latent value.
    off: Vec<bool>,
    node_sites: Vec<Vec<usize>>,
    ram_phi: RamAdaptState,
    iteration: u64,
}

impl<'a> Baseline<'a> {
    fn resid(&self, s: usize) -> f64 {
        self.data.value(s, 0).unwrap() - self.data.linear_predictor(s, 0, &self.beta)
    }

    fn site_mean(&self, s: usize) -> f64 {
        let own = &self.mesh.dag.ref_nodes[self.unit.sites[s].node].points;
        self.unit.sites[s].h[0].iter().zip(own).map(|(h, &p)| h * self.w[p]).sum()
    }

    fn latent_at(&self, s: usize) -> f64 {
        let b = &self.unit.sites[s];
        match b.coincident {
            Some(m) => self.w[self.mesh.dag.ref_nodes[b.node].points[m]],
            None => self.w_off[s],
        }
    }

    fn node_conditional(&self, node: usize) -> (DMatrix<f64>, DVector<f64>) {
        let mesh = self.mesh;
        let nd = &mesh.dag.ref_nodes[node];
        let n = nd.points.len();
        let c = self.unit.prior.conditional(mesh, node);
        let s2 = self.sigma2;
        let mut prec = &c.r_inv / s2;
        let mut lin = DVector::zeros(n);
        if !nd.parents.is_empty() {
            lin += &c.rinv_h * gather(&self.w, &nd.parent_points) / s2;
        }
        for &(child, slot) in &nd.children {
            let cn = &mesh.dag.ref_nodes[child];
            let cc = self.unit.prior.conditional(mesh, child);
            let range = cn.slots[slot].clone();
            let rp = gather(&self.w, &cn.parent_points);
            let mut e = gather(&self.w, &cn.points) - &cc.h * &rp;
            e += cc.h.columns(range.start, range.len()) * rp.rows(range.start, range.len());
            prec.add_assign(&(cc.ht_rinv_h.view((range.start, range.start), (n, n)) / s2));
            lin.add_assign(&(cc.rinv_h.columns(range.start, range.len()).transpose() * e / s2));
        }
        for &s in &self.node_sites[node] {
            let b = &self.unit.sites[s];
            match b.coincident {
                Some(m) => {
                    prec[(m, m)] += 1.0 / self.tau2;
                    lin[m] += self.resid(s) / self.tau2;
                }
                None => {
                    let h = DVector::from_column_slice(&b.h[0]);
                    let v = s2 * b.r[0];
                    prec += &h * h.transpose() / v;
                    lin += h * (self.w_off[s] / v);
                }
            }
        }
        (prec, lin)
    }

    fn sweep(&mut self) -> Result<()> {
        let mode = self.config.exec;
        let (seed, it) = (self.config.seed, self.iteration);
        for group in &self.mesh.coloring.groups {
            let draws = try_map_slice(mode, group, |&node| {
                let (prec, lin) = self.node_conditional(node);
                let mut rng = stream(seed, TAG_LATENT, it, node as u64);
                sample_from_precision(prec, &lin, &mut rng, "latent full conditional").map_err(|e| e.at_node(node))
            })?;
            for (&node, v) in group.iter().zip(draws) {
                for (m, &p) in self.mesh.dag.ref_nodes[node].points.iter().enumerate() {
                    self.w[p] = v[m];
                }
            }
        }
        let fresh = map_range(mode, self.data.n(), |s| {
            if !self.off[s] {
                return 0.0;
            }
            let v = self.sigma2 * self.unit.sites[s].r[0];
            let prec = 1.0 / v + 1.0 / self.tau2;
            let mean = (self.site_mean(s) / v + self.resid(s) / self.tau2) / prec;
            let mut rng = stream(seed, TAG_SITES, it, s as u64);
            mean + standard_normals(&mut rng, 1)[0] / prec.sqrt()
        });
        self.w_off = fresh;
        Ok(())
    }

    fn update_beta(&mut self) -> Result<()> {
        let p = self.data.p();
        if p == 0 {
            return Ok(());
        }
        let pr = &self.spec.priors;
        let mut prec = DMatrix::identity(p, p) / pr.beta_var;
        let mut lin = DVector::from_element(p, pr.beta_mean / pr.beta_var);
        for s in 0..self.data.n() {
            let Some(y) = self.data.value(s, 0) else { continue };
            let x = self.data.covariates().row(s).transpose();
            prec += &x * x.transpose() / self.tau2;
            lin += x * ((y - self.latent_at(s)) / self.tau2);
        }
        let mut rng = stream(self.config.seed, TAG_BETA, self.iteration, 0);
        self.beta = sample_from_precision(prec, &lin, &mut rng, "coefficient full conditional")?
            .as_slice()
            .to_vec();
        Ok(())
    }

    /// Unit-variance quadratic form, log-determinant and dimension of the
    /// latent values under a given unit model.
    fn unit_terms(&self, unit: &UnitModel) -> (f64, f64, usize) {
        let (mut quad, mut logdet) = unit.prior.quad_and_logdet(self.mesh, &self.w, self.config.exec);
        let mut n = self.w.len();
        for s in (0..self.data.n()).filter(|&s| self.off[s]) {
            let b = &unit.sites[s];
            let own = &self.mesh.dag.ref_nodes[b.node].points;
            let mean: f64 = b.h[0].iter().zip(own).map(|(h, &p)| h * self.w[p]).sum();
            quad += (self.w_off[s] - mean).powi(2) / b.r[0];
            logdet += b.r[0].ln();
            n += 1;
        }
        (quad, logdet, n)
    }

    fn update_sigma2(&mut self) {
        let (quad, _, n) = self.unit_terms(&self.unit);
        let mut rng = stream(self.config.seed, TAG_COVARIANCE, self.iteration, 0);
        self.sigma2 = self.spec.priors.baseline_sigma2.updated(n, quad).sample(&mut rng);
    }

    fn update_phi(&mut self) -> Result<()> {
        let s2 = self.sigma2;
        let log_target = |this: &Self, unit: &UnitModel| {
            let (quad, logdet, n) = this.unit_terms(unit);
            this.spec.priors.ln_phi(unit.phi) + unit.phi.ln()
                - 0.5 * (n as f64 * (LN_2PI + s2.ln()) + logdet + quad / s2)
        };
        let current = log_target(self, &self.unit);
        let x = DVector::from_element(1, self.unit.phi.ln());
        let mut proposal = None;
        let mut rng = stream(self.config.seed, TAG_COVARIANCE, self.iteration, 1);
        let this = &*self;
        let mut ram = this.ram_phi.clone();
        let step = ram_metropolis_step(
            &x,
            current,
            |xp| {
                let phi = xp[0].exp();
                if !this.spec.priors.ln_phi(phi).is_finite() {
                    return Ok(f64::NEG_INFINITY);
                }
                let unit = UnitModel::new(this.mesh, this.data, phi, this.nu, this.config.exec)?;
                let lp = log_target(this, &unit);
                proposal = Some(unit);
                Ok(lp)
            },
            &mut ram,
            &mut rng,
            "decay",
        )?;
        self.ram_phi = ram;
        if step.accepted {
            self.unit = proposal.expect("accepted proposal was evaluated");
        }
        Ok(())
    }

    fn update_tau2(&mut self) {
        let mut ss = 0.0;
        let mut n = 0;
        for s in 0..self.data.n() {
            if self.data.value(s, 0).is_some() {
                ss += (self.resid(s) - self.latent_at(s)).powi(2);
                n += 1;
            }
        }
        let mut rng = stream(self.config.seed, TAG_NOISE, self.iteration, 0);
        self.tau2 = self.spec.priors.tau2.updated(n, ss).sample(&mut rng);
    }

    fn step(&mut self) -> Result<()> {
        let sched = self.config.schedule;
        if sched.latent {
            self.sweep()?;
        }
        if sched.beta {
            self.update_beta()?;
        }
        if sched.covariance {
            self.update_sigma2();
            self.update_phi()?;
        }
        if sched.loadings {
            self.update_tau2();
        }
        self.iteration += 1;
        Ok(())
    }

    /// Stores the draw in the same layout as the blocked sampler: loading
    /// `phi^nu`, latent values scaled by `phi^-nu`.
    fn record(&self, store: &mut ChainStore) -> Result<()> {
        let layout = store.layout.expect("store has a layout");
        let factor = MaternFactorParams::new(self.sigma2, self.unit.phi, self.nu)?;
        let scale = factor.q_scale();
        let a = LoadingMatrix::new(DMatrix::from_element(1, 1, scale))?;
        store.draws.push(layout.encode(&self.beta, &a, &[self.tau2], &[factor])?);
        if self.config.store_latent {
            let r = self.w.iter().map(|v| v / scale).collect();
            store.latent.push(LatentField::from_factors(vec![r])?);
        }
        Ok(())
    }
}

/// Runs the latent-process sampler for a single outcome and factor.
pub fn run_baseline_latent(
    mesh: &Mesh,
    data: &ObservedData,
    spec: &ModelSpec,
    config: &McmcConfig,
) -> Result<ChainStore> {
    if spec.q != 1 || spec.k != 1 {
        return Err(Error::Contract("the latent-process sampler supports a single outcome only".into()));
    }
    spec.validate(data)?;
    config.validate()?;
    let init = ModelState::initial(spec, data, mesh)?;
    let f = init.factors[0];
    let lambda = init.a.get(0, 0) * f.sigma2.sqrt() / f.q_scale();
    let unit = UnitModel::new(mesh, data, f.phi, f.nu, config.exec)?;
    let mut node_sites = vec![Vec::new(); mesh.dag.n_ref()];
    for (i, s) in unit.sites.iter().enumerate() {
        node_sites[s.node].push(i);
    }
    let off = (0..data.n())
        .map(|s| unit.sites[s].coincident.is_none() && data.value(s, 0).is_some())
        .collect();
    let mut b = Baseline {
        mesh,
        data,
        spec,
        config,
        unit,
        nu: f.nu,
        sigma2: lambda * lambda,
        tau2: init.tau2[0],
        beta: init.beta,
        w: vec![0.0; mesh.grid.len()],
        w_off: vec![0.0; data.n()],
        off,
        node_sites,
        ram_phi: RamAdaptState::new(1, config.initial_step, config.target_accept, config.adapt_decay),
        iteration: 0,
    };
    let layout = ChainLayout { q: 1, k: 1, p: data.p() };
    let mut store = ChainStore::new(layout, config.seed);
    let jitter0 = jitter_events();
    let start = Instant::now();
    for it in 0..config.iterations {
        b.step().map_err(|e| Error::Iteration {
            iteration: it,
            source: Box::new(e),
        })?;
        if config.stores(it) {
            b.record(&mut store)?;
        }
    }
    store.wall_time = start.elapsed().as_secs_f64();
    store.iterations = config.iterations;
    store.acceptance = vec![("decay".to_string(), b.ram_phi.acceptance_rate())];
    store.jitter_events = jitter_events() - jitter0;
    Ok(store)
}
