//! The blocked sampler for the parametrized-and-split model.

use std::ops::AddAssign;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use super::chain::{ChainLayout, ChainStore};
use super::priors::truncated_normal_positive;
use super::ram::{ram_metropolis_step, RamAdaptState};
use super::rng::{stream, TAG_BETA, TAG_COVARIANCE, TAG_LATENT, TAG_LOADINGS};
use super::{LoadingUpdate, McmcConfig, ModelSpec, ModelState};
use crate::coreg::{CellConditioners, LoadingMatrix, SiteBasis};
use crate::data::ObservedData;
use crate::density::{gather, obs_loglik_projected, FactorPrior};
use crate::error::{Error, Result};
use crate::exec::{map_range, map_slice, try_map_range, try_map_slice};
use crate::geometry::Mesh;
use crate::kernels::MaternFactorParams;
use crate::linalg::{jitter_events, sample_from_precision, spd_cholesky};

/// Sampler state plus the caches that depend on it.
pub struct GripsSampler<'a> {
    mesh: &'a Mesh,
    data: &'a ObservedData,
    spec: &'a ModelSpec,
    config: McmcConfig,
    state: ModelState,
    priors: Vec<FactorPrior>,
    cells: CellConditioners,
    sites: Vec<SiteBasis>,
    /// Conditional latent mean of each factor at each observed location.
    u: Vec<Vec<f64>>,
    node_sites: Vec<Vec<usize>>,
    off_grid: bool,
    ram_cov: Vec<RamAdaptState>,
    ram_load: RamAdaptState,
    iteration: usize,
}

impl<'a> GripsSampler<'a> {
    pub fn new(
        mesh: &'a Mesh,
        data: &'a ObservedData,
        spec: &'a ModelSpec,
        config: McmcConfig,
        state: ModelState,
    ) -> Result<Self> {
        spec.validate(data)?;
        config.validate()?;
        state.validate(spec, data, mesh)?;
        let mode = config.exec;
        let priors = state
            .factors
            .iter()
            .map(|f| FactorPrior::new(mesh, f, mode))
            .collect::<Result<Vec<_>>>()?;
        let cells = CellConditioners::new(mesh, &state.factors)?;
        let sites = cells.bases(mesh, data.locations(), mode)?;
        let mut node_sites = vec![Vec::new(); mesh.dag.n_ref()];
        for (i, s) in sites.iter().enumerate() {
            node_sites[s.node].push(i);
        }
        let off_grid = sites.iter().any(|s| s.coincident.is_none());
        let cov_dim = 2 + usize::from(config.schedule.sample_nu);
        let ram_cov = (0..spec.k)
            .map(|_| RamAdaptState::new(cov_dim, config.initial_step, config.target_accept, config.adapt_decay))
            .collect();
        let load_dim = state.a.free_entries().len() + spec.q;
        let ram_load = RamAdaptState::new(load_dim, config.initial_step, config.target_accept, config.adapt_decay);
        let mut s = Self {
            mesh,
            data,
            spec,
            config,
            state,
            priors,
            cells,
            sites,
            u: Vec::new(),
            node_sites,
            off_grid,
            ram_cov,
            ram_load,
            iteration: 0,
        };
        s.refresh_projections();
        Ok(s)
    }

    pub fn state(&self) -> &ModelState {
        &self.state
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn sites(&self) -> &[SiteBasis] {
        &self.sites
    }

    pub fn acceptance(&self) -> Vec<(String, f64)> {
        let mut v: Vec<(String, f64)> = self
            .ram_cov
            .iter()
            .enumerate()
            .map(|(j, r)| (format!("covariance_{}", j + 1), r.acceptance_rate()))
            .collect();
        if self.config.schedule.loading_update == LoadingUpdate::Metropolis {
            v.push(("loadings_noise".to_string(), self.ram_load.acceptance_rate()));
        }
        v
    }

    /// Replaces the state and rebuilds every cache.
    pub fn set_state(&mut self, state: ModelState) -> Result<()> {
        state.validate(self.spec, self.data, self.mesh)?;
        let mode = self.config.exec;
        self.priors = state
            .factors
            .iter()
            .map(|f| FactorPrior::new(self.mesh, f, mode))
            .collect::<Result<_>>()?;
        self.cells = CellConditioners::new(self.mesh, &state.factors)?;
        self.sites = self.cells.bases(self.mesh, self.data.locations(), mode)?;
        self.state = state;
        self.refresh_projections();
        Ok(())
    }

    fn refresh_projections(&mut self) {
        let (mesh, field) = (self.mesh, &self.state.field);
        self.u = map_slice(self.config.exec, &self.sites, |s| s.project(mesh, field));
    }

    /// One iteration of the update schedule.
    pub fn step(&mut self) -> Result<()> {
        let sched = self.config.schedule;
        if sched.latent {
            self.sweep_latent()?;
        }
        if sched.beta {
            self.update_beta()?;
        }
        if sched.covariance {
            self.update_covariance()?;
        }
        if sched.loadings {
            match sched.loading_update {
                LoadingUpdate::Metropolis => self.update_loadings_metropolis()?,
                LoadingUpdate::Conjugate => self.update_loadings_conjugate()?,
            }
        }
        self.iteration += 1;
        Ok(())
    }

    /// Inverse covariance of the observed outcomes at each location.
    fn site_weights(&self) -> Result<Vec<DMatrix<f64>>> {
        let (data, a, tau2) = (self.data, &self.state.a, &self.state.tau2);
        try_map_range(self.config.exec, data.n(), |s| {
            site_weight(data.observed(s), a, tau2, &self.sites[s])
        })
    }

    /// Precision and linear term of the Gaussian full conditional of one
    /// reference node's values, all factors stacked factor by factor.
    pub fn latent_full_conditional(&self, node: usize) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let weights = self.site_weights()?;
        Ok(self.latent_conditional(node, &weights))
    }

    fn latent_conditional(&self, node: usize, weights: &[DMatrix<f64>]) -> (DMatrix<f64>, DVector<f64>) {
        let mesh = self.mesh;
        let nd = &mesh.dag.ref_nodes[node];
        let n = nd.points.len();
        let k = self.spec.k;
        let dim = k * n;
        let mut prec = DMatrix::zeros(dim, dim);
        let mut lin = DVector::zeros(dim);
        for j in 0..k {
            let vals = self.state.field.factor(j);
            let c = self.priors[j].conditional(mesh, node);
            let o = j * n;
            prec.view_mut((o, o), (n, n)).add_assign(&c.r_inv);
            if !nd.parents.is_empty() {
                let rp = gather(vals, &nd.parent_points);
                lin.rows_mut(o, n).add_assign(&(&c.rinv_h * rp));
            }
            for &(child, slot) in &nd.children {
                let cn = &mesh.dag.ref_nodes[child];
                let cc = self.priors[j].conditional(mesh, child);
                let range = cn.slots[slot].clone();
                let rp = gather(vals, &cn.parent_points);
                // child residual with this node's contribution added back
                let mut e = gather(vals, &cn.points) - &cc.h * &rp;
                e += cc.h.columns(range.start, range.len()) * rp.rows(range.start, range.len());
                prec.view_mut((o, o), (n, n))
                    .add_assign(&cc.ht_rinv_h.view((range.start, range.start), (n, n)));
                lin.rows_mut(o, n)
                    .add_assign(&(cc.rinv_h.columns(range.start, range.len()).transpose() * e));
            }
        }
        let (data, a, beta) = (self.data, &self.state.a, &self.state.beta);
        for &s in &self.node_sites[node] {
            let obs = data.observed(s);
            if obs.is_empty() {
                continue;
            }
            let basis = &self.sites[s];
            let b = DMatrix::from_fn(obs.len(), dim, |x, c| a.get(obs[x], c / n) * basis.coef(c / n, c % n));
            let y = DVector::from_fn(obs.len(), |x, _| {
                data.value(s, obs[x]).unwrap() - data.linear_predictor(s, obs[x], beta)
            });
            let bt_w = b.transpose() * &weights[s];
            prec += &bt_w * b;
            lin += bt_w * y;
        }
        (prec, lin)
    }

    /// Gibbs sweep over reference nodes, one color at a time.
    fn sweep_latent(&mut self) -> Result<()> {
        let weights = self.site_weights()?;
        let (seed, it) = (self.config.seed, self.iteration as u64);
        for group in &self.mesh.coloring.groups {
            let draws = try_map_slice(self.config.exec, group, |&node| {
                let (prec, lin) = self.latent_conditional(node, &weights);
                let mut rng = stream(seed, TAG_LATENT, it, node as u64);
                sample_from_precision(prec, &lin, &mut rng, "latent full conditional")
                    .map_err(|e| e.at_node(node))
            })?;
            for (&node, v) in group.iter().zip(draws) {
                let pts = &self.mesh.dag.ref_nodes[node].points;
                let n = pts.len();
                for j in 0..self.spec.k {
                    let f = self.state.field.factor_mut(j);
                    for (m, &p) in pts.iter().enumerate() {
                        f[p] = v[j * n + m];
                    }
                }
            }
        }
        self.refresh_projections();
        Ok(())
    }

    /// Precision and linear term of the full conditional of the coefficients.
    pub fn beta_full_conditional(&self) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let (data, q, p) = (self.data, self.spec.q, self.data.p());
        let qp = q * p;
        let weights = self.site_weights()?;
        let a = &self.state.a;
        let terms = map_range(self.config.exec, data.n(), |s| {
            let obs = data.observed(s);
            let x = DMatrix::from_fn(obs.len(), qp, |r, c| {
                if c / p == obs[r] {
                    data.covariates()[(s, c % p)]
                } else {
                    0.0
                }
            });
            let e = DVector::from_fn(obs.len(), |r, _| {
                let j = obs[r];
                data.value(s, j).unwrap() - (0..a.k()).map(|f| a.get(j, f) * self.u[s][f]).sum::<f64>()
            });
            let xt_w = x.transpose() * &weights[s];
            (&xt_w * x, xt_w * e)
        });
        let pr = &self.spec.priors;
        let mut prec = DMatrix::identity(qp, qp) / pr.beta_var;
        let mut lin = DVector::from_element(qp, pr.beta_mean / pr.beta_var);
        for (pm, lv) in terms {
            prec += pm;
            lin += lv;
        }
        Ok((prec, lin))
    }

    fn update_beta(&mut self) -> Result<()> {
        if self.data.p() == 0 {
            return Ok(());
        }
        let (prec, lin) = self.beta_full_conditional()?;
        let mut rng = stream(self.config.seed, TAG_BETA, self.iteration as u64, 0);
        let b = sample_from_precision(prec, &lin, &mut rng, "coefficient full conditional")?;
        self.state.beta = b.as_slice().to_vec();
        Ok(())
    }

    fn current_obs_loglik(&self) -> Result<f64> {
        obs_loglik_projected(
            self.data,
            &self.state.beta,
            &self.state.a,
            &self.state.tau2,
            &self.sites,
            &self.u,
            self.config.exec,
        )
    }

    fn covariance_log_prior(&self, f: &MaternFactorParams) -> f64 {
        let pr = &self.spec.priors;
        let mut lp = pr.sigma2.ln_pdf(f.sigma2) + f.sigma2.ln() + pr.ln_phi(f.phi) + f.phi.ln();
        if self.config.schedule.sample_nu {
            lp += pr.ln_nu(f.nu) + f.nu.ln();
        }
        lp
    }

    /// Adaptive Metropolis on `(log sigma2_j, log phi_j[, log nu_j])` for each
    /// factor. The target is the latent prior density times, when some
    /// observations lie off the grid, the partially marginalized likelihood
    /// (which depends on the factor through the site conditionals).
    fn update_covariance(&mut self) -> Result<()> {
        let sample_nu = self.config.schedule.sample_nu;
        let mode = self.config.exec;
        for j in 0..self.spec.k {
            let f = self.state.factors[j];
            let mut x = vec![f.sigma2.ln(), f.phi.ln()];
            if sample_nu {
                x.push(f.nu.ln());
            }
            let x = DVector::from_vec(x);
            let field_j = self.state.field.factor(j);
            let mut current = self.covariance_log_prior(&f) + self.priors[j].logdensity(self.mesh, field_j, mode);
            if self.off_grid {
                current += self.current_obs_loglik()?;
            }
            let mut proposal: Option<(MaternFactorParams, FactorPrior, Option<SiteCache>)> = None;
            let mut rng = stream(self.config.seed, TAG_COVARIANCE, self.iteration as u64, j as u64);
            let this = &*self;
            let mut ram = this.ram_cov[j].clone();
            let step = ram_metropolis_step(
                &x,
                current,
                |xp| {
                    let nu = if sample_nu { xp[2].exp() } else { f.nu };
                    let params = MaternFactorParams::new(xp[0].exp(), xp[1].exp(), nu)?;
                    let lp = this.covariance_log_prior(&params);
                    if !lp.is_finite() {
                        return Ok(f64::NEG_INFINITY);
                    }
                    let prior = FactorPrior::new(this.mesh, &params, mode)?;
                    let mut total = lp + prior.logdensity(this.mesh, field_j, mode);
                    let cache = if this.off_grid {
                        let cache = this.site_cache_with(j, &params)?;
                        total += obs_loglik_projected(
                            this.data,
                            &this.state.beta,
                            &this.state.a,
                            &this.state.tau2,
                            &cache.sites,
                            &cache.u,
                            mode,
                        )?;
                        Some(cache)
                    } else {
                        None
                    };
                    proposal = Some((params, prior, cache));
                    Ok(total)
                },
                &mut ram,
                &mut rng,
                "covariance",
            )?;
            self.ram_cov[j] = ram;
            if step.accepted {
                let (params, prior, cache) = proposal.expect("accepted proposal was evaluated");
                self.state.factors[j] = params;
                self.priors[j] = prior;
                match cache {
                    Some(c) => {
                        self.cells = c.cells;
                        self.sites = c.sites;
                        self.u = c.u;
                    }
                    None => {
                        self.cells.update_factor(self.mesh, j, &params)?;
                        self.sites = self.cells.bases(self.mesh, self.data.locations(), mode)?;
                    }
                }
            }
        }
        Ok(())
    }

    fn site_cache_with(&self, j: usize, params: &MaternFactorParams) -> Result<SiteCache> {
        let mode = self.config.exec;
        let mut cells = self.cells.clone();
        cells.update_factor(self.mesh, j, params)?;
        let sites = cells.bases(self.mesh, self.data.locations(), mode)?;
        let (mesh, field) = (self.mesh, &self.state.field);
        let u = map_slice(mode, &sites, |s| s.project(mesh, field));
        Ok(SiteCache { cells, sites, u })
    }

    fn loadings_log_prior(&self, a: &LoadingMatrix, tau2: &[f64]) -> f64 {
        let pr = &self.spec.priors;
        let mut lp = 0.0;
        for (i, j) in a.free_entries() {
            let v = a.get(i, j);
            lp += pr.ln_loading(v, i == j);
            if i == j {
                lp += v.ln();
            }
        }
        lp + tau2.iter().map(|&t| pr.tau2.ln_pdf(t) + t.ln()).sum::<f64>()
    }

    fn decode_loadings(&self, x: &DVector<f64>) -> Result<(LoadingMatrix, Vec<f64>)> {
        let free = self.state.a.free_entries();
        let (q, k) = (self.spec.q, self.spec.k);
        let mut a = DMatrix::zeros(q, k);
        for (c, &(i, j)) in free.iter().enumerate() {
            a[(i, j)] = if i == j { x[c].exp() } else { x[c] };
        }
        let tau2 = (0..q).map(|i| x[free.len() + i].exp()).collect();
        Ok((LoadingMatrix::new(a)?, tau2))
    }

    /// Adaptive Metropolis on the free loadings (diagonal on log scale) and
    /// the log noise variances, targeting the partially marginalized
    /// likelihood.
    fn update_loadings_metropolis(&mut self) -> Result<()> {
        let free = self.state.a.free_entries();
        let mut x: Vec<f64> = free
            .iter()
            .map(|&(i, j)| {
                let v = self.state.a.get(i, j);
                if i == j {
                    v.ln()
                } else {
                    v
                }
            })
            .collect();
        x.extend(self.state.tau2.iter().map(|t| t.ln()));
        let x = DVector::from_vec(x);
        let current = self.loadings_log_prior(&self.state.a, &self.state.tau2) + self.current_obs_loglik()?;
        let mut rng = stream(self.config.seed, TAG_LOADINGS, self.iteration as u64, 0);
        let this = &*self;
        let mut ram = this.ram_load.clone();
        let step = ram_metropolis_step(
            &x,
            current,
            |xp| {
                let (a, tau2) = this.decode_loadings(xp)?;
                let lp = this.loadings_log_prior(&a, &tau2);
                if !lp.is_finite() {
                    return Ok(f64::NEG_INFINITY);
                }
                let ll = obs_loglik_projected(
                    this.data,
                    &this.state.beta,
                    &a,
                    &tau2,
                    &this.sites,
                    &this.u,
                    this.config.exec,
                )?;
                Ok(lp + ll)
            },
            &mut ram,
            &mut rng,
            "loadings and noise",
        )?;
        self.ram_load = ram;
        if step.accepted {
            let (a, tau2) = self.decode_loadings(&step.x)?;
            self.state.a = a;
            self.state.tau2 = tau2;
        }
        Ok(())
    }

    /// Gibbs updates of each loading row and noise variance, valid only when
    /// every observed location coincides with a reference point.
    fn update_loadings_conjugate(&mut self) -> Result<()> {
        if self.off_grid {
            return Err(Error::Contract(
                "conjugate loading updates require every observation to lie on the reference grid".into(),
            ));
        }
        let (data, q, k) = (self.data, self.spec.q, self.spec.k);
        let pr = self.spec.priors.clone();
        let mut a = self.state.a.matrix().clone();
        for j in 0..q {
            let mut rng = stream(self.config.seed, TAG_LOADINGS, self.iteration as u64, j as u64);
            let width = k.min(j + 1);
            let rows: Vec<usize> = (0..data.n()).filter(|&i| data.value(i, j).is_some()).collect();
            let f = DMatrix::from_fn(rows.len(), width, |r, c| self.u[rows[r]][c]);
            let y = DVector::from_fn(rows.len(), |r, _| {
                let i = rows[r];
                data.value(i, j).unwrap() - data.linear_predictor(i, j, &self.state.beta)
            });
            let tau2 = self.state.tau2[j];
            let prior_prec = DVector::from_fn(width, |c, _| {
                if c == j {
                    1.0 / pr.loading_diag_var
                } else {
                    1.0 / pr.loading_offdiag_var
                }
            });
            let prec = DMatrix::from_diagonal(&prior_prec) + f.transpose() * &f / tau2;
            let lin = f.transpose() * &y / tau2;
            let chol = spd_cholesky(prec, "loading full conditional")?;
            let mean = chol.solve(&lin);
            let cov = chol.inverse();
            let row = if j < k {
                sample_with_positive_coordinate(&mean, &cov, j, &mut rng)?
            } else {
                let z = crate::linalg::standard_normals(&mut rng, width);
                let l = spd_cholesky(cov, "loading full conditional")?.unpack();
                mean + l * z
            };
            for c in 0..width {
                a[(j, c)] = row[c];
            }
            let resid = &y - &f * &row;
            self.state.tau2[j] = pr.tau2.updated(rows.len(), resid.norm_squared()).sample(&mut rng);
        }
        self.state.a = LoadingMatrix::new(a)?;
        Ok(())
    }

    fn record(&self, store: &mut ChainStore) -> Result<()> {
        let layout = store.layout.expect("store has a layout");
        store.draws.push(layout.encode(&self.state.beta, &self.state.a, &self.state.tau2, &self.state.factors)?);
        if self.config.store_latent {
            store.latent.push(self.state.field.clone());
        }
        Ok(())
    }
}

struct SiteCache {
    cells: CellConditioners,
    sites: Vec<SiteBasis>,
    u: Vec<Vec<f64>>,
}

/// `(D + A diag(R) A^T)^-1` restricted to the observed outcomes.
fn site_weight(obs: &[usize], a: &LoadingMatrix, tau2: &[f64], basis: &SiteBasis) -> Result<DMatrix<f64>> {
    let l = obs.len();
    let cov = DMatrix::from_fn(l, l, |x, y| {
        let (i, j) = (obs[x], obs[y]);
        let s: f64 = (0..a.k()).map(|f| a.get(i, f) * basis.r[f] * a.get(j, f)).sum();
        if x == y {
            s + tau2[i]
        } else {
            s
        }
    });
    if l == 1 {
        return Ok(DMatrix::from_element(1, 1, 1.0 / cov[(0, 0)]));
    }
    Ok(spd_cholesky(cov, "observation covariance")
        .map_err(|e| e.at_node(basis.node))?
        .inverse())
}

/// Draw from `N(mean, cov)` restricted to `x[d] > 0`: the constrained
/// coordinate from its truncated marginal, the rest from the conditional.
fn sample_with_positive_coordinate<R: rand::Rng + ?Sized>(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    d: usize,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let n = mean.len();
    let sd = cov[(d, d)].sqrt();
    let xd = truncated_normal_positive(mean[d], sd, rng);
    if n == 1 {
        return Ok(DVector::from_element(1, xd));
    }
    let rest: Vec<usize> = (0..n).filter(|&i| i != d).collect();
    let c_rd = DVector::from_iterator(rest.len(), rest.iter().map(|&i| cov[(i, d)]));
    let cond_mean = DVector::from_iterator(rest.len(), rest.iter().map(|&i| mean[i]))
        + &c_rd * ((xd - mean[d]) / cov[(d, d)]);
    let cond_cov = DMatrix::from_fn(rest.len(), rest.len(), |a, b| cov[(rest[a], rest[b])])
        - &c_rd * c_rd.transpose() / cov[(d, d)];
    let l = spd_cholesky(cond_cov, "loading conditional")?.unpack();
    let z = crate::linalg::standard_normals(rng, rest.len());
    let xr = cond_mean + l * z;
    let mut out = DVector::zeros(n);
    out[d] = xd;
    for (a, &i) in rest.iter().enumerate() {
        out[i] = xr[a];
    }
    Ok(out)
}

/// Runs the blocked sampler and stores thinned draws after burn-in.
pub fn run_chain(
    mesh: &Mesh,
    data: &ObservedData,
    spec: &ModelSpec,
    config: &McmcConfig,
    initial: Option<ModelState>,
) -> Result<ChainStore> {
    let state = match initial {
        Some(s) => s,
        None => ModelState::initial(spec, data, mesh)?,
    };
    let mut sampler = GripsSampler::new(mesh, data, spec, config.clone(), state)?;
    let layout = ChainLayout {
        q: spec.q,
        k: spec.k,
        p: data.p(),
    };
    let mut store = ChainStore::new(layout, config.seed);
    let jitter0 = jitter_events();
    let start = Instant::now();
    for it in 0..config.iterations {
        sampler.step().map_err(|e| Error::Iteration {
            iteration: it,
            source: Box::new(e),
        })?;
        if config.stores(it) {
            sampler.record(&mut store)?;
        }
    }
    store.wall_time = start.elapsed().as_secs_f64();
    store.iterations = config.iterations;
    store.acceptance = sampler.acceptance();
    store.jitter_events = jitter_events() - jitter0;
    Ok(store)
}
