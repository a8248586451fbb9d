//! Metropolis-within-Gibbs sampling of the full posterior.
//!
//! One sweep runs, in order: measurement regressions, structural noise
//! variances, exogenous mixtures, then each latent in topological order. A
//! sparse GP latent gets a pseudo-function draw, function-value draws, one
//! joint move per pseudo-input, latent-value moves and a kernel move; a dense
//! GP latent gets an exact function draw, latent-value moves and a kernel
//! move; a parametric latent gets conjugate coefficient and noise draws and
//! latent-value moves; an exogenous latent only latent-value moves.

mod dense;
mod gibbs;
mod init;
mod sparse;
pub(crate) mod trace;

pub use dense::{dense_function_conditional, DenseCache};
pub use gibbs::{
    gibbs_exogenous_mixture, gibbs_measurement_params, gibbs_structural_noise,
    gibbs_structural_parametric, sample_inv_gamma,
};
pub use init::initial_state;
pub use sparse::{function_value_conditional, pseudo_function_conditional, PseudoProposal, SparseCache};
pub use trace::{AcceptanceStats, Counter, Trace};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kernel::{CholeskyFactor, KernelHyper};
use crate::model::{
    kernel_hyperprior_logdensity, ln_normal, structural_features, ChainState, GpLatent, LatentBlock,
    Model, Observed, StructuralKind,
};
use gibbs::std_normal;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub dense_iterations: usize,
    pub dense_burn_in: usize,
    pub thinning: usize,
    /// Initial random-walk scale for latent values.
    pub rw_step_latent: f64,
    /// Initial random-walk scale for pseudo-inputs.
    pub rw_step_pseudo: f64,
    /// Kernel proposals are uniform on `[α Θ, Θ / α]`; 1 freezes Θ.
    pub hyper_alpha: f64,
    pub adapt_during_burnin: bool,
    pub target_acceptance: f64,
    /// Drop the Hastings factor of the multiplicative kernel proposal.
    pub literal_hyper_mh: bool,
    /// Latent-value moves redraw the affected function values instead of
    /// conditioning on them.
    pub collapse_functions: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            iterations: 20_000,
            burn_in: 2_000,
            dense_iterations: 6_000,
            dense_burn_in: 1_000,
            thinning: 1,
            rw_step_latent: 0.3,
            rw_step_pseudo: 0.3,
            hyper_alpha: 0.9,
            adapt_during_burnin: true,
            target_acceptance: 0.35,
            literal_hyper_mh: false,
            collapse_functions: true,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if self.burn_in >= self.iterations {
            return bad("burn_in must be smaller than iterations");
        }
        if self.dense_burn_in >= self.dense_iterations {
            return bad("dense_burn_in must be smaller than dense_iterations");
        }
        if self.thinning == 0 {
            return bad("thinning must be at least 1");
        }
        if !(self.hyper_alpha > 0.0 && self.hyper_alpha <= 1.0) {
            return bad("hyper_alpha must lie in (0, 1]");
        }
        if !(self.rw_step_latent >= 0.0 && self.rw_step_pseudo >= 0.0) {
            return bad("random-walk steps must be nonnegative");
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return bad("target_acceptance must lie in (0, 1)");
        }
        Ok(())
    }
}

/// Pending cache changes for a latent-value move, one per GP child.
enum CacheUpdate {
    Sparse {
        c: usize,
        k: Vec<f64>,
        w: Vec<f64>,
        mean: f64,
        var: f64,
    },
    Dense {
        c: usize,
        input: Vec<f64>,
        chol: CholeskyFactor,
    },
}

/// A scored proposal for one latent value.
pub struct LatentMove {
    pub x_new: f64,
    pub log_ratio: f64,
    /// Function values redrawn along with the move: (latent, new value).
    pub redraws: Vec<(usize, f64)>,
    /// `Σ log q(f) - log q(f')` over the redraws, where `q` is the exact
    /// conditional each value is drawn from. Zero when nothing is redrawn.
    pub proposal_correction: f64,
    caches: Vec<CacheUpdate>,
}

fn ln_q(f: f64, mean: f64, var: f64) -> f64 {
    if var > 0.0 {
        ln_normal(f, mean, var)
    } else {
        0.0
    }
}

/// Function-value term of a latent move with `f` integrated out. The
/// function value moves from conditional `(m0, v0)` to `(m1, v1)` and its
/// noisy observation from `x0` to `x1`. Returns the marginal log ratio, a
/// fresh draw of `f` from its new full conditional and the proposal
/// correction for that draw.
#[allow(clippy::too_many_arguments)]
fn collapsed_term(
    f: f64,
    (m0, v0, x0): (f64, f64, f64),
    (m1, v1, x1): (f64, f64, f64),
    noise_var: f64,
    z: f64,
) -> (f64, f64, f64) {
    let r = ln_normal(x1, m1, v1 + noise_var) - ln_normal(x0, m0, v0 + noise_var);
    let (qm0, qv0) = function_value_conditional(m0, v0, x0, noise_var);
    let (qm1, qv1) = function_value_conditional(m1, v1, x1, noise_var);
    let f_new = qm1 + qv1.max(0.0).sqrt() * z;
    (r, f_new, ln_q(f, qm0, qv0) - ln_q(f_new, qm1, qv1))
}

/// A proposed kernel hyperparameter pair with its log acceptance ratio.
pub struct HyperProposal {
    pub hyper: KernelHyper,
    pub log_ratio: f64,
    sparse: Option<SparseCache>,
    dense: Option<DenseCache>,
}

/// One chain: model, data, current state, caches, step sizes and RNG.
pub struct Chain<'a> {
    model: &'a Model,
    data: &'a Observed,
    pub config: SweepConfig,
    pub state: ChainState,
    sparse: Vec<Option<SparseCache>>,
    dense: Vec<Option<DenseCache>>,
    pub latent_steps: Vec<f64>,
    pub pseudo_steps: Vec<f64>,
    /// Totals since the last reset.
    pub stats: AcceptanceStats,
    window: AcceptanceStats,
    pub rng: ChaCha8Rng,
    sweeps: usize,
}

impl<'a> Chain<'a> {
    pub fn new(
        model: &'a Model,
        data: &'a Observed,
        config: SweepConfig,
        state: ChainState,
        rng: ChaCha8Rng,
    ) -> Result<Self> {
        config.validate()?;
        state.check(model)?;
        if data.n != state.n() {
            return Err(Error::DimensionMismatch {
                expected: state.n(),
                found: data.n,
            });
        }
        let l = model.n_latents();
        let mut chain = Chain {
            model,
            data,
            latent_steps: vec![config.rw_step_latent; l],
            pseudo_steps: vec![config.rw_step_pseudo; l],
            config,
            state,
            sparse: vec![None; l],
            dense: vec![None; l],
            stats: AcceptanceStats::new(l),
            window: AcceptanceStats::new(l),
            rng,
            sweeps: 0,
        };
        for i in 0..l {
            chain.rebuild(i)?;
        }
        Ok(chain)
    }

    pub fn model(&self) -> &Model {
        self.model
    }

    pub fn sparse_cache(&self, i: usize) -> Option<&SparseCache> {
        self.sparse[i].as_ref()
    }

    pub fn dense_cache(&self, i: usize) -> Option<&DenseCache> {
        self.dense[i].as_ref()
    }

    /// Recomputes latent `i`'s caches from scratch.
    pub fn rebuild(&mut self, i: usize) -> Result<()> {
        if let LatentBlock::Gp(g) = &self.state.blocks[i] {
            let inputs = self.state.parent_inputs(&self.model.layout, i);
            match self.state.kind {
                StructuralKind::GpDense => self.dense[i] = Some(DenseCache::build(g, &inputs)?),
                _ => {
                    let (c, _) = SparseCache::build(g, &inputs, &self.model.priors.space_fill)?;
                    self.sparse[i] = Some(c);
                }
            }
        }
        Ok(())
    }

    pub fn sweep(&mut self) -> Result<()> {
        let model = self.model;
        gibbs_measurement_params(&mut self.state, model, self.data, &mut self.rng)?;
        gibbs_structural_noise(&mut self.state, model, &mut self.rng);
        gibbs_exogenous_mixture(&mut self.state, model, &mut self.rng);
        for &i in &model.layout.order {
            match (&self.state.blocks[i], self.state.kind) {
                (LatentBlock::Gp(_), StructuralKind::GpDense) => {
                    self.sample_dense_functions(i)?;
                    self.mh_latent_values(i)?;
                    self.mh_kernel_hyper(i)?;
                }
                (LatentBlock::Gp(_), _) => {
                    self.sample_pseudo_and_functions(i)?;
                    let inputs = self.state.parent_inputs(&model.layout, i);
                    for d in 0..self.state.blocks[i].as_gp().map_or(0, |g| g.pseudo_inputs.len()) {
                        self.pseudo_move(i, d, &inputs)?;
                    }
                    self.mh_latent_values(i)?;
                    self.mh_kernel_hyper(i)?;
                }
                (LatentBlock::Parametric(_), _) => {
                    gibbs_structural_parametric(i, &mut self.state, model, &mut self.rng)?;
                    self.mh_latent_values(i)?;
                }
                (LatentBlock::Exogenous(_), _) => {
                    self.mh_latent_values(i)?;
                }
            }
        }
        self.state.iteration += 1;
        self.sweeps += 1;
        Ok(())
    }

    /// Rebuilds latent `i`'s cache, draws `f̄` from its exact conditional and
    /// then every `f_n` given `f̄` and `x_n`.
    pub fn sample_pseudo_and_functions(&mut self, i: usize) -> Result<()> {
        let inputs = self.state.parent_inputs(&self.model.layout, i);
        let LatentBlock::Gp(g) = &mut self.state.blocks[i] else {
            return Ok(());
        };
        let (mut cache, w) = SparseCache::build(g, &inputs, &self.model.priors.space_fill)?;
        let x = &self.state.latents[i];
        sparse::sample_pseudo_functions(g, &mut cache, &w, x, &mut self.rng)?;
        sparse::sample_function_values(g, &cache, x, &mut self.rng);
        self.sparse[i] = Some(cache);
        Ok(())
    }

    pub fn sample_dense_functions(&mut self, i: usize) -> Result<()> {
        let LatentBlock::Gp(g) = &mut self.state.blocks[i] else {
            return Ok(());
        };
        let cache = self.dense[i].as_mut().expect("dense cache");
        dense::sample_dense_functions(g, cache, &self.state.latents[i], &mut self.rng)
    }

    /// Prepares moving pseudo-input `d` of latent `i` to `point`.
    pub fn prepare_pseudo(&self, i: usize, d: usize, point: Vec<f64>) -> Option<PseudoProposal> {
        let g = self.state.blocks[i].as_gp()?;
        let inputs = self.state.parent_inputs(&self.model.layout, i);
        self.sparse[i]
            .as_ref()?
            .prepare_pseudo(g, &inputs, d, point, &self.model.priors.space_fill)
    }

    pub fn pseudo_log_ratio(&self, i: usize, p: &PseudoProposal, f_new: f64) -> Option<f64> {
        let g = self.state.blocks[i].as_gp()?;
        self.sparse[i].as_ref()?.pseudo_log_ratio(p, &g.f, f_new)
    }

    pub fn commit_pseudo(&mut self, i: usize, p: PseudoProposal, f_new: f64) -> Result<()> {
        let LatentBlock::Gp(g) = &mut self.state.blocks[i] else {
            return Ok(());
        };
        self.sparse[i].as_mut().expect("sparse cache").commit_pseudo(g, p, f_new)
    }

    /// Joint move of pseudo-input `d` and its pseudo-function value.
    pub fn mh_pseudo_input_joint(&mut self, i: usize, d: usize) -> Result<bool> {
        let inputs = self.state.parent_inputs(&self.model.layout, i);
        self.pseudo_move(i, d, &inputs)
    }

    fn pseudo_move(&mut self, i: usize, d: usize, inputs: &[Vec<f64>]) -> Result<bool> {
        let step = self.pseudo_steps[i];
        let current = match self.state.blocks[i].as_gp() {
            Some(g) => g.pseudo_inputs[d].clone(),
            None => return Ok(false),
        };
        let point: Vec<f64> = current.iter().map(|v| v + step * std_normal(&mut self.rng)).collect();
        let z = std_normal(&mut self.rng);
        let u: f64 = self.rng.random();
        let prepared = match (self.state.blocks[i].as_gp(), &self.sparse[i]) {
            (Some(g), Some(c)) => c.prepare_pseudo(g, inputs, d, point, &self.model.priors.space_fill),
            _ => None,
        };
        let accepted = match prepared {
            Some(p) => {
                let f_new = p.cond_mean + p.cond_var.sqrt() * z;
                match self.pseudo_log_ratio(i, &p, f_new) {
                    Some(r) if u.ln() < r => {
                        self.commit_pseudo(i, p, f_new)?;
                        true
                    }
                    _ => false,
                }
            }
            None => false,
        };
        self.window.pseudo[i].record(accepted);
        Ok(accepted)
    }

    fn parametric_mean(&self, i: usize, parents: &[f64]) -> f64 {
        match &self.state.blocks[i] {
            LatentBlock::Parametric(p) => structural_features(self.state.kind, parents)
                .iter()
                .zip(&p.coef)
                .map(|(a, b)| a * b)
                .sum(),
            _ => 0.0,
        }
    }

    fn moved_parents(&self, c: usize, i: usize, n: usize, x_new: f64) -> Vec<f64> {
        self.model.layout.latent_parents[c]
            .iter()
            .map(|&p| if p == i { x_new } else { self.state.latents[p][n] })
            .collect()
    }

    /// Conditional of `f_i` at datapoint `n` given everything but `f_i` and
    /// `x_i`: FITC moments in sparse mode, the one-out GP conditional in dense.
    fn own_function_conditional(&self, i: usize, n: usize, g: &GpLatent) -> (f64, f64) {
        match (&self.sparse[i], &self.dense[i]) {
            (Some(c), _) => (c.mean[n], c.vdiag[n]),
            (None, Some(c)) => c.conditional(g, n, &g.f),
            _ => unreachable!("GP latent without a cache"),
        }
    }

    /// Scores moving `x_i` at datapoint `n` to `x_new`. With
    /// `collapse_functions`, every function value whose density involves
    /// `x_i^{(n)}` is redrawn from its exact conditional as part of the
    /// proposal, so the ratio is that of the model with those values
    /// integrated out. `z` supplies the standard normals for the redraws.
    /// `None` when the move is infeasible.
    pub fn propose_latent(
        &self,
        i: usize,
        n: usize,
        x_new: f64,
        z: &mut impl FnMut() -> f64,
    ) -> Result<Option<LatentMove>> {
        let st = &self.state;
        let layout = &self.model.layout;
        let collapse = self.config.collapse_functions;
        let x_old = st.latents[i][n];
        let mut mv = LatentMove {
            x_new,
            log_ratio: 0.0,
            redraws: Vec::new(),
            proposal_correction: 0.0,
            caches: Vec::with_capacity(layout.latent_children[i].len()),
        };

        match &st.blocks[i] {
            LatentBlock::Exogenous(m) => {
                let k = m.assignment.get(n).copied().unwrap_or(0);
                mv.log_ratio += ln_normal(x_new, m.means[k], m.vars[k]) - ln_normal(x_old, m.means[k], m.vars[k]);
            }
            LatentBlock::Gp(g) => {
                if collapse {
                    let (m, v) = self.own_function_conditional(i, n, g);
                    let (r, f_new, corr) =
                        collapsed_term(g.f[n], (m, v, x_old), (m, v, x_new), g.noise_var, z());
                    mv.log_ratio += r;
                    mv.proposal_correction += corr;
                    mv.redraws.push((i, f_new));
                } else {
                    mv.log_ratio += ln_normal(x_new, g.f[n], g.noise_var) - ln_normal(x_old, g.f[n], g.noise_var);
                }
            }
            LatentBlock::Parametric(p) => {
                let parents: Vec<f64> = layout.latent_parents[i].iter().map(|&k| st.latents[k][n]).collect();
                let mean = self.parametric_mean(i, &parents);
                mv.log_ratio += ln_normal(x_new, mean, p.noise_var) - ln_normal(x_old, mean, p.noise_var);
            }
        }

        for &c in &layout.latent_children[i] {
            let moved = self.moved_parents(c, i, n, x_new);
            let xc = st.latents[c][n];
            match &st.blocks[c] {
                LatentBlock::Gp(g) => {
                    let ((m0, v0), (m1, v1)) = if let Some(cache) = &self.sparse[c] {
                        let (k, w, mean, var) = match cache.column_for(g, &moved) {
                            Ok(v) => v,
                            Err(Error::NegativeVariance(_)) => return Ok(None),
                            Err(e) => return Err(e),
                        };
                        mv.caches.push(CacheUpdate::Sparse { c, k, w, mean, var });
                        ((cache.mean[n], cache.vdiag[n]), (mean, var))
                    } else {
                        let cache = self.dense[c].as_ref().expect("dense cache");
                        // K_{-n} does not involve input n, so one factor serves both
                        let rest = cache.leave_out(n);
                        let old = cache.conditional_at(&rest, g, n, &cache.inputs[n], &g.f);
                        let (mean, var) = cache.conditional_at(&rest, g, n, &moved, &g.f);
                        if !(var > 0.0) {
                            return Ok(None);
                        }
                        let chol = match cache.moved_factor(g, n, &moved) {
                            Ok(f) => f,
                            Err(Error::NotPositiveDefinite) => return Ok(None),
                            Err(e) => return Err(e),
                        };
                        mv.caches.push(CacheUpdate::Dense { c, input: moved, chol });
                        (old, (mean, var))
                    };
                    if collapse {
                        let (r, f_new, corr) = collapsed_term(g.f[n], (m0, v0, xc), (m1, v1, xc), g.noise_var, z());
                        mv.log_ratio += r;
                        mv.proposal_correction += corr;
                        mv.redraws.push((c, f_new));
                    } else {
                        if !(v1 > 0.0) {
                            return Ok(None);
                        }
                        mv.log_ratio += ln_normal(g.f[n], m1, v1) - ln_normal(g.f[n], m0, v0);
                    }
                }
                LatentBlock::Parametric(p) => {
                    let old: Vec<f64> = layout.latent_parents[c].iter().map(|&k| st.latents[k][n]).collect();
                    mv.log_ratio += ln_normal(xc, self.parametric_mean(c, &moved), p.noise_var)
                        - ln_normal(xc, self.parametric_mean(c, &old), p.noise_var);
                }
                LatentBlock::Exogenous(_) => {}
            }
        }

        for &(j, pos) in &layout.indicator_children[i] {
            let p = &st.measurement.indicators[j];
            let mean_old = p.intercept
                + p.loadings
                    .iter()
                    .zip(&layout.indicator_parents[j])
                    .map(|(l, &k)| l * st.latents[k][n])
                    .sum::<f64>();
            let mean_new = mean_old + p.loadings[pos] * (x_new - x_old);
            let y = self.data.columns[j][n];
            mv.log_ratio += ln_normal(y, mean_new, p.noise_var) - ln_normal(y, mean_old, p.noise_var);
        }
        Ok(Some(mv))
    }

    pub fn commit_latent(&mut self, i: usize, n: usize, mv: LatentMove) {
        for u in mv.caches {
            match u {
                CacheUpdate::Sparse { c, k, w, mean, var } => {
                    self.sparse[c].as_mut().expect("sparse cache").set_column(n, k, w, mean, var)
                }
                CacheUpdate::Dense { c, input, chol } => {
                    self.dense[c].as_mut().expect("dense cache").commit_input(n, input, chol)
                }
            }
        }
        for (c, f) in mv.redraws {
            if let Some(g) = self.state.blocks[c].as_gp_mut() {
                g.f[n] = f;
            }
        }
        self.state.latents[i][n] = mv.x_new;
    }

    /// Random-walk moves of `x_i` at every datapoint, each accepted on its own.
    pub fn mh_latent_values(&mut self, i: usize) -> Result<usize> {
        let step = self.latent_steps[i];
        let mut accepted = 0;
        for n in 0..self.state.n() {
            let x_new = self.state.latents[i][n] + step * std_normal(&mut self.rng);
            let mut rng = self.rng.clone();
            let proposal = self.propose_latent(i, n, x_new, &mut || std_normal(&mut rng))?;
            self.rng = rng;
            let u: f64 = self.rng.random();
            let ok = match proposal {
                Some(mv) if u.ln() < mv.log_ratio => {
                    self.commit_latent(i, n, mv);
                    true
                }
                _ => false,
            };
            accepted += ok as usize;
            self.window.latent[i].record(ok);
        }
        Ok(accepted)
    }

    /// Scores replacing latent `i`'s kernel hyperparameters by `hyper`.
    /// `None` when the proposed kernel matrices cannot be factored.
    pub fn hyper_proposal(&self, i: usize, hyper: KernelHyper) -> Result<Option<HyperProposal>> {
        let Some(g) = self.state.blocks[i].as_gp() else {
            return Ok(None);
        };
        let pr = &self.model.priors;
        let old = g.hyper;
        let mut prior = kernel_hyperprior_logdensity(hyper.amplitude, pr)?
            + kernel_hyperprior_logdensity(hyper.lengthscale, pr)?
            - kernel_hyperprior_logdensity(old.amplitude, pr)?
            - kernel_hyperprior_logdensity(old.lengthscale, pr)?;
        if !self.config.literal_hyper_mh {
            prior += (old.amplitude / hyper.amplitude).ln() + (old.lengthscale / hyper.lengthscale).ln();
        }
        let mut cand = g.clone();
        cand.hyper = hyper;
        let inputs = self.state.parent_inputs(&self.model.layout, i);
        if self.state.kind == StructuralKind::GpDense {
            let cur = DenseCache::build(g, &inputs)?;
            let new = match DenseCache::build(&cand, &inputs) {
                Ok(c) => c,
                Err(Error::NotPositiveDefinite) => return Ok(None),
                Err(e) => return Err(e),
            };
            let r = new.f_logprior(&g.f) - cur.f_logprior(&g.f) + prior;
            Ok(Some(HyperProposal {
                hyper,
                log_ratio: r,
                sparse: None,
                dense: Some(new),
            }))
        } else {
            let cur = self.sparse[i].as_ref().expect("sparse cache");
            let new = match SparseCache::build(&cand, &inputs, &self.model.priors.space_fill) {
                Ok((c, _)) => c,
                Err(Error::NotPositiveDefinite) | Err(Error::NegativeVariance(_)) => return Ok(None),
                Err(e) => return Err(e),
            };
            let r = new.pseudo_f_logprior(&g.pseudo_f) + new.f_loglik(&g.f)
                - cur.pseudo_f_logprior(&g.pseudo_f)
                - cur.f_loglik(&g.f)
                + prior;
            Ok(Some(HyperProposal {
                hyper,
                log_ratio: r,
                sparse: Some(new),
                dense: None,
            }))
        }
    }

    /// Multiplicative uniform proposal for both kernel hyperparameters.
    pub fn mh_kernel_hyper(&mut self, i: usize) -> Result<bool> {
        let Some(g) = self.state.blocks[i].as_gp() else {
            return Ok(false);
        };
        let alpha = self.config.hyper_alpha;
        let old = g.hyper;
        let draw = |v: f64, rng: &mut ChaCha8Rng| {
            if alpha >= 1.0 {
                v
            } else {
                rng.random_range(alpha * v..=v / alpha)
            }
        };
        let a = draw(old.amplitude, &mut self.rng);
        let b = draw(old.lengthscale, &mut self.rng);
        let u: f64 = self.rng.random();
        let hyper = KernelHyper { amplitude: a, lengthscale: b, ..old };
        let accepted = match self.hyper_proposal(i, hyper)? {
            Some(p) if u.ln() < p.log_ratio => {
                if let Some(g) = self.state.blocks[i].as_gp_mut() {
                    g.hyper = p.hyper;
                }
                if let Some(c) = p.sparse {
                    self.sparse[i] = Some(c);
                }
                if let Some(c) = p.dense {
                    self.dense[i] = Some(c);
                }
                true
            }
            _ => false,
        };
        self.window.hyper[i].record(accepted);
        Ok(accepted)
    }

    /// Robbins–Monro step on the log random-walk scales toward the target rate.
    fn adapt(&mut self) {
        let gain = 1.0 / (self.sweeps as f64 + 1.0).powf(0.6);
        let target = self.config.target_acceptance;
        for (steps, counts) in [
            (&mut self.latent_steps, &self.window.latent),
            (&mut self.pseudo_steps, &self.window.pseudo),
        ] {
            for (s, c) in steps.iter_mut().zip(counts) {
                if *s > 0.0 && c.proposed > 0 {
                    let rate = c.accepted as f64 / c.proposed as f64;
                    *s = (s.ln() + gain * (rate - target)).exp().clamp(1e-6, 1e3);
                }
            }
        }
    }

    /// Folds the sweep's acceptance counts into the totals, first adapting
    /// step sizes toward the target rate when `adapt` is set.
    pub fn end_sweep(&mut self, adapt: bool) {
        if adapt {
            self.adapt();
        }
        self.stats.absorb(&self.window);
        self.window = AcceptanceStats::new(self.state.blocks.len());
    }
}

fn run(
    model: &Model,
    data: &Observed,
    config: &SweepConfig,
    init: ChainState,
    rng: ChaCha8Rng,
    iterations: usize,
    burn_in: usize,
) -> Result<Trace> {
    let mut chain = Chain::new(model, data, config.clone(), init, rng)?;
    let mut draws = Vec::with_capacity((iterations - burn_in) / config.thinning);
    for t in 0..iterations {
        chain.sweep().map_err(|e| Error::ChainAborted {
            iteration: t as u64,
            message: e.to_string(),
        })?;
        let in_burn = t < burn_in;
        chain.end_sweep(in_burn && config.adapt_during_burnin);
        if t + 1 == burn_in {
            chain.stats = AcceptanceStats::new(model.n_latents());
        }
        if !in_burn && (t - burn_in + 1) % config.thinning == 0 {
            draws.push(chain.state.clone());
        }
        if (t + 1) % 1000 == 0 {
            log::debug!("iteration {} of {}", t + 1, iterations);
        }
    }
    Ok(Trace {
        kind: model.structural,
        graph: model.graph.clone(),
        graph_hash: model.graph.hash(),
        config: config.clone(),
        seed: None,
        acceptance: chain.stats,
        latent_steps: chain.latent_steps,
        pseudo_steps: chain.pseudo_steps,
        draws,
    })
}

/// Burn-in (with optional step adaptation, frozen afterwards), then retained
/// sweeps; every `thinning`-th post-burn-in state is kept.
pub fn run_chain(
    model: &Model,
    data: &Observed,
    config: &SweepConfig,
    init: ChainState,
    rng: ChaCha8Rng,
) -> Result<Trace> {
    run(model, data, config, init, rng, config.iterations, config.burn_in)
}

/// [`run_chain`] for the full-GP model, with the dense iteration budget.
pub fn run_chain_dense(
    model: &Model,
    data: &Observed,
    config: &SweepConfig,
    init: ChainState,
    rng: ChaCha8Rng,
) -> Result<Trace> {
    if model.structural != StructuralKind::GpDense || init.kind != StructuralKind::GpDense {
        return Err(Error::InvalidParameter("run_chain_dense needs a dense GP model".into()));
    }
    run(model, data, config, init, rng, config.dense_iterations, config.dense_burn_in)
}

/// Runs with the iteration budget matching the model kind.
pub fn fit_chain(
    model: &Model,
    data: &Observed,
    config: &SweepConfig,
    init: ChainState,
    rng: ChaCha8Rng,
) -> Result<Trace> {
    if model.structural == StructuralKind::GpDense {
        run_chain_dense(model, data, config, init, rng)
    } else {
        run_chain(model, data, config, init, rng)
    }
}
