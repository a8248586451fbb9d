//! Conjugate Gibbs updates: measurement regressions, structural noise,
//! exogenous mixtures and parametric structural regressions.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::kernel::CholeskyFactor;
use crate::model::{structural_features, ChainState, LatentBlock, Model, Observed};

pub(crate) fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Draw from inverse-gamma(shape, scale).
pub fn sample_inv_gamma<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> f64 {
    let g = Gamma::new(shape, 1.0 / scale).expect("positive gamma parameters");
    1.0 / g.sample(rng)
}

fn sample_gamma<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    Gamma::new(shape, 1.0).expect("positive shape").sample(rng)
}

/// Posterior `N(Prec⁻¹ b, Prec⁻¹)` of a Gaussian regression under an
/// isotropic prior: returns (mean, Cholesky of the precision).
pub(crate) fn regression_posterior(
    features: &[Vec<f64>],
    response: &[f64],
    k: usize,
    noise_var: f64,
    prior_var: f64,
) -> Result<(Vec<f64>, CholeskyFactor)> {
    let mut prec = DMatrix::<f64>::identity(k, k) / prior_var;
    let mut b = vec![0.0; k];
    for (phi, y) in features.iter().zip(response) {
        for r in 0..k {
            b[r] += phi[r] * y / noise_var;
            for c in 0..=r {
                prec[(r, c)] += phi[r] * phi[c] / noise_var;
            }
        }
    }
    for r in 0..k {
        for c in r + 1..k {
            prec[(r, c)] = prec[(c, r)];
        }
    }
    let chol = CholeskyFactor::decompose(&prec)?;
    Ok((chol.solve(&b), chol))
}

/// `mean + L⁻ᵀ z`, a draw with covariance `(L Lᵀ)⁻¹`.
pub(crate) fn draw_from_precision<R: Rng + ?Sized>(
    mean: &[f64],
    chol: &CholeskyFactor,
    rng: &mut R,
) -> Vec<f64> {
    let mut z: Vec<f64> = (0..mean.len()).map(|_| std_normal(rng)).collect();
    chol.solve_upper_in_place(&mut z);
    z.iter().zip(mean).map(|(a, b)| a + b).collect()
}

fn regression_gibbs<R: Rng + ?Sized>(
    features: &[Vec<f64>],
    response: &[f64],
    k: usize,
    noise_var: f64,
    model: &Model,
    rng: &mut R,
) -> Result<(Vec<f64>, f64)> {
    let pr = &model.priors;
    let (mean, chol) = regression_posterior(features, response, k, noise_var, pr.coef_var)?;
    let beta = draw_from_precision(&mean, &chol, rng);
    let rss: f64 = features
        .iter()
        .zip(response)
        .map(|(phi, y)| {
            let r = y - phi.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>();
            r * r
        })
        .sum();
    let v = sample_inv_gamma(
        pr.var_shape + 0.5 * response.len() as f64,
        pr.var_scale + 0.5 * rss,
        rng,
    );
    Ok((beta, v))
}

/// Intercepts and loadings of every free indicator given its noise variance,
/// then every noise variance given the coefficients. Anchored indicators only
/// get a new variance.
pub fn gibbs_measurement_params<R: Rng + ?Sized>(
    state: &mut ChainState,
    model: &Model,
    data: &Observed,
    rng: &mut R,
) -> Result<()> {
    let pr = &model.priors;
    let n = state.n();
    for (j, ps) in model.layout.indicator_parents.iter().enumerate() {
        let y = &data.columns[j];
        let p = &mut state.measurement.indicators[j];
        if p.anchored {
            let x = &state.latents[ps[0]];
            let rss: f64 = y.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
            p.noise_var = sample_inv_gamma(
                pr.var_shape + 0.5 * n as f64,
                pr.var_scale + 0.5 * rss,
                rng,
            );
            continue;
        }
        let feats: Vec<Vec<f64>> = (0..n)
            .map(|d| {
                let mut f = Vec::with_capacity(ps.len() + 1);
                f.push(1.0);
                f.extend(ps.iter().map(|&i| state.latents[i][d]));
                f
            })
            .collect();
        let (beta, v) = regression_gibbs(&feats, y, ps.len() + 1, p.noise_var, model, rng)?;
        p.intercept = beta[0];
        p.loadings.copy_from_slice(&beta[1..]);
        p.noise_var = v;
    }
    Ok(())
}

/// `v_ζ ~ IG(shape + N/2, scale + Σ(x - f)²/2)` for every GP latent.
pub fn gibbs_structural_noise<R: Rng + ?Sized>(state: &mut ChainState, model: &Model, rng: &mut R) {
    let pr = &model.priors;
    for (i, b) in state.blocks.iter_mut().enumerate() {
        if let LatentBlock::Gp(g) = b {
            let ss: f64 = state.latents[i]
                .iter()
                .zip(&g.f)
                .map(|(x, f)| (x - f) * (x - f))
                .sum();
            g.noise_var = sample_inv_gamma(
                pr.var_shape + 0.5 * g.f.len() as f64,
                pr.var_scale + 0.5 * ss,
                rng,
            );
        }
    }
}

/// Indicators, then weights, means and variances of every exogenous mixture.
pub fn gibbs_exogenous_mixture<R: Rng + ?Sized>(state: &mut ChainState, model: &Model, rng: &mut R) {
    let pr = &model.priors;
    for (i, b) in state.blocks.iter_mut().enumerate() {
        let LatentBlock::Exogenous(m) = b else { continue };
        let x = &state.latents[i];
        let k = m.weights.len();
        m.assignment.resize(x.len(), 0);
        let mut logits = vec![0.0; k];
        for (d, &xv) in x.iter().enumerate() {
            for c in 0..k {
                let r = xv - m.means[c];
                logits[c] = m.weights[c].ln() - 0.5 * (m.vars[c].ln() + r * r / m.vars[c]);
            }
            let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for l in logits.iter_mut() {
                *l = (*l - top).exp();
                total += *l;
            }
            let mut u = rng.random::<f64>() * total;
            let mut pick = k - 1;
            for (c, w) in logits.iter().enumerate() {
                if u < *w {
                    pick = c;
                    break;
                }
                u -= w;
            }
            m.assignment[d] = pick;
        }
        let mut counts = vec![0usize; k];
        let mut sums = vec![0.0; k];
        for (&z, xv) in m.assignment.iter().zip(x) {
            counts[z] += 1;
            sums[z] += xv;
        }
        let g: Vec<f64> = counts
            .iter()
            .map(|&c| sample_gamma(pr.dirichlet + c as f64, rng))
            .collect();
        let total: f64 = g.iter().sum();
        m.weights = g.iter().map(|v| v / total).collect();
        for c in 0..k {
            let prec = 1.0 / pr.mixture_mean_var + counts[c] as f64 / m.vars[c];
            let mean = (sums[c] / m.vars[c]) / prec;
            m.means[c] = mean + std_normal(rng) / prec.sqrt();
        }
        let mut ss = vec![0.0; k];
        for (&z, xv) in m.assignment.iter().zip(x) {
            ss[z] += (xv - m.means[z]).powi(2);
        }
        for c in 0..k {
            m.vars[c] = sample_inv_gamma(
                pr.mixture_var_shape + 0.5 * counts[c] as f64,
                pr.mixture_var_scale + 0.5 * ss[c],
                rng,
            );
        }
    }
}

/// Coefficients on the feature expansion, then structural noise, for a
/// linear or quadratic latent.
pub fn gibbs_structural_parametric<R: Rng + ?Sized>(
    i: usize,
    state: &mut ChainState,
    model: &Model,
    rng: &mut R,
) -> Result<()> {
    let kind = state.kind;
    let inputs = state.parent_inputs(&model.layout, i);
    let feats: Vec<Vec<f64>> = inputs.iter().map(|p| structural_features(kind, p)).collect();
    let x = state.latents[i].clone();
    let LatentBlock::Parametric(p) = &mut state.blocks[i] else {
        return Err(Error::InvalidParameter(format!("latent {i} is not parametric")));
    };
    let k = kind.feature_dim(model.layout.latent_parents[i].len());
    let (beta, v) = regression_gibbs(&feats, &x, k, p.noise_var, model, rng)?;
    p.coef = beta;
    p.noise_var = v;
    Ok(())
}
