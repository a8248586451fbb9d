
use nalgebra::DMatrix;
use statrs::function::gamma::ln_gamma;

use super::{
    structural_features, ChainState, GpLatent, LatentBlock, MeasurementParams, Model, Observed,
    ParametricLatent, PriorConfig, StructuralKind,
};
use crate::error::{Error, Result};
use crate::graph::Layout;
use crate::kernel::{
    clamp_fitc, fitc_conditional_diag, kernel_cross_matrix, space_fill_log_prior, CholeskyFactor,
};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[inline]
pub fn ln_normal(x: f64, mean: f64, var: f64) -> f64 {
    let r = x - mean;
    -0.5 * (LN_2PI + var.ln() + r * r / var)
}

/// Inverse-gamma with shape `a` and scale `b`: `b^a / Γ(a) v^(-a-1) exp(-b/v)`.
pub fn ln_inv_gamma(v: f64, shape: f64, scale: f64) -> f64 {
    if v <= 0.0 {
        return f64::NEG_INFINITY;
    }
    shape * scale.ln() - ln_gamma(shape) - (shape + 1.0) * v.ln() - scale / v
}

fn ln_gamma_density(x: f64, shape: f64, scale: f64) -> f64 {
    let tail = if shape == 1.0 { 0.0 } else { (shape - 1.0) * x.ln() };
    -ln_gamma(shape) - shape * scale.ln() + tail - x / scale
}

pub(crate) fn ln_dirichlet(w: &[f64], alpha: f64) -> f64 {
    let k = w.len() as f64;
    ln_gamma(k * alpha) - k * ln_gamma(alpha) + (alpha - 1.0) * w.iter().map(|x| x.ln()).sum::<f64>()
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn check_var(v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("variance {v}")))
    }
}

/// `Σ_j log N(y_j; λ_j0 + Λ_jᵀ x_Pj, v_j)` for one datapoint.
pub fn measurement_logdensity(
    y_row: &[f64],
    x_row: &[f64],
    params: &MeasurementParams,
    layout: &Layout,
) -> Result<f64> {
    if y_row.len() != params.indicators.len() {
        return Err(Error::DimensionMismatch {
            expected: params.indicators.len(),
            found: y_row.len(),
        });
    }
    if x_row.len() != layout.latent_parents.len() {
        return Err(Error::DimensionMismatch {
            expected: layout.latent_parents.len(),
            found: x_row.len(),
        });
    }
    let mut total = 0.0;
    for (j, (p, y)) in params.indicators.iter().zip(y_row).enumerate() {
        check_var(p.noise_var)?;
        let mean = p.intercept
            + p.loadings
                .iter()
                .zip(&layout.indicator_parents[j])
                .map(|(l, &i)| l * x_row[i])
                .sum::<f64>();
        total += ln_normal(*y, mean, p.noise_var);
    }
    Ok(total)
}

fn gaussian_ln_density(factor: &CholeskyFactor, v: &[f64]) -> f64 {
    -0.5 * (factor.quad_form(v) + factor.log_det() + v.len() as f64 * LN_2PI)
}

/// `log N(f̄; 0, K_M) + Σ_d log N(f_d; k_dM K_M⁻¹ f̄, v_dd) + Σ_d log N(x_d; f_d, v_ζ)`.
/// `inputs[d]` is the parent vector of datapoint `d`.
pub fn structural_logdensity_sparse(gp: &GpLatent, inputs: &[Vec<f64>], x: &[f64]) -> Result<f64> {
    if inputs.len() != x.len() || gp.f.len() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: gp.f.len(),
        });
    }
    check_var(gp.noise_var)?;
    let km = kernel_cross_matrix(&gp.pseudo_inputs, &gp.pseudo_inputs, &gp.hyper, true)?;
    let chol = CholeskyFactor::decompose(&km)?;
    let mut total = gaussian_ln_density(&chol, &gp.pseudo_f);
    let alpha = chol.solve(&gp.pseudo_f);
    let mut row = vec![0.0; gp.pseudo_inputs.len()];
    for (d, input) in inputs.iter().enumerate() {
        for (r, xb) in row.iter_mut().zip(&gp.pseudo_inputs) {
            *r = gp.hyper.cross(input, xb);
        }
        let mean: f64 = row.iter().zip(&alpha).map(|(a, b)| a * b).sum();
        let v = fitc_conditional_diag(gp.hyper.diag(), &row, &chol)?;
        total += ln_normal(gp.f[d], mean, v);
        total += ln_normal(x[d], gp.f[d], gp.noise_var);
    }
    Ok(total)
}

/// `log N(f; 0, K_N) + Σ_d log N(x_d; f_d, v_ζ)` for the full GP prior.
pub fn dense_structural_logdensity(gp: &GpLatent, inputs: &[Vec<f64>], x: &[f64]) -> Result<f64> {
    if inputs.len() != x.len() || gp.f.len() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: gp.f.len(),
        });
    }
    check_var(gp.noise_var)?;
    let kn = kernel_cross_matrix(inputs, inputs, &gp.hyper, true)?;
    let chol = CholeskyFactor::decompose(&kn)?;
    let mut total = gaussian_ln_density(&chol, &gp.f);
    for (f, xv) in gp.f.iter().zip(x) {
        total += ln_normal(*xv, *f, gp.noise_var);
    }
    Ok(total)
}

/// `Σ_d log N(x_d; βᵀφ(p_d), v_ζ)`.
pub fn parametric_structural_logdensity(
    kind: StructuralKind,
    p: &ParametricLatent,
    inputs: &[Vec<f64>],
    x: &[f64],
) -> Result<f64> {
    check_var(p.noise_var)?;
    let mut total = 0.0;
    for (input, xv) in inputs.iter().zip(x) {
        let phi = structural_features(kind, input);
        if phi.len() != p.coef.len() {
            return Err(Error::DimensionMismatch {
                expected: phi.len(),
                found: p.coef.len(),
            });
        }
        let mean: f64 = phi.iter().zip(&p.coef).map(|(a, b)| a * b).sum();
        total += ln_normal(*xv, mean, p.noise_var);
    }
    Ok(total)
}

/// Log of the gamma-mixture density placed on each kernel hyperparameter.
pub fn kernel_hyperprior_logdensity(value: f64, priors: &PriorConfig) -> Result<f64> {
    if !(value > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "kernel hyperparameter must be positive, got {value}"
        )));
    }
    let hp = &priors.hyperprior;
    let terms: Vec<f64> = hp
        .components
        .iter()
        .map(|&(w, k, s)| w.ln() + ln_gamma_density(value, k, hp.scale_of(s)))
        .collect();
    Ok(log_sum_exp(&terms))
}

/// Full unnormalized log posterior of a chain state. Written directly from
/// the model factors, independently of the sampler's incremental caches, so
/// it can serve as a reference for every acceptance ratio.
pub fn log_joint(state: &ChainState, data: &Observed, model: &Model) -> Result<f64> {
    state.check(model)?;
    let n = state.n();
    if data.n != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: data.n,
        });
    }
    let pr = &model.priors;
    let layout = &model.layout;
    let mut total = 0.0;

    for d in 0..n {
        total += measurement_logdensity(&data.row(d), &state.latent_row(d), &state.measurement, layout)?;
    }
    for p in &state.measurement.indicators {
        if !p.anchored {
            total += ln_normal(p.intercept, 0.0, pr.coef_var);
            total += p.loadings.iter().map(|l| ln_normal(*l, 0.0, pr.coef_var)).sum::<f64>();
        }
        total += ln_inv_gamma(p.noise_var, pr.var_shape, pr.var_scale);
    }

    for (i, block) in state.blocks.iter().enumerate() {
        let x = &state.latents[i];
        match block {
            LatentBlock::Exogenous(m) => {
                for (d, &z) in m.assignment.iter().enumerate() {
                    total += m.weights[z].ln() + ln_normal(x[d], m.means[z], m.vars[z]);
                }
                total += ln_dirichlet(&m.weights, pr.dirichlet);
                for (mu, v) in m.means.iter().zip(&m.vars) {
                    total += ln_normal(*mu, 0.0, pr.mixture_mean_var);
                    total += ln_inv_gamma(*v, pr.mixture_var_shape, pr.mixture_var_scale);
                }
            }
            LatentBlock::Gp(g) => {
                let inputs = state.parent_inputs(layout, i);
                total += match state.kind {
                    StructuralKind::GpDense => dense_structural_logdensity(g, &inputs, x)?,
                    _ => {
                        let sf = space_fill_log_prior(&g.pseudo_inputs, &pr.space_fill);
                        if sf == f64::NEG_INFINITY {
                            return Ok(f64::NEG_INFINITY);
                        }
                        sf + structural_logdensity_sparse(g, &inputs, x)?
                    }
                };
                total += ln_inv_gamma(g.noise_var, pr.var_shape, pr.var_scale);
                total += kernel_hyperprior_logdensity(g.hyper.amplitude, pr)?;
                total += kernel_hyperprior_logdensity(g.hyper.lengthscale, pr)?;
            }
            LatentBlock::Parametric(p) => {
                let inputs = state.parent_inputs(layout, i);
                total += parametric_structural_logdensity(state.kind, p, &inputs, x)?;
                total += p.coef.iter().map(|c| ln_normal(*c, 0.0, pr.coef_var)).sum::<f64>();
                total += ln_inv_gamma(p.noise_var, pr.var_shape, pr.var_scale);
            }
        }
    }
    Ok(total)
}

/// Sparse predictive `N(k_*M K_M⁻¹ f̄, k_** − k_*M K_M⁻¹ k_M*)` with the
/// factorization of `K_M` computed once.
#[derive(Debug, Clone)]
pub struct SparsePredictor {
    gp: GpLatent,
    chol: CholeskyFactor,
    alpha: Vec<f64>,
}

impl SparsePredictor {
    pub fn new(gp: &GpLatent) -> Result<Self> {
        let km = kernel_cross_matrix(&gp.pseudo_inputs, &gp.pseudo_inputs, &gp.hyper, true)?;
        let chol = CholeskyFactor::decompose_with_retry(&km, gp.hyper.jitter)?;
        let alpha = chol.solve(&gp.pseudo_f);
        Ok(SparsePredictor {
            gp: gp.clone(),
            chol,
            alpha,
        })
    }

    pub fn predict(&self, x_star: &[f64]) -> Result<(f64, f64)> {
        let dim = self.gp.pseudo_inputs.first().map(|p| p.len()).unwrap_or(0);
        if x_star.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: x_star.len(),
            });
        }
        let row: Vec<f64> = self
            .gp
            .pseudo_inputs
            .iter()
            .map(|xb| self.gp.hyper.cross(x_star, xb))
            .collect();
        let mean = row.iter().zip(&self.alpha).map(|(a, b)| a * b).sum();
        let var = self.gp.hyper.diag() - self.chol.quad_form(&row);
        Ok((mean, clamp_fitc(var, self.gp.hyper.diag()).unwrap_or(0.0)))
    }
}

/// Predictive mean and variance of a sparse GP latent's function at `x_star`.
pub fn gp_predict_function(x_star: &[f64], gp: &GpLatent) -> Result<(f64, f64)> {
    SparsePredictor::new(gp)?.predict(x_star)
}

/// Full-GP predictive conditioned on the function values at the training
/// inputs (dense mode).
#[derive(Debug, Clone)]
pub struct DensePredictor {
    inputs: Vec<Vec<f64>>,
    hyper: crate::kernel::KernelHyper,
    chol: CholeskyFactor,
    alpha: Vec<f64>,
}

impl DensePredictor {
    pub fn new(gp: &GpLatent, inputs: &[Vec<f64>]) -> Result<Self> {
        let kn = kernel_cross_matrix(inputs, inputs, &gp.hyper, true)?;
        let chol = CholeskyFactor::decompose_with_retry(&kn, gp.hyper.jitter)?;
        let alpha = chol.solve(&gp.f);
        Ok(DensePredictor {
            inputs: inputs.to_vec(),
            hyper: gp.hyper,
            chol,
            alpha,
        })
    }

    pub fn predict(&self, x_star: &[f64]) -> Result<(f64, f64)> {
        let row: Vec<f64> = self.inputs.iter().map(|x| self.hyper.cross(x_star, x)).collect();
        let mean = row.iter().zip(&self.alpha).map(|(a, b)| a * b).sum();
        let var = self.hyper.diag() - self.chol.quad_form(&row);
        Ok((mean, var.max(0.0)))
    }
}

/// Dense joint covariance of `(f̄, f)` under the sparse prior: `K_M` block,
/// `K_MN` cross block and `K_NM K_M⁻¹ K_MN + V` for `f`.
pub fn sparse_prior_covariance(gp: &GpLatent, inputs: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let m = gp.pseudo_inputs.len();
    let n = inputs.len();
    let km = kernel_cross_matrix(&gp.pseudo_inputs, &gp.pseudo_inputs, &gp.hyper, true)?;
    let kmn = kernel_cross_matrix(&gp.pseudo_inputs, inputs, &gp.hyper, false)?;
    let chol = CholeskyFactor::decompose(&km)?;
    let mut out = DMatrix::zeros(m + n, m + n);
    out.view_mut((0, 0), (m, m)).copy_from(&km);
    out.view_mut((0, m), (m, n)).copy_from(&kmn);
    out.view_mut((m, 0), (n, m)).copy_from(&kmn.transpose());
    let mut w = kmn.clone();
    for c in w.as_mut_slice().chunks_mut(m.max(1)) {
        chol.solve_lower_in_place(c);
    }
    let q = w.transpose() * &w;
    for a in 0..n {
        for b in 0..n {
            out[(m + a, m + b)] = q[(a, b)];
        }
        let v = clamp_fitc(gp.hyper.diag() - q[(a, a)], gp.hyper.diag())?;
        out[(m + a, m + a)] += v;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::KernelHyper;
    use crate::model::{GammaMixture, GammaParam, IndicatorParams};
    use approx::assert_relative_eq;

    fn one_indicator(intercept: f64, loading: f64, v: f64, anchored: bool) -> (MeasurementParams, Layout) {
        let g = crate::graph::parse_model_spec("latent X\nindicator Y parents: X anchor").unwrap();
        (
            MeasurementParams {
                indicators: vec![IndicatorParams {
                    intercept,
                    loadings: vec![loading],
                    noise_var: v,
                    anchored,
                }],
            },
            g.layout().unwrap(),
        )
    }

    #[test]
    fn measurement_examples() {
        let (p, l) = one_indicator(0.0, 1.0, 1.0, true);
        assert_relative_eq!(measurement_logdensity(&[0.0], &[0.0], &p, &l).unwrap(), -0.918_938_533_204_672_7, epsilon = 1e-12);
        let (p, l) = one_indicator(1.0, 2.0, 4.0, false);
        assert_relative_eq!(
            measurement_logdensity(&[7.0], &[3.0], &p, &l).unwrap(),
            -0.5 * (8.0 * std::f64::consts::PI).ln(),
            epsilon = 1e-12
        );
        let (p, l) = one_indicator(0.0, 1.0, 0.0, true);
        assert!(measurement_logdensity(&[0.0], &[0.0], &p, &l).is_err());
    }

    #[test]
    fn inverse_gamma_normalizes() {
        // trapezoid over a log grid
        let (a, b) = (3.0, 2.0);
        let mut s = 0.0;
        let mut prev = (1e-6f64, ln_inv_gamma(1e-6, a, b).exp());
        for k in 1..=200_000 {
            let v = 1e-6 * (1e9f64).powf(k as f64 / 200_000.0);
            let f = ln_inv_gamma(v, a, b).exp();
            s += 0.5 * (f + prev.1) * (v - prev.0);
            prev = (v, f);
        }
        assert!((s - 1.0).abs() < 1e-4, "{s}");
    }

    fn quadrature_mixture(x: f64, comps: &[(f64, f64, f64)]) -> f64 {
        // Each gamma normalized numerically on a fine grid, then mixed.
        comps
            .iter()
            .map(|&(w, k, theta)| {
                let kernel = |t: f64| t.powf(k - 1.0) * (-t / theta).exp();
                let upper = theta * (k + 60.0);
                let n = 400_000;
                let h = upper / n as f64;
                let mut z = 0.0;
                for i in 0..n {
                    let t = (i as f64 + 0.5) * h;
                    z += kernel(t) * h;
                }
                w * kernel(x) / z
            })
            .sum()
    }

    #[test]
    fn hyperprior_matches_quadrature() {
        let pr = PriorConfig::default();
        for &x in &[0.3, 5.0, 20.0, 77.0, 150.0] {
            let got = kernel_hyperprior_logdensity(x, &pr).unwrap();
            let want = quadrature_mixture(x, &[(0.5, 1.0, 20.0), (0.5, 10.0, 10.0)]).ln();
            assert!((got - want).abs() < 1e-6, "{x}: {got} vs {want}");
        }
        let rate = PriorConfig {
            hyperprior: GammaMixture {
                param: GammaParam::Rate,
                ..pr.hyperprior.clone()
            },
            ..pr.clone()
        };
        for &x in &[0.01, 0.5, 2.0] {
            let got = kernel_hyperprior_logdensity(x, &rate).unwrap();
            let want = quadrature_mixture(x, &[(0.5, 1.0, 1.0 / 20.0), (0.5, 10.0, 0.1)]).ln();
            assert!((got - want).abs() < 1e-6, "{x}: {got} vs {want}");
        }
        let near_zero = kernel_hyperprior_logdensity(1e-300, &pr).unwrap();
        assert_relative_eq!(near_zero, (0.5f64 / 20.0).ln(), epsilon = 1e-9);
        assert!(kernel_hyperprior_logdensity(-1.0, &pr).is_err());
        assert!(kernel_hyperprior_logdensity(0.0, &pr).is_err());
    }

    fn dense_gaussian(cov: &DMatrix<f64>, mean: &[f64], v: &[f64]) -> f64 {
        let lu = cov.clone().lu();
        let r = nalgebra::DVector::from_iterator(v.len(), v.iter().zip(mean).map(|(a, b)| a - b));
        let sol = lu.solve(&r).unwrap();
        -0.5 * (r.dot(&sol) + lu.determinant().ln() + v.len() as f64 * LN_2PI)
    }

    fn gp(m_inputs: Vec<Vec<f64>>, pf: Vec<f64>, f: Vec<f64>, a: f64, b: f64, v: f64) -> GpLatent {
        GpLatent {
            hyper: KernelHyper::new(a, b).unwrap(),
            noise_var: v,
            f,
            pseudo_inputs: m_inputs,
            pseudo_f: pf,
        }
    }

    #[test]
    fn sparse_density_examples() {
        // N = 0: only the pseudo-function prior
        let g = gp(vec![vec![0.1], vec![0.9]], vec![0.3, -0.2], vec![], 1.5, 0.7, 1.0);
        let km = kernel_cross_matrix(&g.pseudo_inputs, &g.pseudo_inputs, &g.hyper, true).unwrap();
        assert_relative_eq!(
            structural_logdensity_sparse(&g, &[], &[]).unwrap(),
            dense_gaussian(&km, &[0.0, 0.0], &g.pseudo_f),
            epsilon = 1e-10
        );

        // M = 1, N = 1: joint Gaussian of (f̄, f) built by hand, times the noise term
        let (a, b, xb, xin) = (2.0, 0.5, 0.3, -0.4);
        let g = gp(vec![vec![xb]], vec![0.7], vec![-0.1], a, b, 0.6);
        let kmm = a + 1e-4;
        let kmn = a * (-(xb - xin) * (xb - xin) / (2.0 * b)).exp();
        let cond_var = (a + 1e-4) - kmn * kmn / kmm;
        let joint = DMatrix::from_row_slice(2, 2, &[kmm, kmn, kmn, kmn * kmn / kmm + cond_var]);
        let want = dense_gaussian(&joint, &[0.0, 0.0], &[0.7, -0.1]) + ln_normal(0.25, -0.1, 0.6);
        let got = structural_logdensity_sparse(&g, &[vec![xin]], &[0.25]).unwrap();
        assert_relative_eq!(got, want, epsilon = 1e-10);

        // x = f exactly with v_ζ = 1
        let f = vec![0.2, -0.3, 0.5];
        let inputs = vec![vec![0.0], vec![1.0], vec![2.0]];
        let g1 = gp(vec![vec![0.5]], vec![0.1], f.clone(), 1.0, 1.0, 1.0);
        let g2 = gp(vec![vec![0.5]], vec![0.1], f.clone(), 1.0, 1.0, 1e6);
        let with = structural_logdensity_sparse(&g1, &inputs, &f).unwrap();
        let noise_free = structural_logdensity_sparse(&g2, &inputs, &f).unwrap()
            - 3.0 * ln_normal(0.0, 0.0, 1e6);
        assert_relative_eq!(with - noise_free, 3.0 * -0.5 * LN_2PI, epsilon = 1e-10);
    }

    #[test]
    fn predictor_examples() {
        let g = gp(vec![vec![-1.0], vec![1.0]], vec![0.4, -1.2], vec![], 2.0, 0.3, 1.0);
        let (m, _) = gp_predict_function(&[1.0], &g).unwrap();
        assert!((m - (-1.2)).abs() < 1e-3);
        let (m, v) = gp_predict_function(&[40.0], &g).unwrap();
        assert!(m.abs() < 1e-12);
        assert_relative_eq!(v, 2.0 + 1e-4, epsilon = 1e-12);
        assert!(gp_predict_function(&[1.0, 2.0], &g).is_err());

        // dense conditioning on the joint (f̄, f*) covariance
        let xs = [0.35];
        let pts = vec![vec![-1.0], vec![1.0], xs.to_vec()];
        let k = kernel_cross_matrix(&pts, &pts, &g.hyper, true).unwrap();
        let kmm = k.view((0, 0), (2, 2)).into_owned();
        let kms = k.view((0, 2), (2, 1)).into_owned();
        let inv = kmm.try_inverse().unwrap();
        let mean = (kms.transpose() * &inv * nalgebra::DVector::from_vec(vec![0.4, -1.2]))[0];
        let var = k[(2, 2)] - (kms.transpose() * &inv * &kms)[(0, 0)];
        let (m, v) = gp_predict_function(&xs, &g).unwrap();
        assert_relative_eq!(m, mean, epsilon = 1e-10);
        assert_relative_eq!(v, var, epsilon = 1e-10);
    }

    #[test]
    fn sparse_with_all_inputs_recovers_dense_prior() {
        let inputs: Vec<Vec<f64>> = (0..12).map(|i| vec![-2.0 + 0.37 * i as f64]).collect();
        let g = gp(inputs.clone(), vec![0.0; 12], vec![0.0; 12], 1.3, 0.8, 1.0);
        let cov = sparse_prior_covariance(&g, &inputs).unwrap();
        let dense = kernel_cross_matrix(&inputs, &inputs, &g.hyper, true).unwrap();
        let sparse_f = cov.view((12, 12), (12, 12)).into_owned();
        assert!((sparse_f - dense).amax() < 1e-3);
    }
}
