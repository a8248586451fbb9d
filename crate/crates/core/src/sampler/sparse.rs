//! Pseudo-input GP latents: cached projections and the moves that use them.
//!
//! For a latent with pseudo-inputs `x̄` (M points) and data inputs (N points)
//! the cache holds `A = K_M⁻¹`, `K_MN`, `P = A K_MN`, the FITC diagonal, the
//! conditional means `K_NM A f̄` and `α = A f̄`, together with Cholesky factors
//! of `K_M` and of the space-filling matrix `D`. Swapping one pseudo-input
//! changes one row and column of `K_M`; the block-inverse identities below
//! keep every cached quantity exact in O(NM) per proposal.

use nalgebra::DMatrix;
use rand::Rng;

use super::gibbs::std_normal;
use crate::error::Result;
use crate::kernel::{clamp_fitc, kernel_cross_matrix, CholeskyFactor, SpaceFillPrior};
use crate::model::{ln_normal, GpLatent};

#[derive(Debug, Clone)]
pub struct SparseCache {
    pub chol: CholeskyFactor,
    pub a: DMatrix<f64>,
    pub kmn: DMatrix<f64>,
    pub proj: DMatrix<f64>,
    pub vdiag: Vec<f64>,
    pub mean: Vec<f64>,
    pub alpha: Vec<f64>,
    pub dchol: CholeskyFactor,
}

/// Solves `L w = b` for every column of a column-major M×N matrix.
fn solve_lower_columns(chol: &CholeskyFactor, mat: &mut DMatrix<f64>) {
    let m = mat.nrows().max(1);
    for col in mat.as_mut_slice().chunks_mut(m) {
        chol.solve_lower_in_place(col);
    }
}

fn solve_upper_columns(chol: &CholeskyFactor, mat: &mut DMatrix<f64>) {
    let m = mat.nrows().max(1);
    for col in mat.as_mut_slice().chunks_mut(m) {
        chol.solve_upper_in_place(col);
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl SparseCache {
    /// Builds every cached quantity from scratch, O(NM² + M³). Also returns
    /// `W = L⁻¹ K_MN`, needed by the pseudo-function draw.
    pub fn build(
        gp: &GpLatent,
        inputs: &[Vec<f64>],
        space_fill: &SpaceFillPrior,
    ) -> Result<(Self, DMatrix<f64>)> {
        let km = kernel_cross_matrix(&gp.pseudo_inputs, &gp.pseudo_inputs, &gp.hyper, true)?;
        let chol = CholeskyFactor::decompose_with_retry(&km, gp.hyper.jitter)?;
        let kmn = kernel_cross_matrix(&gp.pseudo_inputs, inputs, &gp.hyper, false)?;
        let m = km.nrows();
        let mut w = kmn.clone();
        solve_lower_columns(&chol, &mut w);
        let kdiag = gp.hyper.diag();
        let vdiag = w
            .column_iter()
            .map(|c| clamp_fitc(kdiag - c.norm_squared(), kdiag))
            .collect::<Result<Vec<_>>>()?;
        let mut proj = w.clone();
        solve_upper_columns(&chol, &mut proj);
        let a = chol.inverse();
        let alpha = chol.solve(&gp.pseudo_f);
        let mean = proj
            .as_slice()
            .chunks(m.max(1))
            .take(inputs.len())
            .map(|c| dot(c, &gp.pseudo_f))
            .collect();
        let dchol = CholeskyFactor::decompose(&space_fill.matrix(&gp.pseudo_inputs))?;
        Ok((
            SparseCache {
                chol,
                a,
                kmn,
                proj,
                vdiag,
                mean,
                alpha,
                dchol,
            },
            w,
        ))
    }

    pub fn m(&self) -> usize {
        self.a.nrows()
    }

    /// Refreshes `α` and the conditional means after `f̄` changes.
    pub fn set_pseudo_f(&mut self, pseudo_f: &[f64]) {
        self.alpha = self.chol.solve(pseudo_f);
        let m = self.m().max(1);
        for (mu, c) in self.mean.iter_mut().zip(self.proj.as_slice().chunks(m)) {
            *mu = dot(c, pseudo_f);
        }
    }

    /// `Σ_n log N(f_n; mean_n, v_nn)` under the cached conditionals.
    pub fn f_loglik(&self, f: &[f64]) -> f64 {
        f.iter()
            .zip(&self.mean)
            .zip(&self.vdiag)
            .map(|((f, m), v)| ln_normal(*f, *m, *v))
            .sum()
    }

    /// `log N(f̄; 0, K_M)`.
    pub fn pseudo_f_logprior(&self, pseudo_f: &[f64]) -> f64 {
        let m = pseudo_f.len() as f64;
        -0.5 * (dot(&self.alpha, pseudo_f) + self.chol.log_det() + m * (2.0 * std::f64::consts::PI).ln())
    }

    /// Conditional of `f` at a moved data input: returns
    /// (cross-kernel column, `L⁻¹ k`, mean, FITC variance).
    pub fn column_for(&self, gp: &GpLatent, input: &[f64]) -> Result<(Vec<f64>, Vec<f64>, f64, f64)> {
        let k: Vec<f64> = gp.pseudo_inputs.iter().map(|xb| gp.hyper.cross(input, xb)).collect();
        let mut w = k.clone();
        self.chol.solve_lower_in_place(&mut w);
        let kdiag = gp.hyper.diag();
        let v = clamp_fitc(kdiag - dot(&w, &w), kdiag)?;
        let mean = dot(&k, &self.alpha);
        Ok((k, w, mean, v))
    }

    /// Installs a column produced by [`SparseCache::column_for`] at datapoint `n`.
    pub fn set_column(&mut self, n: usize, k: Vec<f64>, mut w: Vec<f64>, mean: f64, v: f64) {
        self.chol.solve_upper_in_place(&mut w);
        self.kmn.column_mut(n).copy_from_slice(&k);
        self.proj.column_mut(n).copy_from_slice(&w);
        self.mean[n] = mean;
        self.vdiag[n] = v;
    }
}

/// Conditional of `f̄` given the latent values with `f` integrated out:
/// `x_n | f̄ ~ N(k_nᵀ K_M⁻¹ f̄, v_nn + v_ζ)` independently. Worked in the
/// whitened coordinates `f̄ = L u`, where the posterior precision of `u` is
/// `I + W Λ⁻¹ Wᵀ`. Returns (posterior mean of `u`, Cholesky of its precision).
fn whitened_posterior(
    w: &DMatrix<f64>,
    vdiag: &[f64],
    noise_var: f64,
    x: &[f64],
) -> Result<(Vec<f64>, CholeskyFactor)> {
    let m = w.nrows();
    let mut scaled = w.clone();
    let mut b = vec![0.0; m];
    for (n, mut col) in scaled.column_iter_mut().enumerate() {
        let lam = vdiag[n] + noise_var;
        for (bj, wj) in b.iter_mut().zip(col.iter()) {
            *bj += wj * x[n] / lam;
        }
        col /= lam.sqrt();
    }
    let mut prec = &scaled * scaled.transpose();
    for j in 0..m {
        prec[(j, j)] += 1.0;
    }
    let chol = CholeskyFactor::decompose(&prec)?;
    Ok((chol.solve(&b), chol))
}

/// Mean and covariance of `f̄ | x, x̄, inputs, v_ζ, Θ` with `f` integrated out.
pub fn pseudo_function_conditional(
    gp: &GpLatent,
    inputs: &[Vec<f64>],
    x: &[f64],
    space_fill: &SpaceFillPrior,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let (cache, w) = SparseCache::build(gp, inputs, space_fill)?;
    let (mu, pchol) = whitened_posterior(&w, &cache.vdiag, gp.noise_var, x)?;
    let l = cache.chol.lower();
    let mean = (l * nalgebra::DVector::from_column_slice(&mu)).as_slice().to_vec();
    // L S⁻¹ Lᵀ = (L_S⁻¹ Lᵀ)ᵀ (L_S⁻¹ Lᵀ)
    let mut t = l.transpose();
    solve_lower_columns(&pchol, &mut t);
    Ok((mean, t.transpose() * t))
}

/// Draws `f̄` from its exact conditional; `w` must come from the build that
/// produced `cache`. Updates the cache's `α` and means.
pub(crate) fn sample_pseudo_functions<R: Rng + ?Sized>(
    gp: &mut GpLatent,
    cache: &mut SparseCache,
    w: &DMatrix<f64>,
    x: &[f64],
    rng: &mut R,
) -> Result<()> {
    let (mu, pchol) = whitened_posterior(w, &cache.vdiag, gp.noise_var, x)?;
    let mut z: Vec<f64> = (0..mu.len()).map(|_| std_normal(rng)).collect();
    pchol.solve_upper_in_place(&mut z);
    let u: Vec<f64> = z.iter().zip(&mu).map(|(a, b)| a + b).collect();
    let l = cache.chol.lower();
    gp.pseudo_f = (l * nalgebra::DVector::from_vec(u)).as_slice().to_vec();
    cache.set_pseudo_f(&gp.pseudo_f);
    Ok(())
}

/// Mean and variance of `f_n | f̄, x_n`: precision-weighted combination of the
/// FITC conditional `N(f_mu, v_dd)` and the noisy observation `x_n`.
pub fn function_value_conditional(f_mu: f64, v_dd: f64, x: f64, noise_var: f64) -> (f64, f64) {
    if v_dd <= 0.0 {
        return (f_mu, 0.0);
    }
    let v = 1.0 / (1.0 / v_dd + 1.0 / noise_var);
    (v * (f_mu / v_dd + x / noise_var), v)
}

pub(crate) fn sample_function_values<R: Rng + ?Sized>(
    gp: &mut GpLatent,
    cache: &SparseCache,
    x: &[f64],
    rng: &mut R,
) {
    for n in 0..x.len() {
        let (m, v) = function_value_conditional(cache.mean[n], cache.vdiag[n], x[n], gp.noise_var);
        let z = std_normal(rng);
        gp.f[n] = if v > 0.0 { m + v.sqrt() * z } else { m };
    }
}

/// A prepared replacement of pseudo-input `d`: everything needed to score a
/// proposed pseudo-function value and to commit it.
#[derive(Debug, Clone)]
pub struct PseudoProposal {
    pub d: usize,
    pub point: Vec<f64>,
    /// Mean and variance of `f̄_d | f̄_{-d}` at the proposed input.
    pub cond_mean: f64,
    pub cond_var: f64,
    /// Same conditional at the current input.
    pub old_cond_mean: f64,
    pub old_cond_var: f64,
    kd: Vec<f64>,
    h: Vec<f64>,
    t_new: Vec<f64>,
    base: Vec<f64>,
    u: Vec<f64>,
    dchol: CholeskyFactor,
    kcol: Vec<f64>,
}

impl SparseCache {
    /// Prepares the move of pseudo-input `d` to `point`. `None` when the point
    /// leaves the prior's support or a factor breaks down (automatic reject).
    pub fn prepare_pseudo(
        &self,
        gp: &GpLatent,
        inputs: &[Vec<f64>],
        d: usize,
        point: Vec<f64>,
        space_fill: &SpaceFillPrior,
    ) -> Option<PseudoProposal> {
        if !space_fill.in_support(&point) {
            return None;
        }
        let m = self.m();
        let n = inputs.len();
        let hyper = &gp.hyper;
        // factor of K_M without point d; avoids dividing through 1/s_old
        let rest = self.chol.remove_point(d);
        let skip = |v: &[f64]| -> Vec<f64> { v.iter().enumerate().filter(|&(j, _)| j != d).map(|(_, x)| *x).collect() };
        let embed = |v: Vec<f64>| -> Vec<f64> {
            let mut out = v;
            out.insert(d, 0.0);
            out
        };
        // c': new cross-covariances with the other pseudo-inputs (zero at d)
        let mut c_new = vec![0.0; m];
        let mut c_old = vec![0.0; m];
        for (j, xb) in gp.pseudo_inputs.iter().enumerate() {
            if j != d {
                c_new[j] = hyper.cross(&point, xb);
                c_old[j] = hyper.cross(&gp.pseudo_inputs[d], xb);
            }
        }
        // h' = K_{-d}⁻¹ c', g = K_{-d}⁻¹ f̄_{-d}
        let h = embed(rest.solve(&skip(&c_new)));
        let s_new = hyper.diag() - dot(&c_new, &h);
        if !(s_new > 0.0) {
            return None;
        }
        let g = embed(rest.solve(&skip(&gp.pseudo_f)));
        let s_old = hyper.diag() - rest.quad_form(&skip(&c_old));
        if !(s_old > 0.0) {
            return None;
        }
        let old_cond_mean = dot(&c_old, &g);
        let e_old = gp.pseudo_f[d] - old_cond_mean;
        let cond_mean = dot(&c_new, &g);

        let kd: Vec<f64> = inputs.iter().map(|x| hyper.cross(&point, x)).collect();
        let mut t_new = vec![0.0; n];
        let mut base = vec![0.0; n];
        let mut u = vec![0.0; n];
        let ks = self.kmn.as_slice();
        let ps = self.proj.as_slice();
        for col in 0..n {
            // (K_M⁻¹ k_n)_d carries the contribution of point d
            let p_d = ps[col * m + d];
            u[col] = self.vdiag[col] + p_d * p_d * s_old;
            base[col] = self.mean[col] - p_d * e_old;
            t_new[col] = kd[col] - dot(&ks[col * m..(col + 1) * m], &h);
        }
        let mut kcol = c_new.clone();
        kcol[d] = hyper.diag();
        let mut dcol: Vec<f64> = gp
            .pseudo_inputs
            .iter()
            .map(|xb| space_fill.cross(&point, xb))
            .collect();
        dcol[d] = 1.0 + space_fill.nugget;
        let dchol = self.dchol.replace_point(d, &dcol).ok()?;
        Some(PseudoProposal {
            d,
            point,
            cond_mean,
            cond_var: s_new,
            old_cond_mean,
            old_cond_var: s_old,
            kd,
            h,
            t_new,
            base,
            u,
            dchol,
            kcol,
        })
    }

    /// Log acceptance ratio `log l⁰(x̄') - log l⁰(x̄)` for the proposed
    /// pseudo-function value `f_new`; `None` if a variance turns negative.
    pub fn pseudo_log_ratio(&self, p: &PseudoProposal, f: &[f64], f_new: f64) -> Option<f64> {
        let e_new = f_new - p.cond_mean;
        // Gaussian log ratios, with the log-variance terms taken as logs of
        // products over short runs to save most of the logarithms
        let mut quad = 0.0;
        let mut logs = 0.0;
        let mut prod = 1.0;
        for n in 0..f.len() {
            let v_new = p.u[n] - p.t_new[n] * p.t_new[n] / p.cond_var;
            let v_new = clamp_fitc(v_new, p.u[n]).ok()?;
            if v_new <= 0.0 {
                return None;
            }
            let m_new = p.base[n] + p.t_new[n] * e_new / p.cond_var;
            let (rn, ro) = (f[n] - m_new, f[n] - self.mean[n]);
            quad += rn * rn / v_new - ro * ro / self.vdiag[n];
            prod *= v_new / self.vdiag[n];
            if n % 8 == 7 {
                logs += prod.ln();
                prod = 1.0;
            }
        }
        logs += prod.ln();
        Some(p.dchol.log_det() - self.dchol.log_det() - 0.5 * (quad + logs))
    }

    /// Commits an accepted proposal to `gp` and the cache, O(NM + M²).
    pub fn commit_pseudo(&mut self, gp: &mut GpLatent, p: PseudoProposal, f_new: f64) -> Result<()> {
        let d = p.d;
        let m = self.m();
        let add = self.a[(d, d)];
        let s_new = p.cond_var;
        let e_new = f_new - p.cond_mean;
        let ad_scaled: Vec<f64> = self.a.column(d).iter().map(|v| v / add).collect();
        let ps = self.proj.as_mut_slice();
        let ks = self.kmn.as_mut_slice();
        for n in 0..self.mean.len() {
            let t = p.t_new[n];
            self.vdiag[n] = clamp_fitc(p.u[n] - t * t / s_new, p.u[n])?;
            self.mean[n] = p.base[n] + t * e_new / s_new;
            let col = &mut ps[n * m..(n + 1) * m];
            let pd = col[d];
            let ts = t / s_new;
            for j in 0..m {
                col[j] -= ad_scaled[j] * pd + p.h[j] * ts;
            }
            col[d] = ts;
            ks[n * m + d] = p.kd[n];
        }
        // A' from the block-inverse identities
        let ad: Vec<f64> = self.a.column(d).iter().cloned().collect();
        let asl = self.a.as_mut_slice();
        for c in 0..m {
            if c == d {
                continue;
            }
            let (adc, hc) = (ad[c] / add, p.h[c] / s_new);
            let col = &mut asl[c * m..(c + 1) * m];
            for r in 0..m {
                col[r] += -ad[r] * adc + p.h[r] * hc;
            }
        }
        for j in 0..m {
            if j != d {
                self.a[(j, d)] = -p.h[j] / s_new;
                self.a[(d, j)] = -p.h[j] / s_new;
            }
        }
        self.a[(d, d)] = 1.0 / s_new;
        self.chol = self.chol.replace_point(d, &p.kcol)?;
        self.dchol = p.dchol;
        gp.pseudo_inputs[d] = p.point;
        gp.pseudo_f[d] = f_new;
        self.alpha = (&self.a * nalgebra::DVector::from_column_slice(&gp.pseudo_f))
            .as_slice()
            .to_vec();
        Ok(())
    }
}
