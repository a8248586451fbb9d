//! Full-GP latents: O(N³) function draws and the conditional of one function
//! value given the rest, read off the Cholesky factor of `K_N` with that
//! point deleted.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::gibbs::std_normal;
use crate::error::Result;
use crate::kernel::{kernel_cross_matrix, CholeskyFactor};
use crate::model::GpLatent;

#[derive(Debug, Clone)]
pub struct DenseCache {
    pub inputs: Vec<Vec<f64>>,
    pub chol: CholeskyFactor,
}

impl DenseCache {
    pub fn build(gp: &GpLatent, inputs: &[Vec<f64>]) -> Result<Self> {
        let k = kernel_cross_matrix(inputs, inputs, &gp.hyper, true)?;
        let chol = CholeskyFactor::decompose_with_retry(&k, gp.hyper.jitter)?;
        Ok(DenseCache {
            inputs: inputs.to_vec(),
            chol,
        })
    }

    /// `log N(f; 0, K_N)`.
    pub fn f_logprior(&self, f: &[f64]) -> f64 {
        let n = f.len() as f64;
        -0.5 * (self.chol.quad_form(f) + self.chol.log_det() + n * (2.0 * std::f64::consts::PI).ln())
    }

    /// Factor of `K_{-n}`, O(N²).
    pub fn leave_out(&self, n: usize) -> CholeskyFactor {
        self.chol.remove_point(n)
    }

    /// Mean and variance of `f_n | f_{-n}` with input `n` placed at `input`;
    /// `rest` is [`DenseCache::leave_out`] for the same `n`.
    pub fn conditional_at(
        &self,
        rest: &CholeskyFactor,
        gp: &GpLatent,
        n: usize,
        input: &[f64],
        f: &[f64],
    ) -> (f64, f64) {
        let c = self.cross_without(gp, n, input);
        let f_rest: Vec<f64> = f.iter().enumerate().filter(|&(m, _)| m != n).map(|(_, v)| *v).collect();
        let mut w = c.clone();
        rest.solve_lower_in_place(&mut w);
        let var = gp.hyper.diag() - w.iter().map(|v| v * v).sum::<f64>();
        rest.solve_upper_in_place(&mut w);
        let mean = w.iter().zip(&f_rest).map(|(a, b)| a * b).sum();
        (mean, var)
    }

    /// Mean and variance of `f_n | f_{-n}` at the current inputs.
    pub fn conditional(&self, gp: &GpLatent, n: usize, f: &[f64]) -> (f64, f64) {
        self.conditional_at(&self.leave_out(n), gp, n, &self.inputs[n], f)
    }

    /// Factor with input `n` moved to `input`, O(N²).
    pub fn moved_factor(&self, gp: &GpLatent, n: usize, input: &[f64]) -> Result<CholeskyFactor> {
        let mut col = self.cross_without(gp, n, input);
        col.insert(n, gp.hyper.diag());
        self.chol.replace_point(n, &col)
    }

    /// Installs a factor from [`DenseCache::moved_factor`].
    pub fn commit_input(&mut self, n: usize, input: Vec<f64>, chol: CholeskyFactor) {
        self.chol = chol;
        self.inputs[n] = input;
    }

    /// Cross-covariances of `input` with every input but the `n`-th.
    fn cross_without(&self, gp: &GpLatent, n: usize, input: &[f64]) -> Vec<f64> {
        self.inputs
            .iter()
            .enumerate()
            .filter(|&(m, _)| m != n)
            .map(|(_, x)| gp.hyper.cross(input, x))
            .collect()
    }
}

/// Mean and covariance of `f | x` under the full GP prior:
/// `K (K + v I)⁻¹ x` and `K - K (K + v I)⁻¹ K`.
pub fn dense_function_conditional(
    gp: &GpLatent,
    inputs: &[Vec<f64>],
    x: &[f64],
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let k = kernel_cross_matrix(inputs, inputs, &gp.hyper, true)?;
    let n = k.nrows();
    let kv = &k + DMatrix::identity(n, n) * gp.noise_var;
    let chol = CholeskyFactor::decompose(&kv)?;
    let s = chol.solve(x);
    let mean = (&k * DVector::from_vec(s)).as_slice().to_vec();
    let mut w = k.clone();
    for col in w.as_mut_slice().chunks_mut(n.max(1)) {
        chol.solve_lower_in_place(col);
    }
    Ok((mean, &k - w.transpose() * w))
}

/// Exact draw of `f | x` by the prior-plus-correction construction:
/// `f = f₀ + K (K + v I)⁻¹ (x - f₀ - e)` with `f₀ ~ N(0, K)`, `e ~ N(0, v I)`.
/// Rebuilds the cache at the current inputs.
pub(crate) fn sample_dense_functions<R: Rng + ?Sized>(
    gp: &mut GpLatent,
    cache: &mut DenseCache,
    x: &[f64],
    rng: &mut R,
) -> Result<()> {
    *cache = DenseCache::build(gp, &cache.inputs)?;
    let n = x.len();
    let k = cache.chol.reconstruct();
    let z: Vec<f64> = (0..n).map(|_| std_normal(rng)).collect();
    let f0 = cache.chol.lower() * DVector::from_vec(z);
    let kv = &k + DMatrix::identity(n, n) * gp.noise_var;
    let kv_chol = CholeskyFactor::decompose_with_retry(&kv, gp.hyper.jitter)?;
    let sd = gp.noise_var.sqrt();
    let r: Vec<f64> = (0..n).map(|i| x[i] - f0[i] - sd * std_normal(rng)).collect();
    let s = kv_chol.solve(&r);
    let f = f0 + &k * DVector::from_vec(s);
    gp.f = f.as_slice().to_vec();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::KernelHyper;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn moved_conditional_and_commit_match_rebuild() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let inputs: Vec<Vec<f64>> = (0..8).map(|_| vec![rng.random_range(-2.0..2.0)]).collect();
        let gp = GpLatent {
            hyper: KernelHyper::new(1.7, 0.6).unwrap(),
            noise_var: 0.5,
            f: (0..8).map(|_| std_normal(&mut rng)).collect(),
            pseudo_inputs: vec![],
            pseudo_f: vec![],
        };
        let mut cache = DenseCache::build(&gp, &inputs).unwrap();

        // one-out conditional from the precision matrix
        let q = cache.chol.inverse();
        let qf: f64 = q.row(3).iter().zip(&gp.f).map(|(a, b)| a * b).sum();
        let (m0, v0) = cache.conditional(&gp, 3, &gp.f);
        assert!((m0 - (gp.f[3] - qf / q[(3, 3)])).abs() < 1e-8);
        assert!((v0 - 1.0 / q[(3, 3)]).abs() < 1e-10);

        let moved = vec![0.77];
        let rest = cache.leave_out(3);
        let (m, v) = cache.conditional_at(&rest, &gp, 3, &moved, &gp.f);
        let chol = cache.moved_factor(&gp, 3, &moved).unwrap();
        cache.commit_input(3, moved, chol);
        let fresh = DenseCache::build(&gp, &cache.inputs).unwrap();
        assert!((cache.chol.lower() - fresh.chol.lower()).amax() < 1e-10);
        let (mf, vf) = fresh.conditional(&gp, 3, &gp.f);
        assert!((m - mf).abs() < 1e-10 && (v - vf).abs() < 1e-10);
    }
}
