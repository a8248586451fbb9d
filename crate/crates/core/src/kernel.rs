//! Squared-exponential kernel, Cholesky factors with single-point replacement,
//! FITC conditional variances, and the space-filling pseudo-input prior.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Nugget added to the kernel diagonal (same point index only).
pub const JITTER: f64 = 1e-4;

/// Negative FITC variances above this (scaled by the self-kernel when that
/// exceeds one) are treated as roundoff and clamped to zero.
pub const FITC_NEGATIVE_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelHyper {
    pub amplitude: f64,
    /// `b` in `a * exp(-|x - x'|^2 / (2b))`.
    pub lengthscale: f64,
    pub jitter: f64,
}

impl KernelHyper {
    pub fn new(amplitude: f64, lengthscale: f64) -> Result<Self> {
        if !(amplitude > 0.0 && amplitude.is_finite()) {
            return Err(Error::InvalidParameter(format!("kernel amplitude {amplitude}")));
        }
        if !(lengthscale > 0.0 && lengthscale.is_finite()) {
            return Err(Error::InvalidParameter(format!("kernel lengthscale {lengthscale}")));
        }
        Ok(KernelHyper {
            amplitude,
            lengthscale,
            jitter: JITTER,
        })
    }

    /// Kernel value without the nugget.
    #[inline]
    pub fn cross(&self, xp: &[f64], xq: &[f64]) -> f64 {
        self.amplitude * (-0.5 * sq_dist(xp, xq) / self.lengthscale).exp()
    }

    /// Self-kernel of a point, nugget included.
    #[inline]
    pub fn diag(&self) -> f64 {
        self.amplitude + self.jitter
    }
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `a exp(-|xp - xq|^2 / 2b)`, plus the nugget when both arguments denote the
/// same point index.
pub fn se_kernel(xp: &[f64], xq: &[f64], hyper: &KernelHyper, same_index: bool) -> Result<f64> {
    if xp.len() != xq.len() {
        return Err(Error::DimensionMismatch {
            expected: xp.len(),
            found: xq.len(),
        });
    }
    let k = hyper.cross(xp, xq);
    Ok(if same_index { k + hyper.jitter } else { k })
}

/// `K_M` when `same_set` (nugget on the diagonal), otherwise the noiseless
/// cross-covariance `K_NM`.
pub fn kernel_cross_matrix(
    rows: &[Vec<f64>],
    cols: &[Vec<f64>],
    hyper: &KernelHyper,
    same_set: bool,
) -> Result<DMatrix<f64>> {
    let dim = rows.first().or(cols.first()).map(|v| v.len()).unwrap_or(0);
    if let Some(bad) = rows.iter().chain(cols).find(|v| v.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: bad.len(),
        });
    }
    if same_set && rows.len() != cols.len() {
        return Err(Error::DimensionMismatch {
            expected: rows.len(),
            found: cols.len(),
        });
    }
    Ok(DMatrix::from_fn(rows.len(), cols.len(), |i, j| {
        let k = hyper.cross(&rows[i], &cols[j]);
        if same_set && i == j {
            k + hyper.jitter
        } else {
            k
        }
    }))
}

/// Lower-triangular `L` with `L Lᵀ` equal to the factored matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyFactor {
    l: DMatrix<f64>,
}

impl CholeskyFactor {
    pub fn decompose(matrix: &DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::DimensionMismatch {
                expected: matrix.nrows(),
                found: matrix.ncols(),
            });
        }
        if matrix.nrows() == 0 {
            return Ok(CholeskyFactor {
                l: DMatrix::zeros(0, 0),
            });
        }
        let chol = nalgebra::Cholesky::new(matrix.clone()).ok_or(Error::NotPositiveDefinite)?;
        let l = chol.unpack();
        if l.diagonal().iter().any(|d| !(*d > 0.0) || !d.is_finite()) {
            return Err(Error::NotPositiveDefinite);
        }
        Ok(CholeskyFactor { l })
    }

    /// Factorizes; on failure retries once with the diagonal raised by nine
    /// more nuggets (total jitter ×10).
    pub fn decompose_with_retry(matrix: &DMatrix<f64>, jitter: f64) -> Result<Self> {
        match Self::decompose(matrix) {
            Ok(f) => Ok(f),
            Err(Error::NotPositiveDefinite) => {
                log::warn!(
                    "kernel matrix ({}x{}) not positive definite; retrying with jitter {:e}",
                    matrix.nrows(),
                    matrix.ncols(),
                    10.0 * jitter
                );
                let mut bumped = matrix.clone();
                for i in 0..bumped.nrows() {
                    bumped[(i, i)] += 9.0 * jitter;
                }
                Self::decompose(&bumped)
            }
            Err(e) => Err(e),
        }
    }

    pub fn from_lower(l: DMatrix<f64>) -> Self {
        CholeskyFactor { l }
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn lower(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.l * self.l.transpose()
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.l.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// Solves `L z = b` in place.
    pub fn solve_lower_in_place(&self, b: &mut [f64]) {
        let n = self.dim();
        let l = self.l.as_slice();
        for j in 0..n {
            let col = &l[j * n..(j + 1) * n];
            let zj = b[j] / col[j];
            b[j] = zj;
            for i in j + 1..n {
                b[i] -= col[i] * zj;
            }
        }
    }

    /// Solves `Lᵀ z = b` in place.
    pub fn solve_upper_in_place(&self, b: &mut [f64]) {
        let n = self.dim();
        let l = self.l.as_slice();
        for i in (0..n).rev() {
            let col = &l[i * n..(i + 1) * n];
            let mut s = b[i];
            for k in i + 1..n {
                s -= col[k] * b[k];
            }
            b[i] = s / col[i];
        }
    }

    /// `A⁻¹ b` for the factored `A`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut z = b.to_vec();
        self.solve_lower_in_place(&mut z);
        self.solve_upper_in_place(&mut z);
        z
    }

    /// `|L⁻¹ b|²`, i.e. `bᵀ A⁻¹ b`.
    pub fn quad_form(&self, b: &[f64]) -> f64 {
        let mut z = b.to_vec();
        self.solve_lower_in_place(&mut z);
        z.iter().map(|v| v * v).sum()
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        let n = self.dim();
        // X = L⁻¹ column by column, then A⁻¹ = Xᵀ X
        let mut x = DMatrix::<f64>::identity(n, n);
        for col in x.as_mut_slice().chunks_mut(n.max(1)) {
            self.solve_lower_in_place(col);
        }
        x.tr_mul(&x)
    }

    /// Factor of the matrix with row/column `index` replaced by `new_col`
    /// (which includes the new diagonal entry). `O(M²)`.
    pub fn replace_point(&self, index: usize, new_col: &[f64]) -> Result<Self> {
        let n = self.dim();
        if new_col.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: new_col.len(),
            });
        }
        if index >= n {
            return Err(Error::InvalidParameter(format!(
                "replacement index {index} out of range for dimension {n}"
            )));
        }
        let d = index;
        let mut l = self.l.clone();

        // new row d, left of the diagonal: L11 l21 = c[..d]
        let mut l21 = new_col[..d].to_vec();
        {
            let ls = l.as_slice();
            for j in 0..d {
                let col = &ls[j * n..(j + 1) * n];
                let zj = l21[j] / col[j];
                l21[j] = zj;
                for i in j + 1..d {
                    l21[i] -= col[i] * zj;
                }
            }
        }
        let pivot = new_col[d] - l21.iter().map(|v| v * v).sum::<f64>();
        if !(pivot > 0.0) || !pivot.is_finite() {
            return Err(Error::NotPositiveDefinite);
        }
        let l22 = pivot.sqrt();

        // new column d below the diagonal: (c[d+1..] - L31 l21) / l22
        let old_l32: Vec<f64> = (d + 1..n).map(|i| l[(i, d)]).collect();
        let mut new_l32: Vec<f64> = new_col[d + 1..].to_vec();
        {
            let ls = l.as_slice();
            for (j, &lj) in l21.iter().enumerate() {
                let col = &ls[j * n..(j + 1) * n];
                for (k, v) in new_l32.iter_mut().enumerate() {
                    *v -= col[d + 1 + k] * lj;
                }
            }
        }
        for v in new_l32.iter_mut() {
            *v /= l22;
        }

        for (j, &v) in l21.iter().enumerate() {
            l[(d, j)] = v;
        }
        l[(d, d)] = l22;
        for (k, &v) in new_l32.iter().enumerate() {
            l[(d + 1 + k, d)] = v;
        }

        // trailing block: L33' L33'ᵀ = L33 L33ᵀ + l32 l32ᵀ - l32' l32'ᵀ
        let mut w = old_l32;
        rank_one_update(&mut l, d + 1, &mut w);
        let mut w = new_l32;
        rank_one_downdate(&mut l, d + 1, &mut w)?;
        Ok(CholeskyFactor { l })
    }
}

impl CholeskyFactor {
    /// Factor of the matrix with row and column `index` deleted. `O(M²)`.
    pub fn remove_point(&self, index: usize) -> Self {
        let n = self.dim();
        assert!(index < n, "removal index {index} out of range for dimension {n}");
        let mut w: Vec<f64> = (index + 1..n).map(|i| self.l[(i, index)]).collect();
        let mut l = self.l.clone().remove_row(index).remove_column(index);
        // L33' L33'ᵀ = L33 L33ᵀ + l32 l32ᵀ
        rank_one_update(&mut l, index, &mut w);
        CholeskyFactor { l }
    }
}

/// `S S'ᵀ = S Sᵀ + w wᵀ` for the trailing block `S = L[start.., start..]`.
fn rank_one_update(l: &mut DMatrix<f64>, start: usize, w: &mut [f64]) {
    let n = l.nrows();
    let ls = l.as_mut_slice();
    for k in 0..w.len() {
        let kk = start + k;
        let lkk = ls[kk * n + kk];
        let r = lkk.hypot(w[k]);
        let c = r / lkk;
        let s = w[k] / lkk;
        ls[kk * n + kk] = r;
        let col = &mut ls[kk * n..(kk + 1) * n];
        for i in k + 1..w.len() {
            let li = (col[start + i] + s * w[i]) / c;
            col[start + i] = li;
            w[i] = c * w[i] - s * li;
        }
    }
}

/// `S S'ᵀ = S Sᵀ - w wᵀ`; fails if the result is not positive definite.
fn rank_one_downdate(l: &mut DMatrix<f64>, start: usize, w: &mut [f64]) -> Result<()> {
    let n = l.nrows();
    let ls = l.as_mut_slice();
    for k in 0..w.len() {
        let kk = start + k;
        let lkk = ls[kk * n + kk];
        let r2 = (lkk - w[k]) * (lkk + w[k]);
        if !(r2 > 0.0) || !r2.is_finite() {
            return Err(Error::NotPositiveDefinite);
        }
        let r = r2.sqrt();
        let c = r / lkk;
        let s = w[k] / lkk;
        ls[kk * n + kk] = r;
        let col = &mut ls[kk * n..(kk + 1) * n];
        for i in k + 1..w.len() {
            let li = (col[start + i] - s * w[i]) / c;
            col[start + i] = li;
            w[i] = c * w[i] - s * li;
        }
    }
    Ok(())
}

/// `k_dd - k_dMᵀ K_M⁻¹ k_dM`, clamped at zero within roundoff.
pub fn fitc_conditional_diag(k_dd: f64, k_row: &[f64], factor: &CholeskyFactor) -> Result<f64> {
    if k_row.len() != factor.dim() {
        return Err(Error::DimensionMismatch {
            expected: factor.dim(),
            found: k_row.len(),
        });
    }
    if k_row.is_empty() {
        return Ok(k_dd);
    }
    clamp_fitc(k_dd - factor.quad_form(k_row), k_dd)
}

pub(crate) fn clamp_fitc(v: f64, k_dd: f64) -> Result<f64> {
    if v >= 0.0 {
        Ok(v)
    } else if v >= -FITC_NEGATIVE_TOLERANCE * k_dd.max(1.0) {
        Ok(0.0)
    } else {
        Err(Error::NegativeVariance(v))
    }
}

/// Prior over pseudo-inputs proportional to `det(D)`, supported on
/// `[-bound, bound]^p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpaceFillPrior {
    pub bound: f64,
    pub lengthscale: f64,
    pub nugget: f64,
}

impl SpaceFillPrior {
    pub fn new(bound: f64) -> Self {
        SpaceFillPrior {
            bound,
            lengthscale: 0.1,
            nugget: JITTER,
        }
    }

    /// Bound set to three times the largest standard deviation.
    pub fn from_std_devs(sds: &[f64]) -> Self {
        let max = sds.iter().cloned().fold(0.0, f64::max);
        Self::new(3.0 * max)
    }

    pub fn in_support(&self, point: &[f64]) -> bool {
        point.iter().all(|x| x.abs() <= self.bound)
    }

    #[inline]
    pub(crate) fn cross(&self, a: &[f64], b: &[f64]) -> f64 {
        (-0.5 * sq_dist(a, b) / (self.lengthscale * self.lengthscale)).exp()
    }

    /// The matrix `D` whose determinant is the unnormalized prior.
    pub fn matrix(&self, points: &[Vec<f64>]) -> DMatrix<f64> {
        let m = points.len();
        DMatrix::from_fn(m, m, |i, j| {
            let k = self.cross(&points[i], &points[j]);
            if i == j {
                k + self.nugget
            } else {
                k
            }
        })
    }
}

/// `log det D`, or minus infinity outside the hypercube.
pub fn space_fill_log_prior(pseudo_inputs: &[Vec<f64>], prior: &SpaceFillPrior) -> f64 {
    if pseudo_inputs.iter().any(|p| !prior.in_support(p)) {
        return f64::NEG_INFINITY;
    }
    match CholeskyFactor::decompose(&prior.matrix(pseudo_inputs)) {
        Ok(f) => f.log_det(),
        Err(_) => f64::NEG_INFINITY,
    }
}
