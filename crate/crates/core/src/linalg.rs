//! Dense linear-algebra helpers shared by the genotype and mixed-model code.
//!
//! Matrices are `nalgebra::DMatrix<f64>` throughout; the symmetric
//! eigendecomposition is delegated to `faer`. Both run single-threaded.

use nalgebra::{DMatrix, DVector};

use crate::error::{LerError, Result};

/// Eigenvalues below this fraction of the largest one are treated as zero
/// when a kernel is built from a low-rank factor.
pub(crate) const RANK_TOL: f64 = 1e-10;

/// Symmetric eigendecomposition with eigenvalues in non-increasing order.
pub fn sym_eigen(a: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(LerError::Argument(format!(
            "eigendecomposition needs a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if n == 0 {
        return Ok((Vec::new(), DMatrix::zeros(0, 0)));
    }
    let fm = faer::Mat::<f64>::from_fn(n, n, |i, j| a[(i, j)]);
    let evd = fm
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|e| LerError::Numerical(format!("eigendecomposition failed: {e:?}")))?;
    let vals = evd.S().column_vector();
    let vecs = evd.U();
    // faer returns ascending order
    let values: Vec<f64> = (0..n).rev().map(|k| vals[k]).collect();
    let vectors = DMatrix::from_fn(n, n, |i, j| vecs[(i, n - 1 - j)]);
    Ok((values, vectors))
}

/// `a' a`, computed as a single product.
pub(crate) fn gram(a: &DMatrix<f64>) -> DMatrix<f64> {
    a.tr_mul(a)
}

/// Eigen-structure of a PSD kernel `K = U diag(s) U'` with `U` having
/// orthonormal columns. Directions outside `U` carry eigenvalue zero.
#[derive(Debug, Clone)]
pub struct KernelSpectrum {
    pub vectors: DMatrix<f64>,
    pub values: Vec<f64>,
}

impl KernelSpectrum {
    /// Spectrum of a dense symmetric kernel. Fails when the kernel has an
    /// eigenvalue below `-1e-6`.
    pub fn from_dense(k: &DMatrix<f64>) -> Result<Self> {
        if k.nrows() != k.ncols() {
            return Err(LerError::Validation("kernel matrix is not square".into()));
        }
        let n = k.nrows();
        for i in 0..n {
            for j in 0..i {
                let d = (k[(i, j)] - k[(j, i)]).abs();
                let scale = k[(i, j)].abs().max(k[(j, i)].abs()).max(1.0);
                if d > 1e-10 * scale {
                    return Err(LerError::Validation(format!(
                        "kernel matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        let (mut values, vectors) = sym_eigen(k)?;
        if let Some(&min) = values.last() {
            if min < -1e-6 {
                return Err(LerError::Validation(format!(
                    "kernel matrix is not positive semidefinite (min eigenvalue {min:.3e})"
                )));
            }
        }
        for v in values.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        Ok(Self { vectors, values })
    }

    /// Spectrum of `K = Z Z'` from the factor `Z` (n x f). Uses the f x f Gram
    /// matrix when `f <= n`, otherwise the dense n x n kernel.
    pub fn from_factor(z: &DMatrix<f64>) -> Result<Self> {
        let n = z.nrows();
        let f = z.ncols();
        if f > n {
            return Self::from_dense(&(z * z.transpose()));
        }
        let (values, v) = sym_eigen(&gram(z))?;
        let max = values.first().copied().unwrap_or(0.0).max(0.0);
        let keep: Vec<usize> = (0..values.len())
            .filter(|&k| max > 0.0 && values[k] > RANK_TOL * max)
            .collect();
        let mut basis = DMatrix::zeros(f, keep.len());
        for (c, &k) in keep.iter().enumerate() {
            let inv = 1.0 / values[k].sqrt();
            for r in 0..f {
                basis[(r, c)] = v[(r, k)] * inv;
            }
        }
        let vectors = z * basis;
        let values = keep.iter().map(|&k| values[k]).collect();
        Ok(Self { vectors, values })
    }

    pub fn n(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn rank(&self) -> usize {
        self.values.len()
    }

    /// Multiply `(K + delta I)^{-1}` into each column of `b`.
    pub fn solve_shifted(&self, delta: f64, b: &DMatrix<f64>) -> DMatrix<f64> {
        let ub = self.vectors.tr_mul(b);
        let mut scaled = ub;
        for (k, &s) in self.values.iter().enumerate() {
            let w = 1.0 / (s + delta) - 1.0 / delta;
            scaled.row_mut(k).scale_mut(w);
        }
        let mut out = &self.vectors * scaled;
        out += b / delta;
        out
    }

    /// `K v` using the spectrum.
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut uv = self.vectors.tr_mul(v);
        for (k, &s) in self.values.iter().enumerate() {
            uv[k] *= s;
        }
        &self.vectors * uv
    }
}

/// Solve a symmetric positive definite system, falling back to an LU solve
/// when the Cholesky factorization breaks down.
pub(crate) fn spd_solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(ch) = a.clone().cholesky() {
        return Ok(ch.solve(b));
    }
    a.clone()
        .lu()
        .solve(b)
        .ok_or_else(|| LerError::Numerical("singular linear system".into()))
}

/// Ordinary least squares residuals of `y` on the columns of `x`.
pub(crate) fn ols_residuals(y: &DVector<f64>, x: &DMatrix<f64>) -> Result<DVector<f64>> {
    if x.ncols() == 0 {
        return Ok(y.clone());
    }
    let xtx = gram(x);
    let xty = DMatrix::from_column_slice(x.ncols(), 1, x.tr_mul(y).as_slice());
    let beta = spd_solve(&xtx, &xty)?;
    Ok(y - x * beta.column(0))
}

pub(crate) fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample variance with an `n - 1` denominator.
pub(crate) fn sample_variance(v: &[f64]) -> f64 {
    let n = v.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64
}

/// Pearson correlation; `None` when either side has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    assert_eq!(a.len(), b.len());
    let ma = mean(a);
    let mb = mean(b);
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some(sab / (saa * sbb).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn eigen_is_descending_and_reconstructs() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 1.0]);
        let (vals, vecs) = sym_eigen(&a).unwrap();
        assert!(vals[0] >= vals[1] && vals[1] >= vals[2]);
        let rebuilt = &vecs * DMatrix::from_diagonal(&DVector::from_vec(vals)) * vecs.transpose();
        assert_relative_eq!(rebuilt, a, epsilon = 1e-12);
    }

    #[test]
    fn factor_and_dense_spectra_solve_alike() {
        let z = DMatrix::from_fn(6, 3, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0);
        let k = &z * z.transpose();
        let dense = KernelSpectrum::from_dense(&k).unwrap();
        let low = KernelSpectrum::from_factor(&z).unwrap();
        let b = DMatrix::from_fn(6, 2, |i, j| (i + 2 * j) as f64);
        let direct = spd_solve(&(k.clone() + DMatrix::identity(6, 6) * 0.7), &b).unwrap();
        assert_relative_eq!(dense.solve_shifted(0.7, &b), direct, epsilon = 1e-10);
        assert_relative_eq!(low.solve_shifted(0.7, &b), direct, epsilon = 1e-10);
    }

    #[test]
    fn rejects_indefinite_kernel() {
        let k = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(KernelSpectrum::from_dense(&k), Err(LerError::Validation(_))));
    }
}
