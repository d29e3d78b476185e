//! Dense helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Eigen-decomposition of a symmetric matrix, eigenvalues in descending order.
///
/// Each eigenvector is oriented so that its largest-magnitude entry is positive.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

pub fn sym_eigen(matrix: &DMatrix<f64>) -> Result<SymEigen> {
    let dim = matrix.nrows();
    if dim != matrix.ncols() {
        return Err(Error::Linalg(format!(
            "eigen-decomposition of non-square {}x{} matrix",
            dim,
            matrix.ncols()
        )));
    }
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::Linalg("matrix has non-finite entries".into()));
    }
    let eig = matrix
        .clone()
        .try_symmetric_eigen(f64::EPSILON, 0)
        .ok_or_else(|| Error::Linalg("symmetric eigen-decomposition did not converge".into()))?;

    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let values = DVector::from_iterator(dim, order.iter().map(|&k| eig.eigenvalues[k]));
    let mut vectors = DMatrix::zeros(dim, dim);
    for (dst, &src) in order.iter().enumerate() {
        let col = eig.eigenvectors.column(src);
        let pivot = col
            .iter()
            .copied()
            .max_by(|a, b| a.abs().total_cmp(&b.abs()))
            .unwrap_or(1.0);
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        vectors.set_column(dst, &(col * sign));
    }
    Ok(SymEigen { values, vectors })
}

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the signs of
/// `diag(R)` folded into `Q`.
pub fn random_orthogonal<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DMatrix<f64> {
    let gauss = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = gauss.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..dim {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// `V diag(f(values)) V^T`.
pub fn spectral_function(
    vectors: &DMatrix<f64>,
    values: &[f64],
    f: impl Fn(f64) -> f64,
) -> DMatrix<f64> {
    let scaled = DMatrix::from_fn(vectors.nrows(), vectors.ncols(), |i, j| {
        vectors[(i, j)] * f(values[j])
    });
    scaled * vectors.transpose()
}

/// Same as [`spectral_function`] for a symmetric input matrix.
pub fn sym_function(matrix: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> Result<DMatrix<f64>> {
    let eig = sym_eigen(matrix)?;
    Ok(spectral_function(
        &eig.vectors,
        eig.values.as_slice(),
        f,
    ))
}

/// Symmetric Toeplitz matrix with entries `rho^|i-j|`.
pub fn toeplitz_power(dim: usize, rho: f64) -> DMatrix<f64> {
    DMatrix::from_fn(dim, dim, |i, j| rho.powi(i.abs_diff(j) as i32))
}

pub fn frobenius_sq(matrix: &DMatrix<f64>) -> f64 {
    matrix.iter().map(|v| v * v).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn eigen_descending_and_reconstructs() {
        let m = toeplitz_power(6, 0.4);
        let eig = sym_eigen(&m).unwrap();
        for k in 1..6 {
            assert!(eig.values[k - 1] >= eig.values[k]);
        }
        let back = spectral_function(&eig.vectors, eig.values.as_slice(), |x| x);
        assert_abs_diff_eq!((back - &m).norm(), 0.0, epsilon = 1e-12);
        for col in eig.vectors.column_iter() {
            let pivot = col.iter().copied().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap();
            assert!(pivot > 0.0);
        }
    }

    #[test]
    fn toeplitz_4x4_eigenvalues() {
        // 30-digit mpmath eigenvalues of the 4x4 Toeplitz matrix 0.4^|i-j|.
        let eig = sym_eigen(&toeplitz_power(4, 0.4)).unwrap();
        let expected = [
            1.816_657_164_498_990_8,
            1.060_957_334_777_609,
            0.647_342_835_501_009_2,
            0.475_042_665_222_391_1,
        ];
        for (got, want) in eig.values.iter().zip(expected) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-12);
        }
    }

    #[test]
    fn random_orthogonal_is_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = random_orthogonal(20, &mut rng);
        let id = q.transpose() * &q;
        assert_abs_diff_eq!((id - DMatrix::identity(20, 20)).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn sym_function_sqrt_squares_back() {
        let m = toeplitz_power(5, 0.3);
        let root = sym_function(&m, f64::sqrt).unwrap();
        assert_abs_diff_eq!((&root * &root - &m).norm(), 0.0, epsilon = 1e-12);
    }
}
