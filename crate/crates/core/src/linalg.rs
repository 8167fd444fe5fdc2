//! Small dense helpers shared by the solvers.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// `(X + Xᵀ) / 2`.
pub fn symmetrize(x: &DMatrix<f64>) -> DMatrix<f64> {
    (x + x.transpose()) * 0.5
}

/// Symmetrize an `n×n` block stored row-major in `values`.
pub fn symmetrize_slice(values: &mut [f64], n: usize) {
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (values[i * n + j] + values[j * n + i]);
            values[i * n + j] = avg;
            values[j * n + i] = avg;
        }
    }
}

/// Largest absolute entry.
pub fn max_abs(x: &DMatrix<f64>) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn max_abs_vec(x: &DVector<f64>) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    debug_assert_eq!(a.shape(), b.shape());
    a.iter()
        .zip(b.iter())
        .fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

pub fn l1_norm(values: &[f64]) -> f64 {
    values.iter().map(|v| v.abs()).sum()
}

/// Asymmetry measure `max |X - Xᵀ|`.
pub fn asymmetry(x: &DMatrix<f64>) -> f64 {
    max_abs_diff(x, &x.transpose())
}

/// Smallest eigenvalue of the symmetric part of `x`.
pub fn min_eigenvalue(x: &DMatrix<f64>) -> f64 {
    if x.nrows() == 0 {
        return 0.0;
    }
    symmetrize(x)
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |m, v| m.min(*v))
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
pub fn spd_inverse(x: &DMatrix<f64>, name: &str) -> Result<DMatrix<f64>> {
    let chol = symmetrize(x)
        .cholesky()
        .ok_or_else(|| Error::InvalidInput(format!("{name} not positive definite")))?;
    Ok(symmetrize(&chol.inverse()))
}

/// `X ⊗ Y`.
pub fn kron(x: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
    x.kronecker(y)
}

/// Block `(i, j)` of size `rows×cols` from a matrix partitioned uniformly.
pub fn block(x: &DMatrix<f64>, i: usize, j: usize, rows: usize, cols: usize) -> DMatrix<f64> {
    x.view((i * rows, j * cols), (rows, cols)).into_owned()
}

pub fn set_block(x: &mut DMatrix<f64>, i: usize, j: usize, value: &DMatrix<f64>) {
    let (r, c) = value.shape();
    x.view_mut((i * r, j * c), (r, c)).copy_from(value);
}

pub fn vec_block(x: &DVector<f64>, i: usize, n: usize) -> DVector<f64> {
    x.rows(i * n, n).into_owned()
}

pub fn set_vec_block(x: &mut DVector<f64>, i: usize, value: &DVector<f64>) {
    let n = value.len();
    x.rows_mut(i * n, n).copy_from(value);
}

/// Block permutation `J_{ij}` of size `blocks·n`, exchanging block rows `i`
/// and `j` (0-based) of the identity.
pub fn block_swap(blocks: usize, n: usize, i: usize, j: usize) -> DMatrix<f64> {
    let mut perm: Vec<usize> = (0..blocks).collect();
    perm.swap(i, j);
    let mut out = DMatrix::zeros(blocks * n, blocks * n);
    for (row, &col) in perm.iter().enumerate() {
        for k in 0..n {
            out[(row * n + k, col * n + k)] = 1.0;
        }
    }
    out
}

/// Sum with Kahan-free pairwise reduction; order independent of thread count.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        len if len <= 8 => values.iter().sum(),
        len => {
            let (lo, hi) = values.split_at(len / 2);
            pairwise_sum(lo) + pairwise_sum(hi)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_swap_is_an_involution() {
        let j = block_swap(4, 2, 1, 3);
        assert_eq!(&j * &j, DMatrix::identity(8, 8));
        assert_eq!(j.transpose(), j);
    }

    #[test]
    fn spd_inverse_rejects_zero() {
        let z = DMatrix::from_element(1, 1, 0.0);
        assert!(spd_inverse(&z, "R").is_err());
    }

    #[test]
    fn pairwise_sum_matches_naive_on_integers() {
        let v: Vec<f64> = (1..=1000).map(f64::from).collect();
        assert_eq!(pairwise_sum(&v), 500_500.0);
    }
}
