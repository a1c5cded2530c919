//! Thin wrappers over `nalgebra` eigensolvers with sorted output and error mapping.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

const EIG_EPS: f64 = 1e-15;
const EIG_MAX_ITER: usize = 10_000;

/// Eigen-decomposition of a Hermitian matrix, eigenvalues ascending.
///
/// Column `k` of the returned matrix is the eigenvector of `values[k]`.
pub fn hermitian_eigen(m: DMatrix<Complex64>) -> Result<(Vec<f64>, DMatrix<Complex64>)> {
    let residual = off_diagonal_norm(&m);
    let eig = SymmetricEigen::try_new(m, EIG_EPS, EIG_MAX_ITER).ok_or(Error::Solver {
        solver: "hermitian eigensolver",
        residual,
    })?;
    let (values, vectors) = sort_pairs(
        eig.eigenvalues.iter().copied().collect(),
        eig.eigenvectors,
    );
    Ok((values, vectors))
}

/// Eigen-decomposition of a real symmetric matrix, eigenvalues ascending.
pub fn symmetric_eigen(m: DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let residual = off_diagonal_norm(&m.map(|x| Complex64::new(x, 0.0)));
    let eig = SymmetricEigen::try_new(m, EIG_EPS, EIG_MAX_ITER).ok_or(Error::Solver {
        solver: "symmetric eigensolver",
        residual,
    })?;
    Ok(sort_pairs(
        eig.eigenvalues.iter().copied().collect(),
        eig.eigenvectors,
    ))
}

fn sort_pairs<T: nalgebra::Scalar>(values: Vec<f64>, vectors: DMatrix<T>) -> (Vec<f64>, DMatrix<T>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let sorted_values = order.iter().map(|&k| values[k]).collect();
    let sorted_vectors = DMatrix::from_fn(vectors.nrows(), vectors.ncols(), |r, c| {
        vectors[(r, order[c])].clone()
    });
    (sorted_values, sorted_vectors)
}

fn off_diagonal_norm(m: &DMatrix<Complex64>) -> f64 {
    let mut acc = 0.0;
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            if r != c {
                acc += m[(r, c)].norm_sqr();
            }
        }
    }
    acc.sqrt()
}

/// Largest absolute entry of `m - m^H`.
pub fn hermiticity_defect(m: &DMatrix<Complex64>) -> f64 {
    let mut worst: f64 = 0.0;
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            worst = worst.max((m[(r, c)] - m[(c, r)].conj()).norm());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigenvalues_come_back_sorted() {
        let m = DMatrix::from_row_slice(3, 3, &[3.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 2.0]);
        let (vals, vecs) = symmetric_eigen(m).unwrap();
        assert_eq!(vals, vec![-1.0, 2.0, 3.0]);
        assert!((vecs[(1, 0)].abs() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn hermitian_pair_is_consistent() {
        let i = Complex64::i();
        let one = Complex64::new(1.0, 0.0);
        let m = DMatrix::from_row_slice(2, 2, &[one, i, -i, one]);
        let (vals, vecs) = hermitian_eigen(m.clone()).unwrap();
        assert!((vals[0] - 0.0).abs() < 1e-14 && (vals[1] - 2.0).abs() < 1e-14);
        let v = vecs.column(1);
        let mv = &m * v;
        for k in 0..2 {
            assert!((mv[k] - v[k] * vals[1]).norm() < 1e-13);
        }
    }
}
