//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::scalar::Scalar;

/// Eigenvalues of a symmetric matrix in descending order.
pub fn eigenvalues_desc<T: Scalar>(m: &DMatrix<T>) -> Vec<T> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let mut ev: Vec<T> = m.clone().symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| b.partial_cmp(a).expect("finite eigenvalues"));
    ev
}

/// Operator norm of a symmetric matrix (largest absolute eigenvalue).
pub fn sym_op_norm<T: Scalar>(m: &DMatrix<T>) -> T {
    eigenvalues_desc(m).iter().fold(T::zero(), |acc, v| acc.max(v.abs()))
}

/// Full symmetric eigendecomposition.
pub fn sym_eigen<T: Scalar>(m: &DMatrix<T>) -> SymmetricEigen<T, nalgebra::Dyn> {
    m.clone().symmetric_eigen()
}

/// `sum_ij a_ij b_ji`, the trace of `a b` without forming the product.
pub fn trace_of_product<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>) -> T {
    let mut acc = T::zero();
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            acc += a[(i, j)] * b[(j, i)];
        }
    }
    acc
}

/// Largest absolute entrywise difference.
pub fn max_abs_diff<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>) -> T {
    a.iter().zip(b.iter()).fold(T::zero(), |m, (x, y)| m.max((*x - *y).abs()))
}
