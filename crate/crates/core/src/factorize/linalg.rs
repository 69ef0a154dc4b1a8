//! Small dense helpers backed by nalgebra's symmetric eigensolver.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, ArrayView2};

fn to_na(a: ArrayView2<'_, f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

/// Eigenpairs of a symmetric matrix, eigenvalues descending.
fn sorted_eigen(g: ArrayView2<'_, f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(to_na(g));
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| {
        eig.eigenvectors[(r, order[c])]
    });
    (values, vectors)
}

/// Pseudo-inverse of a symmetric positive semi-definite matrix. Eigenvalues
/// below `1e-10` times the largest are treated as zero.
pub fn pinv_psd(g: &Array2<f64>) -> Array2<f64> {
    let n = g.nrows();
    let (values, vectors) = sorted_eigen(g.view());
    let top = values.first().copied().unwrap_or(0.0).max(0.0);
    let cutoff = 1e-10 * top;
    let mut out = Array2::zeros((n, n));
    if top == 0.0 {
        return out;
    }
    for (c, &lambda) in values.iter().enumerate() {
        if lambda <= cutoff {
            continue;
        }
        let inv = 1.0 / lambda;
        for i in 0..n {
            let vi = vectors[(i, c)] * inv;
            for j in 0..n {
                out[[i, j]] += vi * vectors[(j, c)];
            }
        }
    }
    out
}

/// Leading `k` left singular vectors of `x`, as columns of a `rows x k`
/// matrix. Computed from whichever Gram matrix is smaller; directions with a
/// vanishing singular value fall back to unit vectors.
pub fn leading_left_singular_vectors(x: ArrayView2<'_, f64>, k: usize) -> Array2<f64> {
    let (rows, cols) = x.dim();
    let mut out = Array2::zeros((rows, k));
    if rows <= cols {
        let g = x.dot(&x.t());
        let (_, vectors) = sorted_eigen(g.view());
        for c in 0..k.min(rows) {
            for r in 0..rows {
                out[[r, c]] = vectors[(r, c)];
            }
        }
    } else {
        // u_c = X v_c / sigma_c with v_c an eigenvector of X^T X.
        let g = x.t().dot(&x);
        let (values, vectors) = sorted_eigen(g.view());
        let top = values.first().copied().unwrap_or(0.0).max(0.0);
        for c in 0..k {
            let lambda = values.get(c).copied().unwrap_or(0.0);
            if c < cols && lambda > 1e-12 * top && lambda > 0.0 {
                let v = Array2::from_shape_fn((cols, 1), |(r, _)| vectors[(r, c)]);
                let u = x.dot(&v) / lambda.sqrt();
                out.column_mut(c).assign(&u.column(0));
            } else {
                out[[c % rows, c]] = 1.0;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn pinv_of_invertible_is_inverse() {
        let g = array![[4.0, 1.0], [1.0, 3.0]];
        let p = pinv_psd(&g);
        let id = g.dot(&p);
        for i in 0..2 {
            for j in 0..2 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((id[[i, j]] - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pinv_of_rank_deficient() {
        // outer([1,1],[1,1]) has pseudo-inverse outer / 4
        let g = array![[1.0, 1.0], [1.0, 1.0]];
        let p = pinv_psd(&g);
        for v in p.iter() {
            assert!((v - 0.25).abs() < 1e-12);
        }
        assert_eq!(
            pinv_psd(&Array2::zeros((3, 3))),
            Array2::<f64>::zeros((3, 3))
        );
    }

    #[test]
    fn singular_vectors_both_sides() {
        // diag-dominant: leading left vector is e0, then e1
        let x = array![
            [5.0, 0.0, 0.0, 0.0],
            [0.0, 2.0, 0.0, 0.0],
            [0.0, 0.0, 0.1, 0.0]
        ];
        let u = leading_left_singular_vectors(x.view(), 2);
        assert!((u[[0, 0]].abs() - 1.0).abs() < 1e-12);
        assert!((u[[1, 1]].abs() - 1.0).abs() < 1e-12);
        let ut = leading_left_singular_vectors(x.t(), 2);
        assert_eq!(ut.dim(), (4, 2));
        assert!((ut[[0, 0]].abs() - 1.0).abs() < 1e-12);
        assert!((ut[[1, 1]].abs() - 1.0).abs() < 1e-12);
    }
}
