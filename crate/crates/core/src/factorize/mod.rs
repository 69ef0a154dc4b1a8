//! Non-negative matrix factorisation and third-order CP decomposition.

mod cp;
pub mod io;
mod linalg;
mod matrix;
mod nmf;
mod tensor;

pub use cp::{cp_als, CpConfig, CpInit, TensorFactorModel};
pub use linalg::{leading_left_singular_vectors, pinv_psd};
pub use matrix::{ActivityMatrix, Factors};
pub use nmf::{nmf, FactorModel, NmfConfig};
pub use tensor::{khatri_rao, mode_unfold, reconstruct, ActivityTensor};

use ndarray::{ArrayBase, Data, Dimension};

/// `sqrt(sum |x|^2)` over every entry of a matrix or tensor.
pub fn frobenius_norm<S, D>(x: &ArrayBase<S, D>) -> f64
where
    S: Data<Elem = f64>,
    D: Dimension,
{
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Maps each row to `[0, 1]` by `(x - min) / (max - min)`. Constant rows map
/// to all zeros.
pub fn minmax_normalize(rows: &ndarray::Array2<f64>) -> ndarray::Array2<f64> {
    let mut out = rows.clone();
    for mut row in out.rows_mut() {
        let min = row.iter().copied().fold(f64::INFINITY, f64::min);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = max - min;
        if span > 0.0 && span.is_finite() {
            row.mapv_inplace(|x| (x - min) / span);
        } else {
            row.fill(0.0);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2, Array3};

    #[test]
    fn frobenius_examples() {
        assert_eq!(frobenius_norm(&Array2::<f64>::zeros((3, 2))), 0.0);
        assert_eq!(frobenius_norm(&Array2::<f64>::eye(2)), 2f64.sqrt());
        assert_eq!(
            frobenius_norm(&array![[1.0, 2.0], [3.0, 4.0]]),
            30f64.sqrt()
        );
        let mut t = Array3::<f64>::zeros((2, 2, 2));
        t[[1, 0, 1]] = -3.0;
        t[[0, 1, 0]] = 4.0;
        assert_eq!(frobenius_norm(&t), 5.0);
    }

    #[test]
    fn minmax_examples() {
        let out = minmax_normalize(&array![[2.0, 2.0, 2.0], [0.0, 5.0, 10.0]]);
        assert_eq!(out.row(0).to_vec(), vec![0.0, 0.0, 0.0]);
        assert_eq!(out.row(1).to_vec(), vec![0.0, 0.5, 1.0]);
        assert_eq!(
            minmax_normalize(&array![[1.0, 3.0]]).row(0).to_vec(),
            vec![0.0, 1.0]
        );
    }
}
