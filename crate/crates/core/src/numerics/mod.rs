//! Dense linear algebra, the optimizer, and the finite-difference gradient
//! oracle that every other module builds on.
//!
//! Conventions fixed here and relied on by the file formats: matrices are
//! row-major, linear layers store weights as out×in and apply `x · Wᵀ`.

mod checkpoint;
mod matrix;
mod param;
mod rng;

pub(crate) use checkpoint::ByteReader;
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use matrix::{cross_entropy, real, softmax_rows, softmax_rows_backward, Matrix, Scalar};
pub use param::{finite_diff_grad, grad_relative_error, AdamConfig, ParamTensor};
pub use rng::Rng;

use crate::error::{Error, Result};

/// Linear layer forward: `y = x · wᵀ (+ bias)` with `w` stored out×in and
/// the optional bias broadcast over rows.
pub fn linear_forward<T: Scalar>(
    x: &Matrix<T>,
    w: &ParamTensor<T>,
    bias: Option<&ParamTensor<T>>,
) -> Result<Matrix<T>> {
    if x.cols() != w.value.cols() {
        return Err(Error::shape("linear_forward", x.shape(), w.value.shape()));
    }
    let mut y = x.matmul_nt(&w.value)?;
    if let Some(b) = bias {
        if b.value.rows() != 1 || b.value.cols() != y.cols() {
            return Err(Error::shape(
                "linear_forward bias",
                y.shape(),
                b.value.shape(),
            ));
        }
        for r in 0..y.rows() {
            for (v, &bv) in y.row_mut(r).iter_mut().zip(b.value.row(0)) {
                *v = *v + bv;
            }
        }
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_forward_basis_vector_picks_column() {
        let x = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let w = ParamTensor::new(Matrix::from_rows(&[vec![2.0, 3.0], vec![4.0, 5.0]]).unwrap());
        let y = linear_forward(&x, &w, None).unwrap();
        assert_eq!(y.row(0), &[2.0, 4.0]);
    }

    #[test]
    fn linear_forward_zero_input_yields_bias() {
        let x = Matrix::<f64>::zeros(3, 2);
        let w = ParamTensor::zeros(4, 2);
        let b = ParamTensor::new(Matrix::from_rows(&[vec![1.0, 2.0, 3.0, 4.0]]).unwrap());
        let y = linear_forward(&x, &w, Some(&b)).unwrap();
        for r in 0..3 {
            assert_eq!(y.row(r), &[1.0, 2.0, 3.0, 4.0]);
        }
        let y0 = linear_forward(&x, &w, None).unwrap();
        assert!(y0.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_forward_matches_matmul_oracle() {
        let mut rng = Rng::new(17);
        let x = Matrix::new(4, 8, (0..32).map(|_| rng.normal()).collect()).unwrap();
        let w =
            ParamTensor::new(Matrix::new(3, 8, (0..24).map(|_| rng.normal()).collect()).unwrap());
        let y = linear_forward(&x, &w, None).unwrap();
        let oracle = x.matmul(&w.value.transpose()).unwrap();
        for (a, b) in y.data().iter().zip(oracle.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
