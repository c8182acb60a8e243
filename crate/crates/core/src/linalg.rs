use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// Dense LU (partial pivoting) solve of `a x = b`.
pub fn solve_dense(a: &Array2<f64>, b: &Array1<f64>, what: &'static str) -> Result<Array1<f64>> {
    let n = b.len();
    let m = DMatrix::from_fn(n, n, |i, j| a[[i, j]]);
    let rhs = DVector::from_iterator(n, b.iter().copied());
    let x = m.lu().solve(&rhs).ok_or(Error::Singular(what))?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular(what));
    }
    Ok(Array1::from_iter(x.iter().copied()))
}
