use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Root mean squared error of column `output`.
pub fn rmse(pred: &DMatrix<f64>, truth: &DMatrix<f64>, output: usize) -> Result<f64> {
    if pred.shape() != truth.shape() {
        return Err(Error::DimensionMismatch {
            context: "rmse shapes",
            expected: truth.len(),
            got: pred.len(),
        });
    }
    if pred.nrows() == 0 {
        return Err(Error::Empty("rmse rows"));
    }
    if output >= pred.ncols() {
        return Err(Error::invalid(format!("output {output} out of range")));
    }
    let m = pred.nrows() as f64;
    let sse: f64 = pred
        .column(output)
        .iter()
        .zip(truth.column(output).iter())
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok((sse / m).sqrt())
}

pub fn rmse_all(pred: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<Vec<f64>> {
    (0..pred.ncols()).map(|t| rmse(pred, truth, t)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        let a = DMatrix::from_row_slice(2, 1, &[0.0, 0.0]);
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        assert_eq!(rmse(&a, &a, 0).unwrap(), 0.0);
        assert_eq!(rmse(&a, &b, 0).unwrap(), 1.0);
        let c = DMatrix::from_row_slice(3, 1, &[1.0, -2.0, 0.5]);
        let d = c.add_scalar(-0.75);
        assert!((rmse(&d, &c, 0).unwrap() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn empty_is_error() {
        let e = DMatrix::<f64>::zeros(0, 1);
        assert!(rmse(&e, &e, 0).is_err());
    }
}
