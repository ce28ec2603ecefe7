//! Ordinary least squares with an intercept, solved by QR on standardized columns.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative size of an `R` diagonal entry below which a column is treated
/// as linearly dependent on the columns before it.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearFit {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
}

/// Fits `y ~ intercept + sum_j coef_j * columns[j]`.
///
/// Columns are centered and scaled before the QR solve and the coefficients
/// are mapped back to the original units. A constant or collinear column
/// yields [`Error::SingularFit`] naming it.
pub fn fit_linear(columns: &[Vec<f64>], names: &[String], y: &[f64]) -> Result<LinearFit> {
    let n = y.len();
    let p = columns.len();
    debug_assert_eq!(names.len(), p);
    if n < p + 1 {
        return Err(Error::InsufficientData(format!(
            "{n} observations for {} free coefficients",
            p + 1
        )));
    }
    let y_mean = y.iter().sum::<f64>() / n as f64;
    if p == 0 {
        return Ok(LinearFit { coefficients: Vec::new(), intercept: y_mean });
    }

    let mut means = Vec::with_capacity(p);
    let mut scales = Vec::with_capacity(p);
    let mut z = DMatrix::<f64>::zeros(n, p);
    for (j, col) in columns.iter().enumerate() {
        debug_assert_eq!(col.len(), n);
        let mean = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let scale = var.sqrt();
        if !(scale > 1e-300) || !scale.is_finite() {
            return Err(Error::SingularFit(names[j].clone()));
        }
        for (i, v) in col.iter().enumerate() {
            z[(i, j)] = (v - mean) / scale;
        }
        means.push(mean);
        scales.push(scale);
    }

    let qr = z.qr();
    let r = qr.r();
    let max_diag = (0..p).map(|j| r[(j, j)].abs()).fold(0.0, f64::max);
    for j in 0..p {
        if r[(j, j)].abs() <= RANK_TOL * max_diag {
            return Err(Error::SingularFit(names[j].clone()));
        }
    }
    let mut rhs = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));
    qr.q_tr_mul(&mut rhs);
    let rhs = rhs.rows(0, p).into_owned();
    let beta = r
        .solve_upper_triangular(&rhs)
        .ok_or_else(|| Error::SingularFit(names[p - 1].clone()))?;

    let coefficients: Vec<f64> = beta.iter().zip(&scales).map(|(b, s)| b / s).collect();
    let intercept = y_mean - coefficients.iter().zip(&means).map(|(c, m)| c * m).sum::<f64>();
    Ok(LinearFit { coefficients, intercept })
}
