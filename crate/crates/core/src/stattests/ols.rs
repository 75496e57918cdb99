//! Ordinary least squares with coefficient inference.

use serde::{Deserialize, Serialize};

use super::dist::t_p_value_two_sided;
use super::StatError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OlsFit {
    pub coefficients: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub t_stats: Vec<f64>,
    pub p_values: Vec<f64>,
    pub residuals: Vec<f64>,
    pub r_squared: f64,
    pub n: usize,
    pub df_resid: usize,
}

/// Invert a small symmetric positive definite matrix by Gauss-Jordan
/// with partial pivoting. Returns the pivot column on rank deficiency.
fn invert(mut a: Vec<Vec<f64>>) -> Result<Vec<Vec<f64>>, usize> {
    let p = a.len();
    let scale = a
        .iter()
        .flat_map(|row| row.iter().map(|v| v.abs()))
        .fold(0.0f64, f64::max)
        .max(1e-300);
    let mut inv: Vec<Vec<f64>> = (0..p)
        .map(|i| (0..p).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    for col in 0..p {
        let (pivot_row, pivot) = (col..p)
            .map(|r| (r, a[r][col].abs()))
            .max_by(|x, y| x.1.total_cmp(&y.1))
            .unwrap();
        if pivot < 1e-12 * scale {
            return Err(col);
        }
        a.swap(col, pivot_row);
        inv.swap(col, pivot_row);
        let d = a[col][col];
        for j in 0..p {
            a[col][j] /= d;
            inv[col][j] /= d;
        }
        for r in 0..p {
            if r != col {
                let factor = a[r][col];
                if factor != 0.0 {
                    for j in 0..p {
                        a[r][j] -= factor * a[col][j];
                        inv[r][j] -= factor * inv[col][j];
                    }
                }
            }
        }
    }
    Ok(inv)
}

/// Least-squares fit of `y` on the given design columns. The caller
/// supplies the full design including the intercept column; see
/// [`ols_with_intercept`]. Standard errors come from
/// `sigma^2 (X'X)^{-1}` with `sigma^2 = RSS / (n - p)`, p-values from
/// the t distribution with `n - p` degrees of freedom.
pub fn ols(y: &[f64], columns: &[&[f64]]) -> Result<OlsFit, StatError> {
    let p = columns.len();
    let n = y.len();
    if p == 0 {
        return Err(StatError::EmptyDesign);
    }
    for c in columns {
        if c.len() != n {
            return Err(StatError::LengthMismatch);
        }
    }
    if n <= p {
        return Err(StatError::TooFewObservations { n, p });
    }

    let mut xtx = vec![vec![0.0; p]; p];
    let mut xty = vec![0.0; p];
    for i in 0..p {
        for j in i..p {
            let s: f64 = columns[i]
                .iter()
                .zip(columns[j])
                .map(|(a, b)| a * b)
                .sum();
            xtx[i][j] = s;
            xtx[j][i] = s;
        }
        xty[i] = columns[i].iter().zip(y).map(|(a, b)| a * b).sum();
    }
    let inv = invert(xtx).map_err(|col| StatError::RankDeficientDesign { column: col })?;
    let coefficients: Vec<f64> = (0..p)
        .map(|i| (0..p).map(|j| inv[i][j] * xty[j]).sum())
        .collect();

    let residuals: Vec<f64> = (0..n)
        .map(|r| {
            y[r] - columns
                .iter()
                .zip(&coefficients)
                .map(|(c, b)| c[r] * b)
                .sum::<f64>()
        })
        .collect();
    let rss: f64 = residuals.iter().map(|e| e * e).sum();
    let df_resid = n - p;
    let sigma2 = rss / df_resid as f64;

    let standard_errors: Vec<f64> = (0..p).map(|i| (sigma2 * inv[i][i]).max(0.0).sqrt()).collect();
    let t_stats: Vec<f64> = coefficients
        .iter()
        .zip(&standard_errors)
        .map(|(b, se)| if *se > 0.0 { b / se } else { f64::INFINITY * b.signum() })
        .collect();
    let p_values: Vec<f64> = t_stats
        .iter()
        .map(|&t| t_p_value_two_sided(t, df_resid as f64))
        .collect();

    let ybar = y.iter().sum::<f64>() / n as f64;
    let tss: f64 = y.iter().map(|v| (v - ybar) * (v - ybar)).sum();
    let r_squared = if tss > 0.0 { 1.0 - rss / tss } else { 1.0 };

    Ok(OlsFit {
        coefficients,
        standard_errors,
        t_stats,
        p_values,
        residuals,
        r_squared,
        n,
        df_resid,
    })
}

/// Fit with an intercept prepended as coefficient 0.
pub fn ols_with_intercept(y: &[f64], predictors: &[&[f64]]) -> Result<OlsFit, StatError> {
    let ones = vec![1.0; y.len()];
    let mut columns: Vec<&[f64]> = Vec::with_capacity(predictors.len() + 1);
    columns.push(&ones);
    columns.extend_from_slice(predictors);
    ols(y, &columns)
}
