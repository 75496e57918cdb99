//! ARMA(1,1) fitting by conditional sum of squares.
//!
//! The one-step prediction errors are
//! `e_t = (x_t - mu) - phi (x_{t-1} - mu) - theta e_{t-1}` with
//! `e_0 = 0` and the pre-sample value `x_0` pinned at `mu`, so the
//! residual vector has the same length as the series. The CSS objective
//! is minimized over `(phi, theta, mu)` with `|phi|, |theta| <= 0.99`
//! by a simplex search started from a small grid.

use serde::{Deserialize, Serialize};

use super::optim::nelder_mead;
use super::StatError;

/// Coefficient search box.
pub const COEF_BOUND: f64 = 0.99;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Arma11Fit {
    pub phi: f64,
    pub theta: f64,
    pub intercept: f64,
    pub residuals: Vec<f64>,
    pub css: f64,
}

/// Residuals for given parameters; length equals the series length.
pub fn css_residuals(series: &[f64], phi: f64, theta: f64, mu: f64) -> Vec<f64> {
    let mut res = Vec::with_capacity(series.len());
    let mut prev_e = 0.0;
    let mut prev_x = 0.0; // x_0 - mu
    for &x in series {
        let e = (x - mu) - phi * prev_x - theta * prev_e;
        res.push(e);
        prev_e = e;
        prev_x = x - mu;
    }
    res
}

/// Conditional sum of squares at `(phi, theta, mu)`.
pub fn css(series: &[f64], phi: f64, theta: f64, mu: f64) -> f64 {
    css_residuals(series, phi, theta, mu)
        .iter()
        .map(|e| e * e)
        .sum()
}

pub fn arma11_fit(series: &[f64]) -> Result<Arma11Fit, StatError> {
    let n = series.len();
    if n < 10 {
        return Err(StatError::SampleTooSmall { n, min: 10 });
    }
    // catch exactly constant input before the mean rounds it away
    if series.iter().all(|&x| x == series[0]) {
        return Err(StatError::ZeroVariance);
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let sd = (series.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n as f64 - 1.0))
        .sqrt();
    if sd == 0.0 {
        return Err(StatError::ZeroVariance);
    }

    let objective = |p: &[f64]| {
        let (phi, theta, mu) = (p[0], p[1], p[2]);
        if phi.abs() > COEF_BOUND || theta.abs() > COEF_BOUND {
            return f64::INFINITY;
        }
        css(series, phi, theta, mu)
    };

    let mut best: Option<(Vec<f64>, f64, bool)> = None;
    for &phi0 in &[-0.5, 0.0, 0.5] {
        for &theta0 in &[-0.5, 0.0, 0.5] {
            let start = [phi0, theta0, mean];
            let step = [0.2, 0.2, (sd / 10.0).max(1e-6)];
            let r = nelder_mead(&objective, &start, &step, 800, 1e-12);
            if best.as_ref().map_or(true, |(_, v, _)| r.value < *v) {
                best = Some((r.x, r.value, r.converged));
            }
        }
    }
    let (x, value, converged) = best.unwrap();
    if !converged || !value.is_finite() {
        return Err(StatError::NonConvergence {
            best_point: x,
            objective: value,
        });
    }
    let (phi, theta, mu) = (x[0], x[1], x[2]);
    Ok(Arma11Fit {
        phi,
        theta,
        intercept: mu,
        residuals: css_residuals(series, phi, theta, mu),
        css: value,
    })
}
