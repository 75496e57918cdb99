//! Self-contained statistical kernel: OLS with coefficient inference,
//! Welch two-sample test, Fisher-z correlation intervals, two-sample
//! Kolmogorov-Smirnov, and ARMA(1,1) fitting by conditional sum of
//! squares. Missing-data handling (listwise deletion) is the caller's
//! job; everything here operates on clean `f64` slices.

pub mod arma;
pub mod dist;
pub mod ols;
pub mod optim;
pub mod two_sample;

pub use arma::{arma11_fit, css, css_residuals, Arma11Fit};
pub use ols::{ols, ols_with_intercept, OlsFit};
pub use two_sample::{
    correlation_ci, ks_two_sample, ks_uniform, student_two_sample, WelchTest,
};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, thiserror::Error)]
pub enum StatError {
    #[error("empty sample")]
    EmptySample,
    #[error("empty design matrix")]
    EmptyDesign,
    #[error("sample size {n} below minimum {min}")]
    SampleTooSmall { n: usize, min: usize },
    #[error("input lengths differ")]
    LengthMismatch,
    #[error("n = {n} observations cannot identify {p} coefficients")]
    TooFewObservations { n: usize, p: usize },
    #[error("design matrix is rank deficient at column {column}")]
    RankDeficientDesign { column: usize },
    #[error("zero variance, statistic undefined")]
    ZeroVariance,
    #[error("confidence level {0} must lie in (0, 1)")]
    InvalidLevel(f64),
    #[error("optimizer did not converge (best objective {objective} at {best_point:?})")]
    NonConvergence {
        best_point: Vec<f64>,
        objective: f64,
    },
}

/// Outcome of a hypothesis test.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub ci: Option<(f64, f64)>,
    pub n1: usize,
    pub n2: usize,
}
