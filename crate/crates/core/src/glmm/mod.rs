//! Flat and mixed-effects logistic regression over annotation data.
//!
//! The mixed model has crossed random intercepts for annotators and for
//! tweets nested in languages, plus a language intercept. It is fitted by
//! maximizing the Laplace approximation to the marginal likelihood with a
//! derivative-free outer search and penalized IRLS for the conditional modes.
//!
//! Both fitters rescale observation weights to mean one before use, so the
//! reported log-likelihoods are on the scale of `n` unit-weight observations
//! and any common rescaling of the weights leaves the fit unchanged.

mod design;
mod flat;
mod metrics;
mod mixed;
mod nelder_mead;
mod report;
pub mod simulate;
mod wald;

use thiserror::Error;

pub use design::{build_design, DesignSpec, Dummy, GroupingFactor, ModelData, ReferenceLevels, GROUPING_FACTORS};
pub use flat::{SEPARATION_THRESHOLD, fit_flat, fit_logistic, flat_gradient, flat_loglik, FlatControls, FlatFit, LogisticFit};
pub use metrics::{
    auc, classification_metrics, evaluate_fit, evaluate_fit_with, ClassificationMetrics, FitMetrics, FittedModel,
};
pub use mixed::{
    fit_glmm, laplace_deviance, pirls_trace, GlmmControls, GlmmFit, PirlsTrace, RandomEffects, THETA_MAX, THETA_MIN,
};
pub use nelder_mead::{nelder_mead, NelderMeadOptions, NelderMeadResult};
pub use report::{comparison_rows, write_comparison_csv, ComparisonRow, FitDocument};
pub use wald::{significance_band, wald_tests, CoefficientTest, SignificanceBand};

#[derive(Debug, Error)]
pub enum GlmmError {
    #[error("invalid model data: {0}")]
    InvalidData(String),
    #[error("attribute level outside the design: {0}")]
    LevelOutsideDesign(String),
    #[error("reference level missing from the data: {0}")]
    MissingReference(String),
    #[error("design matrix is rank deficient: {0}")]
    RankDeficient(String),
    #[error("grouping factor {0} needs at least 2 levels")]
    TooFewLevels(String),
    #[error("penalized system is singular")]
    SingularSystem,
    #[error("inner penalized IRLS did not converge after {0} iterations")]
    InnerNonConvergence(usize),
    #[error("objective is not finite at the starting point")]
    NonFiniteObjective,
    #[error("information matrix is singular")]
    SingularInformation,
    #[error("column mismatch: fit has {expected:?}, data has {found:?}")]
    ColumnMismatch { expected: Vec<String>, found: Vec<String> },
    #[error("AUC needs both classes among the outcomes")]
    SingleClass,
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Which random effects enter a prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionMode {
    Population,
    Conditional,
}

pub(crate) fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// log(1 + e^eta) without overflow.
pub(crate) fn softplus(eta: f64) -> f64 {
    eta.max(0.0) + (-eta.abs()).exp().ln_1p()
}

/// Bernoulli log-likelihood of one observation on the logit scale.
pub(crate) fn bernoulli_loglik(y: f64, eta: f64) -> f64 {
    y * eta - softplus(eta)
}
