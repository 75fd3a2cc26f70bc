//! Statistical comparisons: sum-coded regressions with item-clustered
//! bootstrap inference, and fixed-effects ANOVA with Tukey HSD post-hocs.

use thiserror::Error;

mod anova;
mod design;
pub mod dist;
mod fit;
mod regression;

pub use anova::{anova, anova_permutation_p, AnovaEffect, AnovaOptions, AnovaResult, TukeyContrast};
pub use design::{Dataset, Design, FactorSpec, Term, INTERCEPT};
pub use fit::{aliased_columns, logistic, ols, LogisticFit, OlsFit, SEPARATION_RIDGE};
pub use regression::{
    fit_preference_model, fit_surprisal_model, holm_adjust, intercept, pairwise_contrasts, percentile_pvalue,
    predict, BootstrapOptions, Coefficient, Contrast, Family, RegressionResult,
};

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("no observations")]
    EmptyData,
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("unknown factor: {0}")]
    UnknownFactor(String),
    #[error("factor {factor} needs at least 2 levels, found {levels:?}")]
    TooFewLevels { factor: String, levels: Vec<String> },
    #[error("level {level:?} of factor {factor} is not in the model")]
    UnknownLevel { factor: String, level: String },
    #[error("cannot parse formula: {0}")]
    BadFormula(String),
    #[error("empty cell: {0}")]
    EmptyCell(String),
    #[error("rank-deficient design; aliased columns: {}", .0.join(", "))]
    RankDeficient(Vec<String>),
    #[error("logistic response must be 0 or 1, got {0}")]
    NonBinary(f64),
    #[error("logistic fit did not converge")]
    NoConvergence,
    #[error("too few observations: {0}")]
    TooFewObservations(String),
    #[error("invalid option: {0}")]
    BadOption(String),
}
