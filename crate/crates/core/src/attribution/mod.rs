//! Shapley token attribution, corpus-level importance and highlight markup.
//!
//! Subsets of a text are scored by dropping the absent tokens; the bundled
//! reference scorer is a ridge logistic regression on token presence. Its
//! tokens are whole words, so importance tables list words rather than the
//! subword pieces a transformer tokenizer would produce.

mod importance;
mod scorer;
mod shapley;
mod tokenize;

use thiserror::Error;

use crate::corpus::Label;
use crate::glmm::GlmmError;

pub use importance::{
    aggregate_importance, select_tokens, write_importance_csv, TokenImportance, TokenImportanceTable, DEFAULT_THRESHOLD,
};
pub use scorer::{
    train_reference_scorer, train_reference_scorer_with, ReferenceScorer, ScoreMode, ScorerOptions, TokenScorer,
};
pub use shapley::{
    attribute, exact_shapley, instance_seed, sampled_shapley, write_attributions_jsonl, AttributionControls,
    ShapleyAttribution, ShapleyMethod, DEFAULT_EXACT_CAP,
};
pub use tokenize::{highlight, strip_markup, token_keys, tokenize, Token};

#[derive(Debug, Error)]
pub enum AttributionError {
    #[error("no tokens to build a vocabulary from")]
    EmptyVocabulary,
    #[error("{count} tokens exceed the exact-enumeration cap of {cap}")]
    TooManyTokens { count: usize, cap: usize },
    #[error("at least one permutation is required")]
    ZeroPermutations,
    #[error("no correctly classified instance of class {0}")]
    NoCorrectInstances(Label),
    #[error("all token importances are zero")]
    ZeroImportance,
    #[error("importance table is empty")]
    EmptyTable,
    #[error("threshold must lie in (0, 1], got {0}")]
    InvalidThreshold(f64),
    #[error("attributions, predictions and gold labels differ in length")]
    LengthMismatch,
    #[error(transparent)]
    Glmm(#[from] GlmmError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
