use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::agreement::majority_label;
use crate::corpus::Corpus;
use crate::glmm::{fit_logistic, FlatControls};

use super::tokenize::token_keys;
use super::AttributionError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    Probability,
    Logit,
}

/// Scores a token multiset; must be deterministic and defined on the empty set.
pub trait TokenScorer: Sync {
    fn score(&self, tokens: &[&str]) -> f64;
    fn mode(&self) -> ScoreMode;
}

/// L2-penalized logistic regression on lowercase token-presence features.
/// Tokens outside the vocabulary contribute nothing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceScorer {
    pub intercept: f64,
    pub vocabulary: BTreeMap<String, usize>,
    pub weights: Vec<f64>,
    pub mode: ScoreMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScorerOptions {
    pub l2: f64,
    /// Tokens seen in fewer training texts are left out of the vocabulary.
    pub min_count: usize,
}

impl Default for ScorerOptions {
    fn default() -> Self {
        Self { l2: 1.0, min_count: 1 }
    }
}

impl ReferenceScorer {
    pub fn with_mode(mut self, mode: ScoreMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn weight(&self, token: &str) -> Option<f64> {
        self.vocabulary.get(&token.to_lowercase()).map(|&j| self.weights[j])
    }

    pub fn logit(&self, tokens: &[&str]) -> f64 {
        let present: BTreeSet<usize> =
            tokens.iter().filter_map(|t| self.vocabulary.get(&t.to_lowercase()).copied()).collect();
        // Summed in vocabulary order so the value does not depend on token order.
        present.into_iter().fold(self.intercept, |acc, j| acc + self.weights[j])
    }
}

impl TokenScorer for ReferenceScorer {
    fn score(&self, tokens: &[&str]) -> f64 {
        let z = self.logit(tokens);
        match self.mode {
            ScoreMode::Logit => z,
            ScoreMode::Probability => 1.0 / (1.0 + (-z).exp()),
        }
    }

    fn mode(&self) -> ScoreMode {
        self.mode
    }
}

pub fn train_reference_scorer(corpus: &Corpus, l2: f64) -> Result<ReferenceScorer, AttributionError> {
    train_reference_scorer_with(corpus, &ScorerOptions { l2, ..Default::default() })
}

/// Fits the reference scorer to majority labels (ties count as YES). The
/// intercept is unpenalized. The returned scorer is in probability mode.
pub fn train_reference_scorer_with(corpus: &Corpus, opts: &ScorerOptions) -> Result<ReferenceScorer, AttributionError> {
    let docs: Vec<BTreeSet<String>> = corpus.tweets().iter().map(|t| token_keys(&t.text).into_iter().collect()).collect();
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for d in &docs {
        for t in d {
            *counts.entry(t).or_default() += 1;
        }
    }
    let vocabulary: BTreeMap<String, usize> = counts
        .into_iter()
        .filter(|(_, c)| *c >= opts.min_count.max(1))
        .enumerate()
        .map(|(j, (t, _))| (t.to_string(), j))
        .collect();
    if vocabulary.is_empty() {
        return Err(AttributionError::EmptyVocabulary);
    }
    let p = vocabulary.len() + 1;
    let n = docs.len();
    let mut x = vec![0.0; n * p];
    let mut y = Vec::with_capacity(n);
    for (i, (doc, tweet)) in docs.iter().zip(corpus.tweets()).enumerate() {
        x[i * p] = 1.0;
        for t in doc {
            if let Some(&j) = vocabulary.get(t) {
                x[i * p + 1 + j] = 1.0;
            }
        }
        let m = majority_label(&tweet.labels()).map_err(|_| AttributionError::EmptyVocabulary)?;
        y.push(if m.label.is_yes() { 1.0 } else { 0.0 });
    }
    let mut penalty = vec![opts.l2; p];
    penalty[0] = 0.0;
    let fit = fit_logistic(&x, p, &y, &vec![1.0; n], &penalty, None, &FlatControls::default())?;
    Ok(ReferenceScorer {
        intercept: fit.beta[0],
        weights: fit.beta[1..].to_vec(),
        vocabulary,
        mode: ScoreMode::Probability,
    })
}
