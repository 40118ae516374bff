use serde::{Deserialize, Serialize};

use super::{sigmoid, FlatFit, GlmmError, GlmmFit, ModelData, PredictionMode};

/// Binary classification summary with YES (1) as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl ClassificationMetrics {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize, tn: usize) -> Self {
        let n = tp + fp + fn_ + tn;
        let accuracy = if n == 0 { 0.0 } else { (tp + tn) as f64 / n as f64 };
        let denom = 2 * tp + fp + fn_;
        let f1 = if denom == 0 { 0.0 } else { 2.0 * tp as f64 / denom as f64 };
        Self { accuracy, f1, tp, fp, fn_, tn }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitMetrics {
    pub accuracy: f64,
    pub f1: f64,
    pub auc: f64,
    pub aic: f64,
    pub bic: f64,
}

/// Accuracy and F1 of probabilities thresholded at 0.5 (0.5 counts as YES).
pub fn classification_metrics(probabilities: &[f64], outcomes: &[f64]) -> ClassificationMetrics {
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (&p, &y) in probabilities.iter().zip(outcomes) {
        match (p >= 0.5, y == 1.0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    ClassificationMetrics::from_counts(tp, fp, fn_, tn)
}

/// Area under the ROC curve via the Mann–Whitney statistic; tied scores
/// receive averaged ranks.
pub fn auc(scores: &[f64], outcomes: &[f64]) -> Result<f64, GlmmError> {
    let n_pos = outcomes.iter().filter(|&&y| y == 1.0).count();
    let n_neg = outcomes.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(GlmmError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if outcomes[k] == 1.0 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// A fitted model that yields probabilities and information criteria.
pub trait FittedModel {
    fn predict(&self, data: &ModelData, mode: PredictionMode) -> Result<Vec<f64>, GlmmError>;
    fn aic(&self) -> f64;
    fn bic(&self) -> f64;
}

impl FittedModel for GlmmFit {
    fn predict(&self, data: &ModelData, mode: PredictionMode) -> Result<Vec<f64>, GlmmError> {
        GlmmFit::predict(self, data, mode)
    }
    fn aic(&self) -> f64 {
        self.aic
    }
    fn bic(&self) -> f64 {
        self.bic
    }
}

impl FlatFit {
    pub fn predict(&self, data: &ModelData) -> Result<Vec<f64>, GlmmError> {
        if data.columns != self.columns {
            return Err(GlmmError::ColumnMismatch { expected: self.columns.clone(), found: data.columns.clone() });
        }
        Ok((0..data.n_obs())
            .map(|i| sigmoid(data.row(i).iter().zip(&self.beta).map(|(x, b)| x * b).sum()))
            .collect())
    }
}

impl FittedModel for FlatFit {
    fn predict(&self, data: &ModelData, _mode: PredictionMode) -> Result<Vec<f64>, GlmmError> {
        FlatFit::predict(self, data)
    }
    fn aic(&self) -> f64 {
        self.aic
    }
    fn bic(&self) -> f64 {
        self.bic
    }
}

/// In-sample metrics using conditional predictions (flat fits have none).
pub fn evaluate_fit(fit: &impl FittedModel, data: &ModelData) -> Result<FitMetrics, GlmmError> {
    evaluate_fit_with(fit, data, PredictionMode::Conditional)
}

pub fn evaluate_fit_with(
    fit: &impl FittedModel,
    data: &ModelData,
    mode: PredictionMode,
) -> Result<FitMetrics, GlmmError> {
    let probs = fit.predict(data, mode)?;
    let cls = classification_metrics(&probs, &data.y);
    Ok(FitMetrics { accuracy: cls.accuracy, f1: cls.f1, auc: auc(&probs, &data.y)?, aic: fit.aic(), bic: fit.bic() })
}
