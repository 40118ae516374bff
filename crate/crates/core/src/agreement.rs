//! Label aggregation and reliability statistics.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Label;

#[derive(Debug, Error, PartialEq)]
pub enum AgreementError {
    #[error("no labels to aggregate")]
    Empty,
    #[error("label sequences differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("kappa is undefined: chance agreement is 1 but observed agreement is {0}")]
    UndefinedKappa(f64),
}

/// Majority vote over a set of binary labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MajorityResult {
    pub label: Label,
    pub yes_share: f64,
    pub tied: bool,
}

/// Latent-scale variance components of a logistic mixed model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceComponents {
    pub var_tweet: f64,
    pub var_annotator: f64,
    pub var_language: f64,
}

/// Residual variance of the standard logistic distribution.
pub const LOGISTIC_RESIDUAL_VARIANCE: f64 = PI * PI / 3.0;

/// YES wins a strict majority; an exact tie also yields YES with `tied` set.
pub fn majority_label(labels: &[Label]) -> Result<MajorityResult, AgreementError> {
    if labels.is_empty() {
        return Err(AgreementError::Empty);
    }
    let yes = labels.iter().filter(|l| l.is_yes()).count();
    let no = labels.len() - yes;
    Ok(MajorityResult {
        label: Label::from_bool(yes >= no),
        yes_share: yes as f64 / labels.len() as f64,
        tied: yes == no,
    })
}

pub fn percent_agreement(a: &[Label], b: &[Label]) -> Result<f64, AgreementError> {
    if a.len() != b.len() {
        return Err(AgreementError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(AgreementError::Empty);
    }
    let same = a.iter().zip(b).filter(|(x, y)| x == y).count();
    Ok(same as f64 / a.len() as f64)
}

/// Two-rater Cohen's kappa with chance agreement from the observed marginals.
pub fn cohens_kappa(pred: &[Label], gold: &[Label]) -> Result<f64, AgreementError> {
    let p_o = percent_agreement(pred, gold)?;
    let n = pred.len() as f64;
    let yes_pred = pred.iter().filter(|l| l.is_yes()).count() as f64 / n;
    let yes_gold = gold.iter().filter(|l| l.is_yes()).count() as f64 / n;
    let p_e = yes_pred * yes_gold + (1.0 - yes_pred) * (1.0 - yes_gold);
    if p_e >= 1.0 {
        return if p_o >= 1.0 {
            Ok(1.0)
        } else {
            Err(AgreementError::UndefinedKappa(p_o))
        };
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

/// Share of latent variance carried by the random effects, using π²/3 as the
/// logistic residual variance.
pub fn icc_from_variances(v: &VarianceComponents) -> f64 {
    let random = v.var_tweet + v.var_annotator + v.var_language;
    random / (random + LOGISTIC_RESIDUAL_VARIANCE)
}

pub fn odds_ratio(coef: f64) -> f64 {
    coef.exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use Label::{No, Yes};

    fn labels(yes: usize, no: usize) -> Vec<Label> {
        let mut v = vec![Yes; yes];
        v.extend(std::iter::repeat(No).take(no));
        v
    }

    #[test]
    fn majority_examples() {
        let m = majority_label(&labels(6, 0)).unwrap();
        assert_eq!((m.label, m.yes_share, m.tied), (Yes, 1.0, false));
        let m = majority_label(&labels(2, 4)).unwrap();
        assert_eq!(m.label, No);
        assert!((m.yes_share - 1.0 / 3.0).abs() < 1e-15);
        assert!(!m.tied);
        let m = majority_label(&labels(3, 3)).unwrap();
        assert_eq!((m.label, m.yes_share, m.tied), (Yes, 0.5, true));
        assert_eq!(majority_label(&[]), Err(AgreementError::Empty));
    }

    #[test]
    fn percent_agreement_examples() {
        let a = labels(50, 50);
        assert_eq!(percent_agreement(&a, &a).unwrap(), 1.0);
        let flipped: Vec<Label> = a.iter().map(|l| Label::from_bool(!l.is_yes())).collect();
        assert_eq!(percent_agreement(&a, &flipped).unwrap(), 0.0);
        let mut b = a.clone();
        for l in b.iter_mut().take(26) {
            *l = Label::from_bool(!l.is_yes());
        }
        assert_eq!(percent_agreement(&a, &b).unwrap(), 0.74);
        assert_eq!(percent_agreement(&a, &b[..3]), Err(AgreementError::LengthMismatch(100, 3)));
    }

    fn from_confusion(tp: usize, fn_: usize, fp: usize, tn: usize) -> (Vec<Label>, Vec<Label>) {
        let mut pred = Vec::new();
        let mut gold = Vec::new();
        for (p, g, n) in [(Yes, Yes, tp), (No, Yes, fn_), (Yes, No, fp), (No, No, tn)] {
            pred.extend(std::iter::repeat(p).take(n));
            gold.extend(std::iter::repeat(g).take(n));
        }
        (pred, gold)
    }

    #[test]
    fn kappa_examples() {
        let (p, g) = from_confusion(40, 10, 20, 30);
        // p_o = 0.7; marginals 0.6 and 0.5 give p_e = 0.5.
        assert!((cohens_kappa(&p, &g).unwrap() - 0.4).abs() < 1e-12);

        let (_, g) = from_confusion(30, 20, 20, 30);
        assert!((cohens_kappa(&g, &g).unwrap() - 1.0).abs() < 1e-15);

        // Marginals 0.5/0.5 with p_o = 0.5 = p_e.
        let (p, g) = from_confusion(25, 25, 25, 25);
        assert!(cohens_kappa(&p, &g).unwrap().abs() < 1e-15);
    }

    #[test]
    fn kappa_degenerate_marginals() {
        // Both raters constant on the same class: p_e = p_o = 1.
        assert_eq!(cohens_kappa(&labels(0, 3), &labels(0, 3)).unwrap(), 1.0);
        // Constant on opposite classes: p_e = 0, p_o = 0.
        assert_eq!(cohens_kappa(&labels(0, 3), &labels(3, 0)).unwrap(), 0.0);
        assert_eq!(
            cohens_kappa(&labels(1, 1), &labels(1, 0)),
            Err(AgreementError::LengthMismatch(2, 1))
        );
        assert_eq!(cohens_kappa(&[], &[]), Err(AgreementError::Empty));
    }

    #[test]
    fn icc_examples() {
        let v = VarianceComponents { var_tweet: 33.72, var_annotator: 5.54, var_language: 0.30 };
        assert!((icc_from_variances(&v) - 0.923).abs() < 0.001);
        let zero = VarianceComponents { var_tweet: 0.0, var_annotator: 0.0, var_language: 0.0 };
        assert_eq!(icc_from_variances(&zero), 0.0);
        let half = VarianceComponents { var_tweet: PI * PI / 3.0, var_annotator: 0.0, var_language: 0.0 };
        assert!((icc_from_variances(&half) - 0.5).abs() < 1e-4);
    }

    #[test]
    fn odds_ratio_examples() {
        assert_eq!(odds_ratio(0.0), 1.0);
        assert!((odds_ratio(1.704) - 5.50).abs() < 0.01);
        assert!((odds_ratio(-2.865) - 0.057).abs() < 0.001);
    }

    proptest! {
        #[test]
        fn majority_is_permutation_invariant(mut v in proptest::collection::vec(any::<bool>(), 1..20), seed in any::<u64>()) {
            let labels: Vec<Label> = v.iter().map(|&b| Label::from_bool(b)).collect();
            let base = majority_label(&labels).unwrap();
            // deterministic shuffle driven by the seed
            let n = v.len();
            let mut s = seed;
            for i in (1..n).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                v.swap(i, (s >> 33) as usize % (i + 1));
            }
            let shuffled: Vec<Label> = v.iter().map(|&b| Label::from_bool(b)).collect();
            prop_assert_eq!(majority_label(&shuffled).unwrap(), base);
        }

        #[test]
        fn kappa_is_bounded_and_self_consistent(a in proptest::collection::vec(any::<bool>(), 2..40), b_seed in proptest::collection::vec(any::<bool>(), 40)) {
            let x: Vec<Label> = a.iter().map(|&v| Label::from_bool(v)).collect();
            let y: Vec<Label> = b_seed[..x.len()].iter().map(|&v| Label::from_bool(v)).collect();
            if let Ok(k) = cohens_kappa(&x, &y) {
                prop_assert!(k <= 1.0 + 1e-12);
            }
            let yes = x.iter().filter(|l| l.is_yes()).count();
            if yes > 0 && yes < x.len() {
                prop_assert!((cohens_kappa(&x, &x).unwrap() - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn icc_monotone_and_bounded(t in 0.0f64..50.0, a in 0.0f64..20.0, l in 0.0f64..5.0, d in 0.01f64..5.0) {
            let v = VarianceComponents { var_tweet: t, var_annotator: a, var_language: l };
            let base = icc_from_variances(&v);
            prop_assert!((0.0..1.0).contains(&base));
            for bumped in [
                VarianceComponents { var_tweet: t + d, ..v },
                VarianceComponents { var_annotator: a + d, ..v },
                VarianceComponents { var_language: l + d, ..v },
            ] {
                prop_assert!(icc_from_variances(&bumped) > base);
            }
        }

        #[test]
        fn odds_ratio_is_multiplicative(a in -10.0f64..10.0, b in -10.0f64..10.0) {
            let lhs = odds_ratio(a + b);
            let rhs = odds_ratio(a) * odds_ratio(b);
            prop_assert!(((lhs - rhs) / rhs).abs() < 1e-12);
        }
    }
}
