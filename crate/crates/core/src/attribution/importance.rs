use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::corpus::{Label, Language};

use super::shapley::ShapleyAttribution;
use super::AttributionError;

pub const DEFAULT_THRESHOLD: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenImportance {
    pub token: String,
    pub si: f64,
    pub ir: f64,
    pub rank: usize,
    pub ci: f64,
    pub selected: bool,
}

/// Ranked token importances for one class and language.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenImportanceTable {
    pub class: Label,
    pub language: Language,
    pub rows: Vec<TokenImportance>,
}

impl TokenImportanceTable {
    pub fn selected_tokens(&self) -> Vec<String> {
        self.rows.iter().filter(|r| r.selected).map(|r| r.token.clone()).collect()
    }
}

/// Mean absolute Shapley value per token over correctly classified instances
/// of `class`, normalized to importance ratios and ranked.
///
/// Within one instance, values of repeated occurrences of a (lowercased)
/// token are summed before taking the absolute value. The mean runs over the
/// qualifying instances that contain the token.
pub fn aggregate_importance(
    attributions: &[ShapleyAttribution],
    predictions: &[Label],
    gold: &[Label],
    class: Label,
    language: Language,
) -> Result<TokenImportanceTable, AttributionError> {
    if attributions.len() != predictions.len() || attributions.len() != gold.len() {
        return Err(AttributionError::LengthMismatch);
    }
    let mut per_token: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut correct = 0;
    for ((a, &pred), &g) in attributions.iter().zip(predictions).zip(gold) {
        if g != class || pred != g {
            continue;
        }
        correct += 1;
        let mut local: BTreeMap<String, f64> = BTreeMap::new();
        for (t, v) in a.tokens.iter().zip(&a.values) {
            *local.entry(t.to_lowercase()).or_default() += v;
        }
        for (t, v) in local {
            per_token.entry(t).or_default().push(v.abs());
        }
    }
    if correct == 0 {
        return Err(AttributionError::NoCorrectInstances(class));
    }
    let mut si: Vec<(String, f64)> = per_token
        .into_iter()
        .map(|(t, mut v)| {
            // Sorted before summing so the result ignores instance order.
            v.sort_by(f64::total_cmp);
            let n = v.len() as f64;
            (t, v.iter().sum::<f64>() / n)
        })
        .collect();
    let total: f64 = {
        let mut v: Vec<f64> = si.iter().map(|(_, s)| *s).collect();
        v.sort_by(f64::total_cmp);
        v.iter().sum()
    };
    if !(total > 0.0) {
        return Err(AttributionError::ZeroImportance);
    }
    si.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let mut ci = 0.0;
    let rows = si
        .into_iter()
        .enumerate()
        .map(|(k, (token, s))| {
            let ir = s / total;
            ci += ir;
            TokenImportance { token, si: s, ir, rank: k + 1, ci, selected: false }
        })
        .collect();
    Ok(TokenImportanceTable { class, language, rows })
}

/// Marks the longest rank prefix whose cumulative importance stays within
/// `t_c` (1e-9 slack), and always at least the top token.
pub fn select_tokens(table: &TokenImportanceTable, t_c: f64) -> Result<TokenImportanceTable, AttributionError> {
    if !(t_c > 0.0 && t_c <= 1.0) {
        return Err(AttributionError::InvalidThreshold(t_c));
    }
    if table.rows.is_empty() {
        return Err(AttributionError::EmptyTable);
    }
    let mut out = table.clone();
    for (k, row) in out.rows.iter_mut().enumerate() {
        row.selected = k == 0 || row.ci <= t_c + 1e-9;
    }
    // Keep the selection a prefix even if rounding made ci non-monotone.
    let mut open = true;
    for row in &mut out.rows {
        open &= row.selected;
        row.selected = open;
    }
    Ok(out)
}

/// CSV with header `token,class,lang,si,ir,rank,ci,selected`.
pub fn write_importance_csv<W: Write>(tables: &[TokenImportanceTable], out: W) -> Result<(), AttributionError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["token", "class", "lang", "si", "ir", "rank", "ci", "selected"])?;
    for t in tables {
        for r in &t.rows {
            w.write_record([
                r.token.clone(),
                t.class.to_string(),
                t.language.to_string(),
                r.si.to_string(),
                r.ir.to_string(),
                r.rank.to_string(),
                r.ci.to_string(),
                r.selected.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attribution::ShapleyMethod;

    fn attr(tokens: &[&str], values: &[f64]) -> ShapleyAttribution {
        ShapleyAttribution {
            tweet_id: String::new(),
            tokens: tokens.iter().map(|s| s.to_string()).collect(),
            values: values.to_vec(),
            base_value: 0.0,
            full_value: values.iter().sum(),
            method: ShapleyMethod::Exact,
            n_permutations: None,
            seed: None,
            residual: 0.0,
        }
    }

    fn table(irs: &[f64]) -> TokenImportanceTable {
        let mut ci = 0.0;
        TokenImportanceTable {
            class: Label::Yes,
            language: Language::En,
            rows: irs
                .iter()
                .enumerate()
                .map(|(k, &ir)| {
                    ci += ir;
                    TokenImportance { token: format!("t{k}"), si: ir, ir, rank: k + 1, ci, selected: false }
                })
                .collect(),
        }
    }

    #[test]
    fn si_uses_correct_instances_only() {
        let a = vec![attr(&["w", "x"], &[0.5, 0.1]), attr(&["w"], &[-0.3]), attr(&["w", "z"], &[0.9, 0.2])];
        let pred = [Label::Yes, Label::Yes, Label::No];
        let gold = [Label::Yes, Label::Yes, Label::Yes];
        let t = aggregate_importance(&a, &pred, &gold, Label::Yes, Language::En).unwrap();
        let w = t.rows.iter().find(|r| r.token == "w").unwrap();
        assert!((w.si - 0.4).abs() < 1e-12);
        assert!(t.rows.iter().all(|r| r.token != "z"));
        assert_eq!(t.rows[0].token, "w");
        assert!((t.rows.iter().map(|r| r.ir).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn repeated_occurrences_are_summed_first() {
        let a = vec![attr(&["Go", "go"], &[0.3, -0.1])];
        let t = aggregate_importance(&a, &[Label::No], &[Label::No], Label::No, Language::Es).unwrap();
        assert_eq!(t.rows.len(), 1);
        assert!((t.rows[0].si - 0.2).abs() < 1e-12);
        assert_eq!((t.rows[0].ir, t.rows[0].ci), (1.0, 1.0));
    }

    #[test]
    fn no_correct_instance_is_an_error() {
        let a = vec![attr(&["w"], &[0.5])];
        assert!(matches!(
            aggregate_importance(&a, &[Label::No], &[Label::Yes], Label::Yes, Language::En),
            Err(AttributionError::NoCorrectInstances(Label::Yes))
        ));
        assert!(matches!(
            aggregate_importance(&a, &[], &[Label::Yes], Label::Yes, Language::En),
            Err(AttributionError::LengthMismatch)
        ));
    }

    #[test]
    fn selection_examples() {
        let s = select_tokens(&table(&[0.5, 0.3, 0.15, 0.05]), 0.95).unwrap();
        assert_eq!(s.selected_tokens(), ["t0", "t1", "t2"]);
        let s = select_tokens(&table(&[0.97, 0.03]), 0.95).unwrap();
        assert_eq!(s.selected_tokens(), ["t0"]);
        let s = select_tokens(&table(&[0.2; 5]), 1.0).unwrap();
        assert_eq!(s.selected_tokens().len(), 5);
        assert!(matches!(select_tokens(&table(&[]), 0.95), Err(AttributionError::EmptyTable)));
        assert!(matches!(select_tokens(&table(&[1.0]), 0.0), Err(AttributionError::InvalidThreshold(_))));
    }

    #[test]
    fn csv_layout() {
        let t = select_tokens(&table(&[0.75, 0.25]), 0.95).unwrap();
        let mut buf = Vec::new();
        write_importance_csv(&[t], &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let mut lines = s.lines();
        assert_eq!(lines.next(), Some("token,class,lang,si,ir,rank,ci,selected"));
        assert_eq!(lines.next(), Some("t0,YES,en,0.75,0.75,1,0.75,true"));
        assert_eq!(lines.next(), Some("t1,YES,en,0.25,0.25,2,1,false"));
    }
}
