//! Scoring of LLM result stores against human majority labels, and the
//! scenario-grid tables built from the scores.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agreement::majority_label;
use crate::corpus::{Corpus, Label, Language};
use crate::glmm::ClassificationMetrics;
use crate::prompting::Scenario;
use crate::runner::VirtualAnnotationSet;

const BUNDLED_REFERENCE: &str = include_str!("../data/table3_reference.csv");

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no gold label for tweet {0}")]
    MissingGold(String),
    #[error("report has no slices")]
    EmptyReport,
    #[error("no reference cell for {0}")]
    KeyMismatch(String),
    #[error("{0} appears at several temperatures; pick one")]
    AmbiguousTemperature(String),
    #[error("scenario table: {0}")]
    Table(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Accuracy,
    F1,
}

impl Metric {
    pub const ALL: [Metric; 2] = [Metric::Accuracy, Metric::F1];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::F1 => "f1",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Metric::ALL.into_iter().find(|m| m.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceMetrics {
    pub model_id: String,
    pub scenario: Scenario,
    pub language: Language,
    pub temperature: f64,
    pub n: usize,
    pub accuracy: f64,
    pub f1: f64,
    /// Present only when the slice has a gold-YES instance.
    pub tpr: Option<f64>,
    pub fnr: Option<f64>,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
    pub tie_count: usize,
    pub unparseable_count: usize,
    pub failed_count: usize,
}

impl SliceMetrics {
    pub fn metric(&self, m: Metric) -> f64 {
        match m {
            Metric::Accuracy => self.accuracy,
            Metric::F1 => self.f1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub slices: Vec<SliceMetrics>,
}

/// Majority label per tweet (ties YES).
pub fn gold_labels(corpus: &Corpus) -> BTreeMap<String, Label> {
    corpus
        .tweets()
        .iter()
        .filter_map(|t| majority_label(&t.labels()).ok().map(|m| (t.tweet_id.clone(), m.label)))
        .collect()
}

#[derive(Default)]
struct Tally {
    tp: usize,
    fp: usize,
    fn_: usize,
    tn: usize,
    ties: usize,
    unparseable: usize,
    failed: usize,
}

/// Per (model, scenario, language, temperature) slice: accuracy, F1 with YES
/// as the positive class, and TPR/FNR over gold-YES instances. An instance
/// whose six responses were all unparseable counts as a wrong prediction.
pub fn score_run(store: &[VirtualAnnotationSet], gold: &BTreeMap<String, Label>) -> Result<EvalReport, EvalError> {
    let mut tallies: BTreeMap<(String, Scenario, Language, u64), Tally> = BTreeMap::new();
    for r in store {
        let g = *gold.get(&r.tweet_id).ok_or_else(|| EvalError::MissingGold(r.tweet_id.clone()))?;
        let t = tallies
            .entry((r.model_id.clone(), r.scenario, r.language, r.temperature.to_bits()))
            .or_default();
        let pred = r.prediction().unwrap_or(match g {
            Label::Yes => Label::No,
            Label::No => Label::Yes,
        });
        match (pred, g) {
            (Label::Yes, Label::Yes) => t.tp += 1,
            (Label::Yes, Label::No) => t.fp += 1,
            (Label::No, Label::Yes) => t.fn_ += 1,
            (Label::No, Label::No) => t.tn += 1,
        }
        t.ties += usize::from(r.hard_label.is_some_and(|m| m.tied));
        t.unparseable += r.unparseable_count();
        t.failed += usize::from(r.failed);
    }
    let slices = tallies
        .into_iter()
        .map(|((model_id, scenario, language, bits), t)| {
            let c = ClassificationMetrics::from_counts(t.tp, t.fp, t.fn_, t.tn);
            let pos = t.tp + t.fn_;
            SliceMetrics {
                model_id,
                scenario,
                language,
                temperature: f64::from_bits(bits),
                n: t.tp + t.fp + t.fn_ + t.tn,
                accuracy: c.accuracy,
                f1: c.f1,
                tpr: (pos > 0).then(|| t.tp as f64 / pos as f64),
                fnr: (pos > 0).then(|| t.fn_ as f64 / pos as f64),
                tp: t.tp,
                fp: t.fp,
                fn_: t.fn_,
                tn: t.tn,
                tie_count: t.ties,
                unparseable_count: t.unparseable,
                failed_count: t.failed,
            }
        })
        .collect();
    Ok(EvalReport { slices })
}

fn column(language: Language, scenario: Scenario) -> String {
    format!("{}_{}", language.token(), scenario.name())
}

fn columns() -> Vec<(Language, Scenario)> {
    Language::ALL.iter().flat_map(|&l| Scenario::ALL.into_iter().map(move |s| (l, s))).collect()
}

/// Half away from zero at two decimals.
fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Scenario grid: one row per (metric, model, temperature), one column per
/// language × scenario, values to two decimals. Accuracy rows come first,
/// then F1 rows. Missing cells are empty.
pub fn emit_scenario_table(report: &EvalReport) -> Result<Vec<u8>, EvalError> {
    if report.slices.is_empty() {
        return Err(EvalError::EmptyReport);
    }
    let mut rows: BTreeMap<(String, u64), BTreeMap<(Language, Scenario), &SliceMetrics>> = BTreeMap::new();
    for s in &report.slices {
        rows.entry((s.model_id.clone(), s.temperature.to_bits())).or_default().insert((s.language, s.scenario), s);
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["metric".to_string(), "model".into(), "temperature".into()];
    header.extend(columns().into_iter().map(|(l, s)| column(l, s)));
    w.write_record(&header)?;
    for metric in Metric::ALL {
        for ((model, bits), cells) in &rows {
            let mut rec = vec![metric.name().to_string(), model.clone(), f64::from_bits(*bits).to_string()];
            for key in columns() {
                rec.push(cells.get(&key).map_or(String::new(), |s| format!("{:.2}", round2(s.metric(metric)))));
            }
            w.write_record(&rec)?;
        }
    }
    w.into_inner().map_err(|e| EvalError::Table(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableCell {
    pub model: String,
    pub temperature: Option<f64>,
    pub scenario: Scenario,
    pub language: Language,
    pub metric: Metric,
    pub value: f64,
}

/// Reads back a table written by [`emit_scenario_table`].
pub fn parse_scenario_table(bytes: &[u8]) -> Result<Vec<TableCell>, EvalError> {
    let mut rdr = csv::Reader::from_reader(bytes);
    let header = rdr.headers()?.clone();
    let cols = columns();
    if header.len() != 3 + cols.len() || header.iter().skip(3).ne(cols.iter().map(|(l, s)| column(*l, *s))) {
        return Err(EvalError::Table("unexpected header".into()));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let metric = Metric::parse(&rec[0]).ok_or_else(|| EvalError::Table(format!("unknown metric {}", &rec[0])))?;
        let temperature = rec[2].parse().map_err(|_| EvalError::Table(format!("bad temperature {}", &rec[2])))?;
        for (k, (language, scenario)) in cols.iter().enumerate() {
            let cell = &rec[3 + k];
            if cell.is_empty() {
                continue;
            }
            let value = cell.parse().map_err(|_| EvalError::Table(format!("bad value {cell}")))?;
            out.push(TableCell {
                model: rec[1].to_string(),
                temperature: Some(temperature),
                scenario: *scenario,
                language: *language,
                metric,
                value,
            });
        }
    }
    Ok(out)
}

/// TPR/FNR per slice, long format.
pub fn write_rates_csv<W: Write>(report: &EvalReport, out: W) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["model", "temperature", "scenario", "lang", "n", "positives", "tpr", "fnr"])?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for s in &report.slices {
        w.write_record([
            s.model_id.clone(),
            s.temperature.to_string(),
            s.scenario.name().to_string(),
            s.language.token().to_string(),
            s.n.to_string(),
            (s.tp + s.fn_).to_string(),
            opt(s.tpr),
            opt(s.fnr),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Published scenario-grid values, for delta reporting only: they come from
/// remote models and cannot be reproduced offline.
pub fn bundled_reference() -> Vec<TableCell> {
    parse_reference(BUNDLED_REFERENCE).expect("bundled reference parses")
}

/// Long-format CSV `model,scenario,lang,metric,value`.
pub fn parse_reference(text: &str) -> Result<Vec<TableCell>, EvalError> {
    #[derive(Deserialize)]
    struct Row {
        model: String,
        scenario: String,
        lang: String,
        metric: String,
        value: f64,
    }
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    rdr.deserialize::<Row>()
        .map(|r| {
            let r = r?;
            Ok(TableCell {
                model: r.model,
                temperature: None,
                scenario: r.scenario.parse().map_err(|_| EvalError::Table(format!("scenario {}", r.scenario)))?,
                language: r.lang.parse().map_err(|_| EvalError::Table(format!("language {}", r.lang)))?,
                metric: Metric::parse(&r.metric).ok_or_else(|| EvalError::Table(format!("metric {}", r.metric)))?,
                value: r.value,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellDelta {
    pub model: String,
    pub scenario: Scenario,
    pub language: Language,
    pub metric: Metric,
    pub observed: f64,
    pub reference: f64,
    pub delta: f64,
}

/// Signed differences (observed − reference) for every report cell.
/// `aliases` maps report model ids to reference model names; unmapped ids are
/// used as they are. Each (model, scenario, language) may appear at only one
/// temperature.
pub fn compare_to_reference(
    report: &EvalReport,
    reference: &[TableCell],
    aliases: &BTreeMap<String, String>,
) -> Result<Vec<CellDelta>, EvalError> {
    let lookup: BTreeMap<(&str, Scenario, Language, Metric), f64> =
        reference.iter().map(|c| ((c.model.as_str(), c.scenario, c.language, c.metric), c.value)).collect();
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for s in &report.slices {
        let model = aliases.get(&s.model_id).unwrap_or(&s.model_id);
        if !seen.insert((model.clone(), s.scenario, s.language)) {
            return Err(EvalError::AmbiguousTemperature(format!("{model}/{}/{}", s.scenario, s.language)));
        }
        for metric in Metric::ALL {
            let reference = *lookup
                .get(&(model.as_str(), s.scenario, s.language, metric))
                .ok_or_else(|| EvalError::KeyMismatch(format!("{model}/{}/{}/{}", s.scenario, s.language, metric.name())))?;
            let observed = s.metric(metric);
            out.push(CellDelta {
                model: model.clone(),
                scenario: s.scenario,
                language: s.language,
                metric,
                observed,
                reference,
                delta: observed - reference,
            });
        }
    }
    Ok(out)
}

pub fn write_deltas_csv<W: Write>(deltas: &[CellDelta], out: W) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["model", "scenario", "lang", "metric", "observed", "reference", "delta"])?;
    for d in deltas {
        w.write_record([
            d.model.clone(),
            d.scenario.name().to_string(),
            d.language.token().to_string(),
            d.metric.name().to_string(),
            d.observed.to_string(),
            d.reference.to_string(),
            d.delta.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
