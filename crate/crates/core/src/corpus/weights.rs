use std::collections::HashMap;
use std::io::Write;

use super::types::{Attribute, Label, ObservationWeight};
use super::{Corpus, CorpusError};

/// Default minimum annotator share for an attribute value to survive filtering.
pub const DEFAULT_MIN_SHARE: f64 = 0.02;

/// Inverse-frequency observation weights.
///
/// For each (tweet, annotator) observation the raw weight is the product over
/// the five demographic attributes of `1 / f(value)` times `1 / f(label)`,
/// where frequencies are relative frequencies over observations. Normalized
/// weights divide by the corpus maximum; scaled weights rescale the
/// normalized ones to mean 1.
pub fn compute_weights(corpus: &Corpus) -> Result<Vec<ObservationWeight>, CorpusError> {
    let n = corpus.annotation_count();
    if n == 0 {
        return Ok(Vec::new());
    }

    let mut attr_counts: HashMap<(Attribute, &'static str), usize> = HashMap::new();
    let mut label_counts: HashMap<Label, usize> = HashMap::new();
    for (_, ann, profile) in corpus.observations() {
        for attr in Attribute::ALL {
            *attr_counts.entry((attr, profile.attribute_token(attr))).or_default() += 1;
        }
        *label_counts.entry(ann.label).or_default() += 1;
    }
    let total = n as f64;
    let freq = |count: Option<&usize>, what: String| -> Result<f64, CorpusError> {
        match count {
            Some(&c) if c > 0 => Ok(c as f64 / total),
            _ => Err(CorpusError::ZeroFrequency(what)),
        }
    };

    let mut out = Vec::with_capacity(n);
    for (tweet, ann, profile) in corpus.observations() {
        let mut w = 1.0;
        for attr in Attribute::ALL {
            let value = profile.attribute_token(attr);
            w /= freq(attr_counts.get(&(attr, value)), format!("{attr}={value}"))?;
        }
        w /= freq(label_counts.get(&ann.label), format!("label={}", ann.label))?;
        out.push(ObservationWeight {
            tweet_id: tweet.tweet_id.clone(),
            annotator_id: ann.annotator_id.clone(),
            w_raw: w,
            w_norm: 0.0,
            w_scaled: 0.0,
        });
    }

    let max = out.iter().map(|o| o.w_raw).fold(f64::MIN, f64::max);
    for o in &mut out {
        o.w_norm = o.w_raw / max;
    }
    let sum = neumaier_sum(out.iter().map(|o| o.w_norm));
    let scale = total / sum;
    for o in &mut out {
        o.w_scaled = o.w_norm * scale;
    }
    Ok(out)
}

fn neumaier_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Writes `tweet_id,annotator_id,w_raw,w_norm,w_scaled` CSV.
pub fn write_weights_csv<W: Write>(weights: &[ObservationWeight], out: W) -> Result<(), CorpusError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["tweet_id", "annotator_id", "w_raw", "w_norm", "w_scaled"])?;
    for o in weights {
        w.write_record([
            o.tweet_id.as_str(),
            o.annotator_id.as_str(),
            &o.w_raw.to_string(),
            &o.w_norm.to_string(),
            &o.w_scaled.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
