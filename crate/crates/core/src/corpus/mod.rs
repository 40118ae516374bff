//! Multi-annotator corpus: ingestion, validation, rare-group filtering,
//! observation weighting and evaluation splits.
//!
//! The on-disk format is line-delimited JSON with two record kinds:
//!
//! ```text
//! {"kind":"profile","annotator_id":"a1","gender":"Female","age_band":"23-45","ethnicity":"Black","education":"Bachelor","country":"NG"}
//! {"kind":"tweet","tweet_id":"t1","lang":"en","text":"...","annotations":[{"annotator_id":"a1","label":"YES"}]}
//! ```
//!
//! Records may appear in any order; references are resolved after the whole
//! input has been read. Blank lines are ignored.

mod convert;
mod filter;
mod region;
mod split;
mod types;
mod weights;

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use convert::convert_exist_json;
pub use filter::{enumerate_combinations, filter_rare, RemovalReason, RemovalReport, RemovedAnnotator};
pub use region::{map_region, RegionTable};
pub use split::{split_eval, EvalSplit};
pub use types::{
    AgeBand, Annotation, AnnotatorProfile, Attribute, CombinationKey, DemographicCombination,
    Education, Ethnicity, Gender, Label, Language, ObservationWeight, Region, TweetRecord,
    UnknownToken,
};
pub use weights::{compute_weights, write_weights_csv, DEFAULT_MIN_SHARE};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("empty corpus")]
    Empty,
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: {source}")]
    InvalidToken { line: usize, source: UnknownToken },
    #[error("line {line}: unknown annotator reference {annotator_id:?}")]
    UnknownAnnotator { line: usize, annotator_id: String },
    #[error("line {line}: duplicate tweet_id {tweet_id:?}")]
    DuplicateTweet { line: usize, tweet_id: String },
    #[error("line {line}: duplicate annotator profile {annotator_id:?}")]
    DuplicateAnnotator { line: usize, annotator_id: String },
    #[error("line {line}: annotator {annotator_id:?} appears twice in tweet {tweet_id:?}")]
    RepeatedAnnotation {
        line: usize,
        tweet_id: String,
        annotator_id: String,
    },
    #[error("line {line}: tweet {tweet_id:?} has empty text")]
    EmptyText { line: usize, tweet_id: String },
    #[error("line {line}: tweet {tweet_id:?} has {found} annotations, expected {expected}")]
    Multiplicity {
        line: usize,
        tweet_id: String,
        expected: usize,
        found: usize,
    },
    #[error("unmapped country {0:?}")]
    UnmappedCountry(String),
    #[error("zero frequency for {0}")]
    ZeroFrequency(String),
    #[error("split fraction must lie in (0, 1), got {0}")]
    InvalidFraction(f64),
    #[error(
        "split infeasible for {language}: covering every demographic combination needs {required} \
         texts but the fraction yields {target}; smallest feasible fraction is {min_fraction:.4}"
    )]
    InfeasibleSplit {
        language: Language,
        required: usize,
        target: usize,
        min_fraction: f64,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// A validated corpus. Profiles and tweets keep their input order.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    profiles: Vec<AnnotatorProfile>,
    tweets: Vec<TweetRecord>,
    index: HashMap<String, usize>,
}

impl Corpus {
    /// Builds a corpus from already-typed parts, checking references,
    /// duplicate ids and nonempty texts. Annotation multiplicity is not
    /// checked here since filtered corpora legitimately vary.
    pub fn new(profiles: Vec<AnnotatorProfile>, tweets: Vec<TweetRecord>) -> Result<Self, CorpusError> {
        let mut index = HashMap::with_capacity(profiles.len());
        for (i, p) in profiles.iter().enumerate() {
            if index.insert(p.annotator_id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateAnnotator {
                    line: 0,
                    annotator_id: p.annotator_id.clone(),
                });
            }
        }
        let mut seen = HashSet::new();
        for t in &tweets {
            if !seen.insert(t.tweet_id.as_str()) {
                return Err(CorpusError::DuplicateTweet {
                    line: 0,
                    tweet_id: t.tweet_id.clone(),
                });
            }
            check_tweet(t, 0, &index)?;
        }
        Ok(Self {
            profiles,
            tweets,
            index,
        })
    }

    pub fn empty() -> Self {
        Self {
            profiles: Vec::new(),
            tweets: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn profiles(&self) -> &[AnnotatorProfile] {
        &self.profiles
    }

    pub fn tweets(&self) -> &[TweetRecord] {
        &self.tweets
    }

    pub fn profile(&self, annotator_id: &str) -> Option<&AnnotatorProfile> {
        self.index.get(annotator_id).map(|&i| &self.profiles[i])
    }

    pub fn annotation_count(&self) -> usize {
        self.tweets.iter().map(|t| t.annotations.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.tweets.is_empty()
    }

    pub fn tweets_in(&self, language: Language) -> impl Iterator<Item = &TweetRecord> {
        self.tweets.iter().filter(move |t| t.language == language)
    }

    /// Iterates `(tweet, annotation, profile)` triples in corpus order.
    pub fn observations(&self) -> impl Iterator<Item = (&TweetRecord, &Annotation, &AnnotatorProfile)> {
        self.tweets.iter().flat_map(move |t| {
            t.annotations.iter().map(move |a| {
                let p = self.profile(&a.annotator_id).expect("validated reference");
                (t, a, p)
            })
        })
    }

    /// Languages each annotator has labeled in.
    pub fn annotator_languages(&self) -> BTreeMap<&str, HashSet<Language>> {
        let mut out: BTreeMap<&str, HashSet<Language>> = BTreeMap::new();
        for t in &self.tweets {
            for a in &t.annotations {
                out.entry(a.annotator_id.as_str()).or_default().insert(t.language);
            }
        }
        out
    }

    /// Keeps tweets matching `keep`; all profiles are retained.
    pub fn retain_tweets(&self, mut keep: impl FnMut(&TweetRecord) -> bool) -> Corpus {
        Corpus {
            profiles: self.profiles.clone(),
            tweets: self.tweets.iter().filter(|t| keep(t)).cloned().collect(),
            index: self.index.clone(),
        }
    }

    /// Serializes to the line-delimited format: profiles first, then tweets.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for p in &self.profiles {
            let rec = RawRecord::Profile(RawProfile {
                annotator_id: p.annotator_id.clone(),
                gender: p.gender.token().to_string(),
                age_band: p.age_band.token().to_string(),
                ethnicity: p.ethnicity.token().to_string(),
                education: p.education.token().to_string(),
                country: p.country.clone(),
            });
            out.push_str(&serde_json::to_string(&rec).expect("serializable"));
            out.push('\n');
        }
        for t in &self.tweets {
            let rec = RawRecord::Tweet(RawTweet {
                tweet_id: t.tweet_id.clone(),
                lang: t.language.token().to_string(),
                text: t.text.clone(),
                annotations: t
                    .annotations
                    .iter()
                    .map(|a| RawAnnotation {
                        annotator_id: a.annotator_id.clone(),
                        label: a.label.token().to_string(),
                    })
                    .collect(),
            });
            out.push_str(&serde_json::to_string(&rec).expect("serializable"));
            out.push('\n');
        }
        out
    }
}

fn check_tweet(t: &TweetRecord, line: usize, index: &HashMap<String, usize>) -> Result<(), CorpusError> {
    if t.text.trim().is_empty() {
        return Err(CorpusError::EmptyText {
            line,
            tweet_id: t.tweet_id.clone(),
        });
    }
    let mut ids = HashSet::new();
    for a in &t.annotations {
        if !index.contains_key(&a.annotator_id) {
            return Err(CorpusError::UnknownAnnotator {
                line,
                annotator_id: a.annotator_id.clone(),
            });
        }
        if !ids.insert(a.annotator_id.as_str()) {
            return Err(CorpusError::RepeatedAnnotation {
                line,
                tweet_id: t.tweet_id.clone(),
                annotator_id: a.annotator_id.clone(),
            });
        }
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum RawRecord {
    Profile(RawProfile),
    Tweet(RawTweet),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProfile {
    annotator_id: String,
    gender: String,
    age_band: String,
    ethnicity: String,
    education: String,
    country: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTweet {
    tweet_id: String,
    lang: String,
    text: String,
    annotations: Vec<RawAnnotation>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAnnotation {
    annotator_id: String,
    label: String,
}

fn token<T: std::str::FromStr<Err = UnknownToken>>(s: &str, line: usize) -> Result<T, CorpusError> {
    s.parse().map_err(|source| CorpusError::InvalidToken { line, source })
}

/// Bundled 20-tweet synthetic corpus (10 per language, 12 annotators, six
/// demographic combinations) in the line-delimited corpus format.
pub const FIXTURE_CORPUS: &str = include_str!("../../data/fixture_corpus.jsonl");

pub fn bundled_fixture() -> Corpus {
    parse_corpus(FIXTURE_CORPUS.as_bytes()).expect("bundled fixture parses")
}

/// Parses and validates a corpus using the bundled region table.
pub fn parse_corpus(bytes: &[u8]) -> Result<Corpus, CorpusError> {
    parse_corpus_with(bytes, RegionTable::bundled())
}

pub fn parse_corpus_with(bytes: &[u8], regions: &RegionTable) -> Result<Corpus, CorpusError> {
    let text = std::str::from_utf8(bytes).map_err(|e| CorpusError::Malformed {
        line: 0,
        message: format!("input is not UTF-8: {e}"),
    })?;

    let mut profiles = Vec::new();
    let mut index = HashMap::new();
    let mut pending: Vec<(usize, TweetRecord)> = Vec::new();
    let mut tweet_ids = HashSet::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let record: RawRecord = serde_json::from_str(raw).map_err(|e| CorpusError::Malformed {
            line,
            message: e.to_string(),
        })?;
        match record {
            RawRecord::Profile(p) => {
                let region = regions.lookup(&p.country).map_err(|_| CorpusError::Malformed {
                    line,
                    message: format!("unmapped country {:?}", p.country),
                })?;
                let profile = AnnotatorProfile {
                    gender: token(&p.gender, line)?,
                    age_band: token(&p.age_band, line)?,
                    ethnicity: token(&p.ethnicity, line)?,
                    education: token(&p.education, line)?,
                    country: p.country.trim().to_ascii_uppercase(),
                    region,
                    annotator_id: p.annotator_id,
                };
                if index.insert(profile.annotator_id.clone(), profiles.len()).is_some() {
                    return Err(CorpusError::DuplicateAnnotator {
                        line,
                        annotator_id: profile.annotator_id,
                    });
                }
                profiles.push(profile);
            }
            RawRecord::Tweet(t) => {
                if !tweet_ids.insert(t.tweet_id.clone()) {
                    return Err(CorpusError::DuplicateTweet {
                        line,
                        tweet_id: t.tweet_id,
                    });
                }
                let annotations = t
                    .annotations
                    .iter()
                    .map(|a| {
                        Ok(Annotation {
                            annotator_id: a.annotator_id.clone(),
                            label: token(&a.label, line)?,
                        })
                    })
                    .collect::<Result<Vec<_>, CorpusError>>()?;
                pending.push((
                    line,
                    TweetRecord {
                        tweet_id: t.tweet_id,
                        language: token(&t.lang, line)?,
                        text: t.text,
                        annotations,
                    },
                ));
            }
        }
    }

    if pending.is_empty() {
        return Err(CorpusError::Empty);
    }

    let expected = pending[0].1.annotations.len();
    for (line, t) in &pending {
        check_tweet(t, *line, &index)?;
        if t.annotations.len() != expected {
            return Err(CorpusError::Multiplicity {
                line: *line,
                tweet_id: t.tweet_id.clone(),
                expected,
                found: t.annotations.len(),
            });
        }
    }

    Ok(Corpus {
        profiles,
        tweets: pending.into_iter().map(|(_, t)| t).collect(),
        index,
    })
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn profile(id: &str, g: Gender, a: AgeBand, e: Ethnicity, ed: Education, country: &str) -> AnnotatorProfile {
        AnnotatorProfile {
            annotator_id: id.to_string(),
            gender: g,
            age_band: a,
            ethnicity: e,
            education: ed,
            country: country.to_string(),
            region: map_region(country).unwrap(),
        }
    }

    pub fn tweet(id: &str, lang: Language, labels: &[(&str, Label)]) -> TweetRecord {
        TweetRecord {
            tweet_id: id.to_string(),
            language: lang,
            text: format!("text of {id}"),
            annotations: labels
                .iter()
                .map(|(a, l)| Annotation {
                    annotator_id: a.to_string(),
                    label: *l,
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"
{"kind":"profile","annotator_id":"a1","gender":"Female","age_band":"23-45","ethnicity":"Black","education":"Bachelor","country":"NG"}
{"kind":"profile","annotator_id":"a2","gender":"Male","age_band":"18-22","ethnicity":"White","education":"Bachelor","country":"ES"}
{"kind":"tweet","tweet_id":"t1","lang":"en","text":"women drive poorly","annotations":[{"annotator_id":"a1","label":"YES"},{"annotator_id":"a2","label":"NO"}]}
{"kind":"tweet","tweet_id":"t2","lang":"es","text":"hola","annotations":[{"annotator_id":"a2","label":"NO"},{"annotator_id":"a1","label":"NO"}]}
"#;

    #[test]
    fn parses_small_corpus() {
        let c = parse_corpus(SMALL.as_bytes()).unwrap();
        assert_eq!(c.tweets().len(), 2);
        assert_eq!(c.annotation_count(), 4);
        assert_eq!(c.profile("a1").unwrap().region, Region::Africa);
        assert_eq!(c.tweets_in(Language::Es).count(), 1);
    }

    #[test]
    fn round_trips_through_jsonl() {
        let c = parse_corpus(SMALL.as_bytes()).unwrap();
        let again = parse_corpus(c.to_jsonl().as_bytes()).unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn empty_input_is_rejected() {
        let err = parse_corpus(b"").unwrap_err();
        assert_eq!(err.to_string(), "empty corpus");
        assert!(matches!(parse_corpus(b"\n\n  \n"), Err(CorpusError::Empty)));
    }

    #[test]
    fn unknown_annotator_is_named() {
        let text = SMALL.replace(r#""annotator_id":"a2","label":"NO"},{"annotator_id":"a1""#, r#""annotator_id":"a99","label":"NO"},{"annotator_id":"a1""#);
        let err = parse_corpus(text.as_bytes()).unwrap_err();
        match &err {
            CorpusError::UnknownAnnotator { annotator_id, line } => {
                assert_eq!(annotator_id, "a99");
                assert_eq!(*line, 5);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(err.to_string().contains("a99"));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = format!("{}\n{{not json\n", SMALL.trim());
        match parse_corpus(text.as_bytes()) {
            Err(CorpusError::Malformed { line, .. }) => assert_eq!(line, 5),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_tweet_and_bad_tokens() {
        let dup = format!("{}\n{}", SMALL.trim(), SMALL.trim().lines().last().unwrap());
        assert!(matches!(
            parse_corpus(dup.as_bytes()),
            Err(CorpusError::DuplicateTweet { line: 5, .. })
        ));
        let bad = SMALL.replace("\"Black\"", "\"Purple\"");
        match parse_corpus(bad.as_bytes()) {
            Err(CorpusError::InvalidToken { line, source }) => {
                assert_eq!(line, 2);
                assert_eq!(source.token, "Purple");
            }
            other => panic!("unexpected {other:?}"),
        }
        let bad_label = SMALL.replacen("\"YES\"", "\"MAYBE\"", 1);
        assert!(matches!(
            parse_corpus(bad_label.as_bytes()),
            Err(CorpusError::InvalidToken { line: 4, .. })
        ));
        let bad_lang = SMALL.replace("\"lang\":\"es\"", "\"lang\":\"fr\"");
        assert!(matches!(
            parse_corpus(bad_lang.as_bytes()),
            Err(CorpusError::InvalidToken { line: 5, .. })
        ));
    }

    #[test]
    fn multiplicity_and_repeats_are_checked() {
        let short = SMALL.replace(
            r#"[{"annotator_id":"a2","label":"NO"},{"annotator_id":"a1","label":"NO"}]"#,
            r#"[{"annotator_id":"a2","label":"NO"}]"#,
        );
        assert!(matches!(
            parse_corpus(short.as_bytes()),
            Err(CorpusError::Multiplicity { expected: 2, found: 1, .. })
        ));
        let repeat = SMALL.replace(
            r#"[{"annotator_id":"a2","label":"NO"},{"annotator_id":"a1","label":"NO"}]"#,
            r#"[{"annotator_id":"a2","label":"NO"},{"annotator_id":"a2","label":"NO"}]"#,
        );
        assert!(matches!(
            parse_corpus(repeat.as_bytes()),
            Err(CorpusError::RepeatedAnnotation { .. })
        ));
        let empty_text = SMALL.replace("\"hola\"", "\"  \"");
        assert!(matches!(parse_corpus(empty_text.as_bytes()), Err(CorpusError::EmptyText { .. })));
    }

    #[test]
    fn unmapped_country_in_profile() {
        let bad = SMALL.replace("\"NG\"", "\"ZZ\"");
        let err = parse_corpus(bad.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("ZZ"));
    }
}
