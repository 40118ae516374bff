use serde::{Deserialize, Serialize};

use crate::agreement::{majority_label, MajorityResult};
use crate::corpus::{Label, Language};
use crate::prompting::{PromptSpec, Scenario};

use super::client::{ChatClient, CompletionRequest};
use super::ClientError;

pub const DEFAULT_SAMPLES: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ParsedLabel {
    Yes,
    No,
    Unparseable,
}

impl ParsedLabel {
    pub fn label(self) -> Option<Label> {
        match self {
            ParsedLabel::Yes => Some(Label::Yes),
            ParsedLabel::No => Some(Label::No),
            ParsedLabel::Unparseable => None,
        }
    }
}

/// Reads the first alphabetic word: yes/no in English, sí/si/no in Spanish,
/// case-insensitively. Anything else is unparseable.
pub fn parse_label(response: &str, language: Language) -> ParsedLabel {
    let word: String = response
        .chars()
        .skip_while(|c| !c.is_alphabetic())
        .take_while(|c| c.is_alphabetic())
        .collect::<String>()
        .to_lowercase();
    match (language, word.as_str()) {
        (Language::En, "yes") | (Language::Es, "sí" | "si") => ParsedLabel::Yes,
        (_, "no") => ParsedLabel::No,
        _ => ParsedLabel::Unparseable,
    }
}

/// Aggregate of the parseable votes, or `None` when every vote is unparseable.
pub fn aggregate_votes(parsed: &[ParsedLabel]) -> Option<(MajorityResult, f64)> {
    let votes: Vec<Label> = parsed.iter().filter_map(|p| p.label()).collect();
    let m = majority_label(&votes).ok()?;
    Some((m, m.yes_share))
}

/// Six (or `n`) sampled answers to one prompt and their majority vote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VirtualAnnotationSet {
    pub tweet_id: String,
    pub language: Language,
    pub scenario: Scenario,
    pub model_id: String,
    pub temperature: f64,
    pub responses: Vec<String>,
    pub parsed: Vec<ParsedLabel>,
    pub hard_label: Option<MajorityResult>,
    /// YES share among parseable votes.
    pub soft_label: Option<f64>,
    pub failed: bool,
}

impl VirtualAnnotationSet {
    pub fn unparseable_count(&self) -> usize {
        self.parsed.iter().filter(|p| **p == ParsedLabel::Unparseable).count()
    }

    pub fn prediction(&self) -> Option<Label> {
        self.hard_label.map(|m| m.label)
    }

    pub fn key(&self) -> InstanceKey {
        InstanceKey::new(&self.tweet_id, self.scenario, &self.model_id, self.temperature)
    }
}

/// Identity of one result record in a store.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct InstanceKey {
    pub tweet_id: String,
    pub scenario: Scenario,
    pub model_id: String,
    pub temperature_bits: u64,
}

impl InstanceKey {
    pub fn new(tweet_id: &str, scenario: Scenario, model_id: &str, temperature: f64) -> Self {
        Self {
            tweet_id: tweet_id.to_string(),
            scenario,
            model_id: model_id.to_string(),
            temperature_bits: temperature.to_bits(),
        }
    }
}

pub fn build_annotation_set(
    prompt: &PromptSpec,
    model_id: &str,
    temperature: f64,
    responses: Vec<String>,
) -> VirtualAnnotationSet {
    let parsed: Vec<ParsedLabel> = responses.iter().map(|r| parse_label(r, prompt.language)).collect();
    let agg = aggregate_votes(&parsed);
    VirtualAnnotationSet {
        tweet_id: prompt.tweet_id.clone(),
        language: prompt.language,
        scenario: prompt.scenario,
        model_id: model_id.to_string(),
        temperature,
        responses,
        parsed,
        hard_label: agg.map(|a| a.0),
        soft_label: agg.map(|a| a.1),
        failed: agg.is_none(),
    }
}

/// Requests `n` samples sequentially and aggregates them. Sample `k` carries
/// seed `seed + k`.
pub fn run_instance(
    client: &dyn ChatClient,
    prompt: &PromptSpec,
    temperature: f64,
    n: usize,
    seed: Option<u64>,
) -> Result<VirtualAnnotationSet, ClientError> {
    if n == 0 {
        return Err(ClientError::Config("at least one sample is required".into()));
    }
    let mut responses = Vec::with_capacity(n);
    for k in 0..n {
        responses.push(client.complete(&CompletionRequest {
            tweet_id: &prompt.tweet_id,
            language: prompt.language,
            body: &prompt.body,
            temperature,
            sample_index: k,
            seed: seed.map(|s| s.wrapping_add(k as u64)),
        })?);
    }
    Ok(build_annotation_set(prompt, client.model_id(), temperature, responses))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runner::MockClient;

    fn prompt(lang: Language) -> PromptSpec {
        PromptSpec {
            scenario: Scenario::GenAI,
            language: lang,
            tweet_id: "t".into(),
            body: "b".into(),
            persona: None,
            highlighted: false,
        }
    }

    fn set(responses: &[&str]) -> VirtualAnnotationSet {
        build_annotation_set(&prompt(Language::En), "m", 0.7, responses.iter().map(|s| s.to_string()).collect())
    }

    #[test]
    fn parse_examples() {
        assert_eq!(parse_label("YES", Language::En), ParsedLabel::Yes);
        assert_eq!(parse_label("Sí, este tuit es sexista", Language::Es), ParsedLabel::Yes);
        assert_eq!(parse_label("si", Language::Es), ParsedLabel::Yes);
        assert_eq!(parse_label("**No**.", Language::En), ParsedLabel::No);
        assert_eq!(parse_label("It depends", Language::En), ParsedLabel::Unparseable);
        assert_eq!(parse_label("yes", Language::Es), ParsedLabel::Unparseable);
        assert_eq!(parse_label("", Language::En), ParsedLabel::Unparseable);
        assert_eq!(parse_label("Yesterday", Language::En), ParsedLabel::Unparseable);
    }

    #[test]
    fn vote_examples() {
        let s = set(&["YES"; 6]);
        assert_eq!((s.prediction(), s.soft_label), (Some(Label::Yes), Some(1.0)));
        let s = set(&["YES", "YES", "NO", "NO", "NO", "NO"]);
        assert_eq!(s.prediction(), Some(Label::No));
        assert!((s.soft_label.unwrap() - 1.0 / 3.0).abs() < 1e-12);
        let s = set(&["YES", "YES", "YES", "NO", "NO", "maybe"]);
        assert_eq!((s.prediction(), s.soft_label), (Some(Label::Yes), Some(0.6)));
        assert_eq!(s.unparseable_count(), 1);
        let s = set(&["?"; 6]);
        assert!(s.failed && s.hard_label.is_none() && s.soft_label.is_none());
    }

    #[test]
    fn run_instance_uses_n_samples() {
        let c = MockClient::fixed("NO");
        let s = run_instance(&c, &prompt(Language::Es), 0.2, 6, None).unwrap();
        assert_eq!(s.responses.len(), 6);
        assert_eq!(s.prediction(), Some(Label::No));
        assert!(run_instance(&c, &prompt(Language::Es), 0.2, 0, None).is_err());
    }
}
