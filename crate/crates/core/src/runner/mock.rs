use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agreement::majority_label;
use crate::corpus::{Corpus, Label, Language};

use super::client::{ChatClient, CompletionRequest};
use super::ClientError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockProfile {
    EchoGold,
    Fixed,
    HashRandom,
}

impl MockProfile {
    pub fn name(self) -> &'static str {
        match self {
            MockProfile::EchoGold => "echo_gold",
            MockProfile::Fixed => "fixed",
            MockProfile::HashRandom => "hash_random",
        }
    }
}

/// Offline client with deterministic answers.
#[derive(Debug, Clone)]
pub struct MockClient {
    profile: MockProfile,
    model_id: String,
    seed: u64,
    fixed: String,
    gold: HashMap<String, Label>,
    max_in_flight: usize,
}

fn answer(label: Label, language: Language) -> &'static str {
    match (label, language) {
        (Label::Yes, Language::Es) => "SÍ",
        (Label::Yes, Language::En) => "YES",
        (Label::No, _) => "NO",
    }
}

impl MockClient {
    /// Answers each tweet's human majority label (ties YES).
    pub fn echo_gold(corpus: &Corpus) -> Self {
        let gold = corpus
            .tweets()
            .iter()
            .filter_map(|t| majority_label(&t.labels()).ok().map(|m| (t.tweet_id.clone(), m.label)))
            .collect();
        Self { gold, ..Self::base(MockProfile::EchoGold, 0) }
    }

    /// Always returns `response` verbatim.
    pub fn fixed(response: impl Into<String>) -> Self {
        Self { fixed: response.into(), ..Self::base(MockProfile::Fixed, 0) }
    }

    /// YES or NO from a hash of (prompt, sample index, seed).
    pub fn hash_random(seed: u64) -> Self {
        Self::base(MockProfile::HashRandom, seed)
    }

    fn base(profile: MockProfile, seed: u64) -> Self {
        Self {
            profile,
            model_id: format!("mock-{}", profile.name()),
            seed,
            fixed: String::new(),
            gold: HashMap::new(),
            max_in_flight: 1,
        }
    }

    pub fn with_model_id(mut self, id: impl Into<String>) -> Self {
        self.model_id = id.into();
        self
    }

    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.max_in_flight = n.max(1);
        self
    }

    pub fn profile(&self) -> MockProfile {
        self.profile
    }
}

impl ChatClient for MockClient {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn max_in_flight(&self) -> usize {
        self.max_in_flight
    }

    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, ClientError> {
        Ok(match self.profile {
            MockProfile::Fixed => self.fixed.clone(),
            MockProfile::EchoGold => {
                let label = self
                    .gold
                    .get(request.tweet_id)
                    .ok_or_else(|| ClientError::Decode(format!("no gold label for {}", request.tweet_id)))?;
                answer(*label, request.language).to_string()
            }
            MockProfile::HashRandom => {
                let mut h = Sha256::new();
                h.update(request.body.as_bytes());
                h.update((request.sample_index as u64).to_le_bytes());
                h.update(self.seed.to_le_bytes());
                let d = h.finalize();
                answer(Label::from_bool(d[0] & 1 == 1), request.language).to_string()
            }
        })
    }
}
