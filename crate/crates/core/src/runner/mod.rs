//! LLM annotation runs: chat clients, six-sample voting and a resumable
//! line-delimited result store.

mod client;
mod mock;
mod suite;
mod vote;

use thiserror::Error;

use crate::corpus::Language;
use crate::prompting::PromptError;

pub use client::{ChatClient, ClientConfig, CompletionRequest, HttpClient};
pub use mock::{MockClient, MockProfile};
pub use suite::{
    count_lines, read_store, run_suite, sha256_hex, store_paths, FailureRecord, RunManifest, RunSettings,
    StoreCounts, SuiteSummary, FAILURES_FILE, MANIFEST_FILE, RESULTS_FILE,
};
pub use vote::{
    aggregate_votes, build_annotation_set, parse_label, run_instance, InstanceKey, ParsedLabel,
    VirtualAnnotationSet, DEFAULT_SAMPLES,
};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("authentication rejected (HTTP {0})")]
    Auth(u16),
    #[error("environment variable {0} with the API key is not set")]
    MissingCredential(String),
    #[error("request timed out")]
    Timeout,
    #[error("transport: {0}")]
    Transport(String),
    #[error("HTTP {0}")]
    Status(u16),
    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: Box<ClientError> },
    #[error("unexpected response: {0}")]
    Decode(String),
    #[error("client configuration: {0}")]
    Config(String),
}

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("no scenarios to run")]
    NoScenarios,
    #[error("no clients to run")]
    NoClients,
    #[error("highlighting scenarios need a YES-class importance table for {0}")]
    MissingImportance(Language),
    #[error("run configuration: {0}")]
    InvalidConfig(String),
    #[error("result store line {line}: {message}")]
    CorruptStore { line: usize, message: String },
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
