use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attribution::TokenImportanceTable;
use crate::corpus::{CombinationKey, Corpus, Language};
use crate::prompting::{build_persona, build_prompt, default_highlight_table, PromptSpec, Scenario, TemplateSet};

use super::client::ChatClient;
use super::vote::{run_instance, InstanceKey, VirtualAnnotationSet, DEFAULT_SAMPLES};
use super::{ClientError, RunnerError};

pub const RESULTS_FILE: &str = "results.jsonl";
pub const FAILURES_FILE: &str = "failures.jsonl";
pub const MANIFEST_FILE: &str = "run_manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSettings {
    pub temperatures: Vec<f64>,
    pub samples: usize,
    /// Persona used by every virtual annotator in the persona scenarios.
    pub persona: String,
    pub seed: u64,
    /// Stop after this many new instances; the rest are left for a later resume.
    pub limit: Option<usize>,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            temperatures: vec![0.2, 0.7, 1.0],
            samples: DEFAULT_SAMPLES,
            persona: "F, 23-45, Black, Bachelor, Africa".into(),
            seed: 0,
            limit: None,
        }
    }
}

impl RunSettings {
    pub fn persona_key(&self) -> Result<CombinationKey, RunnerError> {
        CombinationKey::parse_short(&self.persona).map_err(|e| RunnerError::InvalidConfig(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub tweet_id: String,
    pub scenario: Scenario,
    pub model_id: String,
    pub temperature: f64,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SuiteSummary {
    pub planned: usize,
    pub skipped_existing: usize,
    pub completed: usize,
    pub transport_failures: usize,
    pub remaining: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreCounts {
    pub records: usize,
    pub failed_instances: usize,
    pub unparseable_responses: usize,
    pub ties: usize,
}

impl StoreCounts {
    pub fn of(records: &[VirtualAnnotationSet]) -> Self {
        Self {
            records: records.len(),
            failed_instances: records.iter().filter(|r| r.failed).count(),
            unparseable_responses: records.iter().map(|r| r.unparseable_count()).sum(),
            ties: records.iter().filter(|r| r.hard_label.is_some_and(|m| m.tied)).count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub settings: RunSettings,
    pub scenarios: Vec<Scenario>,
    pub models: Vec<String>,
    pub template_checksum: String,
    pub corpus_checksum: String,
    pub importance_checksum: Option<String>,
    pub this_run: SuiteSummary,
    pub store: StoreCounts,
}

struct Job {
    key: InstanceKey,
    prompt: PromptSpec,
    temperature: f64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Reads a result store. A trailing line without its newline (an interrupted
/// write) is ignored; any other malformed line is an error.
pub fn read_store(path: &Path) -> Result<Vec<VirtualAnnotationSet>, RunnerError> {
    let text = std::fs::read_to_string(path)?;
    let complete = match text.rfind('\n') {
        Some(i) => &text[..=i],
        None => "",
    };
    complete
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| RunnerError::CorruptStore { line: i + 1, message: e.to_string() })
        })
        .collect()
}

/// Drops a partial trailing line so appends start on a fresh line.
fn repair_tail(path: &Path) -> Result<(), RunnerError> {
    let text = std::fs::read(path)?;
    if text.last().is_some_and(|b| *b != b'\n') {
        let keep = text.iter().rposition(|b| *b == b'\n').map_or(0, |i| i + 1);
        log::warn!("{}: dropping {} bytes of an interrupted record", path.display(), text.len() - keep);
        OpenOptions::new().write(true).open(path)?.set_len(keep as u64)?;
    }
    Ok(())
}

fn is_fatal(e: &ClientError) -> bool {
    matches!(e, ClientError::Auth(_) | ClientError::MissingCredential(_) | ClientError::Config(_))
}

/// Runs every (client, temperature, scenario, tweet) instance not already in
/// `out_dir/results.jsonl`, appending results in that fixed order. Requests
/// run concurrently up to each client's in-flight limit; a single writer
/// keeps the file order independent of completion order.
#[allow(clippy::too_many_arguments)]
pub fn run_suite(
    eval: &Corpus,
    scenarios: &[Scenario],
    clients: &[&dyn ChatClient],
    templates: &TemplateSet,
    importance: &[TokenImportanceTable],
    settings: &RunSettings,
    out_dir: &Path,
) -> Result<SuiteSummary, RunnerError> {
    if scenarios.is_empty() {
        return Err(RunnerError::NoScenarios);
    }
    if clients.is_empty() {
        return Err(RunnerError::NoClients);
    }
    if settings.temperatures.is_empty() || settings.temperatures.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
        return Err(RunnerError::InvalidConfig("temperatures must be a nonempty list of finite values ≥ 0".into()));
    }
    if settings.samples == 0 {
        return Err(RunnerError::InvalidConfig("samples must be at least 1".into()));
    }
    let mut seen_models = HashSet::new();
    for c in clients {
        if !seen_models.insert(c.model_id()) {
            return Err(RunnerError::InvalidConfig(format!("duplicate model id {}", c.model_id())));
        }
    }
    let languages: BTreeSet<Language> = eval.tweets().iter().map(|t| t.language).collect();
    let persona_key = settings.persona_key()?;
    let mut personas = BTreeMap::new();
    let mut tables = BTreeMap::new();
    for &lang in &languages {
        personas.insert(lang, build_persona(templates, &persona_key, lang)?);
        if scenarios.iter().any(|s| s.requires_highlight()) {
            let t = default_highlight_table(importance, lang).ok_or(RunnerError::MissingImportance(lang))?;
            tables.insert(lang, t);
        }
    }

    std::fs::create_dir_all(out_dir)?;
    let results_path = out_dir.join(RESULTS_FILE);
    let existing: HashSet<InstanceKey> = if results_path.exists() {
        repair_tail(&results_path)?;
        read_store(&results_path)?.iter().map(|r| r.key()).collect()
    } else {
        HashSet::new()
    };

    let mut summary = SuiteSummary::default();
    let mut plan: Vec<(usize, Job)> = Vec::new();
    for (ci, client) in clients.iter().enumerate() {
        for &temperature in &settings.temperatures {
            for &scenario in scenarios {
                for tweet in eval.tweets() {
                    summary.planned += 1;
                    let key = InstanceKey::new(&tweet.tweet_id, scenario, client.model_id(), temperature);
                    if existing.contains(&key) {
                        summary.skipped_existing += 1;
                        continue;
                    }
                    let persona = scenario.requires_persona().then(|| &personas[&tweet.language]);
                    let table = scenario.requires_highlight().then(|| tables[&tweet.language]);
                    let prompt = build_prompt(templates, scenario, tweet, persona, table)?;
                    plan.push((ci, Job { key, prompt, temperature }));
                }
            }
        }
    }
    if let Some(limit) = settings.limit {
        summary.remaining = plan.len().saturating_sub(limit);
        plan.truncate(limit);
    }

    let mut results = BufWriter::new(OpenOptions::new().create(true).append(true).open(&results_path)?);
    let mut failures = BufWriter::new(OpenOptions::new().create(true).append(true).open(out_dir.join(FAILURES_FILE))?);
    for (ci, client) in clients.iter().enumerate() {
        let jobs: Vec<&Job> = plan.iter().filter(|(c, _)| *c == ci).map(|(_, j)| j).collect();
        if jobs.is_empty() {
            continue;
        }
        log::info!("{}: {} instances", client.model_id(), jobs.len());
        execute(*client, &jobs, settings, &mut results, &mut failures, &mut summary)?;
    }
    results.flush()?;
    failures.flush()?;

    let store = read_store(&results_path)?;
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        settings: settings.clone(),
        scenarios: scenarios.to_vec(),
        models: clients.iter().map(|c| c.model_id().to_string()).collect(),
        template_checksum: templates.checksum.clone(),
        corpus_checksum: sha256_hex(eval.to_jsonl().as_bytes()),
        importance_checksum: (!importance.is_empty())
            .then(|| sha256_hex(serde_json::to_string(importance).unwrap_or_default().as_bytes())),
        this_run: summary.clone(),
        store: StoreCounts::of(&store),
    };
    std::fs::write(out_dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(summary)
}

fn execute(
    client: &dyn ChatClient,
    jobs: &[&Job],
    settings: &RunSettings,
    results: &mut BufWriter<File>,
    failures: &mut BufWriter<File>,
    summary: &mut SuiteSummary,
) -> Result<(), RunnerError> {
    let workers = client.max_in_flight().max(1).min(jobs.len());
    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let mut fatal = None;
    std::thread::scope(|scope| -> Result<(), RunnerError> {
        let (tx, rx) = mpsc::channel();
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, abort) = (&next, &abort);
            scope.spawn(move || loop {
                if abort.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(job) = jobs.get(i) else { break };
                let r = run_instance(client, &job.prompt, job.temperature, settings.samples, Some(settings.seed));
                if r.as_ref().is_err_and(is_fatal) {
                    abort.store(true, Ordering::SeqCst);
                }
                if tx.send((i, r)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        let mut pending = BTreeMap::new();
        let mut write_next = 0;
        for (i, r) in rx {
            pending.insert(i, r);
            while let Some(r) = pending.remove(&write_next) {
                let job = jobs[write_next];
                write_next += 1;
                match r {
                    Ok(set) => {
                        serde_json::to_writer(&mut *results, &set)?;
                        results.write_all(b"\n")?;
                        results.flush()?;
                        summary.completed += 1;
                    }
                    Err(e) if is_fatal(&e) => {
                        fatal.get_or_insert(e);
                    }
                    Err(e) => {
                        log::warn!("{} {} {}: {e}", job.key.model_id, job.prompt.scenario, job.prompt.tweet_id);
                        let rec = FailureRecord {
                            tweet_id: job.prompt.tweet_id.clone(),
                            scenario: job.prompt.scenario,
                            model_id: job.key.model_id.clone(),
                            temperature: job.temperature,
                            error: e.to_string(),
                        };
                        serde_json::to_writer(&mut *failures, &rec)?;
                        failures.write_all(b"\n")?;
                        failures.flush()?;
                        summary.transport_failures += 1;
                    }
                }
                if fatal.is_some() {
                    break;
                }
            }
            if fatal.is_some() {
                abort.store(true, Ordering::SeqCst);
            }
        }
        Ok(())
    })?;
    match fatal {
        Some(e) => Err(RunnerError::Client(e)),
        None => Ok(()),
    }
}

/// Paths of the artifacts `run_suite` writes under `out_dir`.
pub fn store_paths(out_dir: &Path) -> [PathBuf; 3] {
    [out_dir.join(RESULTS_FILE), out_dir.join(FAILURES_FILE), out_dir.join(MANIFEST_FILE)]
}

/// Line-count helper for tests and summaries.
pub fn count_lines(path: &Path) -> Result<usize, RunnerError> {
    Ok(BufReader::new(File::open(path)?).lines().count())
}
