//! TOML run configuration. Relative paths resolve against the config file's
//! directory; command-line flags override file values, which override defaults.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use annotrel_core::attribution::{AttributionControls, DEFAULT_EXACT_CAP, DEFAULT_THRESHOLD};
use annotrel_core::corpus::DEFAULT_MIN_SHARE;
use annotrel_core::glmm::simulate::SimulationSpec;
use annotrel_core::glmm::GlmmControls;
use annotrel_core::prompting::Scenario;
use annotrel_core::runner::{ClientConfig, MockProfile, RunSettings, DEFAULT_SAMPLES};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    /// Seed inherited by every stage that does not set its own.
    pub seed: u64,
    pub paths: PathsConfig,
    pub corpus: CorpusConfig,
    pub glmm: GlmmConfig,
    pub attribution: AttributionConfig,
    pub run: RunConfigSection,
    pub report: ReportConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("annotrel-out"),
            seed: 0,
            paths: PathsConfig::default(),
            corpus: CorpusConfig::default(),
            glmm: GlmmConfig::default(),
            attribution: AttributionConfig::default(),
            run: RunConfigSection::default(),
            report: ReportConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusFormat {
    /// Line-delimited profile and tweet records.
    #[default]
    Jsonl,
    /// The shared-task JSON export keyed by tweet id.
    Exist,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Input corpus; the bundled 20-tweet fixture when absent.
    pub corpus: Option<PathBuf>,
    pub format: CorpusFormat,
    /// Country → region table; the bundled table when absent.
    pub region_map: Option<PathBuf>,
    /// Prompt templates; the bundled set when absent.
    pub templates: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub min_share: f64,
    pub split_fraction: f64,
    pub split_seed: Option<u64>,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self { min_share: DEFAULT_MIN_SHARE, split_fraction: 0.10, split_seed: None }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum FitData {
    /// The ingested corpus.
    #[default]
    Corpus,
    /// A simulated corpus with known parameters.
    Simulation,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GlmmConfig {
    /// Use inverse-frequency observation weights.
    pub weighted: bool,
    pub data: FitData,
    pub simulation: SimulationConfig,
    pub controls: GlmmControls,
}

/// Size of the simulated corpus; unset fields take the recovery design
/// (2 languages × 250 tweets × 10 annotators per tweet).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub tweets_per_language: Option<usize>,
    pub annotators_per_language: Option<usize>,
    pub annotators_per_tweet: Option<usize>,
    pub seed: Option<u64>,
}

impl Default for GlmmConfig {
    fn default() -> Self {
        Self { weighted: true, data: FitData::Corpus, simulation: SimulationConfig::default(), controls: GlmmControls::default() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttributionConfig {
    pub cap: usize,
    pub n_permutations: usize,
    pub seed: Option<u64>,
    pub t_c: f64,
    pub l2: f64,
    pub min_count: usize,
}

impl Default for AttributionConfig {
    fn default() -> Self {
        Self {
            cap: DEFAULT_EXACT_CAP,
            n_permutations: AttributionControls::default().n_permutations,
            seed: None,
            t_c: DEFAULT_THRESHOLD,
            l2: 1.0,
            min_count: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientSpec {
    Mock {
        profile: MockProfile,
        #[serde(default)]
        model_id: Option<String>,
        /// Constant answer for the `fixed` profile.
        #[serde(default)]
        response: Option<String>,
        #[serde(default)]
        max_in_flight: Option<usize>,
    },
    Http(ClientConfig),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfigSection {
    pub scenarios: Vec<Scenario>,
    pub temperatures: Vec<f64>,
    pub samples: usize,
    pub persona: String,
    pub seed: Option<u64>,
    pub limit: Option<usize>,
    pub clients: Vec<ClientSpec>,
}

impl Default for RunConfigSection {
    fn default() -> Self {
        let s = RunSettings::default();
        Self {
            scenarios: Scenario::ALL.to_vec(),
            temperatures: s.temperatures,
            samples: DEFAULT_SAMPLES,
            persona: s.persona,
            seed: None,
            limit: None,
            clients: vec![ClientSpec::Mock {
                profile: MockProfile::EchoGold,
                model_id: None,
                response: None,
                max_in_flight: None,
            }],
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    /// Model id in the results → model name in the reference table.
    pub aliases: BTreeMap<String, String>,
    /// Reference table CSV; the bundled transcription when absent.
    pub reference: Option<PathBuf>,
    /// Temperature whose slices are compared with the reference.
    pub temperature: Option<f64>,
}

/// Values given on the command line.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self, CliError> {
        let mut config = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
                let mut c: RunConfig =
                    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                let base = p.parent().filter(|b| !b.as_os_str().is_empty()).unwrap_or(Path::new("."));
                c.resolve_relative(base);
                c
            }
            None => RunConfig::default(),
        };
        if let Some(dir) = &overrides.output_dir {
            config.output_dir = dir.clone();
        }
        if let Some(seed) = overrides.seed {
            config.seed = seed;
        }
        config.validate()?;
        Ok(config)
    }

    fn resolve_relative(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        for p in [
            &mut self.paths.corpus,
            &mut self.paths.region_map,
            &mut self.paths.templates,
            &mut self.report.reference,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        for p in [&self.paths.corpus, &self.paths.region_map, &self.paths.templates, &self.report.reference]
            .into_iter()
            .flatten()
        {
            if !p.is_file() {
                return Err(CliError::Config(format!("file not found: {}", p.display())));
            }
        }
        let c = &self.corpus;
        if !(0.0..1.0).contains(&c.min_share) {
            return Err(CliError::Config(format!("corpus.min_share must be in [0, 1), got {}", c.min_share)));
        }
        if !(c.split_fraction > 0.0 && c.split_fraction < 1.0) {
            return Err(CliError::Config(format!("corpus.split_fraction must be in (0, 1), got {}", c.split_fraction)));
        }
        let a = &self.attribution;
        if !(a.t_c > 0.0 && a.t_c <= 1.0) {
            return Err(CliError::Config(format!("attribution.t_c must be in (0, 1], got {}", a.t_c)));
        }
        if a.n_permutations == 0 {
            return Err(CliError::Config("attribution.n_permutations must be at least 1".into()));
        }
        if !(a.l2 >= 0.0) {
            return Err(CliError::Config("attribution.l2 must be non-negative".into()));
        }
        let r = &self.run;
        if r.scenarios.is_empty() {
            return Err(CliError::Config("run.scenarios is empty".into()));
        }
        if r.clients.is_empty() {
            return Err(CliError::Config("run.clients is empty".into()));
        }
        for spec in &r.clients {
            match spec {
                ClientSpec::Mock { profile: MockProfile::Fixed, response: None, .. } => {
                    return Err(CliError::Config("a fixed mock client needs `response`".into()));
                }
                ClientSpec::Http(cfg) => cfg.validate().map_err(|e| CliError::Config(e.to_string()))?,
                _ => {}
            }
        }
        self.run_settings().persona_key().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn split_seed(&self) -> u64 {
        self.corpus.split_seed.unwrap_or(self.seed)
    }

    pub fn attribution_controls(&self) -> AttributionControls {
        AttributionControls {
            cap: self.attribution.cap,
            n_permutations: self.attribution.n_permutations,
            seed: self.attribution.seed.unwrap_or(self.seed),
        }
    }

    pub fn simulation_spec(&self) -> SimulationSpec {
        let base = SimulationSpec::recovery();
        let c = &self.glmm.simulation;
        SimulationSpec {
            tweets_per_language: c.tweets_per_language.unwrap_or(base.tweets_per_language),
            annotators_per_language: c.annotators_per_language.unwrap_or(base.annotators_per_language),
            annotators_per_tweet: c.annotators_per_tweet.unwrap_or(base.annotators_per_tweet),
            seed: c.seed.unwrap_or(self.seed),
            ..base
        }
    }

    pub fn run_settings(&self) -> RunSettings {
        RunSettings {
            temperatures: self.run.temperatures.clone(),
            samples: self.run.samples,
            persona: self.run.persona.clone(),
            seed: self.run.seed.unwrap_or(self.seed),
            limit: self.run.limit,
        }
    }
}
