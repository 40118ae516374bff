use std::collections::BTreeMap;

use annotrel_core::agreement::{cohens_kappa, majority_label, percent_agreement};
use annotrel_core::attribution::{
    aggregate_importance, attribute, select_tokens, tokenize, train_reference_scorer_with, write_attributions_jsonl,
    write_importance_csv, AttributionError, ScorerOptions, ShapleyAttribution, TokenImportanceTable, TokenScorer,
};
use annotrel_core::corpus::{
    compute_weights, convert_exist_json, enumerate_combinations, filter_rare, parse_corpus_with, split_eval,
    write_weights_csv, Corpus, DemographicCombination, Label, Language, RegionTable, FIXTURE_CORPUS,
};
use annotrel_core::evalreport::{
    bundled_reference, compare_to_reference, emit_scenario_table, gold_labels, parse_reference, score_run,
    write_deltas_csv, write_rates_csv, EvalReport,
};
use annotrel_core::glmm::simulate::simulate;
use annotrel_core::glmm::{
    build_design, comparison_rows, evaluate_fit, fit_flat, fit_glmm, write_comparison_csv, DesignSpec, FitDocument,
    FitMetrics, FittedModel, FlatControls, GlmmError, ModelData,
};
use annotrel_core::prompting::TemplateSet;
use annotrel_core::runner::{
    read_store, run_suite, ChatClient, HttpClient, MockClient, MockProfile, RESULTS_FILE,
};
use log::{info, warn};
use serde::Serialize;
use serde_json::json;

use crate::artifacts::{read, Manifest, Workspace, CORPUS, EVAL, IMPORTANCE_JSON, TRAIN};
use crate::config::{ClientSpec, CorpusFormat, FitData, RunConfig};
use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ModelKind {
    Flat,
    Mixed,
}

impl ModelKind {
    fn name(self) -> &'static str {
        match self {
            ModelKind::Flat => "flat",
            ModelKind::Mixed => "mixed",
        }
    }
}

fn settings_json<T: Serialize>(value: &T) -> serde_json::Value {
    serde_json::to_value(value).unwrap_or(serde_json::Value::Null)
}

fn parse_jsonl_corpus(bytes: &[u8], what: &str) -> Result<Corpus, CliError> {
    parse_corpus_with(bytes, RegionTable::bundled()).map_err(CliError::stage(format!("reading {what}")))
}

fn load_upstream_corpus(ws: &Workspace, name: &str, manifest: &mut Manifest) -> Result<Corpus, CliError> {
    let bytes = ws.read_upstream(name, "ingest", manifest)?;
    parse_jsonl_corpus(&bytes, name)
}

fn load_templates(config: &RunConfig, manifest: &mut Manifest) -> Result<TemplateSet, CliError> {
    let t = match &config.paths.templates {
        Some(p) => {
            let text = String::from_utf8(read(p)?).map_err(CliError::stage(format!("{}", p.display())))?;
            TemplateSet::parse(&text).map_err(CliError::stage(format!("{}", p.display())))?
        }
        None => TemplateSet::bundled(),
    };
    manifest.inputs.insert("templates".into(), t.checksum.clone());
    Ok(t)
}

fn combinations_csv(combinations: &[DemographicCombination]) -> Result<Vec<u8>, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["combination", "count_es", "count_en"])?;
    for c in combinations {
        w.write_record([c.key.to_string(), c.count_es.to_string(), c.count_en.to_string()])?;
    }
    w.into_inner().map_err(|e| e.into_error().into())
}

pub fn ingest(config: &RunConfig, ws: &Workspace) -> Result<serde_json::Value, CliError> {
    let mut m = Manifest::new("ingest", json!({ "paths": settings_json(&config.paths), "corpus": settings_json(&config.corpus) }));
    m.seeds.insert("split_seed", config.split_seed());

    let owned_regions;
    let regions = match &config.paths.region_map {
        Some(p) => {
            let bytes = read(p)?;
            m.external_input("region_map", &bytes);
            let text = String::from_utf8(bytes).map_err(CliError::stage(format!("{}", p.display())))?;
            owned_regions = RegionTable::parse(&text).map_err(CliError::stage(format!("{}", p.display())))?;
            &owned_regions
        }
        None => RegionTable::bundled(),
    };
    let source = match &config.paths.corpus {
        Some(p) => read(p)?,
        None => FIXTURE_CORPUS.as_bytes().to_vec(),
    };
    m.external_input("corpus", &source);
    let corpus = match config.paths.format {
        CorpusFormat::Jsonl => parse_corpus_with(&source, regions),
        CorpusFormat::Exist => {
            let text = String::from_utf8(source).map_err(CliError::stage("corpus is not UTF-8"))?;
            convert_exist_json(&text, regions)
        }
    }
    .map_err(CliError::stage("reading corpus"))?;

    let (filtered, removal) = filter_rare(&corpus, config.corpus.min_share);
    let combinations = enumerate_combinations(&filtered);
    let split = split_eval(&filtered, config.corpus.split_fraction, config.split_seed())
        .map_err(CliError::stage("splitting corpus"))?;

    ws.write(CORPUS, filtered.to_jsonl().as_bytes(), &mut m)?;
    ws.write(TRAIN, split.train.to_jsonl().as_bytes(), &mut m)?;
    ws.write(EVAL, split.eval.to_jsonl().as_bytes(), &mut m)?;
    ws.write_json("removal_report.json", &removal, &mut m)?;

    let bytes = combinations_csv(&combinations).map_err(CliError::stage("writing combinations.csv"))?;
    ws.write("combinations.csv", &bytes, &mut m)?;

    let per_lang = |c: &Corpus| -> BTreeMap<String, usize> {
        Language::ALL.iter().map(|&l| (l.token().to_string(), c.tweets_in(l).count())).collect()
    };
    let summary = json!({
        "tweets_in": corpus.tweets().len(),
        "annotations_in": corpus.annotation_count(),
        "annotators_in": removal.annotators_in,
        "annotators_out": removal.annotators_out,
        "annotators_removed": removal.removed.len(),
        "tweets_dropped": removal.tweets_dropped,
        "tweets": filtered.tweets().len(),
        "annotations": filtered.annotation_count(),
        "combinations": combinations.len(),
        "tweets_by_language": per_lang(&filtered),
        "train_by_language": per_lang(&split.train),
        "eval_by_language": per_lang(&split.eval),
    });
    ws.write_json("ingest_summary.json", &summary, &mut m)?;
    ws.finish(&m)?;
    Ok(summary)
}

pub fn weights(ws: &Workspace) -> Result<serde_json::Value, CliError> {
    let mut m = Manifest::new("weights", json!({}));
    let corpus = load_upstream_corpus(ws, CORPUS, &mut m)?;
    let w = compute_weights(&corpus).map_err(CliError::stage("computing weights"))?;
    let mut bytes = Vec::new();
    write_weights_csv(&w, &mut bytes).map_err(CliError::stage("writing weights.csv"))?;
    ws.write("weights.csv", &bytes, &mut m)?;
    ws.finish(&m)?;
    let max_raw = w.iter().map(|o| o.w_raw).fold(0.0, f64::max);
    Ok(json!({ "observations": w.len(), "max_raw_weight": max_raw }))
}

#[derive(Serialize)]
struct AgreementStats {
    tweets: usize,
    annotations: usize,
    ties: usize,
    mean_yes_share: Option<f64>,
    /// Share of annotations equal to their tweet's majority label.
    annotator_majority_agreement: Option<f64>,
    annotator_majority_kappa: Option<f64>,
}

fn agreement_stats<'a>(tweets: impl Iterator<Item = &'a annotrel_core::corpus::TweetRecord>) -> AgreementStats {
    let mut labels = Vec::new();
    let mut majority = Vec::new();
    let (mut n, mut ties, mut share_sum) = (0, 0, 0.0);
    for t in tweets {
        let l = t.labels();
        let Ok(m) = majority_label(&l) else { continue };
        n += 1;
        ties += usize::from(m.tied);
        share_sum += m.yes_share;
        majority.extend(std::iter::repeat_n(m.label, l.len()));
        labels.extend(l);
    }
    AgreementStats {
        tweets: n,
        annotations: labels.len(),
        ties,
        mean_yes_share: (n > 0).then(|| share_sum / n as f64),
        annotator_majority_agreement: percent_agreement(&labels, &majority).ok(),
        annotator_majority_kappa: cohens_kappa(&labels, &majority).ok().filter(|k| k.is_finite()),
    }
}

pub fn agreement(ws: &Workspace) -> Result<serde_json::Value, CliError> {
    let mut m = Manifest::new("agreement", json!({}));
    let corpus = load_upstream_corpus(ws, CORPUS, &mut m)?;
    let mut by_language = BTreeMap::new();
    for l in Language::ALL.iter().copied() {
        by_language.insert(l.token().to_string(), agreement_stats(corpus.tweets_in(l)));
    }
    let mut out = json!({
        "overall": agreement_stats(corpus.tweets().iter()),
        "by_language": by_language,
    });
    // The mixed fit supplies the intraclass correlation when it has been run.
    let fit_name = "fit_mixed.json";
    if ws.exists(fit_name) {
        let bytes = ws.read_upstream(fit_name, "fit mixed", &mut m)?;
        let doc: FitDocument = serde_json::from_slice(&bytes).map_err(CliError::stage(fit_name))?;
        out["icc"] = json!(doc.icc);
        out["variance_components"] = json!(doc.variance_components);
    } else {
        info!("no {fit_name}; run `annotrel fit mixed` to add the ICC");
    }
    ws.write_json("agreement.json", &out, &mut m)?;
    ws.finish(&m)?;
    Ok(out)
}

fn metrics_or_warn(fit: &impl FittedModel, data: &ModelData) -> Option<FitMetrics> {
    match evaluate_fit(fit, data) {
        Ok(m) => Some(m),
        Err(e) => {
            warn!("in-sample metrics unavailable: {e}");
            None
        }
    }
}

pub fn fit(config: &RunConfig, ws: &Workspace, kind: ModelKind, data_flag: Option<FitData>) -> Result<serde_json::Value, CliError> {
    let source = data_flag.unwrap_or(config.glmm.data);
    let mut m = Manifest::new(
        &format!("fit_{}", kind.name()),
        json!({ "model": kind.name(), "data": source, "glmm": settings_json(&config.glmm) }),
    );
    let (data, suffix) = match source {
        FitData::Corpus => {
            let corpus = load_upstream_corpus(ws, CORPUS, &mut m)?;
            let spec = DesignSpec::from_corpus(&corpus).map_err(CliError::stage("building design"))?;
            let weights = if config.glmm.weighted {
                Some(compute_weights(&corpus).map_err(CliError::stage("computing weights"))?)
            } else {
                None
            };
            let data = build_design(&corpus, weights.as_deref(), &spec).map_err(CliError::stage("building design"))?;
            (data, "")
        }
        FitData::Simulation => {
            let spec = config.simulation_spec();
            m.seeds.insert("simulation_seed", spec.seed);
            m.notes.insert("simulation".into(), settings_json(&spec));
            let sim = simulate(&spec).map_err(CliError::stage("simulating corpus"))?;
            (sim.data, "_simulation")
        }
    };
    info!("fitting {} model on {} observations", kind.name(), data.n_obs());

    let fit_err = |e: GlmmError| CliError::Stage { context: format!("fitting {} model", kind.name()), source: Box::new(e) };
    let doc = match kind {
        ModelKind::Flat => {
            let fit = fit_flat(&data, &FlatControls::default()).map_err(fit_err)?;
            FitDocument::flat(&fit, metrics_or_warn(&fit, &data)).map_err(fit_err)?
        }
        ModelKind::Mixed => {
            let fit = fit_glmm(&data, &config.glmm.controls).map_err(fit_err)?;
            FitDocument::mixed(&fit, metrics_or_warn(&fit, &data)).map_err(fit_err)?
        }
    };
    if !doc.converged {
        warn!("{} fit did not converge", kind.name());
    }
    let own = format!("fit_{}{suffix}.json", kind.name());
    ws.write_json(&own, &doc, &mut m)?;

    // The comparison table joins whichever of the two fits exist.
    let other_kind = match kind {
        ModelKind::Flat => ModelKind::Mixed,
        ModelKind::Mixed => ModelKind::Flat,
    };
    let other_name = format!("fit_{}{suffix}.json", other_kind.name());
    let other: Option<FitDocument> = if ws.exists(&other_name) {
        let bytes = ws.read_upstream(&other_name, "fit", &mut m)?;
        Some(serde_json::from_slice(&bytes).map_err(CliError::stage(other_name.clone()))?)
    } else {
        None
    };
    let empty = Vec::new();
    let other_coefs = other.as_ref().map_or(&empty, |d| &d.coefficients);
    let rows = match kind {
        ModelKind::Flat => comparison_rows(&doc.coefficients, other_coefs),
        ModelKind::Mixed => comparison_rows(other_coefs, &doc.coefficients),
    };
    let mut bytes = Vec::new();
    write_comparison_csv(&rows, &mut bytes).map_err(fit_err)?;
    ws.write(&format!("table2{suffix}.csv"), &bytes, &mut m)?;
    ws.finish(&m)?;

    Ok(json!({
        "model": kind.name(),
        "data": source,
        "n_obs": doc.n_obs,
        "converged": doc.converged,
        "loglik": doc.loglik,
        "icc": doc.icc,
        "coefficients": doc.coefficients.iter().map(|c| json!({"name": c.name, "estimate": c.estimate, "p": c.p_value})).collect::<Vec<_>>(),
    }))
}

pub fn attribute_cmd(config: &RunConfig, ws: &Workspace) -> Result<serde_json::Value, CliError> {
    let controls = config.attribution_controls();
    let mut m = Manifest::new("attribute", settings_json(&config.attribution));
    m.seeds.insert("attribution_seed", controls.seed);
    let train = load_upstream_corpus(ws, TRAIN, &mut m)?;

    let opts = ScorerOptions { l2: config.attribution.l2, min_count: config.attribution.min_count };
    let scorer = train_reference_scorer_with(&train, &opts).map_err(CliError::stage("training scorer"))?;
    ws.write_json("scorer.json", &scorer, &mut m)?;

    let mut attributions: Vec<ShapleyAttribution> = Vec::with_capacity(train.tweets().len());
    let mut predictions = Vec::new();
    let mut gold = Vec::new();
    let mut languages = Vec::new();
    for t in train.tweets() {
        let tokens: Vec<String> = tokenize(&t.text).into_iter().map(|k| k.text.to_string()).collect();
        let refs: Vec<&str> = tokens.iter().map(String::as_str).collect();
        let a = attribute(&scorer, &t.tweet_id, &tokens, &controls).map_err(CliError::stage(format!("attributing {}", t.tweet_id)))?;
        attributions.push(a);
        predictions.push(Label::from_bool(scorer.score(&refs) >= 0.5));
        gold.push(majority_label(&t.labels()).map_err(CliError::stage(format!("majority of {}", t.tweet_id)))?.label);
        languages.push(t.language);
    }
    let mut bytes = Vec::new();
    write_attributions_jsonl(&attributions, &mut bytes).map_err(CliError::stage("writing attributions"))?;
    ws.write("attributions.jsonl", &bytes, &mut m)?;

    let mut tables: Vec<TokenImportanceTable> = Vec::new();
    let mut skipped = Vec::new();
    for lang in Language::ALL.iter().copied() {
        let idx: Vec<usize> = (0..attributions.len()).filter(|&i| languages[i] == lang).collect();
        let a: Vec<ShapleyAttribution> = idx.iter().map(|&i| attributions[i].clone()).collect();
        let p: Vec<Label> = idx.iter().map(|&i| predictions[i]).collect();
        let g: Vec<Label> = idx.iter().map(|&i| gold[i]).collect();
        for class in [Label::Yes, Label::No] {
            match aggregate_importance(&a, &p, &g, class, lang) {
                Ok(table) => tables.push(
                    select_tokens(&table, config.attribution.t_c).map_err(CliError::stage("selecting tokens"))?,
                ),
                Err(e @ (AttributionError::NoCorrectInstances(_) | AttributionError::ZeroImportance)) => {
                    warn!("no importance table for {class}/{lang}: {e}");
                    skipped.push(json!({ "class": class, "lang": lang, "reason": e.to_string() }));
                }
                Err(e) => return Err(CliError::stage("aggregating importance")(e)),
            }
        }
    }
    let mut bytes = Vec::new();
    write_importance_csv(&tables, &mut bytes).map_err(CliError::stage("writing importance.csv"))?;
    ws.write("importance.csv", &bytes, &mut m)?;
    ws.write_json(IMPORTANCE_JSON, &tables, &mut m)?;
    if !skipped.is_empty() {
        m.notes.insert("skipped_tables".into(), json!(skipped));
    }
    ws.finish(&m)?;

    let correct = predictions.iter().zip(&gold).filter(|(p, g)| p == g).count();
    Ok(json!({
        "texts": attributions.len(),
        "scorer_train_accuracy": correct as f64 / attributions.len().max(1) as f64,
        "tables": tables.iter().map(|t| json!({
            "class": t.class, "lang": t.language, "tokens": t.rows.len(), "selected": t.selected_tokens().len()
        })).collect::<Vec<_>>(),
        "skipped": skipped,
    }))
}

fn build_clients(config: &RunConfig, eval: &Corpus) -> Result<Vec<Box<dyn ChatClient>>, CliError> {
    let run_seed = config.run_settings().seed;
    let mut clients: Vec<Box<dyn ChatClient>> = Vec::new();
    for spec in &config.run.clients {
        match spec {
            ClientSpec::Mock { profile, model_id, response, max_in_flight } => {
                let mut c = match profile {
                    MockProfile::EchoGold => MockClient::echo_gold(eval),
                    MockProfile::Fixed => MockClient::fixed(response.clone().unwrap_or_default()),
                    MockProfile::HashRandom => MockClient::hash_random(run_seed),
                };
                if let Some(id) = model_id {
                    c = c.with_model_id(id.clone());
                }
                if let Some(n) = max_in_flight {
                    c = c.with_max_in_flight(*n);
                }
                clients.push(Box::new(c));
            }
            ClientSpec::Http(cfg) => {
                clients.push(Box::new(HttpClient::new(cfg.clone()).map_err(CliError::stage(format!("client {}", cfg.model_id)))?));
            }
        }
    }
    Ok(clients)
}

pub fn run(config: &RunConfig, ws: &Workspace) -> Result<serde_json::Value, CliError> {
    let mut m = Manifest::new("run", settings_json(&config.run));
    let eval = load_upstream_corpus(ws, EVAL, &mut m)?;
    let templates = load_templates(config, &mut m)?;
    let needs_tables = config.run.scenarios.iter().any(|s| s.requires_highlight());
    let tables: Vec<TokenImportanceTable> = if needs_tables {
        let bytes = ws.read_upstream(IMPORTANCE_JSON, "attribute", &mut m)?;
        serde_json::from_slice(&bytes).map_err(CliError::stage(IMPORTANCE_JSON))?
    } else {
        Vec::new()
    };
    let clients = build_clients(config, &eval)?;
    let refs: Vec<&dyn ChatClient> = clients.iter().map(|c| c.as_ref()).collect();
    let settings = config.run_settings();
    let summary = run_suite(&eval, &config.run.scenarios, &refs, &templates, &tables, &settings, ws.dir())
        .map_err(CliError::stage("running suite"))?;
    Ok(settings_json(&summary))
}

fn overall(report: &EvalReport) -> serde_json::Value {
    let mut per_model: BTreeMap<&str, [usize; 4]> = BTreeMap::new();
    let mut all = [0usize; 4];
    for s in &report.slices {
        let counts = [s.tp, s.fp, s.fn_, s.tn];
        let c = per_model.entry(&s.model_id).or_default();
        for k in 0..4 {
            c[k] += counts[k];
            all[k] += counts[k];
        }
    }
    let metrics = |c: &[usize; 4]| {
        let m = annotrel_core::glmm::ClassificationMetrics::from_counts(c[0], c[1], c[2], c[3]);
        json!({ "n": c.iter().sum::<usize>(), "accuracy": m.accuracy, "f1": m.f1 })
    };
    json!({
        "all": metrics(&all),
        "by_model": per_model.iter().map(|(k, c)| (k.to_string(), metrics(c))).collect::<BTreeMap<_, _>>(),
    })
}

pub fn report(config: &RunConfig, ws: &Workspace) -> Result<serde_json::Value, CliError> {
    let mut m = Manifest::new("report", settings_json(&config.report));
    let store_path = ws.path(RESULTS_FILE);
    if !store_path.is_file() {
        return Err(CliError::MissingArtifact { path: store_path, command: "run" });
    }
    let store = read_store(&store_path).map_err(CliError::stage("reading result store"))?;
    m.external_input(RESULTS_FILE, &read(&store_path)?);
    let eval = load_upstream_corpus(ws, EVAL, &mut m)?;
    let gold = gold_labels(&eval);
    let report = score_run(&store, &gold).map_err(CliError::stage("scoring results"))?;

    let table = emit_scenario_table(&report).map_err(CliError::stage("building scenario table"))?;
    ws.write("scenario_table.csv", &table, &mut m)?;
    let mut rates = Vec::new();
    write_rates_csv(&report, &mut rates).map_err(CliError::stage("writing rates.csv"))?;
    ws.write("rates.csv", &rates, &mut m)?;

    let summary = json!({ "overall": overall(&report), "slices": report.slices });
    ws.write_json("report.json", &summary, &mut m)?;

    if !config.report.aliases.is_empty() {
        let reference = match &config.report.reference {
            Some(p) => {
                let bytes = read(p)?;
                m.external_input("reference", &bytes);
                let text = String::from_utf8(bytes).map_err(CliError::stage(format!("{}", p.display())))?;
                parse_reference(&text).map_err(CliError::stage(format!("{}", p.display())))?
            }
            None => bundled_reference(),
        };
        let subset = EvalReport {
            slices: report
                .slices
                .iter()
                .filter(|s| config.report.aliases.contains_key(&s.model_id))
                .filter(|s| config.report.temperature.is_none_or(|t| t == s.temperature))
                .cloned()
                .collect(),
        };
        let deltas = compare_to_reference(&subset, &reference, &config.report.aliases)
            .map_err(CliError::stage("comparing with reference"))?;
        let mut bytes = Vec::new();
        write_deltas_csv(&deltas, &mut bytes).map_err(CliError::stage("writing deltas.csv"))?;
        ws.write("deltas.csv", &bytes, &mut m)?;
    }
    ws.finish(&m)?;
    Ok(summary["overall"].clone())
}
