//! Personas and prompt assembly for the four annotation scenarios.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::attribution::{highlight, TokenImportanceTable};
use crate::corpus::{CombinationKey, DemographicCombination, Label, Language, TweetRecord};

const BUNDLED_TEMPLATES: &str = include_str!("../data/templates.toml");
const BUNDLED_COMBINATIONS: &str = include_str!("../data/combinations.tsv");

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("unsupported language {0:?}")]
    UnsupportedLanguage(String),
    #[error("template file: {0}")]
    Template(String),
    #[error("no {slot} phrase for {value:?} in the {language} templates")]
    MissingSlot { language: Language, slot: &'static str, value: String },
    #[error("scenario {0} requires a persona")]
    MissingPersona(Scenario),
    #[error("scenario {0} takes no persona")]
    UnexpectedPersona(Scenario),
    #[error("scenario {0} requires an importance table")]
    MissingImportance(Scenario),
    #[error("scenario {0} takes no importance table")]
    UnexpectedImportance(Scenario),
    #[error("{what} is in {found} but the tweet is in {expected}")]
    LanguageMismatch { what: &'static str, expected: Language, found: Language },
    #[error("unknown scenario {0:?}")]
    UnknownScenario(String),
    #[error("combination table: {0}")]
    Combinations(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scenario {
    GenAI,
    GenP,
    GenXAI,
    GenPXAI,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [Scenario::GenAI, Scenario::GenP, Scenario::GenXAI, Scenario::GenPXAI];

    pub fn number(self) -> u8 {
        self as u8 + 1
    }

    pub fn name(self) -> &'static str {
        match self {
            Scenario::GenAI => "GenAI",
            Scenario::GenP => "GenP",
            Scenario::GenXAI => "GenXAI",
            Scenario::GenPXAI => "GenPXAI",
        }
    }

    pub fn requires_persona(self) -> bool {
        matches!(self, Scenario::GenP | Scenario::GenPXAI)
    }

    pub fn requires_highlight(self) -> bool {
        matches!(self, Scenario::GenXAI | Scenario::GenPXAI)
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = PromptError;

    /// Accepts the name (case-insensitive) or the 1-based number.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name().eq_ignore_ascii_case(s.trim()) || sc.number().to_string() == s.trim())
            .ok_or_else(|| PromptError::UnknownScenario(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioDescriptor {
    pub number: u8,
    pub scenario: Scenario,
    pub persona: bool,
    pub highlight: bool,
}

pub fn list_scenarios() -> Vec<ScenarioDescriptor> {
    Scenario::ALL
        .into_iter()
        .map(|s| ScenarioDescriptor {
            number: s.number(),
            scenario: s,
            persona: s.requires_persona(),
            highlight: s.requires_highlight(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LanguageTemplates {
    pub persona: String,
    pub instruction: String,
    pub highlight_note: String,
    pub tweet_frame: String,
    pub gender: BTreeMap<String, String>,
    pub age: BTreeMap<String, String>,
    pub ethnicity: BTreeMap<String, String>,
    pub study_level: BTreeMap<String, String>,
    pub region: BTreeMap<String, String>,
}

#[derive(Debug, Deserialize)]
struct TemplateFile {
    version: u32,
    en: LanguageTemplates,
    es: LanguageTemplates,
}

/// Parsed template file plus the SHA-256 of its bytes.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateSet {
    pub version: u32,
    pub en: LanguageTemplates,
    pub es: LanguageTemplates,
    pub checksum: String,
}

impl TemplateSet {
    pub fn parse(text: &str) -> Result<Self, PromptError> {
        let file: TemplateFile = toml::from_str(text).map_err(|e| PromptError::Template(e.to_string()))?;
        for (lang, t) in [(Language::En, &file.en), (Language::Es, &file.es)] {
            for slot in ["{gender}", "{age}", "{ethnicity}", "{study_level}", "{region}"] {
                if !t.persona.contains(slot) {
                    return Err(PromptError::Template(format!("{lang} persona lacks {slot}")));
                }
            }
            if !t.tweet_frame.contains("{text}") {
                return Err(PromptError::Template(format!("{lang} tweet_frame lacks {{text}}")));
            }
        }
        Ok(Self {
            version: file.version,
            en: file.en,
            es: file.es,
            checksum: hex::encode(Sha256::digest(text.as_bytes())),
        })
    }

    pub fn bundled() -> Self {
        Self::parse(BUNDLED_TEMPLATES).expect("bundled templates parse")
    }

    pub fn language(&self, language: Language) -> &LanguageTemplates {
        match language {
            Language::En => &self.en,
            Language::Es => &self.es,
        }
    }
}

pub fn parse_language(tag: &str) -> Result<Language, PromptError> {
    tag.parse().map_err(|_| PromptError::UnsupportedLanguage(tag.to_string()))
}

/// The 56 demographic combinations used for personas, with per-language
/// annotator counts.
pub fn persona_combinations() -> Vec<DemographicCombination> {
    parse_combinations(BUNDLED_COMBINATIONS).expect("bundled combinations parse")
}

/// Tab-separated `combination, count_es, count_en` with a header row.
pub fn parse_combinations(text: &str) -> Result<Vec<DemographicCombination>, PromptError> {
    let mut rdr = csv::ReaderBuilder::new().delimiter(b'\t').from_reader(text.as_bytes());
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| PromptError::Combinations(e.to_string()))?;
        let bad = || PromptError::Combinations(format!("malformed row {:?}", rec));
        let key = CombinationKey::parse_short(rec.get(0).ok_or_else(bad)?)
            .map_err(|e| PromptError::Combinations(e.to_string()))?;
        let count_es = rec.get(1).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let count_en = rec.get(2).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        out.push(DemographicCombination { key, count_en, count_es });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Persona {
    pub combination: CombinationKey,
    pub language: Language,
    pub text: String,
}

fn slot<'a>(
    table: &'a BTreeMap<String, String>,
    language: Language,
    name: &'static str,
    token: &str,
) -> Result<&'a str, PromptError> {
    table.get(token).map(String::as_str).ok_or_else(|| PromptError::MissingSlot {
        language,
        slot: name,
        value: token.to_string(),
    })
}

pub fn build_persona(
    templates: &TemplateSet,
    combination: &CombinationKey,
    language: Language,
) -> Result<Persona, PromptError> {
    let t = templates.language(language);
    let text = t
        .persona
        .replace("{gender}", slot(&t.gender, language, "gender", combination.gender.token())?)
        .replace("{age}", slot(&t.age, language, "age", combination.age_band.token())?)
        .replace("{ethnicity}", slot(&t.ethnicity, language, "ethnicity", combination.ethnicity.token())?)
        .replace("{study_level}", slot(&t.study_level, language, "study_level", combination.education.token())?)
        .replace("{region}", slot(&t.region, language, "region", combination.region.token())?);
    Ok(Persona { combination: *combination, language, text })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub scenario: Scenario,
    pub language: Language,
    pub tweet_id: String,
    pub body: String,
    pub persona: Option<Persona>,
    pub highlighted: bool,
}

/// Persona paragraph (if any), task instruction, then the tweet, with
/// selected tokens in bold for the highlighting scenarios. Paragraphs are
/// separated by a blank line.
pub fn build_prompt(
    templates: &TemplateSet,
    scenario: Scenario,
    tweet: &TweetRecord,
    persona: Option<&Persona>,
    importance: Option<&TokenImportanceTable>,
) -> Result<PromptSpec, PromptError> {
    match (scenario.requires_persona(), persona) {
        (true, None) => return Err(PromptError::MissingPersona(scenario)),
        (false, Some(_)) => return Err(PromptError::UnexpectedPersona(scenario)),
        (_, Some(p)) if p.language != tweet.language => {
            return Err(PromptError::LanguageMismatch { what: "persona", expected: tweet.language, found: p.language })
        }
        _ => {}
    }
    match (scenario.requires_highlight(), importance) {
        (true, None) => return Err(PromptError::MissingImportance(scenario)),
        (false, Some(_)) => return Err(PromptError::UnexpectedImportance(scenario)),
        (_, Some(t)) if t.language != tweet.language => {
            return Err(PromptError::LanguageMismatch {
                what: "importance table",
                expected: tweet.language,
                found: t.language,
            })
        }
        _ => {}
    }
    let t = templates.language(tweet.language);
    let mut parts: Vec<String> = Vec::with_capacity(3);
    if let Some(p) = persona {
        parts.push(p.text.clone());
    }
    let text = match importance {
        Some(table) => {
            parts.push(format!("{} {}", t.instruction, t.highlight_note));
            highlight(&tweet.text, &table.selected_tokens())
        }
        None => {
            parts.push(t.instruction.clone());
            tweet.text.clone()
        }
    };
    parts.push(t.tweet_frame.replace("{text}", &text));
    Ok(PromptSpec {
        scenario,
        language: tweet.language,
        tweet_id: tweet.tweet_id.clone(),
        body: parts.join("\n\n"),
        persona: persona.cloned(),
        highlighted: importance.is_some(),
    })
}

/// Default table choice for highlighting: the YES class of the tweet's language.
pub fn default_highlight_table(tables: &[TokenImportanceTable], language: Language) -> Option<&TokenImportanceTable> {
    tables.iter().find(|t| t.class == Label::Yes && t.language == language)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attribution::TokenImportance;
    use crate::corpus::fixtures::tweet;

    fn key(s: &str) -> CombinationKey {
        CombinationKey::parse_short(s).unwrap()
    }

    fn table(lang: Language, tokens: &[&str]) -> TokenImportanceTable {
        TokenImportanceTable {
            class: Label::Yes,
            language: lang,
            rows: tokens
                .iter()
                .enumerate()
                .map(|(k, t)| TokenImportance {
                    token: t.to_string(),
                    si: 1.0,
                    ir: 1.0 / tokens.len() as f64,
                    rank: k + 1,
                    ci: (k + 1) as f64 / tokens.len() as f64,
                    selected: true,
                })
                .collect(),
        }
    }

    fn en_tweet(text: &str) -> TweetRecord {
        let mut t = tweet("t1", Language::En, &[]);
        t.text = text.into();
        t
    }

    #[test]
    fn english_persona() {
        let p = build_persona(&TemplateSet::bundled(), &key("F, 23-45, Black, Bachelor, Africa"), Language::En).unwrap();
        assert_eq!(
            p.text,
            "You are a female individual, aged 23-45, who identifies as Black, has a bachelor's degree, and currently resides in Africa. You have the cultural and personal background of someone with these demographics."
        );
    }

    #[test]
    fn spanish_persona_and_unknown_language() {
        let p = build_persona(&TemplateSet::bundled(), &key("F, 23-45, Black, Bachelor, Africa"), Language::Es).unwrap();
        assert!(p.text.starts_with("Eres una persona "));
        assert!(p.text.ends_with("estas características demográficas."));
        assert!(matches!(parse_language("fr"), Err(PromptError::UnsupportedLanguage(_))));
    }

    #[test]
    fn personas_are_injective() {
        let t = TemplateSet::bundled();
        let combos = persona_combinations();
        assert_eq!(combos.len(), 56);
        for lang in Language::ALL {
            let mut seen = std::collections::HashSet::new();
            for c in &combos {
                assert!(seen.insert(build_persona(&t, &c.key, *lang).unwrap().text));
            }
        }
    }

    #[test]
    fn scenario_descriptors() {
        let s = list_scenarios();
        let names: Vec<_> = s.iter().map(|d| d.scenario.name()).collect();
        assert_eq!(names, ["GenAI", "GenP", "GenXAI", "GenPXAI"]);
        assert_eq!((s[2].number, s[2].persona, s[2].highlight), (3, false, true));
        assert_eq!((s[3].persona, s[3].highlight), (true, true));
        assert_eq!("genpxai".parse::<Scenario>().unwrap(), Scenario::GenPXAI);
        assert_eq!("2".parse::<Scenario>().unwrap(), Scenario::GenP);
    }

    #[test]
    fn prompt_contracts() {
        let t = TemplateSet::bundled();
        let tw = en_tweet("Women drive poorly, said women.");
        let p = build_prompt(&t, Scenario::GenAI, &tw, None, None).unwrap();
        assert!(!p.body.contains("**"));
        assert!(p.body.ends_with("Tweet: Women drive poorly, said women."));
        assert!(p.persona.is_none() && !p.highlighted);

        let persona = build_persona(&t, &key("M, 46+, White, Master, Europe"), Language::En).unwrap();
        let tab = table(Language::En, &["women"]);
        let p = build_prompt(&t, Scenario::GenPXAI, &tw, Some(&persona), Some(&tab)).unwrap();
        assert!(p.body.starts_with(&persona.text));
        assert!(p.body.ends_with("Tweet: **Women** drive poorly, said **women**."));
        assert!(p.highlighted);

        assert!(matches!(build_prompt(&t, Scenario::GenP, &tw, None, None), Err(PromptError::MissingPersona(_))));
        assert!(matches!(
            build_prompt(&t, Scenario::GenAI, &tw, Some(&persona), None),
            Err(PromptError::UnexpectedPersona(_))
        ));
        assert!(matches!(build_prompt(&t, Scenario::GenXAI, &tw, None, None), Err(PromptError::MissingImportance(_))));
        let es = build_persona(&t, &persona.combination, Language::Es).unwrap();
        assert!(matches!(
            build_prompt(&t, Scenario::GenP, &tw, Some(&es), None),
            Err(PromptError::LanguageMismatch { .. })
        ));
    }

    #[test]
    fn template_validation() {
        assert!(TemplateSet::parse("version = 1").is_err());
        let broken = BUNDLED_TEMPLATES.replacen("resides in {region}", "resides somewhere", 1);
        assert!(matches!(TemplateSet::parse(&broken), Err(PromptError::Template(_))));
        assert_eq!(TemplateSet::bundled().checksum.len(), 64);
    }
}
