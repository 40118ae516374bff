//! Converter from the shared-task JSON release to the line-delimited corpus
//! format.
//!
//! The source is one JSON object keyed by tweet id. Each value carries:
//!
//! | source field              | used as                                   |
//! |---------------------------|-------------------------------------------|
//! | `id_EXIST`                | `tweet_id`                                |
//! | `lang`                    | `lang` (`en` / `es`)                      |
//! | `tweet`                   | `text`                                    |
//! | `annotators`              | annotator ids, parallel to the lists below|
//! | `gender_annotators`       | `F` / `M`                                 |
//! | `age_annotators`          | `18-22` / `23-45` / `46+`                 |
//! | `ethnicities_annotators`  | free-text ethnicity, normalized below     |
//! | `study_levels_annotators` | free-text education, normalized below     |
//! | `countries_annotators`    | country name or ISO alpha-2 code          |
//! | `labels_task1` or `labels_task1_1` | `YES` / `NO`                     |
//!
//! Attribute frequencies used for weighting are later computed over
//! observations; computing them over distinct annotators instead only needs
//! the profile records this converter emits.

use std::collections::BTreeMap;

use serde::Deserialize;

use super::types::{AgeBand, Education, Ethnicity, Gender, Label, Language};
use super::{AnnotatorProfile, Annotation, Corpus, CorpusError, RegionTable, TweetRecord};

#[derive(Debug, Deserialize)]
struct SourceTweet {
    #[serde(rename = "id_EXIST")]
    id_exist: serde_json::Value,
    lang: String,
    tweet: String,
    annotators: Vec<String>,
    gender_annotators: Vec<String>,
    age_annotators: Vec<String>,
    ethnicities_annotators: Vec<String>,
    study_levels_annotators: Vec<String>,
    countries_annotators: Vec<String>,
    #[serde(alias = "labels_task1_1")]
    labels_task1: Vec<String>,
}

fn bad(tweet: &str, message: String) -> CorpusError {
    CorpusError::Malformed {
        line: 0,
        message: format!("tweet {tweet}: {message}"),
    }
}

fn gender(s: &str) -> Option<Gender> {
    match s.trim().to_ascii_uppercase().as_str() {
        "F" | "FEMALE" => Some(Gender::Female),
        "M" | "MALE" => Some(Gender::Male),
        _ => None,
    }
}

fn ethnicity(s: &str) -> Option<Ethnicity> {
    let s = s.to_lowercase();
    let e = if s.contains("middle east") {
        Ethnicity::MiddleEastern
    } else if s.contains("multiracial") || s.contains("mixed") {
        Ethnicity::Multiracial
    } else if s.contains("latin") || s.contains("hispan") {
        Ethnicity::Latino
    } else if s.contains("black") || s.contains("african") {
        Ethnicity::Black
    } else if s.contains("white") || s.contains("caucasian") {
        Ethnicity::White
    } else if s.contains("asian") {
        Ethnicity::Asian
    } else if s.contains("other") {
        Ethnicity::Other
    } else {
        return None;
    };
    Some(e)
}

fn education(s: &str) -> Option<Education> {
    let s = s.to_lowercase();
    let e = if s.contains("less than") {
        Education::LessThanHighSchool
    } else if s.contains("high school") {
        Education::HighSchool
    } else if s.contains("bachelor") {
        Education::Bachelor
    } else if s.contains("master") {
        Education::Master
    } else if s.contains("doctor") || s.contains("phd") {
        Education::Doctorate
    } else {
        return None;
    };
    Some(e)
}

const COUNTRY_NAMES: &[(&str, &str)] = &[
    ("albania", "AL"), ("algeria", "DZ"), ("angola", "AO"), ("argentina", "AR"), ("austria", "AT"),
    ("bahrain", "BH"), ("bangladesh", "BD"), ("belarus", "BY"), ("belgium", "BE"), ("bolivia", "BO"),
    ("bosnia and herzegovina", "BA"), ("botswana", "BW"), ("brazil", "BR"), ("bulgaria", "BG"),
    ("cameroon", "CM"), ("canada", "CA"), ("chile", "CL"), ("china", "CN"), ("colombia", "CO"),
    ("costa rica", "CR"), ("croatia", "HR"), ("cuba", "CU"), ("cyprus", "CY"), ("czech republic", "CZ"),
    ("czechia", "CZ"), ("denmark", "DK"), ("dominican republic", "DO"), ("ecuador", "EC"), ("egypt", "EG"),
    ("el salvador", "SV"), ("estonia", "EE"), ("ethiopia", "ET"), ("finland", "FI"), ("france", "FR"),
    ("germany", "DE"), ("ghana", "GH"), ("greece", "GR"), ("guatemala", "GT"), ("honduras", "HN"),
    ("hong kong", "HK"), ("hungary", "HU"), ("iceland", "IS"), ("india", "IN"), ("indonesia", "ID"),
    ("iran", "IR"), ("iraq", "IQ"), ("ireland", "IE"), ("israel", "IL"), ("italy", "IT"),
    ("ivory coast", "CI"), ("jamaica", "JM"), ("japan", "JP"), ("jordan", "JO"), ("kazakhstan", "KZ"),
    ("kenya", "KE"), ("kuwait", "KW"), ("latvia", "LV"), ("lebanon", "LB"), ("lithuania", "LT"),
    ("luxembourg", "LU"), ("malawi", "MW"), ("malaysia", "MY"), ("malta", "MT"), ("mexico", "MX"),
    ("moldova", "MD"), ("montenegro", "ME"), ("morocco", "MA"), ("mozambique", "MZ"), ("namibia", "NA"),
    ("nepal", "NP"), ("netherlands", "NL"), ("the netherlands", "NL"), ("nicaragua", "NI"),
    ("nigeria", "NG"), ("north macedonia", "MK"), ("norway", "NO"), ("oman", "OM"), ("pakistan", "PK"),
    ("palestine", "PS"), ("panama", "PA"), ("paraguay", "PY"), ("peru", "PE"), ("philippines", "PH"),
    ("poland", "PL"), ("portugal", "PT"), ("puerto rico", "PR"), ("qatar", "QA"), ("romania", "RO"),
    ("russia", "RU"), ("rwanda", "RW"), ("saudi arabia", "SA"), ("senegal", "SN"), ("serbia", "RS"),
    ("singapore", "SG"), ("slovakia", "SK"), ("slovenia", "SI"), ("south africa", "ZA"),
    ("south korea", "KR"), ("spain", "ES"), ("sri lanka", "LK"), ("sweden", "SE"), ("switzerland", "CH"),
    ("syria", "SY"), ("taiwan", "TW"), ("tanzania", "TZ"), ("thailand", "TH"),
    ("trinidad and tobago", "TT"), ("tunisia", "TN"), ("turkey", "TR"), ("uganda", "UG"),
    ("ukraine", "UA"), ("united arab emirates", "AE"), ("united kingdom", "GB"), ("uk", "GB"),
    ("united states", "US"), ("united states of america", "US"), ("usa", "US"), ("uruguay", "UY"),
    ("venezuela", "VE"), ("vietnam", "VN"), ("viet nam", "VN"), ("yemen", "YE"), ("zambia", "ZM"),
    ("zimbabwe", "ZW"),
];

fn country_code(s: &str) -> Option<String> {
    let t = s.trim();
    if t.len() == 2 && t.chars().all(|c| c.is_ascii_alphabetic()) {
        return Some(t.to_ascii_uppercase());
    }
    let lower = t.to_lowercase();
    COUNTRY_NAMES
        .iter()
        .find(|(name, _)| *name == lower)
        .map(|(_, code)| code.to_string())
}

/// Converts the shared-task JSON release into a [`Corpus`].
///
/// Annotator ids are taken verbatim; an id seen with conflicting demographics
/// is an error.
pub fn convert_exist_json(source: &str, regions: &RegionTable) -> Result<Corpus, CorpusError> {
    let records: BTreeMap<String, SourceTweet> = serde_json::from_str(source).map_err(|e| CorpusError::Malformed {
        line: e.line(),
        message: e.to_string(),
    })?;
    let mut profiles: BTreeMap<String, AnnotatorProfile> = BTreeMap::new();
    let mut tweets = Vec::with_capacity(records.len());

    for (key, rec) in records {
        let tweet_id = match &rec.id_exist {
            serde_json::Value::String(s) => s.clone(),
            other => other.to_string(),
        };
        let n = rec.annotators.len();
        let lens = [
            rec.gender_annotators.len(),
            rec.age_annotators.len(),
            rec.ethnicities_annotators.len(),
            rec.study_levels_annotators.len(),
            rec.countries_annotators.len(),
            rec.labels_task1.len(),
        ];
        if lens.iter().any(|&l| l != n) {
            return Err(bad(&key, "annotator lists have different lengths".into()));
        }
        let language: Language = rec
            .lang
            .parse()
            .map_err(|e| bad(&key, format!("{e}")))?;
        let mut annotations = Vec::with_capacity(n);
        for i in 0..n {
            let id = rec.annotators[i].clone();
            let country = country_code(&rec.countries_annotators[i])
                .ok_or_else(|| bad(&key, format!("unknown country {:?}", rec.countries_annotators[i])))?;
            let region = regions.lookup(&country)?;
            let profile = AnnotatorProfile {
                annotator_id: id.clone(),
                gender: gender(&rec.gender_annotators[i])
                    .ok_or_else(|| bad(&key, format!("gender {:?}", rec.gender_annotators[i])))?,
                age_band: rec.age_annotators[i]
                    .trim()
                    .parse::<AgeBand>()
                    .map_err(|e| bad(&key, e.to_string()))?,
                ethnicity: ethnicity(&rec.ethnicities_annotators[i])
                    .ok_or_else(|| bad(&key, format!("ethnicity {:?}", rec.ethnicities_annotators[i])))?,
                education: education(&rec.study_levels_annotators[i])
                    .ok_or_else(|| bad(&key, format!("education {:?}", rec.study_levels_annotators[i])))?,
                country,
                region,
            };
            match profiles.get(&id) {
                Some(existing) if *existing != profile => {
                    return Err(bad(&key, format!("annotator {id} has conflicting demographics")));
                }
                Some(_) => {}
                None => {
                    profiles.insert(id.clone(), profile);
                }
            }
            let label: Label = rec.labels_task1[i]
                .trim()
                .parse()
                .map_err(|e: super::UnknownToken| bad(&key, e.to_string()))?;
            annotations.push(Annotation {
                annotator_id: id,
                label,
            });
        }
        tweets.push(TweetRecord {
            tweet_id,
            language,
            text: rec.tweet,
            annotations,
        });
    }
    Corpus::new(profiles.into_values().collect(), tweets)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn converts_a_small_release() {
        let src = r#"{
          "100001": {"id_EXIST": "100001", "lang": "es", "tweet": "hola",
            "annotators": ["Annotator_1", "Annotator_2"],
            "gender_annotators": ["F", "M"],
            "age_annotators": ["18-22", "46+"],
            "ethnicities_annotators": ["Hispano or Latino", "White or Caucasian"],
            "study_levels_annotators": ["Bachelor’s degree", "High school degree or equivalent"],
            "countries_annotators": ["Mexico", "Spain"],
            "labels_task1_1": ["YES", "NO"]}
        }"#;
        let c = convert_exist_json(src, RegionTable::bundled()).unwrap();
        assert_eq!(c.tweets().len(), 1);
        let p = c.profile("Annotator_1").unwrap();
        assert_eq!(p.ethnicity, Ethnicity::Latino);
        assert_eq!(p.country, "MX");
        assert_eq!(c.profile("Annotator_2").unwrap().education, Education::HighSchool);
        assert_eq!(c.tweets()[0].annotations[0].label, Label::Yes);
    }

    #[test]
    fn normalizers() {
        assert_eq!(ethnicity("Black or African American"), Some(Ethnicity::Black));
        assert_eq!(ethnicity("Middle Eastern"), Some(Ethnicity::MiddleEastern));
        assert_eq!(education("Less than high school diploma"), Some(Education::LessThanHighSchool));
        assert_eq!(education("Doctorate"), Some(Education::Doctorate));
        assert_eq!(country_code("es"), Some("ES".into()));
        assert_eq!(country_code("Atlantis"), None);
    }
}
