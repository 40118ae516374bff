use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::types::{Attribute, CombinationKey, DemographicCombination, Language};
use super::Corpus;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum RemovalReason {
    /// The annotator holds an attribute value whose annotator share is below the threshold.
    RareAttribute {
        attribute: Attribute,
        value: String,
        share: f64,
    },
    /// The annotator is the only member of its combination and labeled in one language only.
    SingletonCombination { combination: String },
}

impl RemovalReason {
    pub fn label(&self) -> &'static str {
        match self {
            RemovalReason::RareAttribute { .. } => "rare attribute",
            RemovalReason::SingletonCombination { .. } => "singleton combination",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovedAnnotator {
    pub annotator_id: String,
    /// 1-based filtering round in which the annotator was removed.
    pub round: usize,
    #[serde(flatten)]
    pub reason: RemovalReason,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RemovalReport {
    pub annotators_in: usize,
    pub annotators_out: usize,
    pub tweets_dropped: usize,
    pub rounds: usize,
    pub removed: Vec<RemovedAnnotator>,
}

/// Removes annotators with rare demographics.
///
/// Each round first drops annotators holding any attribute value whose share
/// of annotators is below `min_share`, then drops annotators that are alone in
/// their demographic combination unless they labeled in both languages. Rounds
/// repeat until nothing changes, so the result is a fixed point. Tweets keep
/// their remaining annotations; tweets left with none are dropped.
pub fn filter_rare(corpus: &Corpus, min_share: f64) -> (Corpus, RemovalReport) {
    let languages = corpus.annotator_languages();
    let mut alive: BTreeSet<&str> = corpus.profiles().iter().map(|p| p.annotator_id.as_str()).collect();
    let mut report = RemovalReport {
        annotators_in: alive.len(),
        ..Default::default()
    };

    loop {
        let round = report.rounds + 1;
        let before = alive.len();

        // Attribute shares over the surviving annotators.
        let total = alive.len() as f64;
        let mut counts: HashMap<(Attribute, &'static str), usize> = HashMap::new();
        for id in &alive {
            let p = corpus.profile(id).expect("known profile");
            for attr in Attribute::ALL {
                *counts.entry((attr, p.attribute_token(attr))).or_default() += 1;
            }
        }
        let mut rare = Vec::new();
        for id in &alive {
            let p = corpus.profile(id).expect("known profile");
            let hit = Attribute::ALL.iter().find_map(|&attr| {
                let value = p.attribute_token(attr);
                let share = counts[&(attr, value)] as f64 / total;
                (share < min_share).then(|| RemovalReason::RareAttribute {
                    attribute: attr,
                    value: value.to_string(),
                    share,
                })
            });
            if let Some(reason) = hit {
                rare.push((id.to_string(), reason));
            }
        }
        for (id, reason) in rare {
            alive.remove(id.as_str());
            report.removed.push(RemovedAnnotator {
                annotator_id: id,
                round,
                reason,
            });
        }

        let mut members: HashMap<CombinationKey, Vec<&str>> = HashMap::new();
        for id in &alive {
            let p = corpus.profile(id).expect("known profile");
            members.entry(p.combination()).or_default().push(id);
        }
        let mut singles: Vec<(String, CombinationKey)> = members
            .iter()
            .filter(|(_, ids)| ids.len() == 1)
            .filter(|(_, ids)| languages.get(ids[0]).map_or(0, HashSet::len) < 2)
            .map(|(key, ids)| (ids[0].to_string(), *key))
            .collect();
        singles.sort();
        for (id, key) in singles {
            alive.remove(id.as_str());
            report.removed.push(RemovedAnnotator {
                annotator_id: id,
                round,
                reason: RemovalReason::SingletonCombination {
                    combination: key.to_string(),
                },
            });
        }

        report.rounds = round;
        if alive.len() == before {
            break;
        }
    }

    report.annotators_out = alive.len();
    if report.annotators_out == report.annotators_in {
        report.rounds = 1;
        return (corpus.clone(), report);
    }

    let profiles = corpus
        .profiles()
        .iter()
        .filter(|p| alive.contains(p.annotator_id.as_str()))
        .cloned()
        .collect();
    let mut tweets = Vec::with_capacity(corpus.tweets().len());
    for t in corpus.tweets() {
        let mut t = t.clone();
        t.annotations.retain(|a| alive.contains(a.annotator_id.as_str()));
        if t.annotations.is_empty() {
            report.tweets_dropped += 1;
        } else {
            tweets.push(t);
        }
    }
    let filtered = Corpus::new(profiles, tweets).expect("subset of a valid corpus is valid");
    (filtered, report)
}

/// One entry per distinct demographic tuple with per-language annotator counts,
/// sorted by the short labels (the order used in published combination tables).
pub fn enumerate_combinations(corpus: &Corpus) -> Vec<DemographicCombination> {
    let languages = corpus.annotator_languages();
    let mut table: BTreeMap<[&'static str; 5], DemographicCombination> = BTreeMap::new();
    for p in corpus.profiles() {
        let key = p.combination();
        let entry = table.entry(key.short_labels()).or_insert(DemographicCombination {
            key,
            count_en: 0,
            count_es: 0,
        });
        if let Some(langs) = languages.get(p.annotator_id.as_str()) {
            if langs.contains(&Language::En) {
                entry.count_en += 1;
            }
            if langs.contains(&Language::Es) {
                entry.count_es += 1;
            }
        }
    }
    table.into_values().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::fixtures::{profile, tweet};
    use crate::corpus::types::*;

    use AgeBand::*;
    use Education::*;
    use Ethnicity::*;
    use Gender::*;

    /// 100 annotators; a0 is the only Asian annotator (1% share).
    fn hundred() -> Corpus {
        let mut profiles = Vec::new();
        for i in 0..100 {
            let (eth, country) = if i == 0 { (Asian, "ES") } else { (White, "ES") };
            let g = if i % 2 == 0 { Female } else { Male };
            profiles.push(profile(&format!("a{i}"), g, Age23To45, eth, Bachelor, country));
        }
        let mut tweets = Vec::new();
        for t in 0..50 {
            let lang = if t % 2 == 0 { Language::En } else { Language::Es };
            let ids: Vec<String> = (0..4).map(|k| format!("a{}", (2 * t + k) % 100)).collect();
            let labels: Vec<(&str, Label)> = ids.iter().map(|id| (id.as_str(), Label::Yes)).collect();
            tweets.push(tweet(&format!("t{t}"), lang, &labels));
        }
        Corpus::new(profiles, tweets).unwrap()
    }

    #[test]
    fn rare_ethnicity_is_removed() {
        let corpus = hundred();
        let (out, report) = filter_rare(&corpus, 0.02);
        assert_eq!(report.annotators_in, 100);
        assert_eq!(report.annotators_out, 99);
        assert_eq!(report.removed.len(), 1);
        let r = &report.removed[0];
        assert_eq!(r.annotator_id, "a0");
        assert_eq!(r.reason.label(), "rare attribute");
        match &r.reason {
            RemovalReason::RareAttribute { attribute, value, share } => {
                assert_eq!(*attribute, Attribute::Ethnicity);
                assert_eq!(value, "Asian");
                assert!((share - 0.01).abs() < 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(out.profile("a0").is_none());
        assert!(out.tweets().iter().all(|t| t.annotations.iter().all(|a| a.annotator_id != "a0")));
        assert_eq!(out.tweets().len(), 50);
    }

    #[test]
    fn singleton_combination_kept_only_when_bilingual() {
        let profiles = vec![
            profile("a", Female, Age18To22, White, Bachelor, "ES"),
            profile("b", Female, Age18To22, White, Bachelor, "ES"),
            profile("solo", Male, Age46Plus, Latino, Master, "MX"),
            profile("both", Male, Age46Plus, Black, Master, "NG"),
        ];
        let tweets = vec![
            tweet("t1", Language::En, &[("a", Label::Yes), ("solo", Label::No), ("both", Label::No)]),
            tweet("t2", Language::Es, &[("b", Label::Yes), ("both", Label::Yes)]),
        ];
        let corpus = Corpus::new(profiles, tweets).unwrap();
        let (out, report) = filter_rare(&corpus, 0.0);
        let removed: Vec<&str> = report.removed.iter().map(|r| r.annotator_id.as_str()).collect();
        assert_eq!(removed, vec!["solo"]);
        assert!(out.profile("both").is_some());
        assert_eq!(report.removed[0].reason.label(), "singleton combination");
    }

    #[test]
    fn no_op_when_nothing_is_rare() {
        let profiles = vec![
            profile("a", Female, Age18To22, White, Bachelor, "ES"),
            profile("b", Female, Age18To22, White, Bachelor, "ES"),
        ];
        let tweets = vec![tweet("t1", Language::En, &[("a", Label::Yes), ("b", Label::No)])];
        let corpus = Corpus::new(profiles, tweets).unwrap();
        let (out, report) = filter_rare(&corpus, 0.02);
        assert_eq!(out, corpus);
        assert!(report.removed.is_empty());
    }

    #[test]
    fn idempotent_after_removal() {
        let corpus = hundred();
        let (once, _) = filter_rare(&corpus, 0.02);
        let (twice, report) = filter_rare(&once, 0.02);
        assert_eq!(once, twice);
        assert!(report.removed.is_empty());
    }

    #[test]
    fn empty_corpus_filters_to_empty() {
        let (out, report) = filter_rare(&Corpus::empty(), 0.02);
        assert!(out.is_empty());
        assert_eq!(report.annotators_out, 0);
    }

    #[test]
    fn combinations_are_counted_per_language() {
        let profiles = vec![
            profile("a", Female, Age23To45, Black, Bachelor, "NG"),
            profile("b", Female, Age23To45, Black, Bachelor, "KE"),
            profile("c", Male, Age18To22, White, HighSchool, "ES"),
        ];
        let tweets = vec![
            tweet("t1", Language::En, &[("a", Label::Yes), ("b", Label::No), ("c", Label::No)]),
            tweet("t2", Language::Es, &[("c", Label::Yes)]),
        ];
        let corpus = Corpus::new(profiles, tweets).unwrap();
        let combos = enumerate_combinations(&corpus);
        assert_eq!(combos.len(), 2);
        assert_eq!(combos[0].key.to_string(), "F, 23-45, Black, Bachelor, Africa");
        assert_eq!((combos[0].count_es, combos[0].count_en), (0, 2));
        assert_eq!((combos[1].count_es, combos[1].count_en), (1, 1));
    }

    #[test]
    fn single_annotator_single_combination() {
        let corpus = Corpus::new(
            vec![profile("a", Male, Age46Plus, White, Master, "ES")],
            vec![tweet("t", Language::Es, &[("a", Label::No)])],
        )
        .unwrap();
        let combos = enumerate_combinations(&corpus);
        assert_eq!(combos.len(), 1);
        assert_eq!(combos[0].count_es + combos[0].count_en, 1);
    }
}
