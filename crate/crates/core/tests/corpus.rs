use std::collections::BTreeSet;

use annotrel_core::corpus::{
    bundled_fixture, compute_weights, enumerate_combinations, filter_rare, map_region, parse_corpus, split_eval,
    AgeBand, Annotation, AnnotatorProfile, Attribute, Corpus, Education, Ethnicity, Gender, Label, Language,
    TweetRecord, DEFAULT_MIN_SHARE,
};
use proptest::prelude::*;

const COUNTRIES: [&str; 5] = ["ES", "NG", "MX", "IN", "SA"];

fn profile(id: usize, g: usize, a: usize, e: usize, ed: usize, c: usize) -> AnnotatorProfile {
    let country = COUNTRIES[c % COUNTRIES.len()];
    AnnotatorProfile {
        annotator_id: format!("a{id}"),
        gender: Gender::ALL[g % Gender::ALL.len()],
        age_band: AgeBand::ALL[a % AgeBand::ALL.len()],
        ethnicity: Ethnicity::ALL[e % Ethnicity::ALL.len()],
        education: Education::ALL[ed % Education::ALL.len()],
        country: country.to_string(),
        region: map_region(country).unwrap(),
    }
}

/// Brute-force weights: relative frequencies recounted by a full scan for
/// every observation, divided in attribute order and then by the label share.
fn brute_force_raw(corpus: &Corpus) -> Vec<f64> {
    let obs: Vec<(&AnnotatorProfile, Label)> = corpus.observations().map(|(_, a, p)| (p, a.label)).collect();
    let n = obs.len() as f64;
    obs.iter()
        .map(|(p, label)| {
            let mut w = 1.0;
            for attr in Attribute::ALL {
                let v = p.attribute_token(attr);
                let c = obs.iter().filter(|(q, _)| q.attribute_token(attr) == v).count();
                w /= c as f64 / n;
            }
            let c = obs.iter().filter(|(_, l)| l == label).count();
            w / (c as f64 / n)
        })
        .collect()
}

/// The same weights as exact ratios of integers: n^6 / (∏ attribute counts × label count).
fn rational_raw(corpus: &Corpus) -> Vec<(u128, u128)> {
    let obs: Vec<(&AnnotatorProfile, Label)> = corpus.observations().map(|(_, a, p)| (p, a.label)).collect();
    let n = obs.len() as u128;
    obs.iter()
        .map(|(p, label)| {
            let mut den = obs.iter().filter(|(_, l)| l == label).count() as u128;
            for attr in Attribute::ALL {
                let v = p.attribute_token(attr);
                den *= obs.iter().filter(|(q, _)| q.attribute_token(attr) == v).count() as u128;
            }
            (n.pow(6), den)
        })
        .collect()
}

#[test]
fn fixture_counts() {
    let c = bundled_fixture();
    assert_eq!(c.tweets().len(), 20);
    assert_eq!(c.annotation_count(), 120);
    assert_eq!(c.profiles().len(), 12);
    assert_eq!(c.tweets_in(Language::En).count(), 10);
    assert_eq!(c.tweets_in(Language::Es).count(), 10);
    assert!(c.tweets().iter().all(|t| t.annotations.len() == 6));
    let combos = enumerate_combinations(&c);
    assert_eq!(combos.len(), 6);
    assert!(combos.iter().all(|k| k.count_en == 1 && k.count_es == 1));
    let (filtered, report) = filter_rare(&c, DEFAULT_MIN_SHARE);
    assert_eq!(filtered, c);
    assert!(report.removed.is_empty());
}

#[test]
fn fixture_round_trips() {
    let c = bundled_fixture();
    assert_eq!(parse_corpus(c.to_jsonl().as_bytes()).unwrap(), c);
}

#[test]
fn fixture_weights_match_brute_force() {
    let c = bundled_fixture();
    let w = compute_weights(&c).unwrap();
    let brute = brute_force_raw(&c);
    let exact = rational_raw(&c);
    assert_eq!(w.len(), brute.len());
    for ((o, b), (num, den)) in w.iter().zip(&brute).zip(&exact) {
        assert_eq!(o.w_raw, *b);
        let r = *num as f64 / *den as f64;
        assert!((o.w_raw - r).abs() <= 1e-12 * r);
    }
    let max = brute.iter().cloned().fold(f64::MIN, f64::max);
    for (o, b) in w.iter().zip(&brute) {
        assert_eq!(o.w_norm, b / max);
    }
    let mean = w.iter().map(|o| o.w_scaled).sum::<f64>() / w.len() as f64;
    assert!((mean - 1.0).abs() <= 1e-12);
}

#[test]
fn uniform_corpus_has_unit_weights() {
    // Two annotators differing in every attribute, each giving one YES and one NO.
    let profiles = vec![profile(0, 0, 0, 0, 0, 0), profile(1, 1, 1, 1, 1, 1)];
    let ann = |id: &str, l| Annotation { annotator_id: id.into(), label: l };
    let tweets = vec![
        TweetRecord { tweet_id: "t0".into(), language: Language::En, text: "x".into(), annotations: vec![ann("a0", Label::Yes), ann("a1", Label::No)] },
        TweetRecord { tweet_id: "t1".into(), language: Language::En, text: "y".into(), annotations: vec![ann("a0", Label::No), ann("a1", Label::Yes)] },
    ];
    let c = Corpus::new(profiles, tweets).unwrap();
    for o in compute_weights(&c).unwrap() {
        assert_eq!(o.w_norm, 1.0);
        assert_eq!(o.w_scaled, 1.0);
    }
}

#[test]
fn fixture_split_covers_combinations() {
    let c = bundled_fixture();
    for seed in 0..20 {
        let s = split_eval(&c, 0.1, seed).unwrap();
        assert_eq!(s.eval.tweets_in(Language::En).count(), 1);
        assert_eq!(s.eval.tweets_in(Language::Es).count(), 1);
        assert_eq!(s.train.tweets().len() + s.eval.tweets().len(), 20);
        assert_eq!(split_eval(&c, 0.1, seed).unwrap(), s);
    }
}

prop_compose! {
    fn arb_corpus()(
        people in prop::collection::vec((0..2usize, 0..3usize, 0..5usize, 0..5usize, 0..5usize), 2..12),
        labels in prop::collection::vec(prop::collection::vec(any::<bool>(), 12), 1..10),
        langs in prop::collection::vec(any::<bool>(), 10),
    ) -> Corpus {
        let profiles: Vec<AnnotatorProfile> = people.iter().enumerate()
            .map(|(i, &(g, a, e, ed, c))| profile(i, g, a, e, ed, c)).collect();
        let tweets = labels.iter().enumerate().map(|(t, ls)| TweetRecord {
            tweet_id: format!("t{t}"),
            language: if langs[t] { Language::En } else { Language::Es },
            text: format!("text {t}"),
            annotations: profiles.iter().zip(ls).map(|(p, &y)| Annotation {
                annotator_id: p.annotator_id.clone(),
                label: Label::from_bool(y),
            }).collect(),
        }).collect();
        Corpus::new(profiles, tweets).unwrap()
    }
}

proptest! {
    #[test]
    fn weights_agree_with_brute_force(c in arb_corpus()) {
        let w = compute_weights(&c).unwrap();
        let brute = brute_force_raw(&c);
        for (o, b) in w.iter().zip(&brute) {
            prop_assert_eq!(o.w_raw, *b);
        }
        let mean = w.iter().map(|o| o.w_scaled).sum::<f64>() / w.len() as f64;
        prop_assert!((mean - 1.0).abs() <= 1e-12, "mean {}", mean);
        prop_assert!(w.iter().all(|o| o.w_norm > 0.0 && o.w_norm <= 1.0));
    }

    #[test]
    fn filtering_reaches_a_fixed_point(c in arb_corpus(), share in 0.0..0.3f64) {
        let (once, _) = filter_rare(&c, share);
        let (twice, report) = filter_rare(&once, share);
        prop_assert_eq!(&once, &twice);
        prop_assert!(report.removed.is_empty());
    }

    #[test]
    fn split_partitions_and_covers(c in arb_corpus(), seed in any::<u64>(), fraction in 0.3..0.9f64) {
        let Ok(s) = split_eval(&c, fraction, seed) else { return Ok(()); };
        let ids = |c: &Corpus| c.tweets().iter().map(|t| t.tweet_id.clone()).collect::<BTreeSet<_>>();
        let (tr, ev) = (ids(&s.train), ids(&s.eval));
        prop_assert!(tr.is_disjoint(&ev));
        prop_assert_eq!(tr.len() + ev.len(), c.tweets().len());
        for lang in Language::ALL.iter().copied() {
            let combos = |c: &Corpus| c.tweets_in(lang)
                .flat_map(|t| t.annotations.iter().map(|a| c.profile(&a.annotator_id).unwrap().combination()))
                .collect::<BTreeSet<_>>();
            prop_assert_eq!(combos(&s.eval), combos(&c));
        }
    }
}
