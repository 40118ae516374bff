use annotrel_core::attribution::strip_markup;
use annotrel_core::corpus::{Language, TweetRecord};
use annotrel_core::prompting::*;
use proptest::prelude::*;

const GOLDEN: &str = include_str!("golden/personas.tsv");

#[test]
fn personas_match_golden_file() {
    let templates = TemplateSet::bundled();
    let combos = persona_combinations();
    let mut lines = GOLDEN.lines().skip(1);
    for c in &combos {
        for lang in [Language::En, Language::Es] {
            let line = lines.next().expect("golden row");
            let mut cols = line.splitn(3, '\t');
            assert_eq!(cols.next().unwrap(), c.key.to_string());
            assert_eq!(cols.next().unwrap(), lang.token());
            assert_eq!(build_persona(&templates, &c.key, lang).unwrap().text, cols.next().unwrap());
        }
    }
    assert!(lines.next().is_none());
}

proptest! {
    #[test]
    fn prompts_preserve_tweet_bytes(text in "[a-zA-Z ,.!?]{1,60}", pick in 0usize..6, scenario in 0usize..4) {
        let templates = TemplateSet::bundled();
        let tweet: TweetRecord = serde_json::from_value(serde_json::json!({
            "tweet_id": "t", "lang": "en", "text": text, "annotations": []
        })).unwrap();
        let words: Vec<String> = annotrel_core::attribution::token_keys(&text);
        let selected: Vec<&str> = words.iter().take(pick).map(String::as_str).collect();
        let table = annotrel_core::attribution::TokenImportanceTable {
            class: annotrel_core::corpus::Label::Yes,
            language: Language::En,
            rows: selected.iter().enumerate().map(|(k, t)| annotrel_core::attribution::TokenImportance {
                token: t.to_string(), si: 1.0, ir: 0.0, rank: k + 1, ci: 0.0, selected: true,
            }).collect(),
        };
        let sc = Scenario::ALL[scenario];
        let combo = persona_combinations()[0].key;
        let persona = build_persona(&templates, &combo, Language::En).unwrap();
        let p = build_prompt(&templates, sc, &tweet, sc.requires_persona().then_some(&persona), sc.requires_highlight().then_some(&table)).unwrap();
        let tail = p.body.rsplit_once("Tweet: ").unwrap().1;
        prop_assert_eq!(strip_markup(tail), text.clone());
        let again = build_prompt(&templates, sc, &tweet, sc.requires_persona().then_some(&persona), sc.requires_highlight().then_some(&table)).unwrap();
        prop_assert_eq!(p.body, again.body);
    }
}
