use std::collections::{BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::types::{CombinationKey, Language};
use super::{Corpus, CorpusError};

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSplit {
    pub train: Corpus,
    pub eval: Corpus,
}

/// Random per-language split into training and evaluation parts.
///
/// The evaluation part of each language receives `round(fraction * n)` texts
/// and is chosen so every demographic combination that annotated in that
/// language appears among the evaluation texts' annotators. Coverage texts
/// are picked first, in seeded shuffle order, then the remainder is filled
/// from the same order. Both parts keep the corpus order.
pub fn split_eval(corpus: &Corpus, fraction: f64, seed: u64) -> Result<EvalSplit, CorpusError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(CorpusError::InvalidFraction(fraction));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: HashSet<&str> = HashSet::new();

    for language in Language::ALL.iter().copied() {
        let tweets: Vec<_> = corpus.tweets_in(language).collect();
        if tweets.is_empty() {
            continue;
        }
        let combos_of = |i: usize| -> BTreeSet<CombinationKey> {
            tweets[i]
                .annotations
                .iter()
                .map(|a| corpus.profile(&a.annotator_id).expect("validated").combination())
                .collect()
        };
        let per_tweet: Vec<BTreeSet<CombinationKey>> = (0..tweets.len()).map(combos_of).collect();
        let all: BTreeSet<CombinationKey> = per_tweet.iter().flatten().copied().collect();

        let mut order: Vec<usize> = (0..tweets.len()).collect();
        order.shuffle(&mut rng);

        let mut picked: Vec<usize> = Vec::new();
        let mut covered: BTreeSet<CombinationKey> = BTreeSet::new();
        for combo in &all {
            if covered.contains(combo) {
                continue;
            }
            let &i = order
                .iter()
                .find(|&&i| per_tweet[i].contains(combo))
                .expect("every combination occurs in some tweet");
            picked.push(i);
            covered.extend(per_tweet[i].iter().copied());
        }

        let target = (fraction * tweets.len() as f64).round() as usize;
        if picked.len() > target {
            return Err(CorpusError::InfeasibleSplit {
                language,
                required: picked.len(),
                target,
                min_fraction: picked.len() as f64 / tweets.len() as f64,
            });
        }
        let mut in_eval: HashSet<usize> = picked.iter().copied().collect();
        for &i in &order {
            if in_eval.len() >= target {
                break;
            }
            in_eval.insert(i);
        }
        chosen.extend(in_eval.into_iter().map(|i| tweets[i].tweet_id.as_str()));
    }

    let eval = corpus.retain_tweets(|t| chosen.contains(t.tweet_id.as_str()));
    let train = corpus.retain_tweets(|t| !chosen.contains(t.tweet_id.as_str()));
    Ok(EvalSplit { train, eval })
}
