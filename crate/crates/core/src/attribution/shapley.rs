use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::scorer::TokenScorer;
use super::AttributionError;

pub const DEFAULT_EXACT_CAP: usize = 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapleyMethod {
    Exact,
    Sampled,
}

/// Per-token Shapley values for one text. Tokens are players by position, so
/// repeated words are separate players.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapleyAttribution {
    pub tweet_id: String,
    pub tokens: Vec<String>,
    pub values: Vec<f64>,
    pub base_value: f64,
    pub full_value: f64,
    pub method: ShapleyMethod,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_permutations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Σ values − (full_value − base_value).
    pub residual: f64,
}

impl ShapleyAttribution {
    pub fn with_tweet_id(mut self, id: impl Into<String>) -> Self {
        self.tweet_id = id.into();
        self
    }
}

fn subset<'a>(tokens: &'a [String], mask: usize) -> Vec<&'a str> {
    tokens.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, t)| t.as_str()).collect()
}

fn residual(values: &[f64], base: f64, full: f64) -> f64 {
    values.iter().sum::<f64>() - (full - base)
}

/// Exact Shapley values by enumerating all 2^n subsets.
pub fn exact_shapley(scorer: &dyn TokenScorer, tokens: &[String], cap: usize) -> Result<ShapleyAttribution, AttributionError> {
    let n = tokens.len();
    if n > cap || n >= usize::BITS as usize {
        return Err(AttributionError::TooManyTokens { count: n, cap });
    }
    let f: Vec<f64> = (0..1usize << n).map(|m| scorer.score(&subset(tokens, m))).collect();
    // weight[s] = s!(n-s-1)!/n! = 1 / (n * C(n-1, s))
    let mut weight = vec![0.0; n.max(1)];
    let mut binom = 1.0;
    for (s, w) in weight.iter_mut().enumerate().take(n) {
        *w = 1.0 / (n as f64 * binom);
        binom = binom * (n - 1 - s) as f64 / (s + 1) as f64;
    }
    let mut values = vec![0.0; n];
    for (i, v) in values.iter_mut().enumerate() {
        let bit = 1usize << i;
        let mut acc = 0.0;
        for m in 0..1usize << n {
            if m & bit == 0 {
                acc += weight[m.count_ones() as usize] * (f[m | bit] - f[m]);
            }
        }
        *v = acc;
    }
    let base = f[0];
    let full = f[(1usize << n) - 1];
    Ok(ShapleyAttribution {
        tweet_id: String::new(),
        tokens: tokens.to_vec(),
        residual: residual(&values, base, full),
        values,
        base_value: base,
        full_value: full,
        method: ShapleyMethod::Exact,
        n_permutations: None,
        seed: None,
    })
}

/// Monte Carlo Shapley values: mean marginal contributions over uniformly
/// random orderings of the tokens.
pub fn sampled_shapley(
    scorer: &dyn TokenScorer,
    tokens: &[String],
    n_permutations: usize,
    seed: u64,
) -> Result<ShapleyAttribution, AttributionError> {
    if n_permutations == 0 {
        return Err(AttributionError::ZeroPermutations);
    }
    let n = tokens.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = scorer.score(&[]);
    let all: Vec<&str> = tokens.iter().map(String::as_str).collect();
    let full = scorer.score(&all);
    let mut sums = vec![0.0; n];
    let mut order: Vec<usize> = (0..n).collect();
    let mut included = vec![false; n];
    for _ in 0..n_permutations {
        order.shuffle(&mut rng);
        included.iter_mut().for_each(|b| *b = false);
        let mut prev = base;
        for &i in &order {
            included[i] = true;
            let set: Vec<&str> = (0..n).filter(|&k| included[k]).map(|k| all[k]).collect();
            let cur = scorer.score(&set);
            sums[i] += cur - prev;
            prev = cur;
        }
    }
    let values: Vec<f64> = sums.iter().map(|s| s / n_permutations as f64).collect();
    Ok(ShapleyAttribution {
        tweet_id: String::new(),
        tokens: tokens.to_vec(),
        residual: residual(&values, base, full),
        values,
        base_value: base,
        full_value: full,
        method: ShapleyMethod::Sampled,
        n_permutations: Some(n_permutations),
        seed: Some(seed),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttributionControls {
    pub cap: usize,
    pub n_permutations: usize,
    pub seed: u64,
}

impl Default for AttributionControls {
    fn default() -> Self {
        Self { cap: DEFAULT_EXACT_CAP, n_permutations: 2000, seed: 0 }
    }
}

/// Seed for one text: the run seed mixed with a hash of the tweet id, so each
/// text's draws do not depend on processing order.
pub fn instance_seed(seed: u64, tweet_id: &str) -> u64 {
    let digest = Sha256::digest(tweet_id.as_bytes());
    let mut b = [0u8; 8];
    b.copy_from_slice(&digest[..8]);
    seed ^ u64::from_le_bytes(b)
}

/// Exact enumeration up to the cap, sampling beyond it.
pub fn attribute(
    scorer: &dyn TokenScorer,
    tweet_id: &str,
    tokens: &[String],
    controls: &AttributionControls,
) -> Result<ShapleyAttribution, AttributionError> {
    let a = if tokens.len() <= controls.cap {
        exact_shapley(scorer, tokens, controls.cap)?
    } else {
        sampled_shapley(scorer, tokens, controls.n_permutations, instance_seed(controls.seed, tweet_id))?
    };
    Ok(a.with_tweet_id(tweet_id))
}

/// One JSON object per line.
pub fn write_attributions_jsonl<W: Write>(attributions: &[ShapleyAttribution], mut out: W) -> Result<(), AttributionError> {
    for a in attributions {
        serde_json::to_writer(&mut out, a)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
