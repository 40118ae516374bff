//! Synthetic annotation data drawn from the mixed logistic model with known
//! parameters.
//!
//! Each language has its own pool of annotators; every tweet is labeled by a
//! random subset of its language's pool. Fixed effects are an intercept, an
//! annotator-level binary covariate (`Female`, set for every other annotator)
//! and an observation-level standard normal covariate (`Signal`).

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{sigmoid, GlmmError, GroupingFactor, ModelData, GROUPING_FACTORS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSpec {
    pub languages: usize,
    pub tweets_per_language: usize,
    pub annotators_per_language: usize,
    pub annotators_per_tweet: usize,
    pub sigma_annotator: f64,
    pub sigma_language: f64,
    pub sigma_tweet: f64,
    /// Intercept, `Female`, `Signal`.
    pub beta: [f64; 3],
    /// Centre and rescale the drawn random effects so their realized mean is
    /// zero (within language and covariate stratum) and their realized
    /// standard deviation equals the target.
    pub moment_matched: bool,
    pub seed: u64,
}

impl SimulationSpec {
    /// 2 languages × 250 tweets × 10 annotators = 5,000 observations with
    /// standard deviations 1.0 (annotator), 0.5 (language), 2.0 (tweet).
    pub fn recovery() -> Self {
        Self {
            languages: 2,
            tweets_per_language: 250,
            annotators_per_language: 50,
            annotators_per_tweet: 10,
            sigma_annotator: 1.0,
            sigma_language: 0.5,
            sigma_tweet: 2.0,
            beta: [-0.5, 0.8, 0.6],
            moment_matched: true,
            seed: 0,
        }
    }

    /// Smaller design with a null annotator-level coefficient.
    pub fn calibration(seed: u64) -> Self {
        Self {
            languages: 2,
            tweets_per_language: 60,
            annotators_per_language: 20,
            annotators_per_tweet: 8,
            sigma_annotator: 1.0,
            sigma_language: 0.5,
            sigma_tweet: 2.0,
            beta: [-0.3, 0.0, 0.5],
            moment_matched: false,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub data: ModelData,
    pub spec: SimulationSpec,
    /// Realized random effects: annotator, language, tweet.
    pub effects: [Vec<f64>; 3],
}

impl Simulation {
    /// Probabilities from the true fixed effects alone.
    pub fn true_population_probabilities(&self) -> Vec<f64> {
        (0..self.data.n_obs())
            .map(|i| sigmoid(self.data.row(i).iter().zip(&self.spec.beta).map(|(x, b)| x * b).sum()))
            .collect()
    }
}

fn standardize(values: &mut [f64], groups: &[usize], sigma: f64) {
    let n_groups = groups.iter().max().map_or(0, |m| m + 1);
    let mut sum = vec![0.0; n_groups];
    let mut count = vec![0usize; n_groups];
    for (v, &g) in values.iter().zip(groups) {
        sum[g] += v;
        count[g] += 1;
    }
    for (v, &g) in values.iter_mut().zip(groups) {
        *v -= sum[g] / count[g] as f64;
    }
    let sd = (values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64).sqrt();
    if sd > 0.0 {
        values.iter_mut().for_each(|v| *v *= sigma / sd);
    }
}

pub fn simulate(spec: &SimulationSpec) -> Result<Simulation, GlmmError> {
    if spec.languages < 1 || spec.annotators_per_tweet > spec.annotators_per_language || spec.tweets_per_language == 0 {
        return Err(GlmmError::InvalidData("infeasible simulation layout".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_lang = spec.languages;
    let n_annot = n_lang * spec.annotators_per_language;
    let n_tweet = n_lang * spec.tweets_per_language;
    let female: Vec<bool> = (0..n_annot).map(|a| a % 2 == 1).collect();

    let mut draw = |n: usize, sigma: f64| -> Vec<f64> {
        (0..n).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)).collect()
    };
    let mut a_eff = draw(n_annot, spec.sigma_annotator);
    let mut l_eff = draw(n_lang, spec.sigma_language);
    let mut t_eff = draw(n_tweet, spec.sigma_tweet);
    if spec.moment_matched {
        let a_strata: Vec<usize> =
            (0..n_annot).map(|a| 2 * (a / spec.annotators_per_language) + female[a] as usize).collect();
        standardize(&mut a_eff, &a_strata, spec.sigma_annotator);
        standardize(&mut l_eff, &vec![0; n_lang], spec.sigma_language);
        let t_strata: Vec<usize> = (0..n_tweet).map(|t| t / spec.tweets_per_language).collect();
        standardize(&mut t_eff, &t_strata, spec.sigma_tweet);
    }

    let lang_name = |l: usize| match l {
        0 => "en".to_string(),
        1 => "es".to_string(),
        _ => format!("l{l}"),
    };
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut idx: [Vec<usize>; 3] = Default::default();
    for t in 0..n_tweet {
        let lang = t / spec.tweets_per_language;
        let pool = sample(&mut rng, spec.annotators_per_language, spec.annotators_per_tweet);
        let mut chosen: Vec<usize> = pool.iter().map(|k| lang * spec.annotators_per_language + k).collect();
        chosen.sort_unstable();
        for a in chosen {
            let signal: f64 = rng.sample(StandardNormal);
            let fem = if female[a] { 1.0 } else { 0.0 };
            let eta = spec.beta[0] + spec.beta[1] * fem + spec.beta[2] * signal + a_eff[a] + l_eff[lang] + t_eff[t];
            y.push(if rng.random::<f64>() < sigmoid(eta) { 1.0 } else { 0.0 });
            x.extend([1.0, fem, signal]);
            idx[0].push(a);
            idx[1].push(lang);
            idx[2].push(t);
        }
    }
    let n = y.len();
    let [ia, il, it] = idx;
    let data = ModelData {
        columns: vec!["Intercept".into(), "Female".into(), "Signal".into()],
        x,
        y,
        weights: vec![1.0; n],
        groups: [
            GroupingFactor { name: GROUPING_FACTORS[0].into(), levels: (0..n_annot).map(|a| format!("ann{a}")).collect(), index: ia },
            GroupingFactor { name: GROUPING_FACTORS[1].into(), levels: (0..n_lang).map(lang_name).collect(), index: il },
            GroupingFactor {
                name: GROUPING_FACTORS[2].into(),
                levels: (0..n_tweet).map(|t| format!("{}:tw{t}", lang_name(t / spec.tweets_per_language))).collect(),
                index: it,
            },
        ],
    };
    data.validate()?;
    Ok(Simulation { data, spec: spec.clone(), effects: [a_eff, l_eff, t_eff] })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovery_layout() {
        let sim = simulate(&SimulationSpec::recovery()).unwrap();
        assert_eq!(sim.data.n_obs(), 5000);
        assert_eq!(sim.data.groups[0].n_levels(), 100);
        assert_eq!(sim.data.groups[2].n_levels(), 500);
        let sd = |v: &[f64]| (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt();
        assert!((sd(&sim.effects[0]) - 1.0).abs() < 1e-12);
        assert!((sd(&sim.effects[2]) - 2.0).abs() < 1e-12);
        assert!((sim.effects[1][0].abs() - 0.5).abs() < 1e-12);
        assert!((sim.effects[1][0] + sim.effects[1][1]).abs() < 1e-12);
    }

    #[test]
    fn deterministic_per_seed() {
        let a = simulate(&SimulationSpec::calibration(3)).unwrap();
        let b = simulate(&SimulationSpec::calibration(3)).unwrap();
        let c = simulate(&SimulationSpec::calibration(4)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.data.y, c.data.y);
    }
}
