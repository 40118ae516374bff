use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::{AgeBand, Corpus, Education, Ethnicity, Gender, Label, ObservationWeight, Region};

use super::GlmmError;

/// A fixed-effect column: the intercept or a dummy for one attribute level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "attribute", content = "level", rename_all = "snake_case")]
pub enum Dummy {
    Intercept,
    Gender(Gender),
    AgeBand(AgeBand),
    Ethnicity(Ethnicity),
    Education(Education),
    Region(Region),
}

impl Dummy {
    pub fn name(&self) -> String {
        match self {
            Dummy::Intercept => "Intercept".into(),
            Dummy::Gender(g) => g.token().into(),
            Dummy::AgeBand(a) => format!("Age{}", a.token()),
            Dummy::Ethnicity(e) => e.token().into(),
            Dummy::Education(e) => e.token().into(),
            Dummy::Region(r) => r.token().into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceLevels {
    pub gender: Gender,
    pub age_band: AgeBand,
    pub ethnicity: Ethnicity,
    pub education: Education,
    pub region: Region,
}

impl Default for ReferenceLevels {
    /// Male, 18-22, White, Bachelor, Europe.
    fn default() -> Self {
        Self {
            gender: Gender::Male,
            age_band: AgeBand::Age18To22,
            ethnicity: Ethnicity::White,
            education: Education::Bachelor,
            region: Region::Europe,
        }
    }
}

/// Fixed-effect layout plus the grouping factors of the mixed model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub columns: Vec<Dummy>,
    pub reference: ReferenceLevels,
}

/// Names of the three grouping factors, in theta order.
pub const GROUPING_FACTORS: [&str; 3] = ["annotator_id", "language", "tweet_within_language"];

impl DesignSpec {
    /// Intercept, Female, Age23-45, Age46+, Black, Latino, HighSchool, Master, Africa, America.
    pub fn table2() -> Self {
        Self {
            columns: vec![
                Dummy::Intercept,
                Dummy::Gender(Gender::Female),
                Dummy::AgeBand(AgeBand::Age23To45),
                Dummy::AgeBand(AgeBand::Age46Plus),
                Dummy::Ethnicity(Ethnicity::Black),
                Dummy::Ethnicity(Ethnicity::Latino),
                Dummy::Education(Education::HighSchool),
                Dummy::Education(Education::Master),
                Dummy::Region(Region::Africa),
                Dummy::Region(Region::America),
            ],
            reference: ReferenceLevels::default(),
        }
    }

    /// One dummy per non-reference level that occurs among the corpus's
    /// annotating profiles; levels within an attribute are ordered by their
    /// short label. Errors if a reference level is absent.
    pub fn from_corpus(corpus: &Corpus) -> Result<Self, GlmmError> {
        let reference = ReferenceLevels::default();
        let active: BTreeSet<&str> = corpus
            .tweets()
            .iter()
            .flat_map(|t| t.annotations.iter().map(|a| a.annotator_id.as_str()))
            .collect();
        let profiles: Vec<_> = active.iter().filter_map(|id| corpus.profile(id)).collect();

        fn levels<T: Copy + Ord>(
            values: impl Iterator<Item = T>,
            reference: T,
            short: fn(T) -> &'static str,
            name: &str,
            wrap: fn(T) -> Dummy,
        ) -> Result<Vec<Dummy>, GlmmError> {
            let set: BTreeSet<T> = values.collect();
            if !set.is_empty() && !set.contains(&reference) {
                return Err(GlmmError::MissingReference(format!("{name}={}", short(reference))));
            }
            let mut v: Vec<T> = set.into_iter().filter(|&x| x != reference).collect();
            v.sort_by_key(|&x| short(x));
            Ok(v.into_iter().map(wrap).collect())
        }

        let mut columns = vec![Dummy::Intercept];
        columns.extend(levels(profiles.iter().map(|p| p.gender), reference.gender, Gender::short_label, "gender", Dummy::Gender)?);
        columns.extend(levels(profiles.iter().map(|p| p.age_band), reference.age_band, AgeBand::short_label, "age_band", Dummy::AgeBand)?);
        columns.extend(levels(profiles.iter().map(|p| p.ethnicity), reference.ethnicity, Ethnicity::short_label, "ethnicity", Dummy::Ethnicity)?);
        columns.extend(levels(profiles.iter().map(|p| p.education), reference.education, Education::short_label, "education", Dummy::Education)?);
        columns.extend(levels(profiles.iter().map(|p| p.region), reference.region, Region::short_label, "region", Dummy::Region)?);
        Ok(Self { columns, reference })
    }

    pub fn column_names(&self) -> Vec<String> {
        self.columns.iter().map(Dummy::name).collect()
    }
}

/// Levels and per-observation level indices of one grouping factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupingFactor {
    pub name: String,
    pub levels: Vec<String>,
    pub index: Vec<usize>,
}

impl GroupingFactor {
    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }
}

/// Numeric model inputs: row-major fixed-effect matrix, binary outcomes,
/// observation weights and the three grouping factors
/// (annotator, language, tweet-within-language).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelData {
    pub columns: Vec<String>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub weights: Vec<f64>,
    pub groups: [GroupingFactor; 3],
}

impl ModelData {
    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    pub fn n_fixed(&self) -> usize {
        self.columns.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.n_fixed();
        &self.x[i * p..(i + 1) * p]
    }

    pub fn validate(&self) -> Result<(), GlmmError> {
        let n = self.n_obs();
        let p = self.n_fixed();
        if n == 0 {
            return Err(GlmmError::InvalidData("no observations".into()));
        }
        if self.x.len() != n * p || self.weights.len() != n {
            return Err(GlmmError::InvalidData("row counts disagree".into()));
        }
        for g in &self.groups {
            if g.index.len() != n || g.index.iter().any(|&j| j >= g.levels.len()) {
                return Err(GlmmError::InvalidData(format!("bad index for factor {}", g.name)));
            }
        }
        if self.y.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(GlmmError::InvalidData("outcomes must be 0 or 1".into()));
        }
        if self.weights.iter().any(|&w| !(w.is_finite() && w > 0.0)) {
            return Err(GlmmError::InvalidData("weights must be positive and finite".into()));
        }
        if self.x.iter().any(|v| !v.is_finite()) {
            return Err(GlmmError::InvalidData("non-finite design entry".into()));
        }
        Ok(())
    }

    /// Weights rescaled to mean one.
    pub(crate) fn unit_mean_weights(&self) -> Vec<f64> {
        let mean = self.weights.iter().sum::<f64>() / self.n_obs() as f64;
        self.weights.iter().map(|w| w / mean).collect()
    }
}

/// Dummy-codes a corpus: one row per (tweet, annotation), YES → 1.
///
/// `weights` must list the corpus observations in order (as produced by
/// `compute_weights`); `w_scaled` is used. Passing `None` gives unit weights.
pub fn build_design(
    corpus: &Corpus,
    weights: Option<&[ObservationWeight]>,
    spec: &DesignSpec,
) -> Result<ModelData, GlmmError> {
    let n = corpus.annotation_count();
    if let Some(w) = weights {
        if w.len() != n {
            return Err(GlmmError::InvalidData(format!("{} weights for {n} observations", w.len())));
        }
    }
    let p = spec.columns.len();
    let mut x = Vec::with_capacity(n * p);
    let mut y = Vec::with_capacity(n);
    let mut w_out = Vec::with_capacity(n);

    let mut factor_levels: [Vec<String>; 3] = Default::default();
    let mut factor_maps: [HashMap<String, usize>; 3] = Default::default();
    let mut factor_index: [Vec<usize>; 3] = Default::default();

    for (i, (tweet, ann, profile)) in corpus.observations().enumerate() {
        if let Some(w) = weights {
            let o = &w[i];
            if o.tweet_id != tweet.tweet_id || o.annotator_id != ann.annotator_id {
                return Err(GlmmError::InvalidData(format!(
                    "weight row {i} is for ({}, {}) but observation is ({}, {})",
                    o.tweet_id, o.annotator_id, tweet.tweet_id, ann.annotator_id
                )));
            }
            w_out.push(o.w_scaled);
        } else {
            w_out.push(1.0);
        }

        check_level(spec, "gender", profile.gender.token(), profile.gender == spec.reference.gender, |d| *d == Dummy::Gender(profile.gender))?;
        check_level(spec, "age_band", profile.age_band.token(), profile.age_band == spec.reference.age_band, |d| *d == Dummy::AgeBand(profile.age_band))?;
        check_level(spec, "ethnicity", profile.ethnicity.token(), profile.ethnicity == spec.reference.ethnicity, |d| *d == Dummy::Ethnicity(profile.ethnicity))?;
        check_level(spec, "education", profile.education.token(), profile.education == spec.reference.education, |d| *d == Dummy::Education(profile.education))?;
        check_level(spec, "region", profile.region.token(), profile.region == spec.reference.region, |d| *d == Dummy::Region(profile.region))?;

        for col in &spec.columns {
            let v = match *col {
                Dummy::Intercept => true,
                Dummy::Gender(g) => profile.gender == g,
                Dummy::AgeBand(a) => profile.age_band == a,
                Dummy::Ethnicity(e) => profile.ethnicity == e,
                Dummy::Education(e) => profile.education == e,
                Dummy::Region(r) => profile.region == r,
            };
            x.push(if v { 1.0 } else { 0.0 });
        }
        y.push(if ann.label == Label::Yes { 1.0 } else { 0.0 });

        let keys = [
            ann.annotator_id.clone(),
            tweet.language.token().to_string(),
            format!("{}:{}", tweet.language.token(), tweet.tweet_id),
        ];
        for (k, key) in keys.into_iter().enumerate() {
            let next = factor_levels[k].len();
            let idx = *factor_maps[k].entry(key.clone()).or_insert_with(|| {
                factor_levels[k].push(key);
                next
            });
            factor_index[k].push(idx);
        }
    }

    let [la, ll, lt] = factor_levels;
    let [ia, il, it] = factor_index;
    Ok(ModelData {
        columns: spec.column_names(),
        x,
        y,
        weights: w_out,
        groups: [
            GroupingFactor { name: GROUPING_FACTORS[0].into(), levels: la, index: ia },
            GroupingFactor { name: GROUPING_FACTORS[1].into(), levels: ll, index: il },
            GroupingFactor { name: GROUPING_FACTORS[2].into(), levels: lt, index: it },
        ],
    })
}

fn check_level(
    spec: &DesignSpec,
    attribute: &str,
    token: &str,
    is_reference: bool,
    matches: impl Fn(&Dummy) -> bool,
) -> Result<(), GlmmError> {
    if is_reference || spec.columns.iter().any(matches) {
        Ok(())
    } else {
        Err(GlmmError::LevelOutsideDesign(format!("{attribute}={token}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{map_region, Annotation, AnnotatorProfile, Language, TweetRecord};

    fn profile(id: &str, g: Gender, a: AgeBand, e: Ethnicity, ed: Education, country: &str) -> AnnotatorProfile {
        AnnotatorProfile {
            annotator_id: id.into(),
            gender: g,
            age_band: a,
            ethnicity: e,
            education: ed,
            country: country.into(),
            region: map_region(country).unwrap(),
        }
    }

    fn corpus() -> Corpus {
        let profiles = vec![
            profile("f", Gender::Female, AgeBand::Age23To45, Ethnicity::Black, Education::Bachelor, "NG"),
            profile("r", Gender::Male, AgeBand::Age18To22, Ethnicity::White, Education::Bachelor, "ES"),
        ];
        let tweets = ["t1", "t2"]
            .iter()
            .map(|id| TweetRecord {
                tweet_id: id.to_string(),
                language: Language::En,
                text: "x".into(),
                annotations: vec![
                    Annotation { annotator_id: "f".into(), label: Label::Yes },
                    Annotation { annotator_id: "r".into(), label: Label::No },
                ],
            })
            .collect();
        Corpus::new(profiles, tweets).unwrap()
    }

    #[test]
    fn dummy_coding_against_reference_group() {
        let data = build_design(&corpus(), None, &DesignSpec::table2()).unwrap();
        assert_eq!(
            data.columns,
            ["Intercept", "Female", "Age23-45", "Age46+", "Black", "Latino", "HighSchool", "Master", "Africa", "America"]
        );
        assert_eq!(data.row(0), &[1.0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        assert_eq!(data.row(1), &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(data.y, vec![1.0, 0.0, 1.0, 0.0]);
        data.validate().unwrap();
    }

    #[test]
    fn tweets_share_language_index() {
        let data = build_design(&corpus(), None, &DesignSpec::table2()).unwrap();
        let [annot, lang, tweet] = &data.groups;
        assert_eq!(tweet.index, vec![0, 0, 1, 1]);
        assert_eq!(lang.index, vec![0, 0, 0, 0]);
        assert_eq!(annot.index, vec![0, 1, 0, 1]);
        assert_eq!(tweet.levels, vec!["en:t1", "en:t2"]);
    }

    #[test]
    fn level_outside_design_is_rejected() {
        let mut c = corpus().to_jsonl();
        c = c.replacen("\"Bachelor\"", "\"Doctorate\"", 1);
        let c = crate::corpus::parse_corpus(c.as_bytes()).unwrap();
        match build_design(&c, None, &DesignSpec::table2()) {
            Err(GlmmError::LevelOutsideDesign(s)) => assert_eq!(s, "education=Doctorate"),
            other => panic!("unexpected {other:?}"),
        }
        let spec = DesignSpec::from_corpus(&c).unwrap();
        assert!(spec.columns.contains(&Dummy::Education(Education::Doctorate)));
        build_design(&c, None, &spec).unwrap();
    }

    #[test]
    fn spec_from_corpus_orders_like_table2() {
        let spec = DesignSpec::from_corpus(&corpus()).unwrap();
        assert_eq!(spec.column_names(), ["Intercept", "Female", "Age23-45", "Black", "Africa"]);
    }
}
