use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Error returned when a wire token does not belong to a closed enum.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownToken {
    pub kind: &'static str,
    pub token: String,
}

impl fmt::Display for UnknownToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid {} token {:?}", self.kind, self.token)
    }
}

impl std::error::Error for UnknownToken {}

/// Declares a closed enum with a wire token and a short display label per
/// variant. Tokens are what the corpus file carries; short labels are the
/// compact forms used in combination tables.
macro_rules! closed_enum {
    (
        $(#[$meta:meta])*
        $name:ident, $kind:literal {
            $($variant:ident => ($token:literal, $short:literal)),+ $(,)?
        }
    ) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn token(self) -> &'static str {
                match self {
                    $($name::$variant => $token),+
                }
            }

            pub fn short_label(self) -> &'static str {
                match self {
                    $($name::$variant => $short),+
                }
            }
        }

        impl FromStr for $name {
            type Err = UnknownToken;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($token => Ok($name::$variant),)+
                    _ => Err(UnknownToken { kind: $kind, token: s.to_string() }),
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.token())
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(self.token())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

closed_enum! {
    Gender, "gender" {
        Female => ("Female", "F"),
        Male => ("Male", "M"),
    }
}

closed_enum! {
    AgeBand, "age_band" {
        Age18To22 => ("18-22", "18-22"),
        Age23To45 => ("23-45", "23-45"),
        Age46Plus => ("46+", "46+"),
    }
}

closed_enum! {
    Ethnicity, "ethnicity" {
        Asian => ("Asian", "Asian"),
        Black => ("Black", "Black"),
        White => ("White", "White"),
        Latino => ("Latino", "Latino"),
        MiddleEastern => ("MiddleEastern", "Middle Eastern"),
        Multiracial => ("Multiracial", "Multiracial"),
        Other => ("Other", "Other"),
    }
}

closed_enum! {
    Education, "education" {
        LessThanHighSchool => ("LessThanHighSchool", "Less than high school"),
        HighSchool => ("HighSchool", "High school"),
        Bachelor => ("Bachelor", "Bachelor"),
        Master => ("Master", "Master"),
        Doctorate => ("Doctorate", "Doctorate"),
    }
}

closed_enum! {
    Region, "region" {
        Europe => ("Europe", "Europe"),
        America => ("America", "America"),
        Africa => ("Africa", "Africa"),
        Asia => ("Asia", "Asia"),
        MiddleEast => ("MiddleEast", "Middle East"),
    }
}

closed_enum! {
    Language, "language" {
        En => ("en", "en"),
        Es => ("es", "es"),
    }
}

closed_enum! {
    /// Binary task label. `Yes` marks the positive (sexist) class.
    Label, "label" {
        Yes => ("YES", "YES"),
        No => ("NO", "NO"),
    }
}

impl Label {
    pub fn from_bool(yes: bool) -> Self {
        if yes {
            Label::Yes
        } else {
            Label::No
        }
    }

    pub fn is_yes(self) -> bool {
        self == Label::Yes
    }
}

/// The five demographic attributes used for filtering, weighting and personas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribute {
    Gender,
    AgeBand,
    Ethnicity,
    Education,
    Region,
}

impl Attribute {
    pub const ALL: [Attribute; 5] = [
        Attribute::Gender,
        Attribute::AgeBand,
        Attribute::Ethnicity,
        Attribute::Education,
        Attribute::Region,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Attribute::Gender => "gender",
            Attribute::AgeBand => "age_band",
            Attribute::Ethnicity => "ethnicity",
            Attribute::Education => "education",
            Attribute::Region => "region",
        }
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatorProfile {
    pub annotator_id: String,
    pub gender: Gender,
    pub age_band: AgeBand,
    pub ethnicity: Ethnicity,
    pub education: Education,
    pub country: String,
    pub region: Region,
}

impl AnnotatorProfile {
    pub fn combination(&self) -> CombinationKey {
        CombinationKey {
            gender: self.gender,
            age_band: self.age_band,
            ethnicity: self.ethnicity,
            education: self.education,
            region: self.region,
        }
    }

    /// Wire token of the given attribute's value.
    pub fn attribute_token(&self, attribute: Attribute) -> &'static str {
        match attribute {
            Attribute::Gender => self.gender.token(),
            Attribute::AgeBand => self.age_band.token(),
            Attribute::Ethnicity => self.ethnicity.token(),
            Attribute::Education => self.education.token(),
            Attribute::Region => self.region.token(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub annotator_id: String,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TweetRecord {
    pub tweet_id: String,
    #[serde(rename = "lang")]
    pub language: Language,
    pub text: String,
    pub annotations: Vec<Annotation>,
}

impl TweetRecord {
    pub fn labels(&self) -> Vec<Label> {
        self.annotations.iter().map(|a| a.label).collect()
    }
}

/// A demographic 5-tuple without counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CombinationKey {
    pub gender: Gender,
    pub age_band: AgeBand,
    pub ethnicity: Ethnicity,
    pub education: Education,
    pub region: Region,
}

impl CombinationKey {
    /// Short labels in attribute order, e.g. `["F", "23-45", "Black", "Bachelor", "Africa"]`.
    pub fn short_labels(&self) -> [&'static str; 5] {
        [
            self.gender.short_label(),
            self.age_band.short_label(),
            self.ethnicity.short_label(),
            self.education.short_label(),
            self.region.short_label(),
        ]
    }

    /// Parses the comma-separated short form used in combination tables and
    /// run configs, e.g. `"F, 23-45, Black, Bachelor, Africa"`.
    pub fn parse_short(s: &str) -> Result<Self, UnknownToken> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 5 {
            return Err(UnknownToken {
                kind: "combination",
                token: s.to_string(),
            });
        }
        fn by_short<T: Copy + 'static>(
            all: &[T],
            label: fn(T) -> &'static str,
            kind: &'static str,
            s: &str,
        ) -> Result<T, UnknownToken> {
            all.iter()
                .copied()
                .find(|v| label(*v).eq_ignore_ascii_case(s))
                .ok_or_else(|| UnknownToken {
                    kind,
                    token: s.to_string(),
                })
        }
        Ok(CombinationKey {
            gender: by_short(Gender::ALL, Gender::short_label, "gender", parts[0])?,
            age_band: by_short(AgeBand::ALL, AgeBand::short_label, "age_band", parts[1])?,
            ethnicity: by_short(Ethnicity::ALL, Ethnicity::short_label, "ethnicity", parts[2])?,
            education: by_short(Education::ALL, Education::short_label, "education", parts[3])?,
            region: by_short(Region::ALL, Region::short_label, "region", parts[4])?,
        })
    }
}

impl fmt::Display for CombinationKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.short_labels().join(", "))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemographicCombination {
    #[serde(flatten)]
    pub key: CombinationKey,
    pub count_en: usize,
    pub count_es: usize,
}

impl DemographicCombination {
    pub fn count(&self, language: Language) -> usize {
        match language {
            Language::En => self.count_en,
            Language::Es => self.count_es,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationWeight {
    pub tweet_id: String,
    pub annotator_id: String,
    pub w_raw: f64,
    pub w_norm: f64,
    pub w_scaled: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokens_round_trip() {
        for e in Ethnicity::ALL {
            assert_eq!(e.token().parse::<Ethnicity>().unwrap(), *e);
        }
        assert_eq!("46+".parse::<AgeBand>().unwrap(), AgeBand::Age46Plus);
        assert!("Martian".parse::<Ethnicity>().is_err());
        assert!("yes".parse::<Label>().is_err());
    }

    #[test]
    fn short_combination_parses() {
        let key = CombinationKey::parse_short("F, 23-45, Black, Bachelor, Africa").unwrap();
        assert_eq!(key.gender, Gender::Female);
        assert_eq!(key.education, Education::Bachelor);
        assert_eq!(key.to_string(), "F, 23-45, Black, Bachelor, Africa");
        assert!(CombinationKey::parse_short("F, 23-45, Black").is_err());
        assert!(CombinationKey::parse_short("X, 23-45, Black, Bachelor, Africa").is_err());
    }
}
