use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::GlmmError;

/// Significance codes: `***` p < 0.001, `**` < 0.01, `*` < 0.05, `.` < 0.1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignificanceBand {
    VeryStrong,
    Strong,
    Moderate,
    Weak,
    None,
}

impl SignificanceBand {
    pub fn code(self) -> &'static str {
        match self {
            SignificanceBand::VeryStrong => "***",
            SignificanceBand::Strong => "**",
            SignificanceBand::Moderate => "*",
            SignificanceBand::Weak => ".",
            SignificanceBand::None => "-",
        }
    }
}

impl Serialize for SignificanceBand {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.code())
    }
}

impl<'de> Deserialize<'de> for SignificanceBand {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(match s.as_str() {
            "***" => SignificanceBand::VeryStrong,
            "**" => SignificanceBand::Strong,
            "*" => SignificanceBand::Moderate,
            "." => SignificanceBand::Weak,
            "-" => SignificanceBand::None,
            other => return Err(serde::de::Error::custom(format!("unknown significance code {other:?}"))),
        })
    }
}

pub fn significance_band(p: f64) -> SignificanceBand {
    if p < 0.001 {
        SignificanceBand::VeryStrong
    } else if p < 0.01 {
        SignificanceBand::Strong
    } else if p < 0.05 {
        SignificanceBand::Moderate
    } else if p < 0.1 {
        SignificanceBand::Weak
    } else {
        SignificanceBand::None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientTest {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub z_value: f64,
    pub p_value: f64,
    pub significance_band: SignificanceBand,
}

/// Two-sided Wald z tests from a row-major coefficient covariance.
pub fn wald_tests(names: &[String], beta: &[f64], covariance: &[f64]) -> Result<Vec<CoefficientTest>, GlmmError> {
    let p = beta.len();
    if names.len() != p || covariance.len() != p * p {
        return Err(GlmmError::InvalidData("coefficient and covariance sizes disagree".into()));
    }
    let normal = Normal::standard();
    (0..p)
        .map(|j| {
            let var = covariance[j * p + j];
            if !(var.is_finite() && var > 0.0) {
                return Err(GlmmError::SingularInformation);
            }
            let se = var.sqrt();
            let z = beta[j] / se;
            let p_value = 2.0 * normal.sf(z.abs());
            Ok(CoefficientTest {
                name: names[j].clone(),
                estimate: beta[j],
                std_error: se,
                z_value: z,
                p_value,
                significance_band: significance_band(p_value),
            })
        })
        .collect()
}

impl super::FlatFit {
    pub fn wald_tests(&self) -> Result<Vec<CoefficientTest>, GlmmError> {
        wald_tests(&self.columns, &self.beta, &self.covariance)
    }
}

impl super::GlmmFit {
    pub fn wald_tests(&self) -> Result<Vec<CoefficientTest>, GlmmError> {
        wald_tests(&self.columns, &self.beta, &self.covariance)
    }
}
