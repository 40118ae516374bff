use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::agreement::{icc_from_variances, VarianceComponents};

use super::{CoefficientTest, FitMetrics, FlatFit, GlmmError, GlmmFit};

/// Serializable summary of a fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDocument {
    pub model: String,
    pub n_obs: usize,
    pub coefficients: Vec<CoefficientTest>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta: Option<[f64; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variance_components: Option<VarianceComponents>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub icc: Option<f64>,
    pub loglik: f64,
    pub aic: f64,
    pub bic: f64,
    pub converged: bool,
    /// IRLS iterations for flat fits, objective evaluations for mixed fits.
    pub iterations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<FitMetrics>,
}

impl FitDocument {
    pub fn flat(fit: &FlatFit, metrics: Option<FitMetrics>) -> Result<Self, GlmmError> {
        Ok(Self {
            model: "flat".into(),
            n_obs: fit.n_obs,
            coefficients: fit.wald_tests()?,
            theta: None,
            variance_components: None,
            icc: None,
            loglik: fit.loglik,
            aic: fit.aic,
            bic: fit.bic,
            converged: fit.converged,
            iterations: fit.iterations,
            metrics,
        })
    }

    pub fn mixed(fit: &GlmmFit, metrics: Option<FitMetrics>) -> Result<Self, GlmmError> {
        Ok(Self {
            model: "mixed".into(),
            n_obs: fit.n_obs,
            coefficients: fit.wald_tests()?,
            theta: Some(fit.theta),
            variance_components: Some(fit.variance_components),
            icc: Some(icc_from_variances(&fit.variance_components)),
            loglik: fit.laplace_loglik,
            aic: fit.aic,
            bic: fit.bic,
            converged: fit.converged,
            iterations: fit.evaluations,
            metrics,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub variable: String,
    pub coef_flat: Option<f64>,
    pub p_flat: Option<f64>,
    pub coef_mixed: Option<f64>,
    pub p_mixed: Option<f64>,
}

/// Joins two coefficient tables by name, in the order of first appearance.
pub fn comparison_rows(flat: &[CoefficientTest], mixed: &[CoefficientTest]) -> Vec<ComparisonRow> {
    let mut names: Vec<&str> = flat.iter().map(|c| c.name.as_str()).collect();
    for c in mixed {
        if !names.contains(&c.name.as_str()) {
            names.push(&c.name);
        }
    }
    names
        .into_iter()
        .map(|name| {
            let f = flat.iter().find(|c| c.name == name);
            let m = mixed.iter().find(|c| c.name == name);
            ComparisonRow {
                variable: name.to_string(),
                coef_flat: f.map(|c| c.estimate),
                p_flat: f.map(|c| c.p_value),
                coef_mixed: m.map(|c| c.estimate),
                p_mixed: m.map(|c| c.p_value),
            }
        })
        .collect()
}

/// Writes `variable,coef_flat,p_flat,coef_mixed,p_mixed`; absent cells are empty.
pub fn write_comparison_csv<W: Write>(rows: &[ComparisonRow], out: W) -> Result<(), GlmmError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["variable", "coef_flat", "p_flat", "coef_mixed", "p_mixed"])?;
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        w.write_record([r.variable.clone(), cell(r.coef_flat), cell(r.p_flat), cell(r.coef_mixed), cell(r.p_mixed)])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glmm::significance_band;

    fn test(name: &str, est: f64, p: f64) -> CoefficientTest {
        CoefficientTest {
            name: name.into(),
            estimate: est,
            std_error: 1.0,
            z_value: est,
            p_value: p,
            significance_band: significance_band(p),
        }
    }

    #[test]
    fn comparison_csv_layout() {
        let rows = comparison_rows(&[test("Intercept", -0.5, 0.01)], &[test("Intercept", -1.25, 0.2), test("Female", 1.0, 0.5)]);
        let mut buf = Vec::new();
        write_comparison_csv(&rows, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "variable,coef_flat,p_flat,coef_mixed,p_mixed\nIntercept,-0.5,0.01,-1.25,0.2\nFemale,,,1,0.5\n"
        );
    }
}
