use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{bernoulli_loglik, sigmoid, GlmmError, ModelData};

/// Coefficient magnitude above which separation is reported.
pub const SEPARATION_THRESHOLD: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlatControls {
    /// Convergence when the gradient max-norm falls to this value.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FlatControls {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 100 }
    }
}

/// Result of a (possibly ridge-penalized) weighted logistic regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    pub beta: Vec<f64>,
    /// Unpenalized weighted log-likelihood at `beta`.
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    pub gradient_max_norm: f64,
    /// Row-major inverse of the penalized information matrix.
    pub covariance: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatFit {
    pub columns: Vec<String>,
    pub beta: Vec<f64>,
    pub loglik: f64,
    pub aic: f64,
    pub bic: f64,
    pub n_obs: usize,
    pub converged: bool,
    pub iterations: usize,
    /// Columns whose estimate exceeded the separation threshold.
    pub separated: Vec<String>,
    pub covariance: Vec<f64>,
}

struct Problem<'a> {
    x: &'a [f64],
    p: usize,
    y: &'a [f64],
    w: &'a [f64],
    penalty: &'a [f64],
    nonzero: Vec<Vec<usize>>,
}

impl<'a> Problem<'a> {
    fn new(x: &'a [f64], p: usize, y: &'a [f64], w: &'a [f64], penalty: &'a [f64]) -> Self {
        let nonzero = x.chunks(p).map(|row| (0..p).filter(|&j| row[j] != 0.0).collect()).collect();
        Self { x, p, y, w, penalty, nonzero }
    }

    fn eta(&self, beta: &[f64], i: usize) -> f64 {
        let row = &self.x[i * self.p..(i + 1) * self.p];
        self.nonzero[i].iter().map(|&j| row[j] * beta[j]).sum()
    }

    fn loglik(&self, beta: &[f64]) -> f64 {
        (0..self.y.len()).map(|i| self.w[i] * bernoulli_loglik(self.y[i], self.eta(beta, i))).sum()
    }

    fn objective(&self, beta: &[f64]) -> f64 {
        self.loglik(beta) - 0.5 * beta.iter().zip(self.penalty).map(|(b, l)| l * b * b).sum::<f64>()
    }

    fn gradient_and_information(&self, beta: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let p = self.p;
        let mut g = DVector::zeros(p);
        let mut h = DMatrix::zeros(p, p);
        for i in 0..self.y.len() {
            let row = &self.x[i * p..(i + 1) * p];
            let mu = sigmoid(self.eta(beta, i));
            let r = self.w[i] * (self.y[i] - mu);
            let wt = self.w[i] * mu * (1.0 - mu);
            let nz = &self.nonzero[i];
            for &j in nz {
                g[j] += row[j] * r;
                let a = wt * row[j];
                for &k in nz {
                    if k >= j {
                        h[(j, k)] += a * row[k];
                    }
                }
            }
        }
        for j in 0..p {
            g[j] -= self.penalty[j] * beta[j];
            h[(j, j)] += self.penalty[j];
            for k in 0..j {
                h[(j, k)] = h[(k, j)];
            }
        }
        (g, h)
    }
}

fn max_abs(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn check_rank(x: &[f64], p: usize, columns: Option<&[String]>) -> Result<(), GlmmError> {
    let n = x.len() / p;
    let mut xtx = DMatrix::<f64>::zeros(p, p);
    for row in x.chunks(p) {
        for j in 0..p {
            if row[j] == 0.0 {
                continue;
            }
            for k in j..p {
                xtx[(j, k)] += row[j] * row[k];
            }
        }
    }
    let name = |j: usize| columns.map(|c| c[j].clone()).unwrap_or_else(|| format!("column {j}"));
    for j in 0..p {
        if xtx[(j, j)] == 0.0 {
            return Err(GlmmError::RankDeficient(format!("{} is identically zero", name(j))));
        }
    }
    let scale: Vec<f64> = (0..p).map(|j| xtx[(j, j)].sqrt()).collect();
    for j in 0..p {
        for k in j..p {
            let v = xtx[(j, k)] / (scale[j] * scale[k]);
            xtx[(j, k)] = v;
            xtx[(k, j)] = v;
        }
    }
    let eig = xtx.symmetric_eigenvalues();
    let max = eig.iter().cloned().fold(f64::MIN, f64::max);
    let min = eig.iter().cloned().fold(f64::MAX, f64::min);
    if n < p || min <= 1e-10 * max {
        return Err(GlmmError::RankDeficient("columns are linearly dependent".into()));
    }
    Ok(())
}

/// Weighted logistic regression by Newton/IRLS with step-halving.
///
/// `x` is row-major with `p` columns. `penalty[j]` adds `penalty[j]/2 * beta_j²`
/// to the negative log-likelihood; all-zero penalties give maximum likelihood
/// and trigger a rank check first. Weights are used as given.
pub fn fit_logistic(
    x: &[f64],
    p: usize,
    y: &[f64],
    w: &[f64],
    penalty: &[f64],
    start: Option<&[f64]>,
    controls: &FlatControls,
) -> Result<LogisticFit, GlmmError> {
    let n = y.len();
    if p == 0 || x.len() != n * p || w.len() != n || penalty.len() != p {
        return Err(GlmmError::InvalidData("inconsistent logistic problem dimensions".into()));
    }
    if n == 0 {
        return Err(GlmmError::InvalidData("no observations".into()));
    }
    if penalty.iter().all(|&l| l == 0.0) {
        check_rank(x, p, None)?;
    }
    let prob = Problem::new(x, p, y, w, penalty);
    let mut beta: Vec<f64> = start.map(|s| s.to_vec()).unwrap_or_else(|| vec![0.0; p]);
    let mut obj = prob.objective(&beta);
    let mut iterations = 0;
    let mut converged = false;
    let (mut g, mut h) = prob.gradient_and_information(&beta);

    while iterations < controls.max_iter {
        if max_abs(&g) <= controls.tol {
            converged = true;
            break;
        }
        iterations += 1;
        let Some(chol) = h.clone().cholesky() else {
            break;
        };
        let delta = chol.solve(&g);
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..50 {
            let cand: Vec<f64> = beta.iter().zip(delta.iter()).map(|(b, d)| b + step * d).collect();
            let cand_obj = prob.objective(&cand);
            if cand_obj.is_finite() && cand_obj >= obj {
                beta = cand;
                obj = cand_obj;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        (g, h) = prob.gradient_and_information(&beta);
        if !accepted {
            // No ascent possible at machine precision.
            converged = max_abs(&g) <= controls.tol;
            break;
        }
    }
    if !converged && max_abs(&g) <= controls.tol {
        converged = true;
    }
    // Left as NaN when the information is singular (e.g. under separation);
    // Wald tests report that as an error.
    let cov = match h.cholesky() {
        Some(c) => c.inverse(),
        None => DMatrix::from_element(p, p, f64::NAN),
    };
    Ok(LogisticFit {
        loglik: prob.loglik(&beta),
        beta,
        iterations,
        converged,
        gradient_max_norm: max_abs(&g),
        covariance: row_major(&cov),
    })
}

pub(crate) fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.nrows() * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// Weighted log-likelihood of a flat model at `beta`, with weights rescaled to mean one.
pub fn flat_loglik(data: &ModelData, beta: &[f64]) -> f64 {
    let w = data.unit_mean_weights();
    let zero = vec![0.0; data.n_fixed()];
    Problem::new(&data.x, data.n_fixed(), &data.y, &w, &zero).loglik(beta)
}

/// Analytic gradient of [`flat_loglik`].
pub fn flat_gradient(data: &ModelData, beta: &[f64]) -> Vec<f64> {
    let w = data.unit_mean_weights();
    let zero = vec![0.0; data.n_fixed()];
    let (g, _) = Problem::new(&data.x, data.n_fixed(), &data.y, &w, &zero).gradient_and_information(beta);
    g.iter().copied().collect()
}

/// Weighted flat logistic regression on the fixed-effect columns.
pub fn fit_flat(data: &ModelData, controls: &FlatControls) -> Result<FlatFit, GlmmError> {
    data.validate()?;
    let p = data.n_fixed();
    check_rank(&data.x, p, Some(&data.columns))?;
    let w = data.unit_mean_weights();
    let fit = fit_logistic(&data.x, p, &data.y, &w, &vec![0.0; p], None, controls)?;
    let separated: Vec<String> = fit
        .beta
        .iter()
        .zip(&data.columns)
        .filter(|(b, _)| b.abs() > SEPARATION_THRESHOLD)
        .map(|(_, c)| c.clone())
        .collect();
    if !separated.is_empty() {
        log::warn!("possible separation; diverging coefficients: {}", separated.join(", "));
    }
    let n = data.n_obs() as f64;
    Ok(FlatFit {
        columns: data.columns.clone(),
        aic: -2.0 * fit.loglik + 2.0 * p as f64,
        bic: -2.0 * fit.loglik + p as f64 * n.ln(),
        n_obs: data.n_obs(),
        loglik: fit.loglik,
        beta: fit.beta,
        converged: fit.converged,
        iterations: fit.iterations,
        separated,
        covariance: fit.covariance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glmm::GroupingFactor;

    pub(crate) fn data_from(x: Vec<f64>, columns: &[&str], y: Vec<f64>, w: Option<Vec<f64>>) -> ModelData {
        let n = y.len();
        let factor = |name: &str| GroupingFactor {
            name: name.into(),
            levels: vec!["a".into(), "b".into()],
            index: (0..n).map(|i| i % 2).collect(),
        };
        ModelData {
            columns: columns.iter().map(|s| s.to_string()).collect(),
            x,
            weights: w.unwrap_or_else(|| vec![1.0; n]),
            y,
            groups: [factor("annotator_id"), factor("language"), factor("tweet_within_language")],
        }
    }

    #[test]
    fn intercept_only_matches_logit_of_mean() {
        let d = data_from(vec![1.0; 4], &["Intercept"], vec![1.0, 0.0, 1.0, 0.0], None);
        let f = fit_flat(&d, &FlatControls::default()).unwrap();
        assert!(f.beta[0].abs() < 1e-8);
        assert!(f.converged);

        let d = data_from(vec![1.0; 8], &["Intercept"], vec![1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0], None);
        let f = fit_flat(&d, &FlatControls::default()).unwrap();
        assert!((f.beta[0] - 3f64.ln()).abs() < 1e-8);
        let ll = 8.0 * (0.75 * 0.75f64.ln() + 0.25 * 0.25f64.ln());
        assert!((f.loglik - ll).abs() < 1e-10);
        assert!((f.aic - (-2.0 * ll + 2.0)).abs() < 1e-10);
        assert!((f.bic - (-2.0 * ll + 8f64.ln())).abs() < 1e-10);
    }

    #[test]
    fn zero_column_is_rank_deficient() {
        let d = data_from(vec![1.0, 0.0, 1.0, 0.0], &["Intercept", "Black"], vec![1.0, 0.0], None);
        match fit_flat(&d, &FlatControls::default()) {
            Err(GlmmError::RankDeficient(m)) => assert!(m.contains("Black")),
            other => panic!("unexpected {other:?}"),
        }
        let d = data_from(vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0], &["Intercept", "Copy"], vec![1.0, 0.0, 1.0], None);
        assert!(matches!(fit_flat(&d, &FlatControls::default()), Err(GlmmError::RankDeficient(_))));
    }

    #[test]
    fn separation_is_reported_not_fatal() {
        let x = vec![1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 1.0, 1.0];
        let d = data_from(x, &["Intercept", "Female"], vec![0.0, 0.0, 1.0, 1.0], None);
        let f = fit_flat(&d, &FlatControls { tol: 1e-8, max_iter: 200 }).unwrap();
        assert!(f.beta[1] > 10.0, "{f:?}");
        let again = fit_flat(&d, &FlatControls { tol: 1e-30, max_iter: 200 }).unwrap();
        assert_eq!(again.separated, ["Intercept", "Female"]);
    }

    #[test]
    fn ridge_penalty_shrinks() {
        let x = vec![1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0];
        let y = vec![1.0, 0.0, 1.0, 0.0];
        let w = vec![1.0; 4];
        let free = fit_logistic(&x, 2, &y, &w, &[0.0, 0.0], None, &FlatControls::default()).unwrap();
        let ridge = fit_logistic(&x, 2, &y, &w, &[0.0, 5.0], None, &FlatControls::default()).unwrap();
        assert!(ridge.beta[1].abs() < free.beta[1].abs());
        assert!(ridge.converged);
    }
}
