use std::collections::HashMap;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::agreement::VarianceComponents;

use super::flat::{fit_flat, row_major, FlatControls};
use super::nelder_mead::{nelder_mead, NelderMeadOptions};
use super::{bernoulli_loglik, sigmoid, GlmmError, ModelData, PredictionMode};

/// Bounds applied to each log-standard-deviation during the outer search.
/// Outside them the objective is evaluated at the bound plus a quadratic wall.
pub const THETA_MIN: f64 = -12.0;
pub const THETA_MAX: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GlmmControls {
    pub x_tol: f64,
    pub f_tol: f64,
    pub inner_tol: f64,
    pub inner_max_iter: usize,
    pub max_evals: usize,
    pub max_restarts: usize,
    pub beta_step: f64,
    pub theta_step: f64,
    /// Holds theta at the given values and optimizes beta only.
    pub fixed_theta: Option<[f64; 3]>,
}

impl Default for GlmmControls {
    fn default() -> Self {
        Self {
            x_tol: 1e-6,
            f_tol: 1e-8,
            inner_tol: 1e-9,
            inner_max_iter: 200,
            max_evals: 200_000,
            max_restarts: 1,
            beta_step: 0.1,
            theta_step: 0.25,
            fixed_theta: None,
        }
    }
}

/// Conditional modes of one grouping factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomEffects {
    pub factor: String,
    pub levels: Vec<String>,
    pub modes: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmmFit {
    pub columns: Vec<String>,
    pub beta: Vec<f64>,
    /// Log-standard-deviations: annotator, language, tweet-within-language.
    pub theta: [f64; 3],
    pub variance_components: VarianceComponents,
    pub b_hat: Vec<RandomEffects>,
    pub laplace_loglik: f64,
    pub aic: f64,
    pub bic: f64,
    pub n_obs: usize,
    pub converged: bool,
    pub evaluations: usize,
    /// Theta after the first (theta-only) search stage.
    pub start_theta: [f64; 3],
    /// Row-major covariance of beta from the joint penalized information.
    pub covariance: Vec<f64>,
}

impl GlmmFit {
    pub fn random_effect(&self, factor: &str, level: &str) -> Option<f64> {
        let re = self.b_hat.iter().find(|r| r.factor == factor)?;
        re.levels.iter().position(|l| l == level).map(|i| re.modes[i])
    }

    /// Linear predictor; unseen levels contribute zero in conditional mode.
    pub fn linear_predictor(&self, data: &ModelData, mode: PredictionMode) -> Result<Vec<f64>, GlmmError> {
        if data.columns != self.columns {
            return Err(GlmmError::ColumnMismatch { expected: self.columns.clone(), found: data.columns.clone() });
        }
        let mut eta: Vec<f64> = (0..data.n_obs())
            .map(|i| data.row(i).iter().zip(&self.beta).map(|(x, b)| x * b).sum())
            .collect();
        if mode == PredictionMode::Conditional {
            for (k, factor) in data.groups.iter().enumerate() {
                let re = &self.b_hat[k];
                let lookup: HashMap<&str, f64> =
                    re.levels.iter().map(String::as_str).zip(re.modes.iter().copied()).collect();
                let per_level: Vec<f64> =
                    factor.levels.iter().map(|l| lookup.get(l.as_str()).copied().unwrap_or(0.0)).collect();
                for (e, &j) in eta.iter_mut().zip(&factor.index) {
                    *e += per_level[j];
                }
            }
        }
        Ok(eta)
    }

    pub fn predict(&self, data: &ModelData, mode: PredictionMode) -> Result<Vec<f64>, GlmmError> {
        Ok(self.linear_predictor(data, mode)?.into_iter().map(sigmoid).collect())
    }
}

/// Per-iteration penalized deviance of one inner solve.
#[derive(Debug, Clone, PartialEq)]
pub struct PirlsTrace {
    pub deviance: Vec<f64>,
    pub iterations: usize,
}

struct Model<'a> {
    data: &'a ModelData,
    w: Vec<f64>,
    p: usize,
    q: [usize; 3],
    tweet_obs: Vec<Vec<usize>>,
    tol: f64,
    max_iter: usize,
}

struct System {
    chol: Cholesky<f64, Dyn>,
    d: Vec<f64>,
    v: Vec<Vec<(usize, f64)>>,
    logdet: f64,
}

struct Inner {
    q: f64,
    logdet: f64,
    iterations: usize,
}

fn precisions(theta: &[f64; 3]) -> [f64; 3] {
    theta.map(|t| (-2.0 * t).exp())
}

fn clamp_theta(theta: &[f64]) -> ([f64; 3], f64) {
    let mut out = [0.0; 3];
    let mut wall = 0.0;
    for k in 0..3 {
        out[k] = theta[k].clamp(THETA_MIN, THETA_MAX);
        wall += (theta[k] - out[k]).powi(2);
    }
    (out, wall)
}

impl<'a> Model<'a> {
    fn new(data: &'a ModelData, controls: &GlmmControls) -> Result<Self, GlmmError> {
        data.validate()?;
        for g in &data.groups {
            if g.n_levels() < 2 {
                return Err(GlmmError::TooFewLevels(g.name.clone()));
            }
        }
        let q = [data.groups[0].n_levels(), data.groups[1].n_levels(), data.groups[2].n_levels()];
        let mut tweet_obs = vec![Vec::new(); q[2]];
        for (i, &t) in data.groups[2].index.iter().enumerate() {
            tweet_obs[t].push(i);
        }
        Ok(Self {
            data,
            w: data.unit_mean_weights(),
            p: data.n_fixed(),
            q,
            tweet_obs,
            tol: controls.inner_tol,
            max_iter: controls.inner_max_iter,
        })
    }

    /// Length of the unknown vector: fixed effects (when joint), then the
    /// annotator, language and tweet modes.
    fn dim(&self, joint: bool) -> usize {
        self.fixed_len(joint) + self.q.iter().sum::<usize>()
    }

    fn fixed_len(&self, joint: bool) -> usize {
        if joint {
            self.p
        } else {
            0
        }
    }

    fn offsets(&self, joint: bool) -> [usize; 3] {
        let pb = self.fixed_len(joint);
        [pb, pb + self.q[0], pb + self.q[0] + self.q[1]]
    }

    fn fixed_part(&self, beta: &[f64]) -> Vec<f64> {
        (0..self.data.n_obs())
            .map(|i| self.data.row(i).iter().zip(beta).map(|(x, b)| x * b).sum())
            .collect()
    }

    fn eta(&self, joint: bool, offset: &[f64], u: &[f64]) -> Vec<f64> {
        let off = self.offsets(joint);
        let g = &self.data.groups;
        (0..self.data.n_obs())
            .map(|i| {
                let mut e = offset[i] + u[off[0] + g[0].index[i]] + u[off[1] + g[1].index[i]] + u[off[2] + g[2].index[i]];
                if joint {
                    e += self.data.row(i).iter().zip(&u[..self.p]).map(|(x, b)| x * b).sum::<f64>();
                }
                e
            })
            .collect()
    }

    fn penalized(&self, joint: bool, eta: &[f64], u: &[f64], prec: &[f64; 3]) -> f64 {
        let ll: f64 = (0..eta.len()).map(|i| self.w[i] * bernoulli_loglik(self.data.y[i], eta[i])).sum();
        let off = self.offsets(joint);
        let mut pen = 0.0;
        for k in 0..3 {
            pen += prec[k] * u[off[k]..off[k] + self.q[k]].iter().map(|b| b * b).sum::<f64>();
        }
        ll - 0.5 * pen
    }

    fn gradient(&self, joint: bool, eta: &[f64], u: &[f64], prec: &[f64; 3]) -> Vec<f64> {
        let off = self.offsets(joint);
        let g = &self.data.groups;
        let mut grad = vec![0.0; self.dim(joint)];
        for i in 0..eta.len() {
            let r = self.w[i] * (self.data.y[i] - sigmoid(eta[i]));
            if joint {
                for (j, x) in self.data.row(i).iter().enumerate() {
                    grad[j] += x * r;
                }
            }
            for k in 0..3 {
                grad[off[k] + g[k].index[i]] += r;
            }
        }
        for k in 0..3 {
            for j in off[k]..off[k] + self.q[k] {
                grad[j] -= prec[k] * u[j];
            }
        }
        grad
    }

    /// Factorizes the negative Hessian of the penalized log-likelihood with
    /// the (diagonal) tweet block eliminated.
    fn assemble(&self, joint: bool, eta: &[f64], prec: &[f64; 3]) -> Result<System, GlmmError> {
        let off = self.offsets(joint);
        let r = off[2];
        let g = &self.data.groups;
        let wt: Vec<f64> = eta
            .iter()
            .zip(&self.w)
            .map(|(&e, &w)| {
                let mu = sigmoid(e);
                w * mu * (1.0 - mu)
            })
            .collect();

        let mut s = DMatrix::<f64>::zeros(r, r);
        let mut z: Vec<(usize, f64)> = Vec::with_capacity(self.p + 2);
        for i in 0..eta.len() {
            z.clear();
            if joint {
                z.extend(self.data.row(i).iter().enumerate().filter(|(_, &x)| x != 0.0).map(|(j, &x)| (j, x)));
            }
            z.push((off[0] + g[0].index[i], 1.0));
            z.push((off[1] + g[1].index[i], 1.0));
            for &(j, a) in &z {
                let wa = wt[i] * a;
                for &(k, b) in &z {
                    s[(j, k)] += wa * b;
                }
            }
        }
        for k in 0..2 {
            for j in off[k]..off[k] + self.q[k] {
                s[(j, j)] += prec[k];
            }
        }

        let mut d = vec![0.0; self.q[2]];
        let mut v = Vec::with_capacity(self.q[2]);
        let mut logdet = 0.0;
        for (t, obs) in self.tweet_obs.iter().enumerate() {
            let mut entries: Vec<(usize, f64)> = Vec::new();
            let mut dt = prec[2];
            for &i in obs {
                dt += wt[i];
                if joint {
                    for (j, &x) in self.data.row(i).iter().enumerate() {
                        if x != 0.0 {
                            entries.push((j, wt[i] * x));
                        }
                    }
                }
                entries.push((off[0] + g[0].index[i], wt[i]));
                entries.push((off[1] + g[1].index[i], wt[i]));
            }
            entries.sort_by_key(|e| e.0);
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(entries.len());
            for (j, x) in entries {
                match merged.last_mut() {
                    Some(last) if last.0 == j => last.1 += x,
                    _ => merged.push((j, x)),
                }
            }
            for &(j, a) in &merged {
                let aj = a / dt;
                for &(k, b) in &merged {
                    s[(j, k)] -= aj * b;
                }
            }
            logdet += dt.ln();
            d[t] = dt;
            v.push(merged);
        }
        let chol = Cholesky::new(s).ok_or(GlmmError::SingularSystem)?;
        logdet += 2.0 * chol.l_dirty().diagonal().iter().take(r).map(|x| x.ln()).sum::<f64>();
        Ok(System { chol, d, v, logdet })
    }

    fn solve(&self, joint: bool, sys: &System, g: &[f64]) -> Vec<f64> {
        let r = self.offsets(joint)[2];
        let mut rhs = DVector::from_column_slice(&g[..r]);
        for (t, vt) in sys.v.iter().enumerate() {
            let f = g[r + t] / sys.d[t];
            for &(j, a) in vt {
                rhs[j] -= a * f;
            }
        }
        let xr = sys.chol.solve(&rhs);
        let mut out: Vec<f64> = xr.iter().copied().collect();
        for (t, vt) in sys.v.iter().enumerate() {
            let dot: f64 = vt.iter().map(|&(j, a)| a * xr[j]).sum();
            out.push((g[r + t] - dot) / sys.d[t]);
        }
        out
    }

    /// Newton iterations with step-halving on the penalized log-likelihood.
    fn pirls(
        &self,
        joint: bool,
        offset: &[f64],
        u: &mut Vec<f64>,
        prec: &[f64; 3],
        mut trace: Option<&mut Vec<f64>>,
    ) -> Result<Inner, GlmmError> {
        let mut eta = self.eta(joint, offset, u);
        let mut q = self.penalized(joint, &eta, u, prec);
        if !q.is_finite() {
            u.iter_mut().for_each(|x| *x = 0.0);
            eta = self.eta(joint, offset, u);
            q = self.penalized(joint, &eta, u, prec);
        }
        for iteration in 0..=self.max_iter {
            if let Some(t) = trace.as_deref_mut() {
                t.push(-2.0 * q);
            }
            let g = self.gradient(joint, &eta, u, prec);
            let sys = self.assemble(joint, &eta, prec)?;
            let gmax = g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            if gmax < self.tol {
                return Ok(Inner { q, logdet: sys.logdet, iterations: iteration });
            }
            if iteration == self.max_iter {
                break;
            }
            let delta = self.solve(joint, &sys, &g);
            let decrement: f64 = g.iter().zip(&delta).map(|(a, b)| a * b).sum();
            if decrement < 1e-8 {
                // Inside the quadratic region the objective change is below
                // its rounding error, so line search cannot judge the step.
                u.iter_mut().zip(&delta).for_each(|(a, d)| *a += d);
                eta = self.eta(joint, offset, u);
                q = self.penalized(joint, &eta, u, prec);
                if decrement < 1e-24 {
                    // Gradient is at its rounding floor.
                    let sys = self.assemble(joint, &eta, prec)?;
                    return Ok(Inner { q, logdet: sys.logdet, iterations: iteration + 1 });
                }
                continue;
            }
            let mut step = 1.0;
            let mut accepted = false;
            for _ in 0..40 {
                let cand: Vec<f64> = u.iter().zip(&delta).map(|(a, d)| a + step * d).collect();
                let cand_eta = self.eta(joint, offset, &cand);
                let cand_q = self.penalized(joint, &cand_eta, &cand, prec);
                if cand_q.is_finite() && cand_q >= q {
                    *u = cand;
                    eta = cand_eta;
                    q = cand_q;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        Err(GlmmError::InnerNonConvergence(self.max_iter))
    }

    fn deviance(&self, inner: &Inner, theta: &[f64; 3]) -> f64 {
        let log_prec: f64 = (0..3).map(|k| self.q[k] as f64 * (-2.0 * theta[k])).sum();
        -2.0 * inner.q + inner.logdet - log_prec
    }

    fn split_modes(&self, joint: bool, u: &[f64]) -> Vec<RandomEffects> {
        let off = self.offsets(joint);
        (0..3)
            .map(|k| RandomEffects {
                factor: self.data.groups[k].name.clone(),
                levels: self.data.groups[k].levels.clone(),
                modes: u[off[k]..off[k] + self.q[k]].to_vec(),
            })
            .collect()
    }
}

/// Laplace-approximate deviance (−2 × approximate marginal log-likelihood)
/// at fixed `beta` and `theta`, with weights rescaled to mean one.
pub fn laplace_deviance(data: &ModelData, beta: &[f64], theta: &[f64; 3]) -> Result<f64, GlmmError> {
    let model = Model::new(data, &GlmmControls::default())?;
    let offset = model.fixed_part(beta);
    let mut u = vec![0.0; model.dim(false)];
    let inner = model.pirls(false, &offset, &mut u, &precisions(theta), None)?;
    Ok(model.deviance(&inner, theta))
}

/// Penalized deviance after each inner iteration, starting from zero modes.
pub fn pirls_trace(data: &ModelData, beta: &[f64], theta: &[f64; 3]) -> Result<PirlsTrace, GlmmError> {
    let model = Model::new(data, &GlmmControls::default())?;
    let offset = model.fixed_part(beta);
    let mut u = vec![0.0; model.dim(false)];
    let mut deviance = Vec::new();
    let inner = model.pirls(false, &offset, &mut u, &precisions(theta), Some(&mut deviance))?;
    Ok(PirlsTrace { deviance, iterations: inner.iterations })
}

/// Fits the mixed logistic model by maximizing the Laplace approximation.
///
/// The search starts at the flat-fit coefficients with theta = 0. A first
/// Nelder–Mead stage searches theta alone, with beta solved jointly with the
/// modes at each theta; a second stage searches (beta, theta) jointly on the
/// Laplace objective with modes solved given beta.
pub fn fit_glmm(data: &ModelData, controls: &GlmmControls) -> Result<GlmmFit, GlmmError> {
    let model = Model::new(data, controls)?;
    let p = model.p;
    let flat = fit_flat(data, &FlatControls::default())?;
    let zero_offset = vec![0.0; data.n_obs()];

    let mut joint_u = vec![0.0; model.dim(true)];
    joint_u[..p].copy_from_slice(&flat.beta);
    let mut evaluations = 0;

    let start_theta = match controls.fixed_theta {
        Some(t) => {
            model.pirls(true, &zero_offset, &mut joint_u, &precisions(&t), None)?;
            t
        }
        None => {
            let start = model.pirls(true, &zero_offset, &mut joint_u.clone(), &precisions(&[0.0; 3]), None)?;
            if !model.deviance(&start, &[0.0; 3]).is_finite() {
                return Err(GlmmError::NonFiniteObjective);
            }
            let mut cache = joint_u.clone();
            let stage1 = nelder_mead(
                |th| {
                    let (t, wall) = clamp_theta(th);
                    let mut u = cache.clone();
                    match model.pirls(true, &zero_offset, &mut u, &precisions(&t), None) {
                        Ok(inner) => {
                            cache = u;
                            model.deviance(&inner, &t) + wall
                        }
                        Err(_) => f64::INFINITY,
                    }
                },
                &[0.0; 3],
                &NelderMeadOptions {
                    step: vec![controls.theta_step * 2.0; 3],
                    x_tol: 1e-3,
                    f_tol: 1e-6,
                    max_evals: controls.max_evals,
                    max_restarts: 0,
                },
            );
            evaluations += stage1.evals;
            let (t, _) = clamp_theta(&stage1.x);
            model.pirls(true, &zero_offset, &mut joint_u, &precisions(&t), None)?;
            t
        }
    };

    let beta0 = joint_u[..p].to_vec();
    let mut modes = joint_u[p..].to_vec();
    let free_theta = controls.fixed_theta.is_none();
    let mut x0 = beta0.clone();
    if free_theta {
        x0.extend_from_slice(&start_theta);
    }
    let mut step = vec![controls.beta_step; p];
    if free_theta {
        step.extend([controls.theta_step; 3]);
    }

    let unpack = |x: &[f64]| -> ([f64; 3], f64) {
        if free_theta {
            clamp_theta(&x[p..])
        } else {
            (start_theta, 0.0)
        }
    };
    let objective = |x: &[f64], modes: &mut Vec<f64>| -> Result<f64, GlmmError> {
        let (t, wall) = unpack(x);
        let offset = model.fixed_part(&x[..p]);
        let mut u = modes.clone();
        let inner = model.pirls(false, &offset, &mut u, &precisions(&t), None)?;
        *modes = u;
        Ok(model.deviance(&inner, &t) + wall)
    };
    if !objective(&x0, &mut modes)?.is_finite() {
        return Err(GlmmError::NonFiniteObjective);
    }
    let stage2 = nelder_mead(
        |x| objective(x, &mut modes).unwrap_or(f64::INFINITY),
        &x0,
        &NelderMeadOptions {
            step,
            x_tol: controls.x_tol,
            f_tol: controls.f_tol,
            max_evals: controls.max_evals,
            max_restarts: controls.max_restarts,
        },
    );
    evaluations += stage2.evals;

    let beta = stage2.x[..p].to_vec();
    let (theta, _) = unpack(&stage2.x);
    let prec = precisions(&theta);
    let offset = model.fixed_part(&beta);
    let mut u = modes;
    let inner = model.pirls(false, &offset, &mut u, &prec, None)?;
    let dev = model.deviance(&inner, &theta);

    // Covariance of beta: fixed-effect block of the inverse joint information.
    let mut joint = beta.clone();
    joint.extend_from_slice(&u);
    let eta = model.eta(true, &zero_offset, &joint);
    let sys = model.assemble(true, &eta, &prec)?;
    let inv = sys.chol.inverse();
    let covariance = row_major(&inv.view((0, 0), (p, p)).into_owned());

    let k = (p + 3) as f64;
    let n = data.n_obs() as f64;
    let var = theta.map(|t| (2.0 * t).exp());
    Ok(GlmmFit {
        columns: data.columns.clone(),
        beta,
        theta,
        variance_components: VarianceComponents { var_annotator: var[0], var_language: var[1], var_tweet: var[2] },
        b_hat: model.split_modes(false, &u),
        laplace_loglik: -0.5 * dev,
        aic: dev + 2.0 * k,
        bic: dev + k * n.ln(),
        n_obs: data.n_obs(),
        converged: stage2.converged,
        evaluations,
        start_theta,
        covariance,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::glmm::GroupingFactor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Small crossed design with a random covariate.
    pub(crate) fn toy(seed: u64, n_tweets: usize, n_annot: usize, per_tweet: usize) -> ModelData {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a_eff: Vec<f64> = (0..n_annot).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut x = Vec::new();
        let mut y = Vec::new();
        let mut idx = [Vec::new(), Vec::new(), Vec::new()];
        for t in 0..n_tweets {
            let lang = t % 2;
            let t_eff: f64 = rng.random_range(-2.0..2.0);
            for k in 0..per_tweet {
                let a = (t * 3 + k * 5) % n_annot;
                let cov: f64 = if a % 2 == 0 { 1.0 } else { 0.0 };
                let eta = -0.3 + 0.8 * cov + a_eff[a] + t_eff + if lang == 0 { 0.3 } else { -0.3 };
                let p = 1.0 / (1.0 + (-eta).exp());
                y.push(if rng.random::<f64>() < p { 1.0 } else { 0.0 });
                x.extend([1.0, cov]);
                idx[0].push(a);
                idx[1].push(lang);
                idx[2].push(t);
            }
        }
        let n = y.len();
        let [ia, il, it] = idx;
        ModelData {
            columns: vec!["Intercept".into(), "Female".into()],
            x,
            y,
            weights: (0..n).map(|i| 0.5 + (i % 3) as f64 * 0.5).collect(),
            groups: [
                GroupingFactor { name: "annotator_id".into(), levels: (0..n_annot).map(|i| format!("a{i}")).collect(), index: ia },
                GroupingFactor { name: "language".into(), levels: vec!["en".into(), "es".into()], index: il },
                GroupingFactor { name: "tweet_within_language".into(), levels: (0..n_tweets).map(|i| format!("t{i}")).collect(), index: it },
            ],
        }
    }

    /// Dense reference for the Laplace deviance: full Hessian over all modes.
    fn dense_deviance(data: &ModelData, beta: &[f64], theta: &[f64; 3]) -> f64 {
        let w = data.unit_mean_weights();
        let q: Vec<usize> = data.groups.iter().map(|g| g.n_levels()).collect();
        let m: usize = q.iter().sum();
        let off = [0, q[0], q[0] + q[1]];
        let prec: Vec<f64> = (0..3).flat_map(|k| std::iter::repeat((-2.0 * theta[k]).exp()).take(q[k])).collect();
        let xb: Vec<f64> = (0..data.n_obs()).map(|i| data.row(i).iter().zip(beta).map(|(a, b)| a * b).sum()).collect();
        let cols = |i: usize| [off[0] + data.groups[0].index[i], off[1] + data.groups[1].index[i], off[2] + data.groups[2].index[i]];
        let mut b = DVector::<f64>::zeros(m);
        let mut hess = DMatrix::<f64>::zeros(m, m);
        let mut value = 0.0;
        for _ in 0..100 {
            let mut g = DVector::<f64>::zeros(m);
            hess.fill(0.0);
            value = 0.0;
            for i in 0..data.n_obs() {
                let c = cols(i);
                let eta = xb[i] + c.iter().map(|&j| b[j]).sum::<f64>();
                let mu = 1.0 / (1.0 + (-eta).exp());
                value += w[i] * (data.y[i] * eta - (1.0 + eta.exp()).ln());
                for &j in &c {
                    g[j] += w[i] * (data.y[i] - mu);
                    for &k in &c {
                        hess[(j, k)] += w[i] * mu * (1.0 - mu);
                    }
                }
            }
            for j in 0..m {
                value -= 0.5 * prec[j] * b[j] * b[j];
                g[j] -= prec[j] * b[j];
                hess[(j, j)] += prec[j];
            }
            if g.amax() < 1e-11 {
                break;
            }
            b += hess.clone().lu().solve(&g).unwrap();
        }
        let logdet = hess.determinant().ln();
        let log_prec: f64 = prec.iter().map(|p| p.ln()).sum();
        -2.0 * value + logdet - log_prec
    }

    #[test]
    fn schur_elimination_matches_dense_laplace() {
        let data = toy(3, 12, 5, 3);
        for theta in [[0.0, 0.0, 0.0], [-0.5, -1.0, 0.7], [0.3, -3.0, -0.2]] {
            let beta = [0.2, -0.4];
            let fast = laplace_deviance(&data, &beta, &theta).unwrap();
            let dense = dense_deviance(&data, &beta, &theta);
            assert!((fast - dense).abs() < 1e-8 * dense.abs(), "{fast} vs {dense}");
        }
    }

    #[test]
    fn pirls_trace_is_monotone_and_converges() {
        let data = toy(5, 30, 8, 4);
        let trace = pirls_trace(&data, &[0.5, -1.0], &[1.0, -0.5, 1.2]).unwrap();
        assert!(trace.iterations > 1);
        for pair in trace.deviance.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-9, "{:?}", trace.deviance);
        }
    }

    #[test]
    fn modes_are_stationary_by_finite_differences() {
        let data = toy(7, 20, 6, 3);
        let theta = [-0.2, -0.7, 0.4];
        let controls = GlmmControls::default();
        let model = Model::new(&data, &controls).unwrap();
        let offset = model.fixed_part(&[0.1, 0.3]);
        let prec = precisions(&theta);
        let mut u = vec![0.0; model.dim(false)];
        model.pirls(false, &offset, &mut u, &prec, None).unwrap();
        let q = |u: &[f64]| model.penalized(false, &model.eta(false, &offset, u), u, &prec);
        let h = 1e-5;
        for j in 0..u.len() {
            let mut up = u.clone();
            let mut dn = u.clone();
            up[j] += h;
            dn[j] -= h;
            assert!(((q(&up) - q(&dn)) / (2.0 * h)).abs() < 1e-6);
        }
        // And the analytic gradient away from the mode.
        let v: Vec<f64> = u.iter().enumerate().map(|(j, x)| x + 0.1 * (j as f64).sin()).collect();
        let g = model.gradient(false, &model.eta(false, &offset, &v), &v, &prec);
        for j in 0..v.len() {
            let mut up = v.clone();
            let mut dn = v.clone();
            up[j] += h;
            dn[j] -= h;
            let fd = (q(&up) - q(&dn)) / (2.0 * h);
            assert!((fd - g[j]).abs() <= 1e-6 * g[j].abs().max(1.0));
        }
    }

    #[test]
    fn fit_is_a_stationary_point_of_the_laplace_objective() {
        let data = toy(11, 60, 10, 4);
        let fit = fit_glmm(&data, &GlmmControls::default()).unwrap();
        assert!(fit.converged);
        let base = -2.0 * fit.laplace_loglik;
        let at = |beta: &[f64], theta: &[f64; 3]| laplace_deviance(&data, beta, theta).unwrap();
        assert!((at(&fit.beta, &fit.theta) - base).abs() < 1e-8);
        let h = 1e-3;
        for j in 0..2 {
            let mut up = fit.beta.clone();
            let mut dn = fit.beta.clone();
            up[j] += h;
            dn[j] -= h;
            let fd = (at(&up, &fit.theta) - at(&dn, &fit.theta)) / (2.0 * h);
            assert!(fd.abs() < 1e-2, "beta[{j}] slope {fd}");
        }
        for k in 0..3 {
            if fit.theta[k] <= THETA_MIN + 0.01 {
                continue;
            }
            let mut up = fit.theta;
            let mut dn = fit.theta;
            up[k] += h;
            dn[k] -= h;
            let fd = (at(&fit.beta, &up) - at(&fit.beta, &dn)) / (2.0 * h);
            assert!(fd.abs() < 1e-2, "theta[{k}] slope {fd}");
        }
    }

    #[test]
    fn prediction_modes() {
        let data = toy(11, 10, 4, 3);
        let fit = GlmmFit {
            columns: data.columns.clone(),
            beta: vec![0.0, 0.0],
            theta: [0.0; 3],
            variance_components: VarianceComponents { var_tweet: 1.0, var_annotator: 1.0, var_language: 1.0 },
            b_hat: vec![
                RandomEffects { factor: "annotator_id".into(), levels: vec![], modes: vec![] },
                RandomEffects { factor: "language".into(), levels: vec![], modes: vec![] },
                RandomEffects { factor: "tweet_within_language".into(), levels: vec!["t0".into()], modes: vec![1.0] },
            ],
            laplace_loglik: 0.0,
            aic: 0.0,
            bic: 0.0,
            n_obs: 0,
            converged: true,
            evaluations: 0,
            start_theta: [0.0; 3],
            covariance: vec![],
        };
        let pop = fit.predict(&data, PredictionMode::Population).unwrap();
        assert!(pop.iter().all(|&p| p == 0.5));
        let eta = fit.linear_predictor(&data, PredictionMode::Conditional).unwrap();
        for (i, e) in eta.iter().enumerate() {
            let expected = if data.groups[2].index[i] == 0 { 1.0 } else { 0.0 };
            assert_eq!(*e, expected);
        }
        let mut other = data.clone();
        other.columns[1] = "Male".into();
        assert!(matches!(fit.predict(&other, PredictionMode::Population), Err(GlmmError::ColumnMismatch { .. })));
    }

    #[test]
    fn too_few_levels_is_an_error() {
        let mut data = toy(1, 6, 3, 2);
        data.groups[1].levels.truncate(1);
        data.groups[1].index.iter_mut().for_each(|i| *i = 0);
        assert!(matches!(fit_glmm(&data, &GlmmControls::default()), Err(GlmmError::TooFewLevels(_))));
    }
}
