use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NelderMeadOptions {
    /// Initial simplex offsets, one per coordinate.
    pub step: Vec<f64>,
    /// Simplex diameter (max-norm distance to the best vertex) at convergence.
    pub x_tol: f64,
    /// Spread of objective values across the simplex at convergence.
    pub f_tol: f64,
    pub max_evals: usize,
    /// Restarts from the converged point; a restart that improves the
    /// objective by more than `f_tol` triggers another one.
    pub max_restarts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
    pub converged: bool,
}

/// Minimizes `f` by the Nelder–Mead simplex method with dimension-adapted
/// coefficients. Non-finite objective values are treated as `+inf`.
pub fn nelder_mead(
    mut f: impl FnMut(&[f64]) -> f64,
    x0: &[f64],
    opts: &NelderMeadOptions,
) -> NelderMeadResult {
    let mut eval = |x: &[f64], count: &mut usize| {
        *count += 1;
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let mut evals = 0;
    let mut best = x0.to_vec();
    let mut best_f = eval(&best, &mut evals);
    let mut converged = false;
    for attempt in 0..=opts.max_restarts {
        let (x, fx, ok) = run(&mut eval, &best, opts, &mut evals);
        let improved = best_f - fx;
        if fx <= best_f {
            best = x;
            best_f = fx;
        }
        converged = ok;
        if !ok || (attempt > 0 && improved <= opts.f_tol) {
            break;
        }
    }
    NelderMeadResult { x: best, f: best_f, evals, converged }
}

fn run(
    eval: &mut impl FnMut(&[f64], &mut usize) -> f64,
    x0: &[f64],
    opts: &NelderMeadOptions,
    evals: &mut usize,
) -> (Vec<f64>, f64, bool) {
    let n = x0.len();
    if n == 0 {
        let v = eval(x0, evals);
        return (Vec::new(), v, true);
    }
    let d = n.max(2) as f64;
    let (alpha, gamma, rho, sigma) = (1.0, 1.0 + 2.0 / d, 0.75 - 1.0 / (2.0 * d), 1.0 - 1.0 / d);

    let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
    for j in 0..n {
        let mut v = x0.to_vec();
        v[j] += opts.step[j];
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| eval(v, evals)).collect();

    loop {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let diameter = simplex[1..]
            .iter()
            .map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if diameter <= opts.x_tol && values[n] - values[0] <= opts.f_tol {
            return (simplex[0].clone(), values[0], true);
        }
        if *evals >= opts.max_evals {
            return (simplex[0].clone(), values[0], false);
        }

        let centroid: Vec<f64> = (0..n).map(|j| simplex[..n].iter().map(|v| v[j]).sum::<f64>() / n as f64).collect();
        let along = |t: f64| -> Vec<f64> {
            centroid.iter().zip(&simplex[n]).map(|(c, w)| c + t * (c - w)).collect()
        };

        let xr = along(alpha);
        let fr = eval(&xr, evals);
        if fr < values[0] {
            let xe = along(gamma);
            let fe = eval(&xe, evals);
            if fe < fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
            continue;
        }
        if fr < values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
            continue;
        }
        let (xc, fc) = if fr < values[n] {
            let xc = along(rho);
            let fc = eval(&xc, evals);
            (xc, fc)
        } else {
            let xc = along(-rho);
            let fc = eval(&xc, evals);
            (xc, fc)
        };
        if fc < values[n].min(fr) {
            simplex[n] = xc;
            values[n] = fc;
            continue;
        }
        for i in 1..=n {
            let v: Vec<f64> = simplex[0].iter().zip(&simplex[i]).map(|(b, x)| b + sigma * (x - b)).collect();
            values[i] = eval(&v, evals);
            simplex[i] = v;
        }
    }
}
