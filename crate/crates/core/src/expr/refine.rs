//! Local refinement of constant leaves by damped Gauss-Newton
//! (Levenberg-Marquardt) on the mean squared error.

use nalgebra::{DMatrix, DVector};

use super::{Expression, Program};
use crate::data::Dataset;

#[derive(Debug, Clone, Copy)]
pub struct RefineConfig {
    pub max_iter: usize,
    /// Stop once the relative MSE improvement of an accepted step is below this.
    pub rel_tol: f64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig { max_iter: 40, rel_tol: 1e-14 }
    }
}

/// Mean squared error of `e` on `data`; `inf` when any prediction is non-finite.
pub fn mse(e: &Expression, data: &Dataset) -> f64 {
    let pred = Program::compile(e).eval_columns(&data.columns, data.len());
    mse_of(&pred, &data.y)
}

fn mse_of(pred: &[f64], y: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (p, t) in pred.iter().zip(y) {
        let r = p - t;
        acc += r * r;
    }
    let m = acc / y.len().max(1) as f64;
    if m.is_finite() {
        m
    } else {
        f64::INFINITY
    }
}

/// Adjusts constant leaves to lower the MSE on `data`. The tree shape is
/// kept; the input is returned unchanged when it has no constants or no
/// improving step is found.
pub fn refine_constants(e: &Expression, data: &Dataset, cfg: &RefineConfig) -> Expression {
    let mut params = e.constants();
    if params.is_empty() || data.is_empty() {
        return e.clone();
    }
    let n = data.len();
    let k = params.len();
    let predict = |p: &[f64]| Program::compile(&e.with_constants(p)).eval_columns(&data.columns, n);

    let mut pred = predict(&params);
    let mut cost = mse_of(&pred, &data.y);
    if !cost.is_finite() {
        return e.clone();
    }
    let start_cost = cost;
    let mut lambda = 1e-3;

    for _ in 0..cfg.max_iter {
        let mut jac = DMatrix::<f64>::zeros(n, k);
        let mut ok = true;
        for j in 0..k {
            let h = 1e-6 * params[j].abs().max(1.0);
            let mut p = params.clone();
            p[j] += h;
            let up = predict(&p);
            p[j] -= 2.0 * h;
            let down = predict(&p);
            for i in 0..n {
                let g = (up[i] - down[i]) / (2.0 * h);
                if !g.is_finite() {
                    ok = false;
                }
                jac[(i, j)] = g;
            }
        }
        if !ok {
            break;
        }
        let resid = DVector::from_iterator(n, pred.iter().zip(&data.y).map(|(p, t)| p - t));
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * resid;

        let mut improved = false;
        for _ in 0..12 {
            let mut a = jtj.clone();
            for d in 0..k {
                a[(d, d)] += lambda * jtj[(d, d)].max(1e-12);
            }
            let Some(step) = a.lu().solve(&(-&jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let trial: Vec<f64> = params.iter().zip(step.iter()).map(|(p, s)| p + s).collect();
            if trial.iter().any(|v| !v.is_finite()) {
                lambda *= 10.0;
                continue;
            }
            let trial_pred = predict(&trial);
            let trial_cost = mse_of(&trial_pred, &data.y);
            if trial_cost < cost {
                let rel = (cost - trial_cost) / cost.max(f64::MIN_POSITIVE);
                params = trial;
                pred = trial_pred;
                cost = trial_cost;
                lambda = (lambda / 3.0).max(1e-12);
                improved = rel > cfg.rel_tol;
                break;
            }
            lambda *= 4.0;
        }
        if !improved || cost == 0.0 {
            break;
        }
    }

    if cost <= start_cost {
        e.with_constants(&params)
    } else {
        e.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_data(f: impl Fn(f64) -> f64) -> Dataset {
        let xs: Vec<Vec<f64>> = (0..41).map(|i| vec![-1.0 + 0.05 * i as f64]).collect();
        let ys = xs.iter().map(|x| f(x[0])).collect();
        Dataset::from_rows(&xs, ys)
    }

    #[test]
    fn recovers_linear_coefficient() {
        let data = grid_data(|t| 2.0 * t * t);
        let e = 1.0 * Expression::var(0).sq();
        let r = refine_constants(&e, &data, &RefineConfig::default());
        assert!((r.constants()[0] - 2.0).abs() < 1e-6, "{r}");
    }

    #[test]
    fn constant_only_goes_to_mean() {
        let data = grid_data(|t| t + 0.3);
        let r = refine_constants(&Expression::constant(5.0), &data, &RefineConfig::default());
        let mean = data.y.iter().sum::<f64>() / data.len() as f64;
        assert!((r.as_const().unwrap() - mean).abs() < 1e-9);
    }

    #[test]
    fn no_constants_is_identity() {
        let data = grid_data(|t| t);
        let e = Expression::var(0).sin();
        assert_eq!(refine_constants(&e, &data, &RefineConfig::default()), e);
    }

    #[test]
    fn mse_never_increases() {
        let data = grid_data(|t| (3.0 * t).sin());
        let e = 0.7 * (1.1 * Expression::var(0)).sin();
        let before = mse(&e, &data);
        let r = refine_constants(&e, &data, &RefineConfig::default());
        assert!(mse(&r, &data) <= before);
    }
}
