// Copyright 2026 The sipht-rs Authors
// SPDX-License-Identifier: Apache-2.0

//! Small dense Levenberg–Marquardt solver for the few-parameter fits here.

use nalgebra::{DMatrix, DVector};

pub(crate) struct LmSettings {
    pub max_iterations: usize,
    /// Stop when the relative cost decrease falls below this.
    pub cost_tolerance: f64,
    /// Stop when the relative step size falls below this.
    pub step_tolerance: f64,
}

impl Default for LmSettings {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            cost_tolerance: 1e-12,
            step_tolerance: 1e-11,
        }
    }
}

pub(crate) struct LmOutcome {
    pub params: DVector<f64>,
    /// Sum of squared residuals.
    pub cost: f64,
    pub jacobian: DMatrix<f64>,
    pub residuals: DVector<f64>,
    pub converged: bool,
}

/// Central-difference Jacobian of `residual` at `x`.
pub(crate) fn numeric_jacobian<F>(residual: &F, x: &DVector<f64>, rows: usize) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let mut jac = DMatrix::zeros(rows, x.len());
    for j in 0..x.len() {
        let h = 1e-6 * x[j].abs().max(1e-3);
        let mut hi = x.clone();
        let mut lo = x.clone();
        hi[j] += h;
        lo[j] -= h;
        let d = (residual(&hi) - residual(&lo)) / (2.0 * h);
        jac.set_column(j, &d);
    }
    jac
}

/// Minimizes `|residual(x)|²` from `x0`. `project` maps a trial point back
/// into the feasible set (identity for unconstrained problems).
pub(crate) fn minimize<F, P>(residual: F, project: P, x0: DVector<f64>, settings: &LmSettings) -> LmOutcome
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
    P: Fn(&mut DVector<f64>),
{
    let rows = residual(&x0).len();
    minimize_with(&residual, |x: &DVector<f64>| numeric_jacobian(&residual, x, rows), project, x0, settings)
}

/// [`minimize`] with a caller-supplied Jacobian.
pub(crate) fn minimize_with<F, J, P>(residual: F, jacobian: J, project: P, x0: DVector<f64>, settings: &LmSettings) -> LmOutcome
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
    J: Fn(&DVector<f64>) -> DMatrix<f64>,
    P: Fn(&mut DVector<f64>),
{
    let mut x = x0;
    project(&mut x);
    let mut r = residual(&x);
    let mut cost = r.norm_squared();
    let mut jac = jacobian(&x);
    let mut lambda = 1e-3;
    let mut converged = false;

    for _ in 0..settings.max_iterations {
        let jtj = jac.transpose() * &jac;
        let grad = jac.transpose() * &r;
        if grad.amax() <= f64::EPSILON * cost.max(f64::MIN_POSITIVE) || cost == 0.0 {
            converged = true;
            break;
        }
        let mut improved = false;
        for _ in 0..30 {
            let mut damped = jtj.clone();
            for i in 0..damped.nrows() {
                damped[(i, i)] += lambda * jtj[(i, i)].max(1e-300);
            }
            let Some(step) = damped.clone().lu().solve(&(-&grad)) else {
                lambda *= 10.0;
                continue;
            };
            let mut trial = &x + &step;
            project(&mut trial);
            // freeze coordinates already sitting on a bound that the step
            // tries to cross, and re-solve for the rest
            let pinned: Vec<usize> = (0..x.len())
                .filter(|&j| trial[j] == x[j] && step[j] != 0.0)
                .collect();
            if !pinned.is_empty() && pinned.len() < x.len() {
                let mut reduced = damped.clone();
                let mut rhs = -&grad;
                for &j in &pinned {
                    reduced.fill_row(j, 0.0);
                    reduced.fill_column(j, 0.0);
                    reduced[(j, j)] = 1.0;
                    rhs[j] = 0.0;
                }
                if let Some(step) = reduced.lu().solve(&rhs) {
                    trial = &x + &step;
                    project(&mut trial);
                }
            }
            let r_trial = residual(&trial);
            let c_trial = r_trial.norm_squared();
            if c_trial.is_finite() && c_trial < cost {
                let rel_drop = (cost - c_trial) / cost.max(f64::MIN_POSITIVE);
                let rel_step = (&trial - &x).norm() / x.norm().max(1e-300);
                x = trial;
                r = r_trial;
                cost = c_trial;
                jac = jacobian(&x);
                lambda = (lambda * 0.3).max(1e-12);
                improved = true;
                if rel_drop < settings.cost_tolerance || rel_step < settings.step_tolerance {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            // no descent direction left at machine precision
            converged = true;
            break;
        }
        if converged {
            break;
        }
    }

    LmOutcome {
        params: x,
        cost,
        jacobian: jac,
        residuals: r,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fits_exponential_decay() {
        let ts: Vec<f64> = (0..20).map(|i| i as f64 * 0.25).collect();
        let ys: Vec<f64> = ts.iter().map(|t| 3.0 * (-0.7 * t).exp()).collect();
        let residual = |x: &DVector<f64>| DVector::from_iterator(ts.len(), ts.iter().zip(&ys).map(|(t, y)| x[0] * (-x[1] * t).exp() - y));
        let out = minimize(residual, |_| {}, DVector::from_vec(vec![1.0, 0.1]), &LmSettings::default());
        assert!(out.converged);
        assert!((out.params[0] - 3.0).abs() < 1e-9);
        assert!((out.params[1] - 0.7).abs() < 1e-9);
    }

    #[test]
    fn analytic_jacobian_matches_numeric() {
        let residual = |x: &DVector<f64>| DVector::from_vec(vec![x[0] * x[1].sin(), x[0].powi(2) - x[1]]);
        let x = DVector::from_vec(vec![1.3, 0.4]);
        let j = numeric_jacobian(&residual, &x, 2);
        let exact = DMatrix::from_row_slice(2, 2, &[0.4f64.sin(), 1.3 * 0.4f64.cos(), 2.6, -1.0]);
        assert!((j - exact).amax() < 1e-8);
    }

    #[test]
    fn projection_enforces_bounds() {
        // minimum at x = -2 but x is constrained to be >= 0
        let residual = |x: &DVector<f64>| DVector::from_vec(vec![x[0] + 2.0]);
        let out = minimize(residual, |x| x[0] = x[0].max(0.0), DVector::from_vec(vec![5.0]), &LmSettings::default());
        assert!(out.params[0].abs() < 1e-12);
    }
}
