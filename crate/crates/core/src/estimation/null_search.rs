// Copyright 2026 The sipht-rs Authors
// SPDX-License-Identifier: Apache-2.0

use serde::{Deserialize, Serialize};

use super::EstimationError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NullSearchOptions {
    /// Uniform scan points used to bracket sign changes.
    pub scan_points: usize,
    /// Bracket width at which bisection stops (T).
    pub tolerance: f64,
}

impl Default for NullSearchOptions {
    fn default() -> Self {
        Self {
            scan_points: 64,
            tolerance: 1e-13,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullSearch {
    /// Selected null (T): the root closest to the middle of the range.
    pub b_mod: f64,
    /// Every bracketed root in the range, ascending.
    pub roots: Vec<f64>,
    pub evaluations: usize,
}

/// Finds the modulation amplitude at which a drive-sensitive signal
/// vanishes.
///
/// `oracle(b_mod)` must return a signed quantity that changes sign at the
/// null, for example `C(p) − C(p + π)` at a fixed offset or `C(p) − C0`.
/// Because the phase wraps, the range may contain further roots at
/// `K·|b_d − b_mod|·|cos p| = kπ`; the one nearest the middle of the range
/// is returned, so the range should be centered on the nominal drive.
pub fn null_search_b_mod<F>(oracle: F, range: (f64, f64), options: &NullSearchOptions) -> Result<NullSearch, EstimationError>
where
    F: Fn(f64) -> f64,
{
    let (lo, hi) = range;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(EstimationError::InvalidInput(format!("invalid range [{lo}, {hi}]")));
    }
    if options.scan_points < 2 || !(options.tolerance > 0.0) {
        return Err(EstimationError::InvalidInput("need ≥ 2 scan points and a positive tolerance".into()));
    }
    let mut evaluations = 0usize;
    let mut eval = |x: f64| -> Result<f64, EstimationError> {
        evaluations += 1;
        let v = oracle(x);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(EstimationError::InvalidInput(format!("oracle returned {v} at {x}")))
        }
    };

    let m = options.scan_points;
    let xs: Vec<f64> = (0..m).map(|i| lo + (hi - lo) * i as f64 / (m - 1) as f64).collect();
    let mut ys = Vec::with_capacity(m);
    for &x in &xs {
        ys.push(eval(x)?);
    }
    let scale = ys.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if ys.iter().all(|&v| (v - ys[0]).abs() <= 1e-14 * scale.max(f64::MIN_POSITIVE)) {
        return Err(EstimationError::FlatResponse { lo, hi });
    }

    let mut roots = Vec::new();
    for i in 0..m - 1 {
        let (mut a, mut b) = (xs[i], xs[i + 1]);
        let (mut fa, fb) = (ys[i], ys[i + 1]);
        if fa == 0.0 {
            roots.push(a);
            continue;
        }
        if i == m - 2 && fb == 0.0 {
            roots.push(b);
        }
        if fa * fb >= 0.0 {
            continue;
        }
        while b - a > options.tolerance {
            let mid = 0.5 * (a + b);
            if mid <= a || mid >= b {
                break;
            }
            let fm = eval(mid)?;
            if fm == 0.0 {
                a = mid;
                b = mid;
                break;
            }
            if fa * fm < 0.0 {
                b = mid;
            } else {
                a = mid;
                fa = fm;
            }
        }
        roots.push(0.5 * (a + b));
    }
    let center = 0.5 * (lo + hi);
    let b_mod = roots
        .iter()
        .copied()
        .min_by(|a, b| (a - center).abs().total_cmp(&(b - center).abs()))
        .ok_or(EstimationError::NoSignChange { lo, hi })?;
    Ok(NullSearch {
        b_mod,
        roots,
        evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::{contrast_from_phase, phi_nv_analytic, ReadoutModel};
    use crate::fields::{FieldConfig, ModulationConfig};

    fn analytic_oracle(b_mod: f64) -> f64 {
        let cfg = FieldConfig::new(100e-6, 0.0, 152e3, 0.0).unwrap();
        let m = ModulationConfig {
            b_d_mod: b_mod,
            ..ModulationConfig::conventional()
        };
        let r = ReadoutModel::default();
        let p = 0.4;
        contrast_from_phase(phi_nv_analytic(&cfg, &m, 1, p), &r)
            - contrast_from_phase(phi_nv_analytic(&cfg, &m, 1, p + std::f64::consts::PI), &r)
    }

    #[test]
    fn analytic_null_within_one_nanotesla() {
        let s = null_search_b_mod(analytic_oracle, (95e-6, 105e-6), &NullSearchOptions::default()).unwrap();
        assert!((s.b_mod - 100e-6).abs() < 1e-9, "{s:?}");
    }

    #[test]
    fn wide_range_picks_central_root() {
        let s = null_search_b_mod(analytic_oracle, (80e-6, 120e-6), &NullSearchOptions::default()).unwrap();
        assert!(s.roots.len() > 1);
        assert!((s.b_mod - 100e-6).abs() < 1e-9);
    }

    #[test]
    fn range_without_root() {
        let r = null_search_b_mod(|b| b - 1.0, (0.0, 0.5), &NullSearchOptions::default());
        assert!(matches!(r, Err(EstimationError::NoSignChange { .. })));
    }

    #[test]
    fn flat_oracle() {
        let r = null_search_b_mod(|_| 0.3, (0.0, 1.0), &NullSearchOptions::default());
        assert!(matches!(r, Err(EstimationError::FlatResponse { .. })));
    }

    #[test]
    fn non_finite_oracle_is_reported() {
        let r = null_search_b_mod(|_| f64::NAN, (0.0, 1.0), &NullSearchOptions::default());
        assert!(matches!(r, Err(EstimationError::InvalidInput(_))));
    }
}
