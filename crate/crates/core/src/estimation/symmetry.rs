// Copyright 2026 The sipht-rs Authors
// SPDX-License-Identifier: Apache-2.0

use serde::{Deserialize, Serialize};

use super::{check_period_sweep, node_offsets, EstimationError};
use crate::analytic::ContrastCurve;
use crate::{wrap_to_tau, TAU};

/// Reflection score below which [`SymmetryWarning::LowSymmetry`] is raised.
pub const SYMMETRY_THRESHOLD: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SymmetryWarning {
    /// No axis reaches [`SYMMETRY_THRESHOLD`].
    LowSymmetry { score: f64 },
    /// The curve carries unmodulated drive phase; its axis mixes the drive
    /// with the response and is not δ.
    DriveLeakage { leakage: f64 },
    /// A secondary modulation shifts the axis away from δ.
    SecondaryModulation,
    /// `sin φ ≈ 0`, so the δ / δ + π choice is arbitrary.
    AmbiguousBranch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetryReadout {
    /// Reflection axis in the node convention, `[0, 2π)`.
    pub delta: f64,
    /// Even-reflection score of the chosen axis in `[-1, 1]`.
    pub score: f64,
    pub warnings: Vec<SymmetryWarning>,
}

/// Even-reflection score of samples `y` about the half-index position
/// `j / 2`: `1 − Σ(y_i − y_{j−i})² / (2 Σ(y_i − ȳ)²)`.
fn score_at(y: &[f64], j: usize, spread: f64) -> f64 {
    let n = y.len();
    let mismatch: f64 = (0..n)
        .map(|i| {
            let m = (j + 2 * n - i) % n;
            (y[i] - y[m]).powi(2)
        })
        .sum();
    1.0 - mismatch / (2.0 * spread)
}

fn spread(y: &[f64]) -> f64 {
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    y.iter().map(|v| (v - mean).powi(2)).sum()
}

fn is_uniform_period(p: &[f64]) -> bool {
    if p.len() < 4 {
        return false;
    }
    let h = TAU / p.len() as f64;
    let span = p[p.len() - 1] - p[0];
    (span + h - TAU).abs() < 1e-9 * TAU
        && p.windows(2).all(|w| ((w[1] - w[0]) - h).abs() < 1e-6 * h)
}

/// Best half-index axis and its parabolically refined position in sample
/// units. `None` for flat curves.
fn best_axis(y: &[f64]) -> Option<(f64, f64)> {
    let n = y.len();
    let s = spread(y);
    let peak = y.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if !(s > (1e-12 * peak).powi(2) * n as f64) {
        return None;
    }
    let scores: Vec<f64> = (0..2 * n).map(|j| score_at(y, j, s)).collect();
    let (j, &best) = scores
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))?;
    let prev = scores[(j + 2 * n - 1) % (2 * n)];
    let next = scores[(j + 1) % (2 * n)];
    let curvature = prev - 2.0 * best + next;
    let shift = if curvature < 0.0 {
        (0.5 * (prev - next) / curvature).clamp(-0.5, 0.5)
    } else {
        0.0
    };
    // one half-index step is half a sample
    Some((0.5 * (j as f64 + shift), best))
}

/// Reflection axis of a uniformly sampled period, in the units of `p`,
/// without resolving the δ / δ + π ambiguity.
pub(crate) fn reflection_axis(p: &[f64], y: &[f64]) -> Option<f64> {
    if !is_uniform_period(p) {
        return None;
    }
    let (pos, _) = best_axis(y)?;
    Some(p[0] + pos * TAU / p.len() as f64)
}

/// Phase delay read from the axis about which a SIPHT `p` sweep is even.
///
/// Both `δ` and `δ + π` are reflection axes. At a quarter period past the
/// response axis the phase crosses zero with slope `−γ-amplitude`, so the
/// contrast slope there has the sign of `sin φ`; the axis satisfying this
/// is returned. Unlike comparing the contrast values at the two axes this
/// stays valid when the phase amplitude exceeds π.
pub fn delta_from_symmetry(curve: &ContrastCurve) -> Result<SymmetryReadout, EstimationError> {
    check_period_sweep(curve, 8)?;
    let p = node_offsets(curve)?;
    if !is_uniform_period(&p) {
        return Err(EstimationError::InvalidInput(
            "symmetry readout needs a uniform sweep over exactly one period".into(),
        ));
    }
    let y = curve.contrasts();
    let n = y.len();
    let h = TAU / n as f64;
    let (pos, score) = best_axis(&y).ok_or(EstimationError::FlatCurve)?;

    let slope_at = |q: f64| -> f64 {
        let i = q.round().rem_euclid(n as f64) as usize;
        (y[(i + 1) % n] - y[(i + n - 1) % n]) / (2.0 * h)
    };
    let quarter = n as f64 / 4.0;
    let tie = slope_at(pos + quarter) - slope_at(pos - quarter);
    let sin_phi = curve.readout.varphi.sin();

    let mut warnings = Vec::new();
    let axis = if sin_phi.abs() < 1e-6 {
        warnings.push(SymmetryWarning::AmbiguousBranch);
        pos
    } else if tie * sin_phi >= 0.0 {
        pos
    } else {
        pos + n as f64 / 2.0
    };

    if score < SYMMETRY_THRESHOLD {
        warnings.push(SymmetryWarning::LowSymmetry { score });
    }
    let leakage = curve.cfg.b_d - curve.modulation.b_d_mod;
    if leakage.abs() > 1e-3 * curve.cfg.b_d.abs() {
        warnings.push(SymmetryWarning::DriveLeakage { leakage });
    }
    if curve.modulation.b_s_mod != 0.0 {
        warnings.push(SymmetryWarning::SecondaryModulation);
    }

    Ok(SymmetryReadout {
        delta: wrap_to_tau(p[0] + axis * h),
        score,
        warnings,
    })
}
