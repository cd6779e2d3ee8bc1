// Copyright 2026 The sipht-rs Authors
// SPDX-License-Identifier: Apache-2.0

//! Parameter recovery from contrast curves.
//!
//! - [`fit_contrast_curve`]: least-squares fit of response amplitude and
//!   phase delay to a `p` sweep.
//! - [`delta_from_symmetry`]: model-free phase-delay readout from the
//!   reflection axis of a SIPHT curve.
//! - [`count_local_maxima`] and [`bs_bounds_from_maxima`]: amplitude bounds
//!   from the number of maxima per period.
//! - [`measure_leakage`]: residual drive phase of a SIPHT sweep relative to
//!   conventional decoupling.
//! - [`fit_dipolar`]: `A/(d + d0)³` distance scaling.
//! - [`null_search_b_mod`]: calibration of the modulation amplitude.

mod contrast_fit;
mod dipolar;
mod leakage;
mod lm;
mod maxima;
mod null_search;
mod symmetry;

use thiserror::Error;

pub use contrast_fit::{fit_contrast_curve, fit_contrast_curve_with, FitOptions, FitResult};
pub use dipolar::{fit_dipolar, fit_power_law, dipolar_field, DipolarFit, DipolarWarning, PowerLawFit};
pub use leakage::{fit_quadratures, measure_leakage, measure_leakage_with_reference, Quadratures};
pub use maxima::{bs_bounds_from_maxima, count_local_maxima};
pub use null_search::{null_search_b_mod, NullSearch, NullSearchOptions};
pub use symmetry::{delta_from_symmetry, SymmetryReadout, SymmetryWarning, SYMMETRY_THRESHOLD};

use crate::analytic::{ContrastCurve, SweepParameter};
use crate::TAU;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimationError {
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("fit did not converge (best rms residual {best_residual:e})")]
    NonConvergence { best_residual: f64 },
    #[error("conventional drive-phase amplitude is zero; leakage fraction undefined")]
    UndefinedLeakage,
    #[error("no sign change of the oracle in [{lo:e}, {hi:e}]")]
    NoSignChange { lo: f64, hi: f64 },
    #[error("oracle response is flat over [{lo:e}, {hi:e}]")]
    FlatResponse { lo: f64, hi: f64 },
    #[error("curve is constant; no symmetry axis")]
    FlatCurve,
}

/// Offset sweep values of `curve` converted to the node convention.
pub(crate) fn node_offsets(curve: &ContrastCurve) -> Result<Vec<f64>, EstimationError> {
    if curve.sweep_param != SweepParameter::POffset {
        return Err(EstimationError::InvalidInput(format!(
            "expected a p sweep, got {:?}",
            curve.sweep_param
        )));
    }
    let shift = curve.sequence.node_offset() - curve.sequence.p_offset;
    Ok(curve.samples.iter().map(|s| s.0 + shift).collect())
}

/// Checks the common preconditions of a periodic `p` sweep: enough finite
/// samples, increasing offsets, and coverage of a full period.
pub(crate) fn check_period_sweep(curve: &ContrastCurve, min_samples: usize) -> Result<(), EstimationError> {
    if curve.len() < min_samples {
        return Err(EstimationError::InsufficientData(format!(
            "need at least {min_samples} samples, got {}",
            curve.len()
        )));
    }
    if curve.samples.iter().any(|s| !(s.0.is_finite() && s.1.is_finite())) {
        return Err(EstimationError::InvalidInput("non-finite sample".into()));
    }
    let p = curve.params();
    if p.windows(2).any(|w| w[1] <= w[0]) {
        return Err(EstimationError::InvalidInput("offsets must be strictly increasing".into()));
    }
    let span = p[p.len() - 1] - p[0];
    let mean_step = span / (p.len() - 1) as f64;
    if span + mean_step < TAU * (1.0 - 1e-9) {
        return Err(EstimationError::InsufficientData(format!(
            "offsets span {span:.4} rad, less than one period"
        )));
    }
    Ok(())
}
