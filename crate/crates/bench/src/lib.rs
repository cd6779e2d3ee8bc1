// Copyright 2026 The sipht-rs Authors
// SPDX-License-Identifier: Apache-2.0

//! Fixtures shared by the benchmarks.

use std::f64::consts::TAU;

use sipht_core::analytic::{magnetometry_curve, CurveMode, SweepSpec};
use sipht_core::{ContrastCurve, FieldConfig, ModulationConfig, ReadoutModel, SequenceSpec};

/// Fields of the reference Hahn-echo p sweep.
pub fn fig2_fields() -> FieldConfig {
    FieldConfig::new(100e-6, 4e-6, 152e3, 0.065 * TAU).expect("valid fields")
}

/// Noisy analytic SIPHT p sweep with `count` samples.
pub fn noisy_sipht_curve(count: usize) -> ContrastCurve {
    let cfg = fig2_fields();
    magnetometry_curve(
        &SweepSpec::full_period_p(count),
        &cfg,
        &ModulationConfig::sipht(&cfg),
        &ReadoutModel::default(),
        &SequenceSpec::hahn(0.0),
        CurveMode::Analytic,
        None,
    )
    .and_then(|c| c.with_noise(0.01, 1))
    .expect("valid curve")
}
