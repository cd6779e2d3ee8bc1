// Copyright 2026 The sipht-rs Authors
// SPDX-License-Identifier: Apache-2.0

//! Closed-form phase accumulation, contrast readout and magnetometry curves.
//!
//! For a drive-synchronized sequence covering `N` drive periods the
//! accumulated phase is
//!
//! ```text
//! φ_NV = (2γN / (π f_d)) · [(b_d − b_d′) cos p + b_s cos(p − δ) − b_s′ cos(p − δ′)]
//! ```
//!
//! and the optical contrast is `C = C0 + C*·cos(φ_NV + φ)`.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fields::{FieldConfig, ModulationConfig};
use crate::propagator::{contrast_from_trajectory, propagate, PropagationError, PropagatorOptions};
use crate::sequence::{PulseSequence, SequenceError, SequenceKind, SequenceSpec};
use crate::{GAMMA_NV, TAU};

#[derive(Debug, Error)]
pub enum CurveError {
    #[error("invalid sweep: {0}")]
    InvalidSweep(String),
    #[error("{0:?} sweeps do not produce a contrast curve")]
    UnsupportedParameter(SweepParameter),
    #[error(transparent)]
    Sequence(#[from] SequenceError),
    #[error(transparent)]
    Propagation(#[from] PropagationError),
    #[error("noise standard deviation must be finite and non-negative, got {0}")]
    InvalidNoise(f64),
}

/// Maps accumulated phase to optical contrast.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReadoutModel {
    /// Background contrast C0.
    #[serde(default)]
    pub c0: f64,
    /// Spin-dependent amplitude C* (non-negative).
    #[serde(default = "unit")]
    pub c_star: f64,
    /// Phase difference φ between the two π/2 pulses (rad).
    #[serde(default = "quarter_turn")]
    pub varphi: f64,
}

fn unit() -> f64 {
    1.0
}

fn quarter_turn() -> f64 {
    FRAC_PI_2
}

impl Default for ReadoutModel {
    fn default() -> Self {
        Self {
            c0: 0.0,
            c_star: 1.0,
            varphi: FRAC_PI_2,
        }
    }
}

impl ReadoutModel {
    pub fn new(c0: f64, c_star: f64, varphi: f64) -> Self {
        Self { c0, c_star, varphi }
    }
}

pub fn contrast_from_phase(phi: f64, readout: &ReadoutModel) -> f64 {
    readout.c0 + readout.c_star * (phi + readout.varphi).cos()
}

/// Phase per tesla of in-phase field, `2γN/(π f_d)` (rad/T).
pub fn phase_per_tesla(f_d: f64, n_pi: u32) -> f64 {
    2.0 * GAMMA_NV * n_pi as f64 / (PI * f_d)
}

/// Closed-form accumulated phase for `n_pi` Hahn-equivalent periods at
/// offset `p` (node convention).
pub fn phi_nv_analytic(cfg: &FieldConfig, modulation: &ModulationConfig, n_pi: u32, p: f64) -> f64 {
    phase_per_tesla(cfg.f_d, n_pi)
        * ((cfg.b_d - modulation.b_d_mod) * p.cos() + cfg.b_s * (p - cfg.delta).cos()
            - modulation.b_s_mod * (p - modulation.delta_mod).cos())
}

/// Accumulated phase of an idealized run of `seq`, integrating the
/// modulated-frame detuning exactly over each free interval with its sign.
///
/// Independent of the drive-synchronized layout; agrees with
/// [`phi_nv_analytic`] for Hahn, CPMG and XY8 trains.
pub fn phi_nv_for_sequence(seq: &PulseSequence, cfg: &FieldConfig, modulation: &ModulationConfig) -> f64 {
    let w = cfg.omega_d();
    let components = [
        (cfg.b_d - modulation.b_d_mod, 0.0),
        (cfg.b_s, cfg.delta),
        (-modulation.b_s_mod, modulation.delta_mod),
    ];
    seq.interval_bounds()
        .iter()
        .zip(seq.interval_signs())
        .map(|(&(a, b), sign)| {
            let integral: f64 = components
                .iter()
                .map(|&(amp, phase)| amp * ((w * b - phase).sin() - (w * a - phase).sin()))
                .sum();
            sign * GAMMA_NV * integral / w
        })
        .sum()
}

/// Secondary-modulation amplitude that advances the phase by one full turn:
/// the period of a `b_s′` magnetometry curve at `p = δ′` (T).
pub fn magnetometry_period(f_d: f64, n_pi: u32) -> f64 {
    TAU / phase_per_tesla(f_d, n_pi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    /// Pulse-train offset p (rad).
    POffset,
    /// Secondary modulation amplitude b_s′ (T).
    BsMod,
    /// Normalized drive γb_d/Ω.
    BdOverOmega,
    /// Sample distance (m).
    Distance,
}

/// Alias kept for readability at call sites dealing with curves.
pub type SweepParam = SweepParameter;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub parameter: SweepParameter,
    pub start: f64,
    pub stop: f64,
    pub count: usize,
    /// Include `stop` as the last sample. Periodic sweeps leave it out.
    #[serde(default = "endpoint_default")]
    pub endpoint: bool,
}

fn endpoint_default() -> bool {
    true
}

impl SweepSpec {
    pub fn new(parameter: SweepParameter, start: f64, stop: f64, count: usize) -> Self {
        Self {
            parameter,
            start,
            stop,
            count,
            endpoint: true,
        }
    }

    /// `count` offsets uniformly covering `[0, 2π)`.
    pub fn full_period_p(count: usize) -> Self {
        Self {
            parameter: SweepParameter::POffset,
            start: 0.0,
            stop: TAU,
            count,
            endpoint: false,
        }
    }

    pub fn validate(&self) -> Result<(), CurveError> {
        if self.count < 2 {
            return Err(CurveError::InvalidSweep(format!("count must be at least 2, got {}", self.count)));
        }
        if !(self.start.is_finite() && self.stop.is_finite() && self.start < self.stop) {
            return Err(CurveError::InvalidSweep(format!(
                "need finite start < stop, got [{}, {}]",
                self.start, self.stop
            )));
        }
        Ok(())
    }

    pub fn values(&self) -> Vec<f64> {
        let intervals = if self.endpoint { self.count - 1 } else { self.count };
        let step = (self.stop - self.start) / intervals as f64;
        (0..self.count).map(|i| self.start + step * i as f64).collect()
    }
}

/// How a curve is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveMode {
    #[default]
    Analytic,
    /// Propagator with instantaneous pulses.
    NumericIdeal,
    /// Propagator with finite pulses at the sequence Rabi strength.
    NumericFinite,
}

/// Contrast sampled against a swept parameter, with the configurations that
/// generated it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastCurve {
    pub sweep_param: SweepParameter,
    /// `(parameter, contrast)` pairs sorted by parameter.
    pub samples: Vec<(f64, f64)>,
    pub cfg: FieldConfig,
    pub modulation: ModulationConfig,
    pub readout: ReadoutModel,
    pub sequence: SequenceSpec,
}

impl ContrastCurve {
    pub fn params(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.0).collect()
    }

    pub fn contrasts(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.1).collect()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Copy with additive Gaussian noise on every contrast sample.
    pub fn with_noise(&self, sigma: f64, seed: u64) -> Result<Self, CurveError> {
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(CurveError::InvalidNoise(sigma));
        }
        let normal = Normal::new(0.0, sigma).map_err(|_| CurveError::InvalidNoise(sigma))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = self.clone();
        for s in &mut out.samples {
            s.1 += normal.sample(&mut rng);
        }
        Ok(out)
    }
}

impl SequenceSpec {
    /// Number of drive periods the laid-out train covers.
    pub fn hahn_equivalents(&self) -> u32 {
        match self.kind {
            SequenceKind::Hahn => 1,
            SequenceKind::Cpmg | SequenceKind::Xy8 => self.n_pi / 2,
        }
    }

    pub fn node_offset(&self) -> f64 {
        match self.anchor {
            crate::sequence::TimingAnchor::Node => self.p_offset,
            crate::sequence::TimingAnchor::Antinode => self.p_offset - FRAC_PI_2,
        }
    }
}

/// Evaluates contrast over a `p` or `b_s′` sweep.
///
/// `sequence.readout_phase` is overridden by `readout.varphi` so both
/// readout paths agree. `opts` defaults to [`PropagatorOptions::for_sequence`].
pub fn magnetometry_curve(
    sweep: &SweepSpec,
    cfg: &FieldConfig,
    modulation: &ModulationConfig,
    readout: &ReadoutModel,
    sequence: &SequenceSpec,
    mode: CurveMode,
    opts: Option<&PropagatorOptions>,
) -> Result<ContrastCurve, CurveError> {
    sweep.validate()?;
    if !matches!(sweep.parameter, SweepParameter::POffset | SweepParameter::BsMod) {
        return Err(CurveError::UnsupportedParameter(sweep.parameter));
    }
    let mut base = *sequence;
    base.readout_phase = readout.varphi;
    match mode {
        CurveMode::Analytic | CurveMode::NumericIdeal => base.rabi = None,
        CurveMode::NumericFinite => {
            if base.rabi.is_none() {
                return Err(CurveError::Sequence(SequenceError::InvalidRabi(0.0)));
            }
        }
    }
    // fail early on an invalid layout
    base.build(cfg)?;

    let point = |x: f64| -> (SequenceSpec, ModulationConfig) {
        let mut spec = base;
        let mut m = *modulation;
        match sweep.parameter {
            SweepParameter::POffset => spec.p_offset = x,
            _ => m.b_s_mod = x,
        }
        (spec, m)
    };

    let values = sweep.values();
    let contrasts: Vec<f64> = match mode {
        CurveMode::Analytic => values
            .iter()
            .map(|&x| {
                let (spec, m) = point(x);
                let phi = phi_nv_analytic(cfg, &m, spec.hahn_equivalents(), spec.node_offset());
                contrast_from_phase(phi, readout)
            })
            .collect(),
        CurveMode::NumericIdeal | CurveMode::NumericFinite => values
            .par_iter()
            .map(|&x| -> Result<f64, CurveError> {
                let (spec, m) = point(x);
                let seq = spec.build(cfg)?;
                let o = match opts {
                    Some(o) => *o,
                    None => PropagatorOptions::for_sequence(&seq),
                };
                let traj = propagate(&seq, cfg, &m, &o)?;
                Ok(contrast_from_trajectory(&traj, readout))
            })
            .collect::<Result<_, _>>()?,
    };

    Ok(ContrastCurve {
        sweep_param: sweep.parameter,
        samples: values.into_iter().zip(contrasts).collect(),
        cfg: *cfg,
        modulation: *modulation,
        readout: *readout,
        sequence: base,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sequence::build_dd_sequence;
    use proptest::prelude::*;

    fn fig2_sipht() -> (FieldConfig, ModulationConfig) {
        let cfg = FieldConfig::new(100e-6, 4e-6, 152e3, 0.065 * TAU).unwrap();
        (cfg, ModulationConfig::sipht(&cfg))
    }

    #[test]
    fn contrast_examples() {
        let r = ReadoutModel::new(0.0, 1.0, 0.0);
        assert_eq!(contrast_from_phase(0.0, &r), 1.0);
        let r = ReadoutModel::new(0.3, 0.1, PI);
        assert!((contrast_from_phase(0.0, &r) - 0.2).abs() < 1e-15);
        let r = ReadoutModel::new(0.5, 0.01, FRAC_PI_2);
        assert!((contrast_from_phase(FRAC_PI_2, &r) - 0.49).abs() < 1e-15);
        let r = ReadoutModel::default();
        assert!((contrast_from_phase(2.95, &r) + 2.95f64.sin()).abs() < 1e-15);
        assert!((contrast_from_phase(2.95, &r) + 0.190).abs() < 1e-3);
    }

    #[test]
    fn sipht_cancels_drive() {
        let cfg = FieldConfig::new(100e-6, 0.0, 152e3, 0.0).unwrap();
        let m = ModulationConfig::sipht(&cfg);
        for i in 0..20 {
            assert_eq!(phi_nv_analytic(&cfg, &m, 1, i as f64 * 0.37), 0.0);
        }
    }

    #[test]
    fn response_only_phase_at_symmetric_point() {
        let (cfg, m) = fig2_sipht();
        let phi = phi_nv_analytic(&cfg, &m, 1, cfg.delta);
        // 2γ b_s / (π f) with γ = 2π·28 GHz/T
        let expected = 4.0 * 28e9 * 4e-6 / 152e3;
        assert!((phi - expected).abs() < 1e-12);
        assert!((phi - 2.95).abs() < 1e-2);
    }

    #[test]
    fn conventional_drive_phase() {
        let cfg = FieldConfig::new(100e-6, 0.0, 152e3, 0.0).unwrap();
        let phi = phi_nv_analytic(&cfg, &ModulationConfig::conventional(), 1, 0.0);
        assert!((phi - 4.0 * 28e9 * 100e-6 / 152e3).abs() < 1e-9);
        assert!((phi - 73.7).abs() < 0.05);
    }

    #[test]
    fn period_matches_cycle_gamma_formula() {
        // π f / (2 γ/2π) with γ/2π = 28 GHz/T
        let p = magnetometry_period(149e3, 1);
        assert!((p - PI * 149e3 / (2.0 * 28e9)).abs() < 1e-18);
    }

    #[test]
    fn sequence_integral_matches_closed_form() {
        let cfg = FieldConfig::new(80e-6, 6e-6, 160e3, 1.1).unwrap();
        let m = ModulationConfig {
            b_d_mod: 30e-6,
            b_s_mod: 2e-6,
            delta_mod: 0.4,
        };
        for (kind, n) in [(SequenceKind::Hahn, 1), (SequenceKind::Cpmg, 2), (SequenceKind::Cpmg, 6), (SequenceKind::Xy8, 16)] {
            for i in 0..12 {
                let p = -3.0 + i as f64 * 0.61;
                let seq = build_dd_sequence(kind, n, &cfg, p, 0.0, true).unwrap();
                let direct = phi_nv_for_sequence(&seq, &cfg, &m);
                let closed = phi_nv_analytic(&cfg, &m, seq.hahn_equivalents(), p);
                assert!((direct - closed).abs() < 1e-9 * (1.0 + closed.abs()), "{kind:?} {n} {p}: {direct} vs {closed}");
            }
        }
    }

    #[test]
    fn p_sweep_with_full_sipht_is_flat() {
        let cfg = FieldConfig::new(100e-6, 0.0, 152e3, 0.0).unwrap();
        let m = ModulationConfig::sipht(&cfg);
        let r = ReadoutModel::new(0.2, 0.05, 0.7);
        let curve = magnetometry_curve(&SweepSpec::full_period_p(36), &cfg, &m, &r, &SequenceSpec::hahn(0.0), CurveMode::Analytic, None).unwrap();
        for c in curve.contrasts() {
            assert!((c - (0.2 + 0.05 * 0.7f64.cos())).abs() < 1e-15);
        }
    }

    #[test]
    fn bs_mod_sweep_is_linear_phase() {
        let cfg = FieldConfig::new(97e-6, 0.0, 149e3, FRAC_PI_2).unwrap();
        let m = ModulationConfig::sipht(&cfg).with_secondary(0.0, FRAC_PI_2);
        let r = ReadoutModel::default();
        let period = magnetometry_period(cfg.f_d, 1);
        let sweep = SweepSpec::new(SweepParameter::BsMod, 0.0, period, 25);
        let curve = magnetometry_curve(&sweep, &cfg, &m, &r, &SequenceSpec::hahn(FRAC_PI_2), CurveMode::Analytic, None).unwrap();
        let rate = phase_per_tesla(cfg.f_d, 1);
        for &(b, c) in &curve.samples {
            // φ = −rate·b, contrast = cos(−rate·b + π/2) = sin(rate·b)
            assert!((c - (rate * b).sin()).abs() < 1e-12);
        }
        assert!((curve.samples[24].1 - curve.samples[0].1).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_sweeps() {
        let (cfg, m) = fig2_sipht();
        let r = ReadoutModel::default();
        let seq = SequenceSpec::hahn(0.0);
        let bad = SweepSpec::new(SweepParameter::POffset, 1.0, 0.0, 10);
        assert!(magnetometry_curve(&bad, &cfg, &m, &r, &seq, CurveMode::Analytic, None).is_err());
        let bad = SweepSpec::new(SweepParameter::Distance, 0.0, 1.0, 10);
        assert!(magnetometry_curve(&bad, &cfg, &m, &r, &seq, CurveMode::Analytic, None).is_err());
        let one = SweepSpec::new(SweepParameter::POffset, 0.0, 1.0, 1);
        assert!(magnetometry_curve(&one, &cfg, &m, &r, &seq, CurveMode::Analytic, None).is_err());
        assert!(magnetometry_curve(&SweepSpec::full_period_p(8), &cfg, &m, &r, &seq, CurveMode::NumericFinite, None).is_err());
    }

    #[test]
    fn noise_is_seeded() {
        let (cfg, m) = fig2_sipht();
        let curve = magnetometry_curve(&SweepSpec::full_period_p(16), &cfg, &m, &ReadoutModel::default(), &SequenceSpec::hahn(0.0), CurveMode::Analytic, None).unwrap();
        assert_eq!(curve.with_noise(0.01, 7).unwrap(), curve.with_noise(0.01, 7).unwrap());
        assert_ne!(curve.with_noise(0.01, 7).unwrap(), curve.with_noise(0.01, 8).unwrap());
        assert!(curve.with_noise(-1.0, 7).is_err());
    }

    proptest! {
        #[test]
        fn linear_in_amplitudes_and_count(
            bd in 0.0f64..300e-6, bdm in 0.0f64..300e-6, bs in 0.0f64..20e-6,
            bsm in 0.0f64..20e-6, delta in 0.0f64..TAU, dm in 0.0f64..TAU, p in 0.0f64..TAU,
            n in 1u32..8,
        ) {
            let cfg = FieldConfig::new(bd, bs, 152e3, delta).unwrap();
            let m = ModulationConfig { b_d_mod: bdm, b_s_mod: bsm, delta_mod: dm };
            let one = phi_nv_analytic(&cfg, &m, n, p);
            let two = phi_nv_analytic(&cfg, &m, 2 * n, p);
            prop_assert_eq!(two, 2.0 * one);
            let half_period = phi_nv_analytic(&cfg, &m, n, p + PI);
            prop_assert!((one + half_period).abs() <= 1e-12 * (1.0 + one.abs()));
            let scaled = FieldConfig { b_s: 2.0 * bs, ..cfg };
            let diff = phi_nv_analytic(&scaled, &m, n, p) - one;
            let alone = phi_nv_analytic(&FieldConfig { b_d: 0.0, ..cfg }, &ModulationConfig::default(), n, p)
                - phi_nv_analytic(&FieldConfig { b_d: 0.0, b_s: 0.0, ..cfg }, &ModulationConfig::default(), n, p);
            prop_assert!((diff - alone).abs() <= 1e-9 * (1.0 + diff.abs()));
        }

        #[test]
        fn half_period_contrast_symmetry(
            bs in 0.0f64..20e-6, delta in 0.0f64..TAU, p in 0.0f64..TAU, c0 in -1.0f64..1.0,
        ) {
            let cfg = FieldConfig::new(100e-6, bs, 152e3, delta).unwrap();
            let m = ModulationConfig::sipht(&cfg);
            let r = ReadoutModel::new(c0, 0.3, FRAC_PI_2);
            let a = contrast_from_phase(phi_nv_analytic(&cfg, &m, 1, p), &r);
            let b = contrast_from_phase(phi_nv_analytic(&cfg, &m, 1, p + PI), &r);
            prop_assert!((a + b - 2.0 * c0).abs() < 1e-9);
        }

        #[test]
        fn sipht_curve_symmetric_about_delta(
            bs in 0.0f64..20e-6, delta in 0.0f64..TAU, x in 0.0f64..PI, varphi in 0.0f64..TAU,
        ) {
            let cfg = FieldConfig::new(100e-6, bs, 152e3, delta).unwrap();
            let m = ModulationConfig::sipht(&cfg);
            let r = ReadoutModel::new(0.0, 1.0, varphi);
            for axis in [delta, delta + PI] {
                let a = contrast_from_phase(phi_nv_analytic(&cfg, &m, 1, axis + x), &r);
                let b = contrast_from_phase(phi_nv_analytic(&cfg, &m, 1, axis - x), &r);
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
