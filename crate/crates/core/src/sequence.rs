// Copyright 2026 The sipht-rs Authors
// SPDX-License-Identifier: Apache-2.0

//! Dynamical-decoupling pulse trains synchronized to the AC drive.
//!
//! Timing rule: every π pulse is centered at a drive phase `p + π/2 + kπ`, so
//! with `p = 0` the π pulses sit on the nodes of `cos(2π f_d t)` and with
//! `p = π/2` they sit on the antinodes. The π pulses are spaced by half a
//! drive period (`τ/2` with `τ = 1/f_d`).
//!
//! | kind  | π pulses        | first π/2 → first π | span          |
//! |-------|-----------------|---------------------|---------------|
//! | Hahn  | 1               | `τ/2`               | `τ`           |
//! | CPMG  | even `N`        | `τ/4`               | `N·τ/2`       |
//! | XY8   | multiple of 8   | `τ/4`               | `N·τ/2`       |
//!
//! Pulse axes: the opening π/2 is about x, CPMG and Hahn π pulses are about
//! y, XY8 cycles `X Y X Y Y X Y X`. The closing π/2 axis is derived from the
//! requested readout phase φ so that an idealized sequence reads out
//! `cos(φ_NV + φ)` on the z axis. With φ = π the Hahn echo is the textbook
//! `(x, y, x)` sequence; the default φ = π/2 gives `(x, y, −y)`.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fields::FieldConfig;
use crate::wrap_to_tau;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SequenceError {
    #[error("{kind:?} sequence cannot have {n_pi} π pulses ({reason})")]
    InvalidPulseCount {
        kind: SequenceKind,
        n_pi: u32,
        reason: &'static str,
    },
    #[error("Rabi strength must be finite and positive for finite pulses, got {0}")]
    InvalidRabi(f64),
    #[error("pulses {first} and {second} overlap: Rabi strength too small for the drive frequency")]
    PulsesOverlap { first: usize, second: usize },
    #[error("offset p must be finite, got {0}")]
    InvalidOffset(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceKind {
    Hahn,
    Cpmg,
    Xy8,
}

/// Reference point of the offset `p`.
///
/// `Node` is the convention under which the accumulated phase is proportional
/// to `cos p` for an in-phase field. `Antinode` shifts the whole train by a
/// quarter period so that `p = 0` puts the π pulses on the drive antinodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimingAnchor {
    #[default]
    Node,
    Antinode,
}

/// One microwave pulse. `duration == 0` marks an instantaneous rotation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseEvent {
    /// Leading edge (s).
    pub start: f64,
    /// Duration (s).
    pub duration: f64,
    /// Angular Rabi strength Ω (rad/s); zero for instantaneous pulses.
    pub rabi: f64,
    /// Target rotation angle (rad).
    pub nominal_rotation: f64,
    /// Carrier phase of this pulse, i.e. the rotation-axis azimuth (rad).
    pub phase: f64,
}

impl PulseEvent {
    pub fn center(&self) -> f64 {
        self.start + 0.5 * self.duration
    }

    pub fn end(&self) -> f64 {
        self.start + self.duration
    }

    pub fn is_instantaneous(&self) -> bool {
        self.duration == 0.0
    }

    pub fn is_pi(&self) -> bool {
        (self.nominal_rotation - PI).abs() < 1e-12
    }
}

/// Declarative description of a sequence; [`SequenceSpec::build`] lays it out
/// against a drive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SequenceSpec {
    pub kind: SequenceKind,
    #[serde(default = "one")]
    pub n_pi: u32,
    /// Offset `p` of the pulse train (rad).
    #[serde(default)]
    pub p_offset: f64,
    /// Angular Rabi strength (rad/s). `None` selects idealized pulses.
    #[serde(default)]
    pub rabi: Option<f64>,
    /// Readout phase φ realized by the closing π/2 pulse (rad).
    #[serde(default = "default_readout_phase")]
    pub readout_phase: f64,
    #[serde(default)]
    pub anchor: TimingAnchor,
}

fn one() -> u32 {
    1
}

fn default_readout_phase() -> f64 {
    FRAC_PI_2
}

impl SequenceSpec {
    pub fn hahn(p_offset: f64) -> Self {
        Self {
            kind: SequenceKind::Hahn,
            n_pi: 1,
            p_offset,
            rabi: None,
            readout_phase: FRAC_PI_2,
            anchor: TimingAnchor::Node,
        }
    }

    pub fn with_rabi(mut self, rabi: f64) -> Self {
        self.rabi = Some(rabi);
        self
    }

    pub fn idealized(mut self) -> Self {
        self.rabi = None;
        self
    }

    pub fn with_offset(mut self, p_offset: f64) -> Self {
        self.p_offset = p_offset;
        self
    }

    pub fn with_anchor(mut self, anchor: TimingAnchor) -> Self {
        self.anchor = anchor;
        self
    }

    pub fn with_readout_phase(mut self, readout_phase: f64) -> Self {
        self.readout_phase = readout_phase;
        self
    }

    pub fn build(&self, cfg: &FieldConfig) -> Result<PulseSequence, SequenceError> {
        layout(self, cfg)
    }
}

/// A laid-out pulse train.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseSequence {
    pub kind: SequenceKind,
    /// Time-ordered, non-overlapping pulses; first and last are π/2 pulses.
    pub events: Vec<PulseEvent>,
    pub n_pi: u32,
    /// Offset `p` as requested, in the convention of `anchor` (rad).
    pub p_offset: f64,
    pub anchor: TimingAnchor,
    /// DD period τ = 1/f_d (s); π pulses are `τ/2` apart.
    pub tau: f64,
    /// Time between the centers of the two π/2 pulses (s).
    pub total_time: f64,
    pub readout_phase: f64,
}

impl PulseSequence {
    /// Offset expressed in the node convention used by the closed-form phase.
    pub fn node_offset(&self) -> f64 {
        match self.anchor {
            TimingAnchor::Node => self.p_offset,
            TimingAnchor::Antinode => self.p_offset - FRAC_PI_2,
        }
    }

    /// Number of full drive periods covered, i.e. the multiplier of the
    /// single-Hahn-echo phase. A Hahn echo covers one period, CPMG-N and
    /// XY8-N cover N/2.
    pub fn hahn_equivalents(&self) -> u32 {
        match self.kind {
            SequenceKind::Hahn => 1,
            SequenceKind::Cpmg | SequenceKind::Xy8 => self.n_pi / 2,
        }
    }

    pub fn is_idealized(&self) -> bool {
        self.events.iter().all(PulseEvent::is_instantaneous)
    }

    pub fn first(&self) -> &PulseEvent {
        &self.events[0]
    }

    pub fn last(&self) -> &PulseEvent {
        &self.events[self.events.len() - 1]
    }

    pub fn pi_pulses(&self) -> impl Iterator<Item = &PulseEvent> {
        self.events[1..self.events.len() - 1].iter()
    }

    pub fn min_pulse_duration(&self) -> Option<f64> {
        self.events
            .iter()
            .filter(|e| !e.is_instantaneous())
            .map(|e| e.duration)
            .min_by(f64::total_cmp)
    }

    /// Sign (+1/−1) with which the field in each free interval contributes
    /// to the accumulated phase; one entry per gap between pulse centers.
    pub fn interval_signs(&self) -> Vec<f64> {
        (0..=self.n_pi).map(|k| if k % 2 == 0 { 1.0 } else { -1.0 }).collect()
    }

    /// Pulse-center boundaries of the free-precession intervals.
    pub fn interval_bounds(&self) -> Vec<(f64, f64)> {
        self.events.windows(2).map(|w| (w[0].center(), w[1].center())).collect()
    }
}

/// Builds a drive-synchronized DD sequence. `rabi` is ignored when
/// `idealized` is set.
pub fn build_dd_sequence(
    kind: SequenceKind,
    n_pi: u32,
    cfg: &FieldConfig,
    p: f64,
    rabi: f64,
    idealized: bool,
) -> Result<PulseSequence, SequenceError> {
    let spec = SequenceSpec {
        kind,
        n_pi,
        p_offset: p,
        rabi: if idealized { None } else { Some(rabi) },
        readout_phase: FRAC_PI_2,
        anchor: TimingAnchor::Node,
    };
    layout(&spec, cfg)
}

const XY8_CYCLE: [f64; 8] = [0.0, FRAC_PI_2, 0.0, FRAC_PI_2, FRAC_PI_2, 0.0, FRAC_PI_2, 0.0];

fn layout(spec: &SequenceSpec, cfg: &FieldConfig) -> Result<PulseSequence, SequenceError> {
    let n_pi = spec.n_pi;
    let invalid = |reason| SequenceError::InvalidPulseCount {
        kind: spec.kind,
        n_pi,
        reason,
    };
    match spec.kind {
        SequenceKind::Hahn if n_pi != 1 => return Err(invalid("a Hahn echo has exactly one")),
        SequenceKind::Cpmg if n_pi == 0 || n_pi % 2 != 0 => {
            return Err(invalid("CPMG needs an even, non-zero count"))
        }
        SequenceKind::Xy8 if n_pi == 0 || n_pi % 8 != 0 => {
            return Err(invalid("XY8 needs a non-zero multiple of 8"))
        }
        _ => {}
    }
    if !spec.p_offset.is_finite() {
        return Err(SequenceError::InvalidOffset(spec.p_offset));
    }
    if let Some(rabi) = spec.rabi {
        if !(rabi.is_finite() && rabi > 0.0) {
            return Err(SequenceError::InvalidRabi(rabi));
        }
    }

    let omega = cfg.omega_d();
    let period = cfg.period();
    let p_node = match spec.anchor {
        TimingAnchor::Node => spec.p_offset,
        TimingAnchor::Antinode => spec.p_offset - FRAC_PI_2,
    };
    // drive phase of the opening π/2 center, relative to the first π center
    let lead = match spec.kind {
        SequenceKind::Hahn => PI,
        SequenceKind::Cpmg | SequenceKind::Xy8 => FRAC_PI_2,
    };
    let first_pi_phase = p_node + FRAC_PI_2;
    let t0 = wrap_to_tau(first_pi_phase - lead) / omega;
    let lead_time = lead / omega;

    let mut centers = Vec::with_capacity(n_pi as usize + 2);
    centers.push(t0);
    for k in 0..n_pi {
        centers.push(t0 + lead_time + k as f64 * 0.5 * period);
    }
    let last_pi = centers[centers.len() - 1];
    centers.push(last_pi + lead_time);
    let total_time = centers[centers.len() - 1] - t0;

    let mut phases = Vec::with_capacity(centers.len());
    phases.push(0.0);
    for k in 0..n_pi as usize {
        phases.push(match spec.kind {
            SequenceKind::Xy8 => XY8_CYCLE[k % 8],
            _ => FRAC_PI_2,
        });
    }
    phases.push(closing_phase(&phases, n_pi, spec.readout_phase));

    let rotations = centers.iter().enumerate().map(|(i, _)| {
        if i == 0 || i == centers.len() - 1 {
            FRAC_PI_2
        } else {
            PI
        }
    });

    let events: Vec<PulseEvent> = centers
        .iter()
        .zip(phases.iter())
        .zip(rotations)
        .map(|((&center, &phase), rotation)| {
            let (duration, rabi) = match spec.rabi {
                Some(rabi) => (rotation / rabi, rabi),
                None => (0.0, 0.0),
            };
            PulseEvent {
                start: center - 0.5 * duration,
                duration,
                rabi,
                nominal_rotation: rotation,
                phase,
            }
        })
        .collect();

    for (i, pair) in events.windows(2).enumerate() {
        if pair[0].end() > pair[1].start {
            return Err(SequenceError::PulsesOverlap { first: i, second: i + 1 });
        }
    }

    Ok(PulseSequence {
        kind: spec.kind,
        events,
        n_pi,
        p_offset: spec.p_offset,
        anchor: spec.anchor,
        tau: period,
        total_time,
        readout_phase: spec.readout_phase,
    })
}

/// Axis of the closing π/2 pulse that maps an accumulated phase φ to
/// `z = cos(φ + readout_phase)` for ideal rotations.
///
/// The opening π/2 about azimuth β₁ leaves the spin at azimuth `β₁ − π/2`;
/// each π pulse about β reflects the azimuth to `2β − α`. A π/2 about β_f
/// then yields `z = sin(α − β_f)`.
fn closing_phase(phases: &[f64], n_pi: u32, readout_phase: f64) -> f64 {
    let mut azimuth = phases[0] - FRAC_PI_2;
    for &beta in &phases[1..] {
        azimuth = 2.0 * beta - azimuth;
    }
    let beta = if n_pi % 2 == 0 {
        azimuth - readout_phase - FRAC_PI_2
    } else {
        azimuth + readout_phase - FRAC_PI_2
    };
    wrap_to_tau(beta)
}

/// Reference azimuth of the spin after the opening pulse and after each π
/// pulse, for a field-free idealized run.
pub(crate) fn reference_azimuths(seq: &PulseSequence) -> Vec<f64> {
    let mut out = Vec::with_capacity(seq.events.len() - 1);
    let mut azimuth = seq.first().phase - FRAC_PI_2;
    out.push(azimuth);
    for e in seq.pi_pulses() {
        azimuth = 2.0 * e.phase - azimuth;
        out.push(azimuth);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::TAU;
    use proptest::prelude::*;

    fn cfg() -> FieldConfig {
        FieldConfig::new(100e-6, 0.0, 152e3, 0.0).unwrap()
    }

    #[test]
    fn idealized_hahn_timing() {
        let c = cfg();
        let seq = build_dd_sequence(SequenceKind::Hahn, 1, &c, FRAC_PI_2, 0.0, true).unwrap();
        // p = π/2: opening pulse at drive phase 0
        let centers: Vec<f64> = seq.events.iter().map(PulseEvent::center).collect();
        let t = c.period();
        assert!(centers[0].abs() < 1e-18);
        assert!((centers[1] - 0.5 * t).abs() < 1e-15);
        assert!((centers[2] - t).abs() < 1e-15);
        let rot: Vec<f64> = seq.events.iter().map(|e| e.nominal_rotation).collect();
        assert_eq!(rot, vec![FRAC_PI_2, PI, FRAC_PI_2]);
        assert!(seq.is_idealized());
        assert!((seq.total_time - t).abs() < 1e-15);
        assert_eq!(seq.tau, t);
    }

    #[test]
    fn finite_pi_duration() {
        let seq = build_dd_sequence(SequenceKind::Hahn, 1, &cfg(), 0.0, TAU * 9.6e6, false).unwrap();
        let pi = &seq.events[1];
        assert!((pi.duration - 52.08e-9).abs() < 0.01e-9);
        assert!((seq.events[0].duration - 0.5 * pi.duration).abs() < 1e-18);
    }

    #[test]
    fn cpmg2_spacing() {
        let c = cfg();
        let seq = build_dd_sequence(SequenceKind::Cpmg, 2, &c, 0.0, 0.0, true).unwrap();
        let t0 = seq.first().center();
        let rel: Vec<f64> = seq.events.iter().map(|e| (e.center() - t0) * c.f_d).collect();
        for (got, want) in rel.iter().zip([0.0, 0.25, 0.75, 1.0]) {
            assert!((got - want).abs() < 1e-12, "{rel:?}");
        }
        assert_eq!(seq.hahn_equivalents(), 1);
    }

    #[test]
    fn p_zero_puts_pi_pulses_on_nodes() {
        let c = cfg();
        for kind in [SequenceKind::Hahn, SequenceKind::Cpmg, SequenceKind::Xy8] {
            let n = match kind {
                SequenceKind::Hahn => 1,
                SequenceKind::Cpmg => 4,
                SequenceKind::Xy8 => 8,
            };
            let seq = build_dd_sequence(kind, n, &c, 0.0, 0.0, true).unwrap();
            for e in seq.pi_pulses() {
                assert!((c.omega_d() * e.center()).cos().abs() < 1e-9);
            }
        }
    }

    #[test]
    fn antinode_anchor_shifts_quarter_period() {
        let c = cfg();
        let node = SequenceSpec::hahn(0.3).build(&c).unwrap();
        let anti = SequenceSpec {
            anchor: TimingAnchor::Antinode,
            ..SequenceSpec::hahn(0.3 + FRAC_PI_2)
        }
        .build(&c)
        .unwrap();
        assert!((node.first().center() - anti.first().center()).abs() < 1e-15);
        assert!((anti.node_offset() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_counts_and_overlap() {
        let c = cfg();
        assert!(build_dd_sequence(SequenceKind::Hahn, 2, &c, 0.0, 0.0, true).is_err());
        assert!(build_dd_sequence(SequenceKind::Cpmg, 3, &c, 0.0, 0.0, true).is_err());
        assert!(build_dd_sequence(SequenceKind::Xy8, 4, &c, 0.0, 0.0, true).is_err());
        assert!(build_dd_sequence(SequenceKind::Cpmg, 0, &c, 0.0, 0.0, true).is_err());
        // 5 µs π pulses cannot fit in a 3.3 µs half period
        let err = build_dd_sequence(SequenceKind::Hahn, 1, &c, 0.0, PI / 5e-6, false).unwrap_err();
        assert!(matches!(err, SequenceError::PulsesOverlap { .. }));
        assert!(build_dd_sequence(SequenceKind::Hahn, 1, &c, 0.0, -1.0, false).is_err());
    }

    #[test]
    fn default_hahn_axes() {
        let seq = SequenceSpec::hahn(0.0).with_readout_phase(PI).build(&cfg()).unwrap();
        let phases: Vec<f64> = seq.events.iter().map(|e| e.phase).collect();
        assert_eq!(phases[0], 0.0);
        assert_eq!(phases[1], FRAC_PI_2);
        assert!(phases[2].abs() < 1e-12 || (phases[2] - TAU).abs() < 1e-12);
    }

    #[test]
    fn xy8_phase_cycle() {
        let seq = build_dd_sequence(SequenceKind::Xy8, 16, &cfg(), 0.0, 0.0, true).unwrap();
        let phases: Vec<f64> = seq.pi_pulses().map(|e| e.phase).collect();
        assert_eq!(&phases[..8], &XY8_CYCLE);
        assert_eq!(&phases[8..], &XY8_CYCLE);
        assert_eq!(seq.hahn_equivalents(), 8);
    }

    proptest! {
        #[test]
        fn finite_and_idealized_share_centers(
            p in -10.0f64..10.0,
            rabi_mhz in 2.0f64..50.0,
            kind_idx in 0usize..3,
        ) {
            let c = cfg();
            let (kind, n) = [(SequenceKind::Hahn, 1), (SequenceKind::Cpmg, 4), (SequenceKind::Xy8, 8)][kind_idx];
            let ideal = build_dd_sequence(kind, n, &c, p, 0.0, true).unwrap();
            let finite = build_dd_sequence(kind, n, &c, p, TAU * rabi_mhz * 1e6, false).unwrap();
            for (a, b) in ideal.events.iter().zip(&finite.events) {
                prop_assert!((a.center() - b.center()).abs() < 1e-15);
                prop_assert_eq!(a.phase, b.phase);
            }
            for w in finite.events.windows(2) {
                prop_assert!(w[0].end() <= w[1].start);
            }
        }

        #[test]
        fn offset_is_two_pi_periodic(p in -10.0f64..10.0) {
            let c = cfg();
            let a = SequenceSpec::hahn(p).build(&c).unwrap();
            let b = SequenceSpec::hahn(p + TAU).build(&c).unwrap();
            for (x, y) in a.events.iter().zip(&b.events) {
                let cycles = (x.center() - y.center()) / c.period();
                prop_assert!((cycles - cycles.round()).abs() < 1e-9);
            }
        }
    }
}
