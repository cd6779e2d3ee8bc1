// Copyright 2026 The sipht-rs Authors
// SPDX-License-Identifier: Apache-2.0

//! Bloch-vector propagation of the effective two-level NV spin.
//!
//! The spin obeys `ds/dt = ω(t) × s` with
//! `ω = (Ω cos a, Ω sin a, Δ(t))` during a pulse and `ω = (0, 0, Δ(t))`
//! between pulses. Two frames are supported:
//!
//! - [`Frame::RfMod`] co-rotates with the phase-modulated carrier. The detuning
//!   is `γB(t) − dθ/dt` and each pulse axis is its nominal phase.
//! - [`Frame::Rf0`] co-rotates with the unmodulated carrier. The detuning is
//!   `γB(t)` and the pulse axis follows `phase + θ(t)`.
//!
//! Integration uses the fourth-order Magnus expansion with two Gauss nodes;
//! each step is an exact rotation, so the Bloch-vector norm is preserved up to
//! rounding. Step size is controlled by step doubling.
//!
//! The accumulated phase φ_NV is tracked continuously: azimuth increments are
//! unwrapped step by step during free precession, and each π pulse negates
//! the running phase (a π rotation about an equatorial axis reflects the
//! azimuth). The reported value is signed so that for ideal pulses it equals
//! `Σ_k (−1)^k γ∫_k B dt` over the free intervals.

use std::io::Write;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytic::{contrast_from_phase, ReadoutModel};
use crate::fields::{self, FieldConfig, ModulationConfig};
use crate::sequence::{reference_azimuths, PulseEvent, PulseSequence};
use crate::{wrap_to_pi, GAMMA_NV, ZERO_FIELD_SPLITTING};

#[derive(Debug, Error)]
pub enum PropagationError {
    #[error("invalid propagator options: {0}")]
    InvalidOptions(String),
    #[error("step size underflow at t = {t:e} s (step {step:e} s) while meeting tolerance")]
    StepSizeUnderflow { t: f64, step: f64 },
    #[error("step budget of {0} exceeded")]
    StepBudgetExceeded(usize),
    #[error("carrier frequency must be positive without the rotating-wave approximation, got {0} rad/s")]
    InvalidCarrier(f64),
    #[error(transparent)]
    Field(#[from] fields::FieldError),
    #[error("trajectory export failed: {0}")]
    Export(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    /// Frame of the unmodulated carrier.
    Rf0,
    /// Frame of the phase-modulated carrier.
    #[default]
    RfMod,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropagatorOptions {
    #[serde(default)]
    pub frame: Frame,
    /// Largest integration step (s).
    pub max_step: f64,
    /// Global error target on the Bloch vector.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    /// Drop counter-rotating carrier terms.
    #[serde(default = "yes")]
    pub rwa: bool,
    /// Simulate the closing π/2 pulse. When false the run stops right before it.
    #[serde(default = "yes")]
    pub readout_pulse: bool,
    /// Record every accepted step rather than only pulse boundaries.
    #[serde(default)]
    pub record_steps: bool,
    #[serde(default = "default_step_budget")]
    pub max_steps: usize,
}

fn default_tolerance() -> f64 {
    1e-10
}

fn default_step_budget() -> usize {
    50_000_000
}

fn yes() -> bool {
    true
}

impl PropagatorOptions {
    /// Options satisfying the step-size invariants for `seq`: at most 1/20 of
    /// a drive period and 1/20 of the shortest finite pulse.
    pub fn for_sequence(seq: &PulseSequence) -> Self {
        let mut max_step = seq.tau / 20.0;
        if let Some(d) = seq.min_pulse_duration() {
            max_step = max_step.min(d / 20.0);
        }
        Self {
            frame: Frame::RfMod,
            max_step,
            tolerance: default_tolerance(),
            rwa: true,
            readout_pulse: true,
            record_steps: false,
            max_steps: default_step_budget(),
        }
    }

    pub fn with_frame(mut self, frame: Frame) -> Self {
        self.frame = frame;
        self
    }

    pub fn with_max_step(mut self, max_step: f64) -> Self {
        self.max_step = max_step;
        self
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn validate(&self, seq: &PulseSequence) -> Result<(), PropagationError> {
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return Err(PropagationError::InvalidOptions(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if !(self.max_step.is_finite() && self.max_step > 0.0) {
            return Err(PropagationError::InvalidOptions(format!(
                "max_step must be positive, got {}",
                self.max_step
            )));
        }
        let slack = 1.0 + 1e-12;
        if self.max_step > seq.tau / 20.0 * slack {
            return Err(PropagationError::InvalidOptions(format!(
                "max_step {:e} s exceeds 1/20 of the drive period",
                self.max_step
            )));
        }
        if let Some(d) = seq.min_pulse_duration() {
            if self.max_step > d / 20.0 * slack {
                return Err(PropagationError::InvalidOptions(format!(
                    "max_step {:e} s exceeds 1/20 of the shortest pulse",
                    self.max_step
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpinState {
    pub bloch: Vector3<f64>,
}

impl SpinState {
    /// The m_s = 0 pole.
    pub fn ground() -> Self {
        Self { bloch: Vector3::z() }
    }

    pub fn norm(&self) -> f64 {
        self.bloch.norm()
    }
}

#[derive(Debug, Clone)]
pub struct SpinTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<SpinState>,
    /// Accumulated phase at readout (rad), unwrapped.
    pub phi_nv: f64,
    /// Bloch vector right before the closing π/2 pulse.
    pub pre_readout: SpinState,
    /// Bloch vector at the end of the run.
    pub final_state: SpinState,
    /// Whether the closing π/2 pulse was simulated.
    pub readout_applied: bool,
    /// Readout phase the sequence was built for.
    pub readout_phase: f64,
    /// Accepted integration steps.
    pub steps: usize,
    /// Largest deviation of |s| from one seen at recorded points.
    pub max_norm_error: f64,
}

impl SpinTrajectory {
    /// Writes `t,bx,by,bz` rows.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), PropagationError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t", "bx", "by", "bz"])?;
        for (t, s) in self.times.iter().zip(&self.states) {
            w.write_record([
                t.to_string(),
                s.bloch.x.to_string(),
                s.bloch.y.to_string(),
                s.bloch.z.to_string(),
            ])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// Rotating-frame Hamiltonian `H = ½(Ω_x σ_x + Ω_y σ_y + Δ σ_z)` coefficients,
/// all in rad/s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HamiltonianCoefficients {
    pub detuning: f64,
    pub drive_x: f64,
    pub drive_y: f64,
}

/// Hamiltonian in the modulated frame (RWA). `pulse` selects the transverse
/// drive; pass `None` between pulses.
pub fn hamiltonian_rfmod(
    t: f64,
    cfg: &FieldConfig,
    modulation: &ModulationConfig,
    pulse: Option<&PulseEvent>,
) -> HamiltonianCoefficients {
    let detuning = fields::modulated_detuning(t, cfg, modulation);
    let (drive_x, drive_y) = match pulse {
        Some(p) if !p.is_instantaneous() => (p.rabi * p.phase.cos(), p.rabi * p.phase.sin()),
        _ => (0.0, 0.0),
    };
    HamiltonianCoefficients {
        detuning,
        drive_x,
        drive_y,
    }
}

struct Dynamics<'a> {
    cfg: &'a FieldConfig,
    modulation: &'a ModulationConfig,
    frame: Frame,
    rwa: bool,
    carrier: f64,
}

impl Dynamics<'_> {
    /// Carrier modulation phase θ(t).
    fn theta(&self, t: f64) -> f64 {
        fields::mw_phase_modulation(t, self.cfg, self.modulation)
    }

    /// Angle by which the simulation frame leads RF0.
    fn frame_angle(&self, t: f64) -> f64 {
        match self.frame {
            Frame::Rf0 => 0.0,
            Frame::RfMod => self.theta(t),
        }
    }

    /// Azimuth in RFmod coordinates of a Bloch vector given in the simulation frame.
    fn modulated_azimuth(&self, s: &Vector3<f64>, t: f64) -> f64 {
        let raw = s.y.atan2(s.x);
        match self.frame {
            Frame::Rf0 => raw - self.theta(t),
            Frame::RfMod => raw,
        }
    }

    fn rate(&self, t: f64, pulse: Option<&PulseEvent>) -> Vector3<f64> {
        let dz = match self.frame {
            Frame::Rf0 => GAMMA_NV * fields::total_ac_field(t, self.cfg),
            Frame::RfMod => fields::modulated_detuning(t, self.cfg, self.modulation),
        };
        let Some(p) = pulse else {
            return Vector3::new(0.0, 0.0, dz);
        };
        let theta = match (self.frame, self.rwa) {
            (Frame::RfMod, true) => 0.0,
            _ => self.theta(t),
        };
        let frame_angle = match self.frame {
            Frame::Rf0 => 0.0,
            Frame::RfMod => theta,
        };
        let co = p.phase + theta - frame_angle;
        let mut w = Vector3::new(p.rabi * co.cos(), p.rabi * co.sin(), dz);
        if !self.rwa {
            let counter = -(2.0 * self.carrier * t + p.phase + theta) - frame_angle;
            w.x += p.rabi * counter.cos();
            w.y += p.rabi * counter.sin();
        }
        w
    }

    fn rate_bound(&self, seq: &PulseSequence) -> f64 {
        let m = self.modulation;
        let c = self.cfg;
        let dz = match self.frame {
            Frame::Rf0 => GAMMA_NV * (c.b_d + c.b_s),
            Frame::RfMod => GAMMA_NV * ((c.b_d - m.b_d_mod).abs() + c.b_s + m.b_s_mod),
        };
        let rabi = seq.events.iter().map(|e| e.rabi).fold(0.0, f64::max);
        let transverse = if self.rwa { rabi } else { 2.0 * rabi };
        dz + transverse
    }
}

/// Rotates `s` by the angle |θ| about θ̂.
fn rotate(s: &Vector3<f64>, theta: &Vector3<f64>) -> Vector3<f64> {
    let angle = theta.norm();
    if angle == 0.0 {
        return *s;
    }
    let n = theta / angle;
    let (sin, cos) = angle.sin_cos();
    s * cos + n.cross(s) * sin + n * (n.dot(s) * (1.0 - cos))
}

const GAUSS_OFFSET: f64 = 0.288_675_134_594_812_9; // √3/6
const MAGNUS_COMMUTATOR: f64 = 0.144_337_567_297_406_43; // √3/12

/// One fourth-order Magnus step.
fn magnus_step(
    dynamics: &Dynamics<'_>,
    s: &Vector3<f64>,
    t: f64,
    h: f64,
    pulse: Option<&PulseEvent>,
) -> Vector3<f64> {
    let w1 = dynamics.rate(t + (0.5 - GAUSS_OFFSET) * h, pulse);
    let w2 = dynamics.rate(t + (0.5 + GAUSS_OFFSET) * h, pulse);
    let theta = (w1 + w2) * (0.5 * h) - w1.cross(&w2) * (MAGNUS_COMMUTATOR * h * h);
    rotate(s, &theta)
}

struct Integrator<'a> {
    dynamics: Dynamics<'a>,
    opts: &'a PropagatorOptions,
    span: f64,
    step_cap: f64,
    next_step: f64,
    steps: usize,
    record: Recorder,
}

struct Recorder {
    enabled: bool,
    times: Vec<f64>,
    states: Vec<SpinState>,
    max_norm_error: f64,
}

impl Recorder {
    fn push(&mut self, t: f64, s: &Vector3<f64>) {
        if self.times.last() == Some(&t) && self.states.last().map(|x| x.bloch) == Some(*s) {
            return;
        }
        self.max_norm_error = self.max_norm_error.max((s.norm() - 1.0).abs());
        self.times.push(t);
        self.states.push(SpinState { bloch: *s });
    }
}

impl Integrator<'_> {
    /// Advances `s` from `a` to `b`. When `phase` is given, azimuth increments
    /// (in RFmod coordinates) are accumulated into it.
    fn advance(
        &mut self,
        s: &mut Vector3<f64>,
        a: f64,
        b: f64,
        pulse: Option<&PulseEvent>,
        mut phase: Option<&mut f64>,
    ) -> Result<(), PropagationError> {
        let mut t = a;
        let min_step = self.span * 1e-15;
        let mut h = self.next_step.min(self.step_cap);
        while t < b {
            let remaining = b - t;
            let last = h >= remaining;
            let step = if last { remaining } else { h };
            let full = magnus_step(&self.dynamics, s, t, step, pulse);
            let mid = magnus_step(&self.dynamics, s, t, 0.5 * step, pulse);
            let fine = magnus_step(&self.dynamics, &mid, t + 0.5 * step, 0.5 * step, pulse);
            let err = (full - fine).norm();
            // rounding in the two trial paths sets a floor of a few ulps
            let allowed = (self.opts.tolerance * step / self.span).max(32.0 * f64::EPSILON);
            let factor = if err == 0.0 {
                2.0
            } else {
                (0.9 * (allowed / err).powf(0.2)).clamp(0.2, 2.0)
            };
            if err <= allowed {
                if let Some(acc) = phase.as_deref_mut() {
                    let a0 = self.dynamics.modulated_azimuth(s, t);
                    let a1 = self.dynamics.modulated_azimuth(&mid, t + 0.5 * step);
                    let a2 = self.dynamics.modulated_azimuth(&fine, t + step);
                    *acc += wrap_to_pi(a1 - a0) + wrap_to_pi(a2 - a1);
                }
                *s = fine;
                t = if last { b } else { t + step };
                self.steps += 1;
                if self.steps > self.opts.max_steps {
                    return Err(PropagationError::StepBudgetExceeded(self.opts.max_steps));
                }
                if self.record.enabled {
                    self.record.push(t, s);
                }
                if !last {
                    h = (step * factor).min(self.step_cap);
                }
            } else {
                h = step * factor;
                if h < min_step {
                    return Err(PropagationError::StepSizeUnderflow { t, step: h });
                }
            }
        }
        self.next_step = h;
        Ok(())
    }

    fn pulse(
        &mut self,
        s: &mut Vector3<f64>,
        event: &PulseEvent,
    ) -> Result<(), PropagationError> {
        if event.is_instantaneous() {
            let t = event.start;
            let axis_angle = event.phase + self.dynamics.theta(t) - self.dynamics.frame_angle(t);
            let axis = Vector3::new(axis_angle.cos(), axis_angle.sin(), 0.0);
            *s = rotate(s, &(axis * event.nominal_rotation));
            Ok(())
        } else {
            self.advance(s, event.start, event.end(), Some(event), None)
        }
    }
}

/// Propagates the spin from the m_s = 0 pole through `seq`.
pub fn propagate(
    seq: &PulseSequence,
    cfg: &FieldConfig,
    modulation: &ModulationConfig,
    opts: &PropagatorOptions,
) -> Result<SpinTrajectory, PropagationError> {
    let cfg = cfg.validated()?;
    let modulation = modulation.validated()?;
    opts.validate(seq)?;
    let carrier = ZERO_FIELD_SPLITTING - GAMMA_NV * cfg.b_dc;
    if !opts.rwa && carrier <= 0.0 {
        return Err(PropagationError::InvalidCarrier(carrier));
    }
    let dynamics = Dynamics {
        cfg: &cfg,
        modulation: &modulation,
        frame: opts.frame,
        rwa: opts.rwa,
        carrier,
    };
    let bound = dynamics.rate_bound(seq);
    let mut step_cap = opts.max_step;
    if bound > 0.0 {
        // keeps per-step rotations well below π for azimuth unwrapping
        step_cap = step_cap.min(0.5 / bound);
    }
    let span = seq.last().end() - seq.first().start;
    let mut integ = Integrator {
        dynamics,
        opts,
        span,
        step_cap,
        next_step: step_cap,
        steps: 0,
        record: Recorder {
            enabled: opts.record_steps,
            times: Vec::new(),
            states: Vec::new(),
            max_norm_error: 0.0,
        },
    };

    let references = reference_azimuths(seq);
    let last = seq.events.len() - 1;
    let mut s = Vector3::z();
    integ.record.push(seq.first().start, &s);

    let mut running = 0.0;
    let mut t = seq.first().start;
    let mut pre_readout = s;
    let mut phi_nv = 0.0;
    for (i, event) in seq.events.iter().enumerate() {
        if i > 0 {
            integ.advance(&mut s, t, event.start, None, Some(&mut running))?;
            integ.record.push(event.start, &s);
        }
        if i == last {
            pre_readout = s;
            phi_nv = if seq.n_pi % 2 == 0 { running } else { -running };
            if !opts.readout_pulse {
                break;
            }
        }
        let before = integ.dynamics.modulated_azimuth(&s, event.start);
        integ.pulse(&mut s, event)?;
        let after = integ.dynamics.modulated_azimuth(&s, event.end());
        if i == 0 {
            running = wrap_to_pi(after - references[0]);
        } else if i < last {
            let ideal = 2.0 * event.phase - before;
            running = -running + wrap_to_pi(after - ideal);
        }
        t = event.end();
        integ.record.push(t, &s);
    }

    let readout_applied = opts.readout_pulse;
    let Recorder {
        times,
        states,
        max_norm_error,
        ..
    } = integ.record;
    Ok(SpinTrajectory {
        times,
        states,
        phi_nv,
        pre_readout: SpinState { bloch: pre_readout },
        final_state: SpinState { bloch: s },
        readout_applied,
        readout_phase: seq.readout_phase,
        steps: integ.steps,
        max_norm_error: max_norm_error.max((s.norm() - 1.0).abs()),
    })
}

/// Contrast of a propagated run. Reads the z projection when the closing
/// pulse was simulated, otherwise maps `phi_nv` through the readout model.
pub fn contrast_from_trajectory(traj: &SpinTrajectory, readout: &ReadoutModel) -> f64 {
    if traj.readout_applied {
        readout.c0 + readout.c_star * traj.final_state.bloch.z
    } else {
        contrast_from_phase(traj.phi_nv, readout)
    }
}

/// Result of re-running a propagation at half the step size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceReport {
    pub contrast: f64,
    pub contrast_half_step: f64,
    pub phi_nv: f64,
    pub phi_nv_half_step: f64,
}

impl ConvergenceReport {
    pub fn contrast_change(&self) -> f64 {
        (self.contrast - self.contrast_half_step).abs()
    }

    pub fn phase_change(&self) -> f64 {
        (self.phi_nv - self.phi_nv_half_step).abs()
    }
}

/// Runs `propagate` at `max_step` and `max_step / 2`.
pub fn convergence_check(
    seq: &PulseSequence,
    cfg: &FieldConfig,
    modulation: &ModulationConfig,
    opts: &PropagatorOptions,
    readout: &ReadoutModel,
) -> Result<ConvergenceReport, PropagationError> {
    let coarse = propagate(seq, cfg, modulation, opts)?;
    let fine = propagate(seq, cfg, modulation, &opts.with_max_step(0.5 * opts.max_step))?;
    Ok(ConvergenceReport {
        contrast: contrast_from_trajectory(&coarse, readout),
        contrast_half_step: contrast_from_trajectory(&fine, readout),
        phi_nv: coarse.phi_nv,
        phi_nv_half_step: fine.phi_nv,
    })
}
