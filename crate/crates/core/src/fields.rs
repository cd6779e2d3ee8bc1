// Copyright 2026 The sipht-rs Authors
// SPDX-License-Identifier: Apache-2.0

//! AC drive and response fields, and the microwave phase-modulation law.
//!
//! The drive is `b_d·cos(2π f_d t)` and the sample response is
//! `b_s·cos(2π f_d t − δ)`, both along the NV axis. Under phase modulation the
//! microwave carrier picks up the additive phase
//!
//! ```text
//! θ(t) = γ·b_d′·sin(2π f_d t)/(2π f_d) + γ·b_s′·sin(2π f_d t − δ′)/(2π f_d)
//! ```
//!
//! on top of the static `(D − γ B_DC)·t` term. Its time derivative cancels the
//! drive-induced detuning when `b_d′ = b_d`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{GAMMA_NV, TAU};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("{name} must be finite and non-negative, got {value}")]
    NegativeAmplitude { name: &'static str, value: f64 },
    #[error("drive frequency must be finite and positive, got {0}")]
    NonPositiveFrequency(f64),
    #[error("{name} must be finite, got {value}")]
    NonFinite { name: &'static str, value: f64 },
}

/// Static bias and AC fields seen by the NV spin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldConfig {
    /// Static bias field along the NV axis (T). Only enters the carrier frequency.
    #[serde(default)]
    pub b_dc: f64,
    /// Drive amplitude (T).
    pub b_d: f64,
    /// Response amplitude (T).
    #[serde(default)]
    pub b_s: f64,
    /// Drive frequency (Hz).
    pub f_d: f64,
    /// Response phase delay (rad), stored in `[0, 2π)`.
    #[serde(default)]
    pub delta: f64,
}

impl FieldConfig {
    pub fn new(b_d: f64, b_s: f64, f_d: f64, delta: f64) -> Result<Self, FieldError> {
        Self {
            b_dc: 0.0,
            b_d,
            b_s,
            f_d,
            delta: crate::wrap_to_tau(delta),
        }
        .validated()
    }

    pub fn with_bias(mut self, b_dc: f64) -> Self {
        self.b_dc = b_dc;
        self
    }

    /// Checks the invariants and normalizes `delta` into `[0, 2π)`.
    pub fn validated(mut self) -> Result<Self, FieldError> {
        check_amplitude("b_d", self.b_d)?;
        check_amplitude("b_s", self.b_s)?;
        if !self.b_dc.is_finite() {
            return Err(FieldError::NonFinite { name: "b_dc", value: self.b_dc });
        }
        if !(self.f_d.is_finite() && self.f_d > 0.0) {
            return Err(FieldError::NonPositiveFrequency(self.f_d));
        }
        if !self.delta.is_finite() {
            return Err(FieldError::NonFinite { name: "delta", value: self.delta });
        }
        self.delta = crate::wrap_to_tau(self.delta);
        Ok(self)
    }

    /// Drive angular frequency 2π f_d (rad/s).
    pub fn omega_d(&self) -> f64 {
        TAU * self.f_d
    }

    /// Drive period 1/f_d (s).
    pub fn period(&self) -> f64 {
        1.0 / self.f_d
    }
}

/// Microwave phase-modulation amplitudes. All zero is conventional DD.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ModulationConfig {
    /// Drive-cancelling modulation amplitude b_d′ (T).
    #[serde(default)]
    pub b_d_mod: f64,
    /// Secondary modulation amplitude b_s′ (T).
    #[serde(default)]
    pub b_s_mod: f64,
    /// Phase of the secondary modulation term (rad).
    #[serde(default)]
    pub delta_mod: f64,
}

impl ModulationConfig {
    /// Conventional dynamical decoupling: no modulation.
    pub fn conventional() -> Self {
        Self::default()
    }

    /// SIPHT condition `b_d′ = b_d` for the given fields.
    pub fn sipht(cfg: &FieldConfig) -> Self {
        Self {
            b_d_mod: cfg.b_d,
            ..Self::default()
        }
    }

    pub fn with_secondary(mut self, b_s_mod: f64, delta_mod: f64) -> Self {
        self.b_s_mod = b_s_mod;
        self.delta_mod = delta_mod;
        self
    }

    pub fn validated(self) -> Result<Self, FieldError> {
        check_amplitude("b_d_mod", self.b_d_mod)?;
        check_amplitude("b_s_mod", self.b_s_mod)?;
        if !self.delta_mod.is_finite() {
            return Err(FieldError::NonFinite { name: "delta_mod", value: self.delta_mod });
        }
        Ok(self)
    }

    pub fn is_conventional(&self) -> bool {
        self.b_d_mod == 0.0 && self.b_s_mod == 0.0
    }
}

fn check_amplitude(name: &'static str, value: f64) -> Result<(), FieldError> {
    if value.is_finite() && value >= 0.0 {
        Ok(())
    } else {
        Err(FieldError::NegativeAmplitude { name, value })
    }
}

/// Total AC field along the NV axis at time `t` (T).
pub fn total_ac_field(t: f64, cfg: &FieldConfig) -> f64 {
    let wt = cfg.omega_d() * t;
    cfg.b_d * wt.cos() + cfg.b_s * (wt - cfg.delta).cos()
}

/// Additive carrier phase θ(t) of the modulated microwave (rad).
pub fn mw_phase_modulation(t: f64, cfg: &FieldConfig, modulation: &ModulationConfig) -> f64 {
    let w = cfg.omega_d();
    let wt = w * t;
    GAMMA_NV * (modulation.b_d_mod * wt.sin() + modulation.b_s_mod * (wt - modulation.delta_mod).sin()) / w
}

/// Time derivative dθ/dt of the carrier phase (rad/s).
pub fn mw_phase_rate(t: f64, cfg: &FieldConfig, modulation: &ModulationConfig) -> f64 {
    let wt = cfg.omega_d() * t;
    GAMMA_NV * (modulation.b_d_mod * wt.cos() + modulation.b_s_mod * (wt - modulation.delta_mod).cos())
}

/// Detuning in the modulated rotating frame, `γB(t) − dθ/dt` (rad/s).
///
/// Evaluated term by term so the drive cancels exactly at `b_d′ = b_d`.
pub fn modulated_detuning(t: f64, cfg: &FieldConfig, modulation: &ModulationConfig) -> f64 {
    let wt = cfg.omega_d() * t;
    GAMMA_NV
        * ((cfg.b_d - modulation.b_d_mod) * wt.cos() + cfg.b_s * (wt - cfg.delta).cos()
            - modulation.b_s_mod * (wt - modulation.delta_mod).cos())
}
