// Copyright 2026 The sipht-rs Authors
// SPDX-License-Identifier: Apache-2.0

//! Desk-scale reproductions of the reference experiments and the
//! configuration types consumed by the command-line front end.
//!
//! Every run is a pure function of its configuration. Sweeps fan out over
//! the rayon pool; the pool size can be fixed with [`WORKERS_ENV`].

use std::f64::consts::FRAC_PI_2;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic::{
    magnetometry_curve, magnetometry_period, phase_per_tesla, phi_nv_for_sequence, ContrastCurve, CurveMode, ReadoutModel, SweepParameter,
    SweepSpec,
};
use crate::estimation::{
    bs_bounds_from_maxima, count_local_maxima, delta_from_symmetry, fit_contrast_curve, fit_dipolar, fit_power_law,
    fit_quadratures, measure_leakage_with_reference, DipolarFit, FitResult, PowerLawFit, SymmetryReadout,
};
use crate::fields::{FieldConfig, ModulationConfig};
use crate::io::{write_curve, write_json, write_rows};
use crate::propagator::{contrast_from_trajectory, propagate, PropagatorOptions, SpinTrajectory};
use crate::sequence::SequenceSpec;
use crate::{wrap_to_pi, Error, GAMMA_NV, TAU};

/// Environment variable holding the worker-thread count.
pub const WORKERS_ENV: &str = "SIPHT_WORKERS";

/// Worker count requested through [`WORKERS_ENV`], if any.
pub fn workers_from_env() -> Result<Option<usize>, Error> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::Config(format!("{WORKERS_ENV} must be a positive integer, got {v:?}"))),
        },
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(Error::Config(format!("{WORKERS_ENV}: {e}"))),
    }
}

/// Runs `f` on a pool of `workers` threads, or on the global pool.
pub fn with_workers<R, F>(workers: Option<usize>, f: F) -> Result<R, Error>
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    match workers {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("cannot start {n} workers: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Additive Gaussian contrast noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub sigma: f64,
    #[serde(default)]
    pub seed: u64,
}

/// Propagator options for `sequence` with the default step scaled by
/// `step_scale` (1 keeps the default, 0.5 halves it).
pub fn scaled_options(sequence: &SequenceSpec, cfg: &FieldConfig, step_scale: f64) -> Result<PropagatorOptions, Error> {
    if !(step_scale.is_finite() && step_scale > 0.0 && step_scale <= 1.0) {
        return Err(Error::Config(format!("step_scale must be in (0, 1], got {step_scale}")));
    }
    let seq = sequence.build(cfg)?;
    let o = PropagatorOptions::for_sequence(&seq);
    Ok(o.with_max_step(o.max_step * step_scale))
}

fn one() -> f64 {
    1.0
}

/// One fully specified curve computation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub cfg: FieldConfig,
    #[serde(rename = "mod")]
    pub modulation: ModulationConfig,
    pub sequence: SequenceSpec,
    pub sweep: SweepSpec,
    #[serde(default)]
    pub mode: CurveMode,
    #[serde(default)]
    pub readout: ReadoutModel,
    #[serde(default)]
    pub noise: Option<NoiseSpec>,
    /// Multiplier on the default integrator step.
    #[serde(default = "one")]
    pub step_scale: f64,
    #[serde(default)]
    pub output_path: Option<PathBuf>,
}

impl Scenario {
    /// The reference SIPHT condition: Hahn echo, p sweep over one
    /// period, analytic evaluation.
    pub fn example() -> Self {
        let cfg = fig2_fields();
        Self {
            name: "sipht_hahn".into(),
            cfg,
            modulation: ModulationConfig::sipht(&cfg),
            sequence: SequenceSpec::hahn(0.0),
            sweep: SweepSpec::full_period_p(128),
            mode: CurveMode::Analytic,
            readout: ReadoutModel::default(),
            noise: None,
            step_scale: 1.0,
            output_path: None,
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        self.cfg.validated()?;
        self.modulation.validated()?;
        self.sweep.validate()?;
        self.sequence.build(&self.cfg)?;
        Ok(())
    }

    pub fn run(&self) -> Result<ContrastCurve, Error> {
        self.validate()?;
        let opts = match self.mode {
            CurveMode::Analytic => None,
            _ => {
                let mut spec = self.sequence;
                if self.mode == CurveMode::NumericIdeal {
                    spec.rabi = None;
                }
                Some(scaled_options(&spec, &self.cfg, self.step_scale)?)
            }
        };
        let curve = magnetometry_curve(
            &self.sweep,
            &self.cfg,
            &self.modulation,
            &self.readout,
            &self.sequence,
            self.mode,
            opts.as_ref(),
        )?;
        Ok(match self.noise {
            Some(n) => curve.with_noise(n.sigma, n.seed)?,
            None => curve,
        })
    }
}

/// One propagation of a single sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateConfig {
    pub cfg: FieldConfig,
    #[serde(rename = "mod")]
    pub modulation: ModulationConfig,
    pub sequence: SequenceSpec,
    #[serde(default)]
    pub readout: ReadoutModel,
    #[serde(default = "one")]
    pub step_scale: f64,
    /// Record every integrator step in the trajectory.
    #[serde(default)]
    pub record_steps: bool,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        let s = Scenario::example();
        Self {
            cfg: s.cfg,
            modulation: s.modulation,
            sequence: s.sequence.with_offset(s.cfg.delta),
            readout: s.readout,
            step_scale: 1.0,
            record_steps: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateReport {
    pub phi_nv: f64,
    /// Closed-form phase for the same sequence.
    pub phi_nv_analytic: f64,
    pub contrast: f64,
    pub final_bloch: [f64; 3],
    pub steps: usize,
    pub max_norm_error: f64,
}

pub fn run_simulate(config: &SimulateConfig) -> Result<(SimulateReport, SpinTrajectory), Error> {
    let cfg = config.cfg.validated()?;
    let modulation = config.modulation.validated()?;
    let spec = config.sequence.with_readout_phase(config.readout.varphi);
    let seq = spec.build(&cfg)?;
    let mut opts = scaled_options(&spec, &cfg, config.step_scale)?;
    opts.record_steps = config.record_steps;
    let traj = propagate(&seq, &cfg, &modulation, &opts)?;
    let b = traj.final_state.bloch;
    let report = SimulateReport {
        phi_nv: traj.phi_nv,
        phi_nv_analytic: phi_nv_for_sequence(&seq, &cfg, &modulation),
        contrast: contrast_from_trajectory(&traj, &config.readout),
        final_bloch: [b.x, b.y, b.z],
        steps: traj.steps,
        max_norm_error: traj.max_norm_error,
    };
    Ok((report, traj))
}

fn fig2_fields() -> FieldConfig {
    FieldConfig {
        b_dc: 0.0,
        b_d: 100e-6,
        b_s: 4e-6,
        f_d: 152e3,
        delta: 0.065 * TAU,
    }
}

fn default_fig2_omegas() -> Vec<f64> {
    vec![TAU * 9.6e6, TAU * 2.8e6]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig2Config {
    /// Angular Rabi strengths (rad/s), one pair of curves each.
    #[serde(default = "default_fig2_omegas")]
    pub omegas: Vec<f64>,
    #[serde(default = "fig2_fields")]
    pub cfg: FieldConfig,
    #[serde(default = "fig2_count")]
    pub count: usize,
    #[serde(default = "fig2_mode")]
    pub mode: CurveMode,
    #[serde(default)]
    pub readout: ReadoutModel,
    #[serde(default = "one")]
    pub step_scale: f64,
}

fn fig2_count() -> usize {
    256
}

fn fig2_mode() -> CurveMode {
    CurveMode::NumericFinite
}

impl Default for Fig2Config {
    fn default() -> Self {
        Self {
            omegas: default_fig2_omegas(),
            cfg: fig2_fields(),
            count: fig2_count(),
            mode: fig2_mode(),
            readout: ReadoutModel::default(),
            step_scale: 1.0,
        }
    }
}

/// SIPHT and conventional Hahn p sweeps at one Rabi strength, with the
/// symmetry readout and maxima bounds of the SIPHT curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig2Pair {
    pub omega: f64,
    pub sipht: ContrastCurve,
    pub conventional: ContrastCurve,
    pub symmetry: SymmetryReadout,
    pub maxima: usize,
    pub bs_bounds: (f64, f64),
}

pub fn run_fig2(config: &Fig2Config) -> Result<Vec<Fig2Pair>, Error> {
    let cfg = config.cfg.validated()?;
    config
        .omegas
        .iter()
        .map(|&omega| {
            let scenario = |modulation: ModulationConfig| Scenario {
                name: String::new(),
                cfg,
                modulation,
                sequence: SequenceSpec::hahn(0.0).with_rabi(omega),
                sweep: SweepSpec::full_period_p(config.count),
                mode: config.mode,
                readout: config.readout,
                noise: None,
                step_scale: config.step_scale,
                output_path: None,
            };
            let sipht = scenario(ModulationConfig::sipht(&cfg)).run()?;
            let conventional = scenario(ModulationConfig::conventional()).run()?;
            let symmetry = delta_from_symmetry(&sipht)?;
            let maxima = count_local_maxima(&sipht.contrasts());
            Ok(Fig2Pair {
                omega,
                maxima,
                bs_bounds: bs_bounds_from_maxima(maxima, cfg.f_d, 1),
                symmetry,
                sipht,
                conventional,
            })
        })
        .collect()
}

/// Normalized drive strength `γ b_d / Ω`.
pub fn normalized_drive(b_d: f64, omega: f64) -> f64 {
    GAMMA_NV * b_d / omega
}

fn default_fig3_pairs() -> Vec<(f64, f64)> {
    vec![(97e-6, TAU * 3.32e6), (250e-6, TAU * 4e6)]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig3Config {
    /// `(b_d [T], Ω [rad/s])` pairs.
    #[serde(default = "default_fig3_pairs")]
    pub pairs: Vec<(f64, f64)>,
    #[serde(default = "fig3_f_d")]
    pub f_d: f64,
    /// Samples over one period of the secondary-modulation sweep.
    #[serde(default = "fig3_count")]
    pub count: usize,
    #[serde(default = "one")]
    pub step_scale: f64,
}

fn fig3_f_d() -> f64 {
    149e3
}

fn fig3_count() -> usize {
    24
}

impl Default for Fig3Config {
    fn default() -> Self {
        Self {
            pairs: default_fig3_pairs(),
            f_d: fig3_f_d(),
            count: fig3_count(),
            step_scale: 1.0,
        }
    }
}

impl Fig3Config {
    /// Pairs at fixed Ω realizing the given normalized drive strengths.
    pub fn grid(normalized: &[f64], omega: f64) -> Self {
        Self {
            pairs: normalized.iter().map(|x| (x * omega / GAMMA_NV, omega)).collect(),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fig3Row {
    pub b_d: f64,
    pub omega: f64,
    pub normalized_drive: f64,
    pub sipht_amplitude: f64,
    pub conventional_amplitude: f64,
    pub ratio: f64,
}

/// Amplitude of the best-fit `a + s sin(kx) + c cos(kx)`.
pub fn sinusoid_amplitude(samples: &[(f64, f64)], k: f64) -> f64 {
    let n = samples.len();
    let a = DMatrix::from_fn(n, 3, |i, j| match j {
        0 => 1.0,
        1 => (k * samples[i].0).sin(),
        _ => (k * samples[i].0).cos(),
    });
    let y = DVector::from_iterator(n, samples.iter().map(|s| s.1));
    match a.svd(true, true).solve(&y, 1e-12) {
        Ok(x) => x[1].hypot(x[2]),
        Err(_) => f64::NAN,
    }
}

/// Relative contrast of SIPHT over conventional Hahn magnetometry with
/// finite pulses, at `p = δ′ = π/2` and no response field. The signal is
/// emulated by the secondary modulation, swept over one magnetometry
/// period.
pub fn run_fig3(config: &Fig3Config) -> Result<Vec<Fig3Row>, Error> {
    let period = magnetometry_period(config.f_d, 1);
    let k = phase_per_tesla(config.f_d, 1);
    let sweep = SweepSpec {
        endpoint: false,
        ..SweepSpec::new(SweepParameter::BsMod, 0.0, period, config.count)
    };
    let readout = ReadoutModel::default();
    config
        .pairs
        .par_iter()
        .map(|&(b_d, omega)| {
            let cfg = FieldConfig::new(b_d, 0.0, config.f_d, FRAC_PI_2)?;
            let spec = SequenceSpec::hahn(FRAC_PI_2).with_rabi(omega);
            let opts = scaled_options(&spec, &cfg, config.step_scale)?;
            let amp = |m: ModulationConfig| -> Result<f64, Error> {
                let c = magnetometry_curve(
                    &sweep,
                    &cfg,
                    &m.with_secondary(0.0, FRAC_PI_2),
                    &readout,
                    &spec,
                    CurveMode::NumericFinite,
                    Some(&opts),
                )?;
                Ok(sinusoid_amplitude(&c.samples, k))
            };
            let s = amp(ModulationConfig::sipht(&cfg))?;
            let c = amp(ModulationConfig::conventional())?;
            Ok(Fig3Row {
                b_d,
                omega,
                normalized_drive: normalized_drive(b_d, omega),
                sipht_amplitude: s,
                conventional_amplitude: c,
                ratio: s / c,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig4aConfig {
    #[serde(default = "fig4a_b_d")]
    pub b_d: f64,
    #[serde(default = "fig4a_f_d")]
    pub f_d: f64,
    #[serde(default = "fig4a_omega")]
    pub omega: f64,
    /// Relative amplitude error of the modulation, `1 − b_d′/b_d`.
    #[serde(default)]
    pub mismatch: f64,
    #[serde(default = "fig4a_count")]
    pub count: usize,
    #[serde(default = "fig2_mode")]
    pub mode: CurveMode,
    #[serde(default = "one")]
    pub step_scale: f64,
}

fn fig4a_b_d() -> f64 {
    102e-6
}

fn fig4a_f_d() -> f64 {
    152e3
}

fn fig4a_omega() -> f64 {
    TAU * 9.6e6
}

fn fig4a_count() -> usize {
    360
}

impl Default for Fig4aConfig {
    fn default() -> Self {
        Self {
            b_d: fig4a_b_d(),
            f_d: fig4a_f_d(),
            omega: fig4a_omega(),
            mismatch: 0.0,
            count: fig4a_count(),
            mode: fig2_mode(),
            step_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig4aReport {
    /// Drive phase remaining under SIPHT as a fraction of the conventional
    /// drive phase, after subtracting the drive-free sweep.
    pub leakage: f64,
    pub sipht_amplitude: f64,
    pub conventional_amplitude: f64,
    /// Peak-to-peak contrast of each sweep.
    pub sipht_variation: f64,
    pub conventional_variation: f64,
    pub no_drive: ContrastCurve,
    pub conventional: ContrastCurve,
    pub sipht: ContrastCurve,
}

fn peak_to_peak(c: &ContrastCurve) -> f64 {
    let v = c.contrasts();
    v.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - v.iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Three Hahn p sweeps: no drive, drive without SIPHT, drive with SIPHT.
pub fn run_fig4a(config: &Fig4aConfig) -> Result<Fig4aReport, Error> {
    let cfg = FieldConfig::new(config.b_d, 0.0, config.f_d, 0.0)?;
    let spec = SequenceSpec::hahn(0.0).with_rabi(config.omega);
    let run = |cfg: FieldConfig, m: ModulationConfig| -> Result<ContrastCurve, Error> {
        Scenario {
            name: String::new(),
            cfg,
            modulation: m,
            sequence: spec,
            sweep: SweepSpec::full_period_p(config.count),
            mode: config.mode,
            readout: ReadoutModel::default(),
            noise: None,
            step_scale: config.step_scale,
            output_path: None,
        }
        .run()
    };
    let sipht_mod = ModulationConfig {
        b_d_mod: config.b_d * (1.0 - config.mismatch),
        ..ModulationConfig::sipht(&cfg)
    };
    let sipht = run(cfg, sipht_mod)?;
    let conventional = run(cfg, ModulationConfig::conventional())?;
    let mut no_drive = run(FieldConfig { b_d: 0.0, ..cfg }, ModulationConfig::conventional())?;
    let leakage = {
        // the reference shares the field record so the curves are comparable
        let mut reference = no_drive.clone();
        reference.cfg = cfg;
        measure_leakage_with_reference(&sipht, &conventional, &reference)?
    };
    let q_ref = fit_quadratures(&no_drive)?;
    let amp = |c: &ContrastCurve| -> Result<f64, Error> {
        let q = fit_quadratures(c)?;
        Ok((q.x - q_ref.x).hypot(q.y - q_ref.y))
    };
    no_drive.cfg.b_d = 0.0;
    Ok(Fig4aReport {
        leakage,
        sipht_amplitude: amp(&sipht)?,
        conventional_amplitude: amp(&conventional)?,
        sipht_variation: peak_to_peak(&sipht),
        conventional_variation: peak_to_peak(&conventional),
        no_drive,
        conventional,
        sipht,
    })
}

fn default_fig4b_conditions() -> Vec<(f64, f64)> {
    vec![(2e-6, 78e-6), (7e-6, 75e-6)]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig4bConfig {
    /// `(b_s, b_d)` pairs (T).
    #[serde(default = "default_fig4b_conditions")]
    pub conditions: Vec<(f64, f64)>,
    #[serde(default = "fig4b_f_d")]
    pub f_d: f64,
    /// Number of δ values uniformly covering `[0, 2π)`.
    #[serde(default = "fig4b_deltas")]
    pub deltas: usize,
    /// p samples per curve.
    #[serde(default = "fig4b_count")]
    pub count: usize,
    #[serde(default = "fig4b_sigma")]
    pub noise_sigma: f64,
    /// Noise realizations per `(condition, δ)`.
    #[serde(default = "fig4b_seeds")]
    pub seeds: u64,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub mode: CurveMode,
    /// Rabi strength for finite-pulse runs (rad/s).
    #[serde(default = "fig4a_omega")]
    pub omega: f64,
    #[serde(default = "one")]
    pub step_scale: f64,
}

fn fig4b_f_d() -> f64 {
    160e3
}

fn fig4b_deltas() -> usize {
    16
}

fn fig4b_count() -> usize {
    64
}

fn fig4b_sigma() -> f64 {
    0.01
}

fn fig4b_seeds() -> u64 {
    10
}

impl Default for Fig4bConfig {
    fn default() -> Self {
        Self {
            conditions: default_fig4b_conditions(),
            f_d: fig4b_f_d(),
            deltas: fig4b_deltas(),
            count: fig4b_count(),
            noise_sigma: fig4b_sigma(),
            seeds: fig4b_seeds(),
            base_seed: 0,
            mode: CurveMode::Analytic,
            omega: fig4a_omega(),
            step_scale: 1.0,
        }
    }
}

/// One noisy δ recovery.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fig4bRow {
    pub b_s: f64,
    pub b_d: f64,
    pub delta_true: f64,
    pub seed: u64,
    pub delta_fit: f64,
    pub delta_std: f64,
    pub b_s_fit: f64,
    pub delta_symmetry: f64,
    /// `delta_fit − delta_true` wrapped to `(−π, π]`.
    pub residual: f64,
    /// `delta_symmetry − delta_fit` wrapped to `(−π, π]`.
    pub symmetry_offset: f64,
}

/// Per `(condition, δ)` averages of [`Fig4bRow`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fig4bSummary {
    pub b_s: f64,
    pub b_d: f64,
    pub delta_true: f64,
    pub mean_residual: f64,
    pub std_residual: f64,
    pub mean_reported_std: f64,
    pub max_symmetry_offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig4bReport {
    pub rows: Vec<Fig4bRow>,
    pub summary: Vec<Fig4bSummary>,
    /// Sample spacing of the p sweeps (rad).
    pub sample_spacing: f64,
}

/// δ recovery across `[0, 2π)` from noisy SIPHT Hahn p sweeps, by
/// least-squares fit and by symmetry readout.
pub fn run_fig4b(config: &Fig4bConfig) -> Result<Fig4bReport, Error> {
    let mut jobs = Vec::new();
    for &(b_s, b_d) in &config.conditions {
        for j in 0..config.deltas {
            let delta = TAU * j as f64 / config.deltas as f64;
            for s in 0..config.seeds {
                jobs.push((b_s, b_d, delta, s));
            }
        }
    }
    // noise-free curves are shared by all seeds of one (condition, δ)
    let clean: Vec<ContrastCurve> = config
        .conditions
        .iter()
        .flat_map(|&(b_s, b_d)| (0..config.deltas).map(move |j| (b_s, b_d, TAU * j as f64 / config.deltas as f64)))
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&(b_s, b_d, delta)| {
            let cfg = FieldConfig::new(b_d, b_s, config.f_d, delta)?;
            Scenario {
                name: String::new(),
                cfg,
                modulation: ModulationConfig::sipht(&cfg),
                sequence: SequenceSpec::hahn(0.0).with_rabi(config.omega),
                sweep: SweepSpec::full_period_p(config.count),
                mode: config.mode,
                readout: ReadoutModel::default(),
                noise: None,
                step_scale: config.step_scale,
                output_path: None,
            }
            .run()
        })
        .collect::<Result<_, Error>>()?;

    let per_curve = config.seeds as usize;
    let rows: Vec<Fig4bRow> = jobs
        .par_iter()
        .enumerate()
        .map(|(idx, &(b_s, b_d, delta, s))| -> Result<Fig4bRow, Error> {
            let seed = config
                .base_seed
                .wrapping_add(idx as u64)
                .wrapping_mul(0x9E37_79B9_7F4A_7C15);
            let curve = clean[idx / per_curve].with_noise(config.noise_sigma, seed)?;
            let fit: FitResult = fit_contrast_curve(&curve, &curve.readout, 1)?;
            let sym = delta_from_symmetry(&curve)?;
            Ok(Fig4bRow {
                b_s,
                b_d,
                delta_true: delta,
                seed: s,
                delta_fit: fit.delta_hat,
                delta_std: fit.delta_std(),
                b_s_fit: fit.b_s_hat,
                delta_symmetry: sym.delta,
                residual: wrap_to_pi(fit.delta_hat - delta),
                symmetry_offset: wrap_to_pi(sym.delta - fit.delta_hat),
            })
        })
        .collect::<Result<_, Error>>()?;

    let summary = rows
        .chunks(per_curve.max(1))
        .map(|chunk| {
            let n = chunk.len() as f64;
            let mean = chunk.iter().map(|r| r.residual).sum::<f64>() / n;
            let var = chunk.iter().map(|r| (r.residual - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
            Fig4bSummary {
                b_s: chunk[0].b_s,
                b_d: chunk[0].b_d,
                delta_true: chunk[0].delta_true,
                mean_residual: mean,
                std_residual: var.sqrt(),
                mean_reported_std: chunk.iter().map(|r| r.delta_std).sum::<f64>() / n,
                max_symmetry_offset: chunk.iter().map(|r| r.symmetry_offset.abs()).fold(0.0, f64::max),
            }
        })
        .collect();
    Ok(Fig4bReport {
        rows,
        summary,
        sample_spacing: TAU / config.count as f64,
    })
}

/// Synthetic conductor: dipolar amplitude and phase delay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub name: String,
    /// A in `b_s = A/(d + d0)³` (T·m³).
    pub amplitude: f64,
    pub delta: f64,
}

fn default_materials() -> Vec<Material> {
    vec![
        Material {
            name: "Cu".into(),
            amplitude: 2.16e-13,
            delta: 0.48 * TAU,
        },
        Material {
            name: "Al".into(),
            amplitude: 1.6e-13,
            delta: 0.47 * TAU,
        },
        Material {
            name: "Ti".into(),
            amplitude: 0.4e-13,
            delta: 0.31 * TAU,
        },
    ]
}

fn default_distances() -> Vec<f64> {
    vec![1e-3, 2e-3, 3e-3, 4e-3, 6e-3, 8e-3]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig5Config {
    #[serde(default = "default_materials")]
    pub materials: Vec<Material>,
    /// Sample distances (m).
    #[serde(default = "default_distances")]
    pub distances: Vec<f64>,
    /// Offset distance d0 (m).
    #[serde(default = "fig5_d0")]
    pub d0: f64,
    #[serde(default = "fig5_b_d")]
    pub b_d: f64,
    #[serde(default = "fig4a_f_d")]
    pub f_d: f64,
    #[serde(default = "fig4b_count")]
    pub count: usize,
    #[serde(default)]
    pub noise: Option<NoiseSpec>,
}

fn fig5_d0() -> f64 {
    2e-3
}

fn fig5_b_d() -> f64 {
    100e-6
}

impl Default for Fig5Config {
    fn default() -> Self {
        Self {
            materials: default_materials(),
            distances: default_distances(),
            d0: fig5_d0(),
            b_d: fig5_b_d(),
            f_d: fig4a_f_d(),
            count: fig4b_count(),
            noise: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fig5Point {
    pub distance: f64,
    pub b_s_true: f64,
    pub b_s_fit: f64,
    pub delta_fit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig5Material {
    pub name: String,
    pub delta_true: f64,
    /// Mean fitted δ over distances (circular mean).
    pub delta_fit: f64,
    pub points: Vec<Fig5Point>,
    pub dipolar: DipolarFit,
    pub power_law: PowerLawFit,
}

/// Per material: SIPHT p sweeps at each distance, fitted for `(b_s, δ)`,
/// then the fitted amplitudes against distance fitted with `A/(d + d0)³`.
pub fn run_fig5(config: &Fig5Config) -> Result<Vec<Fig5Material>, Error> {
    config
        .materials
        .iter()
        .enumerate()
        .map(|(mi, m)| {
            let points: Vec<Fig5Point> = config
                .distances
                .par_iter()
                .enumerate()
                .map(|(di, &d)| -> Result<Fig5Point, Error> {
                    let b_s = crate::estimation::dipolar_field(m.amplitude, config.d0, d);
                    let cfg = FieldConfig::new(config.b_d, b_s, config.f_d, m.delta)?;
                    let mut curve = Scenario {
                        name: String::new(),
                        cfg,
                        modulation: ModulationConfig::sipht(&cfg),
                        sequence: SequenceSpec::hahn(0.0),
                        sweep: SweepSpec::full_period_p(config.count),
                        mode: CurveMode::Analytic,
                        readout: ReadoutModel::default(),
                        noise: None,
                        step_scale: 1.0,
                        output_path: None,
                    }
                    .run()?;
                    if let Some(n) = config.noise {
                        let seed = n.seed.wrapping_add((mi * 1000 + di) as u64);
                        curve = curve.with_noise(n.sigma, seed)?;
                    }
                    let fit = fit_contrast_curve(&curve, &curve.readout, 1)?;
                    Ok(Fig5Point {
                        distance: d,
                        b_s_true: b_s,
                        b_s_fit: fit.b_s_hat,
                        delta_fit: fit.delta_hat,
                    })
                })
                .collect::<Result<_, Error>>()?;
            let series: Vec<(f64, f64)> = points.iter().map(|p| (p.distance, p.b_s_fit)).collect();
            let (s, c) = points
                .iter()
                .fold((0.0, 0.0), |(s, c), p| (s + p.delta_fit.sin(), c + p.delta_fit.cos()));
            Ok(Fig5Material {
                name: m.name.clone(),
                delta_true: m.delta,
                delta_fit: crate::wrap_to_tau(s.atan2(c)),
                dipolar: fit_dipolar(&series)?,
                power_law: fit_power_law(&series)?,
                points,
            })
        })
        .collect()
}

/// Writes `name.json` (pretty) into `dir`, creating it.
pub fn write_report<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf, Error> {
    let path = dir.join(format!("{name}.json"));
    write_json(value, &path)?;
    Ok(path)
}

pub fn write_fig2(dir: &Path, pairs: &[Fig2Pair]) -> Result<(), Error> {
    #[derive(Serialize)]
    struct Meta<'a> {
        omega: f64,
        symmetry: &'a SymmetryReadout,
        maxima: usize,
        bs_bounds: (f64, f64),
    }
    let mut metas = Vec::new();
    for pair in pairs {
        let tag = format!("{:.2}MHz", pair.omega / TAU / 1e6);
        write_curve(&pair.sipht, &dir.join(format!("fig2_sipht_{tag}.csv")))?;
        write_curve(&pair.conventional, &dir.join(format!("fig2_conventional_{tag}.csv")))?;
        metas.push(Meta {
            omega: pair.omega,
            symmetry: &pair.symmetry,
            maxima: pair.maxima,
            bs_bounds: pair.bs_bounds,
        });
    }
    write_report(dir, "fig2", &metas)?;
    Ok(())
}

pub fn write_fig3(dir: &Path, rows: &[Fig3Row], config: &Fig3Config) -> Result<(), Error> {
    write_rows(rows, &dir.join("fig3.csv"))?;
    write_report(dir, "fig3", config)?;
    Ok(())
}

pub fn write_fig4a(dir: &Path, report: &Fig4aReport, config: &Fig4aConfig) -> Result<(), Error> {
    write_curve(&report.no_drive, &dir.join("fig4a_no_drive.csv"))?;
    write_curve(&report.conventional, &dir.join("fig4a_conventional.csv"))?;
    write_curve(&report.sipht, &dir.join("fig4a_sipht.csv"))?;
    #[derive(Serialize)]
    struct Meta<'a> {
        config: &'a Fig4aConfig,
        leakage: f64,
        sipht_amplitude: f64,
        conventional_amplitude: f64,
        sipht_variation: f64,
        conventional_variation: f64,
    }
    write_report(
        dir,
        "fig4a",
        &Meta {
            config,
            leakage: report.leakage,
            sipht_amplitude: report.sipht_amplitude,
            conventional_amplitude: report.conventional_amplitude,
            sipht_variation: report.sipht_variation,
            conventional_variation: report.conventional_variation,
        },
    )?;
    Ok(())
}

pub fn write_fig4b(dir: &Path, report: &Fig4bReport, config: &Fig4bConfig) -> Result<(), Error> {
    write_rows(&report.rows, &dir.join("fig4b.csv"))?;
    write_rows(&report.summary, &dir.join("fig4b_summary.csv"))?;
    #[derive(Serialize)]
    struct Meta<'a> {
        config: &'a Fig4bConfig,
        sample_spacing: f64,
    }
    write_report(
        dir,
        "fig4b",
        &Meta {
            config,
            sample_spacing: report.sample_spacing,
        },
    )?;
    Ok(())
}

pub fn write_fig5(dir: &Path, materials: &[Fig5Material], config: &Fig5Config) -> Result<(), Error> {
    #[derive(Serialize)]
    struct Row<'a> {
        material: &'a str,
        distance: f64,
        b_s_true: f64,
        b_s_fit: f64,
        delta_fit: f64,
    }
    let rows: Vec<Row> = materials
        .iter()
        .flat_map(|m| {
            m.points.iter().map(move |p| Row {
                material: &m.name,
                distance: p.distance,
                b_s_true: p.b_s_true,
                b_s_fit: p.b_s_fit,
                delta_fit: p.delta_fit,
            })
        })
        .collect();
    write_rows(&rows, &dir.join("fig5.csv"))?;
    #[derive(Serialize)]
    struct Meta<'a> {
        config: &'a Fig5Config,
        materials: &'a [Fig5Material],
    }
    write_report(dir, "fig5", &Meta { config, materials })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_config_round_trip() {
        let s = Scenario {
            noise: Some(NoiseSpec { sigma: 0.01, seed: 4 }),
            output_path: Some("out/x.csv".into()),
            ..Scenario::example()
        };
        let text = serde_json::to_string(&s).unwrap();
        let back: Scenario = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
        assert_eq!(serde_json::to_string(&back).unwrap(), text);
        assert!(text.contains("\"mod\""));
    }

    #[test]
    fn figure_configs_fill_defaults() {
        let f: Fig4bConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(f, Fig4bConfig::default());
        let f: Fig5Config = serde_json::from_str(r#"{"d0": 0.001}"#).unwrap();
        assert_eq!(f.d0, 1e-3);
        assert_eq!(f.materials.len(), 3);
        let f: Fig3Config = serde_json::from_str("{}").unwrap();
        assert!((normalized_drive(f.pairs[0].0, f.pairs[0].1) - 0.818).abs() < 1e-3);
        assert!((normalized_drive(f.pairs[1].0, f.pairs[1].1) - 1.75).abs() < 1e-9);
    }

    #[test]
    fn analytic_and_ideal_scenarios_agree() {
        let base = Scenario {
            sweep: SweepSpec::full_period_p(16),
            ..Scenario::example()
        };
        let a = base.run().unwrap();
        let n = Scenario {
            mode: CurveMode::NumericIdeal,
            ..base
        }
        .run()
        .unwrap();
        for (x, y) in a.samples.iter().zip(&n.samples) {
            assert!((x.1 - y.1).abs() < 1e-6, "{x:?} {y:?}");
        }
    }

    #[test]
    fn sinusoid_amplitude_matches_construction() {
        let k = 3.0;
        let s: Vec<(f64, f64)> = (0..20).map(|i| {
            let x = i as f64 * TAU / k / 20.0;
            (x, 0.4 + 0.25 * (k * x - 0.3).sin())
        }).collect();
        assert!((sinusoid_amplitude(&s, k) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn fig4a_analytic_exact_null_and_mismatch() {
        let exact = run_fig4a(&Fig4aConfig {
            mode: CurveMode::Analytic,
            ..Fig4aConfig::default()
        })
        .unwrap();
        assert_eq!(exact.leakage, 0.0);
        assert_eq!(exact.sipht_variation, 0.0);
        let mismatch = run_fig4a(&Fig4aConfig {
            mode: CurveMode::Analytic,
            mismatch: 1e-3,
            ..Fig4aConfig::default()
        })
        .unwrap();
        assert!((mismatch.leakage - 1e-3).abs() < 1e-9, "{}", mismatch.leakage);
    }

    #[test]
    fn fig4b_small_run_is_unbiased() {
        let r = run_fig4b(&Fig4bConfig {
            deltas: 4,
            seeds: 5,
            ..Fig4bConfig::default()
        })
        .unwrap();
        assert_eq!(r.rows.len(), 2 * 4 * 5);
        assert_eq!(r.summary.len(), 8);
        for s in &r.summary {
            assert!(s.mean_residual.abs() < 0.05, "{s:?}");
            assert!(s.max_symmetry_offset <= r.sample_spacing, "{s:?}");
        }
    }

    #[test]
    fn fig5_noiseless_recovers_dipolar_series() {
        let out = run_fig5(&Fig5Config::default()).unwrap();
        assert_eq!(out.len(), 3);
        for m in &out {
            assert!((m.dipolar.d0_hat - 2e-3).abs() < 1e-9, "{m:?}");
            assert!((m.power_law.exponent - 3.0).abs() < 0.1);
            assert!(crate::wrap_to_pi(m.delta_fit - m.delta_true).abs() < 1e-6);
        }
    }

    #[test]
    fn simulate_matches_closed_form() {
        let (r, traj) = run_simulate(&SimulateConfig::default()).unwrap();
        assert!((r.phi_nv - r.phi_nv_analytic).abs() < 1e-6 * r.phi_nv_analytic.abs());
        assert!((r.contrast + r.phi_nv.sin()).abs() < 1e-6);
        assert!(traj.times.len() >= 2);
    }

    #[test]
    fn workers_pool_runs_closure() {
        assert_eq!(with_workers(Some(2), || rayon::current_num_threads()).unwrap(), 2);
        assert_eq!(with_workers(None, || 7).unwrap(), 7);
    }

    #[test]
    fn outputs_are_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = Fig5Config::default();
        let out = run_fig5(&cfg).unwrap();
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        write_fig5(&a, &out, &cfg).unwrap();
        write_fig5(&b, &run_fig5(&cfg).unwrap(), &cfg).unwrap();
        for f in ["fig5.csv", "fig5.json"] {
            assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap());
        }
    }
}
