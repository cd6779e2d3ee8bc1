// Copyright 2026 The sipht-rs Authors
// SPDX-License-Identifier: Apache-2.0

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::lm::{self, LmOutcome, LmSettings};
use super::maxima::count_local_maxima;
use super::symmetry::reflection_axis;
use super::{check_period_sweep, node_offsets, EstimationError};
use crate::analytic::{phase_per_tesla, ContrastCurve, ReadoutModel};
use crate::{wrap_to_tau, TAU};

/// Least-squares estimate of the response field from a `p` sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    /// Response amplitude (T), non-negative.
    pub b_s_hat: f64,
    /// Response phase delay (rad) in `[0, 2π)`.
    pub delta_hat: f64,
    /// Residual drive amplitude `b_d − b_d′` (T) used by the model.
    pub leakage_hat: f64,
    /// Covariance of `(leakage, b_s, δ)`. The leakage row and column are
    /// zero: the leakage is held at its prior, see [`FitOptions::leakage`].
    pub covariance: [[f64; 3]; 3],
    /// RMS contrast residual.
    pub residual_norm: f64,
    /// False when the fitted amplitude is indistinguishable from zero, in
    /// which case `delta_hat` carries no information.
    pub delta_identifiable: bool,
    pub iterations_converged: bool,
}

impl FitResult {
    pub fn b_s_std(&self) -> f64 {
        self.covariance[1][1].sqrt()
    }

    pub fn delta_std(&self) -> f64 {
        self.covariance[2][2].sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Residual drive amplitude `b_d − b_d′` (T). A single `p` sweep only
    /// constrains the sum of the drive and response phasors, so this is
    /// not fitted. `None` takes the nominal value from the curve metadata.
    pub leakage: Option<f64>,
    /// Number of phase-delay sectors, one local start each.
    pub starts: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            leakage: None,
            starts: 8,
        }
    }
}

/// Phase model `φ(p) = K·Re[(z0 + b e^{iδ}) e^{−ip}]` with a fixed known
/// phasor `z0` (drive leakage and secondary modulation).
#[derive(Debug, Clone, Copy)]
pub(crate) struct PhaseModel {
    pub k: f64,
    pub z0: (f64, f64),
}

impl PhaseModel {
    pub fn for_curve(curve: &ContrastCurve, n_pi: u32, leakage: f64) -> Self {
        let m = &curve.modulation;
        Self {
            k: phase_per_tesla(curve.cfg.f_d, n_pi),
            z0: (
                leakage - m.b_s_mod * m.delta_mod.cos(),
                -m.b_s_mod * m.delta_mod.sin(),
            ),
        }
    }

    /// Phases at offsets with precomputed `(sin p, cos p)`.
    pub fn phases<'a>(&self, trig: &'a [(f64, f64)], b: f64, delta: f64) -> impl Iterator<Item = f64> + 'a {
        let (sd, cd) = delta.sin_cos();
        let re = self.k * (self.z0.0 + b * cd);
        let im = self.k * (self.z0.1 + b * sd);
        trig.iter().map(move |&(s, c)| re * c + im * s)
    }

    /// Converts a total phasor `R e^{iψ}` into the response part `(b, δ)`.
    pub fn response_from_total(&self, r: f64, psi: f64) -> (f64, f64) {
        let re = r * psi.cos() - self.z0.0;
        let im = r * psi.sin() - self.z0.1;
        (re.hypot(im), im.atan2(re))
    }
}

pub fn fit_contrast_curve(curve: &ContrastCurve, readout: &ReadoutModel, n_pi: u32) -> Result<FitResult, EstimationError> {
    fit_contrast_curve_with(curve, readout, n_pi, &FitOptions::default())
}

pub fn fit_contrast_curve_with(
    curve: &ContrastCurve,
    readout: &ReadoutModel,
    n_pi: u32,
    options: &FitOptions,
) -> Result<FitResult, EstimationError> {
    check_period_sweep(curve, 8)?;
    if n_pi == 0 {
        return Err(EstimationError::InvalidInput("n_pi must be at least 1".into()));
    }
    if options.starts == 0 {
        return Err(EstimationError::InvalidInput("need at least one start".into()));
    }
    if !(readout.c_star.is_finite() && readout.c_star > 0.0) {
        return Err(EstimationError::InvalidInput(format!("C* must be positive, got {}", readout.c_star)));
    }
    let leakage = options
        .leakage
        .unwrap_or(curve.cfg.b_d - curve.modulation.b_d_mod);
    let model = PhaseModel::for_curve(curve, n_pi, leakage);
    let p = node_offsets(curve)?;
    let y = curve.contrasts();
    let ro = *readout;

    let trig: Vec<(f64, f64)> = p.iter().map(|v| v.sin_cos()).collect();
    let residual = |x: &DVector<f64>| -> DVector<f64> {
        DVector::from_iterator(
            p.len(),
            model
                .phases(&trig, x[0], x[1])
                .zip(&y)
                .map(|(phi, &yi)| ro.c0 + ro.c_star * (phi + ro.varphi).cos() - yi),
        )
    };
    let cost = |b: f64, d: f64| -> f64 {
        model
            .phases(&trig, b, d)
            .zip(&y)
            .map(|(phi, &yi)| (ro.c0 + ro.c_star * (phi + ro.varphi).cos() - yi).powi(2))
            .sum()
    };
    let jacobian = |x: &DVector<f64>| -> DMatrix<f64> {
        let (b, d) = (x[0], x[1]);
        let (sd, cd) = d.sin_cos();
        let mut j = DMatrix::zeros(p.len(), 2);
        for (i, phi) in model.phases(&trig, b, d).enumerate() {
            let slope = -ro.c_star * (phi + ro.varphi).sin() * model.k;
            let (s, c) = trig[i];
            // cos(p − δ) and sin(p − δ)
            j[(i, 0)] = slope * (c * cd + s * sd);
            j[(i, 1)] = slope * b * (s * cd - c * sd);
        }
        j
    };

    let starts = initial_points(&model, &p, &y, options.starts, &cost);
    let settings = LmSettings::default();
    let best = starts
        .par_iter()
        .map(|&(b, d)| lm::minimize_with(&residual, &jacobian, |_| {}, DVector::from_vec(vec![b, d]), &settings))
        .min_by(|a, b| a.cost.total_cmp(&b.cost))
        .expect("at least one start");

    finish(best, &model, leakage, p.len())
}

fn finish(best: LmOutcome, model: &PhaseModel, leakage: f64, n: usize) -> Result<FitResult, EstimationError> {
    let rms = (best.cost / n as f64).sqrt();
    if !best.cost.is_finite() || !best.params.iter().all(|v| v.is_finite()) {
        return Err(EstimationError::NonConvergence { best_residual: rms });
    }
    if !best.converged {
        return Err(EstimationError::NonConvergence { best_residual: rms });
    }
    let (mut b, mut d) = (best.params[0], best.params[1]);
    let flipped = b < 0.0;
    if flipped {
        b = -b;
        d += std::f64::consts::PI;
    }

    let sub = covariance_2x2(&best);
    let sign = if flipped { -1.0 } else { 1.0 };
    let mut covariance = [[0.0; 3]; 3];
    covariance[1][1] = sub[(0, 0)].max(0.0);
    covariance[2][2] = sub[(1, 1)].max(0.0);
    let off = sign * 0.5 * (sub[(0, 1)] + sub[(1, 0)]);
    covariance[1][2] = off;
    covariance[2][1] = off;

    let phase_amplitude = model.k * b;
    let b_std = covariance[1][1].sqrt();
    let delta_identifiable = phase_amplitude > 1e-6 && b > 3.0 * b_std;

    Ok(FitResult {
        b_s_hat: b,
        delta_hat: wrap_to_tau(d),
        leakage_hat: leakage,
        covariance,
        residual_norm: rms,
        delta_identifiable,
        iterations_converged: best.converged,
    })
}

/// Covariance of the fitted parameters with a pseudo-inverse, so a
/// degenerate direction yields zero rather than an error.
pub(crate) fn covariance_2x2(outcome: &LmOutcome) -> DMatrix<f64> {
    let n = outcome.residuals.len();
    let k = outcome.params.len();
    let sigma2 = if n > k { outcome.cost / (n - k) as f64 } else { 0.0 };
    let jtj = outcome.jacobian.transpose() * &outcome.jacobian;
    let scale = jtj.amax().max(f64::MIN_POSITIVE);
    match jtj.clone().pseudo_inverse(scale * 1e-12) {
        Ok(inv) => inv * sigma2,
        Err(_) => DMatrix::zeros(k, k),
    }
}

/// Start points for the local fit: the best candidate of a coarse
/// `(b, δ)` grid in each of `sectors` equal δ sectors, plus candidates
/// placed on the curve's reflection axis when the sweep is uniform.
pub(crate) fn initial_points<C>(model: &PhaseModel, p: &[f64], y: &[f64], sectors: usize, cost: &C) -> Vec<(f64, f64)>
where
    C: Fn(f64, f64) -> f64 + Sync,
{
    let k = model.k;
    let known = model.z0.0.hypot(model.z0.1);
    let eta = count_local_maxima(y) as f64;
    // generous amplitude bound: the maxima-count bound plus a margin
    let total_max = (eta + 2.0) * std::f64::consts::FRAC_PI_2 / k;
    let b_max = total_max + known;

    let n_b = ((k * b_max / 0.5).ceil() as usize).clamp(8, 400);
    let n_d = 32.max(sectors * 4);
    let mut candidates: Vec<(f64, f64, f64)> = (0..n_d)
        .into_par_iter()
        .flat_map_iter(|j| {
            let d = TAU * j as f64 / n_d as f64;
            (0..=n_b).map(move |i| (b_max * i as f64 / n_b as f64, d))
        })
        .map(|(b, d)| (b, d, cost(b, d)))
        .collect();

    if let Some(psi) = reflection_axis(p, y) {
        let r_lo = ((eta - 3.0).max(0.0) * std::f64::consts::FRAC_PI_2 / k).max(0.0);
        let n_r = (((total_max - r_lo) * k / 0.25).ceil() as usize).clamp(4, 400);
        let dpsi = 0.25 / (k * total_max.max(1e-30));
        let n_psi = 4i32;
        let mut extra = Vec::new();
        for axis in [psi, psi + std::f64::consts::PI] {
            for s in -n_psi..=n_psi {
                let angle = axis + s as f64 * dpsi.min(0.05);
                for i in 0..=n_r {
                    let r = r_lo + (total_max - r_lo) * i as f64 / n_r as f64;
                    extra.push(model.response_from_total(r, angle));
                }
            }
        }
        candidates.par_extend(extra.into_par_iter().map(|(b, d)| (b, d, cost(b, d))));
    }

    let mut best_per_sector: Vec<Option<(f64, f64, f64)>> = vec![None; sectors];
    for &(b, d, c) in &candidates {
        let s = ((wrap_to_tau(d) / TAU * sectors as f64) as usize).min(sectors - 1);
        match best_per_sector[s] {
            Some((_, _, cb)) if cb <= c => {}
            _ => best_per_sector[s] = Some((b, d, c)),
        }
    }
    let mut starts: Vec<(f64, f64)> = best_per_sector.into_iter().flatten().map(|(b, d, _)| (b, d)).collect();
    if let Some(&(b, d, _)) = candidates.iter().min_by(|a, b| a.2.total_cmp(&b.2)) {
        starts.push((b, d));
    }
    // a zero-amplitude start leaves δ without gradient; nudge it
    for s in &mut starts {
        if s.0 == 0.0 {
            s.0 = 0.05 / k;
        }
    }
    starts
}
