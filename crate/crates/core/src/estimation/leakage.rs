// Copyright 2026 The sipht-rs Authors
// SPDX-License-Identifier: Apache-2.0

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::contrast_fit::{initial_points, PhaseModel};
use super::lm::{self, LmSettings};
use super::{check_period_sweep, node_offsets, EstimationError};
use crate::analytic::ContrastCurve;

/// Total in-sweep field phasor of a `p` sweep: the phase is
/// `K·(x cos p + y sin p)` on top of any secondary modulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quadratures {
    /// In-phase component (T).
    pub x: f64,
    /// Quadrature component (T).
    pub y: f64,
    /// Fitted background contrast.
    pub c0: f64,
    pub residual_norm: f64,
}

impl Quadratures {
    pub fn amplitude(&self) -> f64 {
        self.x.hypot(self.y)
    }
}

/// Fits the total field phasor of a `p` sweep with `C*` and `φ` taken from
/// the curve and `C0` free. A constant curve gives exactly zero.
pub fn fit_quadratures(curve: &ContrastCurve) -> Result<Quadratures, EstimationError> {
    check_period_sweep(curve, 8)?;
    let p = node_offsets(curve)?;
    let y = curve.contrasts();
    let ro = curve.readout;
    let n_pi = curve.sequence.hahn_equivalents().max(1);

    if y.iter().all(|&v| v == y[0]) {
        return Ok(Quadratures {
            x: 0.0,
            y: 0.0,
            c0: y[0] - ro.c_star * ro.varphi.cos(),
            residual_norm: 0.0,
        });
    }

    let model = PhaseModel::for_curve(curve, n_pi, 0.0);
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    // the mean of cos(φ + varphi) over a period is not known up front; start
    // from the background implied by the curve mean at zero phase
    let c0_start = mean - ro.c_star * ro.varphi.cos();
    let trig: Vec<(f64, f64)> = p.iter().map(|v| v.sin_cos()).collect();
    let cost = |b: f64, d: f64| -> f64 {
        model
            .phases(&trig, b, d)
            .zip(&y)
            .map(|(phi, &yi)| (c0_start + ro.c_star * (phi + ro.varphi).cos() - yi).powi(2))
            .sum()
    };
    let residual = |v: &DVector<f64>| -> DVector<f64> {
        DVector::from_iterator(
            p.len(),
            model
                .phases(&trig, v[0], v[1])
                .zip(&y)
                .map(|(phi, &yi)| v[2] + ro.c_star * (phi + ro.varphi).cos() - yi),
        )
    };
    let starts = initial_points(&model, &p, &y, 8, &cost);
    let settings = LmSettings::default();
    let best = starts
        .par_iter()
        .map(|&(b, d)| lm::minimize(&residual, |_| {}, DVector::from_vec(vec![b, d, c0_start]), &settings))
        .min_by(|a, b| a.cost.total_cmp(&b.cost))
        .expect("at least one start");
    let rms = (best.cost / p.len() as f64).sqrt();
    if !best.converged || !best.params.iter().all(|v| v.is_finite()) {
        return Err(EstimationError::NonConvergence { best_residual: rms });
    }
    let (b, d) = (best.params[0], best.params[1]);
    Ok(Quadratures {
        x: b * d.cos(),
        y: b * d.sin(),
        c0: best.params[2],
        residual_norm: rms,
    })
}

fn same_fields(a: &ContrastCurve, b: &ContrastCurve) -> Result<(), EstimationError> {
    let (x, y) = (&a.cfg, &b.cfg);
    if x.b_d != y.b_d || x.b_s != y.b_s || x.f_d != y.f_d || x.delta != y.delta {
        return Err(EstimationError::InvalidInput("curves come from different field configurations".into()));
    }
    Ok(())
}

/// Residual drive-phase fraction of a SIPHT sweep relative to a
/// conventional sweep of the same fields: the ratio of fitted phasor
/// amplitudes. Assumes the response field is absent; see
/// [`measure_leakage_with_reference`] otherwise.
pub fn measure_leakage(curve_sipht: &ContrastCurve, curve_conventional: &ContrastCurve) -> Result<f64, EstimationError> {
    same_fields(curve_sipht, curve_conventional)?;
    let s = fit_quadratures(curve_sipht)?;
    let c = fit_quadratures(curve_conventional)?;
    ratio((s.x, s.y), (c.x, c.y), curve_conventional)
}

/// Like [`measure_leakage`], subtracting the phasor of a drive-free
/// reference sweep from both before taking the ratio.
pub fn measure_leakage_with_reference(
    curve_sipht: &ContrastCurve,
    curve_conventional: &ContrastCurve,
    curve_reference: &ContrastCurve,
) -> Result<f64, EstimationError> {
    same_fields(curve_sipht, curve_conventional)?;
    let s = fit_quadratures(curve_sipht)?;
    let c = fit_quadratures(curve_conventional)?;
    let r = fit_quadratures(curve_reference)?;
    ratio((s.x - r.x, s.y - r.y), (c.x - r.x, c.y - r.y), curve_conventional)
}

fn ratio(s: (f64, f64), c: (f64, f64), conv: &ContrastCurve) -> Result<f64, EstimationError> {
    let conv_amp = c.0.hypot(c.1);
    let k = crate::analytic::phase_per_tesla(conv.cfg.f_d, conv.sequence.hahn_equivalents().max(1));
    if !(k * conv_amp > 1e-9) {
        return Err(EstimationError::UndefinedLeakage);
    }
    Ok(s.0.hypot(s.1) / conv_amp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::{magnetometry_curve, CurveMode, ReadoutModel, SweepSpec};
    use crate::fields::{FieldConfig, ModulationConfig};
    use crate::sequence::SequenceSpec;

    fn curve(cfg: &FieldConfig, m: ModulationConfig, n: usize) -> ContrastCurve {
        magnetometry_curve(
            &SweepSpec::full_period_p(n),
            cfg,
            &m,
            &ReadoutModel::new(0.1, 0.05, std::f64::consts::FRAC_PI_2),
            &SequenceSpec::hahn(0.0),
            CurveMode::Analytic,
            None,
        )
        .unwrap()
    }

    #[test]
    fn exact_null_is_zero() {
        let cfg = FieldConfig::new(102e-6, 0.0, 152e3, 0.0).unwrap();
        let s = curve(&cfg, ModulationConfig::sipht(&cfg), 512);
        let c = curve(&cfg, ModulationConfig::conventional(), 512);
        assert_eq!(measure_leakage(&s, &c).unwrap(), 0.0);
    }

    #[test]
    fn conventional_quadratures() {
        let cfg = FieldConfig::new(102e-6, 0.0, 152e3, 0.0).unwrap();
        let q = fit_quadratures(&curve(&cfg, ModulationConfig::conventional(), 512)).unwrap();
        assert!((q.x - 102e-6).abs() < 1e-12 && q.y.abs() < 1e-12, "{q:?}");
        assert!((q.c0 - 0.1).abs() < 1e-9);
    }

    #[test]
    fn mismatch_fraction() {
        let cfg = FieldConfig::new(102e-6, 0.0, 152e3, 0.0).unwrap();
        let m = ModulationConfig {
            b_d_mod: 102e-6 * 0.999,
            ..ModulationConfig::sipht(&cfg)
        };
        let frac = measure_leakage(&curve(&cfg, m, 512), &curve(&cfg, ModulationConfig::conventional(), 512)).unwrap();
        assert!((frac - 1e-3).abs() < 1e-9, "{frac}");
    }

    #[test]
    fn reference_removes_response() {
        let cfg = FieldConfig::new(60e-6, 3e-6, 152e3, 1.2).unwrap();
        let no_drive = FieldConfig { b_d: 0.0, ..cfg };
        let m = ModulationConfig {
            b_d_mod: 60e-6 * 0.99,
            ..ModulationConfig::sipht(&cfg)
        };
        let s = curve(&cfg, m, 512);
        let c = curve(&cfg, ModulationConfig::conventional(), 512);
        let mut r = curve(&no_drive, ModulationConfig::conventional(), 512);
        r.cfg = cfg;
        let frac = measure_leakage_with_reference(&s, &c, &r).unwrap();
        assert!((frac - 0.01).abs() < 1e-8, "{frac}");
    }

    #[test]
    fn zero_conventional_amplitude_is_undefined() {
        let cfg = FieldConfig::new(0.0, 0.0, 152e3, 0.0).unwrap();
        let s = curve(&cfg, ModulationConfig::sipht(&cfg), 64);
        assert_eq!(measure_leakage(&s, &s.clone()), Err(EstimationError::UndefinedLeakage));
    }

    #[test]
    fn mismatched_configs_rejected() {
        let a = FieldConfig::new(100e-6, 0.0, 152e3, 0.0).unwrap();
        let b = FieldConfig::new(90e-6, 0.0, 152e3, 0.0).unwrap();
        let r = measure_leakage(&curve(&a, ModulationConfig::sipht(&a), 64), &curve(&b, ModulationConfig::conventional(), 64));
        assert!(matches!(r, Err(EstimationError::InvalidInput(_))));
    }
}
