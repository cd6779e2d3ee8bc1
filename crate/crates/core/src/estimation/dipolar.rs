// Copyright 2026 The sipht-rs Authors
// SPDX-License-Identifier: Apache-2.0

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::lm::{self, LmSettings};
use super::EstimationError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DipolarWarning {
    /// The field does not decrease strictly with distance.
    NonMonotonic,
}

/// `b_s(d) = A / (d + d0)³`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DipolarFit {
    /// A (T·m³).
    pub amplitude: f64,
    /// d0 (m), non-negative.
    pub d0_hat: f64,
    /// RMS residual relative to the largest field in the data.
    pub residual_norm: f64,
    pub warnings: Vec<DipolarWarning>,
}

impl DipolarFit {
    pub fn predict(&self, d: f64) -> f64 {
        dipolar_field(self.amplitude, self.d0_hat, d)
    }
}

/// `b_s(d) = A / (d + d0)^n` with a free exponent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub amplitude: f64,
    pub d0_hat: f64,
    pub exponent: f64,
    pub residual_norm: f64,
}

pub fn dipolar_field(amplitude: f64, d0: f64, d: f64) -> f64 {
    amplitude / (d + d0).powi(3)
}

/// Points sorted by distance, in units of the largest distance and field.
struct Normalized {
    x: Vec<f64>,
    y: Vec<f64>,
    d_scale: f64,
    b_scale: f64,
    warnings: Vec<DipolarWarning>,
}

fn normalize(points: &[(f64, f64)]) -> Result<Normalized, EstimationError> {
    if points.len() < 3 {
        return Err(EstimationError::InsufficientData(format!(
            "dipolar fit needs at least 3 points, got {}",
            points.len()
        )));
    }
    if points.iter().any(|&(d, b)| !(d.is_finite() && d > 0.0 && b.is_finite() && b > 0.0)) {
        return Err(EstimationError::InvalidInput("distances and fields must be finite and positive".into()));
    }
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    if sorted.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(EstimationError::InvalidInput("distances must be distinct".into()));
    }
    let mut warnings = Vec::new();
    if sorted.windows(2).any(|w| w[1].1 >= w[0].1) {
        warnings.push(DipolarWarning::NonMonotonic);
    }
    let d_scale = sorted[sorted.len() - 1].0;
    let b_scale = sorted.iter().map(|p| p.1).fold(0.0, f64::max);
    Ok(Normalized {
        x: sorted.iter().map(|p| p.0 / d_scale).collect(),
        y: sorted.iter().map(|p| p.1 / b_scale).collect(),
        d_scale,
        b_scale,
        warnings,
    })
}

/// Least-squares fit of `A/(d + d0)³` with `d0 ≥ 0`, started from the
/// exact solution through the nearest and farthest points.
pub fn fit_dipolar(points: &[(f64, f64)]) -> Result<DipolarFit, EstimationError> {
    let data = normalize(points)?;
    let (x, y) = (&data.x, &data.y);
    let n = x.len();
    let (x_near, y_near, x_far, y_far) = (x[0], y[0], x[n - 1], y[n - 1]);

    // log-linear on the two extreme points: ln y = ln a − 3 ln(x + e)
    let r = (y_near / y_far).cbrt();
    let e0 = if r > 1.0 { ((x_far - r * x_near) / (r - 1.0)).max(0.0) } else { 0.0 };
    let a0 = y_near * (x_near + e0).powi(3);

    let residual = |v: &DVector<f64>| DVector::from_iterator(n, x.iter().zip(y).map(|(&xi, &yi)| v[0] / (xi + v[1]).powi(3) - yi));
    let out = lm::minimize(residual, |v| v[1] = v[1].max(0.0), DVector::from_vec(vec![a0, e0]), &LmSettings::default());
    let rms = (out.cost / n as f64).sqrt();
    if !out.converged || !out.params.iter().all(|v| v.is_finite()) || out.params[0] <= 0.0 {
        return Err(EstimationError::NonConvergence { best_residual: rms });
    }
    Ok(DipolarFit {
        amplitude: out.params[0] * data.b_scale * data.d_scale.powi(3),
        d0_hat: out.params[1] * data.d_scale,
        residual_norm: rms,
        warnings: data.warnings,
    })
}

/// Free-exponent variant of [`fit_dipolar`], started from the cubic fit.
pub fn fit_power_law(points: &[(f64, f64)]) -> Result<PowerLawFit, EstimationError> {
    let cubic = fit_dipolar(points)?;
    let data = normalize(points)?;
    let (x, y) = (&data.x, &data.y);
    let n = x.len();
    let a0 = cubic.amplitude / (data.b_scale * data.d_scale.powi(3));
    let e0 = cubic.d0_hat / data.d_scale;
    let residual = |v: &DVector<f64>| {
        DVector::from_iterator(n, x.iter().zip(y).map(|(&xi, &yi)| v[0] * (xi + v[1]).powf(-v[2]) - yi))
    };
    let out = lm::minimize(residual, |v| v[1] = v[1].max(0.0), DVector::from_vec(vec![a0, e0, 3.0]), &LmSettings::default());
    let rms = (out.cost / n as f64).sqrt();
    if !out.converged || !out.params.iter().all(|v| v.is_finite()) {
        return Err(EstimationError::NonConvergence { best_residual: rms });
    }
    let exponent = out.params[2];
    Ok(PowerLawFit {
        amplitude: out.params[0] * data.b_scale * data.d_scale.powf(exponent),
        d0_hat: out.params[1] * data.d_scale,
        exponent,
        residual_norm: rms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    const DISTANCES: [f64; 5] = [1e-3, 2e-3, 4e-3, 6e-3, 8e-3];

    fn synth(a: f64, d0: f64) -> Vec<(f64, f64)> {
        DISTANCES.iter().map(|&d| (d, dipolar_field(a, d0, d))).collect()
    }

    #[test]
    fn noiseless_round_trip() {
        let fit = fit_dipolar(&synth(1e-14, 2e-3)).unwrap();
        assert!((fit.amplitude - 1e-14).abs() / 1e-14 < 1e-6, "{fit:?}");
        assert!((fit.d0_hat - 2e-3).abs() / 2e-3 < 1e-6);
        assert!(fit.warnings.is_empty());
        assert!(fit.predict(1e-3) > fit.predict(2e-3));
    }

    #[test]
    fn zero_offset_stays_on_bound() {
        let fit = fit_dipolar(&synth(3e-15, 0.0)).unwrap();
        assert!(fit.d0_hat.abs() < 1e-12, "{fit:?}");
        assert!((fit.amplitude - 3e-15).abs() / 3e-15 < 1e-6);
    }

    #[test]
    fn free_exponent_is_three() {
        let fit = fit_power_law(&synth(1e-14, 2e-3)).unwrap();
        assert!((fit.exponent - 3.0).abs() < 1e-6, "{fit:?}");
    }

    #[test]
    fn two_points_rejected() {
        assert!(matches!(
            fit_dipolar(&synth(1e-14, 2e-3)[..2]),
            Err(EstimationError::InsufficientData(_))
        ));
    }

    #[test]
    fn non_monotonic_warns_but_fits() {
        let mut pts = synth(1e-14, 2e-3);
        pts[3].1 = pts[2].1 * 1.1;
        let fit = fit_dipolar(&pts).unwrap();
        assert_eq!(fit.warnings, vec![DipolarWarning::NonMonotonic]);
        assert!(fit.d0_hat >= 0.0);
    }

    #[test]
    fn noisy_offset_within_twenty_percent() {
        let normal = Normal::new(0.0, 0.05).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2026);
        let mut estimates = Vec::new();
        for _ in 0..100 {
            let pts: Vec<(f64, f64)> = synth(1e-14, 2e-3)
                .into_iter()
                .map(|(d, b)| (d, b * (1.0 + normal.sample(&mut rng))))
                .collect();
            estimates.push(fit_dipolar(&pts).unwrap().d0_hat);
        }
        let mean = estimates.iter().sum::<f64>() / estimates.len() as f64;
        assert!((mean - 2e-3).abs() / 2e-3 < 0.2, "mean d0 {mean}");
    }

    proptest! {
        #[test]
        fn residuals_scale_covariant(s in 0.1..10.0f64, d0 in 0.0..5e-3f64, noise in prop::collection::vec(-0.03..0.03f64, 5)) {
            let pts: Vec<(f64, f64)> = synth(1e-14, d0).into_iter().zip(&noise).map(|((d, b), e)| (d, b * (1.0 + e))).collect();
            let scaled: Vec<(f64, f64)> = pts.iter().map(|&(d, b)| (d * s, b)).collect();
            let f1 = fit_dipolar(&pts).unwrap();
            let f2 = fit_dipolar(&scaled).unwrap();
            prop_assert!((f1.residual_norm - f2.residual_norm).abs() <= 1e-9 * f1.residual_norm.max(1e-12));
            prop_assert!((f2.d0_hat - s * f1.d0_hat).abs() <= 1e-6 * (s * f1.d0_hat).max(1e-9));
            prop_assert!((f2.amplitude - s.powi(3) * f1.amplitude).abs() <= 1e-6 * s.powi(3) * f1.amplitude);
        }
    }
}
