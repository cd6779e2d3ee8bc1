// Copyright 2026 The sipht-rs Authors
// SPDX-License-Identifier: Apache-2.0

use std::f64::consts::PI;

use crate::GAMMA_NV;

/// Number of local maxima of one period of a periodically sampled curve.
///
/// The samples are smoothed with a circular three-point mean and then
/// strict three-point maxima are counted, so a single noisy sample does not
/// split one peak into two.
pub fn count_local_maxima(values: &[f64]) -> usize {
    let n = values.len();
    if n < 3 {
        return 0;
    }
    let at = |i: isize| values[i.rem_euclid(n as isize) as usize];
    let smooth: Vec<f64> = (0..n as isize).map(|i| (at(i - 1) + at(i) + at(i + 1)) / 3.0).collect();
    let (lo, hi) = smooth
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    // ignore rounding-level ripple on a flat curve
    let floor = 1e-12 * (hi - lo).max(hi.abs().max(lo.abs()) * 1e-3);
    (0..n)
        .filter(|&i| {
            let v = smooth[i];
            let prev = smooth[(i + n - 1) % n];
            let next = smooth[(i + 1) % n];
            v - prev > floor && v - next > floor
        })
        .count()
}

/// Bounds on the response amplitude from the maxima count `eta` of a
/// `p` sweep covering `n_pi` drive periods:
/// `(max(0, (η−2)π²f_d/(4γ)), ηπ²f_d/(4γ)) / n_pi`.
pub fn bs_bounds_from_maxima(eta: usize, f_d: f64, n_pi: u32) -> (f64, f64) {
    let unit = PI * PI * f_d / (4.0 * GAMMA_NV * n_pi.max(1) as f64);
    let lower = (eta as f64 - 2.0).max(0.0) * unit;
    (lower, eta as f64 * unit)
}
