// Copyright 2026 The sipht-rs Authors
// SPDX-License-Identifier: Apache-2.0

use std::f64::consts::{FRAC_PI_2, PI};

use sipht_core::analytic::{CurveMode, SweepParameter, SweepSpec};
use sipht_core::estimation::{delta_from_symmetry, fit_contrast_curve, null_search_b_mod, NullSearchOptions};
use sipht_core::GAMMA_NV;
use sipht_core::io::{read_curve, write_curve};
use sipht_core::scenarios::{NoiseSpec, Scenario};
use sipht_core::{FieldConfig, ModulationConfig, SequenceSpec};

fn angle_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * PI);
    d.min(2.0 * PI - d)
}

#[test]
fn noisy_curve_survives_disk_and_fits() {
    let mut s = Scenario::example();
    s.cfg.b_s = 3e-6;
    s.cfg.delta = -2.2;
    s.sweep = SweepSpec::full_period_p(96);
    s.noise = Some(NoiseSpec { sigma: 0.005, seed: 4 });
    let curve = s.run().unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("curve.csv");
    write_curve(&curve, &path).unwrap();
    let back = read_curve(&path).unwrap();
    assert_eq!(back.contrasts(), curve.contrasts());
    assert_eq!(back.cfg, curve.cfg);

    let fit = fit_contrast_curve(&back, &back.readout, 1).unwrap();
    assert!(fit.delta_identifiable);
    assert!(angle_gap(fit.delta_hat, s.cfg.delta) < 4.0 * fit.delta_std() + 1e-3, "{fit:?}");
    assert!((fit.b_s_hat - s.cfg.b_s).abs() < 4.0 * fit.b_s_std() + 1e-9);
    let sym = delta_from_symmetry(&back).unwrap();
    assert!(angle_gap(sym.delta, s.cfg.delta) < 2.0 * PI / 96.0, "{sym:?}");
}

#[test]
fn finite_pulse_null_sits_at_drive_amplitude() {
    let b_d = 100e-6;
    let omega = GAMMA_NV * b_d / 0.81;
    let cfg = FieldConfig { b_dc: 0.0, b_d, b_s: 0.0, f_d: 152e3, delta: 0.0 };
    let mut sequence = SequenceSpec::hahn(0.0);
    sequence.rabi = Some(omega);
    let oracle = |b_mod: f64| {
        let s = Scenario {
            name: "null".into(),
            cfg,
            modulation: ModulationConfig { b_d_mod: b_mod, ..ModulationConfig::default() },
            sequence,
            sweep: SweepSpec { parameter: SweepParameter::POffset, start: FRAC_PI_2, stop: FRAC_PI_2 + PI, count: 2, endpoint: true },
            mode: CurveMode::NumericFinite,
            ..Scenario::example()
        };
        let c = s.run().unwrap().contrasts();
        c[0] - c[1]
    };
    let found = null_search_b_mod(oracle, (0.6 * b_d, 1.4 * b_d), &NullSearchOptions::default()).unwrap();
    assert!((found.b_mod - b_d).abs() < 1e-3 * b_d, "{found:?}");
}
