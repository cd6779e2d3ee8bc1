// Copyright 2026 The sipht-rs Authors
// SPDX-License-Identifier: Apache-2.0

//! `sipht`: simulate, sweep, fit and regenerate the reference figures.
//!
//! Each subcommand reads an optional JSON config, applies flag overrides and
//! writes CSV data plus a JSON sidecar. Errors exit with status 1.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;

use sipht_core::analytic::CurveMode;
use sipht_core::estimation::{
    bs_bounds_from_maxima, count_local_maxima, delta_from_symmetry, fit_contrast_curve_with, FitOptions, FitResult,
    SymmetryReadout,
};
use sipht_core::io::{read_curve, read_curve_with, read_json, write_curve, write_json, CurveMetadata};
use sipht_core::scenarios::{self, Scenario, SimulateConfig, WORKERS_ENV};
use sipht_core::{Error, FieldConfig, ModulationConfig, SequenceKind, SequenceSpec};

#[derive(Parser)]
#[command(name = "sipht", version, about = "SIPHT dynamical-decoupling magnetometry toolkit")]
struct Cli {
    /// Worker threads for sweeps (defaults to all cores).
    #[arg(long, global = true, env = WORKERS_ENV)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Propagate one sequence and write its trajectory.
    Simulate(SimulateArgs),
    /// Evaluate a contrast curve over a parameter sweep.
    Sweep(SweepArgs),
    /// Fit a contrast curve read from CSV.
    Fit(FitArgs),
    /// SIPHT and conventional p sweeps.
    Fig2(Fig2Args),
    /// Relative contrast against normalized drive strength.
    Fig3(Fig3Args),
    /// Drive rejection.
    Fig4a(Fig4aArgs),
    /// Phase-delay recovery over the full range.
    Fig4b(Fig4bArgs),
    /// Per-material phase delay and distance scaling.
    Fig5(Fig5Args),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Analytic,
    NumericIdeal,
    NumericFinite,
}

impl From<ModeArg> for CurveMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Analytic => CurveMode::Analytic,
            ModeArg::NumericIdeal => CurveMode::NumericIdeal,
            ModeArg::NumericFinite => CurveMode::NumericFinite,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Hahn,
    Cpmg,
    Xy8,
}

impl From<KindArg> for SequenceKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Hahn => SequenceKind::Hahn,
            KindArg::Cpmg => SequenceKind::Cpmg,
            KindArg::Xy8 => SequenceKind::Xy8,
        }
    }
}

/// Field and modulation overrides (SI units, radians).
#[derive(Args, Default)]
struct FieldFlags {
    #[arg(long)]
    b_d: Option<f64>,
    #[arg(long)]
    b_s: Option<f64>,
    #[arg(long)]
    f_d: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    b_dc: Option<f64>,
    /// Set b_d′ equal to b_d.
    #[arg(long, conflicts_with_all = ["b_d_mod", "conventional"])]
    sipht: bool,
    /// Disable the modulation (b_d′ = b_s′ = 0).
    #[arg(long, conflicts_with = "b_d_mod")]
    conventional: bool,
    #[arg(long)]
    b_d_mod: Option<f64>,
    #[arg(long)]
    b_s_mod: Option<f64>,
    #[arg(long)]
    delta_mod: Option<f64>,
}

impl FieldFlags {
    fn apply(&self, cfg: &mut FieldConfig, m: &mut ModulationConfig) {
        set(&mut cfg.b_d, self.b_d);
        set(&mut cfg.b_s, self.b_s);
        set(&mut cfg.f_d, self.f_d);
        set(&mut cfg.delta, self.delta);
        set(&mut cfg.b_dc, self.b_dc);
        if self.conventional {
            *m = ModulationConfig::conventional();
        }
        if self.sipht {
            m.b_d_mod = cfg.b_d;
        }
        set(&mut m.b_d_mod, self.b_d_mod);
        set(&mut m.b_s_mod, self.b_s_mod);
        set(&mut m.delta_mod, self.delta_mod);
    }
}

#[derive(Args, Default)]
struct SequenceFlags {
    #[arg(long, value_enum)]
    kind: Option<KindArg>,
    #[arg(long)]
    n_pi: Option<u32>,
    /// Pulse-train offset p (rad).
    #[arg(long)]
    p: Option<f64>,
    /// Angular Rabi strength (rad/s) for finite pulses.
    #[arg(long)]
    rabi: Option<f64>,
    /// Readout phase φ between the π/2 pulses (rad).
    #[arg(long)]
    varphi: Option<f64>,
}

impl SequenceFlags {
    fn apply(&self, seq: &mut SequenceSpec, varphi: &mut f64) {
        if let Some(k) = self.kind {
            seq.kind = k.into();
        }
        set(&mut seq.n_pi, self.n_pi);
        set(&mut seq.p_offset, self.p);
        if self.rabi.is_some() {
            seq.rabi = self.rabi;
        }
        set(varphi, self.varphi);
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    step_scale: Option<f64>,
    #[arg(long)]
    record_steps: bool,
    #[command(flatten)]
    fields: FieldFlags,
    #[command(flatten)]
    sequence: SequenceFlags,
}

#[derive(Args)]
struct SweepArgs {
    /// Scenario JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output CSV; the sidecar goes next to it.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    start: Option<f64>,
    #[arg(long)]
    stop: Option<f64>,
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    step_scale: Option<f64>,
    #[command(flatten)]
    fields: FieldFlags,
    #[command(flatten)]
    sequence: SequenceFlags,
}

#[derive(Args)]
struct FitArgs {
    /// Curve CSV with a `param,contrast` header.
    #[arg(long)]
    input: PathBuf,
    /// Curve metadata JSON, for data without a sidecar.
    #[arg(long)]
    meta: Option<PathBuf>,
    /// Drive periods covered by the sequence (defaults to the metadata).
    #[arg(long)]
    n_pi: Option<u32>,
    /// Residual drive amplitude b_d − b_d′ (T), defaults to the metadata.
    #[arg(long)]
    leakage: Option<f64>,
    /// Output JSON (defaults to `<input>_fit.json`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FigCommon {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct Fig2Args {
    #[command(flatten)]
    common: FigCommon,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Single angular Rabi strength (rad/s) instead of the configured list.
    #[arg(long)]
    rabi: Option<f64>,
}

#[derive(Args)]
struct Fig3Args {
    #[command(flatten)]
    common: FigCommon,
    #[arg(long)]
    count: Option<usize>,
    /// Normalized drive strengths γb_d/Ω, evaluated at --rabi.
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<f64>>,
    #[arg(long, default_value_t = std::f64::consts::TAU * 4e6)]
    rabi: f64,
}

#[derive(Args)]
struct Fig4aArgs {
    #[command(flatten)]
    common: FigCommon,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    mismatch: Option<f64>,
    #[arg(long)]
    count: Option<usize>,
}

#[derive(Args)]
struct Fig4bArgs {
    #[command(flatten)]
    common: FigCommon,
    #[arg(long)]
    seeds: Option<u64>,
    #[arg(long)]
    deltas: Option<usize>,
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long)]
    base_seed: Option<u64>,
}

#[derive(Args)]
struct Fig5Args {
    #[command(flatten)]
    common: FigCommon,
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

fn set<T: Copy>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, Error> {
    match path {
        Some(p) => Ok(read_json(p)?),
        None => Ok(T::default()),
    }
}

fn report<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), Error> {
    let path = scenarios::write_report(dir, name, value)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn simulate(args: SimulateArgs) -> Result<(), Error> {
    let mut c: SimulateConfig = load(args.config.as_deref())?;
    args.fields.apply(&mut c.cfg, &mut c.modulation);
    args.sequence.apply(&mut c.sequence, &mut c.readout.varphi);
    set(&mut c.step_scale, args.step_scale);
    c.record_steps |= args.record_steps;
    let (summary, traj) = scenarios::run_simulate(&c)?;
    fs::create_dir_all(&args.out).map_err(|e| Error::Config(format!("{}: {e}", args.out.display())))?;
    let csv_path = args.out.join("trajectory.csv");
    let file = fs::File::create(&csv_path).map_err(|e| Error::Config(format!("{}: {e}", csv_path.display())))?;
    traj.write_csv(file)?;
    #[derive(Serialize)]
    struct Out<'a> {
        config: &'a SimulateConfig,
        result: &'a scenarios::SimulateReport,
    }
    report(&args.out, "simulate", &Out { config: &c, result: &summary })?;
    println!("{}", serde_json::to_string(&summary).expect("serializable"));
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<(), Error> {
    let mut s: Scenario = match &args.config {
        Some(p) => read_json(p)?,
        None => Scenario::example(),
    };
    args.fields.apply(&mut s.cfg, &mut s.modulation);
    args.sequence.apply(&mut s.sequence, &mut s.readout.varphi);
    if let Some(m) = args.mode {
        s.mode = m.into();
    }
    set(&mut s.sweep.count, args.count);
    set(&mut s.sweep.start, args.start);
    set(&mut s.sweep.stop, args.stop);
    set(&mut s.step_scale, args.step_scale);
    if let Some(sigma) = args.noise_sigma {
        s.noise = Some(scenarios::NoiseSpec {
            sigma,
            seed: args.seed.unwrap_or(0),
        });
    } else if let (Some(seed), Some(n)) = (args.seed, s.noise.as_mut()) {
        n.seed = seed;
    }
    let out = args
        .out
        .or_else(|| s.output_path.clone())
        .unwrap_or_else(|| PathBuf::from(format!("{}.csv", if s.name.is_empty() { "sweep" } else { &s.name })));
    let curve = s.run()?;
    write_curve(&curve, &out)?;
    eprintln!("wrote {} ({} samples)", out.display(), curve.len());
    Ok(())
}

fn fit(args: FitArgs) -> Result<(), Error> {
    let curve = match &args.meta {
        Some(m) => read_curve_with(&args.input, read_json::<CurveMetadata>(m)?)?,
        None => read_curve(&args.input)?,
    };
    let n_pi = args.n_pi.unwrap_or_else(|| curve.sequence.hahn_equivalents().max(1));
    let options = FitOptions {
        leakage: args.leakage,
        ..FitOptions::default()
    };
    let fit = fit_contrast_curve_with(&curve, &curve.readout, n_pi, &options)?;
    let maxima = count_local_maxima(&curve.contrasts());

    #[derive(Serialize)]
    struct Out {
        fit: FitResult,
        symmetry: Option<SymmetryReadout>,
        symmetry_error: Option<String>,
        maxima: usize,
        bs_bounds: (f64, f64),
    }
    let (symmetry, symmetry_error) = match delta_from_symmetry(&curve) {
        Ok(s) => (Some(s), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let out = Out {
        bs_bounds: bs_bounds_from_maxima(maxima, curve.cfg.f_d, n_pi),
        fit,
        symmetry,
        symmetry_error,
        maxima,
    };
    let path = args.out.unwrap_or_else(|| {
        let stem = args.input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        args.input.with_file_name(format!("{stem}_fit.json"))
    });
    write_json(&out, &path)?;
    eprintln!("wrote {}", path.display());
    println!("{}", serde_json::to_string(&out.fit).expect("serializable"));
    Ok(())
}

fn fig2(args: Fig2Args) -> Result<(), Error> {
    let mut c: scenarios::Fig2Config = load(args.common.config.as_deref())?;
    set(&mut c.count, args.count);
    if let Some(m) = args.mode {
        c.mode = m.into();
    }
    if let Some(r) = args.rabi {
        c.omegas = vec![r];
    }
    let pairs = scenarios::run_fig2(&c)?;
    scenarios::write_fig2(&args.common.out, &pairs)?;
    for p in &pairs {
        println!(
            "omega/2π = {:.2} MHz: symmetry δ = {:.4} rad (score {:.3}), maxima {}",
            p.omega / std::f64::consts::TAU / 1e6,
            p.symmetry.delta,
            p.symmetry.score,
            p.maxima
        );
    }
    Ok(())
}

fn fig3(args: Fig3Args) -> Result<(), Error> {
    let mut c: scenarios::Fig3Config = load(args.common.config.as_deref())?;
    if let Some(grid) = &args.grid {
        c.pairs = scenarios::Fig3Config::grid(grid, args.rabi).pairs;
    }
    set(&mut c.count, args.count);
    let rows = scenarios::run_fig3(&c)?;
    scenarios::write_fig3(&args.common.out, &rows, &c)?;
    for r in &rows {
        println!("γb_d/Ω = {:.3}: ratio {:.3}", r.normalized_drive, r.ratio);
    }
    Ok(())
}

fn fig4a(args: Fig4aArgs) -> Result<(), Error> {
    let mut c: scenarios::Fig4aConfig = load(args.common.config.as_deref())?;
    if let Some(m) = args.mode {
        c.mode = m.into();
    }
    set(&mut c.mismatch, args.mismatch);
    set(&mut c.count, args.count);
    let r = scenarios::run_fig4a(&c)?;
    scenarios::write_fig4a(&args.common.out, &r, &c)?;
    println!("leakage {:e} (rejection {:.4}%)", r.leakage, 100.0 * (1.0 - r.leakage));
    Ok(())
}

fn fig4b(args: Fig4bArgs) -> Result<(), Error> {
    let mut c: scenarios::Fig4bConfig = load(args.common.config.as_deref())?;
    set(&mut c.seeds, args.seeds);
    set(&mut c.deltas, args.deltas);
    set(&mut c.noise_sigma, args.noise_sigma);
    set(&mut c.base_seed, args.base_seed);
    let r = scenarios::run_fig4b(&c)?;
    scenarios::write_fig4b(&args.common.out, &r, &c)?;
    let worst = r.summary.iter().map(|s| s.mean_residual.abs()).fold(0.0, f64::max);
    println!("{} fits, largest mean δ residual {:.3e} rad", r.rows.len(), worst);
    Ok(())
}

fn fig5(args: Fig5Args) -> Result<(), Error> {
    let mut c: scenarios::Fig5Config = load(args.common.config.as_deref())?;
    if let Some(sigma) = args.noise_sigma {
        c.noise = Some(scenarios::NoiseSpec {
            sigma,
            seed: args.seed.unwrap_or(0),
        });
    }
    let out = scenarios::run_fig5(&c)?;
    scenarios::write_fig5(&args.common.out, &out, &c)?;
    for m in &out {
        println!(
            "{}: δ = {:.4}·2π, d0 = {:.3e} m, exponent {:.3}",
            m.name,
            m.delta_fit / std::f64::consts::TAU,
            m.dipolar.d0_hat,
            m.power_law.exponent
        );
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    let workers = cli.workers;
    if workers == Some(0) {
        return Err(Error::Config(format!("{WORKERS_ENV} / --workers must be positive")));
    }
    scenarios::with_workers(workers, move || match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Sweep(a) => sweep(a),
        Command::Fit(a) => fit(a),
        Command::Fig2(a) => fig2(a),
        Command::Fig3(a) => fig3(a),
        Command::Fig4a(a) => fig4a(a),
        Command::Fig4b(a) => fig4b(a),
        Command::Fig5(a) => fig5(a),
    })?
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
