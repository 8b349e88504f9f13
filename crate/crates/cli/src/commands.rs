//! Subcommand implementations.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::Serialize;
use serde_json::json;
use zulf_core::benchmarking::{rb_simulate, ErrorModel, GateRealization, RbConfig};
use zulf_core::control::{ControlOptions, GateSpec};
use zulf_core::dynamics::{
    acquire_fid, apply_program, fft_spectrum, stick_spectrum, ApplyOptions, PulseProgram, Spectrum, Window,
};
use zulf_core::grape::{grape_optimize, GrapeOptions, StopCriteria};
use zulf_core::io::Table;
use zulf_core::magnetometer::{response_surface, MagnetometerParams, SensorGeometry};
use zulf_core::spin::{controllability, DEFAULT_GAMMA_TOLERANCE};
use zulf_core::state::{adiabatic_state_general, adiabatic_state_two_spin, sudden_state, Ramp};
use zulf_core::{analytic, constants, Axis, DensityState, SpinModel, SpinSystem, ThermalConfig};

use crate::output::{digest_file, FileDigest, OutputDir};
use crate::{CliError, OutArgs, DEFAULT_OUT_DIR};

pub const NANO: f64 = 1e-9;
pub const MICRO: f64 = 1e-6;

pub fn load_system(path: &Path) -> Result<(SpinSystem, FileDigest), CliError> {
    let digest = digest_file(path)?;
    let system = SpinSystem::load(path).map_err(|e| CliError::from(e).context(path.display()))?;
    Ok((system, digest))
}

fn print_json<T: Serialize>(value: &T) -> Result<(), CliError> {
    println!(
        "{}",
        serde_json::to_string_pretty(value).map_err(|e| CliError::input(e.to_string()))?
    );
    Ok(())
}

fn params<T: Serialize>(args: &T) -> serde_json::Value {
    serde_json::to_value(args).unwrap_or(serde_json::Value::Null)
}

fn out_dir(out: &OutArgs) -> PathBuf {
    out.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateKind {
    /// High-field thermal polarization transferred suddenly to zero field.
    Sudden,
    /// Polarization carried adiabatically by a decaying guiding field along z.
    Adiabatic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RampKind {
    Linear,
    RaisedCosine,
}

/// Guiding-field switch-off; `duration_ms` defaults to ten periods of the
/// weakest coupling.
pub fn build_ramp(
    system: &SpinSystem,
    kind: RampKind,
    start_field: f64,
    duration_ms: Option<f64>,
    steps: Option<usize>,
) -> Ramp {
    let duration = duration_ms
        .map(|ms| ms * 1e-3)
        .unwrap_or_else(|| 10.0 / system.min_abs_coupling().unwrap_or(1.0));
    let ramp = match kind {
        RampKind::Linear => Ramp::linear(start_field, duration),
        RampKind::RaisedCosine => Ramp::raised_cosine(start_field, duration),
    };
    match steps {
        Some(n) => ramp.with_steps(n),
        None => ramp,
    }
}

/// Initial state for `kind`. Two-spin adiabatic states use the closed form
/// unless an explicit ramp is given.
pub fn prepare_state(
    system: &SpinSystem,
    kind: StateKind,
    thermal: &ThermalConfig,
    ramp: Option<Ramp>,
) -> zulf_core::Result<DensityState> {
    match (kind, ramp) {
        (StateKind::Sudden, _) => sudden_state(system, thermal),
        (StateKind::Adiabatic, None) if system.len() == 2 => adiabatic_state_two_spin(system, thermal),
        (StateKind::Adiabatic, ramp) => {
            let ramp = ramp.unwrap_or_else(|| build_ramp(system, RampKind::Linear, 1e-4, None, None));
            adiabatic_state_general(system, thermal, &ramp)
        }
    }
}

/// Strongest positive-frequency bin outside the tail of the zero-frequency line.
pub fn dominant_peak(spectrum: &Spectrum) -> Option<usize> {
    let mag = spectrum.magnitude();
    let mut k = spectrum.freqs.iter().position(|&f| f > 0.0)?;
    while k + 1 < mag.len() && mag[k + 1] <= mag[k] {
        k += 1;
    }
    let peak = (k..mag.len()).max_by(|&a, &b| mag[a].total_cmp(&mag[b]))?;
    let largest = mag.iter().cloned().fold(0.0, f64::max);
    (mag[peak] > 1e-9 * largest).then_some(peak)
}

pub fn peak_summary(spectrum: &Spectrum, peak: Option<usize>) -> serde_json::Value {
    match peak {
        Some(k) => json!({
            "peak_hz": spectrum.freqs[k],
            "peak_magnitude": spectrum.values[k].norm(),
            "magnitude_fwhm_hz": spectrum.magnitude_fwhm(k),
            "absorption_fwhm_hz": spectrum.absorption_fwhm(k),
            "power_fwhm_hz": spectrum.power_fwhm(k),
            "resolution_hz": spectrum.resolution(),
        }),
        None => json!({ "peak_hz": null }),
    }
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    /// Spin-system JSON file.
    #[arg(long)]
    pub system: PathBuf,
    /// Initial state.
    #[arg(long, value_enum, default_value_t = StateKind::Sudden)]
    pub state: StateKind,
    /// Prepolarizing field, tesla.
    #[arg(long, visible_alias = "bp-tesla", default_value_t = 1.5)]
    pub prepolarization_t: f64,
    /// Sample temperature, kelvin.
    #[arg(long, visible_alias = "temp-k", default_value_t = 300.0)]
    pub temperature_k: f64,
    /// Adiabatic ramp duration, ms (default: ten periods of the weakest coupling).
    #[arg(long)]
    pub ramp_ms: Option<f64>,
    /// Adiabatic ramp steps (default: 200 per period of the weakest coupling).
    #[arg(long)]
    pub ramp_steps: Option<usize>,
    /// Adiabatic ramp profile.
    #[arg(long, value_enum, default_value_t = RampKind::Linear)]
    pub ramp_shape: RampKind,
    /// Guiding field at the start of the ramp, tesla.
    #[arg(long, default_value_t = 1e-4)]
    pub ramp_start_t: f64,
    /// Bias field x component, nT.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub bx_nt: f64,
    /// Bias field y component, nT.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub by_nt: f64,
    /// Bias field z component, nT.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub bz_nt: f64,
    /// Detected magnetization axis.
    #[arg(long, default_value = "z")]
    pub axis: Axis,
    /// Sampling interval, s.
    #[arg(long, default_value_t = 1e-3)]
    pub dt: f64,
    /// Number of FID samples.
    #[arg(long, default_value_t = 8192)]
    pub points: usize,
    /// Exponential decay constant, s (no decay when omitted).
    #[arg(long)]
    pub t2: Option<f64>,
    /// Zero-fill the FID to this many points before the FFT.
    #[arg(long)]
    pub zerofill: Option<usize>,
    /// Exponential line broadening, Hz.
    #[arg(long)]
    pub lb_hz: Option<f64>,
    /// Pulse-program JSON applied before acquisition.
    #[arg(long)]
    pub program: Option<PathBuf>,
    #[command(flatten)]
    #[serde(skip)]
    pub out: OutArgs,
}

pub fn simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let (system, sys_digest) = load_system(&args.system)?;
    let mut inputs = vec![sys_digest];
    let model = SpinModel::new(&system)?;
    let thermal = ThermalConfig::new(args.prepolarization_t, args.temperature_k)?;
    let bias = [args.bx_nt * NANO, args.by_nt * NANO, args.bz_nt * NANO];
    let explicit = args.ramp_ms.is_some() || args.ramp_steps.is_some() || args.ramp_shape != RampKind::Linear;
    let ramp = explicit.then(|| build_ramp(&system, args.ramp_shape, args.ramp_start_t, args.ramp_ms, args.ramp_steps));
    let mut state = prepare_state(&system, args.state, &thermal, ramp)?;
    if let Some(p) = &args.program {
        inputs.push(digest_file(p)?);
        let text = std::fs::read_to_string(p).map_err(|e| CliError::input(format!("{}: {e}", p.display())))?;
        let program = PulseProgram::from_json(&text).map_err(|e| CliError::from(e).context(p.display()))?;
        state = apply_program(&state, &model, &program, bias, &ApplyOptions::default())?;
    }
    let t2 = args.t2.unwrap_or(f64::INFINITY);
    let fid = acquire_fid(&state, &model, bias, args.dt, args.points, t2, args.axis)?;
    let window = match args.lb_hz {
        Some(lb) => Window::Exponential { line_broadening_hz: lb },
        None => Window::None,
    };
    let spectrum = fft_spectrum(&fid, window, args.zerofill)?;
    let lines = stick_spectrum(&state, &model, bias, args.axis)?;

    let mut out = OutputDir::create(out_dir(&args.out))?;
    out.write_table("fid.csv", &Table::from(&fid))?;
    out.write_table("spectrum.csv", &Table::from(&spectrum))?;
    out.write_table("lines.csv", &Table::from(&lines))?;
    let summary = json!({
        "system": system.name,
        "points": fid.len(),
        "dt_s": args.dt,
        "lines": lines.lines.len(),
        "spectrum": peak_summary(&spectrum, dominant_peak(&spectrum)),
    });
    out.write_json("summary.json", &summary)?;
    out.finish("simulate", params(args), None, inputs)?;
    print_json(&summary)
}

#[derive(Debug, Args, Serialize)]
pub struct LinesArgs {
    /// Number of equivalent A spins in an XAn system (analytic lines).
    #[arg(long, conflicts_with = "system")]
    pub xan: Option<usize>,
    /// X–A coupling for --xan, Hz.
    #[arg(long, default_value_t = 100.0, allow_negative_numbers = true)]
    pub j_hz: f64,
    /// Species of the X spin for --xan.
    #[arg(long, default_value = "13C")]
    pub x_species: String,
    /// Species of the A spins for --xan.
    #[arg(long, default_value = "1H")]
    pub a_species: String,
    /// Spin-system JSON file (numerical lines from the sudden state).
    #[arg(long)]
    pub system: Option<PathBuf>,
    /// Bias field along z, nT.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub bz_nt: f64,
    /// Detected magnetization axis for --system.
    #[arg(long, default_value = "z")]
    pub axis: Axis,
    #[command(flatten)]
    #[serde(skip)]
    pub out: OutArgs,
}

pub fn lines(args: &LinesArgs) -> Result<(), CliError> {
    let bz = args.bz_nt * NANO;
    let (table, inputs) = match (&args.xan, &args.system) {
        (Some(n), None) => {
            let gamma = |tag: &str| {
                constants::species_gamma(tag).ok_or_else(|| CliError::input(format!("unknown species '{tag}'")))
            };
            let spec = analytic::XAnSpec::new(*n, args.j_hz, gamma(&args.a_species)?, gamma(&args.x_species)?)?;
            let lines = if bz == 0.0 {
                analytic::zero_field_lines(&spec)?
            } else {
                analytic::near_zero_lines(&spec, bz)?
            };
            (Table::from(lines.as_slice()), Vec::new())
        }
        (None, Some(path)) => {
            let (system, digest) = load_system(path)?;
            let model = SpinModel::new(&system)?;
            let state = sudden_state(&system, &ThermalConfig::default())?;
            let lines = stick_spectrum(&state, &model, [0.0, 0.0, bz], args.axis)?;
            (Table::from(&lines), vec![digest])
        }
        _ => return Err(CliError::input("give either --xan or --system")),
    };
    print!("{}", table.to_csv_string()?);
    if let Some(dir) = &args.out.out {
        let mut out = OutputDir::create(dir)?;
        out.write_table("lines.csv", &table)?;
        out.finish("lines", params(args), None, inputs)?;
    }
    Ok(())
}

fn control_options(system: &SpinSystem, b_ut: Option<f64>, max_turns: Option<f64>, threshold: Option<f64>) -> ControlOptions {
    let mut opts = ControlOptions::for_system(system);
    if let Some(b) = b_ut {
        opts.b_amplitude = b * MICRO;
    }
    if let Some(t) = max_turns {
        opts.search.max_turns = t;
    }
    if let Some(t) = threshold {
        opts.search.threshold = t;
    }
    opts
}

#[derive(Debug, Args, Serialize)]
pub struct CompileGateArgs {
    /// Spin-system JSON file.
    #[arg(long)]
    pub system: PathBuf,
    /// Gate such as "pi/2@C,x", "pi@H+F,x", "cnot@C,H" or "uzz(pi/2)@C,H".
    #[arg(long)]
    pub gate: String,
    /// DC pulse amplitude, µT (default: 1 kHz for the spin with smallest |γ|).
    #[arg(long)]
    pub b_ut: Option<f64>,
    /// Longest pulse searched, in turns of the slowest spin.
    #[arg(long)]
    pub max_turns: Option<f64>,
    /// Minimum pulse-model fidelity accepted by the duration search.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[command(flatten)]
    #[serde(skip)]
    pub out: OutArgs,
}

pub fn compile_gate(args: &CompileGateArgs) -> Result<(), CliError> {
    let (system, digest) = load_system(&args.system)?;
    let model = SpinModel::new(&system)?;
    let gate = GateSpec::parse(&args.gate, &system)?;
    let opts = control_options(&system, args.b_ut, args.max_turns, args.threshold);
    let seq = gate.compile(&model, &opts)?;
    let result = json!({
        "gate": gate,
        "b_amplitude_t": opts.b_amplitude,
        "duration_s": seq.program.duration(),
        "report": seq.report,
        "trace": seq.trace,
        "program": seq.program,
    });
    print_json(&result)?;
    if let Some(dir) = &args.out.out {
        let mut out = OutputDir::create(dir)?;
        out.write_json("gate.json", &result)?;
        out.write_json("program.json", &seq.program)?;
        out.finish("compile-gate", params(args), None, vec![digest])?;
    }
    Ok(())
}

#[derive(Debug, Args, Serialize)]
pub struct GrapeArgs {
    /// Spin-system JSON file.
    #[arg(long)]
    pub system: PathBuf,
    /// Target gate, same syntax as compile-gate.
    #[arg(long)]
    pub target: String,
    /// Number of piecewise-constant pieces.
    #[arg(long, default_value_t = 20)]
    pub pieces: usize,
    /// Piece duration, µs.
    #[arg(long, default_value_t = 25.0)]
    pub piece_us: f64,
    /// Maximum |B| per axis, µT.
    #[arg(long, default_value_t = 200.0)]
    pub bound_ut: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 2000)]
    pub max_iter: usize,
    /// Stop once this fidelity is reached.
    #[arg(long, default_value_t = 0.9999)]
    pub goal: f64,
    /// Relative tolerance for treating two gyromagnetic ratios as equal.
    #[arg(long, default_value_t = DEFAULT_GAMMA_TOLERANCE)]
    pub gamma_tolerance: f64,
    #[command(flatten)]
    #[serde(skip)]
    pub out: OutArgs,
}

pub fn grape(args: &GrapeArgs) -> Result<(), CliError> {
    let (system, digest) = load_system(&args.system)?;
    let model = SpinModel::new(&system)?;
    let gate = GateSpec::parse(&args.target, &system)?;
    let target = gate.ideal_unitary(&model)?;
    let opts = GrapeOptions {
        seed: args.seed,
        stop: StopCriteria {
            max_iter: args.max_iter,
            f_goal: args.goal,
            ..Default::default()
        },
        ..Default::default()
    };
    let verdict = controllability(&system, args.gamma_tolerance)?;
    if !verdict.is_controllable() {
        log::warn!("{}: controllability undetermined at gamma tolerance {}", system.name, args.gamma_tolerance);
    }
    let bound = args.bound_ut * MICRO;
    let r = grape_optimize(&model, &target, args.pieces, args.piece_us * MICRO, [bound; 3], &opts)?;
    let result = json!({
        "target": gate,
        "controllability": verdict,
        "fidelity": r.fidelity,
        "converged": r.converged,
        "iterations": r.iterations,
        "trace": r.trace,
        "control": r.control,
        "program": r.control.to_program(),
    });
    print_json(&result)?;
    if let Some(dir) = &args.out.out {
        let mut out = OutputDir::create(dir)?;
        out.write_json("grape.json", &result)?;
        out.write_table("control.csv", &Table::from(&r.control))?;
        out.finish("grape", params(args), Some(args.seed), vec![digest])?;
    }
    Ok(())
}

#[derive(Debug, Args, Serialize)]
pub struct RbArgs {
    /// Spin-system JSON file.
    #[arg(long)]
    pub system: PathBuf,
    /// Label of the benchmarked spin.
    #[arg(long)]
    pub target: String,
    /// Sequence lengths, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,4,8,16,32,64,128")]
    pub lengths: Vec<usize>,
    /// Random sequences per length.
    #[arg(long, default_value_t = 32)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Relative σ of per-gate amplitude errors.
    #[arg(long, default_value_t = 0.0)]
    pub amp_jitter: f64,
    /// Relative σ of per-gate duration errors.
    #[arg(long, default_value_t = 0.0)]
    pub dur_jitter: f64,
    /// Depolarizing probability per Clifford gate.
    #[arg(long, default_value_t = 0.0)]
    pub depolarizing: f64,
    /// Use exact rotations instead of compiled pulse programs.
    #[arg(long)]
    pub ideal: bool,
    /// DC pulse amplitude for compiled gates, µT.
    #[arg(long)]
    pub b_ut: Option<f64>,
    #[command(flatten)]
    #[serde(skip)]
    pub out: OutArgs,
}

pub fn rb(args: &RbArgs) -> Result<(), CliError> {
    let (system, digest) = load_system(&args.system)?;
    let model = SpinModel::new(&system)?;
    let target = system
        .index_of(&args.target)
        .ok_or_else(|| CliError::input(format!("unknown spin '{}'", args.target)))?;
    let gates = if args.ideal {
        GateRealization::Ideal
    } else {
        GateRealization::Compiled(control_options(&system, args.b_ut, None, None))
    };
    let cfg = RbConfig {
        lengths: args.lengths.clone(),
        randomizations: args.k,
        seed: args.seed,
        errors: ErrorModel {
            amplitude_jitter: args.amp_jitter,
            duration_jitter: args.dur_jitter,
            depolarizing: args.depolarizing,
        },
        gates,
        thermal: ThermalConfig::default(),
    };
    let r = rb_simulate(&model, target, &cfg)?;
    let (sd, se) = r.fit.sigma();
    let fit = json!({
        "d_if": r.fit.d_if,
        "d_if_sigma": sd,
        "eps_g": r.fit.eps_g,
        "eps_g_sigma": se,
        "covariance": r.fit.covariance,
    });
    let mut out = OutputDir::create(out_dir(&args.out))?;
    out.write_table("rb.csv", &Table::from(&r.data))?;
    out.write_json("fit.json", &fit)?;
    out.finish("rb", params(args), Some(args.seed), vec![digest])?;
    print_json(&fit)
}

#[derive(Debug, Args, Serialize)]
pub struct MagnetometerArgs {
    /// JSON file whose `magnetometer` object sets the sensor parameters;
    /// the flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Drive frequencies, Hz, comma separated (overrides the linear grid).
    #[arg(long, value_delimiter = ',')]
    pub freqs: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1.0)]
    pub fmin: f64,
    #[arg(long, default_value_t = 400.0)]
    pub fmax: f64,
    #[arg(long, default_value_t = 40)]
    pub nf: usize,
    /// Bias field along the pump axis, nT.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub bias_nt: f64,
    /// Optical pumping rate, 1/s.
    #[arg(long)]
    pub r_op: Option<f64>,
    /// Relaxation rate, 1/s.
    #[arg(long)]
    pub r_rel: Option<f64>,
    /// Nuclear slowing-down factor.
    #[arg(long)]
    pub q: Option<f64>,
    #[command(flatten)]
    #[serde(skip)]
    pub out: OutArgs,
}

pub fn load_magnetometer_config(path: &Path) -> Result<MagnetometerParams, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    match value.get("magnetometer") {
        Some(section) => serde_json::from_value(section.clone())
            .map_err(|e| CliError::input(format!("{}: magnetometer: {e}", path.display()))),
        None => Ok(MagnetometerParams::default()),
    }
}

pub fn magnetometer(args: &MagnetometerArgs) -> Result<(), CliError> {
    let mut inputs = Vec::new();
    let mut p = match &args.config {
        Some(path) => {
            inputs.push(digest_file(path)?);
            load_magnetometer_config(path)?
        }
        None => MagnetometerParams::default(),
    };
    if let Some(v) = args.r_op {
        p.r_op = v;
    }
    if let Some(v) = args.r_rel {
        p.r_rel = v;
    }
    if let Some(v) = args.q {
        p.q = v;
    }
    p.validate()?;
    let freqs = match &args.freqs {
        Some(f) => f.clone(),
        None => {
            if args.nf < 2 || !(args.fmax > args.fmin && args.fmin > 0.0) {
                return Err(CliError::input("need fmax > fmin > 0 and nf >= 2"));
            }
            (0..args.nf)
                .map(|k| args.fmin + (args.fmax - args.fmin) * k as f64 / (args.nf - 1) as f64)
                .collect()
        }
    };
    let points = response_surface(&freqs, args.bias_nt * NANO, &p, &SensorGeometry::default())?;
    let summary = json!({
        "bandwidth_hz": p.bandwidth_hz(),
        "steady_polarization": p.p0(),
        "points": points.len(),
        "all_converged": points.iter().all(|r| r.converged),
    });
    let mut out = OutputDir::create(out_dir(&args.out))?;
    out.write_table("response.csv", &Table::from(points.as_slice()))?;
    out.write_json("summary.json", &summary)?;
    out.finish("magnetometer", params(args), None, inputs)?;
    print_json(&summary)
}
