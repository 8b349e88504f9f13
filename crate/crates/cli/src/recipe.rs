//! Experiment recipes: a JSON list of stages run in order against one system.
//!
//! ```json
//! {
//!   "system": "../systems/formic_acid.json",
//!   "stages": [
//!     {"prep": {"state": "sudden"}},
//!     {"program": {"gate": "pi/2@H,x", "b_ut": 100}},
//!     {"acquire": {"dt": 0.001, "points": 8192, "t2": 0.5}},
//!     {"analyze": {"zerofill": 65536}}
//!   ]
//! }
//! ```
//!
//! Every stage is parsed and checked before any computation starts.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use zulf_core::control::{ControlOptions, GateSpec};
use zulf_core::dynamics::{
    acquire_fid, apply_program, fft_spectrum, stick_spectrum, ApplyOptions, PulseProgram, SpectrumLines, TimeSeries,
    Window,
};
use zulf_core::io::Table;
use zulf_core::magnetometer::{bloch_integrate_fn, steady_polarization, MagnetometerParams, SensorGeometry};
use zulf_core::{Axis, DensityState, SpinModel, SpinSystem, ThermalConfig};

use crate::commands::{build_ramp, load_system, prepare_state, RampKind, dominant_peak, peak_summary, StateKind, MICRO, NANO};
use crate::output::{digest_file, FileDigest, OutputDir};
use crate::{CliError, DEFAULT_OUT_DIR};

#[derive(Debug, Args, Serialize)]
pub struct RecipeArgs {
    /// Recipe JSON file.
    pub path: PathBuf,
    /// Output directory (overrides the recipe's output_dir).
    #[arg(long, env = "ZULF_OUT_DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Recipe {
    /// Spin-system file, relative to the recipe's directory.
    #[serde(default)]
    pub system: Option<PathBuf>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub stages: Vec<Value>,
}

fn default_prepolarization() -> f64 {
    1.5
}

fn default_temperature() -> f64 {
    300.0
}

fn default_ramp_start() -> f64 {
    1e-4
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrepStage {
    #[serde(default = "default_state")]
    pub state: StateKind,
    #[serde(default = "default_prepolarization")]
    pub prepolarization_t: f64,
    #[serde(default = "default_temperature")]
    pub temperature_k: f64,
    /// Guiding field at the start of an adiabatic ramp, tesla.
    #[serde(default = "default_ramp_start")]
    pub ramp_start_t: f64,
    #[serde(default)]
    pub ramp_ms: Option<f64>,
    #[serde(default)]
    pub ramp_steps: Option<usize>,
    #[serde(default)]
    pub ramp_shape: Option<RampKind>,
}

fn default_state() -> StateKind {
    StateKind::Sudden
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProgramStage {
    /// Pulse-program JSON, relative to the recipe's directory.
    #[serde(default)]
    pub file: Option<PathBuf>,
    /// Gate compiled on the fly, as accepted by `compile-gate`.
    #[serde(default)]
    pub gate: Option<String>,
    #[serde(default)]
    pub b_ut: Option<f64>,
    #[serde(default)]
    pub bias_nt: [f64; 3],
}

fn default_dt() -> f64 {
    1e-3
}

fn default_points() -> usize {
    8192
}

fn default_axis() -> Axis {
    Axis::Z
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcquireStage {
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_points")]
    pub points: usize,
    #[serde(default)]
    pub t2: Option<f64>,
    #[serde(default = "default_axis")]
    pub axis: Axis,
    #[serde(default)]
    pub bias_nt: [f64; 3],
}

fn default_peak_field() -> f64 {
    1e-12
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectStage {
    #[serde(default)]
    pub magnetometer: MagnetometerParams,
    /// Magnetometer bias along its pump axis, nT.
    #[serde(default)]
    pub bias_nt: f64,
    /// Sample field at the sensor for the largest |signal|, tesla along lab x.
    #[serde(default = "default_peak_field")]
    pub peak_field_t: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeStage {
    #[serde(default)]
    pub window: Window,
    #[serde(default)]
    pub zerofill: Option<usize>,
    /// Restrict the peak search to [lo, hi] Hz.
    #[serde(default)]
    pub peak_range_hz: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Prep(PrepStage),
    Program(ProgramStage),
    Acquire(AcquireStage),
    Detect(DetectStage),
    Analyze(AnalyzeStage),
}

impl Stage {
    fn name(&self) -> &'static str {
        match self {
            Stage::Prep(_) => "prep",
            Stage::Program(_) => "program",
            Stage::Acquire(_) => "acquire",
            Stage::Detect(_) => "detect",
            Stage::Analyze(_) => "analyze",
        }
    }
}

const STAGE_KEYS: [&str; 5] = ["prep", "program", "acquire", "detect", "analyze"];

fn parse_stage(index: usize, value: &Value) -> Result<Stage, CliError> {
    let err = |msg: String| CliError::input(format!("stage {index}: {msg}"));
    let obj = value
        .as_object()
        .ok_or_else(|| err("expected an object with one stage key".into()))?;
    if obj.len() != 1 {
        return Err(err(format!("expected exactly one stage key, found {}", obj.len())));
    }
    let (key, _) = obj.iter().next().expect("one entry");
    if !STAGE_KEYS.contains(&key.as_str()) {
        return Err(err(format!("unknown stage '{key}' (expected one of {})", STAGE_KEYS.join(", "))));
    }
    serde_json::from_value(value.clone()).map_err(|e| err(format!("{key}: {e}")))
}

/// Load a recipe and resolve its stages, checking order and paths.
pub fn load(path: &Path) -> Result<(Recipe, Vec<Stage>), CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    let recipe: Recipe =
        serde_json::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    let stages = recipe
        .stages
        .iter()
        .enumerate()
        .map(|(i, v)| parse_stage(i, v))
        .collect::<Result<Vec<_>, _>>()?;
    validate(&recipe, &stages)?;
    Ok((recipe, stages))
}

fn validate(recipe: &Recipe, stages: &[Stage]) -> Result<(), CliError> {
    let mut prepared = false;
    let mut acquired = false;
    for (i, s) in stages.iter().enumerate() {
        let err = |msg: &str| Err(CliError::input(format!("stage {i} ({}): {msg}", s.name())));
        match s {
            Stage::Prep(p) => {
                if recipe.system.is_none() {
                    return err("recipe has no system");
                }
                if !(p.prepolarization_t > 0.0 && p.temperature_k > 0.0 && p.ramp_start_t > 0.0) {
                    return err("fields and temperature must be positive");
                }
                prepared = true;
                acquired = false;
            }
            Stage::Program(p) => {
                if !prepared {
                    return err("needs a preceding prep stage");
                }
                if p.file.is_some() == p.gate.is_some() {
                    return err("give exactly one of file or gate");
                }
            }
            Stage::Acquire(a) => {
                if !prepared {
                    return err("needs a preceding prep stage");
                }
                if !(a.dt > 0.0) || a.points < 2 {
                    return err("dt must be positive and points >= 2");
                }
                acquired = true;
            }
            Stage::Detect(d) => {
                if !acquired {
                    return err("needs a preceding acquire stage");
                }
                if let Err(e) = d.magnetometer.validate() {
                    return err(&e.to_string());
                }
            }
            Stage::Analyze(a) => {
                if !acquired {
                    return err("needs a preceding acquire stage");
                }
                if let Some([lo, hi]) = a.peak_range_hz {
                    if !(hi > lo) {
                        return err("peak_range_hz must be increasing");
                    }
                }
            }
        }
    }
    Ok(())
}

struct Context<'a> {
    base: &'a Path,
    system: Option<SpinSystem>,
    model: Option<SpinModel>,
    state: Option<DensityState>,
    series: Option<TimeSeries>,
    /// Line expansion of the last acquisition and its T₂.
    signal: Option<(SpectrumLines, f64)>,
    inputs: Vec<FileDigest>,
    results: Vec<Value>,
}

fn nt3(v: [f64; 3]) -> [f64; 3] {
    v.map(|x| x * NANO)
}

impl Context<'_> {
    fn model(&self) -> &SpinModel {
        self.model.as_ref().expect("validated: prep precedes")
    }

    fn state(&self) -> &DensityState {
        self.state.as_ref().expect("validated: prep precedes")
    }

    fn series(&self) -> &TimeSeries {
        self.series.as_ref().expect("validated: acquire precedes")
    }

    /// Magnetometer output for the acquired signal applied as a lab-x field.
    /// The Bloch equation is integrated on a grid fine enough for both the
    /// cell dynamics and the signal, then sampled at the acquisition times.
    fn detect(&self, d: &DetectStage) -> Result<TimeSeries, CliError> {
        let series = self.series();
        let p = &d.magnetometer;
        let geometry = SensorGeometry::default();
        let bias = d.bias_nt * NANO;
        let peak = series.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let scale = if peak > 0.0 { d.peak_field_t / peak } else { 0.0 };
        let signal = |t: f64| -> f64 {
            match &self.signal {
                Some((lines, t2)) => lines.signal(t) * (-t / t2).exp(),
                None => 0.0,
            }
        };
        let fmax = self
            .signal
            .as_ref()
            .map(|(l, _)| l.lines.iter().fold(0.0f64, |m, x| m.max(x.freq)))
            .unwrap_or(0.0);
        let larmor = 2.0 * std::f64::consts::PI * p.gamma_e * bias.abs() / p.q;
        let mut limit = 0.05 * p.q / p.total_rate();
        if fmax > 0.0 {
            limit = limit.min(1.0 / (50.0 * fmax));
        }
        if larmor > 0.0 {
            limit = limit.min(0.05 / larmor);
        }
        let sub = (series.dt / limit).ceil().max(1.0) as usize;
        let fine = series.dt / sub as f64;
        let field = |t: f64| geometry.to_bloch([scale * signal(t - series.t0), 0.0, bias]);
        let p0 = steady_polarization(geometry.to_bloch([0.0, 0.0, bias]), p);
        let npoints = (series.len() - 1) * sub + 1;
        let out = bloch_integrate_fn(field, series.t0, fine, npoints, p, p0)?;
        let samples = out.samples.iter().step_by(sub).map(|v| p.alpha * v[0]).collect();
        Ok(TimeSeries::new(series.t0, series.dt, samples)?)
    }

    fn run(&mut self, index: usize, stage: &Stage, out: &mut OutputDir) -> Result<(), CliError> {
        match stage {
            Stage::Prep(p) => {
                let system = self.system.as_ref().expect("validated: system present");
                let thermal = ThermalConfig::new(p.prepolarization_t, p.temperature_k)?;
                let explicit = p.ramp_ms.is_some() || p.ramp_steps.is_some() || p.ramp_shape.is_some();
                let ramp = explicit.then(|| {
                    let shape = p.ramp_shape.unwrap_or(RampKind::Linear);
                    build_ramp(system, shape, p.ramp_start_t, p.ramp_ms, p.ramp_steps)
                });
                self.state = Some(prepare_state(system, p.state, &thermal, ramp)?);
                self.series = None;
                self.signal = None;
            }
            Stage::Program(p) => {
                let program = match (&p.file, &p.gate) {
                    (Some(f), _) => {
                        let path = self.base.join(f);
                        self.inputs.push(digest_file(&path)?);
                        let text = std::fs::read_to_string(&path)
                            .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
                        PulseProgram::from_json(&text).map_err(|e| CliError::from(e).context(path.display()))?
                    }
                    (None, Some(g)) => {
                        let system = self.system.as_ref().expect("validated: system present");
                        let gate = GateSpec::parse(g, system)?;
                        let mut opts = ControlOptions::for_system(system);
                        if let Some(b) = p.b_ut {
                            opts.b_amplitude = b * MICRO;
                        }
                        let seq = gate.compile(self.model(), &opts)?;
                        self.results.push(json!({"stage": index, "gate": g, "report": seq.report}));
                        seq.program
                    }
                    (None, None) => unreachable!("validated"),
                };
                let state = apply_program(self.state(), self.model(), &program, nt3(p.bias_nt), &ApplyOptions::default())?;
                self.state = Some(state);
            }
            Stage::Acquire(a) => {
                let t2 = a.t2.unwrap_or(f64::INFINITY);
                let fid = acquire_fid(self.state(), self.model(), nt3(a.bias_nt), a.dt, a.points, t2, a.axis)?;
                out.write_table(&format!("stage{index}_fid.csv"), &Table::from(&fid))?;
                let lines = stick_spectrum(self.state(), self.model(), nt3(a.bias_nt), a.axis)?;
                self.series = Some(fid);
                self.signal = Some((lines, t2));
            }
            Stage::Detect(d) => {
                let detected = self.detect(d)?;
                out.write_table(&format!("stage{index}_detected.csv"), &Table::from(&detected))?;
                self.series = Some(detected);
                self.signal = None;
            }
            Stage::Analyze(a) => {
                let spectrum = fft_spectrum(self.series(), a.window, a.zerofill)?;
                let peak = match a.peak_range_hz {
                    Some([lo, hi]) => spectrum.peak_in(lo, hi),
                    None => dominant_peak(&spectrum),
                };
                let summary = peak_summary(&spectrum, peak);
                out.write_table(&format!("stage{index}_spectrum.csv"), &Table::from(&spectrum))?;
                out.write_json(&format!("stage{index}_analysis.json"), &summary)?;
                self.results.push(json!({"stage": index, "analysis": summary}));
            }
        }
        Ok(())
    }
}

pub fn run(args: &RecipeArgs) -> Result<(), CliError> {
    let (recipe, stages) = load(&args.path)?;
    let base = args.path.parent().unwrap_or(Path::new("."));
    let mut inputs = vec![digest_file(&args.path)?];
    let (system, model) = match &recipe.system {
        Some(p) => {
            let (system, digest) = load_system(&base.join(p))?;
            inputs.push(digest);
            let model = SpinModel::new(&system)?;
            (Some(system), Some(model))
        }
        None => (None, None),
    };
    let dir = args
        .out
        .clone()
        .or_else(|| recipe.output_dir.as_ref().map(|d| base.join(d)))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
    let mut out = OutputDir::create(dir)?;
    let mut ctx = Context {
        base,
        system,
        model,
        state: None,
        series: None,
        signal: None,
        inputs,
        results: Vec::new(),
    };
    for (i, stage) in stages.iter().enumerate() {
        log::info!("stage {i}: {}", stage.name());
        ctx.run(i, stage, &mut out)
            .map_err(|e| e.context(format_args!("stage {i} ({})", stage.name())))?;
    }
    let params = json!({
        "recipe": args.path,
        "stages": stages,
    });
    let manifest = out.finish("recipe", params, recipe.seed, ctx.inputs)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&json!({"manifest": manifest, "results": ctx.results}))
            .map_err(|e| CliError::input(e.to_string()))?
    );
    Ok(())
}
