//! Pulse programs: piecewise field segments and free-evolution delays.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{add3, identity, CMat, HermitianEigen};
use crate::spin::SpinModel;

/// One element of a pulse program. Pulse fields add to the ambient bias.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Segment {
    /// Constant field (tesla) for `duration` seconds.
    Constant { field: [f64; 3], duration: f64 },
    /// B(t) = offset + amplitude·cos(2π·frequency·t + phase), t from segment start.
    Sinusoid {
        amplitude: [f64; 3],
        frequency: f64,
        #[serde(default)]
        phase: f64,
        #[serde(default)]
        offset: [f64; 3],
        duration: f64,
    },
    /// Free evolution under the ambient bias only.
    Delay { duration: f64 },
}

impl Segment {
    pub fn duration(&self) -> f64 {
        match *self {
            Segment::Constant { duration, .. }
            | Segment::Sinusoid { duration, .. }
            | Segment::Delay { duration } => duration,
        }
    }

    pub fn is_pulse(&self) -> bool {
        !matches!(self, Segment::Delay { .. })
    }

    fn validate(&self) -> Result<()> {
        let d = self.duration();
        if !(d >= 0.0 && d.is_finite()) {
            return Err(Error::InvalidArgument(format!("segment duration {d} must be >= 0")));
        }
        let finite = |v: &[f64; 3]| v.iter().all(|x| x.is_finite());
        match self {
            Segment::Constant { field, .. } if !finite(field) => {
                Err(Error::InvalidArgument("segment field must be finite".into()))
            }
            Segment::Sinusoid {
                amplitude,
                frequency,
                phase,
                offset,
                ..
            } if !(finite(amplitude) && finite(offset) && frequency.is_finite() && phase.is_finite()) => {
                Err(Error::InvalidArgument("sinusoid parameters must be finite".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Ordered list of segments, applied first to last.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PulseProgram {
    pub segments: Vec<Segment>,
}

impl PulseProgram {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        let p = PulseProgram { segments };
        p.validate()?;
        Ok(p)
    }

    pub fn empty() -> Self {
        PulseProgram::default()
    }

    pub fn validate(&self) -> Result<()> {
        self.segments.iter().try_for_each(Segment::validate)
    }

    pub fn push(&mut self, segment: Segment) {
        self.segments.push(segment);
    }

    /// Append all segments of `other`.
    pub fn extend(&mut self, other: &PulseProgram) {
        self.segments.extend(other.segments.iter().cloned());
    }

    pub fn then(mut self, other: &PulseProgram) -> Self {
        self.extend(other);
        self
    }

    pub fn duration(&self) -> f64 {
        self.segments.iter().map(Segment::duration).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: PulseProgram = serde_json::from_str(text)?;
        p.validate()?;
        Ok(p)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// How programs are propagated.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApplyOptions {
    /// Drop J couplings while a pulse field is on (strong-pulse approximation).
    pub drop_coupling_during_pulses: bool,
    /// Piecewise-constant substeps per cycle of a sinusoidal segment.
    pub substeps_per_cycle: usize,
    /// Upper limit on substeps in a single sinusoidal segment.
    pub max_substeps: u64,
}

impl Default for ApplyOptions {
    fn default() -> Self {
        ApplyOptions {
            drop_coupling_during_pulses: false,
            substeps_per_cycle: 100,
            max_substeps: 10_000_000,
        }
    }
}

impl ApplyOptions {
    pub fn pulse_model() -> Self {
        ApplyOptions {
            drop_coupling_during_pulses: true,
            ..Default::default()
        }
    }
}

fn segment_propagator(
    model: &SpinModel,
    segment: &Segment,
    ambient: [f64; 3],
    opts: &ApplyOptions,
) -> Result<CMat> {
    let with_j = !(segment.is_pulse() && opts.drop_coupling_during_pulses);
    match *segment {
        Segment::Delay { duration } => {
            Ok(HermitianEigen::new(&model.hamiltonian_with(ambient, true)).propagator(duration))
        }
        Segment::Constant { field, duration } => {
            if duration == 0.0 {
                return Ok(identity(model.dim()));
            }
            let h = model.hamiltonian_with(add3(ambient, field), with_j);
            Ok(HermitianEigen::new(&h).propagator(duration))
        }
        Segment::Sinusoid {
            amplitude,
            frequency,
            phase,
            offset,
            duration,
        } => {
            if duration == 0.0 {
                return Ok(identity(model.dim()));
            }
            let cycles = (frequency.abs() * duration).max(0.0);
            let needed = (cycles * opts.substeps_per_cycle as f64).ceil().max(1.0);
            if needed > opts.max_substeps as f64 || opts.substeps_per_cycle == 0 {
                return Err(Error::SubstepUnderflow {
                    freq_hz: frequency,
                    needed: needed.min(u64::MAX as f64) as u64,
                    limit: opts.max_substeps,
                });
            }
            let n = needed as u64;
            let dt = duration / n as f64;
            let mut u = identity(model.dim());
            for k in 0..n {
                let t = (k as f64 + 0.5) * dt;
                let s = (2.0 * PI * frequency * t + phase).cos();
                let mut b = add3(ambient, offset);
                for a in 0..3 {
                    b[a] += amplitude[a] * s;
                }
                let step = HermitianEigen::new(&model.hamiltonian_with(b, with_j)).propagator(dt);
                u = step * u;
            }
            Ok(u)
        }
    }
}

/// Net unitary of `program` (later segments multiply from the left).
pub fn program_propagator(
    model: &SpinModel,
    program: &PulseProgram,
    ambient: [f64; 3],
    opts: &ApplyOptions,
) -> Result<CMat> {
    program.validate()?;
    let mut u = identity(model.dim());
    for seg in &program.segments {
        u = segment_propagator(model, seg, ambient, opts)? * u;
    }
    Ok(u)
}
