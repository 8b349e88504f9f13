//! Time evolution, pulse application, magnetization and spectra.

mod acquisition;
mod program;

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

pub use acquisition::{
    acquire_2d, acquire_fid, fft_spectrum, fwhm, Acquisition2d, Spectrum, Spectrum2d, TimeSeries,
    Window, MAX_2D_POINTS,
};
pub use program::{program_propagator, ApplyOptions, PulseProgram, Segment};

use crate::constants::MU_0;
use crate::error::{Error, Result};
use crate::linalg::{conjugate, dot, hermiticity_deviation, max_abs, norm3, scale3, CMat, HermitianEigen};
use crate::spin::{Axis, SpinModel};
use crate::state::DensityState;

fn check_dim(state: &DensityState, dim: usize) -> Result<()> {
    if state.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: state.dim(),
        });
    }
    Ok(())
}

/// ρ(t) = e^{−iHt} ρ e^{iHt}.
pub fn evolve(state: &DensityState, h: &CMat, t: f64) -> Result<DensityState> {
    check_dim(state, h.nrows())?;
    if h.nrows() != h.ncols() {
        return Err(Error::DimensionMismatch {
            expected: h.nrows(),
            got: h.ncols(),
        });
    }
    let dev = hermiticity_deviation(h);
    if dev > 1e-10 * max_abs(h).max(1.0) {
        return Err(Error::NotHermitian(dev));
    }
    if !t.is_finite() {
        return Err(Error::InvalidArgument("evolution time must be finite".into()));
    }
    if t == 0.0 {
        return Ok(state.clone());
    }
    let u = HermitianEigen::new(h).propagator(t);
    Ok(DensityState::from_matrix_unchecked(conjugate(&u, state.matrix())))
}

/// Apply `program` to `state` with the given ambient bias field.
pub fn apply_program(
    state: &DensityState,
    model: &SpinModel,
    program: &PulseProgram,
    ambient: [f64; 3],
    opts: &ApplyOptions,
) -> Result<DensityState> {
    check_dim(state, model.dim())?;
    if program.is_empty() {
        program.validate()?;
        return Ok(state.clone());
    }
    let u = program_propagator(model, program, ambient, opts)?;
    Ok(DensityState::from_matrix_unchecked(conjugate(&u, state.matrix())))
}

/// M_η = Tr[ρ Σ_j γ_j I_{jη}] per molecule (γ in Hz/T).
pub fn magnetization(state: &DensityState, model: &SpinModel, axis: Axis) -> f64 {
    state.expectation(&model.magnetization_operator(axis))
}

/// Magnetization scaled by the molecular density n.
pub fn magnetization_scaled(state: &DensityState, model: &SpinModel, axis: Axis, density: f64) -> f64 {
    density * magnetization(state, model, axis)
}

pub fn magnetization_vector(state: &DensityState, model: &SpinModel) -> [f64; 3] {
    Axis::ALL.map(|a| magnetization(state, model, a))
}

/// A spectral line; the signal is Re(amplitude·e^{−i2πνt}).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub freq: f64,
    pub amplitude: Complex64,
}

/// Stick spectrum folded to non-negative frequencies.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SpectrumLines {
    pub lines: Vec<Line>,
    /// Time-independent part of the signal.
    pub offset: f64,
}

impl SpectrumLines {
    pub fn frequencies(&self) -> Vec<f64> {
        self.lines.iter().map(|l| l.freq).collect()
    }

    /// Signal at time t.
    pub fn signal(&self, t: f64) -> f64 {
        self.offset
            + self
                .lines
                .iter()
                .map(|l| (l.amplitude * Complex64::from_polar(1.0, -2.0 * PI * l.freq * t)).re)
                .sum::<f64>()
    }

    /// Line whose frequency is nearest `freq`.
    pub fn nearest(&self, freq: f64) -> Option<&Line> {
        self.lines
            .iter()
            .min_by(|a, b| (a.freq - freq).abs().total_cmp(&(b.freq - freq).abs()))
    }
}

/// Default tolerance for merging degenerate lines, Hz.
pub const LINE_MERGE_TOLERANCE: f64 = 1e-6;
/// Lines weaker than this fraction of the strongest are dropped.
pub const LINE_AMPLITUDE_CUTOFF: f64 = 1e-9;

/// Eigen-expansion of the observable signal: every ordered pair with
/// E_a > E_b contributes Re(2ρ_ab O_ba e^{−i(E_a−E_b)t}).
pub(crate) struct SignalExpansion {
    pub omegas: Vec<f64>,
    pub amplitudes: Vec<Complex64>,
    pub offset: f64,
}

pub(crate) fn signal_expansion(rho: &CMat, h: &CMat, observable: &CMat) -> SignalExpansion {
    let eig = HermitianEigen::new(h);
    let r = eig.to_eigenbasis(rho);
    let o = eig.to_eigenbasis(observable);
    let d = r.nrows();
    let mut omegas = Vec::new();
    let mut amplitudes = Vec::new();
    let mut offset = 0.0;
    for a in 0..d {
        for b in 0..d {
            let term = r[(a, b)] * o[(b, a)];
            let w = eig.values[a] - eig.values[b];
            if a == b {
                offset += term.re;
            } else if w > 0.0 || (w == 0.0 && a > b) {
                omegas.push(w);
                amplitudes.push(term * 2.0);
            }
        }
    }
    SignalExpansion {
        omegas,
        amplitudes,
        offset,
    }
}

/// Stick spectrum of the `axis` magnetization for evolution in `bias`.
pub fn stick_spectrum(
    state: &DensityState,
    model: &SpinModel,
    bias: [f64; 3],
    axis: Axis,
) -> Result<SpectrumLines> {
    stick_spectrum_with(state, model, bias, axis, LINE_MERGE_TOLERANCE)
}

pub fn stick_spectrum_with(
    state: &DensityState,
    model: &SpinModel,
    bias: [f64; 3],
    axis: Axis,
    merge_tolerance: f64,
) -> Result<SpectrumLines> {
    check_dim(state, model.dim())?;
    let h = model.hamiltonian(bias);
    let obs = model.magnetization_operator(axis);
    Ok(lines_from_expansion(
        signal_expansion(state.matrix(), &h, &obs),
        merge_tolerance,
    ))
}

pub(crate) fn lines_from_expansion(exp: SignalExpansion, merge_tolerance: f64) -> SpectrumLines {
    let mut offset = exp.offset;
    let mut raw: Vec<(f64, Complex64)> = Vec::new();
    for (w, a) in exp.omegas.into_iter().zip(exp.amplitudes) {
        let f = w / (2.0 * PI);
        if f.abs() < merge_tolerance {
            // degenerate pairs do not oscillate
            offset += a.re;
        } else {
            raw.push((f, a));
        }
    }
    raw.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut lines: Vec<Line> = Vec::new();
    let mut cluster: Vec<(f64, Complex64)> = Vec::new();
    let flush = |cluster: &mut Vec<(f64, Complex64)>, lines: &mut Vec<Line>| {
        if cluster.is_empty() {
            return;
        }
        let freq = cluster.iter().map(|x| x.0).sum::<f64>() / cluster.len() as f64;
        let amplitude = cluster.iter().map(|x| x.1).sum();
        lines.push(Line { freq, amplitude });
        cluster.clear();
    };
    for item in raw {
        if let Some(first) = cluster.first() {
            if item.0 - first.0 > merge_tolerance {
                flush(&mut cluster, &mut lines);
            }
        }
        cluster.push(item);
    }
    flush(&mut cluster, &mut lines);
    let strongest = lines.iter().map(|l| l.amplitude.norm()).fold(0.0, f64::max);
    lines.retain(|l| l.amplitude.norm() > LINE_AMPLITUDE_CUTOFF * strongest);
    SpectrumLines { lines, offset }
}

/// Dipolar field at `displacement` from the centre of a uniformly magnetized
/// sphere of radius `sample_radius` with magnetization `m` (A/m).
pub fn sensor_field(m: [f64; 3], sample_radius: f64, displacement: [f64; 3]) -> Result<[f64; 3]> {
    let r = norm3(displacement);
    if !(sample_radius >= 0.0) || !(r > sample_radius) {
        return Err(Error::SensorInsideSample {
            distance: r,
            radius: sample_radius,
        });
    }
    let volume = 4.0 * PI * sample_radius.powi(3) / 3.0;
    let moment = scale3(m, volume);
    let n = scale3(displacement, 1.0 / r);
    let mn = dot(moment, n);
    let pre = MU_0 / (4.0 * PI * r.powi(3));
    Ok([
        pre * (3.0 * n[0] * mn - moment[0]),
        pre * (3.0 * n[1] * mn - moment[1]),
        pre * (3.0 * n[2] * mn - moment[2]),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::*;
    use crate::linalg::{c, trace};
    use crate::spin::SpinSystem;
    use crate::state::{sudden_state, sudden_state_along, ThermalConfig};

    fn model(sys: &SpinSystem) -> SpinModel {
        SpinModel::new(sys).unwrap()
    }

    fn ch(j: f64) -> SpinSystem {
        SpinSystem::from_species("CH", &[("C", "13C"), ("H", "1H")], &[(0, 1, j)]).unwrap()
    }

    #[test]
    fn evolve_zero_time_and_stationary_state() {
        let sys = ch(100.0);
        let m = model(&sys);
        let rho = sudden_state(&sys, &ThermalConfig::default()).unwrap();
        let h = m.hamiltonian([0.0; 3]);
        assert_eq!(evolve(&rho, &h, 0.0).unwrap(), rho);
        let mixed = DensityState::maximally_mixed(4);
        let out = evolve(&mixed, &h, 1.234).unwrap();
        assert!(max_abs(&(out.matrix() - mixed.matrix())) < 1e-15);
    }

    #[test]
    fn evolve_rejects_non_hermitian() {
        let rho = DensityState::maximally_mixed(2);
        let mut h = CMat::zeros(2, 2);
        h[(0, 1)] = c(1.0);
        assert!(matches!(evolve(&rho, &h, 1.0), Err(Error::NotHermitian(_))));
        assert!(evolve(&rho, &CMat::zeros(4, 4), 1.0).is_err());
    }

    #[test]
    fn single_spin_pi_rotation_about_x() {
        let sys = SpinSystem::from_species("H", &[("H", "1H")], &[]).unwrap();
        let m = model(&sys);
        let rho = sudden_state(&sys, &ThermalConfig::default()).unwrap();
        let b = 1e-4;
        let tau = PI / (2.0 * PI * GAMMA_H * b);
        let prog = PulseProgram::new(vec![Segment::Constant {
            field: [b, 0.0, 0.0],
            duration: tau,
        }])
        .unwrap();
        let out = apply_program(&rho, &m, &prog, [0.0; 3], &ApplyOptions::default()).unwrap();
        let before = magnetization(&rho, &m, Axis::Z);
        let after = magnetization(&out, &m, Axis::Z);
        assert!((after + before).abs() < 1e-12 * before.abs());
    }

    #[test]
    fn empty_program_is_identity() {
        let sys = ch(100.0);
        let m = model(&sys);
        let rho = sudden_state(&sys, &ThermalConfig::default()).unwrap();
        let out = apply_program(&rho, &m, &PulseProgram::empty(), [0.0; 3], &ApplyOptions::default()).unwrap();
        assert_eq!(out, rho);
    }

    #[test]
    fn carbon_pi_pulse_rotates_proton_nearly_four_pi() {
        let sys = ch(220.0);
        let m = model(&sys);
        let b = 1e-4;
        let tau = PI / (2.0 * PI * GAMMA_C * b);
        let prog = PulseProgram::new(vec![Segment::Constant {
            field: [b, 0.0, 0.0],
            duration: tau,
        }])
        .unwrap();
        let u = program_propagator(&m, &prog, [0.0; 3], &ApplyOptions::pulse_model()).unwrap();
        let ops = m.ops();
        let cz = conjugate(&u, ops.get(0, Axis::Z));
        let hz = conjugate(&u, ops.get(1, Axis::Z));
        let proj = |a: &CMat, b: &CMat| trace(&(a * b)).re;
        assert!((proj(&cz, ops.get(0, Axis::Z)) + 1.0).abs() < 1e-10);
        // proton angle γ_H/γ_C·π ≈ 3.976π
        let angle = PI * GAMMA_H / GAMMA_C;
        assert!((proj(&hz, ops.get(1, Axis::Z)) - angle.cos()).abs() < 1e-10);
        assert!((angle / PI - 4.0).abs() < 0.03);
    }

    #[test]
    fn sinusoid_substeps_guard() {
        let sys = ch(100.0);
        let m = model(&sys);
        let prog = PulseProgram::new(vec![Segment::Sinusoid {
            amplitude: [1e-6, 0.0, 0.0],
            frequency: 1e9,
            phase: 0.0,
            offset: [0.0; 3],
            duration: 1.0,
        }])
        .unwrap();
        let err = program_propagator(&m, &prog, [0.0; 3], &ApplyOptions::default()).unwrap_err();
        assert!(matches!(err, Error::SubstepUnderflow { .. }));
    }

    #[test]
    fn sinusoid_with_zero_frequency_equals_constant() {
        let sys = ch(100.0);
        let m = model(&sys);
        let sin = PulseProgram::new(vec![Segment::Sinusoid {
            amplitude: [2e-6, 0.0, 1e-6],
            frequency: 0.0,
            phase: 0.0,
            offset: [0.0, 1e-6, 0.0],
            duration: 3e-3,
        }])
        .unwrap();
        let cst = PulseProgram::new(vec![Segment::Constant {
            field: [2e-6, 1e-6, 1e-6],
            duration: 3e-3,
        }])
        .unwrap();
        let a = program_propagator(&m, &sin, [0.0; 3], &ApplyOptions::default()).unwrap();
        let b = program_propagator(&m, &cst, [0.0; 3], &ApplyOptions::default()).unwrap();
        assert!(max_abs(&(a - b)) < 1e-12);
    }

    #[test]
    fn program_json_roundtrip() {
        let prog = PulseProgram::new(vec![
            Segment::Constant {
                field: [1e-4, 0.0, 0.0],
                duration: 1e-3,
            },
            Segment::Delay { duration: 0.5 },
            Segment::Sinusoid {
                amplitude: [0.0, 1e-6, 0.0],
                frequency: 200.0,
                phase: 0.3,
                offset: [0.0; 3],
                duration: 0.1,
            },
        ])
        .unwrap();
        let back = PulseProgram::from_json(&prog.to_json().unwrap()).unwrap();
        assert_eq!(back, prog);
        assert!(PulseProgram::from_json(r#"[{"kind":"delay","duration":-1}]"#).is_err());
        assert!(PulseProgram::from_json(r#"[{"kind":"delay","duration":1,"field":[0,0,0]}]"#).is_err());
    }

    #[test]
    fn magnetization_of_mixed_state_vanishes() {
        let sys = ch(100.0);
        let m = model(&sys);
        let rho = DensityState::maximally_mixed(4);
        for a in Axis::ALL {
            assert_eq!(magnetization(&rho, &m, a), 0.0);
        }
    }

    #[test]
    fn sudden_state_magnetization_by_trace_arithmetic() {
        let sys = ch(100.0);
        let m = model(&sys);
        let cfg = ThermalConfig::default();
        let rho = sudden_state(&sys, &cfg).unwrap();
        // Tr[(−Σ ε_j I_jz)(Σ γ_k I_kz)] = −Σ_j ε_j γ_j Tr(I_jz²) = −Σ ε_j γ_j 2ⁿ/4
        let expected = -(cfg.epsilon(GAMMA_C) * GAMMA_C + cfg.epsilon(GAMMA_H) * GAMMA_H) * 4.0 / 4.0;
        let got = magnetization(&rho, &m, Axis::Z);
        assert!((got - expected).abs() < 1e-10 * expected.abs(), "{got} {expected}");
        assert!(magnetization_scaled(&rho, &m, Axis::Z, 3.0) == 3.0 * got);
    }

    #[test]
    fn two_spin_line_at_j() {
        let sys = ch(100.0);
        let m = model(&sys);
        let rho = sudden_state(&sys, &ThermalConfig::default()).unwrap();
        let lines = stick_spectrum(&rho, &m, [0.0; 3], Axis::Z).unwrap();
        assert_eq!(lines.lines.len(), 1);
        assert!((lines.lines[0].freq - 100.0).abs() < 1e-9);
    }

    #[test]
    fn stick_spectrum_reproduces_propagated_signal() {
        let sys = SpinSystem::xan(2, 37.0, GAMMA_C, GAMMA_H).unwrap();
        let m = model(&sys);
        let rho = sudden_state_along(&sys, &ThermalConfig::default(), [1.0, 0.2, 0.5]).unwrap();
        let bias = [3e-7, -1e-7, 2e-7];
        let h = m.hamiltonian(bias);
        for axis in Axis::ALL {
            let lines = stick_spectrum(&rho, &m, bias, axis).unwrap();
            for t in [0.0, 0.0123, 0.31] {
                let direct = magnetization(&evolve(&rho, &h, t).unwrap(), &m, axis);
                let scale = lines.lines.iter().map(|l| l.amplitude.norm()).sum::<f64>() + lines.offset.abs();
                assert!((lines.signal(t) - direct).abs() < 1e-9 * scale, "{axis:?} {t}");
            }
        }
    }

    #[test]
    fn sensor_field_dipole_limits() {
        let m = [0.0, 0.0, 2.0];
        let r0: f64 = 0.5e-3;
        let r: f64 = 2e-3;
        let moment = 4.0 * PI * r0.powi(3) / 3.0 * 2.0;
        let axial = sensor_field(m, r0, [0.0, 0.0, r]).unwrap();
        assert!((axial[2] - MU_0 * moment / (2.0 * PI * r.powi(3))).abs() < 1e-12 * axial[2].abs());
        assert!(axial[0].abs() < 1e-30 && axial[1].abs() < 1e-30);
        let eq = sensor_field(m, r0, [r, 0.0, 0.0]).unwrap();
        assert!((eq[2] + MU_0 * moment / (4.0 * PI * r.powi(3))).abs() < 1e-12 * eq[2].abs());
        let far = sensor_field(m, r0, [0.0, 0.0, 2.0 * r]).unwrap();
        assert!((axial[2] / far[2] - 8.0).abs() < 1e-12);
        assert!(matches!(
            sensor_field(m, r0, [0.0, 0.0, r0 * 0.5]),
            Err(Error::SensorInsideSample { .. })
        ));
    }
}
