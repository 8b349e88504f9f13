//! Density matrices and initial states after prepolarization.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::constants::{BOLTZMANN, HBAR};
use crate::error::{Error, Result};
use crate::linalg::{c, hermiticity_deviation, max_abs, trace, CMat, HermitianEigen};
use crate::spin::{Axis, SpinModel, SpinSystem};

/// Prepolarization conditions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThermalConfig {
    /// Prepolarizing field B_p in tesla.
    pub prepolarization_field: f64,
    /// Sample temperature in kelvin.
    pub temperature: f64,
}

impl ThermalConfig {
    pub fn new(prepolarization_field: f64, temperature: f64) -> Result<Self> {
        let cfg = ThermalConfig {
            prepolarization_field,
            temperature,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.prepolarization_field > 0.0 && self.prepolarization_field.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "prepolarization field must be positive, got {}",
                self.prepolarization_field
            )));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }

    /// ε = 2π γ ħ B_p / (k_B T) for γ/2π given in Hz/T.
    pub fn epsilon(&self, gamma_hz_per_t: f64) -> f64 {
        2.0 * PI * gamma_hz_per_t * HBAR * self.prepolarization_field
            / (BOLTZMANN * self.temperature)
    }
}

impl Default for ThermalConfig {
    fn default() -> Self {
        ThermalConfig {
            prepolarization_field: 1.5,
            temperature: 300.0,
        }
    }
}

/// Trace tolerance accepted when wrapping a matrix as a density state.
pub const TRACE_TOLERANCE: f64 = 1e-10;

/// A Hermitian, unit-trace density matrix in the product I_z basis.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityState {
    matrix: CMat,
}

impl DensityState {
    /// Wrap a matrix after checking shape, Hermiticity and trace.
    pub fn new(matrix: CMat) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::DimensionMismatch {
                expected: matrix.nrows(),
                got: matrix.ncols(),
            });
        }
        let scale = max_abs(&matrix).max(1.0);
        let herm = hermiticity_deviation(&matrix);
        if herm > 1e-10 * scale {
            return Err(Error::NotHermitian(herm));
        }
        let tr = trace(&matrix);
        if (tr - c(1.0)).norm() > TRACE_TOLERANCE {
            return Err(Error::InvalidArgument(format!("density matrix trace is {tr}")));
        }
        Ok(DensityState { matrix })
    }

    pub(crate) fn from_matrix_unchecked(matrix: CMat) -> Self {
        DensityState { matrix }
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        DensityState {
            matrix: CMat::identity(dim, dim) * c(1.0 / dim as f64),
        }
    }

    pub fn matrix(&self) -> &CMat {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMat {
        self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// ρ − 𝟙/d, the part that carries all observable signal.
    pub fn deviation(&self) -> CMat {
        let d = self.dim();
        &self.matrix - CMat::identity(d, d) * c(1.0 / d as f64)
    }

    /// Re Tr(ρ A).
    pub fn expectation(&self, op: &CMat) -> f64 {
        crate::linalg::trace_product(&self.matrix, op).re
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        HermitianEigen::new(&self.matrix).values
    }

    /// ½ Σ |λ(ρ − σ)|.
    pub fn trace_distance(&self, other: &DensityState) -> f64 {
        let diff = &self.matrix - &other.matrix;
        0.5 * HermitianEigen::new(&diff).values.iter().map(|v| v.abs()).sum::<f64>()
    }
}

/// Sudden-switch state ρ₀ = 𝟙/2ⁿ − Σ_j ε_j I_{jz}.
pub fn sudden_state(system: &SpinSystem, cfg: &ThermalConfig) -> Result<DensityState> {
    sudden_state_along(system, cfg, Axis::Z.unit())
}

/// Sudden-switch state with the prepolarization along `direction`:
/// 𝟙/2ⁿ − Σ_j ε_j n̂·I_j.
pub fn sudden_state_along(
    system: &SpinSystem,
    cfg: &ThermalConfig,
    direction: [f64; 3],
) -> Result<DensityState> {
    cfg.validate()?;
    let norm = crate::linalg::norm3(direction);
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::InvalidArgument("direction must be a non-zero vector".into()));
    }
    let n_hat = crate::linalg::scale3(direction, 1.0 / norm);
    let model = SpinModel::new(system)?;
    let ops = model.ops();
    let dim = ops.dim();
    let mut rho = CMat::identity(dim, dim) * c(1.0 / dim as f64);
    for k in 0..system.len() {
        rho -= ops.along(k, n_hat) * c(cfg.epsilon(system.gamma(k)));
    }
    Ok(DensityState::from_matrix_unchecked(rho))
}

/// Adiabatic-switch state of a two-spin system (spins I = 0, S = 1), for a
/// guiding field along +z switched off slowly compared with 1/J:
///
/// ρ₀ = 𝟙/4 − ½(ε_I+ε_S)(I_z+S_z) + sgn(J)|ε_I−ε_S|(I_xS_x+I_yS_y).
///
/// High-field populations of the sudden state are carried onto the zero-field
/// eigenstates they connect to, so this is the slow-ramp limit of
/// [`sudden_state`].
pub fn adiabatic_state_two_spin(system: &SpinSystem, cfg: &ThermalConfig) -> Result<DensityState> {
    cfg.validate()?;
    if system.len() != 2 {
        return Err(Error::InvalidArgument(format!(
            "two-spin adiabatic state needs 2 spins, got {}",
            system.len()
        )));
    }
    let j = system.j(0, 1);
    if j == 0.0 {
        return Err(Error::NoCoupling(0, 1));
    }
    let ei = cfg.epsilon(system.gamma(0));
    let es = cfg.epsilon(system.gamma(1));
    let model = SpinModel::new(system)?;
    let ops = model.ops();
    let fz = ops.total(Axis::Z);
    let flip = ops.get(0, Axis::X) * ops.get(1, Axis::X) + ops.get(0, Axis::Y) * ops.get(1, Axis::Y);
    let rho = CMat::identity(4, 4) * c(0.25) - fz * c(0.5 * (ei + es))
        + flip * c(j.signum() * (ei - es).abs());
    Ok(DensityState::from_matrix_unchecked(rho))
}

/// Time profile of the guiding field during switch-off.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RampShape {
    /// Field falls linearly in time.
    Linear,
    /// B(t) = B₀(1 + cos(πt/T))/2, with zero slope at both ends.
    RaisedCosine,
    /// Field fractions at equally spaced times from 1 down to 0, linearly
    /// interpolated. Must be non-increasing.
    Tabulated(Vec<f64>),
}

/// Guiding-field switch-off along +z.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ramp {
    /// Field at the start of the ramp, tesla.
    pub start_field: f64,
    /// Ramp duration, seconds.
    pub duration: f64,
    pub shape: RampShape,
    /// Number of piecewise-constant steps. `None` uses 200 steps per 1/min|J|.
    pub steps: Option<usize>,
}

/// Default step density of ramp integration, per 1/min|J|.
pub const RAMP_STEPS_PER_J: f64 = 200.0;

impl Ramp {
    pub fn linear(start_field: f64, duration: f64) -> Self {
        Ramp {
            start_field,
            duration,
            shape: RampShape::Linear,
            steps: None,
        }
    }

    pub fn raised_cosine(start_field: f64, duration: f64) -> Self {
        Ramp {
            start_field,
            duration,
            shape: RampShape::RaisedCosine,
            steps: None,
        }
    }

    pub fn with_steps(mut self, steps: usize) -> Self {
        self.steps = Some(steps);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.start_field >= 0.0 && self.start_field.is_finite()) {
            return Err(Error::InvalidArgument("ramp start field must be >= 0".into()));
        }
        if !(self.duration >= 0.0 && self.duration.is_finite()) {
            return Err(Error::InvalidArgument("ramp duration must be >= 0".into()));
        }
        if let RampShape::Tabulated(v) = &self.shape {
            if v.len() < 2 {
                return Err(Error::InvalidArgument("tabulated ramp needs at least 2 points".into()));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidArgument("tabulated ramp has non-finite values".into()));
            }
            if v.windows(2).any(|w| w[1] > w[0]) {
                return Err(Error::InvalidArgument("ramp must be non-increasing".into()));
            }
        }
        if self.steps == Some(0) {
            return Err(Error::InvalidArgument("ramp needs at least one step".into()));
        }
        Ok(())
    }

    /// Field fraction B(t)/B₀ at fractional time s ∈ [0, 1].
    pub fn fraction(&self, s: f64) -> f64 {
        let s = s.clamp(0.0, 1.0);
        match &self.shape {
            RampShape::Linear => 1.0 - s,
            RampShape::RaisedCosine => 0.5 * (1.0 + (PI * s).cos()),
            RampShape::Tabulated(v) => {
                let x = s * (v.len() - 1) as f64;
                let k = (x.floor() as usize).min(v.len() - 2);
                let f = x - k as f64;
                v[k] * (1.0 - f) + v[k + 1] * f
            }
        }
    }

    fn step_count(&self, system: &SpinSystem) -> usize {
        self.steps.unwrap_or_else(|| {
            let jmin = system.min_abs_coupling().unwrap_or(1.0);
            ((RAMP_STEPS_PER_J * self.duration * jmin).ceil() as usize).max(1)
        })
    }
}

/// Keep only the blocks of `rho` that are diagonal in the eigenbasis of `h`
/// (degenerate eigenspaces kept whole).
fn dephase(rho: &CMat, h: &CMat) -> CMat {
    let eig = HermitianEigen::new(h);
    let scale = eig.values.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    let tol = 1e-9 * scale;
    let mut r = eig.to_eigenbasis(rho);
    let d = r.nrows();
    for a in 0..d {
        for b in 0..d {
            if (eig.values[a] - eig.values[b]).abs() > tol {
                r[(a, b)] = c(0.0);
            }
        }
    }
    &eig.vectors * r * eig.vectors.adjoint()
}

/// Slow switch-off of a guiding field along +z, integrated numerically.
///
/// The sample starts in the sudden state dephased in the eigenbasis of the
/// Hamiltonian at the starting field (the state has sat in the guiding field
/// during transfer). The field then follows `ramp` down to zero in
/// piecewise-constant steps evaluated at step midpoints.
pub fn adiabatic_state_general(
    system: &SpinSystem,
    cfg: &ThermalConfig,
    ramp: &Ramp,
) -> Result<DensityState> {
    ramp.validate()?;
    let model = SpinModel::new(system)?;
    if let Some(jmin) = system.min_abs_coupling() {
        if ramp.duration * jmin < 10.0 && ramp.duration > 0.0 {
            log::warn!(
                "ramp of {} s is shorter than 10/min|J| = {} s; result will not be adiabatic",
                ramp.duration,
                10.0 / jmin
            );
        }
    }
    let sudden = sudden_state(system, cfg)?;
    let h_start = model.hamiltonian([0.0, 0.0, ramp.start_field]);
    let mut rho = dephase(sudden.matrix(), &h_start);
    if ramp.duration == 0.0 {
        return Ok(DensityState::from_matrix_unchecked(rho));
    }
    let steps = ramp.step_count(system);
    let dt = ramp.duration / steps as f64;
    for k in 0..steps {
        let s = (k as f64 + 0.5) / steps as f64;
        let b = ramp.start_field * ramp.fraction(s);
        let u = HermitianEigen::new(&model.hamiltonian([0.0, 0.0, b])).propagator(dt);
        rho = &u * rho * u.adjoint();
    }
    // restore exact Hermiticity lost to rounding
    let rho = (&rho + rho.adjoint()) * c(0.5);
    Ok(DensityState::from_matrix_unchecked(rho))
}
