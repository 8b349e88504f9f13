//! SERF magnetometer response: Bloch model, response functions and the
//! two-axis interference effect.
//!
//! The Bloch frame has the pump along y and the probe along x, so the raw
//! output is P_x. Lab fields reach the Bloch frame through [`SensorGeometry`].

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constants::GAMMA_ELECTRON;
use crate::dynamics::TimeSeries;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MagnetometerParams {
    /// Optical pumping rate, 1/s.
    pub r_op: f64,
    /// Relaxation rate without pumping, 1/s.
    pub r_rel: f64,
    /// Nuclear slowing-down factor.
    pub q: f64,
    /// |γ_e|/2π, Hz/T.
    pub gamma_e: f64,
    /// Output gain per unit polarization.
    pub alpha: f64,
}

impl Default for MagnetometerParams {
    fn default() -> Self {
        MagnetometerParams {
            r_op: 1000.0,
            r_rel: 100.0,
            q: 5.0,
            gamma_e: GAMMA_ELECTRON,
            alpha: 1.0,
        }
    }
}

impl MagnetometerParams {
    pub fn validate(&self) -> Result<()> {
        let ok = |x: f64| x.is_finite() && x > 0.0;
        if !ok(self.r_op) || !ok(self.r_rel) {
            return Err(Error::InvalidArgument("pumping and relaxation rates must be positive".into()));
        }
        if !(self.q >= 1.0 && self.q.is_finite()) {
            return Err(Error::InvalidArgument(format!("slowing-down factor must be >= 1, got {}", self.q)));
        }
        if !self.gamma_e.is_finite() || !self.alpha.is_finite() {
            return Err(Error::InvalidArgument("gamma_e and alpha must be finite".into()));
        }
        Ok(())
    }

    /// R_op + R_rel.
    pub fn total_rate(&self) -> f64 {
        self.r_op + self.r_rel
    }

    /// Relaxation rate of the slowed-down polarization, (R_op + R_rel)/q.
    pub fn effective_rate(&self) -> f64 {
        self.total_rate() / self.q
    }

    /// -3 dB bandwidth of the zero-bias response, Hz.
    pub fn bandwidth_hz(&self) -> f64 {
        self.effective_rate() / (2.0 * PI)
    }

    /// Equilibrium polarization R_op/(R_op + R_rel).
    pub fn p0(&self) -> f64 {
        self.r_op / self.total_rate()
    }

    /// β = 2πγ_e B/(R_op + R_rel).
    pub fn beta(&self, b: [f64; 3]) -> [f64; 3] {
        let k = 2.0 * PI * self.gamma_e / self.total_rate();
        [k * b[0], k * b[1], k * b[2]]
    }
}

/// Quasi-steady polarization in field `b` (Bloch frame).
pub fn steady_polarization(b: [f64; 3], params: &MagnetometerParams) -> [f64; 3] {
    let [bx, by, bz] = params.beta(b);
    let p0 = params.p0();
    let d = 1.0 + bx * bx + by * by + bz * bz;
    [
        p0 * (bz + bx * by) / d,
        p0 * (1.0 + by * by) / d,
        p0 * (-bx + bz * by) / d,
    ]
}

fn derivative(p: [f64; 3], b: [f64; 3], params: &MagnetometerParams) -> [f64; 3] {
    // precession written as P × B so that the stationary point is the
    // quasi-steady solution above
    let w = 2.0 * PI * params.gamma_e;
    let (wx, wy, wz) = (w * b[0], w * b[1], w * b[2]);
    let g = params.total_rate();
    let inv_q = 1.0 / params.q;
    [
        inv_q * ((p[1] * wz - p[2] * wy) - g * p[0]),
        inv_q * ((p[2] * wx - p[0] * wz) + params.r_op - g * p[1]),
        inv_q * ((p[0] * wy - p[1] * wx) - g * p[2]),
    ]
}

fn rk4_step(p: [f64; 3], b0: [f64; 3], bm: [f64; 3], b1: [f64; 3], dt: f64, params: &MagnetometerParams) -> [f64; 3] {
    let add = |a: [f64; 3], k: [f64; 3], s: f64| [a[0] + s * k[0], a[1] + s * k[1], a[2] + s * k[2]];
    let k1 = derivative(p, b0, params);
    let k2 = derivative(add(p, k1, 0.5 * dt), bm, params);
    let k3 = derivative(add(p, k2, 0.5 * dt), bm, params);
    let k4 = derivative(add(p, k3, dt), b1, params);
    [
        p[0] + dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        p[1] + dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        p[2] + dt / 6.0 * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2]),
    ]
}

fn check_step(dt: f64, params: &MagnetometerParams) {
    let limit = 0.1 * params.q / params.total_rate();
    if dt >= limit {
        log::warn!("Bloch step {dt} s is not below 0.1·q/(R_op+R_rel) = {limit} s");
    }
}

fn check_norm(p: [f64; 3]) -> Result<()> {
    let n = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
    if !(n <= 1.0 + 1e-6) {
        return Err(Error::Unstable(n));
    }
    Ok(())
}

/// Integrate the Bloch equation for a field given as a function of time,
/// returning P at t0 + k·dt for k = 0..npoints.
pub fn bloch_integrate_fn(
    field: impl Fn(f64) -> [f64; 3],
    t0: f64,
    dt: f64,
    npoints: usize,
    params: &MagnetometerParams,
    p_initial: [f64; 3],
) -> Result<TimeSeries<[f64; 3]>> {
    params.validate()?;
    check_step(dt, params);
    let mut out = Vec::with_capacity(npoints);
    let mut p = p_initial;
    check_norm(p)?;
    for k in 0..npoints {
        out.push(p);
        if k + 1 == npoints {
            break;
        }
        let t = t0 + k as f64 * dt;
        p = rk4_step(p, field(t), field(t + 0.5 * dt), field(t + dt), dt, params);
        check_norm(p)?;
    }
    TimeSeries::new(t0, dt, out)
}

/// Cubic (Catmull–Rom) value midway between samples k and k+1.
fn midpoint(samples: &[[f64; 3]], k: usize) -> [f64; 3] {
    let n = samples.len();
    let a = samples[k];
    let b = samples[k + 1];
    if k == 0 || k + 2 >= n {
        return [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1]), 0.5 * (a[2] + b[2])];
    }
    let p = samples[k - 1];
    let q = samples[k + 2];
    let mut m = [0.0; 3];
    for i in 0..3 {
        m[i] = (-p[i] + 9.0 * a[i] + 9.0 * b[i] - q[i]) / 16.0;
    }
    m
}

/// Integrate the Bloch equation driven by a sampled field (Bloch frame).
pub fn bloch_integrate(
    field: &TimeSeries<[f64; 3]>,
    params: &MagnetometerParams,
    p_initial: [f64; 3],
) -> Result<TimeSeries<[f64; 3]>> {
    params.validate()?;
    check_step(field.dt, params);
    let s = &field.samples;
    let mut out = Vec::with_capacity(s.len());
    let mut p = p_initial;
    check_norm(p)?;
    for k in 0..s.len() {
        out.push(p);
        if k + 1 == s.len() {
            break;
        }
        p = rk4_step(p, s[k], midpoint(s, k), s[k + 1], field.dt, params);
        check_norm(p)?;
    }
    TimeSeries::new(field.t0, field.dt, out)
}

/// Linear map from lab coordinates to the Bloch frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorGeometry {
    /// Row i gives Bloch component i as a combination of lab x, y, z.
    pub lab_to_bloch: [[f64; 3]; 3],
}

impl Default for SensorGeometry {
    /// Lab z (bias) along the pump, lab x along the sensitive axis, lab y
    /// along the probe.
    fn default() -> Self {
        SensorGeometry {
            lab_to_bloch: [[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]],
        }
    }
}

impl SensorGeometry {
    pub fn to_bloch(&self, lab: [f64; 3]) -> [f64; 3] {
        let m = &self.lab_to_bloch;
        [0, 1, 2].map(|i| m[i][0] * lab[0] + m[i][1] * lab[1] + m[i][2] * lab[2])
    }
}

/// Amplitude and phase response to transverse lab fields at one frequency.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResponsePoint {
    pub freq: f64,
    pub bias_bz: f64,
    /// |P_x| per tesla of lab-x drive.
    pub ax: f64,
    pub phix: f64,
    /// |P_x| per tesla of lab-y drive.
    pub ay: f64,
    pub phiy: f64,
    pub converged: bool,
}

/// Least-squares fit of c + a·cos(ωt) + b·sin(ωt).
struct Quadrature {
    amplitude: f64,
    /// Phase Φ in amplitude·cos(ωt + Φ).
    phase: f64,
}

fn demodulate(values: &[f64], times: &[f64], freq: f64) -> Quadrature {
    let w = 2.0 * PI * freq;
    let mut ata = nalgebra::Matrix3::<f64>::zeros();
    let mut atb = nalgebra::Vector3::<f64>::zeros();
    for (&v, &t) in values.iter().zip(times) {
        let row = nalgebra::Vector3::new(1.0, (w * t).cos(), (w * t).sin());
        ata += row * row.transpose();
        atb += row * v;
    }
    let x = ata.lu().solve(&atb).unwrap_or_else(nalgebra::Vector3::zeros);
    let (a, b) = (x[1], x[2]);
    Quadrature {
        amplitude: a.hypot(b),
        phase: (-b).atan2(a),
    }
}

/// Samples per drive period used by the response and detection routines.
const SAMPLES_PER_PERIOD: f64 = 200.0;

fn drive_response(
    freq: f64,
    bias_bz: f64,
    drive_axis: usize,
    params: &MagnetometerParams,
    geometry: &SensorGeometry,
) -> Result<(Quadrature, bool)> {
    let rate = params.effective_rate();
    // drive small enough to stay linear: β ≈ 1e-4
    let b_drive = 1e-4 * params.total_rate() / (2.0 * PI * params.gamma_e);
    let bias = geometry.to_bloch([0.0, 0.0, bias_bz]);
    let larmor = 2.0 * PI * params.gamma_e * bias_bz.abs() / params.q;
    let mut dt = (0.02 / rate).min(1.0 / (freq.abs().max(1e-9) * SAMPLES_PER_PERIOD));
    if larmor > 0.0 {
        dt = dt.min(0.05 / larmor);
    }
    let period = 1.0 / freq;
    let transient = 5.0 / rate;
    let cycles = (2.0 * (transient / period).ceil()).max(10.0);
    let t_settle = (transient / period).ceil() * period;
    let t_end = t_settle + cycles * period;
    let steps_per_period = (period / dt).ceil();
    let dt = period / steps_per_period;
    let npoints = (t_end / dt).round() as usize + 1;
    let field = |t: f64| {
        let mut lab = [0.0, 0.0, bias_bz];
        lab[drive_axis] += b_drive * (2.0 * PI * freq * t).cos();
        geometry.to_bloch(lab)
    };
    let p_init = steady_polarization(bias, params);
    let out = bloch_integrate_fn(field, 0.0, dt, npoints, params, p_init)?;
    let start = (t_settle / dt).round() as usize;
    let per = steps_per_period as usize;
    let total = (npoints - 1 - start) / per * per;
    let half = total / 2 / per * per;
    let series = |a: usize, b: usize| -> (Vec<f64>, Vec<f64>) {
        ((a..b).map(|k| out.samples[k][0]).collect(), (a..b).map(|k| k as f64 * dt).collect())
    };
    let (v, t) = series(start, start + total);
    let q = demodulate(&v, &t, freq);
    let (v1, t1) = series(start, start + half);
    let (v2, t2) = series(start + half, start + 2 * half);
    let q1 = demodulate(&v1, &t1, freq);
    let q2 = demodulate(&v2, &t2, freq);
    let converged = (q1.amplitude - q2.amplitude).abs() <= 0.01 * q.amplitude.max(f64::MIN_POSITIVE);
    Ok((
        Quadrature {
            amplitude: q.amplitude / b_drive,
            phase: q.phase,
        },
        converged,
    ))
}

/// Numerical A_ξ(ν, B_z), Φ_ξ(ν, B_z) for ξ = lab x, y, by driving the Bloch
/// equation and demodulating P_x after the transient.
pub fn response_surface(
    freqs: &[f64],
    bias_bz: f64,
    params: &MagnetometerParams,
    geometry: &SensorGeometry,
) -> Result<Vec<ResponsePoint>> {
    params.validate()?;
    if freqs.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
        return Err(Error::InvalidArgument("response frequencies must be positive".into()));
    }
    freqs
        .par_iter()
        .map(|&freq| {
            let (x, cx) = drive_response(freq, bias_bz, 0, params, geometry)?;
            let (y, cy) = drive_response(freq, bias_bz, 1, params, geometry)?;
            if !(cx && cy) {
                log::warn!("demodulation at {freq} Hz did not converge");
            }
            Ok(ResponsePoint {
                freq,
                bias_bz,
                ax: x.amplitude,
                phix: x.phase,
                ay: y.amplitude,
                phiy: y.phase,
                converged: cx && cy,
            })
        })
        .collect()
}

/// Linear interpolation of a response surface (sorted by frequency) at `freq`.
pub fn interpolate_response(points: &[ResponsePoint], freq: f64) -> Option<ResponsePoint> {
    let k = points.windows(2).position(|w| w[0].freq <= freq && freq <= w[1].freq)?;
    let (a, b) = (&points[k], &points[k + 1]);
    let s = if b.freq == a.freq { 0.0 } else { (freq - a.freq) / (b.freq - a.freq) };
    let lerp = |x: f64, y: f64| x + s * (y - x);
    let lerp_phase = |x: f64, y: f64| {
        let mut d = y - x;
        d -= 2.0 * PI * (d / (2.0 * PI)).round();
        let mut p = x + s * d;
        if p <= -PI {
            p += 2.0 * PI;
        } else if p > PI {
            p -= 2.0 * PI;
        }
        p
    };
    Some(ResponsePoint {
        freq,
        bias_bz: a.bias_bz,
        ax: lerp(a.ax, b.ax),
        phix: lerp_phase(a.phix, b.phix),
        ay: lerp(a.ay, b.ay),
        phiy: lerp_phase(a.phiy, b.phiy),
        converged: a.converged && b.converged,
    })
}

/// S_tot = √((S_x² + S_y²)(1 + χ cos Δφ)), χ = 2S_xS_y/(S_x² + S_y²).
pub fn interference_amplitude(s_x: f64, s_y: f64, delta_phi: f64) -> Result<f64> {
    if !(s_x >= 0.0 && s_y >= 0.0) || !delta_phi.is_finite() {
        return Err(Error::InvalidArgument("signal amplitudes must be >= 0".into()));
    }
    let sum = s_x * s_x + s_y * s_y;
    if sum == 0.0 {
        return Ok(0.0);
    }
    let chi = 2.0 * s_x * s_y / sum;
    Ok((sum * (1.0 + chi * delta_phi.cos())).max(0.0).sqrt())
}

/// Sensor output α·P_x(t) for a sample field (lab frame) on top of a bias
/// along lab z. The cell starts in the steady state of the bias alone.
pub fn detect(
    sample_field: &TimeSeries<[f64; 3]>,
    bias_bz: f64,
    params: &MagnetometerParams,
    geometry: &SensorGeometry,
) -> Result<TimeSeries> {
    params.validate()?;
    let bloch: Vec<[f64; 3]> = sample_field
        .samples
        .iter()
        .map(|b| geometry.to_bloch([b[0], b[1], b[2] + bias_bz]))
        .collect();
    let series = TimeSeries::new(sample_field.t0, sample_field.dt, bloch)?;
    let p_init = steady_polarization(geometry.to_bloch([0.0, 0.0, bias_bz]), params);
    let p = bloch_integrate(&series, params, p_init)?;
    TimeSeries::new(p.t0, p.dt, p.samples.iter().map(|v| params.alpha * v[0]).collect())
}

/// Difference of two sensor outputs, as recorded by a gradiometer.
pub fn gradiometer(a: &TimeSeries, b: &TimeSeries) -> Result<TimeSeries> {
    if a.len() != b.len() || a.dt != b.dt {
        return Err(Error::InvalidArgument("gradiometer channels must share sampling".into()));
    }
    TimeSeries::new(a.t0, a.dt, a.samples.iter().zip(&b.samples).map(|(x, y)| x - y).collect())
}

/// Amplitude and phase (in amplitude·cos(2πνt + Φ)) of a tone in `ts`,
/// fitted over the largest whole number of periods after `skip` seconds.
pub fn tone(ts: &TimeSeries, freq: f64, skip: f64) -> Result<(f64, f64)> {
    if !(freq > 0.0) {
        return Err(Error::InvalidArgument("tone frequency must be positive".into()));
    }
    let start = ((skip / ts.dt).ceil() as usize).min(ts.len());
    let avail = (ts.len() - start) as f64 * ts.dt;
    let periods = (avail * freq).floor();
    if periods < 1.0 {
        return Err(Error::InvalidArgument("series too short for one period".into()));
    }
    let n = ((periods / freq) / ts.dt).round() as usize;
    let v = &ts.samples[start..start + n];
    let t: Vec<f64> = (start..start + n).map(|k| ts.time(k)).collect();
    let q = demodulate(v, &t, freq);
    Ok((q.amplitude, q.phase))
}
