//! Sampled signals, Fourier spectra and 1D/2D acquisitions.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::{program_propagator, ApplyOptions, PulseProgram};
use crate::error::{Error, Result};
use crate::linalg::{conjugate, CMat, HermitianEigen};
use crate::spin::{Axis, SpinModel};
use crate::state::DensityState;

/// Uniformly sampled signal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries<T = f64> {
    pub t0: f64,
    pub dt: f64,
    pub samples: Vec<T>,
}

impl<T> TimeSeries<T> {
    pub fn new(t0: f64, dt: f64, samples: Vec<T>) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) || !t0.is_finite() {
            return Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")));
        }
        Ok(TimeSeries { t0, dt, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.time(k)).collect()
    }
}

/// Frequencies (rad/s) and amplitudes of a signal expansion, merged over
/// numerically identical frequencies.
struct Expansion {
    omegas: Vec<f64>,
    amplitudes: Vec<Complex64>,
    offset: f64,
}

/// Evaluates observable signals for many initial states under one Hamiltonian.
pub(crate) struct SignalEngine {
    eig: HermitianEigen,
    obs: CMat,
}

impl SignalEngine {
    pub fn new(h: &CMat, observable: &CMat) -> Self {
        let eig = HermitianEigen::new(h);
        let obs = eig.to_eigenbasis(observable);
        SignalEngine { eig, obs }
    }

    fn expand(&self, rho: &CMat) -> Expansion {
        let r = self.eig.to_eigenbasis(rho);
        let d = r.nrows();
        let mut pairs: Vec<(f64, Complex64)> = Vec::new();
        let mut offset = 0.0;
        let mut strongest = 0.0_f64;
        for a in 0..d {
            for b in 0..d {
                let term = r[(a, b)] * self.obs[(b, a)];
                if a == b {
                    offset += term.re;
                    continue;
                }
                let w = self.eig.values[a] - self.eig.values[b];
                if w > 0.0 || (w == 0.0 && a > b) {
                    strongest = strongest.max(term.norm());
                    pairs.push((w, term * 2.0));
                }
            }
        }
        pairs.retain(|p| p.1.norm() > 1e-15 * strongest);
        pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
        let mut omegas: Vec<f64> = Vec::new();
        let mut amplitudes: Vec<Complex64> = Vec::new();
        // merge frequencies that differ only by rounding (1e-9 Hz)
        let tol = 2.0 * PI * 1e-9;
        for (w, a) in pairs {
            match omegas.last() {
                Some(&last) if w - last <= tol => *amplitudes.last_mut().unwrap() += a,
                _ => {
                    omegas.push(w);
                    amplitudes.push(a);
                }
            }
        }
        Expansion {
            omegas,
            amplitudes,
            offset,
        }
    }

    /// Samples Tr[ρ(t) O]·e^{−t/T₂} at t = k·dt.
    pub fn samples(&self, rho: &CMat, dt: f64, npoints: usize, t2: f64) -> Vec<f64> {
        let e = self.expand(rho);
        (0..npoints)
            .map(|k| {
                let t = k as f64 * dt;
                let osc: f64 = e
                    .omegas
                    .iter()
                    .zip(&e.amplitudes)
                    .map(|(&w, &a)| {
                        let (s, c) = (w * t).sin_cos();
                        a.re * c + a.im * s
                    })
                    .sum();
                let decay = if t2.is_infinite() { 1.0 } else { (-t / t2).exp() };
                (e.offset + osc) * decay
            })
            .collect()
    }

    pub fn propagator(&self, t: f64) -> CMat {
        self.eig.propagator(t)
    }
}

fn check_t2(t2: f64) -> Result<()> {
    if t2.is_nan() || t2 <= 0.0 {
        return Err(Error::InvalidArgument(format!("T2 must be positive, got {t2}")));
    }
    Ok(())
}

/// Free-induction decay of the `axis` magnetization in field `bias`, with a
/// mono-exponential T₂ envelope (`f64::INFINITY` for none).
pub fn acquire_fid(
    state: &DensityState,
    model: &SpinModel,
    bias: [f64; 3],
    dt: f64,
    npoints: usize,
    t2: f64,
    axis: Axis,
) -> Result<TimeSeries> {
    check_t2(t2)?;
    if state.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: state.dim(),
        });
    }
    if t2.is_finite() && (npoints as f64) * dt < 3.0 * PI * t2 {
        log::warn!(
            "acquisition of {} s is shorter than 3/linewidth = {} s",
            npoints as f64 * dt,
            3.0 * PI * t2
        );
    }
    let engine = SignalEngine::new(&model.hamiltonian(bias), &model.magnetization_operator(axis));
    let samples = engine.samples(state.matrix(), dt, npoints, t2);
    TimeSeries::new(0.0, dt, samples)
}

/// Apodization applied before the Fourier transform.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Window {
    #[default]
    None,
    /// Multiply by e^{−π·lb·t}, broadening Lorentzian lines by `line_broadening_hz`.
    Exponential { line_broadening_hz: f64 },
}

impl Window {
    fn factor(&self, t: f64) -> f64 {
        match *self {
            Window::None => 1.0,
            Window::Exponential { line_broadening_hz } => (-PI * line_broadening_hz * t).exp(),
        }
    }
}

/// Complex spectrum on an ascending frequency axis (Hz), unnormalized DFT.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub freqs: Vec<f64>,
    pub values: Vec<Complex64>,
}

fn fftshift_axis(n: usize, dt: f64) -> (Vec<f64>, Vec<usize>) {
    let df = 1.0 / (n as f64 * dt);
    let half = n / 2;
    // ascending order: bins n-half.. then 0..n-half
    let order: Vec<usize> = (n - half..n).chain(0..n - half).collect();
    let freqs = order
        .iter()
        .map(|&k| {
            if k >= n - half {
                (k as f64 - n as f64) * df
            } else {
                k as f64 * df
            }
        })
        .collect();
    (freqs, order)
}

/// Discrete Fourier transform X_k = Σ_n x_n e^{−2πikn/N} of an apodized,
/// optionally zero-filled signal.
pub fn fft_spectrum(ts: &TimeSeries, window: Window, zerofill: Option<usize>) -> Result<Spectrum> {
    if ts.len() < 2 {
        return Err(Error::InvalidArgument("spectrum needs at least 2 points".into()));
    }
    let n = zerofill.unwrap_or(0).max(ts.len());
    let mut buf: Vec<Complex64> = ts
        .samples
        .iter()
        .enumerate()
        .map(|(k, &x)| Complex64::new(x * window.factor(k as f64 * ts.dt), 0.0))
        .collect();
    buf.resize(n, Complex64::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let (freqs, order) = fftshift_axis(n, ts.dt);
    let values = order.iter().map(|&k| buf[k]).collect();
    Ok(Spectrum { freqs, values })
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.freqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs.is_empty()
    }

    pub fn resolution(&self) -> f64 {
        self.freqs[1] - self.freqs[0]
    }

    pub fn magnitude(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.norm()).collect()
    }

    /// Index of the largest magnitude within `[lo, hi]` Hz.
    pub fn peak_in(&self, lo: f64, hi: f64) -> Option<usize> {
        (0..self.len())
            .filter(|&k| self.freqs[k] >= lo && self.freqs[k] <= hi)
            .max_by(|&a, &b| self.values[a].norm().total_cmp(&self.values[b].norm()))
    }

    /// Strongest bin at positive frequency.
    pub fn positive_peak(&self) -> Option<usize> {
        self.peak_in(f64::MIN_POSITIVE, f64::INFINITY)
    }

    /// Full width at half maximum of the magnitude |X| around `peak`.
    pub fn magnitude_fwhm(&self, peak: usize) -> f64 {
        fwhm(&self.freqs, &self.magnitude(), peak)
    }

    /// Full width at half maximum of the power |X|² around `peak`.
    pub fn power_fwhm(&self, peak: usize) -> f64 {
        let p: Vec<f64> = self.values.iter().map(|v| v.norm_sqr()).collect();
        fwhm(&self.freqs, &p, peak)
    }

    /// Full width at half maximum of the absorption-mode line at `peak`, after
    /// zero-order phasing to make the peak bin real and positive.
    pub fn absorption_fwhm(&self, peak: usize) -> f64 {
        let rot = Complex64::from_polar(1.0, -self.values[peak].arg());
        let re: Vec<f64> = self.values.iter().map(|v| (v * rot).re).collect();
        fwhm(&self.freqs, &re, peak)
    }
}

/// Width at half of `y[peak]`, with linear interpolation of the crossings.
pub fn fwhm(x: &[f64], y: &[f64], peak: usize) -> f64 {
    let half = 0.5 * y[peak];
    let mut lo = peak;
    while lo > 0 && y[lo] > half {
        lo -= 1;
    }
    let mut hi = peak;
    while hi + 1 < y.len() && y[hi] > half {
        hi += 1;
    }
    let cross = |a: usize, b: usize| {
        let (ya, yb) = (y[a], y[b]);
        if (yb - ya).abs() < f64::MIN_POSITIVE {
            x[a]
        } else {
            x[a] + (half - ya) / (yb - ya) * (x[b] - x[a])
        }
    };
    let left = if lo < peak { cross(lo, lo + 1) } else { x[lo] };
    let right = if hi > peak { cross(hi - 1, hi) } else { x[hi] };
    right - left
}

/// Largest number of points accepted in a 2D acquisition.
pub const MAX_2D_POINTS: usize = 1 << 24;

/// Pulse–t₁–pulse–t₂ acquisition parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Acquisition2d {
    pub prep: PulseProgram,
    pub mix: PulseProgram,
    pub dt1: f64,
    pub n1: usize,
    pub dt2: f64,
    pub n2: usize,
    /// T₂ envelope applied along both time axes.
    pub t2: f64,
    pub axis: Axis,
    pub bias: [f64; 3],
    #[serde(default)]
    pub options: ApplyOptions,
}

/// Time-domain data and its 2D spectrum, both row-major with t₁/F1 as rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spectrum2d {
    pub n1: usize,
    pub n2: usize,
    pub time_data: Vec<f64>,
    pub f1: Vec<f64>,
    pub f2: Vec<f64>,
    pub values: Vec<Complex64>,
}

impl Spectrum2d {
    pub fn at(&self, i1: usize, i2: usize) -> Complex64 {
        self.values[i1 * self.n2 + i2]
    }

    pub fn row(&self, i1: usize) -> &[f64] {
        &self.time_data[i1 * self.n2..(i1 + 1) * self.n2]
    }

    /// Index of the frequency bin nearest `f` on an axis.
    pub fn bin(axis: &[f64], f: f64) -> usize {
        (0..axis.len())
            .min_by(|&a, &b| (axis[a] - f).abs().total_cmp(&(axis[b] - f).abs()))
            .unwrap_or(0)
    }
}

/// For each t₁ on the grid: apply `prep`, evolve t₁, apply `mix`, record the
/// FID over t₂; then transform both axes.
pub fn acquire_2d(state: &DensityState, model: &SpinModel, acq: &Acquisition2d) -> Result<Spectrum2d> {
    check_t2(acq.t2)?;
    if acq.n1 == 0 || acq.n2 == 0 {
        return Err(Error::InvalidArgument("2D grid must be non-empty".into()));
    }
    if acq.n1.checked_mul(acq.n2).is_none_or(|p| p > MAX_2D_POINTS) {
        return Err(Error::InvalidArgument(format!(
            "2D grid {}x{} exceeds {} points",
            acq.n1, acq.n2, MAX_2D_POINTS
        )));
    }
    for dt in [acq.dt1, acq.dt2] {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidArgument("2D time steps must be positive".into()));
        }
    }
    if state.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: state.dim(),
        });
    }
    let u_prep = program_propagator(model, &acq.prep, acq.bias, &acq.options)?;
    let u_mix = program_propagator(model, &acq.mix, acq.bias, &acq.options)?;
    let engine = SignalEngine::new(&model.hamiltonian(acq.bias), &model.magnetization_operator(acq.axis));
    let rho_prep = conjugate(&u_prep, state.matrix());

    let rows: Vec<Vec<f64>> = (0..acq.n1)
        .into_par_iter()
        .map(|i1| {
            let t1 = i1 as f64 * acq.dt1;
            let u = &u_mix * engine.propagator(t1);
            let rho = conjugate(&u, &rho_prep);
            let decay1 = if acq.t2.is_infinite() { 1.0 } else { (-t1 / acq.t2).exp() };
            engine
                .samples(&rho, acq.dt2, acq.n2, acq.t2)
                .into_iter()
                .map(|v| v * decay1)
                .collect()
        })
        .collect();
    let time_data: Vec<f64> = rows.into_iter().flatten().collect();

    let (n1, n2) = (acq.n1, acq.n2);
    let mut planner = FftPlanner::new();
    let mut buf: Vec<Complex64> = time_data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let fft2 = planner.plan_fft_forward(n2);
    for row in buf.chunks_mut(n2) {
        fft2.process(row);
    }
    let fft1 = planner.plan_fft_forward(n1);
    let mut col = vec![Complex64::new(0.0, 0.0); n1];
    for i2 in 0..n2 {
        for i1 in 0..n1 {
            col[i1] = buf[i1 * n2 + i2];
        }
        fft1.process(&mut col);
        for i1 in 0..n1 {
            buf[i1 * n2 + i2] = col[i1];
        }
    }
    let (f1, o1) = fftshift_axis(n1, acq.dt1);
    let (f2, o2) = fftshift_axis(n2, acq.dt2);
    let mut values = Vec::with_capacity(n1 * n2);
    for &k1 in &o1 {
        for &k2 in &o2 {
            values.push(buf[k1 * n2 + k2]);
        }
    }
    Ok(Spectrum2d {
        n1,
        n2,
        time_data,
        f1,
        f2,
        values,
    })
}
