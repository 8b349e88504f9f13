//! Gradient ascent pulse engineering with piecewise-constant three-axis fields.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::gate_fidelity;
use crate::dynamics::{program_propagator, ApplyOptions, PulseProgram, Segment};
use crate::error::{Error, Result};
use crate::linalg::{identity, unitarity_deviation, CMat, HermitianEigen};
use crate::spin::{Axis, SpinModel};

/// Piecewise-constant field: one 3-vector (tesla) per piece of equal length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PiecewiseControl {
    pub piece_duration: f64,
    pub amplitudes: Vec<[f64; 3]>,
    /// Maximum |B| per axis, tesla.
    pub bounds: [f64; 3],
}

impl PiecewiseControl {
    pub fn zeros(n_pieces: usize, piece_duration: f64, bounds: [f64; 3]) -> Result<Self> {
        let c = PiecewiseControl {
            piece_duration,
            amplitudes: vec![[0.0; 3]; n_pieces],
            bounds,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.piece_duration > 0.0 && self.piece_duration.is_finite()) {
            return Err(Error::InvalidArgument("piece duration must be positive".into()));
        }
        if self.amplitudes.is_empty() {
            return Err(Error::InvalidArgument("control needs at least one piece".into()));
        }
        if self.bounds.iter().any(|b| !(*b >= 0.0 && b.is_finite())) {
            return Err(Error::InvalidArgument("bounds must be finite and non-negative".into()));
        }
        for a in &self.amplitudes {
            for k in 0..3 {
                if !a[k].is_finite() || a[k].abs() > self.bounds[k] {
                    return Err(Error::InvalidArgument(format!("amplitude {} outside bound {}", a[k], self.bounds[k])));
                }
            }
        }
        Ok(())
    }

    pub fn n_pieces(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn duration(&self) -> f64 {
        self.piece_duration * self.amplitudes.len() as f64
    }

    pub fn to_program(&self) -> PulseProgram {
        PulseProgram {
            segments: self
                .amplitudes
                .iter()
                .map(|&field| Segment::Constant {
                    field,
                    duration: self.piece_duration,
                })
                .collect(),
        }
    }

    fn project(&mut self) {
        for a in &mut self.amplitudes {
            for k in 0..3 {
                a[k] = a[k].clamp(-self.bounds[k], self.bounds[k]);
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StopCriteria {
    pub max_iter: usize,
    pub f_goal: f64,
    pub grad_tol: f64,
}

impl Default for StopCriteria {
    fn default() -> Self {
        StopCriteria {
            max_iter: 2000,
            f_goal: 0.9999,
            grad_tol: 1e-12,
        }
    }
}

/// How much of the previous search direction is carried into the next one.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Momentum {
    /// Plain steepest ascent.
    None,
    Fixed(f64),
    /// β = max(0, g·(g − g_prev)/|g_prev|²).
    PolakRibiere,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrapeOptions {
    pub stop: StopCriteria,
    pub seed: u64,
    /// First trial step, as the largest per-entry change in tesla.
    pub initial_step: f64,
    pub shrink: f64,
    pub max_backtracks: usize,
    /// Weight of the previous search direction.
    pub momentum: Momentum,
    /// Random initial amplitudes as a fraction of the bound.
    pub init_fraction: f64,
}

impl Default for GrapeOptions {
    fn default() -> Self {
        GrapeOptions {
            stop: StopCriteria::default(),
            seed: 0,
            initial_step: 1e-7,
            shrink: 0.5,
            max_backtracks: 40,
            momentum: Momentum::None,
            init_fraction: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrapeResult {
    pub control: PiecewiseControl,
    pub fidelity: f64,
    pub trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

struct Piece {
    eig: HermitianEigen,
    u: CMat,
}

fn check_target(model: &SpinModel, target: &CMat) -> Result<()> {
    if target.nrows() != model.dim() || target.ncols() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: target.nrows(),
        });
    }
    let dev = unitarity_deviation(target);
    if dev > 1e-8 {
        return Err(Error::NotUnitary(dev));
    }
    Ok(())
}

struct Evaluator<'a> {
    model: &'a SpinModel,
    target_dag: CMat,
    zeeman: [CMat; 3],
}

impl<'a> Evaluator<'a> {
    fn new(model: &'a SpinModel, target: &CMat) -> Result<Self> {
        check_target(model, target)?;
        Ok(Evaluator {
            model,
            target_dag: target.adjoint(),
            zeeman: Axis::ALL.map(|a| model.zeeman_unit(a).clone()),
        })
    }

    fn pieces(&self, control: &PiecewiseControl) -> Result<Vec<Piece>> {
        control
            .amplitudes
            .par_iter()
            .map(|b| {
                let mut h = self.model.coupling().clone();
                for k in 0..3 {
                    if b[k] != 0.0 {
                        h += &self.zeeman[k] * Complex64::new(b[k], 0.0);
                    }
                }
                let eig = HermitianEigen::new(&h);
                let u = eig.propagator(control.piece_duration);
                Ok(Piece { eig, u })
            })
            .collect()
    }

    fn overlap(&self, u: &CMat) -> Complex64 {
        let d = u.nrows();
        let mut g = Complex64::new(0.0, 0.0);
        for i in 0..d {
            for k in 0..d {
                g += self.target_dag[(i, k)] * u[(k, i)];
            }
        }
        g
    }

    fn fidelity(&self, control: &PiecewiseControl) -> Result<f64> {
        let pieces = self.pieces(control)?;
        let mut u = identity(self.model.dim());
        for p in &pieces {
            u = &p.u * u;
        }
        Ok(self.overlap(&u).norm() / self.model.dim() as f64)
    }

    fn fidelity_and_gradient(&self, control: &PiecewiseControl) -> Result<(f64, Vec<[f64; 3]>)> {
        let d = self.model.dim();
        let n = control.n_pieces();
        let dt = control.piece_duration;
        let pieces = self.pieces(control)?;
        // forward[k] = U_{k-1}…U_0, backward[k] = U_{n-1}…U_{k+1}
        let mut forward = Vec::with_capacity(n + 1);
        forward.push(identity(d));
        for p in &pieces {
            let next = &p.u * forward.last().expect("non-empty");
            forward.push(next);
        }
        let mut backward = vec![identity(d); n];
        for k in (0..n.saturating_sub(1)).rev() {
            backward[k] = &backward[k + 1] * &pieces[k + 1].u;
        }
        let g = self.overlap(&forward[n]);
        let fid = g.norm() / d as f64;
        if g.norm() == 0.0 {
            return Ok((fid, vec![[0.0; 3]; n]));
        }
        let phase = g.conj() / (g.norm() * d as f64);
        let grad = (0..n)
            .into_par_iter()
            .map(|k| {
                let piece = &pieces[k];
                let v = &piece.eig.vectors;
                let lam = &piece.eig.values;
                let m = &forward[k] * &self.target_dag * &backward[k];
                let mt = v.adjoint() * m * v;
                let e: Vec<Complex64> = lam.iter().map(|&l| Complex64::new(0.0, -l * dt).exp()).collect();
                let mut out = [0.0; 3];
                for (a, z) in self.zeeman.iter().enumerate() {
                    let zt = piece.eig.to_eigenbasis(z);
                    let mut dg = Complex64::new(0.0, 0.0);
                    for p in 0..d {
                        for q in 0..d {
                            let diff = lam[p] - lam[q];
                            let gpq = if diff.abs() * dt < 1e-9 {
                                Complex64::new(0.0, -dt) * e[p]
                            } else {
                                (e[p] - e[q]) / diff
                            };
                            dg += mt[(q, p)] * zt[(p, q)] * gpq;
                        }
                    }
                    out[a] = (phase * dg).re;
                }
                out
            })
            .collect();
        Ok((fid, grad))
    }
}

/// F = |Tr(U_target† U)|/d for the control's propagator (J present throughout).
pub fn control_fidelity(model: &SpinModel, target: &CMat, control: &PiecewiseControl) -> Result<f64> {
    control.validate()?;
    Evaluator::new(model, target)?.fidelity(control)
}

/// Fidelity and its exact gradient with respect to every amplitude entry (1/T).
pub fn fidelity_and_gradient(
    model: &SpinModel,
    target: &CMat,
    control: &PiecewiseControl,
) -> Result<(f64, Vec<[f64; 3]>)> {
    control.validate()?;
    Evaluator::new(model, target)?.fidelity_and_gradient(control)
}

/// Largest relative deviation between the analytic gradient and central
/// differences with step `epsilon` (tesla), relative to the largest gradient entry.
pub fn gradient_check(model: &SpinModel, target: &CMat, control: &PiecewiseControl, epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument("finite-difference step must be positive".into()));
    }
    let eval = Evaluator::new(model, target)?;
    let (_, grad) = eval.fidelity_and_gradient(control)?;
    let mut free = control.clone();
    free.bounds = [f64::INFINITY; 3];
    let scale = grad.iter().flatten().fold(0.0f64, |m, g| m.max(g.abs()));
    let entries: Vec<(usize, usize)> = (0..control.n_pieces()).flat_map(|k| (0..3).map(move |a| (k, a))).collect();
    let devs = entries
        .par_iter()
        .map(|&(k, a)| {
            let mut plus = free.clone();
            plus.amplitudes[k][a] += epsilon;
            let mut minus = free.clone();
            minus.amplitudes[k][a] -= epsilon;
            let fd = (eval.fidelity(&plus)? - eval.fidelity(&minus)?) / (2.0 * epsilon);
            Ok((fd - grad[k][a]).abs())
        })
        .collect::<Result<Vec<f64>>>()?;
    let worst = devs.into_iter().fold(0.0, f64::max);
    Ok(if scale > 0.0 { worst / scale } else { worst })
}

fn dot(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x[0] * y[0] + x[1] * y[1] + x[2] * y[2]).sum()
}

/// Maximize F over the amplitudes by projected gradient ascent with Armijo
/// backtracking. The trial step is the Barzilai–Borwein length from the last
/// accepted move, so every accepted iterate increases F.
pub fn grape_optimize(
    model: &SpinModel,
    target: &CMat,
    n_pieces: usize,
    piece_duration: f64,
    bounds: [f64; 3],
    opts: &GrapeOptions,
) -> Result<GrapeResult> {
    let mut control = PiecewiseControl::zeros(n_pieces, piece_duration, bounds)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for a in &mut control.amplitudes {
        for k in 0..3 {
            a[k] = opts.init_fraction * bounds[k] * rng.random_range(-1.0..=1.0);
        }
    }
    grape_refine(model, target, control, opts)
}

/// Continue optimizing from a given control.
pub fn grape_refine(model: &SpinModel, target: &CMat, initial: PiecewiseControl, opts: &GrapeOptions) -> Result<GrapeResult> {
    initial.validate()?;
    if !(opts.initial_step > 0.0) || !(0.0..1.0).contains(&opts.shrink) || opts.shrink == 0.0 {
        return Err(Error::InvalidArgument("invalid line-search settings".into()));
    }
    if !crate::spin::controllability(model.system(), crate::spin::DEFAULT_GAMMA_TOLERANCE)?.is_controllable() {
        log::warn!("optimizing on a system not shown to be fully controllable");
    }
    let eval = Evaluator::new(model, target)?;
    let stop = opts.stop;
    let mut control = initial;
    let (mut fid, mut grad) = eval.fidelity_and_gradient(&control)?;
    let mut trace = vec![fid];
    let mut direction: Vec<[f64; 3]> = grad.clone();
    let gmax = grad.iter().flatten().fold(0.0f64, |m, g| m.max(g.abs()));
    let mut alpha = if gmax > 0.0 { opts.initial_step / gmax } else { 0.0 };
    let mut converged = fid >= stop.f_goal;
    let mut iterations = 0;
    while !converged && iterations < stop.max_iter {
        let gnorm = dot(&grad, &grad).sqrt();
        if gnorm < stop.grad_tol {
            break;
        }
        iterations += 1;
        if dot(&direction, &grad) <= 0.0 {
            direction = grad.clone();
        }
        let mut step = alpha;
        let mut accepted = None;
        for _ in 0..=opts.max_backtracks {
            let mut trial = control.clone();
            for (t, d) in trial.amplitudes.iter_mut().zip(&direction) {
                for k in 0..3 {
                    t[k] += step * d[k];
                }
            }
            trial.project();
            let moved: Vec<[f64; 3]> = trial
                .amplitudes
                .iter()
                .zip(&control.amplitudes)
                .map(|(a, b)| [a[0] - b[0], a[1] - b[1], a[2] - b[2]])
                .collect();
            let f_trial = eval.fidelity(&trial)?;
            if f_trial > fid && f_trial >= fid + 1e-4 * dot(&grad, &moved) {
                accepted = Some((trial, moved, f_trial));
                break;
            }
            step *= opts.shrink;
        }
        let Some((trial, moved, _)) = accepted else {
            let steepest = direction.iter().zip(&grad).all(|(d, g)| d == g);
            if steepest {
                log::debug!("line search failed at iteration {iterations}");
                break;
            }
            direction = grad.clone();
            let gmax = grad.iter().flatten().fold(0.0f64, |m, g| m.max(g.abs()));
            alpha = opts.initial_step / gmax;
            continue;
        };
        let (f_new, g_new) = eval.fidelity_and_gradient(&trial)?;
        let y: Vec<[f64; 3]> = g_new
            .iter()
            .zip(&grad)
            .map(|(a, b)| [b[0] - a[0], b[1] - a[1], b[2] - a[2]])
            .collect();
        let sy = dot(&moved, &y);
        let ss = dot(&moved, &moved);
        alpha = if sy > 0.0 { ss / sy } else { step * 2.0 };
        let beta = match opts.momentum {
            Momentum::None => 0.0,
            Momentum::Fixed(b) => b,
            Momentum::PolakRibiere => {
                let gg = dot(&grad, &grad);
                if gg > 0.0 {
                    ((dot(&g_new, &g_new) - dot(&g_new, &grad)) / gg).max(0.0)
                } else {
                    0.0
                }
            }
        };
        let prev = direction;
        direction = g_new
            .iter()
            .zip(&prev)
            .map(|(g, p)| [g[0] + beta * p[0], g[1] + beta * p[1], g[2] + beta * p[2]])
            .collect();
        control = trial;
        fid = f_new;
        grad = g_new;
        trace.push(fid);
        converged = fid >= stop.f_goal;
    }
    Ok(GrapeResult {
        control,
        fidelity: fid,
        trace,
        converged,
        iterations,
    })
}

/// Fidelity on a grid of multiplicative field-amplitude and duration errors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessMap {
    pub amplitude_scales: Vec<f64>,
    pub duration_scales: Vec<f64>,
    /// `fidelity[i][j]` at amplitude scale i and duration scale j.
    pub fidelity: Vec<Vec<f64>>,
}

impl RobustnessMap {
    pub fn at(&self, amplitude: f64, duration: f64) -> Option<f64> {
        let i = self.amplitude_scales.iter().position(|&a| a == amplitude)?;
        let j = self.duration_scales.iter().position(|&d| d == duration)?;
        Some(self.fidelity[i][j])
    }
}

fn scaled(program: &PulseProgram, amp: f64, dur: f64) -> PulseProgram {
    let segments = program
        .segments
        .iter()
        .map(|s| match *s {
            Segment::Constant { field, duration } => Segment::Constant {
                field: field.map(|b| b * amp),
                duration: duration * dur,
            },
            Segment::Sinusoid {
                amplitude,
                frequency,
                phase,
                offset,
                duration,
            } => Segment::Sinusoid {
                amplitude: amplitude.map(|b| b * amp),
                frequency,
                phase,
                offset: offset.map(|b| b * amp),
                duration: duration * dur,
            },
            Segment::Delay { duration } => Segment::Delay { duration },
        })
        .collect();
    PulseProgram { segments }
}

/// Evaluate `program` with every field scaled by each amplitude factor and
/// every pulse duration scaled by each duration factor (full Hamiltonian).
pub fn robustness_scan(
    model: &SpinModel,
    program: &PulseProgram,
    target: &CMat,
    amplitude_scales: &[f64],
    duration_scales: &[f64],
) -> Result<RobustnessMap> {
    check_target(model, target)?;
    if amplitude_scales.is_empty() || duration_scales.is_empty() {
        return Err(Error::InvalidArgument("robustness grids must be non-empty".into()));
    }
    if duration_scales.iter().any(|&d| !(d > 0.0)) {
        return Err(Error::InvalidArgument("duration scales must be positive".into()));
    }
    let opts = ApplyOptions::default();
    let fidelity = amplitude_scales
        .par_iter()
        .map(|&a| {
            duration_scales
                .iter()
                .map(|&d| {
                    let u = program_propagator(model, &scaled(program, a, d), [0.0; 3], &opts)?;
                    gate_fidelity(&u, target)
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RobustnessMap {
        amplitude_scales: amplitude_scales.to_vec(),
        duration_scales: duration_scales.to_vec(),
        fidelity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::rotation_unitary;
    use crate::spin::SpinSystem;
    use std::f64::consts::PI;

    fn hp() -> SpinModel {
        SpinModel::new(&SpinSystem::from_species("HP", &[("H", "1H"), ("P", "31P")], &[(0, 1, 700.0)]).unwrap()).unwrap()
    }

    #[test]
    fn identity_target_at_zero_field() {
        let m = SpinModel::new(&SpinSystem::from_species("HP", &[("H", "1H"), ("P", "31P")], &[]).unwrap()).unwrap();
        let opts = GrapeOptions {
            init_fraction: 0.0,
            ..Default::default()
        };
        let r = grape_optimize(&m, &identity(4), 5, 1e-5, [1e-4; 3], &opts).unwrap();
        assert_eq!(r.iterations, 0);
        assert!((r.fidelity - 1.0).abs() < 1e-14);
        assert!(r.converged);
    }

    #[test]
    fn single_spin_gradient_matches_differences() {
        let m = SpinModel::new(&SpinSystem::from_species("H", &[("H", "1H")], &[]).unwrap()).unwrap();
        let target = rotation_unitary(&m, &[0], [1.0, 0.0, 0.0], PI / 2.0).unwrap();
        let mut c = PiecewiseControl::zeros(4, 1e-5, [1e-4; 3]).unwrap();
        c.amplitudes = vec![[1e-5, 2e-6, -3e-6], [4e-6, 0.0, 1e-6], [-2e-6, 5e-6, 0.0], [1e-6, 1e-6, 1e-6]];
        assert!(gradient_check(&m, &target, &c, 1e-9).unwrap() < 1e-6);
    }

    #[test]
    fn program_round_trip_agrees() {
        let m = hp();
        let target = rotation_unitary(&m, &[0], [0.0, 0.0, 1.0], PI).unwrap();
        let mut c = PiecewiseControl::zeros(3, 2e-5, [1e-4; 3]).unwrap();
        c.amplitudes = vec![[1e-5, -2e-5, 3e-5], [0.0, 4e-5, 0.0], [-5e-5, 0.0, 1e-5]];
        let f = control_fidelity(&m, &target, &c).unwrap();
        let u = program_propagator(&m, &c.to_program(), [0.0; 3], &ApplyOptions::default()).unwrap();
        assert!((gate_fidelity(&u, &target).unwrap() - f).abs() < 1e-12);
    }

    #[test]
    fn bounds_are_enforced() {
        let mut c = PiecewiseControl::zeros(2, 1e-5, [1e-5; 3]).unwrap();
        c.amplitudes[0][1] = 2e-5;
        assert!(c.validate().is_err());
        c.project();
        assert_eq!(c.amplitudes[0][1], 1e-5);
        assert!(PiecewiseControl::zeros(0, 1e-5, [1e-5; 3]).is_err());
        assert!(PiecewiseControl::zeros(2, 0.0, [1e-5; 3]).is_err());
    }

    #[test]
    fn non_unitary_target_rejected() {
        let m = hp();
        let bad = identity(4) * Complex64::new(2.0, 0.0);
        assert!(matches!(
            grape_optimize(&m, &bad, 2, 1e-5, [1e-4; 3], &GrapeOptions::default()),
            Err(Error::NotUnitary(_))
        ));
    }
}
