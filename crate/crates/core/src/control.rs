//! DC-pulse gate compilation: selective rotations, composite pulses,
//! ZZ couplings, CNOT and multi-spin refocusing.
//!
//! A field B = −σ·b·n̂ held for τ rotates spin k about n̂ by
//! φ_k = 2π γ_k σ b τ, i.e. U_k = exp(−iφ_k n̂·I_k). Every compiled sequence is
//! reported in two models: the pulse model, where J couplings are dropped
//! while a field is on, and the full model with J retained throughout.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{program_propagator, ApplyOptions, PulseProgram, Segment};
use crate::error::{Error, Result};
use crate::linalg::{c, cross, identity, norm3, propagator, scale3, trace, unitarity_deviation, CMat};
use crate::spin::{Axis, SpinModel, SpinSystem};

/// F = |Tr(U_ideal† U)| / d.
pub fn gate_fidelity(u: &CMat, ideal: &CMat) -> Result<f64> {
    if u.shape() != ideal.shape() || u.nrows() != u.ncols() {
        return Err(Error::DimensionMismatch {
            expected: ideal.nrows(),
            got: u.nrows(),
        });
    }
    for m in [u, ideal] {
        let dev = unitarity_deviation(m);
        if dev > 1e-8 {
            return Err(Error::NotUnitary(dev));
        }
    }
    let mut tr = Complex64::new(0.0, 0.0);
    for i in 0..u.nrows() {
        for k in 0..u.nrows() {
            tr += ideal[(k, i)].conj() * u[(k, i)];
        }
    }
    Ok((tr.norm() / u.nrows() as f64).min(1.0))
}

fn unit(axis: [f64; 3]) -> Result<[f64; 3]> {
    let n = norm3(axis);
    if !(n.is_finite() && n > 0.0) {
        return Err(Error::InvalidArgument("rotation axis must be non-zero".into()));
    }
    Ok(scale3(axis, 1.0 / n))
}

/// exp(−iθ Σ_{k∈targets} n̂·I_k).
pub fn rotation_unitary(model: &SpinModel, targets: &[usize], axis: [f64; 3], angle: f64) -> Result<CMat> {
    let n = unit(axis)?;
    let mut g = CMat::zeros(model.dim(), model.dim());
    for &k in targets {
        if k >= model.system().len() {
            return Err(Error::InvalidArgument(format!("spin index {k} out of range")));
        }
        g += model.ops().along(k, n);
    }
    Ok(propagator(&g, angle))
}

/// exp(−i·2φ I_{iz} I_{jz}).
pub fn zz_unitary(model: &SpinModel, i: usize, j: usize, phi: f64) -> CMat {
    let ops = model.ops();
    let g = ops.get(i, Axis::Z) * ops.get(j, Axis::Z) * c(2.0);
    propagator(&g, phi)
}

/// Ideal CNOT with `control` and `target` in the product basis.
pub fn cnot_unitary(model: &SpinModel, control: usize, target: usize) -> CMat {
    let n = model.system().len();
    let d = model.dim();
    let mut u = CMat::zeros(d, d);
    let cbit = n - 1 - control;
    let tbit = n - 1 - target;
    for col in 0..d {
        // basis bit 0 is spin up; the target flips when the control is down
        let row = if (col >> cbit) & 1 == 1 { col ^ (1 << tbit) } else { col };
        u[(row, col)] = c(1.0);
    }
    u
}

/// Duration-search settings for single DC pulses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PulseSearch {
    /// Longest pulse, in turns of the spin with the smallest |γ|.
    pub max_turns: f64,
    /// Grid points per turn of the spin with the largest |γ|.
    pub points_per_turn: usize,
    /// Minimum pulse-model fidelity accepted.
    pub threshold: f64,
}

impl Default for PulseSearch {
    fn default() -> Self {
        PulseSearch {
            max_turns: 20.0,
            points_per_turn: 64,
            threshold: 0.98,
        }
    }
}

/// Field amplitude and search settings shared by the compilers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlOptions {
    /// DC pulse amplitude, tesla.
    pub b_amplitude: f64,
    pub search: PulseSearch,
}

impl ControlOptions {
    /// Amplitude giving |γ_min|·B = 1 kHz.
    pub fn for_system(system: &SpinSystem) -> Self {
        let gmin = system.gammas().iter().map(|g| g.abs()).fold(f64::INFINITY, f64::min);
        ControlOptions {
            b_amplitude: 1e3 / gmin,
            search: PulseSearch::default(),
        }
    }

    pub fn with_amplitude(mut self, b: f64) -> Self {
        self.b_amplitude = b;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.b_amplitude > 0.0 && self.b_amplitude.is_finite()) {
            return Err(Error::InvalidArgument("pulse amplitude must be positive".into()));
        }
        let s = &self.search;
        if !(s.max_turns > 0.0 && s.max_turns.is_finite()) || s.points_per_turn < 4 {
            return Err(Error::InvalidArgument("pulse search range must be positive".into()));
        }
        Ok(())
    }
}

/// Fidelity of a compiled sequence in both evaluation models.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    /// J dropped during pulses.
    pub pulse_model: f64,
    /// J retained throughout.
    pub full_model: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompiledSequence {
    pub program: PulseProgram,
    pub ideal_unitary: CMat,
    pub report: FidelityReport,
    /// Human-readable construction steps.
    pub trace: Vec<String>,
}

impl CompiledSequence {
    fn new(model: &SpinModel, program: PulseProgram, ideal: CMat, trace: Vec<String>) -> Result<Self> {
        let report = evaluate(model, &program, &ideal)?;
        Ok(CompiledSequence {
            program,
            ideal_unitary: ideal,
            report,
            trace,
        })
    }
}

/// Propagate `program` at zero ambient field in both models and compare with `ideal`.
pub fn evaluate(model: &SpinModel, program: &PulseProgram, ideal: &CMat) -> Result<FidelityReport> {
    let pulse = program_propagator(model, program, [0.0; 3], &ApplyOptions::pulse_model())?;
    let full = program_propagator(model, program, [0.0; 3], &ApplyOptions::default())?;
    Ok(FidelityReport {
        pulse_model: gate_fidelity(&pulse, ideal)?,
        full_model: gate_fidelity(&full, ideal)?,
    })
}

/// Reverse order and field signs; the exact inverse when J is dropped during pulses.
pub fn inverse_program(program: &PulseProgram) -> PulseProgram {
    let segments = program
        .segments
        .iter()
        .rev()
        .map(|s| match *s {
            Segment::Constant { field, duration } => Segment::Constant {
                field: scale3(field, -1.0),
                duration,
            },
            ref other => other.clone(),
        })
        .collect();
    PulseProgram { segments }
}

/// J-free fidelity of a single DC pulse: Π_k |cos((φ_k − θ_k)/2)|.
fn single_pulse_fidelity(gammas: &[f64], wanted: &[f64], sigma_b_tau: f64) -> f64 {
    gammas
        .iter()
        .zip(wanted)
        .map(|(&g, &theta)| ((2.0 * PI * g * sigma_b_tau - theta) / 2.0).cos().abs())
        .product()
}

fn golden_max(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = b - r * (b - a);
    let mut x2 = a + r * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..80 {
        if f1 >= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - r * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + r * (b - a);
            f2 = f(x2);
        }
    }
    if f1 >= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Best single DC pulse along ±n̂ rotating `targets` by `angle` and leaving
/// the other spins unchanged, found by a duration scan plus golden-section
/// refinement of the pulse-model fidelity. Ties go to the shorter pulse.
pub fn direct_rotation(
    model: &SpinModel,
    targets: &[usize],
    axis: [f64; 3],
    angle: f64,
    opts: &ControlOptions,
) -> Result<CompiledSequence> {
    opts.validate()?;
    let n_hat = unit(axis)?;
    let system = model.system();
    if targets.is_empty() || targets.iter().any(|&k| k >= system.len()) {
        return Err(Error::InvalidArgument("invalid target set".into()));
    }
    let ideal = rotation_unitary(model, targets, n_hat, angle)?;
    if angle == 0.0 {
        return CompiledSequence::new(model, PulseProgram::empty(), ideal, vec!["zero angle".into()]);
    }
    let gammas = system.gammas();
    let wanted: Vec<f64> = (0..system.len())
        .map(|k| if targets.contains(&k) { angle } else { 0.0 })
        .collect();
    let b = opts.b_amplitude;
    let gmin = gammas.iter().map(|g| g.abs()).fold(f64::INFINITY, f64::min);
    let gmax = gammas.iter().map(|g| g.abs()).fold(0.0, f64::max);
    let tau_max = opts.search.max_turns / (gmin * b);
    let npts = ((opts.search.max_turns * gmax / gmin) * opts.search.points_per_turn as f64).ceil() as usize;
    let dtau = tau_max / npts as f64;

    let mut best: Option<(f64, f64, f64)> = None; // (fidelity, tau, sigma)
    for sigma in [1.0, -1.0] {
        let f = |tau: f64| single_pulse_fidelity(&gammas, &wanted, sigma * b * tau);
        let grid: Vec<f64> = (1..=npts).into_par_iter().map(|k| f(k as f64 * dtau)).collect();
        let mut peaks: Vec<usize> = (0..npts)
            .filter(|&k| {
                let left = if k == 0 { f64::NEG_INFINITY } else { grid[k - 1] };
                let right = if k + 1 == npts { f64::NEG_INFINITY } else { grid[k + 1] };
                grid[k] >= left && grid[k] >= right
            })
            .collect();
        peaks.sort_by(|&a, &b| grid[b].total_cmp(&grid[a]).then(a.cmp(&b)));
        peaks.truncate(16);
        for k in peaks {
            let tau_k = (k + 1) as f64 * dtau;
            let (tau, fid) = golden_max(&f, (tau_k - dtau).max(0.0), tau_k + dtau);
            let better = match best {
                None => true,
                Some((bf, bt, _)) => fid > bf + 1e-12 || ((fid - bf).abs() <= 1e-12 && tau < bt),
            };
            if better {
                best = Some((fid, tau, sigma));
            }
        }
    }
    let (fid, tau, sigma) = best.expect("non-empty grid");
    if fid < opts.search.threshold {
        return Err(Error::PulseSearchFailed {
            threshold: opts.search.threshold,
            best_fidelity: fid,
            best_duration: tau,
        });
    }
    let program = PulseProgram {
        segments: vec![Segment::Constant {
            field: scale3(n_hat, -sigma * b),
            duration: tau,
        }],
    };
    let labels: Vec<&str> = targets.iter().map(|&k| system.spins()[k].label.as_str()).collect();
    let trace = vec![format!(
        "direct pulse on {} by {:.6} rad: tau = {:.9e} s, sign {}, pulse-model F = {:.6}",
        labels.join("+"),
        angle,
        tau,
        sigma,
        fid
    )];
    CompiledSequence::new(model, program, ideal, trace)
}

/// Single constant-field π pulse on `targets`, leaving the other spins alone.
pub fn hard_pi_pulse(model: &SpinModel, targets: &[usize], axis: [f64; 3], opts: &ControlOptions) -> Result<CompiledSequence> {
    direct_rotation(model, targets, axis, PI, opts)
}

/// Unit vector perpendicular to n̂: ẑ×n̂ normalized, or x̂×n̂ when n̂ ∥ ẑ.
pub fn perpendicular(n_hat: [f64; 3]) -> [f64; 3] {
    let zc = cross([0.0, 0.0, 1.0], n_hat);
    let v = if norm3(zc) > 1e-6 { zc } else { cross([1.0, 0.0, 0.0], n_hat) };
    scale3(v, 1.0 / norm3(v))
}

/// Selective rotation of `target` by θ about n̂ through a refocused DC pulse:
/// two halves of a field along ∓n̂ sandwiching π rotations of all other spins
/// about n̂⊥, so that spectators see R_n(−α)R_n(α) = 𝟙 and the target
/// accumulates θ = 2π|γ|B t.
pub fn composite_single_qubit(
    model: &SpinModel,
    target: usize,
    axis: [f64; 3],
    angle: f64,
    opts: &ControlOptions,
) -> Result<CompiledSequence> {
    opts.validate()?;
    let n_hat = unit(axis)?;
    let system = model.system();
    if target >= system.len() {
        return Err(Error::InvalidArgument(format!("spin index {target} out of range")));
    }
    let ideal = rotation_unitary(model, &[target], n_hat, angle)?;
    if angle == 0.0 {
        return CompiledSequence::new(model, PulseProgram::empty(), ideal, vec!["zero angle".into()]);
    }
    let g = system.gamma(target);
    let b = opts.b_amplitude;
    let sigma = g.signum();
    let half = angle / (2.0 * 2.0 * PI * g.abs() * b);
    let dc = Segment::Constant {
        field: scale3(n_hat, -sigma * b),
        duration: half,
    };
    let others: Vec<usize> = (0..system.len()).filter(|&k| k != target).collect();
    let mut trace = vec![format!("free rotation halves of {half:.9e} s")];
    let mut program = PulseProgram::empty();
    if others.is_empty() {
        program.push(Segment::Constant {
            field: scale3(n_hat, -sigma * b),
            duration: 2.0 * half,
        });
    } else {
        let n_perp = perpendicular(n_hat);
        let pi = hard_pi_pulse(model, &others, n_perp, opts)?;
        trace.extend(pi.trace.iter().cloned());
        program.push(dc.clone());
        program.extend(&inverse_program(&pi.program));
        program.push(dc);
        program.extend(&pi.program);
    }
    CompiledSequence::new(model, program, ideal, trace)
}

/// Compile a rotation of one spin, choosing between a direct pulse and the
/// composite sequence by pulse-model fidelity.
pub fn compile_rotation(
    model: &SpinModel,
    target: usize,
    axis: [f64; 3],
    angle: f64,
    opts: &ControlOptions,
) -> Result<CompiledSequence> {
    let direct = direct_rotation(model, &[target], axis, angle, opts);
    let composite = composite_single_qubit(model, target, axis, angle, opts);
    match (direct, composite) {
        (Ok(d), Ok(cmp)) => Ok(if cmp.report.pulse_model > d.report.pulse_model { cmp } else { d }),
        (Ok(d), Err(_)) => Ok(d),
        (Err(_), Ok(cmp)) => Ok(cmp),
        (Err(_), Err(e)) => Err(e),
    }
}

fn coupled(system: &SpinSystem, i: usize, j: usize) -> Result<f64> {
    if i >= system.len() || j >= system.len() || i == j {
        return Err(Error::InvalidArgument(format!("invalid spin pair ({i}, {j})")));
    }
    let jij = system.j(i, j);
    if jij == 0.0 {
        return Err(Error::NoCoupling(i, j));
    }
    Ok(jij)
}

/// Free-evolution time t ≥ 0 with 2πJt ≡ φ modulo the 2π period of U_zz.
fn zz_time(jij: f64, phi: f64) -> f64 {
    (phi / (2.0 * PI * jij)).rem_euclid(1.0 / jij.abs())
}

/// ZZ phase exp(−i2φ I_iz I_jz) from zero-field evolution:
/// e^{−iH₀t} U_z^j(π) e^{−iH₀t} U_z^j(π)† with 2πJ_ij t = φ.
pub fn u_zz(model: &SpinModel, i: usize, j: usize, phi: f64, opts: &ControlOptions) -> Result<CompiledSequence> {
    let system = model.system();
    let jij = coupled(system, i, j)?;
    let ideal = zz_unitary(model, i, j, phi);
    let t = zz_time(jij, phi);
    if t == 0.0 {
        return CompiledSequence::new(model, PulseProgram::empty(), ideal, vec!["zero phase".into()]);
    }
    let pz = compile_rotation(model, j, Axis::Z.unit(), PI, opts)?;
    let mut program = inverse_program(&pz.program);
    program.push(Segment::Delay { duration: t });
    program.extend(&pz.program);
    program.push(Segment::Delay { duration: t });
    let mut trace = vec![format!("ZZ evolution 2 x {t:.9e} s")];
    trace.extend(pz.trace);
    CompiledSequence::new(model, program, ideal, trace)
}

/// CNOT from √i·U_z^i(π/2)·U_z^j(π/2)†·U_x^j(π/2)·U_zz(π/2)·U_y^j(π/2).
pub fn cnot_sequence(model: &SpinModel, control: usize, target: usize, opts: &ControlOptions) -> Result<CompiledSequence> {
    coupled(model.system(), control, target)?;
    let h = PI / 2.0;
    // in time order
    let steps = [
        compile_rotation(model, target, Axis::Y.unit(), h, opts)?,
        u_zz(model, control, target, h, opts)?,
        compile_rotation(model, target, Axis::X.unit(), h, opts)?,
        compile_rotation(model, target, Axis::Z.unit(), 2.0 * PI - h, opts)?,
        compile_rotation(model, control, Axis::Z.unit(), h, opts)?,
    ];
    let mut program = PulseProgram::empty();
    let mut ideal = identity(model.dim());
    let mut trace = Vec::new();
    for s in &steps {
        program.extend(&s.program);
        ideal = &s.ideal_unitary * ideal;
        trace.extend(s.trace.iter().cloned());
    }
    let ideal = ideal * Complex64::from_polar(1.0, PI / 4.0);
    CompiledSequence::new(model, program, ideal, trace)
}

/// Walsh codes (A_k, B_k): in slot s spin k sits in the frame X^{a}Z^{b} with
/// a = parity(A_k & s), b = parity(B_k & s).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefocusCodes {
    pub bits: u32,
    pub codes: Vec<(u32, u32)>,
}

fn parity(x: u32) -> u32 {
    x.count_ones() & 1
}

/// Codes that average every coupling except J_ij to zero and keep I_iz I_jz.
pub fn refocus_codes(system: &SpinSystem, i: usize, j: usize) -> Option<RefocusCodes> {
    let n = system.len();
    for bits in 1..=4u32 {
        let size = 1u32 << bits;
        let mut candidates: Vec<(u32, u32)> = (0..size).flat_map(|a| (0..size).map(move |b| (a, b))).collect();
        candidates.sort_by_key(|&(a, b)| (a.count_ones() + b.count_ones(), a, b));
        let mut codes = vec![(0u32, 0u32); n];
        let ok = |codes: &[(u32, u32)], k: usize| -> bool {
            for l in 0..k {
                let (ak, bk) = codes[k];
                let (al, bl) = codes[l];
                let pair = (k.min(l), k.max(l)) == (i.min(j), i.max(j));
                if pair {
                    if ak != al || bk == bl {
                        return false;
                    }
                } else if system.j(k, l) != 0.0 && (ak == al || bk == bl || (ak ^ bk) == (al ^ bl)) {
                    return false;
                }
            }
            true
        };
        fn search(
            k: usize,
            n: usize,
            codes: &mut Vec<(u32, u32)>,
            candidates: &[(u32, u32)],
            ok: &dyn Fn(&[(u32, u32)], usize) -> bool,
        ) -> bool {
            if k == n {
                return true;
            }
            for &cand in candidates {
                codes[k] = cand;
                if ok(codes, k) && search(k + 1, n, codes, candidates, ok) {
                    return true;
                }
            }
            false
        }
        if search(0, n, &mut codes, &candidates, &ok) {
            return Some(RefocusCodes { bits, codes });
        }
    }
    None
}

/// Settings for [`refocus_uzz_multispin`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefocusOptions {
    /// The Walsh cycle is repeated 2^depth times.
    pub depth: u32,
    /// Minimum full-model fidelity accepted.
    pub threshold: f64,
}

impl Default for RefocusOptions {
    fn default() -> Self {
        RefocusOptions {
            depth: 0,
            threshold: 0.99,
        }
    }
}

fn pi_on(model: &SpinModel, spins: &[usize], axis: Axis, opts: &ControlOptions) -> Result<CompiledSequence> {
    if spins.len() == 1 {
        compile_rotation(model, spins[0], axis.unit(), PI, opts)
    } else {
        hard_pi_pulse(model, spins, axis.unit(), opts)
    }
}

type PulseKey = (Vec<usize>, Axis);

/// Physical frame as a stack of subset π pulses. Entering X^{a}Z^{b} pushes a
/// π_z on the spins with b = 1 and then a π_x on the spins with a = 1; leaving
/// it pops through the exact pulse-model inverses, so pulse errors cancel.
struct FrameStack<'a> {
    model: &'a SpinModel,
    opts: &'a ControlOptions,
    cache: Vec<(PulseKey, PulseProgram)>,
    stack: Vec<PulseKey>,
}

impl<'a> FrameStack<'a> {
    fn pulse(&mut self, key: &PulseKey) -> Result<PulseProgram> {
        if let Some((_, p)) = self.cache.iter().find(|(k, _)| k == key) {
            return Ok(p.clone());
        }
        let p = pi_on(self.model, &key.0, key.1, self.opts)?.program;
        self.cache.push((key.clone(), p.clone()));
        Ok(p)
    }

    fn goto(&mut self, frame: &[(u32, u32)], program: &mut PulseProgram) -> Result<()> {
        let pick = |f: &dyn Fn(&(u32, u32)) -> u32| -> Vec<usize> {
            (0..frame.len()).filter(|&k| f(&frame[k]) == 1).collect()
        };
        let target: Vec<PulseKey> = [(pick(&|c| c.1), Axis::Z), (pick(&|c| c.0), Axis::X)]
            .into_iter()
            .filter(|(s, _)| !s.is_empty())
            .collect();
        let common = self.stack.iter().zip(&target).take_while(|(a, b)| a == b).count();
        while self.stack.len() > common {
            let key = self.stack.pop().expect("non-empty stack");
            program.extend(&inverse_program(&self.pulse(&key)?));
        }
        for key in &target[common..] {
            program.extend(&self.pulse(key)?);
            self.stack.push(key.clone());
        }
        Ok(())
    }
}

/// ZZ phase on the pair (i, j) in a multi-spin system, with every other
/// coupling removed to first order by Walsh-pattern π-pulse toggling.
pub fn refocus_uzz_multispin(
    model: &SpinModel,
    i: usize,
    j: usize,
    phi: f64,
    opts: &ControlOptions,
    refocus: &RefocusOptions,
) -> Result<CompiledSequence> {
    let system = model.system();
    if system.len() < 3 {
        return Err(Error::InvalidArgument("multi-spin refocusing needs at least 3 spins".into()));
    }
    let jij = coupled(system, i, j)?;
    let ideal = zz_unitary(model, i, j, phi);
    let t = zz_time(jij, phi);
    let codes = refocus_codes(system, i, j)
        .ok_or_else(|| Error::InvalidArgument("no refocusing code assignment found".into()))?;
    let slots = 1usize << codes.bits;
    let cycles = 1usize << refocus.depth;
    let tau = 2.0 * t / (slots * cycles) as f64;
    let frame = |s: usize| -> Vec<(u32, u32)> {
        codes
            .codes
            .iter()
            .map(|&(a, b)| (parity(a & s as u32), parity(b & s as u32)))
            .collect()
    };
    let mut frames = FrameStack {
        model,
        opts,
        cache: Vec::new(),
        stack: Vec::new(),
    };
    let mut program = PulseProgram::empty();
    for _ in 0..cycles {
        for s in 0..slots {
            frames.goto(&frame(s), &mut program)?;
            if tau > 0.0 {
                program.push(Segment::Delay { duration: tau });
            }
        }
    }
    frames.goto(&vec![(0, 0); system.len()], &mut program)?;
    let trace = vec![format!(
        "Walsh codes {:?} over {} slots x {} cycles, slot {:.9e} s",
        codes.codes, slots, cycles, tau
    )];
    let seq = CompiledSequence::new(model, program, ideal, trace)?;
    if seq.report.full_model < refocus.threshold {
        return Err(Error::RefocusFailed {
            fidelity: seq.report.full_model,
            threshold: refocus.threshold,
        });
    }
    Ok(seq)
}

/// Kind of gate named by a [`GateSpec`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateKind {
    Rotation,
    Cnot,
    Uzz,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateSpec {
    pub targets: Vec<usize>,
    pub axis: [f64; 3],
    pub angle: f64,
    pub kind: GateKind,
}

fn parse_angle(text: &str) -> Result<f64> {
    let t = text.trim().to_ascii_lowercase();
    let bad = || Error::InvalidArgument(format!("cannot parse angle '{text}'"));
    if t.is_empty() {
        return Err(bad());
    }
    let (num, den) = match t.split_once('/') {
        Some((a, b)) => (a, b.trim().parse::<f64>().map_err(|_| bad())?),
        None => (t.as_str(), 1.0),
    };
    let num = num.trim();
    let value = if let Some(coef) = num.strip_suffix("pi") {
        let coef = coef.trim().trim_end_matches('*');
        match coef {
            "" => PI,
            "-" => -PI,
            _ => coef.parse::<f64>().map_err(|_| bad())? * PI,
        }
    } else {
        num.parse::<f64>().map_err(|_| bad())?
    };
    Ok(value / den)
}

impl GateSpec {
    pub fn rotation(targets: Vec<usize>, axis: [f64; 3], angle: f64) -> Result<Self> {
        let g = GateSpec {
            targets,
            axis,
            angle,
            kind: GateKind::Rotation,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if (norm3(self.axis) - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument("gate axis must be a unit vector".into()));
        }
        if !(0.0..4.0 * PI).contains(&self.angle) {
            return Err(Error::InvalidArgument(format!("gate angle {} outside [0, 4π)", self.angle)));
        }
        if self.targets.is_empty() {
            return Err(Error::InvalidArgument("gate needs at least one target".into()));
        }
        if matches!(self.kind, GateKind::Cnot | GateKind::Uzz) && self.targets.len() != 2 {
            return Err(Error::InvalidArgument("two-spin gates need exactly two targets".into()));
        }
        Ok(())
    }

    /// Parse `"<angle>@<spins>,<axis>"`, `"cnot@<control>,<target>"` or
    /// `"uzz(<angle>)@<spin>,<spin>"`, e.g. `"pi/2@C,x"` or `"pi@H+F,x"`.
    pub fn parse(text: &str, system: &SpinSystem) -> Result<Self> {
        let bad = |m: &str| Error::InvalidArgument(format!("gate '{text}': {m}"));
        let (head, tail) = text.split_once('@').ok_or_else(|| bad("missing '@'"))?;
        let spin = |label: &str| {
            system
                .index_of(label.trim())
                .ok_or_else(|| bad(&format!("unknown spin '{}'", label.trim())))
        };
        let head = head.trim().to_ascii_lowercase();
        let parts: Vec<&str> = tail.split(',').collect();
        let spec = if head == "cnot" {
            if parts.len() != 2 {
                return Err(bad("cnot needs control,target"));
            }
            GateSpec {
                targets: vec![spin(parts[0])?, spin(parts[1])?],
                axis: [0.0, 0.0, 1.0],
                angle: 0.0,
                kind: GateKind::Cnot,
            }
        } else if let Some(inner) = head.strip_prefix("uzz(").and_then(|h| h.strip_suffix(')')) {
            if parts.len() != 2 {
                return Err(bad("uzz needs two spins"));
            }
            GateSpec {
                targets: vec![spin(parts[0])?, spin(parts[1])?],
                axis: [0.0, 0.0, 1.0],
                angle: parse_angle(inner)?.rem_euclid(4.0 * PI),
                kind: GateKind::Uzz,
            }
        } else {
            if parts.len() != 2 {
                return Err(bad("rotation needs spins,axis"));
            }
            let axis: Axis = parts[1].parse()?;
            let targets = parts[0].split('+').map(spin).collect::<Result<Vec<_>>>()?;
            GateSpec {
                targets,
                axis: axis.unit(),
                angle: parse_angle(&head)?.rem_euclid(4.0 * PI),
                kind: GateKind::Rotation,
            }
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Ideal unitary of the gate.
    pub fn ideal_unitary(&self, model: &SpinModel) -> Result<CMat> {
        self.validate()?;
        match self.kind {
            GateKind::Rotation => rotation_unitary(model, &self.targets, self.axis, self.angle),
            GateKind::Cnot => Ok(cnot_unitary(model, self.targets[0], self.targets[1])),
            GateKind::Uzz => Ok(zz_unitary(model, self.targets[0], self.targets[1], self.angle)),
        }
    }

    pub fn compile(&self, model: &SpinModel, opts: &ControlOptions) -> Result<CompiledSequence> {
        self.validate()?;
        match self.kind {
            GateKind::Rotation if self.targets.len() == 1 => {
                compile_rotation(model, self.targets[0], self.axis, self.angle, opts)
            }
            GateKind::Rotation => direct_rotation(model, &self.targets, self.axis, self.angle, opts),
            GateKind::Cnot => cnot_sequence(model, self.targets[0], self.targets[1], opts),
            GateKind::Uzz => u_zz(model, self.targets[0], self.targets[1], self.angle, opts),
        }
    }
}

/// |Tr(A)|/d shortcut used in tests and reports.
pub fn normalized_trace(a: &CMat) -> f64 {
    trace(a).norm() / a.nrows() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::*;
    use crate::linalg::max_abs;

    fn ch(j: f64) -> SpinModel {
        SpinModel::new(&SpinSystem::from_species("CH", &[("C", "13C"), ("H", "1H")], &[(0, 1, j)]).unwrap()).unwrap()
    }

    #[test]
    fn fidelity_basics() {
        let m = ch(100.0);
        let u = rotation_unitary(&m, &[0], [0.3, 0.4, 0.5], 1.1).unwrap();
        assert!((gate_fidelity(&u, &u).unwrap() - 1.0).abs() < 1e-14);
        let phased = &u * Complex64::from_polar(1.0, 0.7);
        assert!((gate_fidelity(&phased, &u).unwrap() - 1.0).abs() < 1e-14);
        let x = CMat::from_row_slice(2, 2, &[c(0.0), Complex64::i(), Complex64::i(), c(0.0)]);
        assert!(gate_fidelity(&x, &identity(2)).unwrap() < 1e-15);
        assert!(gate_fidelity(&x, &identity(4)).is_err());
        assert!(gate_fidelity(&(x * c(2.0)), &identity(2)).is_err());
    }

    #[test]
    fn carbon_pi_at_nominal_duration() {
        let gammas = [GAMMA_C, GAMMA_H];
        let f = single_pulse_fidelity(&gammas, &[PI, 0.0], 1.0 / (2.0 * GAMMA_C));
        assert!((f - (PI * GAMMA_H / (2.0 * GAMMA_C)).cos().abs()).abs() < 1e-15);
        assert!((f - 0.9994).abs() < 2e-4);
    }

    #[test]
    fn single_spin_pi_is_exact() {
        let m = SpinModel::new(&SpinSystem::from_species("H", &[("H", "1H")], &[]).unwrap()).unwrap();
        let opts = ControlOptions::for_system(m.system());
        let s = hard_pi_pulse(&m, &[0], [1.0, 0.0, 0.0], &opts).unwrap();
        assert!((s.report.pulse_model - 1.0).abs() < 1e-12);
        assert!((s.report.full_model - 1.0).abs() < 1e-12);
    }

    #[test]
    fn search_failure_is_explicit() {
        let m = ch(100.0);
        let mut opts = ControlOptions::for_system(m.system());
        opts.search.max_turns = 0.3;
        opts.search.threshold = 0.999;
        let err = hard_pi_pulse(&m, &[0], [1.0, 0.0, 0.0], &opts).unwrap_err();
        assert!(matches!(err, Error::PulseSearchFailed { .. }));
        assert!(err.is_numerical());
    }

    #[test]
    fn perpendicular_choice() {
        assert_eq!(perpendicular([1.0, 0.0, 0.0]), [0.0, 1.0, 0.0]);
        let p = perpendicular([0.0, 0.0, 1.0]);
        assert!((p[1] + 1.0).abs() < 1e-15);
        let n = unit([0.2, -0.5, 0.7]).unwrap();
        assert!(crate::linalg::dot(perpendicular(n), n).abs() < 1e-15);
    }

    #[test]
    fn composite_exact_for_commensurate_gammas() {
        // spectator γ = 1.5 γ_target: a 3π spectator pulse turns the target by 2π
        let sys = SpinSystem::new(
            "ratio",
            vec![
                crate::spin::Spin { label: "a".into(), species: None, gamma: 1.0e7 },
                crate::spin::Spin { label: "b".into(), species: None, gamma: 1.5e7 },
            ],
            vec![vec![0.0, 20.0], vec![20.0, 0.0]],
        )
        .unwrap();
        let m = SpinModel::new(&sys).unwrap();
        let opts = ControlOptions::for_system(&sys);
        let s = composite_single_qubit(&m, 0, [1.0, 0.0, 0.0], PI / 2.0, &opts).unwrap();
        assert!((s.report.pulse_model - 1.0).abs() < 1e-9, "{:?}", s.report);
    }

    #[test]
    fn zero_angle_is_empty() {
        let m = ch(100.0);
        let opts = ControlOptions::for_system(m.system());
        let s = composite_single_qubit(&m, 0, [1.0, 0.0, 0.0], 0.0, &opts).unwrap();
        assert!(s.program.is_empty());
        assert_eq!(s.report.full_model, 1.0);
        let z = u_zz(&m, 0, 1, 0.0, &opts).unwrap();
        assert!(z.program.is_empty());
    }

    #[test]
    fn inverse_program_undoes_pulse_model() {
        let m = ch(100.0);
        let prog = PulseProgram::new(vec![
            Segment::Constant { field: [1e-4, 0.0, 2e-5], duration: 1e-5 },
            Segment::Constant { field: [0.0, -3e-5, 0.0], duration: 2e-5 },
        ])
        .unwrap();
        let u = program_propagator(&m, &prog, [0.0; 3], &ApplyOptions::pulse_model()).unwrap();
        let v = program_propagator(&m, &inverse_program(&prog), [0.0; 3], &ApplyOptions::pulse_model()).unwrap();
        assert!(max_abs(&(v * u - identity(4))) < 1e-12);
    }

    #[test]
    fn cnot_matrix_matches_product_basis_definition() {
        let m = ch(100.0);
        let u = cnot_unitary(&m, 0, 1);
        // |00>,|01> unchanged; |10> <-> |11>
        assert_eq!(u[(0, 0)], c(1.0));
        assert_eq!(u[(1, 1)], c(1.0));
        assert_eq!(u[(3, 2)], c(1.0));
        assert_eq!(u[(2, 3)], c(1.0));
    }

    #[test]
    fn gate_spec_parsing() {
        let sys = SpinSystem::from_species("CHF", &[("C", "13C"), ("H", "1H"), ("F", "19F")], &[(0, 1, 1.0)]).unwrap();
        let g = GateSpec::parse("pi/2@C,x", &sys).unwrap();
        assert_eq!(g.targets, vec![0]);
        assert!((g.angle - PI / 2.0).abs() < 1e-15);
        let g = GateSpec::parse("pi@H+F,y", &sys).unwrap();
        assert_eq!(g.targets, vec![1, 2]);
        assert_eq!(g.axis, [0.0, 1.0, 0.0]);
        let g = GateSpec::parse("cnot@H,C", &sys).unwrap();
        assert_eq!((g.kind, g.targets.clone()), (GateKind::Cnot, vec![1, 0]));
        let g = GateSpec::parse("uzz(pi/2)@H,C", &sys).unwrap();
        assert_eq!(g.kind, GateKind::Uzz);
        assert!(GateSpec::parse("2*pi/3@C,z", &sys).is_ok());
        assert!(GateSpec::parse("pi@Q,x", &sys).is_err());
        assert!(GateSpec::parse("pi@C,w", &sys).is_err());
        assert!(GateSpec::parse("pi C x", &sys).is_err());
        assert!(GateSpec::rotation(vec![0], [1.0, 1.0, 0.0], 1.0).is_err());
        assert!(GateSpec::rotation(vec![0], [1.0, 0.0, 0.0], 13.0).is_err());
    }

    #[test]
    fn refocus_codes_satisfy_constraints() {
        let sys = SpinSystem::from_species(
            "HCN",
            &[("H", "1H"), ("C", "13C"), ("N", "15N")],
            &[(0, 1, 140.0), (1, 2, -11.0), (0, 2, 3.0)],
        )
        .unwrap();
        let codes = refocus_codes(&sys, 0, 1).unwrap();
        let slots = 1u32 << codes.bits;
        let avg = |k: usize, l: usize, axis: usize| -> f64 {
            (0..slots)
                .map(|s| {
                    let sign = |c: (u32, u32)| {
                        let a = parity(c.0 & s);
                        let b = parity(c.1 & s);
                        match axis {
                            0 => b,
                            1 => a ^ b,
                            _ => a,
                        }
                    };
                    if sign(codes.codes[k]) == sign(codes.codes[l]) { 1.0 } else { -1.0 }
                })
                .sum::<f64>()
                / slots as f64
        };
        assert_eq!((avg(0, 1, 0), avg(0, 1, 1), avg(0, 1, 2)), (0.0, 0.0, 1.0));
        for (k, l) in [(1, 2), (0, 2)] {
            for a in 0..3 {
                assert_eq!(avg(k, l, a), 0.0);
            }
        }
    }
}
