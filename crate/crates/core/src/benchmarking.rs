//! Clifford randomized benchmarking of single-spin control and decay fitting.
//!
//! Each Clifford gate is a pair PC with P = e^{±iπA}, A ∈ {𝟙, S_x, S_y, S_z},
//! and C = e^{±i(π/2)B}, B ∈ {S_x, S_y, S_z}: 48 draws covering 12 distinct
//! Cliffords whose products generate the full 24-element group.

use std::f64::consts::PI;
use std::sync::OnceLock;

use nalgebra::{Matrix2, Vector2};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::{compile_rotation, rotation_unitary, ControlOptions};
use crate::dynamics::{program_propagator, ApplyOptions, PulseProgram, Segment};
use crate::error::{Error, Result};
use crate::linalg::{c, conjugate, CMat};
use crate::spin::{Axis, SpinModel};
use crate::state::{sudden_state, ThermalConfig};

type M2 = Matrix2<Complex64>;

/// One PC pair: P = e^{i·p_sign·πA} (A = 𝟙 when `p_axis` is `None`),
/// C = e^{i·c_sign·(π/2)B}.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PcPair {
    pub p_axis: Option<Axis>,
    pub p_sign: i8,
    pub c_axis: Axis,
    pub c_sign: i8,
}

fn pauli(axis: Axis) -> M2 {
    let (o, z, i) = (c(1.0), c(0.0), Complex64::i());
    match axis {
        Axis::X => M2::new(z, o, o, z),
        Axis::Y => M2::new(z, -i, i, z),
        Axis::Z => M2::new(o, z, z, -o),
    }
}

/// e^{iθσ/2} = cos(θ/2) + i sin(θ/2) σ.
fn spin_exp(axis: Axis, theta: f64) -> M2 {
    M2::identity() * c((theta / 2.0).cos()) + pauli(axis) * Complex64::new(0.0, (theta / 2.0).sin())
}

impl PcPair {
    /// All 48 pairs in a fixed order.
    pub fn all() -> Vec<PcPair> {
        let mut out = Vec::with_capacity(48);
        for p_axis in [None, Some(Axis::X), Some(Axis::Y), Some(Axis::Z)] {
            for p_sign in [1i8, -1] {
                for c_axis in Axis::ALL {
                    for c_sign in [1i8, -1] {
                        out.push(PcPair {
                            p_axis,
                            p_sign,
                            c_axis,
                            c_sign,
                        });
                    }
                }
            }
        }
        out
    }

    fn p(&self) -> M2 {
        match self.p_axis {
            None => M2::identity() * c(-1.0),
            Some(a) => spin_exp(a, self.p_sign as f64 * PI),
        }
    }

    fn c(&self) -> M2 {
        spin_exp(self.c_axis, self.c_sign as f64 * PI / 2.0)
    }

    /// P·C as a 2×2 unitary (C acts first).
    pub fn matrix(&self) -> M2 {
        self.p() * self.c()
    }

    /// Rotations realizing the pair in time order, as (axis vector, angle):
    /// e^{isθS_a} is a rotation by θ about −s·â.
    pub fn rotations(&self) -> Vec<([f64; 3], f64)> {
        let mut out = vec![(self.c_axis.unit().map(|v| -v * self.c_sign as f64), PI / 2.0)];
        if let Some(a) = self.p_axis {
            out.push((a.unit().map(|v| -v * self.p_sign as f64), PI));
        }
        out
    }
}

/// Canonical representative modulo global phase.
fn canonical(u: &M2) -> M2 {
    let mut best = 0;
    for k in 1..4 {
        if u[k].norm() > u[best].norm() + 1e-9 {
            best = k;
        }
    }
    let phase = u[best].conj() / u[best].norm();
    u * phase
}

fn same_up_to_phase(a: &M2, b: &M2) -> bool {
    (canonical(a) - canonical(b)).iter().all(|z| z.norm() < 1e-9)
}

/// Group elements generated by the PC pairs, with shortest PC words.
#[derive(Clone, Debug)]
pub struct CliffordTable {
    pub pairs: Vec<PcPair>,
    /// Group elements, canonical modulo phase; element 0 is the identity.
    pub elements: Vec<Matrix2<Complex64>>,
    /// Group element of each pair.
    pub pair_element: Vec<usize>,
    /// Shortest pair word (time order) realizing each element.
    pub words: Vec<Vec<usize>>,
}

impl CliffordTable {
    /// Build the table by breadth-first closure and check that it is the
    /// 24-element single-qubit Clifford group.
    pub fn new() -> Result<Self> {
        let pairs = PcPair::all();
        let mats: Vec<M2> = pairs.iter().map(PcPair::matrix).collect();
        let mut elements = vec![M2::identity()];
        let mut words: Vec<Vec<usize>> = vec![Vec::new()];
        let mut frontier = vec![0usize];
        while !frontier.is_empty() {
            let mut next = Vec::new();
            for &e in &frontier {
                for (k, m) in mats.iter().enumerate() {
                    let prod = m * elements[e];
                    if !elements.iter().any(|x| same_up_to_phase(x, &prod)) {
                        elements.push(canonical(&prod));
                        let mut w = words[e].clone();
                        w.push(k);
                        words.push(w);
                        next.push(elements.len() - 1);
                    }
                }
            }
            frontier = next;
        }
        if elements.len() != 24 {
            return Err(Error::InvalidArgument(format!(
                "PC pairs generate {} elements instead of 24",
                elements.len()
            )));
        }
        let pair_element = mats
            .iter()
            .map(|m| elements.iter().position(|x| same_up_to_phase(x, m)).expect("closed"))
            .collect();
        Ok(CliffordTable {
            pairs,
            elements,
            pair_element,
            words,
        })
    }

    pub fn global() -> &'static CliffordTable {
        static TABLE: OnceLock<CliffordTable> = OnceLock::new();
        TABLE.get_or_init(|| CliffordTable::new().expect("Clifford closure"))
    }

    pub fn index_of(&self, u: &M2) -> Option<usize> {
        self.elements.iter().position(|x| same_up_to_phase(x, u))
    }

    /// Number of distinct group elements hit by the 48 pairs.
    pub fn distinct_pairs(&self) -> usize {
        let mut seen = self.pair_element.clone();
        seen.sort_unstable();
        seen.dedup();
        seen.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RbSequence {
    pub gates: Vec<PcPair>,
    pub recovery: Vec<PcPair>,
}

impl RbSequence {
    /// Ideal 2×2 product of gates and recovery, in time order.
    pub fn ideal_product(&self) -> Matrix2<Complex64> {
        self.gates
            .iter()
            .chain(&self.recovery)
            .fold(M2::identity(), |acc, g| g.matrix() * acc)
    }
}

/// `m` uniformly drawn PC pairs followed by the recovery that returns the
/// ideal net map to the identity.
pub fn rb_sequence_with(m: usize, rng: &mut impl Rng) -> RbSequence {
    let table = CliffordTable::global();
    let gates: Vec<PcPair> = (0..m).map(|_| table.pairs[rng.random_range(0..table.pairs.len())]).collect();
    let net = gates.iter().fold(M2::identity(), |acc, g| g.matrix() * acc);
    let inverse = net.adjoint();
    let idx = table.index_of(&inverse).expect("Clifford products stay in the group");
    let recovery = table.words[idx].iter().map(|&k| table.pairs[k]).collect();
    RbSequence { gates, recovery }
}

pub fn rb_sequence(m: usize, seed: u64) -> RbSequence {
    rb_sequence_with(m, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorModel {
    /// Relative σ of a per-gate field-amplitude factor.
    #[serde(default)]
    pub amplitude_jitter: f64,
    /// Relative σ of a per-gate duration factor.
    #[serde(default)]
    pub duration_jitter: f64,
    /// Depolarizing probability on the target after every Clifford gate.
    #[serde(default)]
    pub depolarizing: f64,
}

/// How gates are realized during simulation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateRealization {
    /// Exact target-spin rotations.
    Ideal,
    /// Pulse programs from the control compiler, propagated with the full Hamiltonian.
    Compiled(ControlOptions),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RbConfig {
    pub lengths: Vec<usize>,
    pub randomizations: usize,
    pub seed: u64,
    pub errors: ErrorModel,
    pub gates: GateRealization,
    pub thermal: ThermalConfig,
}

impl RbConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lengths.is_empty() {
            return Err(Error::InvalidArgument("no sequence lengths".into()));
        }
        if self.randomizations == 0 {
            return Err(Error::InvalidArgument("need at least one randomization".into()));
        }
        let e = &self.errors;
        if !(e.amplitude_jitter >= 0.0 && e.duration_jitter >= 0.0 && (0.0..=1.0).contains(&e.depolarizing)) {
            return Err(Error::InvalidArgument("invalid error model".into()));
        }
        self.thermal.validate()
    }
}

/// Mean normalized signal per sequence length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RbData {
    pub lengths: Vec<usize>,
    pub mean: Vec<f64>,
    /// Standard error of the mean.
    pub sem: Vec<f64>,
    /// Normalized signal of every randomization, per length.
    pub samples: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RbFit {
    pub d_if: f64,
    pub eps_g: f64,
    /// Covariance of (d_if, eps_g).
    pub covariance: [[f64; 2]; 2],
    pub residuals: Vec<f64>,
}

impl RbFit {
    pub fn sigma(&self) -> (f64, f64) {
        (self.covariance[0][0].sqrt(), self.covariance[1][1].sqrt())
    }

    pub fn model(&self, m: f64) -> f64 {
        (1.0 - self.d_if) * (1.0 - 2.0 * self.eps_g).powf(m)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RbResult {
    pub data: RbData,
    pub fit: RbFit,
}

struct GateSet {
    /// Per pair: pulse programs of its rotations in time order.
    programs: Vec<Vec<PulseProgram>>,
    /// Noise-free propagators per pair.
    exact: Vec<CMat>,
}

fn perturbed(program: &PulseProgram, amp: f64, dur: f64) -> PulseProgram {
    let segments = program
        .segments
        .iter()
        .map(|s| match *s {
            Segment::Constant { field, duration } => Segment::Constant {
                field: field.map(|b| b * amp),
                duration: duration * dur,
            },
            ref other => other.clone(),
        })
        .collect();
    PulseProgram { segments }
}

fn pauli_on(model: &SpinModel, target: usize) -> [CMat; 3] {
    Axis::ALL.map(|a| model.ops().get(target, a) * c(2.0))
}

fn depolarize(rho: &CMat, paulis: &[CMat; 3], p: f64) -> CMat {
    if p == 0.0 {
        return rho.clone();
    }
    let mut twirl = rho.clone();
    for s in paulis {
        twirl += s * rho * s;
    }
    rho * c(1.0 - p) + twirl * c(p / 4.0)
}

/// Simulate randomized benchmarking of rotations on `target`.
///
/// Each run starts from the sudden state, applies the drawn gates (with
/// sampled per-gate amplitude and duration factors and an optional
/// depolarizing step on the target after each Clifford), the recovery, and
/// four ideal readouts {none, π_z on the target, π_x on the other spins,
/// both}. The average of ⟨Σ_{k≠t} I_kz − I_tz⟩ over the readouts isolates the
/// target's z polarization, which is normalized by its value before any gate.
pub fn rb_simulate(model: &SpinModel, target: usize, cfg: &RbConfig) -> Result<RbResult> {
    cfg.validate()?;
    let system = model.system();
    if target >= system.len() {
        return Err(Error::InvalidArgument(format!("spin index {target} out of range")));
    }
    let table = CliffordTable::global();
    let gates = build_gates(model, target, &cfg.gates, &table.pairs)?;
    let paulis = pauli_on(model, target);

    let rho0 = sudden_state(system, &cfg.thermal)?.deviation();
    let others: Vec<usize> = (0..system.len()).filter(|&k| k != target).collect();
    let readouts = {
        let pz = rotation_unitary(model, &[target], [0.0, 0.0, 1.0], PI)?;
        let px = if others.is_empty() {
            crate::linalg::identity(model.dim())
        } else {
            rotation_unitary(model, &others, [1.0, 0.0, 0.0], PI)?
        };
        let both = &px * &pz;
        [crate::linalg::identity(model.dim()), pz, px, both]
    };
    let mut observable = model.ops().get(target, Axis::Z) * c(-1.0);
    for &k in &others {
        observable += model.ops().get(k, Axis::Z);
    }
    let signal = |rho: &CMat| -> f64 {
        readouts
            .iter()
            .map(|r| crate::linalg::trace_product(&conjugate(r, rho), &observable).re)
            .sum::<f64>()
            / 4.0
    };
    let reference = signal(&rho0);
    if reference.abs() < 1e-300 {
        return Err(Error::InvalidArgument("target spin carries no initial polarization".into()));
    }

    let noisy = cfg.errors.amplitude_jitter > 0.0 || cfg.errors.duration_jitter > 0.0;
    let amp_dist = Normal::new(1.0, cfg.errors.amplitude_jitter).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let dur_dist = Normal::new(1.0, cfg.errors.duration_jitter).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let pair_index = |g: &PcPair| table.pairs.iter().position(|p| p == g).expect("known pair");
    let realize = |g: &PcPair, rng: &mut ChaCha8Rng| -> Result<CMat> {
        let k = pair_index(g);
        if !noisy {
            return Ok(gates.exact[k].clone());
        }
        let amp = amp_dist.sample(rng);
        let dur = dur_dist.sample(rng).max(0.0);
        match cfg.gates {
            GateRealization::Ideal => {
                let mut u = crate::linalg::identity(model.dim());
                for (axis, angle) in g.rotations() {
                    u = rotation_unitary(model, &[target], axis, angle * amp * dur)? * u;
                }
                Ok(u)
            }
            GateRealization::Compiled(_) => {
                let mut u = crate::linalg::identity(model.dim());
                for prog in &gates.programs[k] {
                    let p = perturbed(prog, amp, dur);
                    u = program_propagator(model, &p, [0.0; 3], &ApplyOptions::default())? * u;
                }
                Ok(u)
            }
        }
    };

    let jobs: Vec<(usize, usize)> = (0..cfg.lengths.len())
        .flat_map(|i| (0..cfg.randomizations).map(move |r| (i, r)))
        .collect();
    let values = jobs
        .par_iter()
        .map(|&(i, r)| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream((i * cfg.randomizations + r) as u64);
            let seq = rb_sequence_with(cfg.lengths[i], &mut rng);
            let mut rho = rho0.clone();
            for g in &seq.gates {
                rho = conjugate(&realize(g, &mut rng)?, &rho);
                rho = depolarize(&rho, &paulis, cfg.errors.depolarizing);
            }
            for g in &seq.recovery {
                rho = conjugate(&realize(g, &mut rng)?, &rho);
            }
            Ok(signal(&rho) / reference)
        })
        .collect::<Result<Vec<f64>>>()?;

    let k = cfg.randomizations;
    let samples: Vec<Vec<f64>> = values.chunks(k).map(|s| s.to_vec()).collect();
    let mean: Vec<f64> = samples.iter().map(|s| s.iter().sum::<f64>() / k as f64).collect();
    let sem: Vec<f64> = samples
        .iter()
        .zip(&mean)
        .map(|(s, &mu)| {
            if k < 2 {
                return 0.0;
            }
            let var = s.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (k - 1) as f64;
            (var / k as f64).sqrt()
        })
        .collect();
    let data = RbData {
        lengths: cfg.lengths.clone(),
        mean,
        sem,
        samples,
    };
    let fit = rb_fit(&data.lengths, &data.mean)?;
    Ok(RbResult { data, fit })
}

fn build_gates(model: &SpinModel, target: usize, realization: &GateRealization, pairs: &[PcPair]) -> Result<GateSet> {
    let mut cache: Vec<(([i64; 3], i64), (PulseProgram, CMat))> = Vec::new();
    let key = |axis: [f64; 3], angle: f64| (axis.map(|v| v.round() as i64), (angle * 1e6).round() as i64);
    let mut programs = Vec::with_capacity(pairs.len());
    let mut exact = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let mut progs = Vec::new();
        let mut u = crate::linalg::identity(model.dim());
        for (axis, angle) in pair.rotations() {
            let k = key(axis, angle);
            let (prog, prop) = match cache.iter().find(|(kk, _)| *kk == k) {
                Some((_, v)) => v.clone(),
                None => {
                    let v = match realization {
                        GateRealization::Ideal => (PulseProgram::empty(), rotation_unitary(model, &[target], axis, angle)?),
                        GateRealization::Compiled(opts) => {
                            let seq = compile_rotation(model, target, axis, angle, opts)?;
                            let prop = program_propagator(model, &seq.program, [0.0; 3], &ApplyOptions::default())?;
                            (seq.program, prop)
                        }
                    };
                    cache.push((k, v.clone()));
                    v
                }
            };
            u = &prop * u;
            progs.push(prog);
        }
        programs.push(progs);
        exact.push(u);
    }
    Ok(GateSet { programs, exact })
}

fn model_eval(m: &[f64], a: f64, eps: f64) -> (Vec<f64>, Vec<[f64; 2]>) {
    let r = 1.0 - 2.0 * eps;
    let mut f = Vec::with_capacity(m.len());
    let mut jac = Vec::with_capacity(m.len());
    for &mi in m {
        let rm = r.powf(mi);
        let drm = if mi == 0.0 { 0.0 } else { mi * r.powf(mi - 1.0) * -2.0 };
        f.push(a * rm);
        jac.push([rm, a * drm]);
    }
    (f, jac)
}

/// Least-squares fit of F̄ = (1 − d_if)(1 − 2ε_g)^m on the linear scale by
/// Levenberg–Marquardt with ε_g kept in [0, ½]. The covariance is the inverse
/// normal matrix scaled by the residual variance.
pub fn rb_fit(lengths: &[usize], values: &[f64]) -> Result<RbFit> {
    if lengths.len() != values.len() {
        return Err(Error::DimensionMismatch {
            expected: lengths.len(),
            got: values.len(),
        });
    }
    let mut distinct = lengths.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::FitFailed("need at least three distinct sequence lengths".into()));
    }
    if values.iter().any(|v| !v.is_finite()) || values.iter().all(|&v| v == 0.0) {
        return Err(Error::FitFailed("degenerate decay data".into()));
    }
    let m: Vec<f64> = lengths.iter().map(|&l| l as f64).collect();
    let n = m.len();

    // start from a log-linear regression on the positive points
    let pts: Vec<(f64, f64)> = m.iter().zip(values).filter(|(_, &v)| v > 0.0).map(|(&x, &v)| (x, v.ln())).collect();
    let (mut a, mut eps) = if pts.len() >= 2 {
        let k = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let slope = if sxx > 0.0 {
            pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx
        } else {
            0.0
        };
        (((my - slope * mx).exp()), ((1.0 - slope.exp()) / 2.0).clamp(0.0, 0.5))
    } else {
        (values.iter().fold(0.0f64, |s, v| s.max(v.abs())), 0.01)
    };

    let cost = |a: f64, eps: f64| -> f64 {
        let (f, _) = model_eval(&m, a, eps);
        f.iter().zip(values).map(|(fi, yi)| (yi - fi).powi(2)).sum()
    };
    let mut lambda = 1e-3;
    let mut current = cost(a, eps);
    for _ in 0..500 {
        let (f, jac) = model_eval(&m, a, eps);
        let mut jtj = Matrix2::<f64>::zeros();
        let mut jtr = Vector2::<f64>::zeros();
        for i in 0..n {
            let r = values[i] - f[i];
            for p in 0..2 {
                jtr[p] += jac[i][p] * r;
                for q in 0..2 {
                    jtj[(p, q)] += jac[i][p] * jac[i][q];
                }
            }
        }
        let mut improved = false;
        for _ in 0..40 {
            let mut damped = jtj;
            for p in 0..2 {
                damped[(p, p)] += lambda * jtj[(p, p)].max(1e-300);
            }
            let Some(step) = damped.lu().solve(&jtr) else {
                lambda *= 10.0;
                continue;
            };
            let na = a + step[0];
            let ne = (eps + step[1]).clamp(0.0, 0.5);
            let nc = cost(na, ne);
            if nc <= current {
                let small = (na - a).abs() <= 1e-15 * a.abs().max(1e-300) && (ne - eps).abs() <= 1e-15;
                a = na;
                eps = ne;
                let gain = current - nc;
                current = nc;
                lambda = (lambda / 10.0).max(1e-15);
                improved = !small && gain > 1e-30;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }

    let (f, jac) = model_eval(&m, a, eps);
    let residuals: Vec<f64> = values.iter().zip(&f).map(|(y, fi)| y - fi).collect();
    let mut jtj = Matrix2::<f64>::zeros();
    for row in &jac {
        for p in 0..2 {
            for q in 0..2 {
                jtj[(p, q)] += row[p] * row[q];
            }
        }
    }
    let s2 = if n > 2 { current / (n - 2) as f64 } else { 0.0 };
    let inv = jtj
        .try_inverse()
        .ok_or_else(|| Error::FitFailed("singular normal matrix".into()))?;
    // d_if = 1 − A, so var(d_if) = var(A) and cov(d_if, ε) = −cov(A, ε)
    let covariance = [
        [inv[(0, 0)] * s2, -inv[(0, 1)] * s2],
        [-inv[(1, 0)] * s2, inv[(1, 1)] * s2],
    ];
    Ok(RbFit {
        d_if: 1.0 - a,
        eps_g: eps,
        covariance,
        residuals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closure_is_the_clifford_group() {
        let t = CliffordTable::new().unwrap();
        assert_eq!(t.elements.len(), 24);
        assert_eq!(t.pairs.len(), 48);
        assert_eq!(t.distinct_pairs(), 12);
        for (e, w) in t.elements.iter().zip(&t.words) {
            let prod = w.iter().fold(M2::identity(), |acc, &k| t.pairs[k].matrix() * acc);
            assert!(same_up_to_phase(&prod, e));
            assert!(w.len() <= 2);
        }
    }

    #[test]
    fn empty_sequence_has_identity_recovery() {
        let s = rb_sequence(0, 5);
        assert!(s.gates.is_empty() && s.recovery.is_empty());
    }

    #[test]
    fn rotations_reproduce_pair_matrix() {
        for pair in PcPair::all() {
            let mut u = M2::identity();
            for (axis, angle) in pair.rotations() {
                // exp(−iθ n·σ/2) with n = ±â
                let a = Axis::ALL.into_iter().find(|a| a.unit().iter().zip(axis).any(|(x, y)| *x != 0.0 && y != 0.0)).unwrap();
                let sign = axis[a.index()];
                u = spin_exp(a, -sign * angle) * u;
            }
            assert!(same_up_to_phase(&u, &pair.matrix()), "{pair:?}");
        }
    }

    #[test]
    fn fit_exact_model() {
        let lengths: Vec<usize> = (0..=100).step_by(5).collect();
        let values: Vec<f64> = lengths.iter().map(|&m| 0.9859 * (1.0 - 0.008f64).powi(m as i32)).collect();
        let fit = rb_fit(&lengths, &values).unwrap();
        assert!((fit.d_if - 0.0141).abs() < 1e-10);
        assert!((fit.eps_g - 0.004).abs() < 1e-12);
    }

    #[test]
    fn fit_flat_and_degenerate() {
        let lengths = [0, 1, 2, 4, 8];
        let fit = rb_fit(&lengths, &[0.98; 5]).unwrap();
        assert!(fit.eps_g < 1e-6);
        assert!((fit.d_if - 0.02).abs() < 1e-10);
        assert!(matches!(rb_fit(&lengths, &[0.0; 5]), Err(Error::FitFailed(_))));
        assert!(matches!(rb_fit(&[1, 1, 2], &[0.9, 0.9, 0.8]), Err(Error::FitFailed(_))));
        assert!(rb_fit(&[1, 2, 3], &[0.9, f64::NAN, 0.8]).is_err());
    }
}
