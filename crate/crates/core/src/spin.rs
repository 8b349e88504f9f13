//! Spin systems, spin operators, Hamiltonians and the controllability test.
//!
//! Units: gyromagnetic ratios are stored as γ/2π in Hz/T and couplings in Hz.
//! Hamiltonians are returned in angular units (rad/s) with ħ = 1, so every
//! conversion from Hz picks up one factor of 2π here and nowhere else.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::constants::species_gamma;
use crate::error::{Error, Result};
use crate::linalg::{c, identity, kron, CMat};

/// Largest spin count accepted by default (dense 4096 x 4096 matrices).
pub const DEFAULT_MAX_SPINS: usize = 12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spin {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub species: Option<String>,
    /// γ/2π in Hz/T.
    pub gamma: f64,
}

/// A liquid-state spin-1/2 ensemble: spins plus a symmetric J matrix in Hz.
#[derive(Clone, Debug, PartialEq)]
pub struct SpinSystem {
    pub name: String,
    spins: Vec<Spin>,
    j: Vec<Vec<f64>>,
}

impl SpinSystem {
    pub fn new(name: impl Into<String>, spins: Vec<Spin>, j_hz: Vec<Vec<f64>>) -> Result<Self> {
        let n = spins.len();
        if n == 0 {
            return Err(Error::InvalidSystem("at least one spin is required".into()));
        }
        if j_hz.len() != n || j_hz.iter().any(|row| row.len() != n) {
            return Err(Error::InvalidSystem(format!(
                "J matrix must be {n}x{n}"
            )));
        }
        for (k, s) in spins.iter().enumerate() {
            if !s.gamma.is_finite() || s.gamma == 0.0 {
                return Err(Error::InvalidSystem(format!(
                    "spin {k} ({}) has invalid gamma {}",
                    s.label, s.gamma
                )));
            }
        }
        for a in 0..n {
            if j_hz[a][a] != 0.0 {
                return Err(Error::InvalidSystem(format!("J[{a}][{a}] must be zero")));
            }
            for b in 0..n {
                if !j_hz[a][b].is_finite() {
                    return Err(Error::InvalidSystem(format!("J[{a}][{b}] is not finite")));
                }
                if j_hz[a][b] != j_hz[b][a] {
                    return Err(Error::InvalidSystem(format!(
                        "J matrix is not symmetric at ({a}, {b})"
                    )));
                }
            }
        }
        Ok(SpinSystem {
            name: name.into(),
            spins,
            j: j_hz,
        })
    }

    /// Build from `(label, species)` pairs using registry gyromagnetic ratios and
    /// a list of `(i, j, J_Hz)` couplings.
    pub fn from_species(
        name: impl Into<String>,
        species: &[(&str, &str)],
        couplings: &[(usize, usize, f64)],
    ) -> Result<Self> {
        let spins = species
            .iter()
            .map(|(label, tag)| {
                let gamma = species_gamma(tag)
                    .ok_or_else(|| Error::InvalidSystem(format!("unknown species {tag}")))?;
                Ok(Spin {
                    label: label.to_string(),
                    species: Some(tag.to_string()),
                    gamma,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let n = spins.len();
        let mut j = vec![vec![0.0; n]; n];
        for &(a, b, val) in couplings {
            if a >= n || b >= n || a == b {
                return Err(Error::InvalidSystem(format!("bad coupling index ({a}, {b})")));
            }
            j[a][b] = val;
            j[b][a] = val;
        }
        Self::new(name, spins, j)
    }

    /// One X spin coupled with `j_hz` to `n` equivalent A spins. X is spin 0.
    pub fn xan(n: usize, j_hz: f64, gamma_x: f64, gamma_a: f64) -> Result<Self> {
        let mut spins = vec![Spin {
            label: "X".into(),
            species: None,
            gamma: gamma_x,
        }];
        for k in 0..n {
            spins.push(Spin {
                label: format!("A{}", k + 1),
                species: None,
                gamma: gamma_a,
            });
        }
        let m = n + 1;
        let mut j = vec![vec![0.0; m]; m];
        for k in 1..m {
            j[0][k] = j_hz;
            j[k][0] = j_hz;
        }
        Self::new(format!("XA{n}"), spins, j)
    }

    pub fn len(&self) -> usize {
        self.spins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spins.is_empty()
    }

    pub fn dim(&self) -> usize {
        1 << self.spins.len()
    }

    pub fn spins(&self) -> &[Spin] {
        &self.spins
    }

    pub fn gamma(&self, k: usize) -> f64 {
        self.spins[k].gamma
    }

    pub fn gammas(&self) -> Vec<f64> {
        self.spins.iter().map(|s| s.gamma).collect()
    }

    pub fn j(&self, a: usize, b: usize) -> f64 {
        self.j[a][b]
    }

    pub fn j_matrix(&self) -> &[Vec<f64>] {
        &self.j
    }

    /// Index of the first spin whose label matches.
    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.spins.iter().position(|s| s.label == label)
    }

    /// Smallest non-zero |J| in Hz, if any coupling exists.
    pub fn min_abs_coupling(&self) -> Option<f64> {
        let n = self.len();
        let mut best: Option<f64> = None;
        for a in 0..n {
            for b in a + 1..n {
                let v = self.j[a][b].abs();
                if v > 0.0 {
                    best = Some(best.map_or(v, |m: f64| m.min(v)));
                }
            }
        }
        best
    }

    /// The same system with spins reordered: new spin k is old spin `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.len();
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::InvalidArgument("not a permutation".into()));
        }
        let spins = perm.iter().map(|&p| self.spins[p].clone()).collect();
        let j = (0..n)
            .map(|a| (0..n).map(|b| self.j[perm[a]][perm[b]]).collect())
            .collect();
        Self::new(self.name.clone(), spins, j)
    }
}

/// On-disk description of a spin system.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemFile {
    pub name: String,
    pub spins: Vec<SpinEntry>,
    pub j_hz: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpinEntry {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub species: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_hz_per_t: Option<f64>,
}

impl SystemFile {
    pub fn into_system(self) -> Result<SpinSystem> {
        let spins = self
            .spins
            .into_iter()
            .map(|e| {
                // an explicit gamma wins over the registry
                let gamma = match (e.gamma_hz_per_t, e.species.as_deref()) {
                    (Some(g), _) => g,
                    (None, Some(tag)) => species_gamma(tag).ok_or_else(|| {
                        Error::InvalidSystem(format!("unknown species {tag} for spin {}", e.label))
                    })?,
                    (None, None) => {
                        return Err(Error::InvalidSystem(format!(
                            "spin {} needs a species or gamma_hz_per_t",
                            e.label
                        )))
                    }
                };
                Ok(Spin {
                    label: e.label,
                    species: e.species,
                    gamma,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        SpinSystem::new(self.name, spins, self.j_hz)
    }

    pub fn from_system(system: &SpinSystem) -> Self {
        SystemFile {
            name: system.name.clone(),
            spins: system
                .spins
                .iter()
                .map(|s| SpinEntry {
                    label: s.label.clone(),
                    species: s.species.clone(),
                    gamma_hz_per_t: Some(s.gamma),
                })
                .collect(),
            j_hz: system.j.clone(),
        }
    }
}

impl SpinSystem {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str::<SystemFile>(text)?.into_system()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&SystemFile::from_system(self))?)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Cartesian axis label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn unit(self) -> [f64; 3] {
        let mut v = [0.0; 3];
        v[self.index()] = 1.0;
        v
    }
}

impl std::str::FromStr for Axis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "x" => Ok(Axis::X),
            "y" => Ok(Axis::Y),
            "z" => Ok(Axis::Z),
            other => Err(Error::InvalidArgument(format!("unknown axis {other}"))),
        }
    }
}

/// Per-spin angular momentum matrices in the product I_z basis.
///
/// Spin 0 is the most significant tensor factor; basis state index bit
/// `n-1-k` is 1 when spin k is down (I_z = -1/2).
#[derive(Clone, Debug)]
pub struct OperatorSet {
    n: usize,
    ops: Vec<[CMat; 3]>,
}

fn pauli_halves() -> [CMat; 3] {
    let h = 0.5;
    let x = CMat::from_row_slice(2, 2, &[c(0.0), c(h), c(h), c(0.0)]);
    let y = CMat::from_row_slice(
        2,
        2,
        &[
            c(0.0),
            num_complex::Complex64::new(0.0, -h),
            num_complex::Complex64::new(0.0, h),
            c(0.0),
        ],
    );
    let z = CMat::from_row_slice(2, 2, &[c(h), c(0.0), c(0.0), c(-h)]);
    [x, y, z]
}

impl OperatorSet {
    pub fn new(n: usize) -> Result<Self> {
        Self::with_limit(n, DEFAULT_MAX_SPINS)
    }

    pub fn with_limit(n: usize, max_spins: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidSystem("at least one spin is required".into()));
        }
        if n > max_spins {
            return Err(Error::DimensionOverflow { spins: n, max: max_spins });
        }
        let single = pauli_halves();
        let ops = (0..n)
            .map(|k| {
                let left = identity(1 << k);
                let right = identity(1 << (n - 1 - k));
                let build = |m: &CMat| kron(&kron(&left, m), &right);
                [build(&single[0]), build(&single[1]), build(&single[2])]
            })
            .collect();
        Ok(OperatorSet { n, ops })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        1 << self.n
    }

    /// I_{k,axis}.
    pub fn get(&self, spin: usize, axis: Axis) -> &CMat {
        &self.ops[spin][axis.index()]
    }

    pub fn spin(&self, k: usize) -> &[CMat; 3] {
        &self.ops[k]
    }

    /// Σ_k w_k I_{k,axis}.
    pub fn weighted_sum(&self, axis: Axis, weights: &[f64]) -> CMat {
        let mut acc = CMat::zeros(self.dim(), self.dim());
        for (k, &w) in weights.iter().enumerate() {
            if w != 0.0 {
                acc += self.get(k, axis) * c(w);
            }
        }
        acc
    }

    /// Total angular momentum component F_axis.
    pub fn total(&self, axis: Axis) -> CMat {
        self.weighted_sum(axis, &vec![1.0; self.n])
    }

    /// n·I_k for a (not necessarily unit) direction n.
    pub fn along(&self, spin: usize, dir: [f64; 3]) -> CMat {
        let mut acc = CMat::zeros(self.dim(), self.dim());
        for axis in Axis::ALL {
            let w = dir[axis.index()];
            if w != 0.0 {
                acc += self.get(spin, axis) * c(w);
            }
        }
        acc
    }

    /// I_a · I_b.
    pub fn scalar_product(&self, a: usize, b: usize) -> CMat {
        let mut acc = CMat::zeros(self.dim(), self.dim());
        for axis in Axis::ALL {
            acc += self.get(a, axis) * self.get(b, axis);
        }
        acc
    }
}

/// Kronecker-product construction of the spin operators for `system`.
pub fn build_operators(system: &SpinSystem) -> Result<OperatorSet> {
    OperatorSet::new(system.len())
}

/// A spin system together with its operators and the precomputed J part of the
/// Hamiltonian. Building Hamiltonians for many fields goes through this.
#[derive(Clone, Debug)]
pub struct SpinModel {
    system: SpinSystem,
    ops: OperatorSet,
    h_coupling: CMat,
    zeeman: [CMat; 3],
}

impl SpinModel {
    pub fn new(system: &SpinSystem) -> Result<Self> {
        let ops = build_operators(system)?;
        let n = system.len();
        let mut h_coupling = CMat::zeros(ops.dim(), ops.dim());
        for a in 0..n {
            for b in a + 1..n {
                let jab = system.j(a, b);
                if jab != 0.0 {
                    h_coupling += ops.scalar_product(a, b) * c(2.0 * PI * jab);
                }
            }
        }
        let gammas: Vec<f64> = system.gammas().iter().map(|g| -2.0 * PI * g).collect();
        let zeeman = [
            ops.weighted_sum(Axis::X, &gammas),
            ops.weighted_sum(Axis::Y, &gammas),
            ops.weighted_sum(Axis::Z, &gammas),
        ];
        Ok(SpinModel {
            system: system.clone(),
            ops,
            h_coupling,
            zeeman,
        })
    }

    pub fn system(&self) -> &SpinSystem {
        &self.system
    }

    pub fn ops(&self) -> &OperatorSet {
        &self.ops
    }

    pub fn dim(&self) -> usize {
        self.ops.dim()
    }

    /// Σ_{i<j} 2π J_ij I_i·I_j in rad/s.
    pub fn coupling(&self) -> &CMat {
        &self.h_coupling
    }

    /// -2π Σ_j γ_j I_{j,axis}: the Zeeman term per tesla along `axis`.
    pub fn zeeman_unit(&self, axis: Axis) -> &CMat {
        &self.zeeman[axis.index()]
    }

    pub fn zeeman(&self, field: [f64; 3]) -> CMat {
        let mut h = CMat::zeros(self.dim(), self.dim());
        for axis in Axis::ALL {
            let b = field[axis.index()];
            if b != 0.0 {
                h += &self.zeeman[axis.index()] * c(b);
            }
        }
        h
    }

    /// Full Hamiltonian (rad/s) in field `field` (tesla).
    pub fn hamiltonian(&self, field: [f64; 3]) -> CMat {
        &self.h_coupling + self.zeeman(field)
    }

    /// Hamiltonian with or without the J term.
    pub fn hamiltonian_with(&self, field: [f64; 3], include_coupling: bool) -> CMat {
        if include_coupling {
            self.hamiltonian(field)
        } else {
            self.zeeman(field)
        }
    }

    /// Σ_j γ_j I_{j,axis}: the magnetization observable (Hz/T units).
    pub fn magnetization_operator(&self, axis: Axis) -> CMat {
        self.ops.weighted_sum(axis, &self.system.gammas())
    }
}

/// H = Σ_{i<j} 2π J_ij I_i·I_j − Σ_j 2π γ_j I_j·B, in rad/s.
pub fn hamiltonian(system: &SpinSystem, field: [f64; 3]) -> Result<CMat> {
    if field.iter().any(|b| !b.is_finite()) {
        return Err(Error::InvalidArgument("field must be finite".into()));
    }
    Ok(SpinModel::new(system)?.hamiltonian(field))
}

/// Default relative tolerance for treating two gyromagnetic ratios as equal.
pub const DEFAULT_GAMMA_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllabilityStatus {
    ControllableConditionI,
    ControllableConditionIi,
    Undetermined,
}

/// One transfer performed by the disintegration procedure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferStep {
    pub group: usize,
    pub spins: (usize, usize),
    pub witness: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControllabilityVerdict {
    pub status: ControllabilityStatus,
    pub connected: bool,
    /// Spins with a unique gyromagnetic ratio.
    pub unique: Vec<usize>,
    /// Groups of spins sharing a gyromagnetic ratio.
    pub groups: Vec<Vec<usize>>,
    pub transfers: Vec<TransferStep>,
    /// Spins never transferred to the distinguished set.
    pub remaining: Vec<usize>,
}

impl ControllabilityVerdict {
    pub fn is_controllable(&self) -> bool {
        self.status != ControllabilityStatus::Undetermined
    }
}

fn gammas_equal(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs())
}

fn is_connected(system: &SpinSystem) -> bool {
    let n = system.len();
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(a) = stack.pop() {
        for b in 0..n {
            if !seen[b] && system.j(a, b) != 0.0 {
                seen[b] = true;
                stack.push(b);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

/// Graph criteria for complete controllability under global fields.
///
/// Condition (i): connected coupling graph and pairwise distinct γ. Condition
/// (ii): connected graph, at least one spin with unique γ, and every spin of
/// the equal-γ groups reaches the distinguished set through the
/// disintegration procedure. Systems failing both are `Undetermined`.
pub fn controllability(system: &SpinSystem, gamma_tolerance: f64) -> Result<ControllabilityVerdict> {
    let n = system.len();
    if n == 0 {
        return Err(Error::InvalidSystem("empty system".into()));
    }
    let connected = is_connected(system);

    // group spins by gamma
    let mut classes: Vec<Vec<usize>> = Vec::new();
    for k in 0..n {
        match classes
            .iter_mut()
            .find(|cls| gammas_equal(system.gamma(cls[0]), system.gamma(k), gamma_tolerance))
        {
            Some(cls) => cls.push(k),
            None => classes.push(vec![k]),
        }
    }
    let unique: Vec<usize> = classes.iter().filter(|c| c.len() == 1).map(|c| c[0]).collect();
    let groups: Vec<Vec<usize>> = classes.into_iter().filter(|c| c.len() > 1).collect();

    let mut verdict = ControllabilityVerdict {
        status: ControllabilityStatus::Undetermined,
        connected,
        unique: unique.clone(),
        groups: groups.clone(),
        transfers: Vec::new(),
        remaining: groups.iter().flatten().copied().collect(),
    };
    if !connected {
        return Ok(verdict);
    }
    if groups.is_empty() {
        verdict.status = ControllabilityStatus::ControllableConditionI;
        verdict.remaining.clear();
        return Ok(verdict);
    }
    if unique.is_empty() {
        return Ok(verdict);
    }

    let (transfers, remaining) = disintegrate(system, unique, groups);
    verdict.status = if remaining.is_empty() {
        ControllabilityStatus::ControllableConditionIi
    } else {
        ControllabilityStatus::Undetermined
    };
    verdict.transfers = transfers;
    verdict.remaining = remaining;
    Ok(verdict)
}

/// Transfers pairs of equal-γ spins whose couplings to some distinguished spin
/// differ. Within a pass the distinguished set is frozen and transferred spins
/// collect in T; T joins the distinguished set when the pass runs dry, and the
/// procedure repeats until a pass transfers nothing.
fn disintegrate(
    system: &SpinSystem,
    mut distinguished: Vec<usize>,
    mut groups: Vec<Vec<usize>>,
) -> (Vec<TransferStep>, Vec<usize>) {
    let mut trace = Vec::new();
    loop {
        let mut transferred: Vec<usize> = Vec::new();
        for (gi, group) in groups.iter_mut().enumerate() {
            // Pair spins with different coupling signatures against the frozen
            // set, always drawing from the two largest signature classes so
            // the number of transfers does not depend on spin order.
            let signature = |k: usize| -> Vec<u64> {
                distinguished.iter().map(|&l| system.j(k, l).to_bits()).collect()
            };
            let mut classes: BTreeMap<Vec<u64>, Vec<usize>> = BTreeMap::new();
            for &k in group.iter() {
                classes.entry(signature(k)).or_default().push(k);
            }
            loop {
                let mut keys: Vec<&Vec<u64>> = classes.keys().collect();
                if keys.len() < 2 {
                    break;
                }
                keys.sort_by(|a, b| classes[*b].len().cmp(&classes[*a].len()).then(a.cmp(b)));
                let (ka, kb) = (keys[0].clone(), keys[1].clone());
                let j = classes.get_mut(&ka).unwrap().pop().unwrap();
                let k = classes.get_mut(&kb).unwrap().pop().unwrap();
                classes.retain(|_, v| !v.is_empty());
                let witness = *distinguished
                    .iter()
                    .find(|&&l| system.j(j, l) != system.j(k, l))
                    .expect("signatures differ");
                trace.push(TransferStep {
                    group: gi,
                    spins: (j.min(k), j.max(k)),
                    witness,
                });
                transferred.push(j);
                transferred.push(k);
            }
            group.retain(|s| !transferred.contains(s));
        }
        if transferred.is_empty() {
            break;
        }
        distinguished.extend(transferred);
    }
    let mut remaining: Vec<usize> = groups.into_iter().flatten().collect();
    remaining.sort_unstable();
    (trace, remaining)
}
