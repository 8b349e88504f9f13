use num_complex::Complex64;
use proptest::prelude::*;
use zulf_core::analytic::{clebsch_gordan, zero_field_lines, XAnSpec};
use zulf_core::control::{gate_fidelity, GateSpec};
use zulf_core::dynamics::{evolve, program_propagator, stick_spectrum, ApplyOptions, PulseProgram, Segment};
use zulf_core::linalg::{commutator, hermiticity_deviation, identity, max_abs, propagator, unitarity_deviation, CMat};
use zulf_core::magnetometer::{interference_amplitude, steady_polarization, MagnetometerParams};
use zulf_core::spin::controllability;
use zulf_core::state::sudden_state;
use zulf_core::{constants, Axis, SpinModel, SpinSystem, ThermalConfig};

const SPECIES: [&str; 4] = ["1H", "13C", "19F", "31P"];

fn system_strategy(max_spins: usize) -> impl Strategy<Value = SpinSystem> {
    (2..=max_spins)
        .prop_flat_map(|n| {
            (
                prop::collection::vec(0..SPECIES.len(), n),
                prop::collection::vec(-300.0f64..300.0, n * (n - 1) / 2),
            )
        })
        .prop_map(|(sp, js)| {
            let labels: Vec<String> = (0..sp.len()).map(|k| format!("S{k}")).collect();
            let species: Vec<(&str, &str)> = sp.iter().enumerate().map(|(k, &s)| (labels[k].as_str(), SPECIES[s])).collect();
            let mut couplings = Vec::new();
            let mut it = js.into_iter();
            for a in 0..sp.len() {
                for b in a + 1..sp.len() {
                    couplings.push((a, b, it.next().unwrap()));
                }
            }
            SpinSystem::from_species("random", &species, &couplings).unwrap()
        })
}

fn field_strategy() -> impl Strategy<Value = [f64; 3]> {
    prop::array::uniform3(-1e-5f64..1e-5)
}

fn random_hermitian(dim: usize, seed: &[f64]) -> CMat {
    let mut h = CMat::zeros(dim, dim);
    let mut it = seed.iter().cycle();
    for a in 0..dim {
        for b in a..dim {
            let re = *it.next().unwrap();
            let im = if a == b { 0.0 } else { *it.next().unwrap() };
            h[(a, b)] = Complex64::new(re, im);
            h[(b, a)] = Complex64::new(re, -im);
        }
    }
    h
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn hamiltonian_is_hermitian(system in system_strategy(4), b in field_strategy()) {
        let h = SpinModel::new(&system).unwrap().hamiltonian(b);
        prop_assert!(hermiticity_deviation(&h) <= 1e-12 * max_abs(&h).max(1.0));
    }

    #[test]
    fn longitudinal_field_conserves_total_fz(system in system_strategy(4), bz in -1e-5f64..1e-5) {
        let model = SpinModel::new(&system).unwrap();
        let h = model.hamiltonian([0.0, 0.0, bz]);
        let fz = model.ops().total(Axis::Z);
        prop_assert!(max_abs(&commutator(&h, &fz)) <= 1e-9 * max_abs(&h).max(1.0));
    }

    #[test]
    fn controllability_ignores_spin_order(system in system_strategy(4), seed in any::<u64>()) {
        let n = system.len();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut s = seed;
        for k in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(k, (s >> 33) as usize % (k + 1));
        }
        let a = controllability(&system, 1e-9).unwrap();
        let b = controllability(&system.permuted(&perm).unwrap(), 1e-9).unwrap();
        prop_assert_eq!(a.is_controllable(), b.is_controllable());
        prop_assert_eq!(a.connected, b.connected);
    }

    #[test]
    fn sudden_state_is_a_density_matrix(system in system_strategy(4), bp in 0.1f64..10.0, t in 1.0f64..400.0) {
        let rho = sudden_state(&system, &ThermalConfig::new(bp, t).unwrap()).unwrap();
        let m = rho.matrix();
        let tr: Complex64 = m.trace();
        prop_assert!((tr.re - 1.0).abs() < 1e-12 && tr.im.abs() < 1e-12);
        prop_assert!(hermiticity_deviation(m) < 1e-14);
        prop_assert!(rho.eigenvalues().iter().all(|&v| v > -1e-12));
    }

    #[test]
    fn program_propagators_compose(
        system in system_strategy(3),
        f1 in prop::array::uniform3(-1e-4f64..1e-4),
        f2 in prop::array::uniform3(-1e-4f64..1e-4),
        d1 in 0.0f64..2e-3,
        d2 in 0.0f64..2e-3,
        bias in field_strategy(),
    ) {
        let model = SpinModel::new(&system).unwrap();
        let opts = ApplyOptions::default();
        let p1 = PulseProgram::new(vec![Segment::Constant { field: f1, duration: d1 }]).unwrap();
        let p2 = PulseProgram::new(vec![Segment::Constant { field: f2, duration: d2 }, Segment::Delay { duration: d1 }]).unwrap();
        let u1 = program_propagator(&model, &p1, bias, &opts).unwrap();
        let u2 = program_propagator(&model, &p2, bias, &opts).unwrap();
        let u12 = program_propagator(&model, &p1.clone().then(&p2), bias, &opts).unwrap();
        prop_assert!(unitarity_deviation(&u12) < 1e-10);
        prop_assert!(max_abs(&(&u12 - &u2 * &u1)) < 1e-10);
    }

    #[test]
    fn energy_offset_does_not_change_evolution(system in system_strategy(3), shift in -1e4f64..1e4, t in 0.0f64..0.05) {
        let model = SpinModel::new(&system).unwrap();
        let rho = sudden_state(&system, &ThermalConfig::default()).unwrap();
        let h = model.hamiltonian([0.0, 0.0, 0.0]);
        let shifted = &h + identity(h.nrows()) * Complex64::new(shift, 0.0);
        let a = evolve(&rho, &h, t).unwrap();
        let b = evolve(&rho, &shifted, t).unwrap();
        prop_assert!(max_abs(&(a.matrix() - b.matrix())) < 1e-10);
    }

    #[test]
    fn xan_zero_field_lines_match_numerics(n in 1usize..=3, j in 20.0f64..300.0, sign in prop::bool::ANY) {
        let j = if sign { j } else { -j };
        let (gx, ga) = (constants::species_gamma("13C").unwrap(), constants::species_gamma("1H").unwrap());
        let system = SpinSystem::xan(n, j, gx, ga).unwrap();
        let model = SpinModel::new(&system).unwrap();
        let rho = sudden_state(&system, &ThermalConfig::default()).unwrap();
        let sticks = stick_spectrum(&rho, &model, [0.0; 3], Axis::Z).unwrap();
        let biggest = sticks.lines.iter().fold(0.0f64, |m, l| m.max(l.amplitude.norm()));
        let mut numeric: Vec<f64> = sticks.lines.iter()
            .filter(|l| l.amplitude.norm() > 1e-6 * biggest && l.freq > 1e-6)
            .map(|l| l.freq)
            .collect();
        numeric.sort_by(f64::total_cmp);
        let mut analytic: Vec<f64> = zero_field_lines(&XAnSpec::new(n, j, ga, gx).unwrap()).unwrap()
            .iter().map(|l| l.freq).collect();
        analytic.sort_by(f64::total_cmp);
        analytic.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
        prop_assert_eq!(numeric.len(), analytic.len(), "{:?} vs {:?}", numeric, analytic);
        for (a, b) in numeric.iter().zip(&analytic) {
            prop_assert!((a - b).abs() < 1e-6 * j.abs());
        }
    }

    #[test]
    fn clebsch_gordan_rows_are_orthonormal(tj1 in 1u32..=6, tj2 in 1u32..=6, seed in any::<u32>()) {
        let (j1, j2) = (tj1 as f64 / 2.0, tj2 as f64 / 2.0);
        let jmin = (j1 - j2).abs();
        let jmax = j1 + j2;
        let count = (jmax - jmin).round() as u32 + 1;
        let ja = jmin + (seed % count) as f64;
        let jb = jmin + ((seed / 7) % count) as f64;
        let m = ja.min(jb) - ((seed / 49) % (2 * ja.min(jb) as u32 + 1)) as f64;
        let mut sum = 0.0;
        let mut m1 = -j1;
        while m1 <= j1 + 1e-9 {
            let m2 = m - m1;
            if m2.abs() <= j2 + 1e-9 {
                sum += clebsch_gordan(j1, j2, m1, m2, ja, m).unwrap() * clebsch_gordan(j1, j2, m1, m2, jb, m).unwrap();
            }
            m1 += 1.0;
        }
        let expected = if ja == jb { 1.0 } else { 0.0 };
        prop_assert!((sum - expected).abs() < 1e-10, "j1 {} j2 {} J {} J' {} M {}: {}", j1, j2, ja, jb, m, sum);
    }

    #[test]
    fn steady_polarization_is_bounded(b in prop::array::uniform3(-1e-6f64..1e-6), r_op in 10.0f64..1e4, r_rel in 1.0f64..1e3) {
        let p = MagnetometerParams { r_op, r_rel, ..Default::default() };
        let s = steady_polarization(b, &p);
        let norm = (s[0] * s[0] + s[1] * s[1] + s[2] * s[2]).sqrt();
        prop_assert!(norm <= p.p0() * (1.0 + 1e-12));
    }

    #[test]
    fn small_field_response_is_linear(dir in prop::array::uniform3(-1.0f64..1.0), scale in 1e-15f64..1e-13) {
        let p = MagnetometerParams::default();
        let b = dir.map(|x| x * scale);
        let s1 = steady_polarization(b, &p);
        let s2 = steady_polarization(b.map(|x| 2.0 * x), &p);
        let s0 = steady_polarization([0.0; 3], &p);
        let beta = p.beta(b);
        let tol = 1e-4 * p.p0() * (beta[0].abs() + beta[1].abs() + beta[2].abs());
        for k in [0, 2] {
            let d1 = s1[k] - s0[k];
            let d2 = s2[k] - s0[k];
            prop_assert!((d2 - 2.0 * d1).abs() <= tol);
        }
    }

    #[test]
    fn interference_amplitude_lies_between_extremes(sx in 0.0f64..10.0, sy in 0.0f64..10.0, phi in -10.0f64..10.0) {
        let a = interference_amplitude(sx, sy, phi).unwrap();
        prop_assert!(a <= sx + sy + 1e-9);
        prop_assert!(a >= (sx - sy).abs() - 1e-9);
    }

    #[test]
    fn gate_fidelity_ignores_basis_change(
        system in system_strategy(3),
        angle in 0.0f64..6.0,
        axis in prop::array::uniform3(-1.0f64..1.0),
        hseed in prop::collection::vec(-1.0f64..1.0, 8..16),
        t in 0.0f64..1e-3,
    ) {
        let norm = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        prop_assume!(norm > 1e-3);
        let model = SpinModel::new(&system).unwrap();
        let gate = GateSpec::rotation(vec![0], axis.map(|x| x / norm), angle).unwrap();
        let ideal = gate.ideal_unitary(&model).unwrap();
        prop_assert!(unitarity_deviation(&ideal) < 1e-12);
        let u = propagator(&model.hamiltonian([1e-5, 0.0, 2e-5]), t);
        let v = propagator(&random_hermitian(model.dim(), &hseed), 1.0);
        let f = gate_fidelity(&u, &ideal).unwrap();
        let g = gate_fidelity(&(&v * &u * v.adjoint()), &(&v * &ideal * v.adjoint())).unwrap();
        prop_assert!((f - g).abs() < 1e-10);
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&f));
    }
}
