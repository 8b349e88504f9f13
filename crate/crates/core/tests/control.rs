use std::f64::consts::PI;

use zulf_core::control::*;
use zulf_core::dynamics::{program_propagator, ApplyOptions};
use zulf_core::linalg::{c, conjugate, identity, max_abs, unitarity_deviation};
use zulf_core::*;

fn ch(j: f64) -> SpinModel {
    SpinModel::new(&SpinSystem::from_species("CH", &[("C", "13C"), ("H", "1H")], &[(0, 1, j)]).unwrap()).unwrap()
}

fn hcn() -> SpinModel {
    SpinModel::new(
        &SpinSystem::from_species(
            "HCN",
            &[("H", "1H"), ("C", "13C"), ("N", "15N")],
            &[(0, 1, 140.0), (1, 2, -60.0)],
        )
        .unwrap(),
    )
    .unwrap()
}

#[test]
fn cnot_ideal_product_is_cnot_for_any_j() {
    for j in [50.0, 140.0, -90.0] {
        let m = ch(j);
        let opts = ControlOptions::for_system(m.system()).with_amplitude(1e-3);
        let s = cnot_sequence(&m, 0, 1, &opts).unwrap();
        let f = gate_fidelity(&s.ideal_unitary, &cnot_unitary(&m, 0, 1)).unwrap();
        assert!(f > 1.0 - 1e-10, "J = {j}: {f}");
        let sq = &s.ideal_unitary * &s.ideal_unitary;
        assert!(gate_fidelity(&sq, &identity(4)).unwrap() > 1.0 - 1e-10);
    }
}

#[test]
fn cnot_pulse_level_fidelity() {
    let m = ch(140.0);
    let opts = ControlOptions::for_system(m.system()).with_amplitude(1e-3);
    let s = cnot_sequence(&m, 0, 1, &opts).unwrap();
    assert!(s.report.full_model >= 0.98, "{:?}", s.report);
    assert!(s.report.pulse_model > s.report.full_model);
}

#[test]
fn zz_sandwich_inverts_transverse_coupling() {
    let m = ch(100.0);
    let ops = m.ops();
    let pz = rotation_unitary(&m, &[1], [0.0, 0.0, 1.0], PI).unwrap();
    let h0 = m.coupling();
    let flipped = conjugate(&pz, h0);
    let zz = ops.get(0, Axis::Z) * ops.get(1, Axis::Z) * c(2.0 * PI * 100.0);
    let transverse = h0 - &zz;
    assert!(max_abs(&(&flipped - (&zz - &transverse))) < 1e-12);
}

#[test]
fn u_zz_two_spin_is_exact_in_pulse_model() {
    let m = ch(140.0);
    let opts = ControlOptions::for_system(m.system()).with_amplitude(1e-2);
    for phi in [PI / 2.0, 1.0, 3.0 * PI / 2.0] {
        let s = u_zz(&m, 0, 1, phi, &opts).unwrap();
        assert!(s.report.pulse_model > 0.9999, "{phi}: {:?}", s.report);
    }
    let m0 = SpinModel::new(&SpinSystem::from_species("CH", &[("C", "13C"), ("H", "1H")], &[]).unwrap()).unwrap();
    assert!(matches!(u_zz(&m0, 0, 1, 1.0, &opts), Err(Error::NoCoupling(0, 1))));
}

#[test]
fn composite_half_pi_on_carbon() {
    let m = ch(140.0);
    let opts = ControlOptions::for_system(m.system()).with_amplitude(1e-2);
    let s = composite_single_qubit(&m, 0, [1.0, 0.0, 0.0], PI / 2.0, &opts).unwrap();
    assert!(s.report.full_model >= 0.99, "{:?}", s.report);
    assert!(unitarity_deviation(&s.ideal_unitary) < 1e-10);
    // four segments: half rotation, inverse spectator π, half rotation, spectator π
    assert_eq!(s.program.segments.len(), 4);
}

#[test]
fn composite_restores_spectator() {
    let m = ch(140.0);
    let opts = ControlOptions::for_system(m.system()).with_amplitude(1e-2);
    let s = composite_single_qubit(&m, 0, [1.0, 0.0, 0.0], PI / 2.0, &opts).unwrap();
    let u = program_propagator(&m, &s.program, [0.0; 3], &ApplyOptions::default()).unwrap();
    let half = identity(4) * c(0.25);
    for axis in Axis::ALL {
        for sign in [1.0, -1.0] {
            let rho = &half + m.ops().get(1, axis) * c(sign * 0.5) + m.ops().get(0, Axis::Z) * c(0.3);
            let state = DensityState::new(rho.clone()).unwrap();
            let after = DensityState::new(conjugate(&u, &rho)).unwrap();
            for eta in Axis::ALL {
                let op = m.ops().get(1, eta);
                let d = (after.expectation(op) - state.expectation(op)).abs();
                assert!(d < 0.01, "{axis:?}{sign} -> {eta:?}: {d}");
            }
        }
    }
}

#[test]
fn composite_fidelity_rises_with_amplitude() {
    let m = ch(140.0);
    let mut last = 0.0;
    for b in [1e-3, 3e-3, 1e-2, 3e-2] {
        let opts = ControlOptions::for_system(m.system()).with_amplitude(b);
        let f = composite_single_qubit(&m, 0, [1.0, 0.0, 0.0], PI / 2.0, &opts).unwrap().report.full_model;
        assert!(f > last, "B = {b}: {f} <= {last}");
        last = f;
    }
}

#[test]
fn simultaneous_pi_on_h_and_f() {
    let m = SpinModel::new(
        &SpinSystem::from_species("CHF", &[("C", "13C"), ("H", "1H"), ("F", "19F")], &[(0, 1, 140.0)]).unwrap(),
    )
    .unwrap();
    let opts = ControlOptions::for_system(m.system());
    let s = hard_pi_pulse(&m, &[1, 2], [1.0, 0.0, 0.0], &opts).unwrap();
    assert!((s.report.pulse_model - 0.9933).abs() < 2e-3, "{:?}", s.report);
    let again = hard_pi_pulse(&m, &[1, 2], [1.0, 0.0, 0.0], &opts).unwrap();
    assert_eq!(s.program, again.program);
}

#[test]
fn refocused_zz_in_three_spin_chain() {
    let m = hcn();
    let opts = ControlOptions::for_system(m.system()).with_amplitude(1.0);
    let s = refocus_uzz_multispin(&m, 0, 1, PI / 2.0, &opts, &RefocusOptions::default()).unwrap();
    assert!(s.report.full_model >= 0.99, "{:?}", s.report);
    let ideal = zz_unitary(&m, 0, 1, PI / 2.0);
    assert!(max_abs(&(&s.ideal_unitary - &ideal)) < 1e-14);
}

#[test]
fn refocusing_improves_with_depth() {
    let m = hcn();
    let opts = ControlOptions::for_system(m.system()).with_amplitude(1.0);
    let f: Vec<f64> = (0..4)
        .map(|depth| {
            let r = RefocusOptions { depth, threshold: 0.0 };
            refocus_uzz_multispin(&m, 0, 1, PI / 2.0, &opts, &r).unwrap().report.full_model
        })
        .collect();
    assert!(f.windows(2).all(|w| w[1] > w[0]), "{f:?}");
}

#[test]
fn refocusing_zero_phase_and_failure() {
    let m = hcn();
    let opts = ControlOptions::for_system(m.system()).with_amplitude(1.0);
    let s = refocus_uzz_multispin(&m, 0, 1, 0.0, &opts, &RefocusOptions::default()).unwrap();
    assert!(s.report.full_model > 0.99);
    let strict = RefocusOptions { depth: 0, threshold: 0.99999 };
    assert!(matches!(
        refocus_uzz_multispin(&m, 0, 1, PI / 2.0, &opts, &strict),
        Err(Error::RefocusFailed { .. })
    ));
    assert!(refocus_uzz_multispin(&ch(100.0), 0, 1, 1.0, &opts, &RefocusOptions::default()).is_err());
}
