use std::f64::consts::PI;

use proptest::prelude::*;
use qudit_core::model::presets;
use qudit_core::plant::Plant;
use qudit_core::propagator::{gate_tomography, PropagatorConfig};
use qudit_core::sequence::GateConfig;
use qudit_core::synth::{
    haar_unitary, lower_to_schedule, max_entry_error, phase_insensitive_overlap, qr_decompose, rotation_matrix,
    route_to_neighbors, unitary_from_json, unitary_to_json, GateList, RotationSpec,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn qr_and_routing_reconstruct(d in 2usize..=8, seed in any::<u64>()) {
        let u = haar_unitary(d, &mut ChaCha8Rng::seed_from_u64(seed));
        let qr = qr_decompose(&u, d).unwrap();
        let routed = route_to_neighbors(&qr);
        prop_assert!(max_entry_error(&qr.product().unwrap(), &u) < 1e-10);
        prop_assert!(max_entry_error(&routed.product().unwrap(), &u) < 1e-10);
        prop_assert!(qr.rotation_count() <= d * (d - 1) / 2);
        for g in &routed.gates {
            if let Some((j, k)) = g.levels() {
                prop_assert_eq!(k, j + 1);
            }
        }
    }

    #[test]
    fn unitary_json_round_trip(d in 2usize..=6, seed in any::<u64>()) {
        let u = haar_unitary(d, &mut ChaCha8Rng::seed_from_u64(seed));
        let back = unitary_from_json(&unitary_to_json(&u)).unwrap();
        prop_assert_eq!(max_entry_error(&back, &u), 0.0);
    }
}

#[test]
fn gate_list_serde_round_trip() {
    let u = haar_unitary(4, &mut ChaCha8Rng::seed_from_u64(9));
    let g = route_to_neighbors(&qr_decompose(&u, 4).unwrap());
    let text = serde_json::to_string(&g).unwrap();
    let back: GateList = serde_json::from_str(&text).unwrap();
    assert_eq!(back, g);
}

#[test]
fn rotations_are_unitary() {
    for spec in [
        RotationSpec::X { qudit: 0, j: 0, k: 3, theta: 1.1 },
        RotationSpec::Z { qudit: 0, j: 1, k: 2, theta: -0.4 },
        RotationSpec::Composite { qudit: 0, j: 2, k: 3, lambda: 0.8, phi: 2.0 },
        RotationSpec::Phases { qudit: 0, phases: vec![0.1, 0.2, 0.3, 0.4] },
    ] {
        let m = rotation_matrix(&spec, 4).unwrap().into_matrix();
        let defect = max_entry_error(&(m.adjoint() * &m), &qudit_core::linalg::CMatrix::identity(4, 4));
        assert!(defect < 1e-14, "{spec:?}");
    }
}

/// A lowered adjacent rotation, simulated in the lab frame, acts as the
/// requested rotation on the dressed Fock subspace.
#[test]
fn lowered_rotation_realizes_target() {
    let p = presets::gate_reference();
    let plant = Plant::Single(p);
    let spec = RotationSpec::Composite { qudit: 0, j: 0, k: 1, lambda: PI / 4.0, phi: 0.6 };
    let g = GateList { d: 2, gates: vec![spec.clone()] };
    let s = lower_to_schedule(&g, &plant, &GateConfig::default()).unwrap();
    let report = gate_tomography(&plant, &s, &[vec![0, 0], vec![0, 1]], &[], &PropagatorConfig::default()).unwrap();
    let target = rotation_matrix(&spec, 2).unwrap().into_matrix();
    assert!(report.fidelity_up_to_phases(&target) > 0.995, "{}", report.fidelity_up_to_phases(&target));
    assert!(
        phase_insensitive_overlap(&report.process, &target) > 0.99,
        "{}",
        phase_insensitive_overlap(&report.process, &target)
    );
}
