use std::f64::consts::PI;

use qudit_core::linalg::{c, cis, CMatrix, CVector};
use qudit_core::model::presets;
use qudit_core::plant::Plant;
use qudit_core::propagator::{gate_tomography, PropagatorConfig};
use qudit_core::sequence::{build_two_qudit_sequence, GateConfig};

/// The controlled phase on `|1,1⟩`, simulated with both pairs, the coupler
/// and flux excursions in the lab frame.
#[test]
fn two_qudit_controlled_phase() {
    let tp = presets::two_qudit_reference(4);
    let s = build_two_qudit_sequence(&tp, 1, 1, PI, &GateConfig::default()).unwrap();
    let subspace: Vec<Vec<usize>> = [0, 1].iter().flat_map(|&a| [0, 1].map(move |b| vec![0, a, 0, b])).collect();
    let report = gate_tomography(&Plant::Pair(tp), &s, &subspace, &[], &PropagatorConfig::default()).unwrap();
    let target = CMatrix::from_diagonal(&CVector::from_fn(4, |i, _| if i == 3 { cis(-PI) } else { c(1.0, 0.0) }));
    let fidelity = report.fidelity_up_to_phases(&target);
    assert!(fidelity > 0.99, "{fidelity}");
    assert!(report.leakage.iter().all(|&l| l < 0.02), "{:?}", report.leakage);
}
