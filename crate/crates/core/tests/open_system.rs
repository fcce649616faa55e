use proptest::prelude::*;
use qudit_core::open_system::{
    controlled_phase_steps, dense_master_solve, fit_decay_law, ideal_evolution, population, pure_density,
    run_trajectories, single_qudit_swap_steps, swap_probability, total_duration, DecoherenceParams, InteractionModel,
    SweepPoint,
};
use qudit_core::units::us;

#[test]
fn closed_swap_is_complete() {
    for n in 0..4 {
        let p = swap_probability(&DecoherenceParams::NONE, n, 4, 1).unwrap();
        assert!((p.value - 1.0).abs() < 1e-9, "n = {n}: {}", p.value);
        assert_eq!(p.std_error, 0.0);
    }
}

#[test]
fn trajectories_without_decay_follow_ideal_evolution() {
    let m = InteractionModel::two(2);
    let steps = controlled_phase_steps(&m, 1).unwrap();
    let psi = m.basis_state(&[0, 0, 1, 1]).unwrap();
    let ideal = ideal_evolution(&m, &steps, &psi).unwrap();
    let run = run_trajectories(&m, &steps, &DecoherenceParams::NONE, &psi, &[("ideal".into(), ideal)], 3, 5).unwrap();
    assert!((run.estimators[0].mean - 1.0).abs() < 1e-12);
    assert_eq!(run.total_jumps(), 0);
}

#[test]
fn controlled_phase_flips_sign_of_target_only() {
    let m = InteractionModel::two(2);
    let steps = controlled_phase_steps(&m, 1).unwrap();
    let sign = |a: usize, b: usize| {
        let psi = m.basis_state(&[0, 0, a, b]).unwrap();
        let out = ideal_evolution(&m, &steps, &psi).unwrap();
        psi.inner(&out)
    };
    let (s00, s11) = (sign(0, 0), sign(1, 1));
    assert!((s00.norm() - 1.0).abs() < 1e-9 && (s11.norm() - 1.0).abs() < 1e-9);
    for (a, b) in [(0, 1), (1, 0)] {
        assert!((sign(a, b).norm() - 1.0).abs() < 1e-9);
    }
    // Conditional phase: s11·s00 / (s01·s10) = −1.
    let conditional = s11 * s00 / (sign(0, 1) * sign(1, 0));
    assert!((conditional + 1.0).norm() < 1e-6, "{conditional}");
}

#[test]
fn dense_and_trajectories_agree_on_two_qudit_gate() {
    let m = InteractionModel::two(2);
    let steps = controlled_phase_steps(&m, 1).unwrap();
    let d = DecoherenceParams::new(us(1.0), us(2.0));
    let psi = m.basis_state(&[0, 0, 1, 1]).unwrap();
    let ideal = ideal_evolution(&m, &steps, &psi).unwrap();
    let rho = dense_master_solve(&m, &steps, &d, &pure_density(&psi)).unwrap();
    let v = ideal.amplitudes();
    let exact = (v.adjoint() * &rho * v)[(0, 0)].re;
    let run = run_trajectories(&m, &steps, &d, &psi, &[("fidelity".into(), ideal.clone())], 2048, 3).unwrap();
    let e = &run.estimators[0];
    assert!((e.mean - exact).abs() <= 3.0 * e.std_error, "{} ± {} vs {exact}", e.mean, e.std_error);
}

#[test]
fn dense_solution_stays_physical() {
    let m = InteractionModel::single(5);
    let steps = single_qudit_swap_steps(&m, 2).unwrap();
    let psi = m.basis_state(&[0, 2]).unwrap();
    let rho = dense_master_solve(&m, &steps, &DecoherenceParams::new(us(0.5), us(1.0)), &pure_density(&psi)).unwrap();
    assert!((rho.trace().re - 1.0).abs() < 1e-9);
    assert!((&rho - rho.adjoint()).norm() < 1e-12);
    assert!((0..m.dim()).all(|k| population(&rho, k) > -1e-12));
    assert!(total_duration(&steps) > 0.0);
}

#[test]
fn same_seed_same_bytes() {
    let d = DecoherenceParams::new(us(1.0), us(5.0));
    let a = serde_json::to_string(&swap_probability(&d, 3, 64, 9).unwrap()).unwrap();
    let b = serde_json::to_string(&swap_probability(&d, 3, 64, 9).unwrap()).unwrap();
    let c = serde_json::to_string(&swap_probability(&d, 3, 64, 10).unwrap()).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Exact data from the decay law is fitted back exactly.
    #[test]
    fn decay_fit_recovers_parameters(amp in 0.8f64..1.0, alpha in 0.2f64..1.5, kappa in 0.5f64..2.5) {
        let mut points = Vec::new();
        for (tq, tr) in [(us(10.0), us(50.0)), (us(1.0), us(10.0))] {
            for n in 0..6 {
                let duration = us(0.2) + us(0.05) * n as f64;
                let value = amp * (-alpha * duration / tq - kappa * n as f64 * duration / tr).exp();
                points.push(SweepPoint { n, t_q: tq, t_r: tr, duration, value, std_error: 0.0 });
            }
        }
        let fit = fit_decay_law(&points, kappa, None).unwrap();
        prop_assert!((fit.alpha - alpha).abs() < 1e-9);
        prop_assert!((fit.amplitude - amp).abs() < 1e-9);
        prop_assert!(fit.max_residual < 1e-12);
    }
}
