//! Experiment runners and the pre-run validation report.

use std::f64::consts::PI;

use qudit_core::linalg::{c, cis, CMatrix, CVector, ZERO};
use qudit_core::open_system::{
    controlled_phase_fidelity, fit_decay_law, swap_probability, DecoherenceParams, SweepPoint,
};
use qudit_core::plant::Plant;
use qudit_core::propagator::{
    fit_fock_populations, gate_tomography, run_schedule, simulate_rabi_readout, PropagatorConfig,
};
use qudit_core::pulse::{calibrate_pi_pulse, Transition};
use qudit_core::sequence::{build_two_qudit_sequence, two_level_rotation, GateConfig, SequenceBuilder};
use qudit_core::spectrum::{
    find_anticrossings, stark_shift_numeric, sweep_spectrum, DressedBasis, SweepParameter, LABEL_THRESHOLD,
};
use qudit_core::synth::{
    haar_unitary, lower_to_schedule, max_entry_error, qr_decompose, route_to_neighbors, unitary_to_json,
};
use qudit_core::units::{to_ghz, to_mhz, to_ns, to_us};
use qudit_core::{model, Error, QuantumState, SystemParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::config::{Config, Pulses, Settings, Sweep, TrajectoryModel};
use crate::error::CliResult;
use crate::output::{num, opt, Artifacts, Csv};

/// Run an experiment, writing its artifacts; returns a JSON summary.
pub fn run(cfg: &Config, seed: u64, out: &mut Artifacts) -> CliResult<Value> {
    out.write_json("config.normalized.json", &cfg.echo())?;
    match &cfg.settings {
        Settings::Spectrum { sweep, levels } => spectrum(cfg.single()?, sweep, *levels, out),
        Settings::Stark { sweep, fock_max } => stark(cfg.single()?, sweep, *fock_max, out),
        Settings::Gate { .. } => gate(cfg, out),
        Settings::TwoQudit { j, k, theta, pulses, waveform_step } => {
            two_qudit(cfg, *j, *k, *theta, pulses, *waveform_step, out)
        }
        Settings::Trajectories { model, t_q, t_r, fock_max, trajectories } => {
            trajectories_sweep(*model, t_q, t_r, *fock_max, *trajectories, seed, out)
        }
        Settings::Synthesize { dimension, unitary, lower, pulses } => {
            synthesize(cfg, *dimension, unitary.as_deref(), *lower, pulses, seed, out)
        }
        Settings::Readout { populations, components, duration, samples } => {
            readout(cfg.single()?, populations.as_deref(), *components, *duration, *samples, seed, out)
        }
    }
}

fn sweep_value(p: SweepParameter, x: f64) -> f64 {
    match p {
        SweepParameter::Omega01 | SweepParameter::OmegaR => to_ghz(x),
        SweepParameter::G => to_mhz(x),
    }
}

fn sweep_column(p: SweepParameter) -> String {
    match p {
        SweepParameter::Omega01 | SweepParameter::OmegaR => format!("{}_GHz", p.name()),
        SweepParameter::G => format!("{}_MHz", p.name()),
    }
}

fn spectrum(p: &SystemParams, sweep: &Sweep, levels: usize, out: &mut Artifacts) -> CliResult<Value> {
    let r = sweep_spectrum(p, sweep.parameter, &sweep.grid())?;
    let k = levels.min(r.energies[0].len());
    let mut header = vec![sweep_column(sweep.parameter)];
    header.extend((0..k).map(|i| format!("E_{i}_GHz")));
    header.extend((0..k).map(|i| format!("label_{i}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut csv = Csv::new(&header);
    for ((x, es), ls) in r.grid.iter().zip(&r.energies).zip(&r.labels) {
        let mut row = vec![num(sweep_value(sweep.parameter, *x))];
        row.extend(es[..k].iter().map(|e| num(to_ghz(*e))));
        row.extend(ls[..k].iter().map(|l| format!("{}:{}", l.0, l.1)));
        csv.row(&row);
    }
    out.write("spectrum.csv", &csv.into_string())?;
    // Only crossings between levels that appear among the reported ones.
    let shown: std::collections::BTreeSet<_> = r.labels.iter().flat_map(|ls| ls[..k].iter().copied()).collect();
    let crossings: Vec<Value> = find_anticrossings(&r)
        .iter()
        .filter(|a| shown.contains(&a.states.0) && shown.contains(&a.states.1))
        .map(|a| {
            json!({
                "parameter": sweep_value(sweep.parameter, a.parameter),
                "gap_MHz": to_mhz(a.gap),
                "states": [[a.states.0 .0, a.states.0 .1], [a.states.1 .0, a.states.1 .1]],
                "exact": a.exact,
            })
        })
        .collect();
    let summary = json!({ "points": r.grid.len(), "levels": k, "crossings": crossings.len() });
    out.write_json("anticrossings.json", &Value::Array(crossings))?;
    Ok(summary)
}

/// Perturbative shift, or `None` where the detuning guard rejects it.
fn perturbative_or_none(p: &SystemParams, n: usize) -> CliResult<Option<f64>> {
    match model::stark_shift_perturbative(p, n) {
        Ok(x) => Ok(Some(x)),
        Err(Error::ResonanceProximity { .. }) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

fn stark(p: &SystemParams, sweep: &Sweep, fock_max: usize, out: &mut Artifacts) -> CliResult<Value> {
    if fock_max + 1 >= p.resonator_levels {
        return Err(Error::GuardLevel { index: fock_max, levels: p.resonator_levels }.into());
    }
    let grid = sweep.grid();
    let rows: Vec<Vec<(Option<f64>, Option<f64>)>> = grid
        .par_iter()
        .map(|&x| {
            let q = sweep.parameter.apply(p, x);
            (0..=fock_max)
                .map(|n| Ok((perturbative_or_none(&q, n)?, stark_shift_numeric(&q, n, &[q.omega01])?[0])))
                .collect::<CliResult<Vec<_>>>()
        })
        .collect::<CliResult<_>>()?;
    let col = sweep_column(sweep.parameter);
    let mut csv = Csv::new(&[&col, "n", "perturbative_MHz", "numeric_MHz"]);
    let mut gaps = 0;
    for (x, row) in grid.iter().zip(&rows) {
        for (n, (pert, exact)) in row.iter().enumerate() {
            gaps += usize::from(exact.is_none());
            csv.row(&[
                num(sweep_value(sweep.parameter, *x)),
                n.to_string(),
                opt(pert.map(to_mhz)),
                opt(exact.map(to_mhz)),
            ]);
        }
    }
    out.write("stark.csv", &csv.into_string())?;
    Ok(json!({ "points": grid.len(), "fock_max": fock_max, "unlabeled_points": gaps }))
}

/// Dressed idle state `label` of `plant`, in the external basis.
fn dressed_state(plant: &Plant, label: &[usize]) -> CliResult<QuantumState> {
    let basis = plant.idle_basis();
    let k = basis.index_of(label)?;
    let v: CVector = basis.vectors.column(k).into_owned();
    Ok(QuantumState::new(plant.to_external(&v), plant.external_dims())?)
}

fn block(m: [[qudit_core::C64; 2]; 2]) -> CMatrix {
    CMatrix::from_fn(2, 2, |i, j| m[i][j])
}

fn gate(cfg: &Config, out: &mut Artifacts) -> CliResult<Value> {
    let Settings::Gate { j, span, theta, phi, initial_fock, probe_fock_max, pulses, sample_interval, waveform_step } =
        cfg.settings
    else {
        unreachable!("gate settings")
    };
    let p = cfg.single()?;
    let plant = Plant::Single(*p);
    let mut b = SequenceBuilder::new(plant, pulses.gate_config())?;
    b.rotation(0, j, j + span, theta / 2.0, phi)?;
    let s = b.finish();
    out.write("waveform.csv", &s.waveform_csv(waveform_step))?;
    out.write_json("schedule.json", &s.to_json())?;

    let top = probe_fock_max.min(p.resonator_levels - 1);
    let probes: Vec<Vec<usize>> = (0..=top).map(|n| vec![0, n]).collect();
    let prop = PropagatorConfig { sample_interval, ..PropagatorConfig::default() };
    let initial = dressed_state(&plant, &[0, initial_fock])?;
    let trace = run_schedule(&plant, &s, &initial, &probes, &prop)?;
    out.write("trace.csv", &trace.to_csv())?;

    let subspace = vec![vec![0, j], vec![0, j + span]];
    let spectators: Vec<Vec<usize>> = probes.iter().filter(|l| !subspace.contains(l)).cloned().collect();
    let report = gate_tomography(&plant, &s, &subspace, &spectators, &prop)?;
    let target = block(two_level_rotation(theta / 2.0, phi));
    let mut json = report.to_json();
    let summary = json!({
        "duration_ns": to_ns(s.total_duration()),
        "fidelity_up_to_phases": report.fidelity_up_to_phases(&target),
        "transfer": report.transfer,
        "min_spectator_survival": report.min_spectator_survival(),
    });
    json["duration_ns"] = summary["duration_ns"].clone();
    json["fidelity_up_to_phases"] = summary["fidelity_up_to_phases"].clone();
    out.write_json("gate_report.json", &json)?;
    Ok(summary)
}

fn two_qudit(
    cfg: &Config,
    j: usize,
    k: usize,
    theta: f64,
    pulses: &Pulses,
    waveform_step: f64,
    out: &mut Artifacts,
) -> CliResult<Value> {
    let tp = cfg.pair()?;
    let s = build_two_qudit_sequence(tp, j, k, theta, &pulses.gate_config())?;
    out.write("waveform.csv", &s.waveform_csv(waveform_step))?;
    out.write_json("schedule.json", &s.to_json())?;
    let other = |x: usize| if x == 0 { 1 } else { 0 };
    let (la, lb) = ([other(j), j], [other(k), k]);
    let subspace: Vec<Vec<usize>> = la.iter().flat_map(|&a| lb.iter().map(move |&b| vec![0, a, 0, b])).collect();
    let report = gate_tomography(&Plant::Pair(*tp), &s, &subspace, &[], &PropagatorConfig::default())?;
    let target = CMatrix::from_diagonal(&CVector::from_fn(4, |i, _| if i == 3 { cis(-theta) } else { c(1.0, 0.0) }));
    let fidelity = report.fidelity_up_to_phases(&target);
    let mut json = report.to_json();
    json["duration_ns"] = json!(to_ns(s.total_duration()));
    json["fidelity_up_to_phases"] = json!(fidelity);
    out.write_json("gate_report.json", &json)?;
    Ok(json!({
        "duration_ns": to_ns(s.total_duration()),
        "fidelity_up_to_phases": fidelity,
        "leakage": report.leakage,
    }))
}

fn trajectories_sweep(
    model: TrajectoryModel,
    t_q: &[f64],
    t_r: &[f64],
    fock_max: usize,
    n_traj: usize,
    seed: u64,
    out: &mut Artifacts,
) -> CliResult<Value> {
    let mut points: Vec<SweepPoint> = Vec::new();
    for (&tq, &tr) in t_q.iter().zip(t_r) {
        let d = DecoherenceParams::new(tq, tr);
        for n in 0..=fock_max {
            points.push(match model {
                TrajectoryModel::Swap => swap_probability(&d, n, n_traj, seed)?,
                TrajectoryModel::Phase => controlled_phase_fidelity(&d, n, n_traj, seed)?,
            });
        }
    }
    let mut csv = Csv::new(&["t_q_us", "t_r_us", "n", "duration_ns", "value", "std_error"]);
    for p in &points {
        csv.row(&[
            num(to_us(p.t_q)),
            num(to_us(p.t_r)),
            p.n.to_string(),
            num(to_ns(p.duration)),
            num(p.value),
            num(p.std_error),
        ]);
    }
    out.write("estimators.csv", &csv.into_string())?;
    let kappa = match model {
        TrajectoryModel::Swap => 1.0,
        TrajectoryModel::Phase => 2.0,
    };
    let free = fit_decay_law(&points, kappa, None)?;
    let mut fits = json!({ "free_alpha": free });
    if model == TrajectoryModel::Phase {
        fits["unit_alpha"] = json!(fit_decay_law(&points, kappa, Some(1.0))?);
    }
    let summary = json!({
        "model": model.name(),
        "trajectories": n_traj,
        "seed": seed,
        "points": points,
        "fits": fits,
    });
    out.write_json("estimators.json", &summary)?;
    Ok(json!({ "points": points.len(), "fits": summary["fits"] }))
}

fn synthesize(
    cfg: &Config,
    d: usize,
    unitary: Option<&[Vec<[f64; 2]>]>,
    lower: bool,
    pulses: &Pulses,
    seed: u64,
    out: &mut Artifacts,
) -> CliResult<Value> {
    let u = match unitary {
        Some(rows) => CMatrix::from_fn(d, d, |i, j| c(rows[i][j][0], rows[i][j][1])),
        None => haar_unitary(d, &mut ChaCha8Rng::seed_from_u64(seed)),
    };
    let qr = qr_decompose(&u, d)?;
    let routed = route_to_neighbors(&qr);
    let qr_error = max_entry_error(&qr.product()?, &u);
    let routed_error = max_entry_error(&routed.product()?, &u);
    let mut summary = json!({
        "dimension": d,
        "qr_rotations": qr.rotation_count(),
        "routed_rotations": routed.rotation_count(),
        "reconstruction_error": qr_error,
        "routed_error": routed_error,
    });
    out.write_json(
        "gates.json",
        &json!({ "unitary": unitary_to_json(&u), "qr": qr.to_json(), "routed": routed.to_json(), "summary": summary }),
    )?;
    if lower {
        let s = lower_to_schedule(&routed, &Plant::Single(*cfg.single()?), &pulses.gate_config())?;
        out.write_json("schedule.json", &s.to_json())?;
        summary["schedule_steps"] = json!(s.steps.len());
        summary["duration_ns"] = json!(to_ns(s.total_duration()));
    }
    Ok(summary)
}

fn readout(
    p: &SystemParams,
    populations: Option<&[f64]>,
    components: usize,
    duration: f64,
    samples: usize,
    seed: u64,
    out: &mut Artifacts,
) -> CliResult<Value> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pops: Vec<f64> = match populations {
        Some(x) => x.to_vec(),
        None => {
            let raw: Vec<f64> = (0..components).map(|_| rng.random_range(0.05..1.0)).collect();
            let total: f64 = raw.iter().sum();
            raw.iter().map(|x| x / total).collect()
        }
    };
    let mut amps = CVector::from_element(p.resonator_levels, ZERO);
    for (n, x) in pops.iter().enumerate() {
        amps[n] = cis(rng.random_range(0.0..2.0 * PI)) * x.sqrt();
    }
    let psi = QuantumState::new(amps, vec![p.resonator_levels])?.normalized()?;
    let trace = simulate_rabi_readout(p, &psi, duration, samples)?;
    let fit = fit_fock_populations(&trace, components)?;
    let mut csv = Csv::new(&["time_ns", "p_excited"]);
    for (t, x) in trace.times.iter().zip(&trace.p_excited) {
        csv.row(&[num(to_ns(*t)), num(*x)]);
    }
    out.write("readout.csv", &csv.into_string())?;
    let max_error = pops.iter().zip(&fit.populations).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let summary = json!({
        "true_populations": pops,
        "fitted_populations": fit.populations,
        "max_abs_error": max_error,
        "rms_residual": fit.residual,
        "warnings": fit.warnings,
    });
    out.write_json("readout_fit.json", &summary)?;
    Ok(summary)
}

/// One problem found before a run.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct Flag {
    pub check: &'static str,
    pub message: String,
}

/// Number-selective 0↔1 lines of `p` up to Fock level `top`: each must be
/// identifiable and resolvable by a π-pulse at Rabi rate `omega1`.
fn selectivity_flags(p: &SystemParams, omega1: f64, top: usize, who: &str, flags: &mut Vec<Flag>) {
    let basis = DressedBasis::new(p);
    let clean = |label: (usize, usize)| {
        let k = basis.find(label)?;
        let unique = basis.labels.iter().filter(|(l, _)| *l == label).count() == 1;
        (unique && basis.labels[k].1 > LABEL_THRESHOLD).then(|| basis.energies[k])
    };
    let line = |n: usize| Some(clean((1, n))? - clean((0, n))?);
    let top = top.min(p.resonator_levels.saturating_sub(2));
    // Within the guard the 0↔1 lines are resonator-atom polaritons, not
    // number-split atom lines, whatever their spacing.
    if (p.omega01 - p.omega_r).abs() <= 3.0 * p.g {
        flags.push(Flag {
            check: "selectivity",
            message: format!(
                "{who}: the atom 0↔1 transition is within 3g of the resonator; number-selective pulses are undefined"
            ),
        });
        return;
    }
    for n in 0..=top {
        let Some(w) = line(n) else {
            flags.push(Flag {
                check: "selectivity",
                message: format!(
                    "{who}: the 0↔1 line for n = {n} is not resolved; the atom is hybridized with the resonator"
                ),
            });
            continue;
        };
        let split = [n.checked_sub(1), Some(n + 1)]
            .into_iter()
            .flatten()
            .filter(|&m| m <= top)
            .filter_map(|m| line(m).map(|x| (x - w).abs()))
            .reduce(f64::min);
        let d = GateConfig::default();
        if let Err(Error::Selectivity { bandwidth, splitting }) =
            calibrate_pi_pulse(Transition::T01, omega1, split, d.shape, d.calibration)
        {
            flags.push(Flag {
                check: "selectivity",
                message: format!(
                    "{who}: n = {n} line is {:.3} MHz from its neighbour, pulse bandwidth {:.3} MHz",
                    to_mhz(splitting),
                    to_mhz(bandwidth)
                ),
            });
        }
    }
}

fn dispersive_flags(p: &SystemParams, who: &str, flags: &mut Vec<Flag>) {
    if let Err(e) = p.dispersive_guard() {
        flags.push(Flag { check: "dispersive_guard", message: format!("{who}: {e}") });
    }
}

/// Checks that need the dressed spectrum but no time evolution. Sweeps
/// cross resonances on purpose and are not checked.
pub fn preflight(cfg: &Config) -> Vec<Flag> {
    let mut flags = Vec::new();
    match &cfg.settings {
        Settings::Gate { j, span, pulses, .. } => {
            if let Ok(p) = cfg.single() {
                dispersive_flags(p, "pair", &mut flags);
                selectivity_flags(p, pulses.omega1, j + span, "pair", &mut flags);
            }
        }
        Settings::Synthesize { dimension, lower: true, pulses, .. } => {
            if let Ok(p) = cfg.single() {
                dispersive_flags(p, "pair", &mut flags);
                selectivity_flags(p, pulses.omega1, dimension - 1, "pair", &mut flags);
            }
        }
        Settings::TwoQudit { j, k, pulses, .. } => {
            if let Ok(tp) = cfg.pair() {
                for (p, who, n) in [(&tp.a, "pair A", *j), (&tp.b, "pair B", *k)] {
                    dispersive_flags(p, who, &mut flags);
                    selectivity_flags(p, pulses.omega1, n + 1, who, &mut flags);
                }
            }
        }
        _ => {}
    }
    flags
}

/// Parameter echo with derived quantities and preflight flags.
pub fn validation_report(cfg: &Config) -> Value {
    let flags = preflight(cfg);
    let mut derived = serde_json::Map::new();
    let mut describe = |prefix: &str, p: &SystemParams| {
        derived.insert(format!("{prefix}omega01_GHz"), json!(to_ghz(p.omega01)));
        derived.insert(format!("{prefix}omega12_GHz"), json!(to_ghz(p.omega12)));
        derived.insert(format!("{prefix}omega_r_GHz"), json!(to_ghz(p.omega_r)));
        derived.insert(format!("{prefix}g_MHz"), json!(to_mhz(p.g)));
        derived.insert(format!("{prefix}lambda"), json!(p.lambda));
    };
    match &cfg.system {
        crate::config::System::Single(p) => describe("", p),
        crate::config::System::Pair(tp) => {
            describe("", &tp.a);
            describe("b_", &tp.b);
        }
        crate::config::System::None => {}
    }
    json!({
        "experiment": cfg.kind.name(),
        "valid": flags.is_empty(),
        "normalized": cfg.echo(),
        "derived": derived,
        "flags": flags,
    })
}
