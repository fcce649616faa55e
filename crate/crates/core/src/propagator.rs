//! Time-domain execution of schedules.
//!
//! States are carried as idle interaction-frame dressed coefficients
//! `c = e^{iEt} V† ψ`, which are constant while every control is at rest.
//! Microwave intervals are integrated with RK4 on `c` using the literal
//! `cos(ω_d t + φ)` drive (lab frame, all terms) or, optionally, only the
//! terms slower than a cutoff (rotating frame). Flux and coupler intervals
//! use exact piecewise-constant propagators.

use std::collections::HashMap;
use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cis, eigh_matrix, CMatrix, CVector, Eigh, QuantumState, C64, ONE, ZERO};
use crate::model::SystemParams;
use crate::plant::{pair_flux_propagator, to_interaction_frame, Plant, PlantBasis};
use crate::pulse::{Schedule, SegmentKind};
use crate::units::ns;

/// Which drive terms the integrator keeps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "frame", rename_all = "snake_case")]
pub enum DriveFrame {
    /// Every term of the `cos` drive, including counter-rotating ones.
    Lab,
    /// Only terms oscillating slower than `cutoff` (rad/s).
    Rotating { cutoff: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PropagatorConfig {
    /// Trace sampling interval (s).
    pub sample_interval: f64,
    /// RK4 steps per period of the fastest kept term.
    pub steps_per_period: f64,
    /// Upper bound on the RK4 step (s).
    pub max_step: f64,
    pub frame: DriveFrame,
    /// Dressed drive elements below this fraction of the largest are dropped.
    pub prune: f64,
    /// Longest piecewise-constant step across a flux ramp (s).
    pub flux_substep: f64,
    /// Largest tolerated norm drift.
    pub norm_tolerance: f64,
}

impl Default for PropagatorConfig {
    fn default() -> Self {
        Self {
            sample_interval: ns(0.5),
            steps_per_period: 40.0,
            max_step: ns(0.01),
            frame: DriveFrame::Lab,
            prune: 1e-8,
            flux_substep: ns(0.005),
            norm_tolerance: 1e-6,
        }
    }
}

/// Sampled dressed-state probabilities of one run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationTrace {
    /// Sample times (s).
    pub times: Vec<f64>,
    /// Labels of the probed dressed states.
    pub labels: Vec<Vec<usize>>,
    /// `probabilities[t][k] = |⟨Ψ_k|ψ(t)⟩|²`.
    pub probabilities: Vec<Vec<f64>>,
    /// Lab-frame state at the end of the schedule (external ordering).
    #[serde(skip)]
    pub final_state: Option<QuantumState>,
}

impl SimulationTrace {
    /// Probability of state `label` at the last sample.
    pub fn final_probability(&self, label: &[usize]) -> Option<f64> {
        let k = self.labels.iter().position(|l| l.as_slice() == label)?;
        self.probabilities.last().map(|p| p[k])
    }

    /// CSV with a `time_ns` column and one column per probed state.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time_ns");
        for l in &self.labels {
            let name: Vec<String> = l.iter().map(|x| x.to_string()).collect();
            out.push_str(&format!(",p_{}", name.join("_")));
        }
        out.push('\n');
        for (t, row) in self.times.iter().zip(&self.probabilities) {
            out.push_str(&format!("{:?}", crate::units::to_ns(*t)));
            for p in row {
                out.push_str(&format!(",{p:?}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Drive terms sharing one phasor: `coeff·e^{i·freq·t}` from `src` to `dst`.
struct TermGroup {
    segment: usize,
    coeff: C64,
    freq: f64,
    links: Vec<(usize, usize)>,
}

/// Executes one schedule on one plant.
pub struct Evolver<'a> {
    plant: Plant,
    schedule: &'a Schedule,
    basis: PlantBasis,
    cfg: PropagatorConfig,
    pairs: Vec<SystemParams>,
    /// Dressed `σ₊ + σ₋` per pair.
    drives: Vec<CMatrix>,
}

fn column_norms(c: &[C64], dim: usize) -> Vec<f64> {
    c.chunks(dim).map(|col| col.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()).collect()
}

impl<'a> Evolver<'a> {
    pub fn new(plant: &Plant, schedule: &'a Schedule, cfg: PropagatorConfig) -> Result<Self> {
        plant.validate()?;
        schedule.validate()?;
        let pairs = plant.pairs();
        if schedule.idle_omega01.len() != pairs.len() {
            return Err(Error::Validation(format!(
                "schedule drives {} qudits, plant has {}",
                schedule.idle_omega01.len(),
                pairs.len()
            )));
        }
        for (s, p) in schedule.idle_omega01.iter().zip(&pairs) {
            if (s - p.omega01).abs() > 1e-9 * p.omega01 {
                return Err(Error::Validation("schedule idle frequency differs from the plant".into()));
            }
        }
        let basis = plant.idle_basis();
        let drives = pairs
            .iter()
            .zip(&basis.pairs)
            .map(|(p, b)| {
                let sm = crate::model::sigma_minus(p).into_matrix();
                let x = crate::linalg::ops::kron_raw(&[
                    &(&sm + sm.adjoint()),
                    &crate::linalg::ops::identity(p.resonator_levels),
                ]);
                b.vectors.adjoint() * x * &b.vectors
            })
            .collect();
        Ok(Self { plant: *plant, schedule, basis, cfg, pairs, drives })
    }

    pub fn basis(&self) -> &PlantBasis {
        &self.basis
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    /// Interaction-frame coefficients of a lab-frame state at `t = 0`.
    pub fn coefficients(&self, initial: &QuantumState) -> Result<CVector> {
        if initial.dim() != self.dim() {
            return Err(Error::Validation(format!(
                "initial state has dimension {}, plant {}",
                initial.dim(),
                self.dim()
            )));
        }
        if (initial.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::Validation("initial state is not normalized".into()));
        }
        let internal = self.plant.to_internal(initial.amplitudes());
        Ok(self.basis.vectors.adjoint() * internal)
    }

    /// Lab-frame state from interaction-frame coefficients at time `t`.
    pub fn lab_state(&self, c: &CVector, t: f64) -> Result<QuantumState> {
        let phased = CVector::from_fn(c.len(), |k, _| c[k] * cis(-self.basis.energies[k] * t));
        let internal = &self.basis.vectors * phased;
        QuantumState::new(self.plant.to_external(&internal), self.plant.external_dims())
    }

    fn frame_phases(&self, q: usize, label: &[usize]) -> Vec<usize> {
        self.basis
            .labels
            .iter()
            .enumerate()
            .filter(|(_, l)| l.len() >= 2 * q + 2 && l[2 * q..2 * q + 2] == *label)
            .map(|(k, _)| k)
            .collect()
    }

    fn drive_groups(&self, seg_index: usize) -> Vec<TermGroup> {
        let seg = &self.schedule.segments[seg_index];
        let SegmentKind::Microwave(m) = &seg.kind else { return Vec::new() };
        let q = seg.qudit;
        let mq = &self.drives[q];
        let e = &self.basis.pairs[q].energies;
        let max = mq.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let dims = self.plant.pair_dims();
        let (outer, inner): (usize, usize) = (dims[..q].iter().product(), dims[q + 1..].iter().product());
        let dq = dims[q];
        let scale = 0.5 / m.matrix_element;
        let mut groups = Vec::new();
        for b in 0..dq {
            for a in 0..dq {
                let el = mq[(b, a)];
                if el.norm() <= self.cfg.prune * max {
                    continue;
                }
                let links: Vec<(usize, usize)> = (0..outer)
                    .flat_map(|o| (0..inner).map(move |i| ((o * dq + a) * inner + i, (o * dq + b) * inner + i)))
                    .collect();
                for sign in [1.0, -1.0] {
                    let freq = e[b] - e[a] + sign * m.carrier;
                    if let DriveFrame::Rotating { cutoff } = self.cfg.frame {
                        if freq.abs() > cutoff {
                            continue;
                        }
                    }
                    groups.push(TermGroup {
                        segment: seg_index,
                        coeff: el * cis(sign * m.phase) * scale,
                        freq,
                        links: links.clone(),
                    });
                }
            }
        }
        groups
    }

    /// Evolve a batch of coefficient columns over the whole schedule.
    ///
    /// `observe(t, c)` is called at every sample time with the current batch.
    pub fn evolve(&self, columns: &mut [CVector], mut observe: impl FnMut(f64, &[C64])) -> Result<()> {
        let dim = self.dim();
        let m = columns.len();
        let mut c: Vec<C64> = Vec::with_capacity(dim * m);
        for col in columns.iter() {
            c.extend(col.iter().copied());
        }
        let norms0 = column_norms(&c, dim);
        let total = self.schedule.total_duration();

        let mut times = self.schedule.breakpoints();
        let nsamp = (total / self.cfg.sample_interval).floor() as usize;
        let samples: Vec<f64> = (0..=nsamp).map(|k| k as f64 * self.cfg.sample_interval).collect();
        times.extend(samples.iter().copied());
        times.push(total);
        times.sort_by(f64::total_cmp);
        times.dedup_by(|a, b| (*a - *b).abs() < 1e-15);

        let mut frames: Vec<(f64, Vec<(usize, C64)>)> = self
            .schedule
            .frames
            .iter()
            .map(|f| {
                let mut ph = Vec::new();
                for (label, phase) in &f.phases {
                    for k in self.frame_phases(f.qudit, label) {
                        ph.push((k, cis(*phase)));
                    }
                }
                (f.time, ph)
            })
            .collect();
        frames.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut next_frame = 0;
        let mut next_sample = 0;
        let mut groups_cache: HashMap<usize, Vec<TermGroup>> = HashMap::new();
        let mut coupler_cache: HashMap<Vec<u64>, Eigh> = HashMap::new();

        for (i, &t) in times.iter().enumerate() {
            while next_frame < frames.len() && frames[next_frame].0 <= t + 1e-15 {
                for &(k, z) in &frames[next_frame].1 {
                    for col in 0..m {
                        c[col * dim + k] *= z;
                    }
                }
                next_frame += 1;
            }
            while next_sample < samples.len() && samples[next_sample] <= t + 1e-15 {
                observe(samples[next_sample], &c);
                next_sample += 1;
            }
            let Some(&t2) = times.get(i + 1) else { break };
            if t2 - t <= 0.0 {
                continue;
            }
            self.step_interval(t, t2, &mut c, dim, &mut groups_cache, &mut coupler_cache)?;
            let norms = column_norms(&c, dim);
            let drift = norms.iter().zip(&norms0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if drift > self.cfg.norm_tolerance {
                return Err(Error::Instability { drift });
            }
        }
        for (k, col) in columns.iter_mut().enumerate() {
            col.copy_from_slice(&c[k * dim..(k + 1) * dim]);
        }
        Ok(())
    }

    fn step_interval(
        &self,
        t1: f64,
        t2: f64,
        c: &mut [C64],
        dim: usize,
        groups_cache: &mut HashMap<usize, Vec<TermGroup>>,
        coupler_cache: &mut HashMap<Vec<u64>, Eigh>,
    ) -> Result<()> {
        let mid = 0.5 * (t1 + t2);
        let active: Vec<usize> = (0..self.schedule.segments.len())
            .filter(|&k| {
                let s = &self.schedule.segments[k];
                s.start <= mid && mid < s.end()
            })
            .collect();
        let microwaves: Vec<usize> = active
            .iter()
            .copied()
            .filter(|&k| matches!(self.schedule.segments[k].kind, SegmentKind::Microwave(_)))
            .collect();
        let coupler = active.iter().any(|&k| matches!(self.schedule.segments[k].kind, SegmentKind::Coupler));
        let flux: Vec<(f64, bool)> = (0..self.pairs.len()).map(|q| self.schedule.flux_at(q, mid)).collect();
        let idle: Vec<bool> =
            flux.iter().zip(&self.pairs).map(|((w, r), p)| !r && (w - p.omega01).abs() <= 1e-12 * p.omega01).collect();

        if !microwaves.is_empty() {
            if coupler || idle.iter().any(|x| !x) {
                return Err(Error::Unsupported("microwave drive while flux or coupler is active".into()));
            }
            for &k in &microwaves {
                groups_cache.entry(k).or_insert_with(|| self.drive_groups(k));
            }
            let groups: Vec<&TermGroup> = microwaves.iter().flat_map(|k| groups_cache[k].iter()).collect();
            self.rk4(t1, t2, c, dim, &groups);
            return Ok(());
        }
        if coupler && self.pairs.len() == 2 {
            if flux.iter().any(|(_, r)| *r) {
                return Err(Error::Unsupported("coupler on while a flux line ramps".into()));
            }
            let omegas: Vec<f64> = flux.iter().map(|(w, _)| *w).collect();
            let key: Vec<u64> = omegas.iter().map(|w| w.to_bits()).collect();
            let e = coupler_cache.entry(key).or_insert_with(|| eigh_matrix(&self.plant.hamiltonian(&omegas, true)));
            let u = e.propagator(t2 - t1);
            let w = to_interaction_frame(&u, &self.basis.vectors, &self.basis.energies, t1, t2);
            apply_matrix(&w, c, dim);
            return Ok(());
        }
        if idle.iter().all(|x| *x) {
            return Ok(());
        }
        let mut factors = Vec::with_capacity(self.pairs.len());
        for (q, p) in self.pairs.iter().enumerate() {
            if idle[q] {
                factors.push(None);
                continue;
            }
            let sched = self.schedule;
            let u = pair_flux_propagator(p, &|t| sched.flux_at(q, t).0, t1, t2, flux[q].1, self.cfg.flux_substep);
            let b = &self.basis.pairs[q];
            factors.push(Some(to_interaction_frame(&u, &b.vectors, &b.energies, t1, t2)));
        }
        let dims = self.plant.pair_dims();
        for (q, f) in factors.iter().enumerate() {
            if let Some(w) = f {
                let (outer, inner): (usize, usize) = (dims[..q].iter().product(), dims[q + 1..].iter().product());
                apply_factor(w, c, dim, outer, dims[q], inner);
            }
        }
        Ok(())
    }

    fn rk4(&self, t1: f64, t2: f64, c: &mut [C64], dim: usize, groups: &[&TermGroup]) {
        let fmax = groups.iter().map(|g| g.freq.abs()).fold(0.0, f64::max);
        let mut dt = self.cfg.max_step;
        if fmax > 0.0 {
            dt = dt.min(2.0 * PI / (self.cfg.steps_per_period * fmax));
        }
        let n = ((t2 - t1) / dt).ceil().max(1.0) as usize;
        let dt = (t2 - t1) / n as f64;
        let len = c.len();
        let m = len / dim;
        let segs = &self.schedule.segments;
        let env = |g: &TermGroup, t: f64| segs[g.segment].envelope(t);
        let half: Vec<C64> = groups.iter().map(|g| cis(g.freq * 0.5 * dt)).collect();
        let mut phasor: Vec<C64> = groups.iter().map(|g| cis(g.freq * t1)).collect();
        let mut k1 = vec![ZERO; len];
        let mut k2 = vec![ZERO; len];
        let mut k3 = vec![ZERO; len];
        let mut k4 = vec![ZERO; len];
        let mut tmp = vec![ZERO; len];
        let mut fac = vec![ZERO; groups.len()];
        let deriv = |fac: &[C64], x: &[C64], out: &mut [C64]| {
            out.iter_mut().for_each(|z| *z = ZERO);
            for (g, &f) in groups.iter().zip(fac) {
                if f == ZERO {
                    continue;
                }
                for &(src, dst) in &g.links {
                    for col in 0..m {
                        out[col * dim + dst] += f * x[col * dim + src];
                    }
                }
            }
        };
        let minus_i = C64::new(0.0, -1.0);
        for step in 0..n {
            let t = t1 + step as f64 * dt;
            if step % 256 == 0 {
                for (p, g) in phasor.iter_mut().zip(groups) {
                    *p = cis(g.freq * t);
                }
            }
            for (k, g) in groups.iter().enumerate() {
                fac[k] = minus_i * g.coeff * env(g, t) * phasor[k];
            }
            deriv(&fac, c, &mut k1);
            for k in 0..groups.len() {
                phasor[k] *= half[k];
                fac[k] = minus_i * groups[k].coeff * env(groups[k], t + 0.5 * dt) * phasor[k];
            }
            for j in 0..len {
                tmp[j] = c[j] + k1[j] * (0.5 * dt);
            }
            deriv(&fac, &tmp, &mut k2);
            for j in 0..len {
                tmp[j] = c[j] + k2[j] * (0.5 * dt);
            }
            deriv(&fac, &tmp, &mut k3);
            for k in 0..groups.len() {
                phasor[k] *= half[k];
                fac[k] = minus_i * groups[k].coeff * env(groups[k], t + dt) * phasor[k];
            }
            for j in 0..len {
                tmp[j] = c[j] + k3[j] * dt;
            }
            deriv(&fac, &tmp, &mut k4);
            for j in 0..len {
                c[j] += (k1[j] + (k2[j] + k3[j]) * 2.0 + k4[j]) * (dt / 6.0);
            }
        }
    }
}

/// `c ← W c` column by column.
fn apply_matrix(w: &CMatrix, c: &mut [C64], dim: usize) {
    for col in c.chunks_mut(dim) {
        let v = CVector::from_column_slice(col);
        let out = w * v;
        col.copy_from_slice(out.as_slice());
    }
}

/// `c ← (1_outer ⊗ W ⊗ 1_inner) c`.
fn apply_factor(w: &CMatrix, c: &mut [C64], dim: usize, outer: usize, dq: usize, inner: usize) {
    let mut buf = vec![ZERO; dq];
    for col in c.chunks_mut(dim) {
        for o in 0..outer {
            for i in 0..inner {
                for (a, z) in buf.iter_mut().enumerate() {
                    *z = (0..dq).map(|b| w[(a, b)] * col[(o * dq + b) * inner + i]).sum();
                }
                for (a, z) in buf.iter().enumerate() {
                    col[(o * dq + a) * inner + i] = *z;
                }
            }
        }
    }
}

/// Run `s` from `initial`, sampling probabilities of the idle dressed states
/// `probe` (all states when empty).
pub fn run_schedule(
    plant: &Plant,
    s: &Schedule,
    initial: &QuantumState,
    probe: &[Vec<usize>],
    cfg: &PropagatorConfig,
) -> Result<SimulationTrace> {
    let ev = Evolver::new(plant, s, *cfg)?;
    let idx: Vec<usize> = if probe.is_empty() {
        (0..ev.dim()).collect()
    } else {
        probe.iter().map(|l| ev.basis().index_of(l)).collect::<Result<_>>()?
    };
    let mut cols = vec![ev.coefficients(initial)?];
    let mut times = Vec::new();
    let mut probabilities = Vec::new();
    ev.evolve(&mut cols, |t, c| {
        times.push(t);
        probabilities.push(idx.iter().map(|&k| c[k].norm_sqr()).collect());
    })?;
    let total = s.total_duration();
    if times.last().is_none_or(|&t| (t - total).abs() > 1e-15) {
        times.push(total);
        probabilities.push(idx.iter().map(|&k| cols[0][k].norm_sqr()).collect());
    }
    let final_state = ev.lab_state(&cols[0], total)?;
    if (final_state.norm() - 1.0).abs() > 1e-8 {
        return Err(Error::Instability { drift: (final_state.norm() - 1.0).abs() });
    }
    Ok(SimulationTrace {
        times,
        labels: idx.iter().map(|&k| ev.basis().labels[k].clone()).collect(),
        probabilities,
        final_state: Some(final_state),
    })
}

/// Final interaction-frame columns for a set of dressed input states,
/// split across the rayon pool.
pub fn propagate_columns(
    plant: &Plant,
    s: &Schedule,
    inputs: &[usize],
    cfg: &PropagatorConfig,
) -> Result<Vec<CVector>> {
    let ev = Evolver::new(plant, s, *cfg)?;
    let dim = ev.dim();
    let chunk = inputs.len().div_ceil(rayon::current_num_threads().max(1)).max(1);
    let parts: Vec<Result<Vec<CVector>>> = inputs
        .par_chunks(chunk)
        .map(|ks| {
            let mut cols: Vec<CVector> = ks
                .iter()
                .map(|&k| {
                    let mut v = CVector::from_element(dim, ZERO);
                    v[k] = ONE;
                    v
                })
                .collect();
            ev.evolve(&mut cols, |_, _| {})?;
            Ok(cols)
        })
        .collect();
    let mut out = Vec::with_capacity(inputs.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Effective action of a schedule on a set of dressed states.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GateReport {
    pub labels: Vec<Vec<usize>>,
    /// `process[(i, j)] = ⟨i| U |j⟩` in the idle interaction frame.
    #[serde(skip)]
    pub process: CMatrix,
    /// `|⟨i|U|j⟩|²`, row `i`, column `j`.
    pub transfer: Vec<Vec<f64>>,
    /// Population leaving the subspace, per input.
    pub leakage: Vec<f64>,
    /// Spectator labels and their survival `|⟨n|U|n⟩|²`.
    pub spectators: Vec<(Vec<usize>, f64)>,
}

impl GateReport {
    /// `|Tr(T†U)|² / m²` against a target on the same subspace.
    pub fn fidelity(&self, target: &CMatrix) -> f64 {
        let m = self.labels.len() as f64;
        (target.adjoint() * &self.process).trace().norm_sqr() / (m * m)
    }

    /// Like [`fidelity`](Self::fidelity) but free of one diagonal phase per
    /// basis state on the output side (virtual phase corrections).
    pub fn fidelity_up_to_phases(&self, target: &CMatrix) -> f64 {
        let m = self.labels.len();
        let mut fixed = self.process.clone();
        for i in 0..m {
            let overlap: C64 = (0..m).map(|j| target[(i, j)].conj() * self.process[(i, j)]).sum();
            let ph = if overlap.norm() > 0.0 { overlap.conj() / overlap.norm() } else { ONE };
            for j in 0..m {
                fixed[(i, j)] *= ph;
            }
        }
        let m = m as f64;
        (target.adjoint() * fixed).trace().norm() / m
    }

    pub fn min_spectator_survival(&self) -> f64 {
        self.spectators.iter().map(|s| s.1).fold(1.0, f64::min)
    }

    pub fn to_json(&self) -> serde_json::Value {
        let re: Vec<Vec<f64>> =
            (0..self.process.nrows()).map(|i| self.process.row(i).iter().map(|z| z.re).collect()).collect();
        let im: Vec<Vec<f64>> =
            (0..self.process.nrows()).map(|i| self.process.row(i).iter().map(|z| z.im).collect()).collect();
        serde_json::json!({
            "labels": self.labels,
            "process_re": re,
            "process_im": im,
            "transfer": self.transfer,
            "leakage": self.leakage,
            "spectators": self.spectators,
        })
    }
}

/// Run the schedule on every subspace and spectator state and assemble the
/// effective subspace unitary.
pub fn gate_tomography(
    plant: &Plant,
    s: &Schedule,
    subspace: &[Vec<usize>],
    spectators: &[Vec<usize>],
    cfg: &PropagatorConfig,
) -> Result<GateReport> {
    let basis = plant.idle_basis();
    let sub: Vec<usize> = subspace.iter().map(|l| basis.index_of(l)).collect::<Result<_>>()?;
    let spec: Vec<usize> = spectators.iter().map(|l| basis.index_of(l)).collect::<Result<_>>()?;
    let mut seen = sub.clone();
    seen.extend(&spec);
    seen.sort_unstable();
    seen.dedup();
    if seen.len() != sub.len() + spec.len() {
        return Err(Error::Validation("subspace and spectator states must be distinct".into()));
    }
    let inputs: Vec<usize> = sub.iter().chain(&spec).copied().collect();
    let cols = propagate_columns(plant, s, &inputs, cfg)?;
    let m = sub.len();
    let process = CMatrix::from_fn(m, m, |i, j| cols[j][sub[i]]);
    let transfer = (0..m).map(|i| (0..m).map(|j| process[(i, j)].norm_sqr()).collect()).collect();
    let leakage = (0..m).map(|j| (1.0 - (0..m).map(|i| process[(i, j)].norm_sqr()).sum::<f64>()).max(0.0)).collect();
    let spectators =
        spec.iter().enumerate().map(|(k, &x)| (basis.labels[x].clone(), cols[m + k][x].norm_sqr())).collect();
    Ok(GateReport { labels: subspace.to_vec(), process, transfer, leakage, spectators })
}

/// Excited-state probability of a two-level atom parked on resonance with
/// the resonator, which starts in `resonator` with the atom in `|0⟩`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReadoutTrace {
    pub times: Vec<f64>,
    pub p_excited: Vec<f64>,
    /// Coupling used (rad/s).
    pub g: f64,
}

pub fn simulate_rabi_readout(
    p: &SystemParams,
    resonator: &QuantumState,
    duration: f64,
    samples: usize,
) -> Result<ReadoutTrace> {
    p.validate()?;
    if resonator.dim() != p.resonator_levels {
        return Err(Error::Validation(format!(
            "resonator state has dimension {}, expected {}",
            resonator.dim(),
            p.resonator_levels
        )));
    }
    if !(duration > 0.0) || samples < 2 {
        return Err(Error::Validation("readout needs a positive duration and at least two samples".into()));
    }
    // On resonance the bare energies commute with the exchange term, so
    // populations follow from `g(σ₊a + σ₋a†)` alone.
    let r = p.resonator_levels;
    let sp = crate::linalg::ops::ket_bra(2, 1, 0);
    let x = crate::linalg::ops::kron_raw(&[&sp, &crate::linalg::ops::destroy(r)]);
    let e = eigh_matrix(&((&x + x.adjoint()) * crate::linalg::c(p.g, 0.0)));
    let mut psi0 = CVector::from_element(2 * r, ZERO);
    for n in 0..r {
        psi0[n] = resonator.amplitudes()[n];
    }
    let c0 = e.vectors.adjoint() * psi0;
    let times: Vec<f64> = (0..samples).map(|k| duration * k as f64 / (samples - 1) as f64).collect();
    let p_excited = times
        .iter()
        .map(|&t| {
            let ct = CVector::from_fn(c0.len(), |k, _| c0[k] * cis(-e.values[k] * t));
            let psi = &e.vectors * ct;
            (r..2 * r).map(|k| psi[k].norm_sqr()).sum()
        })
        .collect();
    Ok(ReadoutTrace { times, p_excited, g: p.g })
}

/// Fock populations recovered from a readout trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FockFit {
    pub populations: Vec<f64>,
    /// Root-mean-square fit residual.
    pub residual: f64,
    pub warnings: Vec<String>,
}

/// Least-squares fit `P_e(t) = Σ_{n≥1} P_n sin²(g√n t)`, with
/// `P_0 = 1 − Σ P_n`.
pub fn fit_fock_populations(trace: &ReadoutTrace, levels: usize) -> Result<FockFit> {
    if levels < 2 {
        return Err(Error::Validation("fit needs at least two Fock levels".into()));
    }
    let mut warnings = Vec::new();
    let duration = trace.times.last().copied().unwrap_or(0.0);
    let slowest = PI / trace.g;
    if duration < slowest {
        warnings.push(format!(
            "readout window {:.3e} s is shorter than the slowest period {:.3e} s; the fit is ill-conditioned",
            duration, slowest
        ));
    }
    let rows = trace.times.len();
    let cols = levels - 1;
    let a = nalgebra::DMatrix::from_fn(rows, cols, |i, n| {
        (trace.g * ((n + 1) as f64).sqrt() * trace.times[i]).sin().powi(2)
    });
    let b = nalgebra::DVector::from_column_slice(&trace.p_excited);
    let svd = a.clone().svd(true, true);
    let x = svd.solve(&b, 1e-12).map_err(|e| Error::Validation(format!("least-squares solve failed: {e}")))?;
    let fit = &a * &x;
    let residual = ((&fit - &b).norm_squared() / rows as f64).sqrt();
    let mut populations = vec![1.0 - x.sum()];
    populations.extend(x.iter().copied());
    Ok(FockFit { populations, residual, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::c;
    use crate::model::presets;
    use crate::pulse::{PulseSegment, Schedule};
    use crate::sequence::{build_single_qudit_sequence, GateConfig};
    use crate::units::{ghz, mhz, us};
    use std::f64::consts::FRAC_PI_2;

    fn small() -> SystemParams {
        SystemParams { resonator_levels: 4, ..presets::gate_reference() }
    }

    #[test]
    fn empty_schedule_keeps_eigenstate_populations() {
        let p = small();
        let plant = Plant::Single(p);
        let mut s = Schedule::new(vec![p.omega01]);
        s.segments.push(PulseSegment { qudit: 0, start: 0.0, duration: ns(5.0), kind: SegmentKind::Idle });
        let basis = plant.idle_basis();
        let k = basis.index_of(&[0, 1]).unwrap();
        let psi = QuantumState::new(basis.vectors.column(k).into_owned(), plant.external_dims()).unwrap();
        let tr = run_schedule(&plant, &s, &psi, &[], &PropagatorConfig::default()).unwrap();
        assert_eq!(tr.times.len(), 11);
        for row in &tr.probabilities {
            assert!((row[k] - 1.0).abs() < 1e-12);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn identity_schedule_gives_identity_process() {
        let p = small();
        let plant = Plant::Single(p);
        let s = Schedule::new(vec![p.omega01]);
        let r = gate_tomography(&plant, &s, &[vec![0, 0], vec![0, 1]], &[vec![0, 2]], &PropagatorConfig::default())
            .unwrap();
        assert!((r.fidelity(&CMatrix::identity(2, 2)) - 1.0).abs() < 1e-12);
        assert!((r.min_spectator_survival() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn resonant_pi_pulse_flips_atom() {
        let p = small();
        let plant = Plant::Single(p);
        let cfg = GateConfig::default();
        let mut b = crate::sequence::SequenceBuilder::new(plant, cfg).unwrap();
        b.rotation(0, 0, 1, 0.0, 0.0).unwrap();
        let s = b.finish();
        // First segment is the number-selective π-pulse on n = 0.
        let mut one = Schedule::new(vec![p.omega01]);
        one.segments.push(s.segments[0].clone());
        let rot = DriveFrame::Rotating { cutoff: ghz(3.0) };
        for frame in [DriveFrame::Lab, rot] {
            let cfg = PropagatorConfig { frame, ..Default::default() };
            let r = gate_tomography(&plant, &one, &[vec![0, 0], vec![1, 0]], &[vec![0, 1], vec![0, 2]], &cfg).unwrap();
            assert!(r.transfer[1][0] > 0.995, "{:?}", r.transfer);
            assert!(r.min_spectator_survival() > 0.95, "{:?}", r.spectators);
        }
    }

    #[test]
    fn full_gate_swaps_fock_states() {
        let p = SystemParams { resonator_levels: 5, ..presets::gate_reference() };
        let plant = Plant::Single(p);
        let s = build_single_qudit_sequence(&p, 0, FRAC_PI_2, 0.0, &GateConfig::default()).unwrap();
        let cfg = PropagatorConfig { frame: DriveFrame::Rotating { cutoff: ghz(3.0) }, ..Default::default() };
        let r = gate_tomography(&plant, &s, &[vec![0, 0], vec![0, 1]], &[vec![0, 2]], &cfg).unwrap();
        assert!(r.transfer[1][0] > 0.97 && r.transfer[0][1] > 0.97, "{:?}", r.transfer);
        let target = CMatrix::from_row_slice(2, 2, &[ZERO, c(0.0, -1.0), c(0.0, -1.0), ZERO]);
        assert!(r.fidelity(&target) > 0.95, "{}", r.fidelity(&target));
    }

    #[test]
    fn unsupported_overlap_is_rejected() {
        let p = small();
        let plant = Plant::Single(p);
        let mut s = build_single_qudit_sequence(&p, 0, 1.0, 0.0, &GateConfig::default()).unwrap();
        let flux = s.segments.iter().position(|x| matches!(x.kind, SegmentKind::FluxShift(_))).unwrap();
        let start = s.segments[0].start;
        s.segments[flux].start = start;
        let psi = QuantumState::basis(&plant.external_dims(), &[0, 0]).unwrap();
        let r = run_schedule(&plant, &s, &psi, &[], &PropagatorConfig::default());
        assert!(r.is_err());
    }

    #[test]
    fn readout_single_photon_period() {
        let p = presets::gate_reference();
        let psi = QuantumState::basis(&[p.resonator_levels], &[1]).unwrap();
        let period = PI / p.g;
        let tr = simulate_rabi_readout(&p, &psi, period, 201).unwrap();
        assert!(tr.p_excited[0].abs() < 1e-12);
        assert!((tr.p_excited[100] - 1.0).abs() < 1e-9);
        assert!(tr.p_excited[200].abs() < 1e-9);
        let vac = QuantumState::basis(&[p.resonator_levels], &[0]).unwrap();
        let tv = simulate_rabi_readout(&p, &vac, period, 11).unwrap();
        assert!(tv.p_excited.iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn readout_fit_recovers_populations() {
        let p = presets::gate_reference();
        let pops: [f64; 6] = [0.1, 0.3, 0.25, 0.15, 0.12, 0.08];
        let amps: Vec<C64> = pops
            .iter()
            .enumerate()
            .map(|(k, x)| cis(0.7 * k as f64) * x.sqrt())
            .chain(std::iter::repeat(ZERO))
            .take(p.resonator_levels)
            .collect();
        let psi = QuantumState::new(CVector::from_vec(amps), vec![p.resonator_levels]).unwrap();
        let tr = simulate_rabi_readout(&p, &psi, us(0.5), 2001).unwrap();
        let fit = fit_fock_populations(&tr, 6).unwrap();
        for (a, b) in fit.populations.iter().zip(pops) {
            assert!((a - b).abs() < 1e-6, "{:?}", fit.populations);
        }
        assert!(fit.warnings.is_empty());
        let short = simulate_rabi_readout(&p, &psi, ns(5.0), 51).unwrap();
        assert!(!fit_fock_populations(&short, 6).unwrap().warnings.is_empty());
    }

    #[test]
    fn flux_only_interval_matches_pair_propagator() {
        let p = small();
        let plant = Plant::Single(p);
        let mut s = Schedule::new(vec![p.omega01]);
        s.segments.push(PulseSegment {
            qudit: 0,
            start: ns(1.0),
            duration: ns(6.0),
            kind: SegmentKind::FluxShift(crate::pulse::FluxShift {
                target_omega01: p.omega01 + mhz(100.0),
                idle_omega01: p.omega01,
                rise: ns(2.0),
            }),
        });
        let cols = propagate_columns(&plant, &s, &[0, 1, 2, 3], &PropagatorConfig::default()).unwrap();
        for col in cols {
            assert!((col.norm() - 1.0).abs() < 1e-10);
        }
    }
}
