//! Energy-relaxation dynamics of the gate sequences in the interaction
//! picture: a dense master-equation solver and quantum-trajectory Monte Carlo.
//!
//! Each gate step keeps only its resonant interaction with a rectangular
//! envelope; collapse operators are atom lowering (`1/T_q`) and resonator
//! annihilation (`1/T_r`).

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{c, expm, ops, pairwise_sum, CMatrix, CVector, Operator, QuantumState, I, ONE, ZERO};
use crate::units::mhz;

/// Largest Hilbert dimension accepted by [`dense_master_solve`].
pub const DENSE_MAX_DIM: usize = 64;

/// Relative tolerance of the rotation-area check.
pub const AREA_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecoherenceParams {
    /// Atom relaxation time (s); `None` disables atom decay.
    pub t_q: Option<f64>,
    /// Resonator relaxation time (s); `None` disables resonator decay.
    pub t_r: Option<f64>,
}

impl DecoherenceParams {
    pub const NONE: DecoherenceParams = DecoherenceParams { t_q: None, t_r: None };

    pub fn new(t_q: f64, t_r: f64) -> Self {
        Self { t_q: Some(t_q), t_r: Some(t_r) }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, t) in [("T_q", self.t_q), ("T_r", self.t_r)] {
            if let Some(t) = t {
                if !(t > 0.0 && t.is_finite()) {
                    return Err(Error::Validation(format!("{name} must be positive, got {t}")));
                }
            }
        }
        Ok(())
    }

    /// Jump-test interval `min(T_q, T_r)/10⁴`, or `None` without decay.
    pub fn jump_interval(&self) -> Option<f64> {
        match (self.t_q, self.t_r) {
            (None, None) => None,
            (a, b) => Some(a.unwrap_or(f64::INFINITY).min(b.unwrap_or(f64::INFINITY)) / 1e4),
        }
    }
}

/// Resonant interaction of one gate step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "tag", rename_all = "snake_case")]
pub enum StepTag {
    /// `(Ω₁/2)(|0⟩⟨1| + h.c.) ⊗ |j⟩⟨j|`.
    R01 { j: usize },
    /// `(Ω₂/2)(|1⟩⟨2| + h.c.) ⊗ I`.
    R12,
    /// `λg(a|2⟩⟨1| + a†|1⟩⟨2|)`; `level` only sets the rotation-area scale.
    S { level: usize },
    /// `(Ω/2) σ_x ⊗ I_B ⊗ |j⟩⟨j| ⊗ I`.
    RA01 { j: usize },
    /// `(Ω/2) I_A ⊗ σ_x ⊗ I ⊗ |j⟩⟨j|`.
    RB01 { j: usize },
    /// `√2 g (|11⟩⟨02| + h.c.) ⊗ I ⊗ I`.
    C,
    /// No interaction (decay only).
    Idle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Atom (3 levels) ⊗ resonator.
    Single,
    /// Atom A ⊗ atom B ⊗ resonator A ⊗ resonator B.
    Two,
}

/// Interaction-picture gate model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InteractionModel {
    pub kind: ModelKind,
    pub resonator_levels: usize,
    /// Rabi rate of the 0–1 pulses (rad/s).
    pub omega1: f64,
    /// Rabi rate of the 1–2 pulse (rad/s).
    pub omega2: f64,
    /// Atom–resonator (single) or atom–atom (two) coupling (rad/s).
    pub g: f64,
    /// Relative 1–2 matrix element.
    pub lambda: f64,
}

/// Atom levels kept in the interaction model.
pub const MODEL_ATOM_LEVELS: usize = 3;

/// One (possibly simultaneous) gate step with its nominal rotation angles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateStep {
    pub tags: Vec<(StepTag, f64)>,
    pub duration: f64,
}

impl GateStep {
    pub fn idle(duration: f64) -> Self {
        Self { tags: vec![(StepTag::Idle, 0.0)], duration }
    }
}

#[derive(Debug, Clone)]
pub struct Channel {
    pub label: String,
    pub rate: f64,
    pub op: CMatrix,
    /// `L†L`, built from the small factors.
    pub op_dag_op: CMatrix,
}

impl InteractionModel {
    pub fn single(resonator_levels: usize) -> Self {
        Self {
            kind: ModelKind::Single,
            resonator_levels,
            omega1: mhz(6.67),
            omega2: mhz(25.0),
            g: mhz(35.0),
            lambda: 1.46,
        }
    }

    pub fn two(resonator_levels: usize) -> Self {
        Self {
            kind: ModelKind::Two,
            resonator_levels,
            omega1: mhz(6.67),
            omega2: mhz(25.0),
            g: mhz(35.0),
            lambda: 1.46,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let rates = [self.omega1, self.omega2, self.g, self.lambda];
        if rates.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(Error::Validation("model rates must be positive".into()));
        }
        if self.resonator_levels < 1 {
            return Err(Error::Validation("need at least one resonator level".into()));
        }
        let dim = self.dim();
        if dim > crate::linalg::MAX_HILBERT_DIM {
            return Err(Error::HilbertSize { requested: self.dims(), max: crate::linalg::MAX_HILBERT_DIM });
        }
        Ok(())
    }

    pub fn dims(&self) -> Vec<usize> {
        let (a, r) = (MODEL_ATOM_LEVELS, self.resonator_levels);
        match self.kind {
            ModelKind::Single => vec![a, r],
            ModelKind::Two => vec![a, a, r, r],
        }
    }

    pub fn dim(&self) -> usize {
        self.dims().iter().product()
    }

    /// Rotation rate of a tag: angle = rate × duration.
    pub fn rate(&self, tag: StepTag) -> Result<f64> {
        match (self.kind, tag) {
            (ModelKind::Single, StepTag::R01 { .. }) => Ok(self.omega1),
            (ModelKind::Single, StepTag::R12) => Ok(self.omega2),
            (ModelKind::Single, StepTag::S { level }) => Ok(self.lambda * self.g * ((level + 1) as f64).sqrt()),
            (ModelKind::Two, StepTag::RA01 { .. } | StepTag::RB01 { .. }) => Ok(self.omega1),
            // Rabi angle of the |11⟩ ↔ |02⟩ exchange; a round trip is 2π.
            (ModelKind::Two, StepTag::C) => Ok(2.0 * 2f64.sqrt() * self.g),
            (_, StepTag::Idle) => Ok(0.0),
            (k, t) => Err(Error::Validation(format!("step tag {t:?} is not defined for the {k:?} model"))),
        }
    }

    /// Hermitian interaction Hamiltonian of one tag.
    pub fn interaction_hamiltonian(&self, tag: StepTag) -> Result<Operator> {
        self.rate(tag)?;
        let (a, r) = (MODEL_ATOM_LEVELS, self.resonator_levels);
        let sym = |i: usize, j: usize| ops::ket_bra(a, i, j) + ops::ket_bra(a, j, i);
        let fock = |j: usize| -> Result<CMatrix> {
            if j >= r {
                return Err(Error::IndexOutOfRange(format!("Fock level {j} with {r} resonator levels")));
            }
            Ok(ops::ket_bra(r, j, j))
        };
        let (ia, ir) = (ops::identity(a), ops::identity(r));
        let half = |w: f64| c(w / 2.0, 0.0);
        let m = match tag {
            StepTag::R01 { j } => ops::kron_raw(&[&sym(0, 1), &fock(j)?]) * half(self.omega1),
            StepTag::R12 => ops::kron_raw(&[&sym(1, 2), &ir]) * half(self.omega2),
            StepTag::S { .. } => {
                let a_op = ops::destroy(r);
                let up = ops::kron_raw(&[&ops::ket_bra(a, 2, 1), &a_op]);
                (&up + up.adjoint()) * c(self.lambda * self.g, 0.0)
            }
            StepTag::RA01 { j } => ops::kron_raw(&[&sym(0, 1), &ia, &fock(j)?, &ir]) * half(self.omega1),
            StepTag::RB01 { j } => ops::kron_raw(&[&ia, &sym(0, 1), &ir, &fock(j)?]) * half(self.omega1),
            StepTag::C => {
                let k11 = ops::kron_raw(&[&ops::ket_bra(a, 1, 0), &ops::ket_bra(a, 1, 2)]);
                let x = ops::kron_raw(&[&(&k11 + k11.adjoint()), &ir, &ir]);
                x * c(2f64.sqrt() * self.g, 0.0)
            }
            StepTag::Idle => CMatrix::zeros(self.dim(), self.dim()),
        };
        Operator::new(m, self.dims())
    }

    /// Step with the duration that realizes `angle` for every tag (all tags
    /// of a simultaneous step must agree on the duration).
    pub fn step(&self, tags: &[(StepTag, f64)]) -> Result<GateStep> {
        let (tag, angle) = *tags.first().ok_or_else(|| Error::Validation("empty gate step".into()))?;
        let s = GateStep { tags: tags.to_vec(), duration: angle / self.rate(tag)? };
        self.check_step(&s)?;
        Ok(s)
    }

    /// Rotation-area check of a step.
    pub fn check_step(&self, s: &GateStep) -> Result<()> {
        if !(s.duration >= 0.0 && s.duration.is_finite()) {
            return Err(Error::Validation(format!("step duration {} is invalid", s.duration)));
        }
        for &(tag, angle) in &s.tags {
            let area = self.rate(tag)? * s.duration;
            if (area - angle).abs() > AREA_TOL * angle.abs().max(1.0) {
                return Err(Error::Calibration(format!("{tag:?}: area {area:.9} differs from nominal {angle:.9}")));
            }
        }
        Ok(())
    }

    fn step_hamiltonian(&self, s: &GateStep) -> Result<CMatrix> {
        let n = self.dim();
        let mut h = CMatrix::zeros(n, n);
        for &(tag, _) in &s.tags {
            h += self.interaction_hamiltonian(tag)?.into_matrix();
        }
        Ok(h)
    }

    /// Collapse channels: atom lowering `|0⟩⟨1| + λ|1⟩⟨2|` and resonator
    /// annihilation, per subsystem.
    pub fn channels(&self, d: &DecoherenceParams) -> Vec<Channel> {
        let (a, r) = (MODEL_ATOM_LEVELS, self.resonator_levels);
        let mut sm = ops::ket_bra(a, 0, 1);
        sm[(1, 2)] = c(self.lambda, 0.0);
        let dest = ops::destroy(r);
        let (ia, ir) = (ops::identity(a), ops::identity(r));
        let mut out = Vec::new();
        let mut push = |label: &str, t: Option<f64>, factors: &[&CMatrix]| {
            if let Some(t) = t {
                let dd: Vec<CMatrix> = factors.iter().map(|f| f.adjoint() * *f).collect();
                let dd_refs: Vec<&CMatrix> = dd.iter().collect();
                out.push(Channel {
                    label: label.into(),
                    rate: 1.0 / t,
                    op: ops::kron_raw(factors),
                    op_dag_op: ops::kron_raw(&dd_refs),
                });
            }
        };
        match self.kind {
            ModelKind::Single => {
                push("atom", d.t_q, &[&sm, &ir]);
                push("resonator", d.t_r, &[&ia, &dest]);
            }
            ModelKind::Two => {
                push("atom_a", d.t_q, &[&sm, &ia, &ir, &ir]);
                push("atom_b", d.t_q, &[&ia, &sm, &ir, &ir]);
                push("resonator_a", d.t_r, &[&ia, &ia, &dest, &ir]);
                push("resonator_b", d.t_r, &[&ia, &ia, &ir, &dest]);
            }
        }
        out
    }

    /// Product basis state `(atom…, resonator…)` in model ordering.
    pub fn basis_state(&self, indices: &[usize]) -> Result<QuantumState> {
        QuantumState::basis(&self.dims(), indices)
    }
}

/// `U_{n,n+1}` full swap: `R01(n) R12 R01(n+1) S R01(n+1) R12 R01(n)`.
pub fn single_qudit_swap_steps(m: &InteractionModel, n: usize) -> Result<Vec<GateStep>> {
    let pi = |t| m.step(&[(t, PI)]);
    Ok(vec![
        pi(StepTag::R01 { j: n })?,
        pi(StepTag::R12)?,
        pi(StepTag::R01 { j: n + 1 })?,
        m.step(&[(StepTag::S { level: n }, PI / 2.0)])?,
        pi(StepTag::R01 { j: n + 1 })?,
        pi(StepTag::R12)?,
        pi(StepTag::R01 { j: n })?,
    ])
}

/// Controlled phase `π` on `|n,n⟩`: simultaneous encode, one exchange round
/// trip, simultaneous decode.
pub fn controlled_phase_steps(m: &InteractionModel, n: usize) -> Result<Vec<GateStep>> {
    let flips = m.step(&[(StepTag::RA01 { j: n }, PI), (StepTag::RB01 { j: n }, PI)])?;
    Ok(vec![flips.clone(), m.step(&[(StepTag::C, 2.0 * PI)])?, flips])
}

pub fn total_duration(steps: &[GateStep]) -> f64 {
    steps.iter().map(|s| s.duration).sum()
}

/// `H_eff = H − (i/2) Σ λ_j L_j† L_j`.
fn effective_hamiltonian(h: &CMatrix, channels: &[Channel]) -> CMatrix {
    let mut heff = h.clone();
    for ch in channels {
        heff -= &ch.op_dag_op * (I * c(0.5 * ch.rate, 0.0));
    }
    heff
}

/// Master-equation right-hand side without input checks.
fn lindblad_rhs_raw(rho: &CMatrix, heff: &CMatrix, channels: &[Channel]) -> CMatrix {
    let mut d = (heff * rho - rho * heff.adjoint()) * (-I);
    for ch in channels {
        d += (&ch.op * rho * ch.op.adjoint()) * c(ch.rate, 0.0);
    }
    d
}

/// `dρ/dt = −i[H, ρ] + Σ λ_j (L_j ρ L_j† − ½{L_j†L_j, ρ})`.
pub fn lindblad_rhs(rho: &CMatrix, h: &Operator, channels: &[Channel]) -> Result<CMatrix> {
    check_density(rho, h.dim())?;
    if !h.is_hermitian(1e-9) {
        return Err(Error::Validation("Hamiltonian is not Hermitian".into()));
    }
    Ok(lindblad_rhs_raw(rho, &effective_hamiltonian(h.matrix(), channels), channels))
}

fn check_density(rho: &CMatrix, dim: usize) -> Result<()> {
    if rho.nrows() != dim || rho.ncols() != dim {
        return Err(Error::Validation(format!("density matrix must be {dim}×{dim}")));
    }
    let herm = (rho - rho.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
    let tr = rho.trace();
    if herm > 1e-9 || (tr - ONE).norm() > 1e-9 {
        return Err(Error::Validation(format!("density matrix invalid (hermiticity {herm:.2e}, trace {tr})")));
    }
    let min_diag = (0..dim).map(|i| rho[(i, i)].re).fold(f64::INFINITY, f64::min);
    if min_diag < -1e-9 {
        return Err(Error::Validation("density matrix has negative populations".into()));
    }
    Ok(())
}

/// Dense RK4 integration of the master equation through `steps`.
pub fn dense_master_solve(
    m: &InteractionModel,
    steps: &[GateStep],
    d: &DecoherenceParams,
    rho0: &CMatrix,
) -> Result<CMatrix> {
    m.validate()?;
    d.validate()?;
    let dim = m.dim();
    if dim > DENSE_MAX_DIM {
        return Err(Error::HilbertSize { requested: m.dims(), max: DENSE_MAX_DIM });
    }
    check_density(rho0, dim)?;
    let channels = m.channels(d);
    let mut rho = rho0.clone();
    for s in steps {
        m.check_step(s)?;
        let heff = effective_hamiltonian(&m.step_hamiltonian(s)?, &channels);
        let bound = (0..dim).map(|i| heff.row(i).iter().map(|z| z.norm()).sum::<f64>()).fold(0.0, f64::max)
            + channels.iter().map(|ch| ch.rate * ch.op.iter().map(|z| z.norm_sqr()).sum::<f64>()).sum::<f64>();
        let n = ((s.duration * bound / 0.02).ceil() as usize).max(1);
        let h = s.duration / n as f64;
        let f = |r: &CMatrix| lindblad_rhs_raw(r, &heff, &channels);
        for _ in 0..n {
            let k1 = f(&rho);
            let k2 = f(&(&rho + &k1 * c(h / 2.0, 0.0)));
            let k3 = f(&(&rho + &k2 * c(h / 2.0, 0.0)));
            let k4 = f(&(&rho + &k3 * c(h, 0.0)));
            rho += (k1 + (k2 + k3) * c(2.0, 0.0) + k4) * c(h / 6.0, 0.0);
        }
        // Remove round-off anti-Hermitian drift.
        rho = (&rho + rho.adjoint()) * c(0.5, 0.0);
    }
    Ok(rho)
}

/// Exact propagator of a block-diagonal (after permutation) generator.
struct BlockPropagator {
    blocks: Vec<(Vec<usize>, CMatrix)>,
}

/// Connected components of the coupling graph of `h`.
fn components(h: &CMatrix) -> Vec<Vec<usize>> {
    let n = h.nrows();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for i in 0..n {
        for j in i + 1..n {
            if h[(i, j)] != ZERO || h[(j, i)] != ZERO {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; n];
    for i in 0..n {
        let r = find(&mut parent, i);
        if slot[r] == usize::MAX {
            slot[r] = groups.len();
            groups.push(Vec::new());
        }
        groups[slot[r]].push(i);
    }
    groups
}

impl BlockPropagator {
    /// `exp(−i H t)` computed block by block.
    fn new(h: &CMatrix, comps: &[Vec<usize>], t: f64) -> Self {
        let blocks = comps
            .iter()
            .map(|idx| {
                let sub = CMatrix::from_fn(idx.len(), idx.len(), |a, b| h[(idx[a], idx[b])]);
                (idx.clone(), expm(&(sub * (-I * c(t, 0.0)))))
            })
            .collect();
        Self { blocks }
    }

    /// Blocks holding any amplitude of `psi`.
    fn active(&self, psi: &CVector) -> Vec<usize> {
        (0..self.blocks.len()).filter(|&b| self.blocks[b].0.iter().any(|&i| psi[i] != ZERO)).collect()
    }

    /// Propagate the `active` blocks; entries of `out` outside them are left
    /// untouched (they stay zero because blocks are invariant).
    fn apply_active(&self, active: &[usize], psi: &CVector, out: &mut CVector) {
        for &b in active {
            let (idx, u) = &self.blocks[b];
            for (a, &i) in idx.iter().enumerate() {
                let mut acc = ZERO;
                for (k, &j) in idx.iter().enumerate() {
                    acc += u[(a, k)] * psi[j];
                }
                out[i] = acc;
            }
        }
    }

    fn norm_squared(&self, active: &[usize], psi: &CVector) -> f64 {
        active.iter().flat_map(|&b| self.blocks[b].0.iter()).map(|&i| psi[i].norm_sqr()).sum()
    }

    fn apply(&self, psi: &CVector, out: &mut CVector) {
        out.fill(ZERO);
        self.apply_active(&self.active(psi), psi, out);
    }
}

/// Substep propagators of one gate step.
struct CompiledStep {
    full: BlockPropagator,
    count: usize,
    rest: Option<BlockPropagator>,
}

fn compile(
    m: &InteractionModel,
    steps: &[GateStep],
    channels: &[Channel],
    dt: Option<f64>,
) -> Result<Vec<CompiledStep>> {
    steps
        .iter()
        .map(|s| {
            m.check_step(s)?;
            let heff = effective_hamiltonian(&m.step_hamiltonian(s)?, channels);
            let comps = components(&heff);
            let dt = dt.unwrap_or(s.duration).min(s.duration.max(f64::MIN_POSITIVE));
            let count = (s.duration / dt).floor() as usize;
            let rem = s.duration - count as f64 * dt;
            Ok(CompiledStep {
                full: BlockPropagator::new(&heff, &comps, dt),
                count,
                rest: (rem > 1e-9 * dt).then(|| BlockPropagator::new(&heff, &comps, rem)),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Estimator {
    pub name: String,
    pub mean: f64,
    pub std_error: f64,
}

impl Estimator {
    fn from_samples(name: &str, xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = pairwise_sum(xs) / n;
        let dev: Vec<f64> = xs.iter().map(|x| (x - mean).powi(2)).collect();
        let var = if xs.len() > 1 { pairwise_sum(&dev) / (n - 1.0) } else { 0.0 };
        Self { name: name.into(), mean, std_error: (var / n).sqrt() }
    }
}

/// Accumulated statistics of a trajectory ensemble.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryRun {
    pub trajectories: usize,
    pub seed: u64,
    pub decoherence: DecoherenceParams,
    pub duration: f64,
    pub estimators: Vec<Estimator>,
    /// Jump counts per collapse channel, summed over trajectories.
    pub jumps: Vec<(String, u64)>,
}

impl TrajectoryRun {
    pub fn estimator(&self, name: &str) -> Option<&Estimator> {
        self.estimators.iter().find(|e| e.name == name)
    }

    pub fn total_jumps(&self) -> u64 {
        self.jumps.iter().map(|(_, k)| k).sum()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("trajectory run serializes")
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("estimator,mean,std_error\n");
        for e in &self.estimators {
            s.push_str(&format!("{},{:.17e},{:.17e}\n", e.name, e.mean, e.std_error));
        }
        s
    }
}

struct TrajectoryOutcome {
    values: Vec<f64>,
    jumps: Vec<u64>,
}

fn one_trajectory(
    compiled: &[CompiledStep],
    channels: &[Channel],
    initial: &CVector,
    targets: &[CVector],
    rng: &mut ChaCha8Rng,
) -> TrajectoryOutcome {
    let decays = !channels.is_empty();
    let mut psi = initial.clone();
    let mut buf = CVector::zeros(psi.len());
    let mut jumps = vec![0u64; channels.len()];
    let mut threshold: f64 = if decays { rng.random() } else { 0.0 };
    for s in compiled {
        // Both propagators of a step share one block partition.
        let mut active = s.full.active(&psi);
        buf.fill(ZERO);
        for p in std::iter::repeat_n(&s.full, s.count).chain(s.rest.as_ref()) {
            p.apply_active(&active, &psi, &mut buf);
            std::mem::swap(&mut psi, &mut buf);
            if !decays || p.norm_squared(&active, &psi) > threshold {
                continue;
            }
            let weights: Vec<f64> = channels.iter().map(|ch| ch.rate * (&ch.op * &psi).norm_squared()).collect();
            let total: f64 = weights.iter().sum();
            if total > 0.0 {
                let mut pick = rng.random::<f64>() * total;
                let mut k = weights.len() - 1;
                for (i, w) in weights.iter().enumerate() {
                    if pick < *w {
                        k = i;
                        break;
                    }
                    pick -= w;
                }
                let jumped = &channels[k].op * &psi;
                psi = &jumped / c(jumped.norm(), 0.0);
                jumps[k] += 1;
                active = s.full.active(&psi);
                buf.fill(ZERO);
            }
            threshold = rng.random();
        }
    }
    let norm = psi.norm();
    let psi = &psi / c(norm, 0.0);
    let values = targets.iter().map(|t| t.dotc(&psi).norm_sqr()).collect();
    TrajectoryOutcome { values, jumps }
}

/// Quantum-trajectory unraveling of the master equation.
///
/// Each trajectory uses its own ChaCha stream of the master seed, so results
/// are identical for any thread count. `targets` are projectors `|t⟩⟨t|`
/// whose expectation values are estimated.
pub fn run_trajectories(
    m: &InteractionModel,
    steps: &[GateStep],
    d: &DecoherenceParams,
    initial: &QuantumState,
    targets: &[(String, QuantumState)],
    n_traj: usize,
    seed: u64,
) -> Result<TrajectoryRun> {
    m.validate()?;
    d.validate()?;
    if n_traj == 0 {
        return Err(Error::Validation("need at least one trajectory".into()));
    }
    let dim = m.dim();
    if initial.dim() != dim || targets.iter().any(|(_, t)| t.dim() != dim) {
        return Err(Error::Validation(format!("states must have dimension {dim}")));
    }
    let channels = m.channels(d);
    let compiled = compile(m, steps, &channels, d.jump_interval())?;
    let psi0 = initial.normalized()?.into_amplitudes();
    let tvecs: Vec<CVector> =
        targets.iter().map(|(_, t)| t.normalized().map(|s| s.into_amplitudes())).collect::<Result<_>>()?;
    let outcomes: Vec<TrajectoryOutcome> = (0..n_traj)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            one_trajectory(&compiled, &channels, &psi0, &tvecs, &mut rng)
        })
        .collect();
    let estimators = targets
        .iter()
        .enumerate()
        .map(|(i, (name, _))| {
            let xs: Vec<f64> = outcomes.iter().map(|o| o.values[i]).collect();
            Estimator::from_samples(name, &xs)
        })
        .collect();
    let jumps = channels
        .iter()
        .enumerate()
        .map(|(k, ch)| (ch.label.clone(), outcomes.iter().map(|o| o.jumps[k]).sum()))
        .collect();
    Ok(TrajectoryRun {
        trajectories: n_traj,
        seed,
        decoherence: *d,
        duration: total_duration(steps),
        estimators,
        jumps,
    })
}

/// Closed-system evolution of a pure state through `steps`.
pub fn ideal_evolution(m: &InteractionModel, steps: &[GateStep], initial: &QuantumState) -> Result<QuantumState> {
    let compiled = compile(m, steps, &[], None)?;
    let mut psi = initial.amplitudes().clone();
    let mut buf = psi.clone();
    for s in &compiled {
        for p in std::iter::repeat_n(&s.full, s.count).chain(s.rest.as_ref()) {
            p.apply(&psi, &mut buf);
            std::mem::swap(&mut psi, &mut buf);
        }
    }
    QuantumState::new(psi, m.dims())
}

/// One point of a decoherence sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepPoint {
    pub n: usize,
    pub t_q: f64,
    pub t_r: f64,
    pub duration: f64,
    pub value: f64,
    pub std_error: f64,
}

/// Seed of the sub-run for probe `input`. It does not depend on the Fock
/// level, so sweeps over `n` use common random numbers and their trends are
/// not masked by independent sampling noise.
fn sub_seed(seed: u64, input: usize) -> u64 {
    seed ^ (input as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Swap probability `|0,n⟩ → |0,n+1⟩` of the single-qudit full swap.
pub fn swap_probability(d: &DecoherenceParams, n: usize, n_traj: usize, seed: u64) -> Result<SweepPoint> {
    let m = InteractionModel::single(n + 3);
    let steps = single_qudit_swap_steps(&m, n)?;
    let initial = m.basis_state(&[0, n])?;
    let target = m.basis_state(&[0, n + 1])?;
    let run = run_trajectories(&m, &steps, d, &initial, &[("swap".into(), target)], n_traj, sub_seed(seed, 0))?;
    let e = &run.estimators[0];
    Ok(SweepPoint {
        n,
        t_q: d.t_q.unwrap_or(f64::INFINITY),
        t_r: d.t_r.unwrap_or(f64::INFINITY),
        duration: run.duration,
        value: e.mean,
        std_error: e.std_error,
    })
}

/// Probe inputs of the two-qudit gate on Fock level `n`: the basis states
/// `|j,k⟩` with `j, k ∈ {0, n}` and their equal superposition.
pub fn controlled_phase_probes(m: &InteractionModel, n: usize) -> Result<Vec<(String, QuantumState)>> {
    let levels: Vec<usize> = if n == 0 { vec![0] } else { vec![0, n] };
    let mut probes = Vec::new();
    let mut sum = CVector::zeros(m.dim());
    for &j in &levels {
        for &k in &levels {
            let s = m.basis_state(&[0, 0, j, k])?;
            sum += s.amplitudes();
            probes.push((format!("|{j},{k}>"), s));
        }
    }
    if probes.len() > 1 {
        probes.push(("superposition".into(), QuantumState::new(sum, m.dims())?.normalized()?));
    }
    Ok(probes)
}

/// Worst-case fidelity of the two-qudit phase gate on `|n,n⟩` over
/// [`controlled_phase_probes`], relative to the closed-system evolution.
pub fn controlled_phase_fidelity(d: &DecoherenceParams, n: usize, n_traj: usize, seed: u64) -> Result<SweepPoint> {
    let m = InteractionModel::two(n + 1);
    let steps = controlled_phase_steps(&m, n)?;
    let mut worst: Option<Estimator> = None;
    for (i, (name, probe)) in controlled_phase_probes(&m, n)?.into_iter().enumerate() {
        let ideal = ideal_evolution(&m, &steps, &probe)?;
        let run = run_trajectories(&m, &steps, d, &probe, &[(name, ideal)], n_traj, sub_seed(seed, i))?;
        let e = run.estimators.into_iter().next().expect("one estimator");
        if worst.as_ref().is_none_or(|w| e.mean < w.mean) {
            worst = Some(e);
        }
    }
    let w = worst.expect("at least one probe");
    Ok(SweepPoint {
        n,
        t_q: d.t_q.unwrap_or(f64::INFINITY),
        t_r: d.t_r.unwrap_or(f64::INFINITY),
        duration: total_duration(&steps),
        value: w.mean,
        std_error: w.std_error,
    })
}

/// Fit of `A·exp(−α T/T_q)·exp(−κ n T/T_r)` with fixed `κ`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecayFit {
    pub amplitude: f64,
    pub alpha: f64,
    pub kappa: f64,
    /// `value − model` per point.
    pub residuals: Vec<f64>,
    pub max_residual: f64,
}

/// Least-squares fit of `ln P + κ n T/T_r = ln A − α T/T_q` over all points;
/// with `alpha` given only the amplitude is fitted.
pub fn fit_decay_law(points: &[SweepPoint], kappa: f64, alpha: Option<f64>) -> Result<DecayFit> {
    if points.len() < 2 || points.iter().any(|p| !(p.value > 0.0)) {
        return Err(Error::Validation("decay fit needs at least two positive points".into()));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.duration / p.t_q).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.value.ln() + kappa * p.n as f64 * p.duration / p.t_r).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let alpha = match alpha {
        Some(a) => a,
        None => {
            let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
            let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
            if sxx <= 0.0 {
                return Err(Error::Validation("decay fit needs at least two distinct T/T_q values".into()));
            }
            -sxy / sxx
        }
    };
    let amplitude = (my + alpha * mx).exp();
    let residuals: Vec<f64> = points
        .iter()
        .map(|p| p.value - amplitude * (-alpha * p.duration / p.t_q - kappa * p.n as f64 * p.duration / p.t_r).exp())
        .collect();
    let max_residual = residuals.iter().map(|r| r.abs()).fold(0.0, f64::max);
    Ok(DecayFit { amplitude, alpha, kappa, residuals, max_residual })
}

/// Density matrix `|ψ⟩⟨ψ|`.
pub fn pure_density(psi: &QuantumState) -> CMatrix {
    let v = psi.amplitudes();
    v * v.adjoint()
}

/// Population `⟨k|ρ|k⟩` of a flat basis index.
pub fn population(rho: &CMatrix, k: usize) -> f64 {
    rho[(k, k)].re
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::{ns, to_ns, us};

    fn fock_decay_model(levels: usize) -> InteractionModel {
        InteractionModel::single(levels)
    }

    fn idle(t: f64) -> GateStep {
        GateStep::idle(t)
    }

    #[test]
    fn rhs_vanishes_without_dynamics() {
        let m = fock_decay_model(4);
        let rho = pure_density(&m.basis_state(&[1, 2]).unwrap());
        let h = Operator::zeros(&m.dims()).unwrap();
        let d = lindblad_rhs(&rho, &h, &[]).unwrap();
        assert!(d.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn rhs_is_traceless_and_hermitian() {
        let m = fock_decay_model(4);
        let psi = (m.basis_state(&[1, 2]).unwrap().amplitudes() + m.basis_state(&[2, 1]).unwrap().amplitudes())
            * c(0.5f64.sqrt(), 0.0);
        let rho = pure_density(&QuantumState::new(psi, m.dims()).unwrap());
        let h = m.interaction_hamiltonian(StepTag::S { level: 1 }).unwrap();
        let d = lindblad_rhs(&rho, &h, &m.channels(&DecoherenceParams::new(us(1.0), us(2.0)))).unwrap();
        assert!(d.trace().norm() < 1e-12 * d.iter().map(|z| z.norm()).fold(0.0, f64::max));
        assert!((&d - d.adjoint()).iter().all(|z| z.norm() < 1e-6));
    }

    #[test]
    fn rhs_rejects_bad_density() {
        let m = fock_decay_model(2);
        let rho = CMatrix::identity(6, 6);
        assert!(lindblad_rhs(&rho, &Operator::zeros(&m.dims()).unwrap(), &[]).is_err());
    }

    #[test]
    fn tags_respect_model_kind() {
        let m = InteractionModel::single(4);
        assert!(m.interaction_hamiltonian(StepTag::C).is_err());
        let h = m.interaction_hamiltonian(StepTag::R12).unwrap();
        let idx = |q: usize, n: usize| q * 4 + n;
        // Only atom levels 1, 2 are coupled, identically for every Fock level.
        for n in 0..4 {
            assert!((h.matrix()[(idx(1, n), idx(2, n))] - c(m.omega2 / 2.0, 0.0)).norm() < 1e-6);
        }
        assert!(h.matrix()[(idx(0, 0), idx(1, 0))].norm() == 0.0);
    }

    #[test]
    fn coupler_tag_is_exact_exchange() {
        let m = InteractionModel::two(2);
        let h = m.interaction_hamiltonian(StepTag::C).unwrap();
        let idx = |qa: usize, qb: usize, na: usize, nb: usize| ((qa * 3 + qb) * 2 + na) * 2 + nb;
        assert_eq!(h.matrix().iter().filter(|z| z.norm() > 0.0).count(), 8);
        assert!((h.matrix()[(idx(1, 1, 1, 0), idx(0, 2, 1, 0))] - c(2f64.sqrt() * m.g, 0.0)).norm() < 1e-6);
    }

    #[test]
    fn selective_flip_ignores_other_fock_levels() {
        let m = InteractionModel::single(4);
        let h = m.interaction_hamiltonian(StepTag::R01 { j: 1 }).unwrap();
        let psi = m.basis_state(&[0, 2]).unwrap();
        assert!(h.apply(&psi).unwrap().norm() == 0.0);
    }

    #[test]
    fn area_check() {
        let m = InteractionModel::single(4);
        let mut s = m.step(&[(StepTag::R01 { j: 0 }, PI)]).unwrap();
        assert!((to_ns(s.duration) - 74.96).abs() < 0.05);
        s.duration *= 1.0 + 1e-4;
        assert!(matches!(m.check_step(&s), Err(Error::Calibration(_))));
    }

    #[test]
    fn sequence_durations() {
        let m = InteractionModel::single(6);
        for n in 0..4 {
            let t = total_duration(&single_qudit_swap_steps(&m, n).unwrap());
            assert!(t > ns(339.0) && t < ns(346.0), "{}", t);
        }
        let t2 = total_duration(&controlled_phase_steps(&InteractionModel::two(2), 1).unwrap());
        assert!((t2 - ns(160.0)).abs() < ns(2.0));
    }

    #[test]
    fn ideal_sequences_are_exact() {
        for n in 0..3 {
            let m = InteractionModel::single(n + 3);
            let out = ideal_evolution(&m, &single_qudit_swap_steps(&m, n).unwrap(), &m.basis_state(&[0, n]).unwrap())
                .unwrap();
            assert!(out.overlap2(&m.basis_state(&[0, n + 1]).unwrap()) > 1.0 - 1e-10);
        }
        let m = InteractionModel::two(3);
        let steps = controlled_phase_steps(&m, 2).unwrap();
        for (j, k, sign) in [(2, 2, -1.0), (2, 0, -1.0), (0, 2, -1.0), (1, 1, 1.0)] {
            let psi = m.basis_state(&[0, 0, j, k]).unwrap();
            let out = ideal_evolution(&m, &steps, &psi).unwrap();
            assert!((psi.inner(&out) - c(sign, 0.0)).norm() < 1e-9, "{j}{k}");
        }
    }

    #[test]
    fn qubit_amplitude_damping() {
        let m = InteractionModel::single(1);
        let d = DecoherenceParams { t_q: Some(us(1.0)), t_r: None };
        let rho0 = pure_density(&m.basis_state(&[1, 0]).unwrap());
        let rho = dense_master_solve(&m, &[idle(us(0.7))], &d, &rho0).unwrap();
        assert!((population(&rho, 1) - (-0.7f64).exp()).abs() < 1e-8);
    }

    #[test]
    fn dense_fock_cascade() {
        let m = fock_decay_model(6);
        let d = DecoherenceParams { t_q: None, t_r: Some(us(10.0)) };
        let rho0 = pure_density(&m.basis_state(&[0, 3]).unwrap());
        let rho = dense_master_solve(&m, &[idle(us(10.0))], &d, &rho0).unwrap();
        assert!((population(&rho, 3) - (-3f64).exp()).abs() < 1e-4);
        assert!((rho.trace() - ONE).norm() < 1e-9);
        assert!((&rho - rho.adjoint()).iter().all(|z| z.norm() < 1e-12));
    }

    #[test]
    fn dense_cap() {
        let m = InteractionModel::two(3);
        let rho0 = pure_density(&m.basis_state(&[0, 0, 0, 0]).unwrap());
        assert!(matches!(dense_master_solve(&m, &[], &DecoherenceParams::NONE, &rho0), Err(Error::HilbertSize { .. })));
    }

    #[test]
    fn no_decay_trajectory_is_closed_system() {
        let m = InteractionModel::single(4);
        let steps = single_qudit_swap_steps(&m, 1).unwrap();
        let run = run_trajectories(
            &m,
            &steps,
            &DecoherenceParams::NONE,
            &m.basis_state(&[0, 1]).unwrap(),
            &[("swap".into(), m.basis_state(&[0, 2]).unwrap())],
            4,
            1,
        )
        .unwrap();
        assert_eq!(run.total_jumps(), 0);
        assert!((run.estimators[0].mean - 1.0).abs() < 1e-6);
    }

    #[test]
    fn trajectories_are_seed_deterministic() {
        let d = DecoherenceParams::new(us(1.0), us(10.0));
        let a = serde_json::to_string(&swap_probability(&d, 2, 64, 9).unwrap()).unwrap();
        let b = serde_json::to_string(&swap_probability(&d, 2, 64, 9).unwrap()).unwrap();
        let c2 = serde_json::to_string(&swap_probability(&d, 2, 64, 10).unwrap()).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c2);
    }

    #[test]
    fn trajectory_fock_survival() {
        let m = fock_decay_model(5);
        let d = DecoherenceParams { t_q: None, t_r: Some(us(10.0)) };
        let run = run_trajectories(
            &m,
            &[idle(us(2.0))],
            &d,
            &m.basis_state(&[0, 3]).unwrap(),
            &[("n3".into(), m.basis_state(&[0, 3]).unwrap())],
            1024,
            5,
        )
        .unwrap();
        let e = &run.estimators[0];
        assert!((e.mean - (-0.6f64).exp()).abs() < 3.0 * e.std_error + 1e-3, "{e:?}");
    }

    #[test]
    fn decay_fit_recovers_synthetic_law() {
        let mut pts = Vec::new();
        for (tq, tr) in [(us(10.0), us(50.0)), (us(1.0), us(10.0))] {
            for n in 0..8 {
                let t = ns(344.0);
                pts.push(SweepPoint {
                    n,
                    t_q: tq,
                    t_r: tr,
                    duration: t,
                    value: 0.98 * (-0.7 * t / tq - n as f64 * t / tr).exp(),
                    std_error: 0.0,
                });
            }
        }
        let f = fit_decay_law(&pts, 1.0, None).unwrap();
        assert!(fit_decay_law(&pts, 1.0, Some(0.7)).unwrap().max_residual < 1e-12);
        assert!((f.alpha - 0.7).abs() < 1e-9 && (f.amplitude - 0.98).abs() < 1e-9 && f.max_residual < 1e-12);
    }

    #[test]
    fn probes_include_superposition() {
        let m = InteractionModel::two(4);
        assert_eq!(controlled_phase_probes(&m, 3).unwrap().len(), 5);
        assert_eq!(controlled_phase_probes(&InteractionModel::two(1), 0).unwrap().len(), 1);
    }

    #[test]
    fn negative_time_rejected() {
        assert!(DecoherenceParams::new(-1.0, 1.0).validate().is_err());
    }
}
