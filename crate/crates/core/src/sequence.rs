//! Assembly of gate sequences into executable schedules.
//!
//! A two-level rotation `U_{j,k}(λ, φ)` on Fock levels `j < k` is realized by
//! number-selective π-pulses that move the two amplitudes into the atom,
//! ladder hops of full swaps, one partial swap `S(λ)` and the mirror image
//! of the encoding. All phases are settled with zero-duration frame updates:
//! each flux pulse is bracketed by updates that turn it into an exact swap,
//! and each gate by updates that turn the ideal factor product into the
//! requested rotation.

use std::collections::HashMap;
use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{c, cis, eigh_matrix, ops, CMatrix, CVector, C64, I, ONE, ZERO};
use crate::model::{excitation_block, sigma_minus_matrix, SystemParams, TwoSystemParams};
use crate::plant::{pair_flux_propagator, to_interaction_frame, Plant};
use crate::pulse::{
    calibrate_pi_pulse, CalibrationMode, FluxShift, FrameUpdate, PulseSegment, Schedule, SegmentKind, Shape, Step,
    StepLabel, Transition,
};
use crate::spectrum::{golden_min, DressedBasis, Label};
use crate::units::{mhz, ns};

/// Pulse parameters shared by every gate of a schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GateConfig {
    /// Nominal Rabi rate of number-selective 0↔1 π-pulses (rad/s).
    pub omega1: f64,
    /// Nominal Rabi rate of unconditional 1↔2 π-pulses (rad/s).
    pub omega2: f64,
    pub shape: Shape,
    pub calibration: CalibrationMode,
    /// Flux ramp time (s).
    pub flux_rise: f64,
    /// Longest piecewise-constant step across a flux ramp (s).
    pub flux_substep: f64,
    pub check_selectivity: bool,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            omega1: mhz(6.67),
            omega2: mhz(25.0),
            shape: Shape::default(),
            calibration: CalibrationMode::default(),
            flux_rise: ns(2.0),
            flux_substep: ns(0.005),
            check_selectivity: true,
        }
    }
}

/// Two-level rotation `cos(a)·1 − i·sin(a)·(w|b⟩⟨a| + w̄|a⟩⟨b|)` on dressed indices.
#[derive(Debug, Clone, Copy)]
struct Rot {
    a: usize,
    b: usize,
    w: C64,
    half_angle: f64,
}

impl Rot {
    fn apply(&self, v: &mut CVector) {
        let (cs, sn) = (self.half_angle.cos(), self.half_angle.sin());
        let (va, vb) = (v[self.a], v[self.b]);
        v[self.a] = va * cs - I * sn * self.w.conj() * vb;
        v[self.b] = -I * sn * self.w * va + vb * cs;
    }
}

/// Factor of the ideal model a gate's frame corrections are derived from.
#[derive(Debug, Clone)]
enum IdealOp {
    Rot(Rot),
    /// Diagonal phases `|x⟩ → e^{iα}|x⟩` on dressed indices.
    Phases(Vec<(usize, f64)>),
}

impl IdealOp {
    fn apply(&self, v: &mut CVector) {
        match self {
            IdealOp::Rot(r) => r.apply(v),
            IdealOp::Phases(ph) => {
                for &(x, a) in ph {
                    v[x] *= cis(a);
                }
            }
        }
    }
}

fn unit(z: C64) -> C64 {
    if z.norm() > 0.0 {
        z / z.norm()
    } else {
        ONE
    }
}

/// Diagonal phases `pre`, `post` with `diag(post)·m·diag(pre)` matching `t`
/// entry by entry in phase. `m` and `t` must have equal entry magnitudes.
pub fn match_phases(m: [[C64; 2]; 2], t: [[C64; 2]; 2]) -> ([C64; 2], [C64; 2]) {
    const EPS: f64 = 1e-9;
    let big = |z: C64| z.norm() > EPS;
    if big(m[0][0]) && big(t[0][0]) && big(m[0][1]) && big(t[0][1]) {
        let q0 = unit(t[0][0] / m[0][0]);
        let q1 = unit(t[0][1] / m[0][1]);
        let p1 = unit(t[1][0] / (m[1][0] * q0));
        ([q0, q1], [ONE, p1])
    } else if big(m[0][1]) && big(t[0][1]) {
        ([ONE, unit(t[0][1] / m[0][1])], [ONE, unit(t[1][0] / m[1][0])])
    } else {
        ([unit(t[0][0] / m[0][0]), ONE], [ONE, unit(t[1][1] / m[1][1])])
    }
}

/// `U(λ, φ)` on an ordered level pair.
pub fn two_level_rotation(lambda: f64, phi: f64) -> [[C64; 2]; 2] {
    let (cs, sn) = (lambda.cos(), lambda.sin());
    [[c(cs, 0.0), -I * cis(-phi) * sn], [-I * cis(phi) * sn, c(cs, 0.0)]]
}

/// Atom frequency at which dressed `|2,level⟩` and `|1,level+1⟩` are resonant,
/// found as the minimum of their gap.
pub fn swap_resonance(p: &SystemParams, level: usize) -> Result<f64> {
    check_guard(p, level + 1)?;
    let n = level + 2;
    let gap = |w: f64| -> f64 {
        let q = p.with_omega01(w);
        let (states, block) = excitation_block(&q, n);
        let e = eigh_matrix(&block);
        let ia = states.iter().position(|s| *s == (2, level)).expect("state in block");
        let ib = states.iter().position(|s| *s == (1, level + 1)).expect("state in block");
        let mut weights: Vec<(f64, f64)> = (0..states.len())
            .map(|k| (e.vectors[(ia, k)].norm_sqr() + e.vectors[(ib, k)].norm_sqr(), e.values[k]))
            .collect();
        weights.sort_by(|x, y| y.0.total_cmp(&x.0));
        (weights[0].1 - weights[1].1).abs()
    };
    let bare = p.omega_r + (p.omega01 - p.omega12);
    Ok(golden_min(gap, bare - mhz(150.0), bare + mhz(150.0), 1e-10))
}

fn check_guard(p: &SystemParams, top: usize) -> Result<()> {
    if top + 1 >= p.resonator_levels {
        return Err(Error::GuardLevel { index: top, levels: p.resonator_levels });
    }
    Ok(())
}

/// Flux pulse realizing a swap of `|2,level⟩ ↔ |1,level+1⟩`.
#[derive(Debug, Clone)]
pub struct SwapCalibration {
    pub level: usize,
    pub theta: f64,
    pub target_omega01: f64,
    pub rise: f64,
    pub hold: f64,
    /// Pulse propagator in the idle interaction frame, dressed pair basis,
    /// for a pulse starting at `t = 0`. `None` when no pulse is needed.
    pub unitary: Option<CMatrix>,
}

impl SwapCalibration {
    pub fn duration(&self) -> f64 {
        if self.unitary.is_some() {
            2.0 * self.rise + self.hold
        } else {
            0.0
        }
    }
}

struct TrapezoidParts {
    up: CMatrix,
    down: CMatrix,
    plateau: crate::linalg::Eigh,
}

fn trapezoid_parts(p: &SystemParams, target: f64, rise: f64, substep: f64) -> TrapezoidParts {
    let idle = p.omega01;
    let up = pair_flux_propagator(p, &|t| idle + (target - idle) * t / rise, 0.0, rise, true, substep);
    let down = pair_flux_propagator(p, &|t| target + (idle - target) * t / rise, 0.0, rise, true, substep);
    let plateau = eigh_matrix(crate::model::jc_hamiltonian(&p.with_omega01(target)).matrix());
    TrapezoidParts { up, down, plateau }
}

fn trapezoid_frame_unitary(parts: &TrapezoidParts, basis: &DressedBasis, rise: f64, hold: f64) -> CMatrix {
    let u = if rise > 0.0 {
        &parts.down * parts.plateau.propagator(hold) * &parts.up
    } else {
        parts.plateau.propagator(hold)
    };
    to_interaction_frame(&u, &basis.vectors, &basis.energies, 0.0, 2.0 * rise + hold)
}

/// Plateau frequency and ramp propagators of a full swap on one level.
///
/// At idle the two swap states are already dressed, so the plateau sits
/// slightly past the bare resonance: there the rotation axis is orthogonal to
/// the idle eigenbasis and a half turn exchanges the idle eigenstates fully.
pub struct SwapPoint {
    pub level: usize,
    pub target_omega01: f64,
    /// Plateau length of the full swap (s).
    pub full_hold: f64,
    /// Transfer reached by the full swap.
    pub full_transfer: f64,
    p: SystemParams,
    basis: DressedBasis,
    parts: TrapezoidParts,
    a: usize,
    b: usize,
    rise: f64,
    substep: f64,
}

impl SwapPoint {
    pub fn new(p: &SystemParams, level: usize, cfg: &GateConfig) -> Result<Self> {
        let resonance = swap_resonance(p, level)?;
        let basis = DressedBasis::new(p);
        let a = basis.find((2, level)).ok_or_else(|| Error::Calibration("swap state missing".into()))?;
        let b = basis.find((1, level + 1)).ok_or_else(|| Error::Calibration("swap state missing".into()))?;
        let quarter = FRAC_PI_2 / (p.g * p.lambda * ((level + 1) as f64).sqrt());
        let rise = cfg.flux_rise;
        let best_hold = |parts: &TrapezoidParts| -> (f64, f64) {
            let f = |h: f64| -trapezoid_frame_unitary(parts, &basis, rise, h)[(b, a)].norm_sqr();
            let h = golden_min(f, 0.0, 1.3 * quarter, 1e-12);
            (h, -f(h))
        };
        let score = |w: f64| -> f64 { best_hold(&trapezoid_parts(p, w, rise, cfg.flux_substep)).1 };
        let step = mhz(15.0);
        let grid: Vec<f64> = (-5..=15).map(|k| resonance + k as f64 * step).collect();
        let coarse = grid.iter().map(|&w| (w, score(w))).max_by(|x, y| x.1.total_cmp(&y.1)).expect("non-empty grid").0;
        let target = golden_min(|w| -score(w), coarse - step, coarse + step, 1e-8);
        let parts = trapezoid_parts(p, target, rise, cfg.flux_substep);
        let (full_hold, full_transfer) = best_hold(&parts);
        Ok(Self {
            level,
            target_omega01: target,
            full_hold,
            full_transfer,
            p: *p,
            basis,
            parts,
            a,
            b,
            rise,
            substep: cfg.flux_substep,
        })
    }

    fn transfer(&self, parts: &TrapezoidParts, rise: f64, hold: f64) -> f64 {
        trapezoid_frame_unitary(parts, &self.basis, rise, hold)[(self.b, self.a)].norm_sqr()
    }

    /// Pulse transferring `sin²θ` of `|2,level⟩` into `|1,level+1⟩`; for small
    /// angles the ramps are shortened at zero plateau.
    pub fn calibrate(&self, theta: f64) -> SwapCalibration {
        let want = theta.sin().powi(2);
        let mut cal = SwapCalibration {
            level: self.level,
            theta,
            target_omega01: self.target_omega01,
            rise: self.rise,
            hold: 0.0,
            unitary: None,
        };
        if want < 1e-14 {
            return cal;
        }
        if self.transfer(&self.parts, self.rise, 0.0) > want {
            let (mut lo, mut hi) = (0.0, self.rise);
            while hi - lo > 1e-6 * self.rise {
                let mid = 0.5 * (lo + hi);
                let parts = trapezoid_parts(&self.p, self.target_omega01, mid, self.substep);
                if self.transfer(&parts, mid, 0.0) > want {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            cal.rise = 0.5 * (lo + hi);
            let parts = trapezoid_parts(&self.p, self.target_omega01, cal.rise, self.substep);
            cal.unitary = Some(trapezoid_frame_unitary(&parts, &self.basis, cal.rise, 0.0));
            return cal;
        }
        cal.hold = if want >= self.full_transfer {
            self.full_hold
        } else {
            let (mut lo, mut hi) = (0.0, self.full_hold);
            while hi - lo > 1e-6 * self.full_hold {
                let mid = 0.5 * (lo + hi);
                if self.transfer(&self.parts, self.rise, mid) < want {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let (tl, th) = (self.transfer(&self.parts, self.rise, lo), self.transfer(&self.parts, self.rise, hi));
            lo + (want - tl) / (th - tl) * (hi - lo)
        };
        cal.unitary = Some(trapezoid_frame_unitary(&self.parts, &self.basis, self.rise, cal.hold));
        cal
    }
}

/// One-off [`SwapPoint`] calibration for angle `theta`.
pub fn calibrate_swap(p: &SystemParams, level: usize, theta: f64, cfg: &GateConfig) -> Result<SwapCalibration> {
    Ok(SwapPoint::new(p, level, cfg)?.calibrate(theta))
}

/// Coupler pulse realizing a controlled phase on the encoded atom state `|1,1⟩`.
#[derive(Debug, Clone)]
pub struct CouplerCalibration {
    pub theta: f64,
    /// Atom B frequency during the exchange (rad/s).
    pub target_omega01_b: f64,
    pub hold: f64,
    /// Conditional phase the calibration reached (rad).
    pub achieved: f64,
}

struct ProductModel {
    energies: Vec<f64>,
    labels: Vec<(Label, Label)>,
    excitation: Vec<usize>,
    coupler: CMatrix,
}

impl ProductModel {
    fn new(tp: &TwoSystemParams, omega_b: f64) -> Self {
        let a = DressedBasis::new(&tp.a);
        let b = DressedBasis::new(&tp.b.with_omega01(omega_b));
        let plant = Plant::Pair(TwoSystemParams { b: tp.b.with_omega01(omega_b), ..*tp });
        let v = a.vectors.kronecker(&b.vectors);
        let coupler = v.adjoint() * plant.coupler_operator() * &v;
        let mut energies = Vec::new();
        let mut labels = Vec::new();
        let mut excitation = Vec::new();
        for i in 0..a.energies.len() {
            for j in 0..b.energies.len() {
                energies.push(a.energies[i] + b.energies[j]);
                labels.push((a.labels[i].0, b.labels[j].0));
                excitation.push(a.excitation[i] + b.excitation[j]);
            }
        }
        Self { energies, labels, excitation, coupler }
    }

    fn find(&self, la: Label, lb: Label) -> usize {
        self.labels.iter().position(|l| *l == (la, lb)).expect("encoded state present")
    }

    /// Sector Hamiltonian (dressed, coupler on) containing state `x`.
    fn sector(&self, x: usize, g_ab: f64) -> (Vec<usize>, crate::linalg::Eigh) {
        let idx: Vec<usize> = (0..self.energies.len()).filter(|&k| self.excitation[k] == self.excitation[x]).collect();
        let h = CMatrix::from_fn(idx.len(), idx.len(), |r, s| {
            let d = if r == s { c(self.energies[idx[r]], 0.0) } else { ZERO };
            d + self.coupler[(idx[r], idx[s])] * g_ab
        });
        (idx, eigh_matrix(&h))
    }

    /// Phase of `⟨x| e^{iH_off t} e^{−iH_on t} |x⟩`.
    fn phase(&self, x: usize, g_ab: f64, t: f64) -> f64 {
        let (idx, e) = self.sector(x, g_ab);
        let k = idx.iter().position(|&i| i == x).unwrap();
        let amp: C64 =
            (0..idx.len()).map(|m| e.vectors[(k, m)] * e.vectors[(k, m)].conj() * cis(-e.values[m] * t)).sum();
        (amp * cis(self.energies[x] * t)).arg()
    }

    /// Splitting of the two sector eigenstates built from `x` and `y`.
    fn splitting(&self, x: usize, y: usize, g_ab: f64) -> f64 {
        let (idx, e) = self.sector(x, g_ab);
        let (kx, ky) = (idx.iter().position(|&i| i == x).unwrap(), idx.iter().position(|&i| i == y).unwrap());
        let mut w: Vec<(f64, f64)> = (0..idx.len())
            .map(|m| (e.vectors[(kx, m)].norm_sqr() + e.vectors[(ky, m)].norm_sqr(), e.values[m]))
            .collect();
        w.sort_by(|p, q| q.0.total_cmp(&p.0));
        (w[0].1 - w[1].1).abs()
    }
}

fn wrap(x: f64) -> f64 {
    let y = x.rem_euclid(2.0 * PI);
    if y > PI {
        y - 2.0 * PI
    } else {
        y
    }
}

/// Lowest level other than `j`.
fn other_level(j: usize) -> usize {
    if j == 0 {
        1
    } else {
        0
    }
}

/// Largest `|Δ/Ω|` of a single exchange round trip; beyond it the detuned
/// exchange runs into other resonances of the shifted atom.
pub const MAX_EXCHANGE_ASYMMETRY: f64 = 0.4;

/// Split a conditional phase into round trips that each stay within
/// [`MAX_EXCHANGE_ASYMMETRY`]; phases of consecutive round trips add.
pub fn exchange_angles(theta: f64) -> Vec<f64> {
    let t = theta.rem_euclid(2.0 * PI);
    if t < 1e-12 || 2.0 * PI - t < 1e-12 {
        return Vec::new();
    }
    let lo = PI * (1.0 - MAX_EXCHANGE_ASYMMETRY);
    let hi = PI * (1.0 + MAX_EXCHANGE_ASYMMETRY);
    if t < lo {
        vec![(t + 2.0 * PI) / 2.0; 2]
    } else if t > hi {
        vec![t / 2.0; 2]
    } else {
        vec![t]
    }
}

/// Calibrate the detuned exchange `|1,1⟩ ↔ |0,2⟩` (atom labels) for a
/// conditional phase `theta` on Fock levels `(j, k)`.
///
/// A full round trip at detuning `Δ` imprints `π(1 − Δ/√(Δ² + 4G²))`; the
/// detuning and hold are refined on the exact dressed model so stray
/// dispersive shifts are absorbed.
pub fn calibrate_coupler(tp: &TwoSystemParams, j: usize, k: usize, theta: f64) -> Result<CouplerCalibration> {
    tp.validate()?;
    if tp.g_ab <= 0.0 {
        return Err(Error::Unsupported("controlled phase needs a non-zero coupler".into()));
    }
    check_guard(&tp.a, j)?;
    check_guard(&tp.b, k)?;
    let da = DressedBasis::new(&tp.a);
    let w_a = da.energy((1, j)).unwrap() - da.energy((0, j)).unwrap();
    let w_b12 = |w: f64| {
        let db = DressedBasis::new(&tp.b.with_omega01(w));
        db.energy((2, k)).unwrap() - db.energy((1, k)).unwrap()
    };
    let guess = w_a + (tp.b.omega01 - tp.b.omega12);
    let (mut lo, mut hi) = (guess - mhz(200.0), guess + mhz(200.0));
    if (w_b12(lo) - w_a).signum() == (w_b12(hi) - w_a).signum() {
        return Err(Error::Calibration("no exchange resonance near the expected flux point".into()));
    }
    while hi - lo > 1e-12 * guess {
        let mid = 0.5 * (lo + hi);
        if (w_b12(mid) - w_a).signum() == (w_b12(lo) - w_a).signum() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let resonance = 0.5 * (lo + hi);

    let theta_mod = theta.rem_euclid(2.0 * PI);
    let x = 1.0 - theta_mod / PI;
    if x.abs() > MAX_EXCHANGE_ASYMMETRY + 1e-9 {
        return Err(Error::Calibration(format!(
            "conditional phase {theta} is outside a single round trip; use exchange_angles"
        )));
    }
    let g_eff = tp.g_ab * tp.b.lambda;
    let detuning = 2.0 * g_eff * x / (1.0 - x * x).sqrt();

    let eval = |w: f64| -> (f64, f64) {
        let m = ProductModel::new(tp, w);
        let ko = other_level(k);
        let jo = other_level(j);
        let x11 = m.find((1, j), (1, k));
        let x02 = m.find((0, j), (2, k));
        let t = 2.0 * PI / m.splitting(x11, x02, tp.g_ab);
        let p11 = m.phase(x11, tp.g_ab, t);
        let p10 = m.phase(m.find((1, j), (0, ko)), tp.g_ab, t);
        let p01 = m.phase(m.find((0, jo), (1, k)), tp.g_ab, t);
        let p00 = m.phase(m.find((0, jo), (0, ko)), tp.g_ab, t);
        (p11 - p10 - p01 + p00, t)
    };
    let residual = |w: f64| wrap(eval(w).0 - theta);
    let (mut w0, mut w1) = (resonance + detuning, resonance + detuning + mhz(0.5));
    let (mut r0, mut r1) = (residual(w0), residual(w1));
    for _ in 0..40 {
        if r1.abs() < 1e-10 || r1 == r0 {
            break;
        }
        let w2 = w1 - r1 * (w1 - w0) / (r1 - r0);
        w0 = w1;
        r0 = r1;
        w1 = w2;
        r1 = residual(w1);
    }
    if r1.abs() > 1e-6 {
        return Err(Error::Calibration(format!("conditional phase calibration stalled at residual {r1}")));
    }
    let (achieved, hold) = eval(w1);
    Ok(CouplerCalibration { theta, target_omega01_b: w1, hold, achieved })
}

/// Incremental schedule assembly with frame bookkeeping.
pub struct SequenceBuilder {
    plant: Plant,
    pairs: Vec<SystemParams>,
    bases: Vec<DressedBasis>,
    drives: Vec<CMatrix>,
    cfg: GateConfig,
    schedule: Schedule,
    cursor: f64,
    swaps: HashMap<(usize, usize), SwapPoint>,
}

impl SequenceBuilder {
    pub fn new(plant: Plant, cfg: GateConfig) -> Result<Self> {
        plant.validate()?;
        let pairs = plant.pairs();
        let bases: Vec<DressedBasis> = pairs.iter().map(DressedBasis::new).collect();
        let drives = pairs
            .iter()
            .zip(&bases)
            .map(|(p, b)| {
                let sm = sigma_minus_matrix(p);
                let x = ops::kron_raw(&[&(&sm + sm.adjoint()), &ops::identity(p.resonator_levels)]);
                b.vectors.adjoint() * x * &b.vectors
            })
            .collect();
        let schedule = Schedule::new(pairs.iter().map(|p| p.omega01).collect());
        Ok(Self { plant, pairs, bases, drives, cfg, schedule, cursor: 0.0, swaps: HashMap::new() })
    }

    pub fn plant(&self) -> &Plant {
        &self.plant
    }

    pub fn cursor(&self) -> f64 {
        self.cursor
    }

    pub fn finish(self) -> Schedule {
        self.schedule
    }

    fn index(&self, qudit: usize, label: Label) -> Result<usize> {
        self.bases[qudit]
            .find(label)
            .ok_or_else(|| Error::IndexOutOfRange(format!("dressed state {label:?} missing on qudit {qudit}")))
    }

    /// Dressed transition frequency of qudit `q` between `lo` and `hi`.
    fn frequency(&self, q: usize, lo: Label, hi: Label) -> Result<f64> {
        Ok(self.bases[q].energies[self.index(q, hi)?] - self.bases[q].energies[self.index(q, lo)?])
    }

    /// π-pulse on `transition` conditioned on Fock level `n`, starting at `start`.
    fn pi_pulse(&self, q: usize, transition: Transition, n: usize, start: f64) -> Result<(PulseSegment, Rot)> {
        let p = &self.pairs[q];
        let lo = (transition.lower(), n);
        let hi = (transition.lower() + 1, n);
        let carrier = self.frequency(q, lo, hi)?;
        let splitting = if transition == Transition::T01 && self.cfg.check_selectivity {
            let neighbours: Vec<f64> = [n.checked_sub(1), Some(n + 1)]
                .into_iter()
                .flatten()
                .filter(|&m| m + 1 < p.resonator_levels)
                .map(|m| self.frequency(q, (0, m), (1, m)))
                .collect::<Result<_>>()?;
            neighbours.iter().map(|w| (w - carrier).abs()).reduce(f64::min)
        } else {
            None
        };
        let omega = match transition {
            Transition::T01 => self.cfg.omega1,
            Transition::T12 => self.cfg.omega2,
        };
        let mut seg = calibrate_pi_pulse(transition, omega, splitting, self.cfg.shape, self.cfg.calibration)?;
        let (ia, ib) = (self.index(q, lo)?, self.index(q, hi)?);
        let x_ba = self.drives[q][(ib, ia)];
        if let SegmentKind::Microwave(m) = &mut seg.kind {
            m.carrier = carrier;
            m.matrix_element = x_ba.norm();
        }
        seg.qudit = q;
        seg.start = start;
        Ok((seg, Rot { a: ia, b: ib, w: unit(x_ba), half_angle: FRAC_PI_2 }))
    }

    /// Second-order phases a pulse imprints while driving other dressed
    /// lines off resonance. A line `x↔y` (`x` lower) with Rabi rate `Ω_xy`
    /// and detuning `Δ = ω_d − ω_xy` shifts `x` by `Ω_xy²/4Δ` and `y` by the
    /// opposite, plus the counter-rotating counterpart at `ω_d + ω_xy`.
    /// Lines too close to the carrier for perturbation theory are skipped;
    /// the addressed pair only keeps its common-mode shift.
    fn light_shift_phases(&self, q: usize, seg: &PulseSegment, a: usize, b: usize) -> Vec<(usize, f64)> {
        let SegmentKind::Microwave(m) = &seg.kind else { return Vec::new() };
        let e = &self.bases[q].energies;
        let x = &self.drives[q];
        let dim = e.len();
        let power = m.amplitude * m.amplitude * seg.duration * m.shape.power_fraction();
        let mut shift = vec![0.0; dim];
        for u in 0..dim {
            for v in u + 1..dim {
                if (u, v) == (a.min(b), a.max(b)) {
                    continue;
                }
                let rel = x[(u, v)].norm() / m.matrix_element;
                let (lo, hi) = if e[u] < e[v] { (u, v) } else { (v, u) };
                let w = e[hi] - e[lo];
                let det = m.carrier - w;
                if rel < 1e-12 || det.abs() < 2.0 * rel * m.amplitude {
                    continue;
                }
                let s = rel * rel * power / 4.0 * (1.0 / det - 1.0 / (m.carrier + w));
                shift[lo] += s;
                shift[hi] -= s;
            }
        }
        let common = 0.5 * (shift[a] + shift[b]);
        shift[a] = common;
        shift[b] = common;
        shift.iter().enumerate().filter(|(_, s)| **s != 0.0).map(|(i, s)| (i, -s)).collect()
    }

    fn push_pulse(&mut self, q: usize, transition: Transition, n: usize, ideal: &mut Vec<IdealOp>) -> Result<()> {
        let (seg, rot) = self.pi_pulse(q, transition, n, self.cursor)?;
        let shifts = self.light_shift_phases(q, &seg, rot.a, rot.b);
        let label = match transition {
            Transition::T01 => StepLabel::R01 { qudit: q, n },
            Transition::T12 => StepLabel::R12 { qudit: q, n },
        };
        self.schedule.steps.push(Step { label, start: seg.start, end: seg.end() });
        self.cursor = seg.end();
        self.schedule.segments.push(seg);
        ideal.push(IdealOp::Rot(rot));
        ideal.push(IdealOp::Phases(shifts));
        Ok(())
    }

    fn swap_calibration(&mut self, q: usize, level: usize, theta: f64) -> Result<SwapCalibration> {
        if !self.swaps.contains_key(&(q, level)) {
            let point = SwapPoint::new(&self.pairs[q], level, &self.cfg)?;
            self.swaps.insert((q, level), point);
        }
        Ok(self.swaps[&(q, level)].calibrate(theta))
    }

    /// Exact swap `S(θ)` of `|2,level⟩ ↔ |1,level+1⟩` on qudit `q`.
    fn push_swap(&mut self, q: usize, level: usize, theta: f64, ideal: &mut Vec<IdealOp>) -> Result<()> {
        let cal = self.swap_calibration(q, level, theta)?;
        let (a, b) = (self.index(q, (2, level))?, self.index(q, (1, level + 1))?);
        let t1 = self.cursor;
        if let Some(u0) = &cal.unitary {
            let dur = cal.duration();
            let t2 = t1 + dur;
            let e = &self.bases[q].energies;
            // Shift the start-at-zero propagator to start at t1.
            let w = |x: usize, y: usize| u0[(x, y)] * cis((e[x] - e[y]) * t1);
            let m = [[w(a, a), w(a, b)], [w(b, a), w(b, b)]];
            let target = two_level_rotation(theta, 0.0);
            let (pre, post) = match_phases(m, target);
            let labels = &self.bases[q].labels;
            self.schedule.frames.push(FrameUpdate {
                time: t1,
                qudit: q,
                phases: vec![(vec![2, level], pre[0].arg()), (vec![1, level + 1], pre[1].arg())],
            });
            let mut post_phases = vec![(vec![2, level], post[0].arg()), (vec![1, level + 1], post[1].arg())];
            for x in 0..e.len() {
                if x != a && x != b && u0[(x, x)].norm() > 0.5 {
                    let ((lq, ln), _) = labels[x];
                    post_phases.push((vec![lq, ln], -u0[(x, x)].arg()));
                }
            }
            self.schedule.frames.push(FrameUpdate { time: t2, qudit: q, phases: post_phases });
            self.schedule.segments.push(PulseSegment {
                qudit: q,
                start: t1,
                duration: dur,
                kind: SegmentKind::FluxShift(FluxShift {
                    target_omega01: cal.target_omega01,
                    idle_omega01: self.pairs[q].omega01,
                    rise: cal.rise,
                }),
            });
            self.cursor = t2;
        }
        self.schedule.steps.push(Step {
            label: StepLabel::Swap { qudit: q, level, theta },
            start: t1,
            end: self.cursor,
        });
        ideal.push(IdealOp::Rot(Rot { a, b, w: ONE, half_angle: theta }));
        Ok(())
    }

    /// `U_{j,k}(λ, φ)` on qudit `q`: rotation by `λ` between Fock levels `j < k`.
    pub fn rotation(&mut self, q: usize, j: usize, k: usize, lambda: f64, phi: f64) -> Result<()> {
        if q >= self.pairs.len() {
            return Err(Error::IndexOutOfRange(format!("qudit {q} does not exist")));
        }
        if k <= j {
            return Err(Error::Validation(format!("rotation levels must satisfy j < k, got ({j}, {k})")));
        }
        check_guard(&self.pairs[q], k)?;
        let start = self.cursor;
        let mut ideal = Vec::new();
        // Encode: |0,j⟩ → |2,k−1⟩ via the swap ladder, |0,k⟩ → |1,k⟩.
        self.push_pulse(q, Transition::T01, j, &mut ideal)?;
        self.push_pulse(q, Transition::T12, j, &mut ideal)?;
        for m in j..k - 1 {
            self.push_swap(q, m, FRAC_PI_2, &mut ideal)?;
            self.push_pulse(q, Transition::T12, m + 1, &mut ideal)?;
        }
        self.push_pulse(q, Transition::T01, k, &mut ideal)?;
        self.push_swap(q, k - 1, lambda, &mut ideal)?;
        // Decode: mirror image.
        self.push_pulse(q, Transition::T01, k, &mut ideal)?;
        for m in (j..k - 1).rev() {
            self.push_pulse(q, Transition::T12, m + 1, &mut ideal)?;
            self.push_swap(q, m, FRAC_PI_2, &mut ideal)?;
        }
        self.push_pulse(q, Transition::T12, j, &mut ideal)?;
        self.push_pulse(q, Transition::T01, j, &mut ideal)?;

        let (ij, ik) = (self.index(q, (0, j))?, self.index(q, (0, k))?);
        let dim = self.bases[q].energies.len();
        let column = |start: usize| {
            let mut v = CVector::from_element(dim, ZERO);
            v[start] = ONE;
            for r in &ideal {
                r.apply(&mut v);
            }
            v
        };
        let (cj, ck) = (column(ij), column(ik));
        let m = [[cj[ij], ck[ij]], [cj[ik], ck[ik]]];
        let (pre, post) = match_phases(m, two_level_rotation(lambda, phi));
        self.schedule.frames.push(FrameUpdate {
            time: start,
            qudit: q,
            phases: vec![(vec![0, j], pre[0].arg()), (vec![0, k], pre[1].arg())],
        });
        self.schedule.frames.push(FrameUpdate {
            time: self.cursor,
            qudit: q,
            phases: vec![(vec![0, j], post[0].arg()), (vec![0, k], post[1].arg())],
        });
        Ok(())
    }

    /// Virtual phase layer `|n⟩ → e^{iα_n}|n⟩` on qudit `q`.
    pub fn phase_layer(&mut self, q: usize, phases: &[(usize, f64)]) -> Result<()> {
        if q >= self.pairs.len() {
            return Err(Error::IndexOutOfRange(format!("qudit {q} does not exist")));
        }
        for &(n, _) in phases {
            self.index(q, (0, n))?;
        }
        self.schedule.frames.push(FrameUpdate {
            time: self.cursor,
            qudit: q,
            phases: phases.iter().map(|&(n, a)| (vec![0, n], a)).collect(),
        });
        Ok(())
    }

    /// Controlled phase `exp(−iθ|j,k⟩⟨j,k|)` on Fock levels of qudits A and B
    /// (local phases of the other product states are left uncorrected).
    pub fn controlled_phase(&mut self, j: usize, k: usize, theta: f64) -> Result<()> {
        let Plant::Pair(tp) = self.plant else {
            return Err(Error::Unsupported("controlled phase needs two qudits".into()));
        };
        check_guard(&tp.a, j)?;
        check_guard(&tp.b, k)?;
        let encode = |b: &mut Self| -> Result<()> {
            let t0 = b.cursor;
            let (sa, _) = b.pi_pulse(0, Transition::T01, j, t0)?;
            let (sb, _) = b.pi_pulse(1, Transition::T01, k, t0)?;
            b.schedule.steps.push(Step { label: StepLabel::R01 { qudit: 0, n: j }, start: t0, end: sa.end() });
            b.schedule.steps.push(Step { label: StepLabel::R01 { qudit: 1, n: k }, start: t0, end: sb.end() });
            b.cursor = sa.end().max(sb.end());
            b.schedule.segments.push(sa);
            b.schedule.segments.push(sb);
            Ok(())
        };
        encode(self)?;
        let t1 = self.cursor;
        for angle in exchange_angles(-theta) {
            let cal = calibrate_coupler(&tp, j, k, angle)?;
            let (t0, rise) = (self.cursor, self.cfg.flux_rise);
            self.schedule.segments.push(PulseSegment {
                qudit: 1,
                start: t0,
                duration: 2.0 * rise + cal.hold,
                kind: SegmentKind::FluxShift(FluxShift {
                    target_omega01: cal.target_omega01_b,
                    idle_omega01: tp.b.omega01,
                    rise,
                }),
            });
            self.schedule.segments.push(PulseSegment {
                qudit: 0,
                start: t0 + rise,
                duration: cal.hold,
                kind: SegmentKind::Coupler,
            });
            self.cursor = t0 + 2.0 * rise + cal.hold;
        }
        self.schedule.steps.push(Step { label: StepLabel::Coupler { theta }, start: t1, end: self.cursor });
        encode(self)
    }
}

/// `U_{j,j+1}(θ, φ)`: seven-factor sequence, full swap at `θ = π/2`.
pub fn build_single_qudit_sequence(
    p: &SystemParams,
    j: usize,
    theta: f64,
    phi: f64,
    cfg: &GateConfig,
) -> Result<Schedule> {
    let mut b = SequenceBuilder::new(Plant::Single(*p), *cfg)?;
    b.rotation(0, j, j + 1, theta, phi)?;
    Ok(b.finish())
}

/// Rotation between `j` and `j + span` through full-swap ladder hops.
///
/// `theta` follows the ladder convention in which `θ = π` is a full
/// population transfer, so the realized rotation is `U_{j,j+span}(θ/2, 0)`.
pub fn build_extended_rotation(
    p: &SystemParams,
    j: usize,
    span: usize,
    theta: f64,
    cfg: &GateConfig,
) -> Result<Schedule> {
    if !(2..=3).contains(&span) {
        return Err(Error::Validation(format!("extended rotations span 2 or 3 levels, got {span}")));
    }
    let mut b = SequenceBuilder::new(Plant::Single(*p), *cfg)?;
    b.rotation(0, j, j + span, theta / 2.0, 0.0)?;
    Ok(b.finish())
}

/// Controlled phase on `|j⟩_A|k⟩_B`: simultaneous encode, coupler exchange, decode.
pub fn build_two_qudit_sequence(
    tp: &TwoSystemParams,
    j: usize,
    k: usize,
    theta: f64,
    cfg: &GateConfig,
) -> Result<Schedule> {
    let mut b = SequenceBuilder::new(Plant::Pair(*tp), *cfg)?;
    b.controlled_phase(j, k, theta)?;
    Ok(b.finish())
}
