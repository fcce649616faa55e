//! Atom–resonator Hamiltonians.
//!
//! A single pair lives on `atom ⊗ resonator` with basis `|q, n⟩` (atom level
//! `q`, photon number `n`). The coupled two-pair system lives on
//! `atomA ⊗ atomB ⊗ resA ⊗ resB` with basis `|qa, qb, na, nb⟩`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{c, ops, CMatrix, Operator};
use crate::units::{ghz, mhz};

/// Parameters of one artificial atom coupled to one resonator mode.
///
/// All frequencies are angular (rad/s). The atom's second-excited energy is
/// always `omega01 + omega12`; there is no separate field for it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub omega01: f64,
    pub omega12: f64,
    /// Third transition; required when `atom_levels == 4`.
    pub omega23: Option<f64>,
    pub omega_r: f64,
    pub g: f64,
    /// Ratio of the 1→2 to the 0→1 lowering matrix element.
    pub lambda: f64,
    /// 2→3 lowering matrix element; defaults to `√3 · λ/√2`.
    pub lambda23: Option<f64>,
    pub atom_levels: usize,
    pub resonator_levels: usize,
}

/// Perturbative energies `(E_{0,n}, E_{1,n}, E_{2,n})` in rad/s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbativeEnergies {
    pub e0: f64,
    pub e1: f64,
    pub e2: f64,
}

impl SystemParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Validation(msg));
        if !(3..=4).contains(&self.atom_levels) {
            return bad(format!("atom_levels must be 3 or 4, got {}", self.atom_levels));
        }
        if self.resonator_levels < 2 {
            return bad(format!("resonator_levels must be at least 2, got {}", self.resonator_levels));
        }
        for (name, v) in [("omega01", self.omega01), ("omega12", self.omega12), ("omega_r", self.omega_r)] {
            if !(v > 0.0) || !v.is_finite() {
                return bad(format!("{name} must be positive and finite"));
            }
        }
        if !(self.g >= 0.0) || !self.g.is_finite() {
            return bad("g must be non-negative".into());
        }
        if !(self.lambda > 0.0) {
            return bad("lambda must be positive".into());
        }
        if self.omega12 >= self.omega01 {
            return bad("omega12 must be below omega01".into());
        }
        if self.atom_levels == 4 {
            match self.omega23 {
                Some(w) if w > 0.0 => {}
                _ => return bad("a 4-level atom needs a positive omega23".into()),
            }
        }
        Ok(())
    }

    /// Guard levels required above the highest qudit level.
    pub const GUARD_LEVELS: usize = 2;

    /// Check the resonator can host a `d`-level qudit plus guard levels.
    pub fn check_qudit_dimension(&self, d: usize) -> Result<()> {
        if self.resonator_levels < d + Self::GUARD_LEVELS {
            return Err(Error::GuardLevel { index: d - 1, levels: self.resonator_levels });
        }
        Ok(())
    }

    pub fn omega02(&self) -> f64 {
        self.omega01 + self.omega12
    }

    pub fn lambda23(&self) -> f64 {
        self.lambda23.unwrap_or(3f64.sqrt() * self.lambda / 2f64.sqrt())
    }

    /// Bare atom energies `[0, ω01, ω02, (ω03)]`.
    pub fn atom_energies(&self) -> Vec<f64> {
        let mut e = vec![0.0, self.omega01, self.omega02()];
        if self.atom_levels == 4 {
            e.push(self.omega02() + self.omega23.unwrap_or(0.0));
        }
        e
    }

    /// Matrix elements `⟨k|σ−|k+1⟩`.
    pub fn lowering_elements(&self) -> Vec<f64> {
        let mut m = vec![1.0, self.lambda];
        if self.atom_levels == 4 {
            m.push(self.lambda23());
        }
        m
    }

    pub fn dims(&self) -> [usize; 2] {
        [self.atom_levels, self.resonator_levels]
    }

    pub fn dim(&self) -> usize {
        self.atom_levels * self.resonator_levels
    }

    /// Flat index of `|q, n⟩`.
    pub fn index(&self, q: usize, n: usize) -> usize {
        q * self.resonator_levels + n
    }

    /// Same atom flux-tuned to a new `omega01`; anharmonicities are kept.
    pub fn with_omega01(&self, omega01: f64) -> Self {
        let shift = omega01 - self.omega01;
        Self { omega01, omega12: self.omega12 + shift, omega23: self.omega23.map(|w| w + shift), ..*self }
    }

    /// Check the three dispersive detunings against `3g`.
    pub fn dispersive_guard(&self) -> Result<()> {
        let threshold = 3.0 * self.g;
        // Only the single-photon detunings appear as denominators in the
        // second-order energies; the two-photon condition ω02 = 2ωr couples
        // levels at higher order and does not invalidate them.
        let detunings = [self.omega_r - self.omega01, self.omega_r - self.omega12];
        for d in detunings {
            if d.abs() <= threshold {
                return Err(Error::ResonanceProximity { detuning: d, threshold });
            }
        }
        Ok(())
    }
}

pub mod presets {
    //! Reference parameter sets.
    use super::*;

    /// 3-level transmon-like atom at ω01/2π = 7 GHz, ω12/2π = 6.58 GHz,
    /// λ = 1.46, g/2π = 35 MHz, for a resonator at `omega_r`.
    pub fn stark_reference(omega_r: f64) -> SystemParams {
        SystemParams {
            omega01: ghz(7.0),
            omega12: ghz(6.58),
            omega23: None,
            omega_r,
            g: mhz(35.0),
            lambda: 1.46,
            lambda23: None,
            atom_levels: 3,
            resonator_levels: 10,
        }
    }

    /// Gate-simulation system: 4-level atom with (ω01−ω12)/2π = 420 MHz and
    /// (ω01−ω23)/2π = 910 MHz, idling at ω01/2π = 7.28 GHz against a 7 GHz
    /// resonator with g/2π = 35 MHz, ten resonator levels.
    pub fn gate_reference() -> SystemParams {
        SystemParams {
            omega01: ghz(7.28),
            omega12: ghz(7.28) - mhz(420.0),
            omega23: Some(ghz(7.28) - mhz(910.0)),
            omega_r: ghz(7.0),
            g: mhz(35.0),
            lambda: 1.46,
            lambda23: None,
            atom_levels: 4,
            resonator_levels: 10,
        }
    }

    /// Two pairs for the controlled-phase gate.
    ///
    /// Atom B has a 600 MHz anharmonicity and idles next to the exchange
    /// point `ω_B12 ≈ ω_A01`, so the flux excursion is a few MHz and never
    /// approaches B's one- or two-photon resonances with its resonator
    /// (`ω_B02 = 2ω_rB` would turn the exchange into a three-level process).
    /// Both atoms idle in the straddling regime.
    pub fn two_qudit_reference(resonator_levels: usize) -> TwoSystemParams {
        let a = SystemParams {
            omega01: ghz(7.28),
            omega12: ghz(7.28) - mhz(420.0),
            omega23: None,
            omega_r: ghz(7.0),
            g: mhz(35.0),
            lambda: 1.46,
            lambda23: None,
            atom_levels: 3,
            resonator_levels,
        };
        let b = SystemParams { omega01: ghz(7.94), omega12: ghz(7.94) - mhz(600.0), omega_r: ghz(7.81), ..a };
        TwoSystemParams { a, b, g_ab: mhz(35.0) }
    }
}

/// Lowering operator `σ−` of the atom alone.
pub fn sigma_minus(p: &SystemParams) -> Operator {
    Operator::from_matrix(sigma_minus_matrix(p)).expect("atom dimension is small")
}

pub(crate) fn sigma_minus_matrix(p: &SystemParams) -> CMatrix {
    let n = p.atom_levels;
    let mut m = CMatrix::zeros(n, n);
    for (k, &el) in p.lowering_elements().iter().enumerate().take(n - 1) {
        m[(k, k + 1)] = c(el, 0.0);
    }
    m
}

fn atom_hamiltonian_matrix(p: &SystemParams) -> CMatrix {
    let e = p.atom_energies();
    CMatrix::from_diagonal(&nalgebra::DVector::from_iterator(e.len(), e.iter().map(|&x| c(x, 0.0))))
}

/// Single-pair Hamiltonian `H_Q + ω_r a†a + g(a σ₊ + a† σ₋)` on atom ⊗ resonator.
pub fn jc_hamiltonian(p: &SystemParams) -> Operator {
    let (na, nr) = (p.atom_levels, p.resonator_levels);
    let sm = sigma_minus_matrix(p);
    let a = ops::destroy(nr);
    let h = ops::kron_raw(&[&atom_hamiltonian_matrix(p), &ops::identity(nr)])
        + ops::kron_raw(&[&ops::identity(na), &ops::number(nr)]) * c(p.omega_r, 0.0)
        + (ops::kron_raw(&[&sm.adjoint(), &a]) + ops::kron_raw(&[&sm, &a.adjoint()])) * c(p.g, 0.0);
    Operator::new(h, vec![na, nr]).expect("validated dimensions")
}

/// Excitation number `a†a + Σ_q q |q⟩⟨q|`.
pub fn excitation_number(p: &SystemParams) -> Operator {
    let (na, nr) = (p.atom_levels, p.resonator_levels);
    let m =
        ops::kron_raw(&[&ops::number(na), &ops::identity(nr)]) + ops::kron_raw(&[&ops::identity(na), &ops::number(nr)]);
    Operator::new(m, vec![na, nr]).expect("validated dimensions")
}

/// Sub-block of [`jc_hamiltonian`] with exactly `n` excitations.
///
/// Returns the bare states `(q, n−q)` in increasing atom level and the block.
pub fn excitation_block(p: &SystemParams, n: usize) -> (Vec<(usize, usize)>, CMatrix) {
    let states: Vec<(usize, usize)> =
        (0..p.atom_levels).filter(|&q| q <= n && n - q < p.resonator_levels).map(|q| (q, n - q)).collect();
    let h = jc_hamiltonian(p);
    let idx: Vec<usize> = states.iter().map(|&(q, m)| p.index(q, m)).collect();
    let block = CMatrix::from_fn(idx.len(), idx.len(), |i, j| h.matrix()[(idx[i], idx[j])]);
    (states, block)
}

/// Second-order energies of `|0,n⟩`, `|1,n⟩`, `|2,n⟩`.
pub fn perturbative_energies(p: &SystemParams, n: usize) -> Result<PerturbativeEnergies> {
    p.dispersive_guard()?;
    let nf = n as f64;
    let g2 = p.g * p.g;
    let l2 = p.lambda * p.lambda;
    let (w01, w12, wr) = (p.omega01, p.omega12, p.omega_r);
    Ok(PerturbativeEnergies {
        e0: nf * wr + nf * g2 / (wr - w01),
        e1: nf * wr + w01 + (nf + 1.0) * g2 / (w01 - wr) + nf * g2 * l2 / (wr - w12),
        e2: nf * wr + p.omega02() + (nf + 1.0) * g2 * l2 / (w12 - wr),
    })
}

/// Photon-number-dependent Stark shift `ω01^(n) − ω01` from perturbation theory.
pub fn stark_shift_perturbative(p: &SystemParams, n: usize) -> Result<f64> {
    p.dispersive_guard()?;
    let nf = n as f64;
    let g2 = p.g * p.g;
    Ok(g2 / (p.omega01 - p.omega_r) * (2.0 * nf + 1.0) + g2 * p.lambda * p.lambda / (p.omega_r - p.omega12) * nf)
}

/// Two atom–resonator pairs with an atom–atom exchange coupling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoSystemParams {
    pub a: SystemParams,
    pub b: SystemParams,
    /// Zero means the coupler is off.
    pub g_ab: f64,
}

impl TwoSystemParams {
    pub fn validate(&self) -> Result<()> {
        self.a.validate()?;
        self.b.validate()?;
        if !(self.g_ab >= 0.0) || !self.g_ab.is_finite() {
            return Err(Error::Validation("g_ab must be non-negative".into()));
        }
        Ok(())
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.a.atom_levels, self.b.atom_levels, self.a.resonator_levels, self.b.resonator_levels]
    }

    pub fn dim(&self) -> usize {
        self.dims().iter().product()
    }

    pub fn index(&self, qa: usize, qb: usize, na: usize, nb: usize) -> usize {
        let [_, db, dra, drb] = self.dims();
        ((qa * db + qb) * dra + na) * drb + nb
    }
}

/// Full two-pair Hamiltonian on atomA ⊗ atomB ⊗ resA ⊗ resB.
pub fn two_system_hamiltonian(p: &TwoSystemParams) -> Result<Operator> {
    p.validate()?;
    let [qa, qb, ra, rb] = p.dims();
    let dims = vec![qa, qb, ra, rb];
    let total = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
    if total.is_none_or(|t| t > crate::linalg::MAX_HILBERT_DIM) {
        return Err(Error::HilbertSize { requested: dims, max: crate::linalg::MAX_HILBERT_DIM });
    }
    let (ia, ib, ira, irb) = (ops::identity(qa), ops::identity(qb), ops::identity(ra), ops::identity(rb));
    let (sma, smb) = (sigma_minus_matrix(&p.a), sigma_minus_matrix(&p.b));
    let (a, b) = (ops::destroy(ra), ops::destroy(rb));
    let k = |fs: [&CMatrix; 4]| ops::kron_raw(&fs);

    let mut h = k([&atom_hamiltonian_matrix(&p.a), &ib, &ira, &irb])
        + k([&ia, &atom_hamiltonian_matrix(&p.b), &ira, &irb])
        + k([&ia, &ib, &ops::number(ra), &irb]) * c(p.a.omega_r, 0.0)
        + k([&ia, &ib, &ira, &ops::number(rb)]) * c(p.b.omega_r, 0.0);
    let ga = k([&sma.adjoint(), &ib, &a, &irb]);
    h += (&ga + ga.adjoint()) * c(p.a.g, 0.0);
    let gb = k([&ia, &smb.adjoint(), &ira, &b]);
    h += (&gb + gb.adjoint()) * c(p.b.g, 0.0);
    if p.g_ab != 0.0 {
        let x = k([&sma.adjoint(), &smb, &ira, &irb]);
        h += (&x + x.adjoint()) * c(p.g_ab, 0.0);
    }
    Operator::new(h, vec![qa, qb, ra, rb])
}

/// Sum of both pairs' excitation numbers.
pub fn two_system_excitation_number(p: &TwoSystemParams) -> Operator {
    let [qa, qb, ra, rb] = p.dims();
    let (ia, ib, ira, irb) = (ops::identity(qa), ops::identity(qb), ops::identity(ra), ops::identity(rb));
    let k = |fs: [&CMatrix; 4]| ops::kron_raw(&fs);
    let m = k([&ops::number(qa), &ib, &ira, &irb])
        + k([&ia, &ops::number(qb), &ira, &irb])
        + k([&ia, &ib, &ops::number(ra), &irb])
        + k([&ia, &ib, &ira, &ops::number(rb)]);
    Operator::new(m, vec![qa, qb, ra, rb]).expect("validated dimensions")
}
