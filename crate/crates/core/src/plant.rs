//! The controlled physical system: one atom–resonator pair, or two pairs
//! joined by a switchable atom–atom coupler.
//!
//! Internally two pairs are stored pair-major, `(atomA ⊗ resA) ⊗ (atomB ⊗ resB)`,
//! so the idle dressed basis is a plain Kronecker product of the per-pair
//! dressed bases. [`Plant::to_internal`] and [`Plant::to_external`] convert
//! amplitudes from and to the atomA ⊗ atomB ⊗ resA ⊗ resB ordering.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{c, cis, eigh_matrix, ops, CMatrix, CVector, MAX_HILBERT_DIM, ZERO};
use crate::model::{jc_hamiltonian, sigma_minus_matrix, SystemParams, TwoSystemParams};
use crate::spectrum::DressedBasis;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Plant {
    Single(SystemParams),
    Pair(TwoSystemParams),
}

/// Dressed eigenbasis of the idle (coupler off, flux at rest) plant.
#[derive(Debug, Clone)]
pub struct PlantBasis {
    pub energies: Vec<f64>,
    /// Columns are eigenvectors in the pair-major bare basis.
    pub vectors: CMatrix,
    /// Dominant bare label per eigenvector: `[q, n]` or `[qA, nA, qB, nB]`.
    pub labels: Vec<Vec<usize>>,
    pub pairs: Vec<DressedBasis>,
}

impl PlantBasis {
    pub fn find(&self, label: &[usize]) -> Option<usize> {
        self.labels.iter().position(|l| l.as_slice() == label)
    }

    pub fn index_of(&self, label: &[usize]) -> Result<usize> {
        self.find(label).ok_or_else(|| Error::IndexOutOfRange(format!("no dressed state labeled {label:?}")))
    }

    pub fn dim(&self) -> usize {
        self.energies.len()
    }
}

impl Plant {
    pub fn validate(&self) -> Result<()> {
        match self {
            Plant::Single(p) => p.validate(),
            Plant::Pair(p) => {
                p.validate()?;
                if p.dim() > MAX_HILBERT_DIM {
                    return Err(Error::HilbertSize { requested: p.dims().to_vec(), max: MAX_HILBERT_DIM });
                }
                Ok(())
            }
        }
    }

    pub fn pairs(&self) -> Vec<SystemParams> {
        match self {
            Plant::Single(p) => vec![*p],
            Plant::Pair(p) => vec![p.a, p.b],
        }
    }

    pub fn qudits(&self) -> usize {
        self.pairs().len()
    }

    pub fn pair(&self, i: usize) -> Result<SystemParams> {
        self.pairs().get(i).copied().ok_or_else(|| Error::IndexOutOfRange(format!("qudit {i} does not exist")))
    }

    pub fn g_ab(&self) -> f64 {
        match self {
            Plant::Single(_) => 0.0,
            Plant::Pair(p) => p.g_ab,
        }
    }

    pub fn dim(&self) -> usize {
        self.pairs().iter().map(|p| p.dim()).product()
    }

    /// Per-pair dimensions in pair-major order.
    pub fn pair_dims(&self) -> Vec<usize> {
        self.pairs().iter().map(|p| p.dim()).collect()
    }

    pub fn idle_basis(&self) -> PlantBasis {
        let pairs: Vec<DressedBasis> = self.pairs().iter().map(DressedBasis::new).collect();
        match pairs.as_slice() {
            [a] => PlantBasis {
                energies: a.energies.clone(),
                vectors: a.vectors.clone(),
                labels: a.labels.iter().map(|((q, n), _)| vec![*q, *n]).collect(),
                pairs,
            },
            [a, b] => {
                let mut energies = Vec::with_capacity(a.energies.len() * b.energies.len());
                let mut labels = Vec::with_capacity(energies.capacity());
                for (ea, ((qa, na), _)) in a.energies.iter().zip(&a.labels) {
                    for (eb, ((qb, nb), _)) in b.energies.iter().zip(&b.labels) {
                        energies.push(ea + eb);
                        labels.push(vec![*qa, *na, *qb, *nb]);
                    }
                }
                let vectors = a.vectors.kronecker(&b.vectors);
                PlantBasis { energies, vectors, labels, pairs }
            }
            _ => unreachable!("one or two pairs"),
        }
    }

    /// Atom drive operator `σ₊ + σ₋` of qudit `i`, embedded in the full space.
    pub fn drive_operator(&self, i: usize) -> Result<CMatrix> {
        let p = self.pair(i)?;
        let sm = sigma_minus_matrix(&p);
        let x = ops::kron_raw(&[&(&sm + sm.adjoint()), &ops::identity(p.resonator_levels)]);
        Ok(self.embed(i, &x))
    }

    /// Embed a per-pair operator at position `i`.
    pub fn embed(&self, i: usize, op: &CMatrix) -> CMatrix {
        let dims = self.pair_dims();
        let mut out = CMatrix::identity(1, 1);
        for (k, &d) in dims.iter().enumerate() {
            out = if k == i { out.kronecker(op) } else { out.kronecker(&ops::identity(d)) };
        }
        out
    }

    /// Bare Hamiltonian with atom frequencies `omega01[i]` and the coupler on or off.
    pub fn hamiltonian(&self, omega01: &[f64], coupler: bool) -> CMatrix {
        let pairs = self.pairs();
        let mut h = CMatrix::zeros(self.dim(), self.dim());
        for (i, p) in pairs.iter().enumerate() {
            h += self.embed(i, jc_hamiltonian(&p.with_omega01(omega01[i])).matrix());
        }
        if coupler && pairs.len() == 2 {
            h += self.coupler_operator() * c(self.g_ab(), 0.0);
        }
        h
    }

    /// `σ₊ᴬσ₋ᴮ + σ₋ᴬσ₊ᴮ` (zero for a single pair).
    pub fn coupler_operator(&self) -> CMatrix {
        let pairs = self.pairs();
        if pairs.len() < 2 {
            return CMatrix::zeros(self.dim(), self.dim());
        }
        let (a, b) = (pairs[0], pairs[1]);
        let spa = ops::kron_raw(&[&sigma_minus_matrix(&a).adjoint(), &ops::identity(a.resonator_levels)]);
        let smb = ops::kron_raw(&[&sigma_minus_matrix(&b), &ops::identity(b.resonator_levels)]);
        let x = spa.kronecker(&smb);
        &x + x.adjoint()
    }

    /// Map pair-major index to the external atomA ⊗ atomB ⊗ resA ⊗ resB index.
    fn external_index(&self, internal: usize) -> usize {
        match self {
            Plant::Single(_) => internal,
            Plant::Pair(p) => {
                let (ra, rb) = (p.a.resonator_levels, p.b.resonator_levels);
                let db = p.b.dim();
                let (ia, ib) = (internal / db, internal % db);
                p.index(ia / ra, ib / rb, ia % ra, ib % rb)
            }
        }
    }

    /// External-ordering amplitudes to pair-major.
    pub fn to_internal(&self, v: &CVector) -> CVector {
        CVector::from_fn(v.len(), |i, _| v[self.external_index(i)])
    }

    pub fn to_external(&self, v: &CVector) -> CVector {
        let mut out = CVector::from_element(v.len(), ZERO);
        for i in 0..v.len() {
            out[self.external_index(i)] = v[i];
        }
        out
    }

    /// External-ordering dims.
    pub fn external_dims(&self) -> Vec<usize> {
        match self {
            Plant::Single(p) => p.dims().to_vec(),
            Plant::Pair(p) => p.dims().to_vec(),
        }
    }
}

/// Lab-frame propagator of one pair over `[t1, t2]` while its atom frequency
/// follows `omega01(t)`.
///
/// The excitation number is conserved, so each block is exponentiated on its
/// own. When `ramping`, the interval is cut into substeps no longer than
/// `substep` and the Hamiltonian is frozen at each midpoint.
pub fn pair_flux_propagator(
    p: &SystemParams,
    omega01: &dyn Fn(f64) -> f64,
    t1: f64,
    t2: f64,
    ramping: bool,
    substep: f64,
) -> CMatrix {
    let len = t2 - t1;
    let nsub = if ramping { ((len / substep).ceil() as usize).max(1) } else { 1 };
    let dt = len / nsub as f64;
    let max_n = p.atom_levels - 1 + p.resonator_levels - 1;
    let e_atom = |w: f64| p.with_omega01(w).atom_energies();
    let le = p.lowering_elements();
    let mut u = CMatrix::zeros(p.dim(), p.dim());
    for n in 0..=max_n {
        let states: Vec<(usize, usize)> =
            (0..p.atom_levels).filter(|&q| q <= n && n - q < p.resonator_levels).map(|q| (q, n - q)).collect();
        let m = states.len();
        let mut ub = CMatrix::identity(m, m);
        for s in 0..nsub {
            let w = omega01(t1 + (s as f64 + 0.5) * dt);
            let e = e_atom(w);
            let mut h = CMatrix::zeros(m, m);
            for (i, &(q, k)) in states.iter().enumerate() {
                h[(i, i)] = c(e[q] + k as f64 * p.omega_r, 0.0);
                if i + 1 < m {
                    let el = p.g * le[q] * (k as f64).sqrt();
                    h[(i, i + 1)] = c(el, 0.0);
                    h[(i + 1, i)] = c(el, 0.0);
                }
            }
            let step = eigh_matrix(&h).propagator(dt);
            ub = step * ub;
        }
        for (i, &(qi, ki)) in states.iter().enumerate() {
            for (j, &(qj, kj)) in states.iter().enumerate() {
                u[(p.index(qi, ki), p.index(qj, kj))] = ub[(i, j)];
            }
        }
    }
    u
}

/// Convert a lab-frame propagator over `[t1, t2]` to the idle interaction
/// frame in dressed coordinates: `e^{iE t2} V† U V e^{−iE t1}`.
pub fn to_interaction_frame(u: &CMatrix, vectors: &CMatrix, energies: &[f64], t1: f64, t2: f64) -> CMatrix {
    let mut w = vectors.adjoint() * u * vectors;
    for a in 0..w.nrows() {
        for b in 0..w.ncols() {
            w[(a, b)] *= cis(energies[a] * t2 - energies[b] * t1);
        }
    }
    w
}
