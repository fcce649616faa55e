//! Dressed spectra of the atom–resonator pair as one parameter is swept.
//!
//! The pair Hamiltonian conserves the excitation number, so every
//! diagonalization here is done block by block. Eigenvectors are therefore
//! never mixed across blocks, even at exact level crossings.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{eigh_matrix, CMatrix, CVector, ZERO};
use crate::model::{jc_hamiltonian, SystemParams};

/// Bare-state label `|q, n⟩`.
pub type Label = (usize, usize);

/// Minimum squared overlap accepted when carrying a label to the next point.
pub const LABEL_THRESHOLD: f64 = 0.5;

/// Which parameter a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    /// Atom frequency; anharmonicities stay fixed.
    Omega01,
    OmegaR,
    G,
}

impl SweepParameter {
    pub fn apply(&self, p: &SystemParams, x: f64) -> SystemParams {
        match self {
            SweepParameter::Omega01 => p.with_omega01(x),
            SweepParameter::OmegaR => SystemParams { omega_r: x, ..*p },
            SweepParameter::G => SystemParams { g: x, ..*p },
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SweepParameter::Omega01 => "omega01",
            SweepParameter::OmegaR => "omega_r",
            SweepParameter::G => "g",
        }
    }
}

/// One excitation-number block, diagonalized.
#[derive(Debug, Clone)]
struct BlockEigen {
    states: Vec<Label>,
    values: Vec<f64>,
    /// Columns are eigenvectors in the block's bare basis.
    vectors: CMatrix,
}

fn blocks(p: &SystemParams) -> Vec<BlockEigen> {
    let h = jc_hamiltonian(p);
    let max_n = p.atom_levels - 1 + p.resonator_levels - 1;
    (0..=max_n)
        .map(|n| {
            let states: Vec<Label> =
                (0..p.atom_levels).filter(|&q| q <= n && n - q < p.resonator_levels).map(|q| (q, n - q)).collect();
            let idx: Vec<usize> = states.iter().map(|&(q, m)| p.index(q, m)).collect();
            let block = CMatrix::from_fn(idx.len(), idx.len(), |i, j| h.matrix()[(idx[i], idx[j])]);
            let e = eigh_matrix(&block);
            BlockEigen { states, values: e.values, vectors: e.vectors }
        })
        .collect()
}

/// Greedy bare-character assignment inside one block (always a bijection).
fn bare_labels(b: &BlockEigen) -> Vec<(Label, f64)> {
    let m = b.states.len();
    let mut pairs: Vec<(f64, usize, usize)> =
        (0..m).flat_map(|k| (0..m).map(move |s| (k, s))).map(|(k, s)| (b.vectors[(s, k)].norm_sqr(), k, s)).collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut out = vec![((0, 0), -1.0); m];
    let (mut used_k, mut used_s) = (vec![false; m], vec![false; m]);
    for (w, k, s) in pairs {
        if !used_k[k] && !used_s[s] {
            used_k[k] = true;
            used_s[s] = true;
            out[k] = (b.states[s], w);
        }
    }
    out
}

/// Dressed eigenbasis of one pair, labeled by dominant bare component.
#[derive(Debug, Clone)]
pub struct DressedBasis {
    /// Eigenvalues ascending (rad/s).
    pub energies: Vec<f64>,
    /// Full-space eigenvectors as columns, in the order of `energies`.
    pub vectors: CMatrix,
    /// Bare label of each eigenvector and its squared overlap with that bare state.
    pub labels: Vec<(Label, f64)>,
    /// Excitation number of each eigenvector.
    pub excitation: Vec<usize>,
}

impl DressedBasis {
    pub fn new(p: &SystemParams) -> Self {
        let bl = blocks(p);
        let dim = p.dim();
        let mut entries: Vec<(f64, CVector, (Label, f64), usize)> = Vec::with_capacity(dim);
        for (n, b) in bl.iter().enumerate() {
            let labels = bare_labels(b);
            for (k, label) in labels.iter().enumerate() {
                let mut v = CVector::from_element(dim, ZERO);
                for (s, &(q, m)) in b.states.iter().enumerate() {
                    v[p.index(q, m)] = b.vectors[(s, k)];
                }
                // Fix the phase so the dominant bare component is real positive.
                let (lq, lm) = label.0;
                let lead = v[p.index(lq, lm)];
                if lead.norm() > 0.0 {
                    let ph = lead.conj() / lead.norm();
                    v.iter_mut().for_each(|z| *z *= ph);
                }
                entries.push((b.values[k], v, *label, n));
            }
        }
        entries.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut vectors = CMatrix::zeros(dim, dim);
        for (k, e) in entries.iter().enumerate() {
            vectors.set_column(k, &e.1);
        }
        Self {
            energies: entries.iter().map(|e| e.0).collect(),
            vectors,
            labels: entries.iter().map(|e| e.2).collect(),
            excitation: entries.iter().map(|e| e.3).collect(),
        }
    }

    /// Eigen-index carrying the bare label `(q, n)`.
    pub fn find(&self, label: Label) -> Option<usize> {
        self.labels.iter().position(|(l, _)| *l == label)
    }

    pub fn state(&self, label: Label) -> Option<CVector> {
        self.find(label).map(|k| self.vectors.column(k).into_owned())
    }

    pub fn energy(&self, label: Label) -> Option<f64> {
        self.find(label).map(|k| self.energies[k])
    }
}

/// Avoided (same excitation block) or exact (different blocks) crossing.
#[derive(Debug, Clone, Serialize)]
pub struct Anticrossing {
    pub parameter: f64,
    /// Minimum gap between the two levels (rad/s).
    pub gap: f64,
    /// Labels of the lower and upper level on the anchor side of the crossing.
    pub states: (Label, Label),
    pub exact: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepResult {
    pub parameter: SweepParameter,
    pub grid: Vec<f64>,
    /// Per point, all eigenvalues ascending.
    pub energies: Vec<Vec<f64>>,
    /// Per point, the continued label of each eigenvalue in `energies`.
    pub labels: Vec<Vec<Label>>,
    /// Index into `grid` of the endpoint labels were anchored to.
    pub anchor: usize,
    #[serde(skip)]
    base: Option<SystemParams>,
    /// Per point, `(block, local index)` of each global eigen-index.
    #[serde(skip)]
    slots: Vec<Vec<(usize, usize)>>,
}

/// Smallest detuning from the three resonance conditions.
fn resonance_distance(p: &SystemParams) -> f64 {
    [p.omega_r - p.omega01, p.omega_r - p.omega12, 2.0 * p.omega_r - p.omega02()]
        .iter()
        .map(|d| d.abs())
        .fold(f64::INFINITY, f64::min)
}

/// Diagonalize across `grid` and label dressed states by maximum-overlap
/// continuation from the endpoint farthest from every resonance.
pub fn sweep_spectrum(p: &SystemParams, vary: SweepParameter, grid: &[f64]) -> Result<SweepResult> {
    p.validate()?;
    if grid.len() < 2 {
        return Err(Error::Validation("a sweep needs at least two grid points".into()));
    }
    let increasing = grid[1] > grid[0];
    if grid.windows(2).any(|w| (w[1] > w[0]) != increasing || w[1] == w[0]) {
        return Err(Error::Validation("sweep grid must be strictly monotone".into()));
    }
    let per_point: Vec<Vec<BlockEigen>> = grid.par_iter().map(|&x| blocks(&vary.apply(p, x))).collect();

    let last = grid.len() - 1;
    let anchor = if resonance_distance(&vary.apply(p, grid[0])) >= resonance_distance(&vary.apply(p, grid[last])) {
        0
    } else {
        last
    };

    // Labels per block per local eigen-index, carried outward from the anchor.
    let nblocks = per_point[0].len();
    let mut block_labels: Vec<Vec<Vec<Label>>> = vec![Vec::new(); grid.len()];
    block_labels[anchor] =
        per_point[anchor].iter().map(|b| bare_labels(b).into_iter().map(|x| x.0).collect()).collect();
    let order: Vec<(usize, usize)> = if anchor == 0 {
        (1..grid.len()).map(|i| (i - 1, i)).collect()
    } else {
        (0..last).rev().map(|i| (i + 1, i)).collect()
    };
    for (prev, next) in order {
        let mut labels_here = Vec::with_capacity(nblocks);
        for nb in 0..nblocks {
            let (bp, bn) = (&per_point[prev][nb], &per_point[next][nb]);
            let ov = (bp.vectors.adjoint() * &bn.vectors).map(|z| z.norm_sqr());
            let m = bn.values.len();
            let mut lab = vec![(0, 0); m];
            let mut used = vec![false; m];
            for k in 0..m {
                let (best, w) = (0..m).map(|j| (j, ov[(j, k)])).fold((0, -1.0), |a, b| if b.1 > a.1 { b } else { a });
                if w < LABEL_THRESHOLD || used[best] {
                    return Err(Error::DegenerateLabel { index: next, overlap: w });
                }
                used[best] = true;
                lab[k] = block_labels[prev][nb][best];
            }
            labels_here.push(lab);
        }
        block_labels[next] = labels_here;
    }

    let mut energies = Vec::with_capacity(grid.len());
    let mut labels = Vec::with_capacity(grid.len());
    let mut slots = Vec::with_capacity(grid.len());
    for (i, pt) in per_point.iter().enumerate() {
        let mut all: Vec<(f64, Label, (usize, usize))> = pt
            .iter()
            .enumerate()
            .flat_map(|(nb, b)| b.values.iter().enumerate().map(move |(k, &e)| (e, nb, k)))
            .map(|(e, nb, k)| (e, block_labels[i][nb][k], (nb, k)))
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0));
        energies.push(all.iter().map(|x| x.0).collect());
        labels.push(all.iter().map(|x| x.1).collect());
        slots.push(all.iter().map(|x| x.2).collect());
    }
    Ok(SweepResult { parameter: vary, grid: grid.to_vec(), energies, labels, anchor, base: Some(*p), slots })
}

impl SweepResult {
    /// Energy of the state carrying `label` at each grid point.
    pub fn energy_of(&self, label: Label) -> Vec<Option<f64>> {
        self.labels
            .iter()
            .zip(&self.energies)
            .map(|(ls, es)| ls.iter().position(|l| *l == label).map(|k| es[k]))
            .collect()
    }

    /// CSV with columns `parameter, E_0..E_{K-1}, label_0..label_{K-1}` for the
    /// lowest `levels` eigenvalues. Labels print as `q:n`.
    pub fn to_csv(&self, levels: usize) -> String {
        let k = levels.min(self.energies[0].len());
        let mut out = String::from(self.parameter.name());
        for i in 0..k {
            out.push_str(&format!(",E_{i}"));
        }
        for i in 0..k {
            out.push_str(&format!(",label_{i}"));
        }
        out.push('\n');
        for (x, (es, ls)) in self.grid.iter().zip(self.energies.iter().zip(&self.labels)) {
            out.push_str(&format!("{x:?}"));
            for e in &es[..k] {
                out.push_str(&format!(",{e:?}"));
            }
            for l in &ls[..k] {
                out.push_str(&format!(",{}:{}", l.0, l.1));
            }
            out.push('\n');
        }
        out
    }
}

pub(crate) fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, rel_tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let scale = a.abs().max(b.abs());
    let mut x1 = b - inv_phi * (b - a);
    let mut x2 = a + inv_phi * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while (b - a).abs() > rel_tol * scale {
        if f1 < f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = f(x2);
        }
    }
    if f1 < f2 {
        x1
    } else {
        x2
    }
}

/// Relative parameter tolerance of the anticrossing refinement.
pub const CROSSING_REL_TOL: f64 = 1e-6;

/// Local minima of adjacent-level gaps, refined off-grid.
///
/// Minima between levels of the same excitation block are avoided crossings
/// refined by golden-section search on the gap. Minima between different
/// blocks are exact crossings, refined by bisection on the signed difference.
pub fn find_anticrossings(r: &SweepResult) -> Vec<Anticrossing> {
    let Some(base) = r.base else { return Vec::new() };
    let npts = r.grid.len();
    let nlev = r.energies[0].len();
    let mut found = Vec::new();
    for k in 0..nlev.saturating_sub(1) {
        let gap: Vec<f64> = r.energies.iter().map(|e| e[k + 1] - e[k]).collect();
        for i in 1..npts.saturating_sub(1) {
            if !(gap[i] <= gap[i - 1] && gap[i] < gap[i + 1]) {
                continue;
            }
            let (lo_slot, hi_slot) = (r.slots[i][k], r.slots[i][k + 1]);
            let (a, b) = (r.grid[i - 1].min(r.grid[i + 1]), r.grid[i - 1].max(r.grid[i + 1]));
            let level = |x: f64, slot: (usize, usize)| {
                let bl = blocks_for(&r.parameter.apply(&base, x), slot.0);
                bl[slot.1]
            };
            let (x, g, exact) = if lo_slot.0 == hi_slot.0 {
                let nb = lo_slot.0;
                let (j0, j1) = (lo_slot.1.min(hi_slot.1), lo_slot.1.max(hi_slot.1));
                let f = |x: f64| {
                    let v = blocks_for(&r.parameter.apply(&base, x), nb);
                    v[j1] - v[j0]
                };
                let x = golden_min(f, a, b, CROSSING_REL_TOL);
                (x, f(x), false)
            } else {
                let f = |x: f64| level(x, hi_slot) - level(x, lo_slot);
                let (fa, fb) = (f(a), f(b));
                let x = if fa.signum() != fb.signum() {
                    let (mut lo, mut hi, mut flo) = (a, b, fa);
                    for _ in 0..200 {
                        let mid = 0.5 * (lo + hi);
                        if mid <= lo || mid >= hi {
                            break;
                        }
                        let fm = f(mid);
                        if fm.signum() == flo.signum() {
                            lo = mid;
                            flo = fm;
                        } else {
                            hi = mid;
                        }
                    }
                    if f(lo).abs() < f(hi).abs() {
                        lo
                    } else {
                        hi
                    }
                } else {
                    golden_min(|x| f(x).abs(), a, b, 1e-15)
                };
                (x, f(x).abs(), true)
            };
            let anchor_side = if r.anchor == 0 { i - 1 } else { i + 1 };
            let la = r.labels[anchor_side][k];
            let lb = r.labels[anchor_side][k + 1];
            found.push(Anticrossing { parameter: x, gap: g, states: (la, lb), exact });
        }
    }
    found.sort_by(|a, b| a.parameter.total_cmp(&b.parameter));
    found
}

fn blocks_for(p: &SystemParams, n: usize) -> Vec<f64> {
    let states: Vec<Label> =
        (0..p.atom_levels).filter(|&q| q <= n && n - q < p.resonator_levels).map(|q| (q, n - q)).collect();
    let e = p.atom_energies();
    let le = p.lowering_elements();
    let m = states.len();
    let mut h = CMatrix::zeros(m, m);
    for (i, &(q, k)) in states.iter().enumerate() {
        h[(i, i)] = crate::linalg::c(e[q] + k as f64 * p.omega_r, 0.0);
        if i + 1 < m {
            // (q, k) ↔ (q+1, k−1) via g·⟨q|σ−|q+1⟩·√k
            let el = p.g * le[q] * (k as f64).sqrt();
            h[(i, i + 1)] = crate::linalg::c(el, 0.0);
            h[(i + 1, i)] = crate::linalg::c(el, 0.0);
        }
    }
    eigh_matrix(&h).values
}

/// Numerical Stark shift `ω01^(n) − ω01` across a grid of atom frequencies.
///
/// Dressed `|0,n⟩` and `|1,n⟩` are identified by their dominant bare
/// component at each point; points where either has less than
/// [`LABEL_THRESHOLD`] weight on its bare state (near crossings) are `None`.
pub fn stark_shift_numeric(p: &SystemParams, n: usize, grid: &[f64]) -> Result<Vec<Option<f64>>> {
    p.validate()?;
    if n + 1 >= p.resonator_levels {
        return Err(Error::GuardLevel { index: n, levels: p.resonator_levels });
    }
    Ok(grid
        .par_iter()
        .map(|&w| {
            let q = p.with_omega01(w);
            let e0 = dressed_energy(&q, (0, n))?;
            let e1 = dressed_energy(&q, (1, n))?;
            Some(e1 - e0 - w)
        })
        .collect())
}

/// Energy of the dressed state whose dominant bare component is `label`.
pub fn dressed_energy(p: &SystemParams, label: Label) -> Option<f64> {
    let n = label.0 + label.1;
    let states: Vec<Label> =
        (0..p.atom_levels).filter(|&q| q <= n && n - q < p.resonator_levels).map(|q| (q, n - q)).collect();
    let h = jc_hamiltonian(p);
    let idx: Vec<usize> = states.iter().map(|&(q, m)| p.index(q, m)).collect();
    let block = CMatrix::from_fn(idx.len(), idx.len(), |i, j| h.matrix()[(idx[i], idx[j])]);
    let e = eigh_matrix(&block);
    let b = BlockEigen { states, values: e.values, vectors: e.vectors };
    bare_labels(&b)
        .iter()
        .enumerate()
        .find(|(_, (l, w))| *l == label && *w >= LABEL_THRESHOLD)
        .map(|(k, _)| b.values[k])
}
