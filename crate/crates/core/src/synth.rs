//! Abstract qudit gates: two-level rotations, QR decomposition of arbitrary
//! unitaries, routing onto the nearest-neighbour level graph, and lowering to
//! pulse schedules.
//!
//! A [`GateList`] stores gates in application order: the first entry acts
//! first, so the represented unitary is `G_last ⋯ G_1`.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{c, cis, CMatrix, Operator, C64, I, ZERO};
use crate::plant::Plant;
use crate::pulse::Schedule;
use crate::sequence::{GateConfig, SequenceBuilder};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RotationSpec {
    /// `exp[−i(θ/2)(|j⟩⟨k| + |k⟩⟨j|)]`.
    X {
        #[serde(default)]
        qudit: usize,
        j: usize,
        k: usize,
        theta: f64,
    },
    /// `exp[−i(θ/2)(|j⟩⟨j| − |k⟩⟨k|)]`.
    Z {
        #[serde(default)]
        qudit: usize,
        j: usize,
        k: usize,
        theta: f64,
    },
    /// `U_{j,k}(λ, φ) = R^z(φ) R^x(2λ) R^z(−φ)`.
    Composite {
        #[serde(default)]
        qudit: usize,
        j: usize,
        k: usize,
        lambda: f64,
        phi: f64,
    },
    /// `exp(−iθ|j,k⟩⟨j,k|)` on two qudits.
    ControlledPhase { j: usize, k: usize, theta: f64 },
    /// `diag(e^{iα_0}, …, e^{iα_{d−1}})`.
    Phases {
        #[serde(default)]
        qudit: usize,
        phases: Vec<f64>,
    },
}

impl RotationSpec {
    pub fn validate(&self, d: usize) -> Result<()> {
        let pair = |j: usize, k: usize| -> Result<()> {
            if !(j < k && k < d) {
                return Err(Error::IndexOutOfRange(format!("levels ({j}, {k}) invalid for d = {d}")));
            }
            Ok(())
        };
        let finite = |xs: &[f64]| -> Result<()> {
            if xs.iter().all(|x| x.is_finite()) {
                Ok(())
            } else {
                Err(Error::Validation("rotation angles must be finite".into()))
            }
        };
        match self {
            RotationSpec::X { j, k, theta, .. } | RotationSpec::Z { j, k, theta, .. } => {
                pair(*j, *k)?;
                finite(&[*theta])
            }
            RotationSpec::Composite { j, k, lambda, phi, .. } => {
                pair(*j, *k)?;
                finite(&[*lambda, *phi])
            }
            RotationSpec::ControlledPhase { j, k, theta } => {
                if *j >= d || *k >= d {
                    return Err(Error::IndexOutOfRange(format!("levels ({j}, {k}) invalid for d = {d}")));
                }
                finite(&[*theta])
            }
            RotationSpec::Phases { phases, .. } => {
                if phases.len() != d {
                    return Err(Error::Validation(format!("phase layer has {} entries, d = {d}", phases.len())));
                }
                finite(phases)
            }
        }
    }

    pub fn qudit(&self) -> usize {
        match self {
            RotationSpec::X { qudit, .. }
            | RotationSpec::Z { qudit, .. }
            | RotationSpec::Composite { qudit, .. }
            | RotationSpec::Phases { qudit, .. } => *qudit,
            RotationSpec::ControlledPhase { .. } => 0,
        }
    }

    /// Levels of a two-level rotation.
    pub fn levels(&self) -> Option<(usize, usize)> {
        match self {
            RotationSpec::X { j, k, .. } | RotationSpec::Z { j, k, .. } | RotationSpec::Composite { j, k, .. } => {
                Some((*j, *k))
            }
            _ => None,
        }
    }

    /// True for rotations that mix populations of two levels.
    fn mixes(&self) -> bool {
        matches!(self, RotationSpec::X { .. } | RotationSpec::Composite { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateList {
    /// Qudit dimension.
    pub d: usize,
    /// Application order: first entry acts first.
    pub gates: Vec<RotationSpec>,
}

impl GateList {
    pub fn new(d: usize) -> Self {
        Self { d, gates: Vec::new() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 2 {
            return Err(Error::Validation(format!("qudit dimension must be at least 2, got {}", self.d)));
        }
        self.gates.iter().try_for_each(|g| g.validate(self.d))
    }

    /// Single-qudit product `G_last ⋯ G_1` (all gates must act on one qudit).
    pub fn product(&self) -> Result<CMatrix> {
        self.validate()?;
        let mut u = CMatrix::identity(self.d, self.d);
        for g in &self.gates {
            if matches!(g, RotationSpec::ControlledPhase { .. }) {
                return Err(Error::Validation("single-qudit product of a two-qudit gate".into()));
            }
            u = rotation_matrix(g, self.d)?.into_matrix() * u;
        }
        Ok(u)
    }

    /// Number of population-mixing two-level rotations.
    pub fn rotation_count(&self) -> usize {
        self.gates.iter().filter(|g| g.mixes()).count()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "d": self.d,
            "order": "application (first entry acts first)",
            "gates": self.gates,
        })
    }
}

/// 2×2 block `U_{j,k}(λ, φ)` on the ordered pair `(j, k)`.
fn composite_block(lambda: f64, phi: f64) -> [[C64; 2]; 2] {
    let (cs, sn) = (lambda.cos(), lambda.sin());
    [[c(cs, 0.0), -I * cis(-phi) * sn], [-I * cis(phi) * sn, c(cs, 0.0)]]
}

fn embed_block(d: usize, j: usize, k: usize, b: [[C64; 2]; 2]) -> CMatrix {
    let mut m = CMatrix::identity(d, d);
    m[(j, j)] = b[0][0];
    m[(j, k)] = b[0][1];
    m[(k, j)] = b[1][0];
    m[(k, k)] = b[1][1];
    m
}

/// Matrix of a gate on one qudit (`d × d`) or, for a controlled phase, on
/// two (`d² × d²`).
pub fn rotation_matrix(spec: &RotationSpec, d: usize) -> Result<Operator> {
    if d < 2 {
        return Err(Error::Validation(format!("qudit dimension must be at least 2, got {d}")));
    }
    spec.validate(d)?;
    let (m, dims) = match spec {
        RotationSpec::X { j, k, theta, .. } => (embed_block(d, *j, *k, composite_block(theta / 2.0, 0.0)), vec![d]),
        RotationSpec::Z { j, k, theta, .. } => {
            let mut m = CMatrix::identity(d, d);
            m[(*j, *j)] = cis(-theta / 2.0);
            m[(*k, *k)] = cis(theta / 2.0);
            (m, vec![d])
        }
        RotationSpec::Composite { j, k, lambda, phi, .. } => {
            (embed_block(d, *j, *k, composite_block(*lambda, *phi)), vec![d])
        }
        RotationSpec::ControlledPhase { j, k, theta } => {
            let mut m = CMatrix::identity(d * d, d * d);
            m[(j * d + k, j * d + k)] = cis(-theta);
            (m, vec![d, d])
        }
        RotationSpec::Phases { phases, .. } => {
            let mut m = CMatrix::identity(d, d);
            for (n, a) in phases.iter().enumerate() {
                m[(n, n)] = cis(*a);
            }
            (m, vec![d])
        }
    };
    Operator::new(m, dims)
}

/// Largest `‖U†U − 1‖` entry accepted by [`qr_decompose`].
pub const UNITARITY_TOL: f64 = 1e-10;

/// Decompose a unitary into at most `d(d−1)/2` two-level rotations and a
/// final diagonal phase layer (applied first).
///
/// Columns are cleared left to right, each from the bottom up, with
/// rotations on levels `(column, row)`; zero entries are skipped.
pub fn qr_decompose(u: &CMatrix, d: usize) -> Result<GateList> {
    if u.nrows() != d || u.ncols() != d || d < 2 {
        return Err(Error::Validation(format!("expected a {d}×{d} unitary with d ≥ 2")));
    }
    let defect = (u.adjoint() * u - CMatrix::identity(d, d)).iter().map(|z| z.norm()).fold(0.0, f64::max);
    if !(defect <= UNITARITY_TOL) {
        return Err(Error::Validation(format!("input is not unitary (defect {defect:.3e})")));
    }
    let mut w = u.clone();
    let mut eliminations: Vec<(usize, usize, f64, f64)> = Vec::new();
    for col in 0..d - 1 {
        for row in (col + 1..d).rev() {
            let (a, b) = (w[(col, col)], w[(row, col)]);
            if b.norm() == 0.0 {
                continue;
            }
            // U(λ, φ) on (col, row) with c·b = i e^{iφ} s·a zeroes the entry.
            let lambda = b.norm().atan2(a.norm());
            let alpha = if a.norm() > 0.0 { a.arg() } else { 0.0 };
            let phi = b.arg() - alpha - FRAC_PI_2;
            let g = embed_block(d, col, row, composite_block(lambda, phi));
            w = g * w;
            w[(row, col)] = ZERO;
            eliminations.push((col, row, lambda, phi));
        }
    }
    let mut gates = Vec::new();
    let phases: Vec<f64> = (0..d).map(|n| w[(n, n)].arg()).collect();
    if phases.iter().any(|a| a.abs() > 1e-14) {
        gates.push(RotationSpec::Phases { qudit: 0, phases });
    }
    for &(j, k, lambda, phi) in eliminations.iter().rev() {
        gates.push(RotationSpec::Composite { qudit: 0, j, k, lambda: -lambda, phi });
    }
    Ok(GateList { d, gates })
}

fn full_swap(qudit: usize, j: usize, inverse: bool) -> RotationSpec {
    RotationSpec::Composite { qudit, j, k: j + 1, lambda: if inverse { -FRAC_PI_2 } else { FRAC_PI_2 }, phi: 0.0 }
}

/// Expand every population-mixing rotation with `k > j + 1` into a
/// conjugation by full-swap ladders around an adjacent rotation.
///
/// `U_{j,k}(λ, φ) = P† U_{j,j+1}(λ, φ − (k−j−1)π/2) P` with
/// `P = S_{j+1} ⋯ S_{k−1}` and `S_m = U_{m,m+1}(π/2, 0)`.
pub fn route_to_neighbors(g: &GateList) -> GateList {
    let mut gates = Vec::with_capacity(g.gates.len());
    for spec in &g.gates {
        let (qudit, j, k, lambda, phi) = match *spec {
            RotationSpec::X { qudit, j, k, theta } if k > j + 1 => (qudit, j, k, theta / 2.0, 0.0),
            RotationSpec::Composite { qudit, j, k, lambda, phi } if k > j + 1 => (qudit, j, k, lambda, phi),
            _ => {
                gates.push(spec.clone());
                continue;
            }
        };
        let span = k - j;
        for m in (j + 1..k).rev() {
            gates.push(full_swap(qudit, m, false));
        }
        gates.push(RotationSpec::Composite { qudit, j, k: j + 1, lambda, phi: phi - (span - 1) as f64 * FRAC_PI_2 });
        for m in j + 1..k {
            gates.push(full_swap(qudit, m, true));
        }
    }
    GateList { d: g.d, gates }
}

/// Long-range rotation `(qudit, j, k, λ, φ)`.
type LongRotation = (usize, usize, usize, f64, f64);

/// Recognize a routed ladder starting at `gates[i]`; returns the equivalent
/// long-range rotation and the number of entries used.
fn match_ladder(gates: &[RotationSpec], i: usize) -> Option<(LongRotation, usize)> {
    let RotationSpec::Composite { qudit: q, j: top, .. } = *gates.get(i)? else { return None };
    let is_swap = |idx: usize, m: usize, inv: bool| gates.get(idx).is_some_and(|g| *g == full_swap(q, m, inv));
    // Longest descending run S_top, S_{top−1}, …
    let mut run = 0;
    while run <= top && is_swap(i + run, top - run, false) {
        run += 1;
    }
    // The central rotation may itself look like a swap, so try shorter ladders too.
    for n in (1..=run.min(top)).rev() {
        let j = top - n;
        let Some(&RotationSpec::Composite { qudit: cq, j: cj, k: ck, lambda, phi }) = gates.get(i + n) else {
            continue;
        };
        if cq != q || cj != j || ck != j + 1 {
            continue;
        }
        if (0..n).all(|t| is_swap(i + n + 1 + t, j + 1 + t, true)) {
            return Some(((q, j, top + 1, lambda, phi + n as f64 * FRAC_PI_2), 2 * n + 1));
        }
    }
    None
}

/// Lower an adjacent-level gate list to a pulse schedule.
///
/// Routed ladders are fused back into one long-range encode/swap/decode
/// sequence; z-rotations and phase layers become frame updates.
pub fn lower_to_schedule(g: &GateList, plant: &Plant, cfg: &GateConfig) -> Result<Schedule> {
    g.validate()?;
    let mut b = SequenceBuilder::new(*plant, *cfg)?;
    let mut i = 0;
    while i < g.gates.len() {
        if let Some(((q, j, k, lambda, phi), used)) = match_ladder(&g.gates, i) {
            b.rotation(q, j, k, lambda, phi)?;
            i += used;
            continue;
        }
        match g.gates[i] {
            RotationSpec::X { qudit, j, k, theta } if k == j + 1 => b.rotation(qudit, j, k, theta / 2.0, 0.0)?,
            RotationSpec::Composite { qudit, j, k, lambda, phi } if k == j + 1 => {
                b.rotation(qudit, j, k, lambda, phi)?
            }
            RotationSpec::X { .. } | RotationSpec::Composite { .. } => {
                return Err(Error::Validation("non-adjacent rotation: route the gate list first".into()))
            }
            RotationSpec::Z { qudit, j, k, theta } => b.phase_layer(qudit, &[(j, -theta / 2.0), (k, theta / 2.0)])?,
            RotationSpec::Phases { qudit, ref phases } => {
                let layer: Vec<(usize, f64)> = phases.iter().copied().enumerate().collect();
                b.phase_layer(qudit, &layer)?
            }
            RotationSpec::ControlledPhase { j, k, theta } => b.controlled_phase(j, k, theta)?,
        }
        i += 1;
    }
    Ok(b.finish())
}

/// Parse a unitary given as a JSON 2-D array of `[re, im]` pairs.
pub fn unitary_from_json(v: &serde_json::Value) -> Result<CMatrix> {
    let rows: Vec<Vec<[f64; 2]>> = serde_json::from_value(v.clone())
        .map_err(|e| Error::Validation(format!("unitary must be rows of [re, im] pairs: {e}")))?;
    let d = rows.len();
    if d == 0 || rows.iter().any(|r| r.len() != d) {
        return Err(Error::Validation("unitary must be a non-empty square array".into()));
    }
    Ok(CMatrix::from_fn(d, d, |i, j| c(rows[i][j][0], rows[i][j][1])))
}

pub fn unitary_to_json(u: &CMatrix) -> serde_json::Value {
    let rows: Vec<Vec<[f64; 2]>> =
        (0..u.nrows()).map(|i| (0..u.ncols()).map(|j| [u[(i, j)].re, u[(i, j)].im]).collect()).collect();
    serde_json::json!(rows)
}

/// Haar-random unitary from a complex Ginibre matrix via Gram–Schmidt.
pub fn haar_unitary(d: usize, rng: &mut impl rand::Rng) -> CMatrix {
    use rand_distr::{Distribution, StandardNormal};
    let mut m = CMatrix::from_fn(d, d, |_, _| c(StandardNormal.sample(rng), StandardNormal.sample(rng)));
    for j in 0..d {
        for i in 0..j {
            let proj: C64 = (0..d).map(|r| m[(r, i)].conj() * m[(r, j)]).sum();
            for r in 0..d {
                let v = m[(r, i)];
                m[(r, j)] -= proj * v;
            }
        }
        let norm = (0..d).map(|r| m[(r, j)].norm_sqr()).sum::<f64>().sqrt();
        for r in 0..d {
            m[(r, j)] /= c(norm, 0.0);
        }
    }
    m
}

/// Max-entry distance.
pub fn max_entry_error(a: &CMatrix, b: &CMatrix) -> f64 {
    (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// `|Tr(A†B)| / d`: overlap of two unitaries up to a global phase.
pub fn phase_insensitive_overlap(a: &CMatrix, b: &CMatrix) -> f64 {
    (a.adjoint() * b).trace().norm() / a.nrows() as f64
}
