//! Dense complex linear algebra shared by every simulator in the crate.
//!
//! Tensor products follow the row-major Kronecker convention: for a product
//! space with factor dimensions `[d0, d1, ..., dk]` the basis state
//! `|i0, i1, ..., ik⟩` sits at flat index `((i0 * d1 + i1) * d2 + i2) ...`,
//! so the first factor is the most significant digit. `kron(a, b)` is the
//! block matrix `[a_ij * b]`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Largest Hilbert-space dimension any constructor will build.
pub const MAX_HILBERT_DIM: usize = 4096;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

#[inline]
pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// `e^{i x}`
#[inline]
pub fn cis(x: f64) -> C64 {
    let (s, co) = x.sin_cos();
    C64::new(co, s)
}

fn check_dims(dims: &[usize]) -> Result<usize> {
    let mut total: usize = 1;
    for &d in dims {
        if d == 0 {
            return Err(Error::Validation("factor dimension must be positive".into()));
        }
        total = total
            .checked_mul(d)
            .filter(|&t| t <= MAX_HILBERT_DIM)
            .ok_or(Error::HilbertSize { requested: dims.to_vec(), max: MAX_HILBERT_DIM })?;
    }
    Ok(total)
}

/// Dense square operator on a tensor-product space.
#[derive(Debug, Clone, PartialEq)]
pub struct Operator {
    matrix: CMatrix,
    dims: Vec<usize>,
}

impl Operator {
    pub fn new(matrix: CMatrix, dims: Vec<usize>) -> Result<Self> {
        let n = check_dims(&dims)?;
        if matrix.nrows() != n || matrix.ncols() != n {
            return Err(Error::Validation(format!(
                "operator is {}x{} but dims {:?} imply side {}",
                matrix.nrows(),
                matrix.ncols(),
                dims,
                n
            )));
        }
        Ok(Self { matrix, dims })
    }

    /// Single-factor operator.
    pub fn from_matrix(matrix: CMatrix) -> Result<Self> {
        let n = matrix.nrows();
        Self::new(matrix, vec![n])
    }

    pub fn identity(dims: &[usize]) -> Result<Self> {
        let n = check_dims(dims)?;
        Ok(Self { matrix: CMatrix::identity(n, n), dims: dims.to_vec() })
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        let n = check_dims(dims)?;
        Ok(Self { matrix: CMatrix::zeros(n, n), dims: dims.to_vec() })
    }

    pub fn from_real_diagonal(diag: &[f64]) -> Result<Self> {
        let m = CMatrix::from_diagonal(&CVector::from_iterator(diag.len(), diag.iter().map(|&x| c(x, 0.0))));
        Self::from_matrix(m)
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn adjoint(&self) -> Self {
        Self { matrix: self.matrix.adjoint(), dims: self.dims.clone() }
    }

    pub fn max_abs(&self) -> f64 {
        self.matrix.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Largest entry of `|A - A†|`.
    pub fn hermiticity_defect(&self) -> f64 {
        let n = self.dim();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in i..n {
                worst = worst.max((self.matrix[(i, j)] - self.matrix[(j, i)].conj()).norm());
            }
        }
        worst
    }

    pub fn is_hermitian(&self, rel_tol: f64) -> bool {
        self.hermiticity_defect() <= rel_tol * self.max_abs().max(f64::MIN_POSITIVE)
    }

    /// `[self, other]`
    pub fn commutator(&self, other: &Operator) -> CMatrix {
        &self.matrix * &other.matrix - &other.matrix * &self.matrix
    }

    pub fn apply(&self, state: &QuantumState) -> Result<QuantumState> {
        if state.dims() != self.dims() {
            return Err(Error::Validation(format!(
                "operator dims {:?} do not match state dims {:?}",
                self.dims, state.dims
            )));
        }
        Ok(QuantumState { amplitudes: &self.matrix * &state.amplitudes, dims: self.dims.clone() })
    }

    pub fn scale(&self, k: f64) -> Self {
        Self { matrix: &self.matrix * c(k, 0.0), dims: self.dims.clone() }
    }

    pub fn add(&self, other: &Operator) -> Result<Self> {
        if self.dims != other.dims {
            return Err(Error::Validation(format!("cannot add dims {:?} and {:?}", self.dims, other.dims)));
        }
        Ok(Self { matrix: &self.matrix + &other.matrix, dims: self.dims.clone() })
    }

    pub fn mul(&self, other: &Operator) -> Result<Self> {
        if self.dims != other.dims {
            return Err(Error::Validation(format!("cannot multiply dims {:?} and {:?}", self.dims, other.dims)));
        }
        Ok(Self { matrix: &self.matrix * &other.matrix, dims: self.dims.clone() })
    }
}

/// Tensor product `a ⊗ b`.
pub fn kron(a: &Operator, b: &Operator) -> Result<Operator> {
    let dims: Vec<usize> = a.dims.iter().chain(b.dims.iter()).copied().collect();
    check_dims(&dims)?;
    Ok(Operator { matrix: a.matrix.kronecker(&b.matrix), dims })
}

/// Tensor product of a list of factors, left to right.
pub fn kron_all(factors: &[&Operator]) -> Result<Operator> {
    let (first, rest) =
        factors.split_first().ok_or_else(|| Error::Validation("kron_all needs at least one factor".into()))?;
    rest.iter().try_fold((*first).clone(), |acc, f| kron(&acc, f))
}

/// Pure state on a tensor-product space.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantumState {
    amplitudes: CVector,
    dims: Vec<usize>,
}

impl QuantumState {
    pub fn new(amplitudes: CVector, dims: Vec<usize>) -> Result<Self> {
        let n = check_dims(&dims)?;
        if amplitudes.len() != n {
            return Err(Error::Validation(format!(
                "state has {} amplitudes but dims {:?} imply {}",
                amplitudes.len(),
                dims,
                n
            )));
        }
        Ok(Self { amplitudes, dims })
    }

    /// Computational basis state with the given per-factor indices.
    pub fn basis(dims: &[usize], indices: &[usize]) -> Result<Self> {
        let n = check_dims(dims)?;
        let flat = flat_index(dims, indices)?;
        let mut v = CVector::zeros(n);
        v[flat] = ONE;
        Ok(Self { amplitudes: v, dims: dims.to_vec() })
    }

    pub fn amplitudes(&self) -> &CVector {
        &self.amplitudes
    }

    pub fn into_amplitudes(self) -> CVector {
        self.amplitudes
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.norm()
    }

    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::Validation("cannot normalize a zero or non-finite state".into()));
        }
        Ok(Self { amplitudes: &self.amplitudes / c(n, 0.0), dims: self.dims.clone() })
    }

    /// `⟨self|other⟩`
    pub fn inner(&self, other: &QuantumState) -> C64 {
        self.amplitudes.dotc(&other.amplitudes)
    }

    /// `|⟨self|other⟩|²`
    pub fn overlap2(&self, other: &QuantumState) -> f64 {
        self.inner(other).norm_sqr()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|z| z.norm_sqr()).collect()
    }
}

/// Row-major flat index of a multi-index.
pub fn flat_index(dims: &[usize], indices: &[usize]) -> Result<usize> {
    if dims.len() != indices.len() {
        return Err(Error::Validation(format!("index {:?} does not match dims {:?}", indices, dims)));
    }
    let mut flat = 0;
    for (&d, &i) in dims.iter().zip(indices) {
        if i >= d {
            return Err(Error::IndexOutOfRange(format!("index {} in factor of dimension {}", i, d)));
        }
        flat = flat * d + i;
    }
    Ok(flat)
}

/// Inverse of [`flat_index`].
pub fn multi_index(dims: &[usize], mut flat: usize) -> Vec<usize> {
    let mut out = vec![0; dims.len()];
    for (slot, &d) in out.iter_mut().zip(dims).rev() {
        *slot = flat % d;
        flat /= d;
    }
    out
}

/// Hermitian eigendecomposition with eigenvalues sorted ascending.
#[derive(Debug, Clone)]
pub struct Eigh {
    pub values: Vec<f64>,
    /// Eigenvectors stored as columns, in the order of `values`.
    pub vectors: CMatrix,
}

impl Eigh {
    pub fn column(&self, k: usize) -> CVector {
        self.vectors.column(k).into_owned()
    }

    /// `V diag(f(E)) V†`
    pub fn map_spectrum(&self, f: impl Fn(f64) -> C64) -> CMatrix {
        let mut scaled = self.vectors.clone();
        for (k, &e) in self.values.iter().enumerate() {
            let w = f(e);
            scaled.column_mut(k).iter_mut().for_each(|z| *z *= w);
        }
        scaled * self.vectors.adjoint()
    }

    /// `exp(-i H t)`
    pub fn propagator(&self, t: f64) -> CMatrix {
        self.map_spectrum(|e| cis(-e * t))
    }
}

/// Relative Hermiticity tolerance accepted by [`eigh`].
pub const HERMITIAN_TOL: f64 = 1e-9;

pub fn eigh(h: &Operator) -> Result<Eigh> {
    if !h.is_hermitian(HERMITIAN_TOL) {
        return Err(Error::Validation(format!(
            "eigh input is not Hermitian (defect {:e}, scale {:e})",
            h.hermiticity_defect(),
            h.max_abs()
        )));
    }
    Ok(eigh_matrix(h.matrix()))
}

/// Unchecked variant for internal callers that built `h` Hermitian.
pub fn eigh_matrix(h: &CMatrix) -> Eigh {
    let n = h.nrows();
    // Symmetrize so round-off in the caller cannot leak an anti-Hermitian part.
    let sym = (h + h.adjoint()) * c(0.5, 0.0);
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vectors = CMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Eigh { values, vectors }
}

/// Advance `state` by `exp(-i h dt)`, using the exact eigendecomposition.
pub fn propagate_step(state: &QuantumState, h: &Operator, dt: f64) -> Result<QuantumState> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::Validation(format!("time step must be positive, got {dt}")));
    }
    if state.dims() != h.dims() {
        return Err(Error::Validation(format!(
            "state dims {:?} do not match Hamiltonian dims {:?}",
            state.dims(),
            h.dims()
        )));
    }
    let e = eigh(h)?;
    let u = e.propagator(dt);
    QuantumState::new(u * state.amplitudes(), state.dims().to_vec())
}

/// Matrix exponential of a general (not necessarily Hermitian) matrix by
/// scaling and squaring with a truncated Taylor series.
pub fn expm(a: &CMatrix) -> CMatrix {
    let n = a.nrows();
    let norm1 = (0..n).map(|j| a.column(j).iter().map(|z| z.norm()).sum::<f64>()).fold(0.0, f64::max);
    let squarings = if norm1 > 0.25 { (norm1 / 0.25).log2().ceil() as i32 } else { 0 };
    let scaled = a * c(0.5f64.powi(squarings), 0.0);
    let mut term = CMatrix::identity(n, n);
    let mut sum = CMatrix::identity(n, n);
    for k in 1..=18 {
        term = &term * &scaled * c(1.0 / k as f64, 0.0);
        sum += &term;
        if term.iter().all(|z| z.norm() < 1e-18) {
            break;
        }
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

/// Pairwise (cascade) summation; result independent of thread scheduling.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        n if n <= 8 => xs.iter().sum(),
        n => {
            let (l, r) = xs.split_at(n / 2);
            pairwise_sum(l) + pairwise_sum(r)
        }
    }
}

/// Operators on a single `n`-level factor.
pub mod ops {
    use super::*;

    /// Annihilation operator truncated to `n` levels.
    pub fn destroy(n: usize) -> CMatrix {
        let mut m = CMatrix::zeros(n, n);
        for k in 1..n {
            m[(k - 1, k)] = c((k as f64).sqrt(), 0.0);
        }
        m
    }

    pub fn number(n: usize) -> CMatrix {
        CMatrix::from_diagonal(&CVector::from_iterator(n, (0..n).map(|k| c(k as f64, 0.0))))
    }

    /// `|i⟩⟨j|`
    pub fn ket_bra(n: usize, i: usize, j: usize) -> CMatrix {
        let mut m = CMatrix::zeros(n, n);
        m[(i, j)] = ONE;
        m
    }

    pub fn identity(n: usize) -> CMatrix {
        CMatrix::identity(n, n)
    }

    pub fn pauli_z() -> CMatrix {
        CMatrix::from_row_slice(2, 2, &[ONE, ZERO, ZERO, -ONE])
    }

    /// Kronecker product of raw matrices (same convention as [`super::kron`]).
    pub fn kron_raw(factors: &[&CMatrix]) -> CMatrix {
        let mut acc = CMatrix::identity(1, 1);
        for f in factors {
            acc = acc.kronecker(f);
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn op(m: CMatrix) -> Operator {
        Operator::from_matrix(m).unwrap()
    }

    fn random_hermitian(n: usize, seed: &[f64]) -> CMatrix {
        let mut m = CMatrix::zeros(n, n);
        let mut k = 0;
        let mut next = || {
            k += 1;
            seed[k % seed.len()] * ((k as f64) * 0.7311).sin()
        };
        for i in 0..n {
            m[(i, i)] = c(next(), 0.0);
            for j in (i + 1)..n {
                let z = c(next(), next());
                m[(i, j)] = z;
                m[(j, i)] = z.conj();
            }
        }
        m
    }

    #[test]
    fn kron_of_identities_is_identity() {
        let k = kron(&Operator::identity(&[2]).unwrap(), &Operator::identity(&[3]).unwrap()).unwrap();
        assert_eq!(k.dims(), &[2, 3]);
        assert_eq!(k.matrix(), &CMatrix::identity(6, 6));
    }

    #[test]
    fn kron_sigma_z_identity_diagonal() {
        let k = kron(&op(ops::pauli_z()), &op(ops::identity(2))).unwrap();
        let d: Vec<f64> = (0..4).map(|i| k.matrix()[(i, i)].re).collect();
        assert_eq!(d, vec![1.0, 1.0, -1.0, -1.0]);
    }

    #[test]
    fn kron_ladder_action() {
        let k = kron(&op(ops::destroy(3)), &op(ops::identity(2))).unwrap();
        let s = QuantumState::basis(&[3, 2], &[1, 0]).unwrap();
        let out = k.apply(&s).unwrap();
        let expect = QuantumState::basis(&[3, 2], &[0, 0]).unwrap();
        assert!((out.inner(&expect) - ONE).norm() < 1e-15);
        assert!((out.norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn kron_rejects_oversized_products() {
        let a = Operator::identity(&[64]).unwrap();
        let b = Operator::identity(&[65]).unwrap();
        assert!(matches!(kron(&a, &b), Err(Error::HilbertSize { .. })));
    }

    #[test]
    fn eigh_of_diagonal() {
        let e = eigh(&Operator::from_real_diagonal(&[2.0, 0.0, 1.0]).unwrap()).unwrap();
        assert_eq!(e.values, vec![0.0, 1.0, 2.0]);
        for k in 0..3 {
            let col = e.column(k);
            let hot = match k {
                0 => 1,
                1 => 2,
                _ => 0,
            };
            assert!((col[hot].norm() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn eigh_resonant_two_level_splitting() {
        let (w, g) = (7.0, 0.035);
        let h = CMatrix::from_row_slice(2, 2, &[c(w, 0.0), c(g, 0.0), c(g, 0.0), c(w, 0.0)]);
        let e = eigh(&op(h)).unwrap();
        assert!(((e.values[1] - e.values[0]) - 2.0 * g).abs() < 1e-12);
    }

    #[test]
    fn eigh_rejects_non_hermitian() {
        let h = CMatrix::from_row_slice(2, 2, &[ZERO, ONE, ZERO, ZERO]);
        assert!(matches!(eigh(&op(h)), Err(Error::Validation(_))));
    }

    #[test]
    fn propagate_zero_hamiltonian_is_identity() {
        let s = QuantumState::basis(&[3], &[1]).unwrap();
        let out = propagate_step(&s, &Operator::zeros(&[3]).unwrap(), 1.0).unwrap();
        assert_eq!(out, s);
    }

    #[test]
    fn propagate_rabi_half_period() {
        let g = 2.0 * std::f64::consts::PI * 35e6;
        let h = CMatrix::from_row_slice(2, 2, &[ZERO, c(g, 0.0), c(g, 0.0), ZERO]);
        let s = QuantumState::basis(&[2], &[0]).unwrap();
        let out = propagate_step(&s, &op(h), std::f64::consts::PI / (2.0 * g)).unwrap();
        assert!((out.amplitudes()[1] - (-I)).norm() < 1e-8);
        assert!(out.amplitudes()[0].norm() < 1e-8);
    }

    #[test]
    fn propagate_rejects_bad_step() {
        let s = QuantumState::basis(&[2], &[0]).unwrap();
        assert!(propagate_step(&s, &Operator::zeros(&[2]).unwrap(), 0.0).is_err());
    }

    #[test]
    fn long_run_norm_drift() {
        // 1e5 steps with a cached exact propagator vs one direct exponential.
        let h = random_hermitian(6, &[1.3, -0.4, 2.2, 0.9, -1.7]);
        let e = eigh_matrix(&h);
        let dt = 1e-3;
        let u = e.propagator(dt);
        let mut v = CVector::from_element(6, c(1.0 / 6f64.sqrt(), 0.0));
        let v0 = v.clone();
        for _ in 0..100_000 {
            v = &u * v;
        }
        assert!((v.norm() - 1.0).abs() < 1e-8);
        let direct = e.propagator(dt * 1e5) * v0;
        assert!((v - direct).norm() < 1e-8);
    }

    #[test]
    fn expm_matches_eigh_for_hermitian_generator() {
        let h = random_hermitian(5, &[0.8, 1.9, -2.4, 0.3]);
        let a = &h * c(0.0, -3.0);
        let lhs = expm(&a);
        let rhs = eigh_matrix(&h).propagator(3.0);
        assert!((lhs - rhs).norm() < 1e-11);
    }

    #[test]
    fn multi_index_roundtrip() {
        let dims = [3, 2, 4];
        for f in 0..24 {
            assert_eq!(flat_index(&dims, &multi_index(&dims, f)).unwrap(), f);
        }
    }

    fn arb_hermitian(max_n: usize) -> impl Strategy<Value = CMatrix> {
        (1..=max_n).prop_flat_map(|n| {
            prop::collection::vec(-5.0f64..5.0, 2 * n * n).prop_map(move |xs| {
                let mut m = CMatrix::zeros(n, n);
                for i in 0..n {
                    for j in 0..n {
                        m[(i, j)] = c(xs[2 * (i * n + j)], xs[2 * (i * n + j) + 1]);
                    }
                }
                (&m + m.adjoint()) * c(0.5, 0.0)
            })
        })
    }

    fn arb_op(max_n: usize) -> impl Strategy<Value = Operator> {
        (1..=max_n).prop_flat_map(|n| {
            // Small integers keep every product exact, so associativity is bit-exact.
            prop::collection::vec(-3i32..=3, 2 * n * n).prop_map(move |xs| {
                let m = CMatrix::from_iterator(n, n, xs.chunks(2).map(|p| c(p[0] as f64, p[1] as f64)));
                Operator::from_matrix(m).unwrap()
            })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn eigh_reconstructs_and_is_orthonormal(h in arb_hermitian(64)) {
            let n = h.nrows();
            let e = eigh_matrix(&h);
            for w in e.values.windows(2) {
                prop_assert!(w[0] <= w[1]);
            }
            let vhv = e.vectors.adjoint() * &e.vectors;
            prop_assert!((vhv - CMatrix::identity(n, n)).iter().all(|z| z.norm() < 1e-10));
            let rebuilt = e.map_spectrum(|x| c(x, 0.0));
            let scale = h.iter().map(|z| z.norm()).fold(1e-300, f64::max);
            prop_assert!((rebuilt - &h).iter().all(|z| z.norm() <= 1e-9 * scale));
        }

        #[test]
        fn exact_step_preserves_norm(h in arb_hermitian(12), dt in 1e-3f64..10.0) {
            let n = h.nrows();
            let s = QuantumState::new(CVector::from_fn(n, |i, _| c(1.0 + i as f64, -0.5)), vec![n]).unwrap().normalized().unwrap();
            let out = propagate_step(&s, &Operator::from_matrix(h).unwrap(), dt).unwrap();
            prop_assert!((out.norm() - 1.0).abs() < 1e-10);
        }

        #[test]
        fn kron_is_associative(a in arb_op(3), b in arb_op(3), cc in arb_op(3)) {
            let left = kron(&kron(&a, &b).unwrap(), &cc).unwrap();
            let right = kron(&a, &kron(&b, &cc).unwrap()).unwrap();
            prop_assert_eq!(left, right);
        }
    }
}
