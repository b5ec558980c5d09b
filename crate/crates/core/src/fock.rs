//! Truncated Fock-space operator algebra for the KPO and its ancilla.
//!
//! Every operator carries its [`Dims`]. Two-mode objects are stored with the
//! KPO index major: basis state `|n_a, n_b>` sits at `n_a * dim_b + n_b`.
//! Single-mode objects use `dim_b = 1`.

use std::ops::{Add, Mul, Sub};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Truncation dimensions of the (KPO, ancilla) pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub kpo: usize,
    pub ancilla: usize,
}

impl Dims {
    pub fn new(kpo: usize, ancilla: usize) -> Self {
        Self { kpo, ancilla }
    }

    pub fn single(kpo: usize) -> Self {
        Self { kpo, ancilla: 1 }
    }

    pub fn total(&self) -> usize {
        self.kpo * self.ancilla
    }

    pub fn is_single_mode(&self) -> bool {
        self.ancilla == 1
    }

    /// Flat index of `|n_a, n_b>`.
    #[inline]
    pub fn index(&self, n_a: usize, n_b: usize) -> usize {
        n_a * self.ancilla + n_b
    }

    /// Inverse of [`Dims::index`].
    #[inline]
    pub fn split(&self, i: usize) -> (usize, usize) {
        (i / self.ancilla, i % self.ancilla)
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.kpo, self.ancilla)
    }
}

fn check_dims(expected: Dims, got: Dims) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            expected: expected.to_string(),
            got: got.to_string(),
        })
    }
}

/// Dense complex operator with dimension metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Operator {
    dims: Dims,
    matrix: DMatrix<C64>,
}

impl Operator {
    pub fn from_matrix(dims: Dims, matrix: DMatrix<C64>) -> Result<Self> {
        let n = dims.total();
        if matrix.nrows() != n || matrix.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: format!("{n}x{n} matrix for dims {dims}"),
                got: format!("{}x{}", matrix.nrows(), matrix.ncols()),
            });
        }
        Ok(Self { dims, matrix })
    }

    pub fn zeros(dims: Dims) -> Self {
        let n = dims.total();
        Self {
            dims,
            matrix: DMatrix::zeros(n, n),
        }
    }

    pub fn identity(dims: Dims) -> Self {
        let n = dims.total();
        Self {
            dims,
            matrix: DMatrix::identity(n, n),
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.matrix
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.matrix[(row, col)]
    }

    pub fn dagger(&self) -> Self {
        Self {
            dims: self.dims,
            matrix: self.matrix.adjoint(),
        }
    }

    pub fn scale(&self, c: C64) -> Self {
        Self {
            dims: self.dims,
            matrix: &self.matrix * c,
        }
    }

    pub fn scale_real(&self, c: f64) -> Self {
        self.scale(C64::new(c, 0.0))
    }

    pub fn trace(&self) -> C64 {
        self.matrix.trace()
    }

    /// `max |X - X^dagger|` over all entries.
    pub fn hermiticity_error(&self) -> f64 {
        max_anti_hermitian_part(&self.matrix)
    }

    /// `A B - B A`.
    pub fn commutator(&self, other: &Operator) -> Result<Operator> {
        check_dims(self.dims, other.dims)?;
        Ok(Self {
            dims: self.dims,
            matrix: &self.matrix * &other.matrix - &other.matrix * &self.matrix,
        })
    }

    pub fn try_mul(&self, other: &Operator) -> Result<Operator> {
        check_dims(self.dims, other.dims)?;
        Ok(Self {
            dims: self.dims,
            matrix: &self.matrix * &other.matrix,
        })
    }

    pub fn try_add(&self, other: &Operator) -> Result<Operator> {
        check_dims(self.dims, other.dims)?;
        Ok(Self {
            dims: self.dims,
            matrix: &self.matrix + &other.matrix,
        })
    }

    pub fn pow(&self, k: u32) -> Operator {
        let mut out = Operator::identity(self.dims);
        for _ in 0..k {
            out.matrix = &out.matrix * &self.matrix;
        }
        out
    }

    pub fn apply(&self, psi: &StateVector) -> Result<StateVector> {
        check_dims(self.dims, psi.dims)?;
        Ok(StateVector {
            dims: self.dims,
            amplitudes: &self.matrix * &psi.amplitudes,
        })
    }

    /// Non-zero entries as `(row, col, value)`, in row-major order.
    pub fn nonzeros(&self) -> Vec<(usize, usize, C64)> {
        let n = self.dim();
        let mut out = Vec::new();
        for r in 0..n {
            for c in 0..n {
                let v = self.matrix[(r, c)];
                if v.re != 0.0 || v.im != 0.0 {
                    out.push((r, c, v));
                }
            }
        }
        out
    }
}

// The panicking operator impls are for building Hamiltonians out of operators
// that were constructed together; use the `try_*` methods on untrusted input.
impl Add for &Operator {
    type Output = Operator;
    fn add(self, rhs: &Operator) -> Operator {
        self.try_add(rhs).expect("operator dims must agree")
    }
}

impl Sub for &Operator {
    type Output = Operator;
    fn sub(self, rhs: &Operator) -> Operator {
        check_dims(self.dims, rhs.dims).expect("operator dims must agree");
        Operator {
            dims: self.dims,
            matrix: &self.matrix - &rhs.matrix,
        }
    }
}

impl Mul for &Operator {
    type Output = Operator;
    fn mul(self, rhs: &Operator) -> Operator {
        self.try_mul(rhs).expect("operator dims must agree")
    }
}

impl Mul<f64> for &Operator {
    type Output = Operator;
    fn mul(self, rhs: f64) -> Operator {
        self.scale_real(rhs)
    }
}

pub(crate) fn max_anti_hermitian_part(m: &DMatrix<C64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for r in 0..n {
        for c in r..n {
            let d = (m[(r, c)] - m[(c, r)].conj()).norm();
            worst = worst.max(d);
        }
    }
    worst
}

/// Annihilation operator on a single mode, `<n-1|a|n> = sqrt(n)`.
pub fn destroy(dim: usize) -> Result<Operator> {
    if dim < 2 {
        return Err(Error::InvalidDimension {
            dim,
            reason: "ladder operators need at least two levels",
        });
    }
    let mut m = DMatrix::zeros(dim, dim);
    for n in 1..dim {
        m[(n - 1, n)] = C64::new((n as f64).sqrt(), 0.0);
    }
    Ok(Operator {
        dims: Dims::single(dim),
        matrix: m,
    })
}

pub fn create(dim: usize) -> Result<Operator> {
    Ok(destroy(dim)?.dagger())
}

/// `a^dagger a`, diagonal with entries `0..dim` exactly.
pub fn number(dim: usize) -> Result<Operator> {
    if dim < 1 {
        return Err(Error::InvalidDimension {
            dim,
            reason: "empty mode",
        });
    }
    let m = DMatrix::from_fn(dim, dim, |r, c| {
        if r == c {
            C64::new(r as f64, 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    });
    Ok(Operator {
        dims: Dims::single(dim),
        matrix: m,
    })
}

pub fn identity(dim: usize) -> Operator {
    Operator::identity(Dims::single(dim))
}

/// Kronecker product `A (x) B` of a KPO operator and an ancilla operator.
pub fn tensor(a: &Operator, b: &Operator) -> Result<Operator> {
    if !a.dims.is_single_mode() || !b.dims.is_single_mode() {
        return Err(Error::DimensionMismatch {
            expected: "single-mode factors".into(),
            got: format!("{} and {}", a.dims, b.dims),
        });
    }
    Ok(Operator {
        dims: Dims::new(a.dims.kpo, b.dims.kpo),
        matrix: a.matrix.kronecker(&b.matrix),
    })
}

/// `Pi_k = sum_n |4n+k><4n+k|` truncated to `dim`.
pub fn mod4_projector(k: usize, dim: usize) -> Result<Operator> {
    if k > 3 {
        return Err(Error::InvalidModClass(k));
    }
    let m = DMatrix::from_fn(dim, dim, |r, c| {
        if r == c && r % 4 == k {
            C64::new(1.0, 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    });
    Ok(Operator {
        dims: Dims::single(dim),
        matrix: m,
    })
}

/// Pure state in the truncated space.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    dims: Dims,
    amplitudes: DVector<C64>,
}

impl StateVector {
    pub fn from_amplitudes(dims: Dims, amplitudes: DVector<C64>) -> Result<Self> {
        if amplitudes.len() != dims.total() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} amplitudes for dims {dims}", dims.total()),
                got: amplitudes.len().to_string(),
            });
        }
        Ok(Self { dims, amplitudes })
    }

    /// Fock state `|n>` of a single mode.
    pub fn fock(dim: usize, n: usize) -> Result<Self> {
        if n >= dim {
            return Err(Error::InvalidDimension {
                dim,
                reason: "Fock index outside the truncation",
            });
        }
        let mut v = DVector::zeros(dim);
        v[n] = C64::new(1.0, 0.0);
        Ok(Self {
            dims: Dims::single(dim),
            amplitudes: v,
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn amplitudes(&self) -> &DVector<C64> {
        &self.amplitudes
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.norm()
    }

    pub fn normalize(&mut self) {
        let n = self.norm();
        if n > 0.0 {
            self.amplitudes /= C64::new(n, 0.0);
        }
    }

    pub fn normalized(mut self) -> Self {
        self.normalize();
        self
    }

    /// `<self|other>`.
    pub fn inner(&self, other: &StateVector) -> Result<C64> {
        check_dims(self.dims, other.dims)?;
        Ok(self.amplitudes.dotc(&other.amplitudes))
    }

    /// `alpha |self> + beta |other>`, unnormalized.
    pub fn superpose(&self, alpha: C64, other: &StateVector, beta: C64) -> Result<StateVector> {
        check_dims(self.dims, other.dims)?;
        Ok(Self {
            dims: self.dims,
            amplitudes: &self.amplitudes * alpha + &other.amplitudes * beta,
        })
    }

    /// `|self> (x) |other>`.
    pub fn tensor(&self, other: &StateVector) -> Result<StateVector> {
        if !self.dims.is_single_mode() || !other.dims.is_single_mode() {
            return Err(Error::DimensionMismatch {
                expected: "single-mode factors".into(),
                got: format!("{} and {}", self.dims, other.dims),
            });
        }
        Ok(Self {
            dims: Dims::new(self.dims.kpo, other.dims.kpo),
            amplitudes: self.amplitudes.kronecker(&other.amplitudes),
        })
    }

    /// KPO state with the ancilla in vacuum; identity when `dim_b == 1`.
    pub fn with_ancilla_vacuum(&self, dim_b: usize) -> Result<StateVector> {
        if dim_b == 1 {
            return Ok(self.clone());
        }
        self.tensor(&StateVector::fock(dim_b, 0)?)
    }

    /// `|self><self|` as an operator.
    pub fn projector(&self) -> Operator {
        Operator {
            dims: self.dims,
            matrix: &self.amplitudes * self.amplitudes.adjoint(),
        }
    }

    pub fn to_density(&self) -> DensityState {
        DensityState {
            dims: self.dims,
            matrix: &self.amplitudes * self.amplitudes.adjoint(),
        }
    }
}

/// Density matrix. Hermiticity and unit trace are monitored, not enforced.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityState {
    dims: Dims,
    matrix: DMatrix<C64>,
}

impl DensityState {
    pub fn from_matrix(dims: Dims, matrix: DMatrix<C64>) -> Result<Self> {
        let op = Operator::from_matrix(dims, matrix)?;
        Ok(Self {
            dims,
            matrix: op.matrix,
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.matrix
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace().re
    }

    pub fn purity(&self) -> f64 {
        // Tr(rho^2) = sum |rho_ij|^2 for Hermitian rho.
        self.matrix.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn hermiticity_error(&self) -> f64 {
        max_anti_hermitian_part(&self.matrix)
    }

    /// Smallest eigenvalue of the Hermitian part.
    pub fn min_eigenvalue(&self) -> f64 {
        let h = (&self.matrix + self.matrix.adjoint()) * C64::new(0.5, 0.0);
        h.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// `<psi|rho|psi>`.
    pub fn population(&self, psi: &StateVector) -> Result<f64> {
        check_dims(self.dims, psi.dims)?;
        let v = &self.matrix * &psi.amplitudes;
        Ok(psi.amplitudes.dotc(&v).re)
    }

    /// Convex combination `w rho_1 + (1 - w) rho_2`.
    pub fn mix(&self, other: &DensityState, w: f64) -> Result<DensityState> {
        check_dims(self.dims, other.dims)?;
        Ok(Self {
            dims: self.dims,
            matrix: &self.matrix * C64::new(w, 0.0) + &other.matrix * C64::new(1.0 - w, 0.0),
        })
    }
}

/// Result of tracing out the ancilla.
#[derive(Clone, Debug)]
pub struct Reduced {
    pub state: DensityState,
    /// Set when the input had no ancilla and was returned unchanged.
    pub noop: bool,
}

/// Trace out the ancilla, leaving the KPO state.
pub fn partial_trace_ancilla(rho: &DensityState) -> Reduced {
    let dims = rho.dims;
    if dims.is_single_mode() {
        return Reduced {
            state: rho.clone(),
            noop: true,
        };
    }
    let (na, nb) = (dims.kpo, dims.ancilla);
    let mut out = DMatrix::zeros(na, na);
    for i in 0..na {
        for j in 0..na {
            let mut acc = C64::new(0.0, 0.0);
            for k in 0..nb {
                acc += rho.matrix[(i * nb + k, j * nb + k)];
            }
            out[(i, j)] = acc;
        }
    }
    Reduced {
        state: DensityState {
            dims: Dims::single(na),
            matrix: out,
        },
        noop: false,
    }
}

/// Anything an operator can be averaged over.
pub trait QuantumState {
    fn dims(&self) -> Dims;
    fn expectation_of(&self, op: &Operator) -> Result<C64>;
}

impl QuantumState for StateVector {
    fn dims(&self) -> Dims {
        self.dims
    }

    fn expectation_of(&self, op: &Operator) -> Result<C64> {
        check_dims(op.dims, self.dims)?;
        let v = &op.matrix * &self.amplitudes;
        Ok(self.amplitudes.dotc(&v))
    }
}

impl QuantumState for DensityState {
    fn dims(&self) -> Dims {
        self.dims
    }

    fn expectation_of(&self, op: &Operator) -> Result<C64> {
        check_dims(op.dims, self.dims)?;
        // Tr(op rho) without forming the product.
        let n = self.matrix.nrows();
        let mut acc = C64::new(0.0, 0.0);
        for i in 0..n {
            for k in 0..n {
                acc += op.matrix[(i, k)] * self.matrix[(k, i)];
            }
        }
        Ok(acc)
    }
}

/// `Tr(op rho)` or `<psi|op|psi>`.
pub fn expectation<S: QuantumState + ?Sized>(op: &Operator, state: &S) -> Result<C64> {
    state.expectation_of(op)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    #[test]
    fn destroy_lowers_fock_states() {
        let a = destroy(4).unwrap();
        let out = a.apply(&StateVector::fock(4, 3).unwrap()).unwrap();
        let expected = StateVector::fock(4, 2).unwrap();
        for i in 0..4 {
            assert_abs_diff_eq!(
                (out.amplitudes()[i] - expected.amplitudes()[i] * 3f64.sqrt()).norm(),
                0.0,
                epsilon = 1e-15
            );
        }
        let vac = a.apply(&StateVector::fock(4, 0).unwrap()).unwrap();
        assert_eq!(vac.norm(), 0.0);
    }

    #[test]
    fn destroy_rejects_tiny_dims() {
        assert!(matches!(destroy(1), Err(Error::InvalidDimension { .. })));
        assert!(matches!(destroy(0), Err(Error::InvalidDimension { .. })));
    }

    #[test]
    fn canonical_commutator_below_the_edge() {
        let a = destroy(40).unwrap();
        let comm = a.commutator(&a.dagger()).unwrap();
        for r in 0..39 {
            for cc in 0..39 {
                let want = if r == cc { 1.0 } else { 0.0 };
                assert_abs_diff_eq!((comm.get(r, cc) - c(want)).norm(), 0.0, epsilon = 1e-12);
            }
        }
        // The truncation edge is where the algebra breaks.
        assert_abs_diff_eq!(comm.get(39, 39).re, -39.0, epsilon = 1e-12);
    }

    #[test]
    fn number_operator_is_exact() {
        let n = number(12).unwrap();
        let a = destroy(12).unwrap();
        let ada = &a.dagger() * &a;
        for r in 0..12 {
            assert_eq!(n.get(r, r), c(r as f64));
            for cc in 0..12 {
                assert_abs_diff_eq!((ada.get(r, cc) - n.get(r, cc)).norm(), 0.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn tensor_examples() {
        let i6 = tensor(&identity(2), &identity(3)).unwrap();
        assert_eq!(i6, Operator::identity(Dims::new(2, 3)));

        let ab = tensor(&destroy(3).unwrap(), &destroy(2).unwrap()).unwrap();
        let d = ab.dims();
        assert_eq!(ab.get(d.index(0, 0), d.index(1, 1)), c(1.0));
    }

    #[test]
    fn tensor_rejects_two_mode_factors() {
        let two = tensor(&identity(2), &identity(2)).unwrap();
        assert!(tensor(&two, &identity(2)).is_err());
    }

    #[test]
    fn mod4_projectors_resolve_identity() {
        let dim = 10;
        let ps: Vec<_> = (0..4).map(|k| mod4_projector(k, dim).unwrap()).collect();
        let sum = ps.iter().skip(1).fold(ps[0].clone(), |acc, p| &acc + p);
        assert_eq!(sum, identity(dim));
        for j in 0..4 {
            for k in 0..4 {
                let prod = &ps[j] * &ps[k];
                let want = if j == k {
                    ps[k].clone()
                } else {
                    Operator::zeros(Dims::single(dim))
                };
                assert_eq!(prod, want);
            }
        }
        // n in {1, 5, 9}
        assert_eq!(ps[1].trace(), c(3.0));
        assert!(matches!(mod4_projector(4, dim), Err(Error::InvalidModClass(4))));
    }

    #[test]
    fn expectation_examples() {
        let n = number(8).unwrap();
        let three = StateVector::fock(8, 3).unwrap();
        assert_eq!(expectation(&n, &three).unwrap(), c(3.0));
        assert_eq!(expectation(&n, &three.to_density()).unwrap(), c(3.0));

        let psi = StateVector::from_amplitudes(
            Dims::single(3),
            DVector::from_vec(vec![C64::new(0.6, 0.0), C64::new(0.0, 0.8), c(0.0)]),
        )
        .unwrap();
        assert_abs_diff_eq!(expectation(&identity(3), &psi).unwrap().re, 1.0, epsilon = 1e-15);
        assert!(expectation(&identity(4), &psi).is_err());
    }

    #[test]
    fn coherent_state_photon_number_matches_poisson_sum() {
        // Independent oracle: the Poisson weights e^{-|alpha|^2} |alpha|^{2n} / n!
        // summed over the truncation, normalized.
        let dim = 30;
        let alpha: f64 = 1.0;
        let mut w = Vec::with_capacity(dim);
        let mut term = (-alpha * alpha).exp();
        for n in 0..dim {
            if n > 0 {
                term *= alpha * alpha / n as f64;
            }
            w.push(term);
        }
        let z: f64 = w.iter().sum();
        let oracle: f64 = w.iter().enumerate().map(|(n, p)| n as f64 * p).sum::<f64>() / z;

        let amps = DVector::from_iterator(dim, w.iter().map(|p| c(p.sqrt())));
        let psi = StateVector::from_amplitudes(Dims::single(dim), amps)
            .unwrap()
            .normalized();
        let a = destroy(dim).unwrap();
        let got = expectation(&(&a.dagger() * &a), &psi).unwrap().re;
        assert_abs_diff_eq!(got, oracle, epsilon = 1e-12);
        assert_abs_diff_eq!(got, 1.0, epsilon = 1e-8);
    }

    #[test]
    fn partial_trace_of_product_and_bell_states() {
        let rho_a = StateVector::from_amplitudes(
            Dims::single(3),
            DVector::from_vec(vec![c(0.6), C64::new(0.0, 0.8), c(0.0)]),
        )
        .unwrap()
        .to_density();
        let rho_b = StateVector::fock(2, 1).unwrap().to_density();
        let prod = DensityState::from_matrix(Dims::new(3, 2), rho_a.matrix().kronecker(rho_b.matrix())).unwrap();
        let red = partial_trace_ancilla(&prod);
        assert!(!red.noop);
        assert_abs_diff_eq!((red.state.matrix() - rho_a.matrix()).norm(), 0.0, epsilon = 1e-15);

        let s = std::f64::consts::FRAC_1_SQRT_2;
        let bell = StateVector::from_amplitudes(Dims::new(2, 2), DVector::from_vec(vec![c(s), c(0.0), c(0.0), c(s)]))
            .unwrap()
            .to_density();
        let red = partial_trace_ancilla(&bell).state;
        assert_abs_diff_eq!(
            (red.matrix() - DMatrix::<C64>::identity(2, 2) * c(0.5)).norm(),
            0.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn partial_trace_without_ancilla_is_flagged_noop() {
        let rho = StateVector::fock(4, 1).unwrap().to_density();
        let red = partial_trace_ancilla(&rho);
        assert!(red.noop);
        assert_eq!(red.state, rho);
    }

    fn random_density(na: usize, nb: usize, seed: &[f64]) -> DensityState {
        let n = na * nb;
        let g = DMatrix::from_fn(n, n, |r, cc| {
            let k = (r * n + cc) % seed.len();
            C64::new(seed[k] * (1.0 + r as f64), seed[(k + 1) % seed.len()] - cc as f64 * 0.1)
        });
        let m = &g * g.adjoint();
        let tr = m.trace();
        DensityState::from_matrix(Dims::new(na, nb), m / tr).unwrap()
    }

    proptest! {
        #[test]
        fn partial_trace_matches_index_summation(
            seed in proptest::collection::vec(-1.0f64..1.0, 5..12),
            na in 2usize..6,
            nb in 2usize..4,
        ) {
            let rho = random_density(na, nb, &seed);
            let red = partial_trace_ancilla(&rho).state;
            // Brute-force oracle: <i|Tr_b rho|j> = sum_k <i,k|rho|j,k> by
            // explicit basis-vector contraction.
            let dims = rho.dims();
            for i in 0..na {
                for j in 0..na {
                    let mut acc = C64::new(0.0, 0.0);
                    for k in 0..nb {
                        let bra = StateVector::fock(na, i).unwrap()
                            .tensor(&StateVector::fock(nb, k).unwrap()).unwrap();
                        let ket = StateVector::fock(na, j).unwrap()
                            .tensor(&StateVector::fock(nb, k).unwrap()).unwrap();
                        acc += bra.amplitudes().dotc(&(rho.matrix() * ket.amplitudes()));
                    }
                    prop_assert!((acc - red.matrix()[(i, j)]).norm() < 1e-12);
                }
            }
            prop_assert!((red.trace() - rho.trace()).abs() < 1e-12);
            prop_assert_eq!(dims.ancilla, nb);
        }

        #[test]
        fn dagger_is_an_involution(entries in proptest::collection::vec(-5.0f64..5.0, 32)) {
            let m = DMatrix::from_fn(4, 4, |r, cc| C64::new(entries[r * 4 + cc], entries[16 + r * 4 + cc]));
            let op = Operator::from_matrix(Dims::single(4), m).unwrap();
            prop_assert_eq!(op.dagger().dagger(), op);
        }

        #[test]
        fn tensor_trace_and_product_expectations_factorize(
            xs in proptest::collection::vec(-2.0f64..2.0, 9 + 4),
            amps in proptest::collection::vec(-1.0f64..1.0, 5),
        ) {
            let a = Operator::from_matrix(Dims::single(3), DMatrix::from_fn(3, 3, |r, cc| c(xs[r * 3 + cc]))).unwrap();
            let b = Operator::from_matrix(Dims::single(2), DMatrix::from_fn(2, 2, |r, cc| c(xs[9 + r * 2 + cc]))).unwrap();
            let ab = tensor(&a, &b).unwrap();
            prop_assert!((ab.trace() - a.trace() * b.trace()).norm() < 1e-12);

            let psi_a = StateVector::from_amplitudes(Dims::single(3),
                DVector::from_vec(vec![c(amps[0]), c(amps[1]), c(amps[2]) + 0.1])).unwrap().normalized();
            let psi_b = StateVector::from_amplitudes(Dims::single(2),
                DVector::from_vec(vec![c(amps[3]) + 0.1, c(amps[4])])).unwrap().normalized();
            let joint = psi_a.tensor(&psi_b).unwrap();
            let lhs = expectation(&ab, &joint).unwrap();
            let rhs = expectation(&a, &psi_a).unwrap() * expectation(&b, &psi_b).unwrap();
            prop_assert!((lhs - rhs).norm() < 1e-12);
        }
    }
}
