//! Hamiltonians, drive terms and collapse operators.
//!
//! Internally `hbar = 1` and every frequency or rate is an angular frequency
//! in rad/s. The KPO Hamiltonian lives in the frame rotating at a quarter of
//! the pump frequency:
//!
//! ```text
//! H_KPO = D a'a - (K/2) a'a'aa + (P/2)(a'^4 + a^4)
//! ```
//!
//! The KPO-ancilla system adds `D_an b'b + g(a'b + ab')` and any number of
//! microwave tones `A cos(w t)(a'b' + ab)`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{self, DensityState, Dims, Operator, StateVector};

/// `2 pi x 10^6 x f_mhz`: a frequency quoted as `f / 2 pi` in MHz, in rad/s.
pub fn mhz(f_mhz: f64) -> f64 {
    2.0 * PI * 1e6 * f_mhz
}

/// Inverse of [`mhz`].
pub fn to_mhz(omega: f64) -> f64 {
    omega / (2.0 * PI * 1e6)
}

/// Microseconds to seconds.
pub fn us(t_us: f64) -> f64 {
    t_us * 1e-6
}

/// Physical constants of the KPO, its pump and the ancilla resonator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    /// `omega_KPO - omega_p / 4`.
    pub delta_kpo: f64,
    pub kerr: f64,
    /// Four-photon pump amplitude.
    pub pump: f64,
    /// `omega_an - omega_p / 4`.
    pub delta_an: f64,
    /// KPO-ancilla exchange coupling.
    pub g: f64,
    pub omega_kpo: f64,
    pub omega_an: f64,
    pub omega_p: f64,
}

impl SystemParams {
    /// The parameter block used for the error-correction simulations:
    /// `omega_KPO/2pi = 2.98 GHz`, `K/2pi = 20 MHz`, `D_KPO/2pi = 30 MHz`,
    /// `P/2pi = 5.5405 MHz`, `omega_an/2pi = 4 GHz`, `g/2pi = 7 MHz`.
    pub fn reference() -> Self {
        Self::from_lab(mhz(2980.0), mhz(20.0), mhz(30.0), mhz(5.5405), mhz(4000.0), mhz(7.0))
    }

    /// Derive the rotating-frame detunings from lab-frame frequencies.
    pub fn from_lab(omega_kpo: f64, kerr: f64, delta_kpo: f64, pump: f64, omega_an: f64, g: f64) -> Self {
        let quarter_pump = omega_kpo - delta_kpo;
        Self {
            delta_kpo,
            kerr,
            pump,
            delta_an: omega_an - quarter_pump,
            g,
            omega_kpo,
            omega_an,
            omega_p: 4.0 * quarter_pump,
        }
    }

    pub fn with_pump(mut self, pump: f64) -> Self {
        self.pump = pump;
        self
    }

    pub fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.kerr > 0.0) {
            v.push("kerr > 0".to_string());
        }
        if !(self.pump >= 0.0) {
            v.push("pump >= 0".to_string());
        }
        for (name, x) in [
            ("delta_kpo", self.delta_kpo),
            ("delta_an", self.delta_an),
            ("g", self.g),
        ] {
            if !x.is_finite() {
                v.push(format!("{name} finite"));
            }
        }
        v
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToneKind {
    Correction,
    Reset,
}

/// A continuous tone `A cos(w t)(a'b' + ab)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToneParams {
    pub amplitude: f64,
    pub frequency: f64,
    pub kind: ToneKind,
}

impl ToneParams {
    pub fn correction(amplitude: f64, frequency: f64) -> Self {
        Self {
            amplitude,
            frequency,
            kind: ToneKind::Correction,
        }
    }

    pub fn reset(amplitude: f64, frequency: f64) -> Self {
        Self {
            amplitude,
            frequency,
            kind: ToneKind::Reset,
        }
    }
}

/// Rates of the master-equation dissipators.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    /// KPO single-photon loss rate.
    pub gamma_kpo: f64,
    /// KPO thermal photon number.
    pub n_th: f64,
    /// KPO dephasing rate.
    pub gamma_phi: f64,
    /// Ancilla single-photon loss rate.
    pub gamma_an: f64,
}

impl NoiseParams {
    /// `1/gamma_KPO = 50 us`, `gamma_an/2pi = 0.557 MHz`, no gain or dephasing.
    pub fn reference() -> Self {
        Self {
            gamma_kpo: 1.0 / us(50.0),
            n_th: 0.0,
            gamma_phi: 0.0,
            gamma_an: mhz(0.557),
        }
    }

    pub fn lossless() -> Self {
        Self {
            gamma_kpo: 0.0,
            n_th: 0.0,
            gamma_phi: 0.0,
            gamma_an: 0.0,
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        for (name, x) in [
            ("gamma_kpo", self.gamma_kpo),
            ("n_th", self.n_th),
            ("gamma_phi", self.gamma_phi),
            ("gamma_an", self.gamma_an),
        ] {
            if !(x >= 0.0) {
                v.push(format!("{name} >= 0"));
            }
        }
        v
    }
}

/// How the fast ancilla detuning is handled during evolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameChoice {
    /// The rotating-frame Hamiltonian as written, with `A cos(w t)` tones.
    FullCosine,
    /// Interaction picture with respect to `D_an b'b`, dropping tone terms
    /// that rotate at `w + D_an`. The exchange coupling keeps its explicit
    /// `e^{-i D_an t}` oscillation.
    AncillaRwa,
}

/// `D a'a - (K/2) a'a'aa + (P/2)(a'^4 + a^4)` on a single truncated mode.
pub fn build_kpo_hamiltonian(p: &SystemParams, dim_a: usize) -> Result<Operator> {
    if dim_a < 8 {
        return Err(Error::InvalidDimension {
            dim: dim_a,
            reason: "the KPO truncation needs at least 8 levels",
        });
    }
    let a = fock::destroy(dim_a)?;
    let ad = a.dagger();
    let n = fock::number(dim_a)?;
    let kerr_term = &(&ad * &ad) * &(&a * &a);
    let pump_term = &ad.pow(4) + &a.pow(4);
    let h = &(&(&n * p.delta_kpo) - &(&kerr_term * (0.5 * p.kerr))) + &(&pump_term * (0.5 * p.pump));
    Ok(hermitize(h))
}

/// `a'^2 + a^2` on the KPO mode.
pub fn build_two_photon_drive(dim_a: usize) -> Result<Operator> {
    if dim_a < 3 {
        return Err(Error::InvalidDimension {
            dim: dim_a,
            reason: "a two-photon drive needs at least 3 levels",
        });
    }
    let a = fock::destroy(dim_a)?;
    Ok(&a.dagger().pow(2) + &a.pow(2))
}

/// One eigenpair of a mod-4 block of `H_KPO`.
#[derive(Clone, Debug)]
pub struct BlockEigen {
    pub class: usize,
    /// Rank within the block, 0 for the highest quasienergy.
    pub level: usize,
    pub energy: f64,
    /// Fock-basis amplitudes; the largest-magnitude entry is real positive
    /// (lowest `n` on ties).
    pub vector: DVector<C64>,
}

/// Eigenpairs of every mod-4 block of a KPO Hamiltonian, ordered by class and
/// then by decreasing energy.
pub fn kpo_eigenbasis(h_kpo: &Operator) -> Result<Vec<BlockEigen>> {
    if !h_kpo.dims().is_single_mode() {
        return Err(Error::DimensionMismatch {
            expected: "a single KPO mode".into(),
            got: h_kpo.dims().to_string(),
        });
    }
    let dim = h_kpo.dim();
    let mut out = Vec::with_capacity(dim);
    for class in 0..4 {
        let idx: Vec<usize> = (class..dim).step_by(4).collect();
        if idx.is_empty() {
            continue;
        }
        let block = DMatrix::<f64>::from_fn(idx.len(), idx.len(), |i, j| h_kpo.get(idx[i], idx[j]).re);
        let eig = block.symmetric_eigen();
        let mut order: Vec<usize> = (0..idx.len()).collect();
        order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]));
        for (level, &j) in order.iter().enumerate() {
            let col = eig.eigenvectors.column(j);
            let big = col.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let lead = col.iter().position(|v| v.abs() >= big * (1.0 - 1e-9)).unwrap_or(0);
            let sign = if col[lead] < 0.0 { -1.0 } else { 1.0 };
            let mut vector = DVector::<C64>::zeros(dim);
            for (i, &n) in idx.iter().enumerate() {
                vector[n] = C64::new(sign * col[i], 0.0);
            }
            out.push(BlockEigen {
                class,
                level,
                energy: eig.eigenvalues[j],
                vector,
            });
        }
    }
    Ok(out)
}

// Products of ladder operators are Hermitian only up to roundoff in the
// sqrt factors; symmetrize so every Hamiltonian is exactly Hermitian.
fn hermitize(h: Operator) -> Operator {
    let dag = h.dagger();
    (&h + &dag).scale_real(0.5)
}

/// `H_KPO` restricted to its eigenstates with energy at least `E_max - depth`.
#[derive(Clone, Debug)]
pub struct KpoWindow {
    /// Diagonal in the retained eigenstates.
    pub hamiltonian: Operator,
    /// `V' a V`.
    pub destroy: Operator,
    /// Retained eigenvectors as Fock-basis columns `V`.
    pub basis: DMatrix<C64>,
}

impl KpoWindow {
    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    /// `V' O V` for a single-mode Fock operator.
    pub fn operator(&self, op: &Operator) -> Result<Operator> {
        Operator::from_matrix(
            Dims::single(self.dim()),
            self.basis.adjoint() * op.matrix() * &self.basis,
        )
    }

    pub fn state(&self, psi: &StateVector) -> Result<StateVector> {
        StateVector::from_amplitudes(Dims::single(self.dim()), self.basis.adjoint() * psi.amplitudes())
    }
}

pub fn kpo_window(p: &SystemParams, dim_a: usize, depth: f64) -> Result<KpoWindow> {
    if !(depth > 0.0) {
        return Err(Error::InvalidParameter {
            name: "window",
            reason: format!("depth must be positive, got {depth}"),
        });
    }
    let h_kpo = build_kpo_hamiltonian(p, dim_a)?;
    let eig = kpo_eigenbasis(&h_kpo)?;
    let top = eig.iter().map(|e| e.energy).fold(f64::NEG_INFINITY, f64::max);
    let kept: Vec<&BlockEigen> = eig.iter().filter(|e| e.energy >= top - depth).collect();
    let m = kept.len();
    if m < 2 {
        return Err(Error::InvalidParameter {
            name: "window",
            reason: format!("only {m} KPO level(s) within the window"),
        });
    }
    let v = DMatrix::<C64>::from_fn(dim_a, m, |i, j| kept[j].vector[i]);
    let h = DMatrix::<C64>::from_diagonal(&DVector::from_iterator(m, kept.iter().map(|e| C64::new(e.energy, 0.0))));
    let a = v.adjoint() * fock::destroy(dim_a)?.matrix() * &v;
    Ok(KpoWindow {
        hamiltonian: Operator::from_matrix(Dims::single(m), h)?,
        destroy: Operator::from_matrix(Dims::single(m), a)?,
        basis: v,
    })
}

/// One oscillating Hamiltonian term `amp (e^{-i w t} X + e^{+i w t} X')`.
#[derive(Clone, Debug)]
pub struct OscillatingTerm {
    pub op: Operator,
    pub amplitude: f64,
    pub omega: f64,
}

impl OscillatingTerm {
    pub fn coefficient(&self, t: f64) -> C64 {
        C64::from_polar(self.amplitude, -self.omega * t)
    }
}

/// `H(t) = H_0 + sum_j amp_j (e^{-i w_j t} X_j + h.c.)`.
#[derive(Clone, Debug)]
pub struct TimeDependentHamiltonian {
    pub constant: Operator,
    pub terms: Vec<OscillatingTerm>,
}

impl TimeDependentHamiltonian {
    pub fn constant(h: Operator) -> Self {
        Self {
            constant: h,
            terms: Vec::new(),
        }
    }

    pub fn dims(&self) -> Dims {
        self.constant.dims()
    }

    pub fn with_term(mut self, op: Operator, amplitude: f64, omega: f64) -> Result<Self> {
        if op.dims() != self.constant.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.constant.dims().to_string(),
                got: op.dims().to_string(),
            });
        }
        self.terms.push(OscillatingTerm { op, amplitude, omega });
        Ok(self)
    }

    pub fn at(&self, t: f64) -> Operator {
        let mut m = self.constant.matrix().clone();
        for term in &self.terms {
            let c = term.coefficient(t);
            let x = term.op.matrix();
            m += x * c + x.adjoint() * c.conj();
        }
        Operator::from_matrix(self.dims(), m).expect("dims fixed at construction")
    }

    pub fn is_time_independent(&self) -> bool {
        self.terms.iter().all(|t| t.amplitude == 0.0 || t.omega == 0.0)
    }
}

/// The KPO-ancilla system, kept in pieces so both frames can be assembled.
///
/// The KPO mode is either kept in its truncated Fock basis or, for long
/// runs, in the span of the `H_KPO` eigenstates lying within a window below
/// the highest quasienergy. Deep states of the truncated spectrum are never
/// populated but set the stiffness of the integration; dropping them
/// shortens the admissible step severalfold.
#[derive(Clone, Debug)]
pub struct FullSystem {
    pub params: SystemParams,
    /// Dimensions of the working basis.
    pub dims: Dims,
    /// Fock truncation the working basis was built from.
    pub fock_dims: Dims,
    /// `H_KPO (x) I`.
    pub kpo: Operator,
    /// `I (x) b'b`.
    pub ancilla_number: Operator,
    /// `a'b`; the exchange coupling is `g(a'b + ab')`.
    pub hop: Operator,
    /// `a'b'`; tones couple through `a'b' + ab`.
    pub pair: Operator,
    /// KPO annihilation operator on the working KPO space.
    pub kpo_destroy: Operator,
    /// Retained eigenvectors as Fock-basis columns; `None` in the Fock basis.
    pub kpo_basis: Option<DMatrix<C64>>,
}

impl FullSystem {
    pub fn new(p: &SystemParams, dim_a: usize, dim_b: usize) -> Result<Self> {
        let h_kpo = build_kpo_hamiltonian(p, dim_a)?;
        Self::assemble(p, h_kpo, fock::destroy(dim_a)?, None, Dims::new(dim_a, dim_b))
    }

    /// Work in the eigenstates of `H_KPO` with energy at least
    /// `E_max - depth`, where `E_max` is the highest quasienergy.
    pub fn windowed(p: &SystemParams, dim_a: usize, dim_b: usize, depth: f64) -> Result<Self> {
        let w = kpo_window(p, dim_a, depth)?;
        Self::assemble(p, w.hamiltonian, w.destroy, Some(w.basis), Dims::new(dim_a, dim_b))
    }

    fn assemble(
        p: &SystemParams,
        h_kpo: Operator,
        a_kpo: Operator,
        basis: Option<DMatrix<C64>>,
        fock_dims: Dims,
    ) -> Result<Self> {
        let dim_b = fock_dims.ancilla;
        if dim_b < 2 {
            return Err(Error::InvalidDimension {
                dim: dim_b,
                reason: "the ancilla needs at least 2 levels",
            });
        }
        let m = a_kpo.dim();
        let ib = fock::identity(dim_b);
        let a = fock::tensor(&a_kpo, &ib)?;
        let b = fock::tensor(&fock::identity(m), &fock::destroy(dim_b)?)?;
        Ok(Self {
            params: *p,
            dims: Dims::new(m, dim_b),
            fock_dims,
            kpo: fock::tensor(&h_kpo, &ib)?,
            ancilla_number: &b.dagger() * &b,
            hop: &a.dagger() * &b,
            pair: &a.dagger() * &b.dagger(),
            kpo_destroy: a_kpo,
            kpo_basis: basis,
        })
    }

    /// Collapse operators on the working space.
    pub fn collapse_operators(&self, np: &NoiseParams) -> Result<Vec<Operator>> {
        let number = match &self.kpo_basis {
            None => fock::number(self.dims.kpo)?,
            Some(v) => Operator::from_matrix(
                Dims::single(self.dims.kpo),
                v.adjoint() * fock::number(self.fock_dims.kpo)?.matrix() * v,
            )?,
        };
        collapse_from(np, &self.kpo_destroy, &number, self.dims.ancilla)
    }

    /// Basis change taking working coordinates to Fock coordinates, for a
    /// single KPO mode or for the full space.
    fn embedding(&self, two_mode: bool) -> Option<DMatrix<C64>> {
        let v = self.kpo_basis.as_ref()?;
        Some(if two_mode {
            v.kronecker(&DMatrix::<C64>::identity(self.dims.ancilla, self.dims.ancilla))
        } else {
            v.clone()
        })
    }

    /// Which space `dims` refers to: `Some(true)` full Fock, `Some(false)`
    /// single-mode Fock, `None` already in working coordinates.
    fn classify(&self, dims: Dims) -> Result<Option<bool>> {
        if self.kpo_basis.is_none() {
            if dims == self.dims || dims == Dims::single(self.dims.kpo) {
                return Ok(None);
            }
        } else if dims == self.fock_dims {
            return Ok(Some(true));
        } else if dims == Dims::single(self.fock_dims.kpo) {
            return Ok(Some(false));
        } else if dims == self.dims || dims == Dims::single(self.dims.kpo) {
            return Ok(None);
        }
        Err(Error::DimensionMismatch {
            expected: format!("{} or {}", self.fock_dims, Dims::single(self.fock_dims.kpo)),
            got: dims.to_string(),
        })
    }

    /// Express a Fock-basis state in the working basis (identity in the Fock basis).
    pub fn to_working_state(&self, psi: &StateVector) -> Result<StateVector> {
        match self.classify(psi.dims())? {
            None => Ok(psi.clone()),
            Some(two) => {
                let w = self.embedding(two).expect("windowed");
                let dims = if two { self.dims } else { Dims::single(self.dims.kpo) };
                StateVector::from_amplitudes(dims, w.adjoint() * psi.amplitudes())
            }
        }
    }

    pub fn to_working_operator(&self, op: &Operator) -> Result<Operator> {
        match self.classify(op.dims())? {
            None => Ok(op.clone()),
            Some(two) => {
                let w = self.embedding(two).expect("windowed");
                let dims = if two { self.dims } else { Dims::single(self.dims.kpo) };
                Operator::from_matrix(dims, w.adjoint() * op.matrix() * &w)
            }
        }
    }

    pub fn to_working_density(&self, rho: &DensityState) -> Result<DensityState> {
        match self.classify(rho.dims())? {
            None => Ok(rho.clone()),
            Some(two) => {
                let w = self.embedding(two).expect("windowed");
                let dims = if two { self.dims } else { Dims::single(self.dims.kpo) };
                DensityState::from_matrix(dims, w.adjoint() * rho.matrix() * &w)
            }
        }
    }

    /// Map a full-space working density matrix back to Fock coordinates.
    pub fn to_fock_density(&self, rho: &DensityState) -> Result<DensityState> {
        if rho.dims() != self.dims {
            return Err(Error::DimensionMismatch {
                expected: self.dims.to_string(),
                got: rho.dims().to_string(),
            });
        }
        match self.embedding(true) {
            None => Ok(rho.clone()),
            Some(w) => DensityState::from_matrix(self.fock_dims, &w * rho.matrix() * w.adjoint()),
        }
    }

    /// `H_KPO (x) I + D_an b'b + g(a'b + ab')`.
    pub fn h_static(&self) -> Operator {
        let p = &self.params;
        let exchange = &self.hop + &self.hop.dagger();
        &(&self.kpo + &(&self.ancilla_number * p.delta_an)) + &(&exchange * p.g)
    }

    /// `a'b' + ab`.
    pub fn drive_op(&self) -> Operator {
        &self.pair + &self.pair.dagger()
    }

    /// Decompose `H(t)` for the integrator in the requested frame.
    pub fn time_dependent(&self, tones: &[ToneParams], frame: FrameChoice) -> TimeDependentHamiltonian {
        let p = &self.params;
        let mut h = match frame {
            FrameChoice::FullCosine => TimeDependentHamiltonian::constant(self.h_static()),
            FrameChoice::AncillaRwa => TimeDependentHamiltonian::constant(self.kpo.clone()),
        };
        let push = |h: TimeDependentHamiltonian, op: &Operator, amp: f64, omega: f64| {
            if amp == 0.0 {
                h
            } else {
                h.with_term(op.clone(), amp, omega).expect("same system")
            }
        };
        if frame == FrameChoice::AncillaRwa {
            h = push(h, &self.hop, p.g, p.delta_an);
        }
        let drive = self.drive_op();
        for tone in tones {
            h = match frame {
                // A cos(w t) D = (A/2)(e^{-iwt} + e^{iwt}) D with D Hermitian.
                FrameChoice::FullCosine => push(h, &drive, 0.5 * tone.amplitude, tone.frequency),
                // b' -> b' e^{i D_an t}: the co-rotating part of the tone is
                // (A/2) a'b' e^{-i(w - D_an)t} + h.c.
                FrameChoice::AncillaRwa => push(h, &self.pair, 0.5 * tone.amplitude, tone.frequency - p.delta_an),
            };
        }
        h
    }
}

/// Convenience wrapper returning `(H_static, drive_op)`.
pub fn build_full_system(p: &SystemParams, dim_a: usize, dim_b: usize) -> Result<(Operator, Operator)> {
    let sys = FullSystem::new(p, dim_a, dim_b)?;
    Ok((sys.h_static(), sys.drive_op()))
}

/// Instantaneous Hamiltonian of `system` with `tones` in `frame`.
pub fn hamiltonian_at(t: f64, system: &FullSystem, tones: &[ToneParams], frame: FrameChoice) -> Operator {
    system.time_dependent(tones, frame).at(t)
}

/// Collapse operators on the Fock space `dims`, omitting zero-rate channels:
/// `sqrt(g(1+n_th)) a`, `sqrt(g n_th) a'`, `sqrt(g_phi) a'a`, `sqrt(g_an) b`.
pub fn collapse_operators(np: &NoiseParams, dims: Dims) -> Result<Vec<Operator>> {
    collapse_from(np, &fock::destroy(dims.kpo)?, &fock::number(dims.kpo)?, dims.ancilla)
}

fn collapse_from(np: &NoiseParams, a_kpo: &Operator, n_kpo: &Operator, dim_b: usize) -> Result<Vec<Operator>> {
    let m = a_kpo.dim();
    let lift = |op: &Operator| {
        if dim_b == 1 {
            Ok(op.clone())
        } else {
            fock::tensor(op, &fock::identity(dim_b))
        }
    };
    let a = lift(a_kpo)?;
    let mut out = Vec::new();
    let loss = np.gamma_kpo * (1.0 + np.n_th);
    if loss > 0.0 {
        out.push(a.scale_real(loss.sqrt()));
    }
    let gain = np.gamma_kpo * np.n_th;
    if gain > 0.0 {
        out.push(a.dagger().scale_real(gain.sqrt()));
    }
    if np.gamma_phi > 0.0 {
        out.push(lift(n_kpo)?.scale_real(np.gamma_phi.sqrt()));
    }
    if np.gamma_an > 0.0 && dim_b > 1 {
        let b = fock::tensor(&fock::identity(m), &fock::destroy(dim_b)?)?;
        out.push(b.scale_real(np.gamma_an.sqrt()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn unit_params(delta: f64, pump: f64) -> SystemParams {
        SystemParams {
            delta_kpo: delta,
            kerr: 1.0,
            pump,
            delta_an: 0.0,
            g: 0.0,
            omega_kpo: 0.0,
            omega_an: 0.0,
            omega_p: 0.0,
        }
    }

    #[test]
    fn reference_parameters_follow_from_lab_frequencies() {
        let p = SystemParams::reference();
        assert_abs_diff_eq!(to_mhz(p.delta_an), 1050.0, epsilon = 1e-9);
        assert_abs_diff_eq!(to_mhz(p.omega_p), 4.0 * 2950.0, epsilon = 1e-6);
        assert_abs_diff_eq!(p.kerr / p.delta_kpo, 2.0 / 3.0, epsilon = 1e-15);
        let n = NoiseParams::reference();
        assert_abs_diff_eq!(1.0 / n.gamma_kpo, 50e-6, epsilon = 1e-18);
    }

    #[test]
    fn undriven_kpo_is_diagonal() {
        let p = unit_params(1.5, 0.0);
        let h = build_kpo_hamiltonian(&p, 12).unwrap();
        for r in 0..12 {
            for c in 0..12 {
                if r != c {
                    assert_eq!(h.get(r, c).norm(), 0.0);
                }
            }
            let n = r as f64;
            assert_abs_diff_eq!(h.get(r, r).re, 1.5 * n - 0.5 * n * (n - 1.0), epsilon = 1e-12);
        }
        assert_abs_diff_eq!(h.get(2, 2).re, 2.0 * 1.5 - 1.0, epsilon = 1e-12);
    }

    #[test]
    fn kpo_hamiltonian_is_mod4_block_diagonal_and_hermitian() {
        let h = build_kpo_hamiltonian(&unit_params(1.5, 0.2764), 30).unwrap();
        assert!(h.hermiticity_error() < 1e-12);
        let mut coupled = 0;
        for r in 0..30 {
            for c in 0..30 {
                if (r % 4) != (c % 4) {
                    assert_eq!(h.get(r, c).norm(), 0.0, "({r},{c})");
                } else if r != c && h.get(r, c).norm() > 0.0 {
                    coupled += 1;
                }
            }
        }
        assert!(coupled > 0);
        assert!(build_kpo_hamiltonian(&unit_params(1.5, 0.2), 7).is_err());
    }

    #[test]
    fn full_system_pieces() {
        let mut p = unit_params(1.5, 0.3);
        let sys = FullSystem::new(&p, 10, 3).unwrap();
        let h_kpo = build_kpo_hamiltonian(&p, 10).unwrap();
        let expect = fock::tensor(&h_kpo, &fock::identity(3)).unwrap();
        assert_eq!(sys.h_static(), expect);

        p.g = 0.3;
        p.delta_an = 50.0;
        let (h_static, drive) = build_full_system(&p, 10, 3).unwrap();
        assert!(h_static.hermiticity_error() < 1e-12);
        assert!(drive.hermiticity_error() < 1e-15);
        let d = drive.dims();
        assert_abs_diff_eq!(drive.get(d.index(1, 1), d.index(0, 0)).re, 1.0, epsilon = 1e-15);
        assert!(FullSystem::new(&p, 10, 1).is_err());
    }

    #[test]
    fn full_cosine_at_zero_adds_the_full_amplitude() {
        let mut p = unit_params(1.5, 0.3);
        p.g = 0.2;
        p.delta_an = 40.0;
        let sys = FullSystem::new(&p, 10, 2).unwrap();
        let tone = ToneParams::correction(0.7, 40.3);
        let h0 = hamiltonian_at(0.0, &sys, &[tone], FrameChoice::FullCosine);
        let want = &sys.h_static() + &(&sys.drive_op() * 0.7);
        assert!((h0.matrix() - want.matrix()).norm() < 1e-12);
        let t = 0.37;
        let ht = hamiltonian_at(t, &sys, &[tone], FrameChoice::FullCosine);
        let want = &sys.h_static() + &(&sys.drive_op() * (0.7 * (40.3 * t).cos()));
        assert!((ht.matrix() - want.matrix()).norm() < 1e-12);
        assert!(ht.hermiticity_error() < 1e-12);
    }

    #[test]
    fn resonant_rwa_tone_is_static() {
        let mut p = unit_params(1.5, 0.3);
        p.delta_an = 40.0;
        let sys = FullSystem::new(&p, 10, 2).unwrap();
        let tone = ToneParams::correction(0.7, p.delta_an);
        let base = &sys.kpo + &(&sys.drive_op() * 0.35);
        for t in [0.0, 0.13, 2.9] {
            let h = hamiltonian_at(t, &sys, &[tone], FrameChoice::AncillaRwa);
            assert!((h.matrix() - base.matrix()).norm() < 1e-12);
        }
    }

    #[test]
    fn rwa_without_tones_or_coupling_is_the_bare_kpo() {
        let p = unit_params(1.5, 0.3);
        let sys = FullSystem::new(&p, 10, 2).unwrap();
        let h = sys.time_dependent(&[], FrameChoice::AncillaRwa);
        assert!(h.terms.is_empty());
        assert_eq!(h.constant, sys.kpo);
    }

    #[test]
    fn rwa_exchange_rotates_at_the_ancilla_detuning() {
        let mut p = unit_params(1.5, 0.3);
        p.g = 0.25;
        p.delta_an = 17.0;
        let sys = FullSystem::new(&p, 8, 2).unwrap();
        let t = 0.21;
        let h = hamiltonian_at(t, &sys, &[], FrameChoice::AncillaRwa);
        let phase = C64::from_polar(1.0, -p.delta_an * t);
        let want =
            sys.kpo.matrix() + sys.hop.matrix() * (phase * p.g) + sys.hop.matrix().adjoint() * (phase.conj() * p.g);
        assert!((h.matrix() - want).norm() < 1e-12);
    }

    #[test]
    fn two_photon_drive_properties() {
        let d = build_two_photon_drive(10).unwrap();
        assert_abs_diff_eq!(d.get(2, 0).re, 2f64.sqrt(), epsilon = 1e-15);
        assert!(d.hermiticity_error() < 1e-15);
        for r in 0..10 {
            for c in 0..10 {
                if (r + c) % 2 == 1 {
                    assert_eq!(d.get(r, c).norm(), 0.0);
                }
            }
        }
        assert!(build_two_photon_drive(2).is_err());
    }

    #[test]
    fn collapse_operator_bookkeeping() {
        let dims = Dims::new(10, 3);
        let mut np = NoiseParams::reference();
        assert_eq!(collapse_operators(&np, dims).unwrap().len(), 2);
        assert!(collapse_operators(&NoiseParams::lossless(), dims).unwrap().is_empty());

        np.n_th = 0.15;
        let ops = collapse_operators(&np, dims).unwrap();
        assert_eq!(ops.len(), 3);
        // Gain operator: sqrt(g n_th) a', element <1,0|a'|0,0> = 1.
        let gain = &ops[1];
        assert_abs_diff_eq!(
            gain.get(dims.index(1, 0), dims.index(0, 0)).re,
            (np.gamma_kpo * 0.15).sqrt(),
            epsilon = 1e-9
        );
        let loss = &ops[0];
        assert_abs_diff_eq!(
            loss.get(dims.index(0, 0), dims.index(1, 0)).re,
            (np.gamma_kpo * 1.15).sqrt(),
            epsilon = 1e-9
        );
        np.gamma_phi = 10.0;
        assert_eq!(collapse_operators(&np, dims).unwrap().len(), 4);
        // No ancilla: its loss channel is dropped.
        assert_eq!(collapse_operators(&np, Dims::single(10)).unwrap().len(), 3);
    }

    #[test]
    fn validation_messages() {
        let mut p = SystemParams::reference();
        assert!(p.validate().is_empty());
        p.kerr = 0.0;
        assert_eq!(p.validate(), vec!["kerr > 0".to_string()]);
        let mut n = NoiseParams::reference();
        n.n_th = -1.0;
        assert_eq!(n.validate(), vec!["n_th >= 0".to_string()]);
    }
}
