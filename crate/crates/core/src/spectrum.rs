//! Quasienergy structure of the pumped KPO.
//!
//! `H_KPO` conserves `n mod 4`, so it is diagonalized one block at a time.
//! The highest eigenstate of block `k` is `|k_mod>`; `|1_mod>` and `|3_mod>`
//! encode the logical qubit and `|0_mod>`, `|2_mod>` form the error space.

use std::io::Write;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fock::{self, DensityState, Dims, Operator, StateVector};
use crate::model::{self, BlockEigen, SystemParams};

/// Largest weight tolerated on the three Fock levels below the cutoff.
///
/// At the reference point and `dim_a = 30` the edge weight of `|0_mod>` is
/// about `2.5e-6`, while energies and photon numbers there are converged far
/// beyond any quoted digit.
pub const EDGE_WEIGHT_LIMIT: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct ModEigenstate {
    pub k: usize,
    /// Absolute quasienergy in rad/s.
    pub energy: f64,
    pub vector: StateVector,
    pub mean_photon: f64,
}

impl ModEigenstate {
    /// Fock coefficients `C_n^(k)`.
    pub fn coeffs(&self) -> &nalgebra::DVector<C64> {
        self.vector.amplitudes()
    }

    /// Weight on Fock levels with `n mod 4 = k`.
    pub fn class_weight(&self) -> f64 {
        self.coeffs()
            .iter()
            .enumerate()
            .filter(|(n, _)| n % 4 == self.k)
            .map(|(_, c)| c.norm_sqr())
            .sum()
    }
}

fn to_state(e: &BlockEigen) -> StateVector {
    StateVector::from_amplitudes(Dims::single(e.vector.len()), e.vector.clone()).expect("single mode")
}

fn mean_photon(psi: &StateVector) -> f64 {
    psi.amplitudes()
        .iter()
        .enumerate()
        .map(|(n, c)| n as f64 * c.norm_sqr())
        .sum()
}

fn edge_weight(psi: &StateVector) -> f64 {
    let d = psi.amplitudes().len();
    psi.amplitudes()
        .iter()
        .skip(d.saturating_sub(3))
        .map(|c| c.norm_sqr())
        .sum()
}

/// Every eigenstate of mod-4 block `k`, highest quasienergy first.
pub fn block_spectrum(p: &SystemParams, dim_a: usize, k: usize) -> Result<Vec<ModEigenstate>> {
    if k > 3 {
        return Err(Error::InvalidModClass(k));
    }
    let h = model::build_kpo_hamiltonian(p, dim_a)?;
    Ok(model::kpo_eigenbasis(&h)?
        .iter()
        .filter(|e| e.class == k)
        .map(|e| {
            let vector = to_state(e);
            ModEigenstate {
                k,
                energy: e.energy,
                mean_photon: mean_photon(&vector),
                vector,
            }
        })
        .collect())
}

/// The four information-space states `|0_mod>..|3_mod>`, in class order.
///
/// Fails with [`Error::TruncationNotConverged`] when a state keeps more than
/// [`EDGE_WEIGHT_LIMIT`] on the three highest Fock levels.
pub fn information_space(p: &SystemParams, dim_a: usize) -> Result<[ModEigenstate; 4]> {
    let states = information_space_unchecked(p, dim_a)?;
    for s in &states {
        let w = edge_weight(&s.vector);
        if w > EDGE_WEIGHT_LIMIT {
            return Err(Error::TruncationNotConverged {
                dim_a,
                class: s.k,
                weight: w,
            });
        }
    }
    Ok(states)
}

fn information_space_unchecked(p: &SystemParams, dim_a: usize) -> Result<[ModEigenstate; 4]> {
    let h = model::build_kpo_hamiltonian(p, dim_a)?;
    let eig = model::kpo_eigenbasis(&h)?;
    let top = |k: usize| {
        let e = eig
            .iter()
            .find(|e| e.class == k && e.level == 0)
            .expect("every class is populated for dim_a >= 8");
        let vector = to_state(e);
        ModEigenstate {
            k,
            energy: e.energy,
            mean_photon: mean_photon(&vector),
            vector,
        }
    };
    Ok([top(0), top(1), top(2), top(3)])
}

/// `|(E_0 + E_1)/2 - (E_2 + E_3)/2|`.
pub fn energy_gap(states: &[ModEigenstate; 4]) -> f64 {
    let e = |k: usize| states[k].energy;
    ((e(0) + e(1)) / 2.0 - (e(2) + e(3)) / 2.0).abs()
}

/// `|<bra|a|ket>|^2`.
pub fn transition_element(bra: &StateVector, ket: &StateVector) -> Result<f64> {
    if !ket.dims().is_single_mode() {
        return Err(Error::DimensionMismatch {
            expected: "a single KPO mode".into(),
            got: ket.dims().to_string(),
        });
    }
    let a = fock::destroy(ket.dims().kpo)?;
    Ok(bra.inner(&a.apply(ket)?)?.norm_sqr())
}

/// `E_0mod - E_1mod` at pump `pump`.
fn splitting(p: &SystemParams, dim_a: usize, pump: f64) -> Result<f64> {
    let s = information_space_unchecked(&p.with_pump(pump), dim_a)?;
    Ok(s[0].energy - s[1].energy)
}

/// Pump at which `|0_mod>` and `|1_mod>` are degenerate, searched in `[0, K]`.
pub fn find_degenerate_pump(p: &SystemParams, dim_a: usize) -> Result<f64> {
    find_degenerate_pump_in(p, dim_a, 0.0, p.kerr)
}

/// Scan `[lo, hi]` for the first sign change of `E_0mod - E_1mod`, then
/// bisect down to `1e-12` relative.
pub fn find_degenerate_pump_in(p: &SystemParams, dim_a: usize, lo: f64, hi: f64) -> Result<f64> {
    const SCAN: usize = 64;
    let mut prev = (lo, splitting(p, dim_a, lo)?);
    if prev.1 == 0.0 {
        return Ok(lo);
    }
    for i in 1..=SCAN {
        let x = lo + (hi - lo) * i as f64 / SCAN as f64;
        let f = splitting(p, dim_a, x)?;
        if f == 0.0 {
            return Ok(x);
        }
        if f.signum() != prev.1.signum() {
            let (mut a, mut fa, mut b) = (prev.0, prev.1, x);
            while (b - a) > 1e-12 * b.abs() {
                let m = 0.5 * (a + b);
                let fm = splitting(p, dim_a, m)?;
                if fm == 0.0 {
                    return Ok(m);
                }
                if fm.signum() == fa.signum() {
                    a = m;
                    fa = fm;
                } else {
                    b = m;
                }
            }
            return Ok(0.5 * (a + b));
        }
        prev = (x, f);
    }
    Err(Error::NoDegeneracy { lo, hi })
}

/// Logical states and projectors built from the information space.
#[derive(Clone, Debug)]
pub struct LogicalFrame {
    pub states: [ModEigenstate; 4],
    pub zero_l: StateVector,
    pub one_l: StateVector,
    pub plus_l: StateVector,
    pub minus_l: StateVector,
    pub iplus_l: StateVector,
    pub iminus_l: StateVector,
    pub code_projector: Operator,
    pub error_projector: Operator,
    pub omega_gap: f64,
}

impl LogicalFrame {
    pub fn new(p: &SystemParams, dim_a: usize) -> Result<Self> {
        Ok(Self::from_states(information_space(p, dim_a)?))
    }

    pub fn from_states(states: [ModEigenstate; 4]) -> Self {
        let zero = states[1].vector.clone();
        let one = states[3].vector.clone();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let combo = |c: C64| zero.superpose(C64::new(s, 0.0), &one, c * s).expect("same dims");
        let proj = |a: &StateVector, b: &StateVector| &a.projector() + &b.projector();
        Self {
            plus_l: combo(C64::new(1.0, 0.0)),
            minus_l: combo(C64::new(-1.0, 0.0)),
            iplus_l: combo(C64::new(0.0, 1.0)),
            iminus_l: combo(C64::new(0.0, -1.0)),
            code_projector: proj(&zero, &one),
            error_projector: proj(&states[0].vector, &states[2].vector),
            omega_gap: energy_gap(&states),
            zero_l: zero,
            one_l: one,
            states,
        }
    }

    pub fn dim(&self) -> usize {
        self.zero_l.dims().kpo
    }

    /// `|k_mod>`.
    pub fn mod_state(&self, k: usize) -> &StateVector {
        &self.states[k].vector
    }
}

/// One row of a pump scan: energies relative to `E_0mod`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ScanRow {
    pub pump: f64,
    pub energies: [f64; 4],
}

/// Information-space energies for each pump value, relative to `E_0mod`.
pub fn quasienergy_scan(p: &SystemParams, dim_a: usize, pumps: &[f64]) -> Result<Vec<ScanRow>> {
    pumps
        .iter()
        .map(|&pump| {
            let s = information_space_unchecked(&p.with_pump(pump), dim_a)?;
            let e0 = s[0].energy;
            Ok(ScanRow {
                pump,
                energies: [0.0, s[1].energy - e0, s[2].energy - e0, s[3].energy - e0],
            })
        })
        .collect()
}

/// Uniform square grid over `x = Re(alpha)`, `p = Im(alpha)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PhaseGrid {
    pub extent: f64,
    pub points: usize,
}

impl PhaseGrid {
    pub fn new(extent: f64, points: usize) -> Self {
        Self { extent, points }
    }

    /// 101 x 101 points covering `sqrt(2 n) + 2` for mean photon number `n`.
    pub fn auto(mean_photon: f64) -> Self {
        Self::new((2.0 * mean_photon).sqrt() + 2.0, 101)
    }

    pub fn axis(&self) -> Vec<f64> {
        if self.points == 1 {
            return vec![0.0];
        }
        (0..self.points)
            .map(|i| -self.extent + 2.0 * self.extent * i as f64 / (self.points - 1) as f64)
            .collect()
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.extent / (self.points.max(2) - 1) as f64
    }
}

/// Wigner function sampled on a grid; `values[ip * n + ix]`.
#[derive(Clone, Debug, Serialize)]
pub struct WignerMap {
    pub xs: Vec<f64>,
    pub ps: Vec<f64>,
    pub values: Vec<f64>,
}

impl WignerMap {
    pub fn at(&self, ix: usize, ip: usize) -> f64 {
        self.values[ip * self.xs.len() + ix]
    }

    /// Riemann sum of `W dx dp`.
    pub fn integral(&self) -> f64 {
        let dx = if self.xs.len() > 1 {
            self.xs[1] - self.xs[0]
        } else {
            1.0
        };
        let dp = if self.ps.len() > 1 {
            self.ps[1] - self.ps[0]
        } else {
            1.0
        };
        self.values.iter().sum::<f64>() * dx * dp
    }

    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["x", "p", "w"])?;
        for (ip, p) in self.ps.iter().enumerate() {
            for (ix, x) in self.xs.iter().enumerate() {
                wtr.write_record(&[
                    format!("{x:.6}"),
                    format!("{p:.6}"),
                    format!("{:.10e}", self.at(ix, ip)),
                ])?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

/// States a Wigner function can be taken of.
pub trait WignerSource {
    fn density_matrix(&self) -> DMatrix<C64>;
}

impl WignerSource for StateVector {
    fn density_matrix(&self) -> DMatrix<C64> {
        let v = self.amplitudes();
        v * v.adjoint()
    }
}

impl WignerSource for DensityState {
    fn density_matrix(&self) -> DMatrix<C64> {
        self.matrix().clone()
    }
}

/// `W(alpha) = (2/pi) Tr[rho D(alpha) P D(alpha)']` with `P` the parity,
/// evaluated with the Laguerre recursion for `<m|.|n>` Wigner kernels.
pub fn wigner<S: WignerSource + ?Sized>(state: &S, grid: &PhaseGrid) -> WignerMap {
    let rho = state.density_matrix();
    let axis = grid.axis();
    let m = rho.nrows();
    let mut values = Vec::with_capacity(axis.len() * axis.len());
    let mut kernel = vec![C64::new(0.0, 0.0); m];
    for &p in &axis {
        for &x in &axis {
            let a = C64::new(x, p);
            let ac = a.conj();
            kernel[0] = C64::new((-2.0 * a.norm_sqr()).exp() / std::f64::consts::PI, 0.0);
            let mut w = rho[(0, 0)].re * kernel[0].re;
            for n in 1..m {
                kernel[n] = kernel[n - 1] * a * 2.0 / (n as f64).sqrt();
                w += 2.0 * (rho[(0, n)] * kernel[n]).re;
            }
            for r in 1..m {
                let sr = (r as f64).sqrt();
                let mut temp = kernel[r];
                kernel[r] = (temp * ac * 2.0 - kernel[r - 1] * sr) / sr;
                w += (rho[(r, r)] * kernel[r]).re;
                for n in r + 1..m {
                    let next = (kernel[n - 1] * a * 2.0 - temp * sr) / (n as f64).sqrt();
                    temp = kernel[n];
                    kernel[n] = next;
                    w += 2.0 * (rho[(r, n)] * kernel[n]).re;
                }
            }
            values.push(2.0 * w);
        }
    }
    WignerMap {
        xs: axis.clone(),
        ps: axis,
        values,
    }
}

pub fn write_scan_csv<W: Write>(rows: &[ScanRow], kerr: f64, w: W) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record([
        "pump_mhz",
        "pump_over_k",
        "e0_over_k",
        "e1_over_k",
        "e2_over_k",
        "e3_over_k",
    ])?;
    for r in rows {
        let mut rec = vec![format!("{:.8}", model::to_mhz(r.pump)), format!("{:.8}", r.pump / kerr)];
        rec.extend(r.energies.iter().map(|e| format!("{:.10}", e / kerr)));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Long format: one row per `(class, n)` with `|C_n^(k)|^2`.
pub fn write_coefficients_csv<W: Write>(states: &[ModEigenstate; 4], w: W) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["k", "n", "re", "im", "weight"])?;
    for s in states {
        for (n, c) in s.coeffs().iter().enumerate() {
            if n % 4 == s.k {
                wtr.write_record(&[
                    s.k.to_string(),
                    n.to_string(),
                    format!("{:.12e}", c.re),
                    format!("{:.12e}", c.im),
                    format!("{:.12e}", c.norm_sqr()),
                ])?;
            }
        }
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::mhz;
    use nalgebra::DVector;
    use proptest::prelude::*;

    fn unit(delta: f64, pump: f64) -> SystemParams {
        let mut p = SystemParams::reference();
        p.kerr = 1.0;
        p.delta_kpo = delta;
        p.pump = pump;
        p
    }

    #[test]
    fn tiny_pump_gives_highest_fock_states() {
        // E(n) = 1.5 n - n(n-1)/2 peaks at n = 0|4, 1, 2, 3 per class.
        let s = information_space(&unit(1.5, 1e-9), 30).unwrap();
        for (k, n) in [(1usize, 1usize), (2, 2), (3, 3)] {
            assert!((s[k].vector.amplitudes()[n].norm() - 1.0).abs() < 1e-9, "class {k}");
        }
        let c = s[0].vector.amplitudes();
        assert!((c[0].norm_sqr() + c[4].norm_sqr() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_pump_at_unit_kerr() {
        let pk = find_degenerate_pump(&unit(1.5, 0.0), 30).unwrap();
        assert!((pk - 0.2764).abs() < 5e-4, "{pk}");
        let s = information_space(&unit(1.5, pk), 30).unwrap();
        assert!((s[0].energy - s[1].energy).abs() < 1e-5);
        // The mod-2/mod-3 pair is (nearly) degenerate there too.
        assert!((s[2].energy - s[3].energy).abs() < 1e-2);
    }

    #[test]
    fn degenerate_pump_in_mhz() {
        let pump = find_degenerate_pump(&SystemParams::reference(), 30).unwrap();
        assert!((model::to_mhz(pump) / 5.5405 - 1.0).abs() < 0.015);
    }

    #[test]
    fn no_crossing_is_reported() {
        let r = find_degenerate_pump_in(&unit(1.5, 0.0), 30, 0.0, 0.1);
        assert!(matches!(r, Err(Error::NoDegeneracy { .. })));
    }

    #[test]
    fn reference_gap_and_photon_numbers() {
        let s = information_space(&SystemParams::reference(), 30).unwrap();
        assert!((model::to_mhz(energy_gap(&s)) - 12.2).abs() < 0.2);
        assert!((s[1].mean_photon - 2.9).abs() < 0.1);
        assert!((s[3].mean_photon - 3.8).abs() < 0.1);
        for st in &s {
            assert!(st.class_weight() >= 0.99);
            assert!((st.vector.norm() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn gap_ignores_intra_pair_sign() {
        let mut s = information_space(&SystemParams::reference(), 30).unwrap();
        let g = energy_gap(&s);
        let (e0, e1) = (s[0].energy, s[1].energy);
        s[0].energy = e1;
        s[1].energy = e0;
        assert_eq!(energy_gap(&s), g);
    }

    #[test]
    fn protection_gap_exceeds_two_and_a_half_k() {
        let p = SystemParams::reference();
        for k in 0..4 {
            let b = block_spectrum(&p, 30, k).unwrap();
            assert!(b[0].energy - b[1].energy > 2.5 * p.kerr, "class {k}");
        }
    }

    #[test]
    fn truncation_converged_from_30_to_40() {
        let p = SystemParams::reference();
        let a = information_space(&p, 30).unwrap();
        let b = information_space(&p, 40).unwrap();
        for k in 0..4 {
            assert!((a[k].energy - b[k].energy).abs() < 1e-3 * p.kerr);
        }
        let c = information_space(&p, 50).unwrap();
        for k in 0..4 {
            let (d1, d2) = ((a[k].energy - b[k].energy).abs(), (b[k].energy - c[k].energy).abs());
            assert!(d2 < 1e-5 * p.kerr && d2 < 0.1 * d1.max(1e-9 * p.kerr), "{k} {d1} {d2}");
        }
    }

    #[test]
    fn small_truncation_is_refused() {
        let r = information_space(&SystemParams::reference(), 16);
        assert!(matches!(r, Err(Error::TruncationNotConverged { .. })));
    }

    #[test]
    fn logical_frame_is_orthonormal() {
        let f = LogicalFrame::new(&SystemParams::reference(), 30).unwrap();
        assert!(f.zero_l.inner(&f.one_l).unwrap().norm() < 1e-10);
        for s in [&f.plus_l, &f.minus_l, &f.iplus_l, &f.iminus_l] {
            assert!((s.norm() - 1.0).abs() < 1e-12);
        }
        let prod = f.code_projector.try_mul(&f.error_projector).unwrap();
        assert!(prod.matrix().iter().all(|z| z.norm() < 1e-10));
    }

    #[test]
    fn fock_selection_rule_without_pump() {
        let s = information_space(&unit(1.5, 0.0), 30).unwrap();
        // |1_mod> = |1>, |2_mod> = |2>: <1|a|2> = sqrt 2.
        assert!((transition_element(&s[1].vector, &s[2].vector).unwrap() - 2.0).abs() < 1e-12);
        assert!(transition_element(&s[2].vector, &s[1].vector).unwrap() < 1e-24);
    }

    #[test]
    fn scan_at_zero_pump_matches_diagonal_formula() {
        let p = unit(1.5, 0.0);
        let rows = quasienergy_scan(&p, 30, &[0.0]).unwrap();
        let e = |n: f64| 1.5 * n - 0.5 * n * (n - 1.0);
        assert!((rows[0].energies[1] - e(1.0)).abs() < 1e-12);
        assert!((rows[0].energies[2] - e(2.0)).abs() < 1e-12);
        assert!((rows[0].energies[3] - e(3.0)).abs() < 1e-12);
    }

    #[test]
    fn splitting_shrinks_towards_the_crossing() {
        let p = unit(1.5, 0.0);
        let pumps: Vec<f64> = (0..10).map(|i| 0.02 + 0.025 * i as f64).collect();
        let rows = quasienergy_scan(&p, 30, &pumps).unwrap();
        for w in rows.windows(2) {
            assert!(w[1].energies[1].abs() < w[0].energies[1].abs());
        }
    }

    /// `(2/pi) sum_n (-1)^n <n|D' rho D|n>` in a larger space.
    fn displaced_parity(rho: &DMatrix<C64>, alpha: C64, big: usize) -> f64 {
        let m = rho.nrows();
        let a = fock::destroy(big).unwrap().into_matrix();
        let gen = (a.adjoint() * alpha - &a * alpha.conj()) * C64::new(0.0, 1.0);
        // gen is Hermitian; D = exp(-i gen).
        let eig = gen.symmetric_eigen();
        let phases = DVector::from_iterator(big, eig.eigenvalues.iter().map(|&l| C64::from_polar(1.0, -l)));
        let d = &eig.eigenvectors * DMatrix::from_diagonal(&phases) * eig.eigenvectors.adjoint();
        let mut r = DMatrix::<C64>::zeros(big, big);
        r.view_mut((0, 0), (m, m)).copy_from(rho);
        let moved = d.adjoint() * r * &d;
        (0..big)
            .map(|n| {
                if n % 2 == 0 {
                    moved[(n, n)].re
                } else {
                    -moved[(n, n)].re
                }
            })
            .sum::<f64>()
            * 2.0
            / std::f64::consts::PI
    }

    #[test]
    fn vacuum_wigner_peak() {
        let w = wigner(&StateVector::fock(5, 0).unwrap(), &PhaseGrid::new(2.0, 5));
        assert!((w.at(2, 2) - 2.0 / std::f64::consts::PI).abs() < 1e-14);
    }

    #[test]
    fn wigner_matches_displaced_parity() {
        let s = information_space(&SystemParams::reference(), 30).unwrap();
        let psi = s[1]
            .vector
            .superpose(C64::new(0.8, 0.0), &s[2].vector, C64::new(0.0, 0.6))
            .unwrap();
        let rho = psi.density_matrix();
        let grid = PhaseGrid::new(2.5, 7);
        let w = wigner(&psi, &grid);
        let axis = grid.axis();
        for (ip, &p) in axis.iter().enumerate().step_by(2) {
            for (ix, &x) in axis.iter().enumerate().step_by(3) {
                let want = displaced_parity(&rho, C64::new(x, p), 90);
                assert!((w.at(ix, ip) - want).abs() < 1e-8, "({x},{p}) {} {want}", w.at(ix, ip));
            }
        }
    }

    #[test]
    fn wigner_normalization_and_fourfold_symmetry() {
        let s = information_space(&SystemParams::reference(), 30).unwrap();
        for st in &s {
            let grid = PhaseGrid::auto(st.mean_photon);
            let w = wigner(&st.vector, &grid);
            assert!((w.integral() - 1.0).abs() < 1e-3);
            let n = grid.points;
            // (x, p) -> (-p, x) is a quarter turn.
            for ip in (0..n).step_by(7) {
                for ix in (0..n).step_by(7) {
                    let rot = w.at(n - 1 - ip, ix);
                    assert!((w.at(ix, ip) - rot).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn phase_fixing_is_deterministic() {
        let p = SystemParams::reference();
        let a = information_space(&p, 30).unwrap();
        let b = information_space(&p.with_pump(p.pump * (1.0 + 1e-13)), 30).unwrap();
        for k in 0..4 {
            let d = a[k].coeffs() - b[k].coeffs();
            assert!(d.norm() < 1e-9);
            let lead = a[k]
                .coeffs()
                .iter()
                .fold(C64::new(0.0, 0.0), |m, c| if c.norm() > m.norm() { *c } else { m });
            assert!(lead.re > 0.0 && lead.im == 0.0);
        }
    }

    #[test]
    fn reference_intra_pair_splittings_are_small() {
        let s = information_space(&SystemParams::reference(), 30).unwrap();
        assert!((s[0].energy - s[1].energy).abs() < mhz(0.2));
        assert!((s[2].energy - s[3].energy).abs() < mhz(0.2));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn eigenstates_stay_in_their_class(delta in 0.5f64..2.5, pump in 0.0f64..0.6) {
            let s = information_space_unchecked(&unit(delta, pump), 30).unwrap();
            for st in &s {
                prop_assert!(st.class_weight() > 1.0 - 1e-12);
                prop_assert!((st.vector.norm() - 1.0).abs() < 1e-10);
            }
        }
    }
}
