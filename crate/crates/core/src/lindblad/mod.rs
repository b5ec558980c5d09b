//! Time-dependent Lindblad integration with observable sampling.

pub mod dopri;
pub mod fit;
pub mod liouvillian;

use std::time::Instant;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{self, DensityState, Operator, StateVector};
use crate::model::{FrameChoice, FullSystem, TimeDependentHamiltonian, ToneParams};
use dopri::{Dopri5, StepControl, StepStats};
use liouvillian::BlockLiouvillian;

pub use fit::{fit_exponential, ExpFit};

/// Trace drift above which a run is flagged.
pub const TRACE_FLAG: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub rel: f64,
    pub abs: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { rel: 1e-8, abs: 1e-10 }
    }
}

impl Tolerances {
    pub fn halved(self) -> Self {
        Self {
            rel: self.rel / 2.0,
            abs: self.abs / 2.0,
        }
    }
}

/// Something sampled as `Re Tr(O rho)`.
#[derive(Clone, Debug)]
pub enum Observable {
    Operator(Operator),
    /// `<psi|rho|psi>` on the full space.
    Population(StateVector),
    /// `<psi|Tr_b rho|psi>` for a KPO state.
    KpoPopulation(StateVector),
    /// `Tr(O Tr_b rho)` for a KPO operator.
    KpoOperator(Operator),
}

impl Observable {
    fn full_operator(&self, dims: fock::Dims) -> Result<Operator> {
        let lift = |op: Operator| -> Result<Operator> {
            if op.dims() == dims {
                Ok(op)
            } else if op.dims() == fock::Dims::single(dims.kpo) {
                fock::tensor(&op, &fock::identity(dims.ancilla))
            } else {
                Err(Error::DimensionMismatch {
                    expected: dims.to_string(),
                    got: op.dims().to_string(),
                })
            }
        };
        match self {
            Observable::Operator(op) => lift(op.clone()),
            Observable::Population(psi) => lift(psi.projector()),
            Observable::KpoPopulation(psi) => {
                if psi.dims() != fock::Dims::single(dims.kpo) {
                    return Err(Error::DimensionMismatch {
                        expected: fock::Dims::single(dims.kpo).to_string(),
                        got: psi.dims().to_string(),
                    });
                }
                lift(psi.projector())
            }
            Observable::KpoOperator(op) => {
                if op.dims() != fock::Dims::single(dims.kpo) {
                    return Err(Error::DimensionMismatch {
                        expected: fock::Dims::single(dims.kpo).to_string(),
                        got: op.dims().to_string(),
                    });
                }
                lift(op.clone())
            }
        }
    }

    fn is_population(&self) -> bool {
        matches!(self, Observable::Population(_) | Observable::KpoPopulation(_))
    }
}

#[derive(Clone, Debug)]
pub struct EvolveSpec {
    pub initial: DensityState,
    pub t_final: f64,
    pub sample_times: Vec<f64>,
    pub tones: Vec<ToneParams>,
    pub frame: FrameChoice,
    pub tolerances: Tolerances,
    pub observables: Vec<(String, Observable)>,
    /// Diagonalize rho at each sample to monitor positivity.
    pub track_min_eigenvalue: bool,
}

impl EvolveSpec {
    /// Samples every `cadence` from 0 through `t_final`.
    pub fn uniform(initial: DensityState, t_final: f64, cadence: f64) -> Self {
        let n = (t_final / cadence).round() as usize;
        let sample_times = (0..=n).map(|i| (i as f64 * cadence).min(t_final)).collect();
        Self {
            initial,
            t_final,
            sample_times,
            tones: Vec::new(),
            frame: FrameChoice::AncillaRwa,
            tolerances: Tolerances::default(),
            observables: Vec::new(),
            track_min_eigenvalue: false,
        }
    }

    pub fn observe(mut self, name: impl Into<String>, obs: Observable) -> Self {
        self.observables.push((name.into(), obs));
        self
    }

    fn check(&self) -> Result<()> {
        if !(self.tolerances.rel > 0.0 && self.tolerances.abs > 0.0) {
            return Err(Error::InvalidParameter {
                name: "tolerances",
                reason: "rel and abs must be positive".into(),
            });
        }
        if !(self.t_final >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "t_final",
                reason: format!("must be non-negative, got {}", self.t_final),
            });
        }
        let mut prev = 0.0;
        for &t in &self.sample_times {
            if t < prev || t > self.t_final {
                return Err(Error::InvalidParameter {
                    name: "sample_times",
                    reason: format!("must be sorted within [0, {}], found {t}", self.t_final),
                });
            }
            prev = t;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct Diagnostics {
    pub trace_deviation: Vec<f64>,
    pub hermiticity: Vec<f64>,
    pub min_eigenvalue: Option<Vec<f64>>,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub rhs_evals: usize,
    pub wall_seconds: f64,
    pub sectors: usize,
    pub blocks: usize,
}

impl Diagnostics {
    pub fn max_trace_deviation(&self) -> f64 {
        self.trace_deviation.iter().fold(0.0, |m, &x| m.max(x))
    }

    pub fn max_hermiticity(&self) -> f64 {
        self.hermiticity.iter().fold(0.0, |m, &x| m.max(x))
    }

    pub fn trace_flagged(&self) -> bool {
        self.max_trace_deviation() > TRACE_FLAG
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct TimeSeries {
    pub times: Vec<f64>,
    pub channels: Vec<(String, Vec<f64>)>,
    pub diagnostics: Diagnostics,
}

impl TimeSeries {
    pub fn channel(&self, name: &str) -> Option<&[f64]> {
        self.channels.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }

    pub fn last(&self, name: &str) -> Option<f64> {
        self.channel(name).and_then(|v| v.last().copied())
    }

    /// Value of `name` at the sample nearest to `t`.
    pub fn at(&self, name: &str, t: f64) -> Option<f64> {
        let v = self.channel(name)?;
        let i = self
            .times
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))?
            .0;
        v.get(i).copied()
    }

    /// Add a derived channel built from existing ones.
    pub fn derive(&mut self, name: impl Into<String>, f: impl Fn(usize) -> f64) {
        let v = (0..self.times.len()).map(f).collect();
        self.channels.push((name.into(), v));
    }

    /// CSV with a `time_us` column followed by one column per channel.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> csv::Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["time_us".to_string()];
        header.extend(self.channels.iter().map(|(n, _)| n.clone()));
        wtr.write_record(&header)?;
        for (i, t) in self.times.iter().enumerate() {
            let mut row = vec![format!("{:.6}", t * 1e6)];
            row.extend(self.channels.iter().map(|(_, v)| format!("{:.10e}", v[i])));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Result of a run that also keeps the final state.
#[derive(Clone, Debug)]
pub struct Evolution {
    pub series: TimeSeries,
    pub final_state: DensityState,
}

/// Integrate the KPO-ancilla master equation under `spec`.
pub fn evolve(system: &FullSystem, collapse: &[Operator], spec: &EvolveSpec) -> Result<TimeSeries> {
    Ok(evolve_full(system, collapse, spec)?.series)
}

/// As [`evolve`], also returning the final state.
///
/// The initial state and observables may be given in Fock coordinates; they
/// are mapped into the system's working basis, and the final state is mapped
/// back.
pub fn evolve_full(system: &FullSystem, collapse: &[Operator], spec: &EvolveSpec) -> Result<Evolution> {
    let h = system.time_dependent(&spec.tones, spec.frame);
    let mut working = spec.clone();
    working.initial = system.to_working_density(&spec.initial)?;
    for (_, obs) in working.observables.iter_mut() {
        *obs = match obs {
            Observable::Operator(op) => Observable::Operator(system.to_working_operator(op)?),
            Observable::Population(psi) => Observable::Population(system.to_working_state(psi)?),
            Observable::KpoPopulation(psi) => Observable::KpoPopulation(system.to_working_state(psi)?),
            Observable::KpoOperator(op) => Observable::KpoOperator(system.to_working_operator(op)?),
        };
    }
    let mut run = evolve_generator(&h, collapse, &working)?;
    run.final_state = system.to_fock_density(&run.final_state)?;
    Ok(run)
}

/// Integrate under an arbitrary `H(t)`; `spec.tones` and `spec.frame` are ignored.
pub fn evolve_generator(h: &TimeDependentHamiltonian, collapse: &[Operator], spec: &EvolveSpec) -> Result<Evolution> {
    spec.check()?;
    let dims = h.dims();
    let ops = spec
        .observables
        .iter()
        .map(|(_, o)| o.full_operator(dims))
        .collect::<Result<Vec<_>>>()?;
    let started = Instant::now();
    let mut liou = BlockLiouvillian::new(h, collapse, &spec.initial)?;
    let n = dims.total();
    let ctl = StepControl {
        rtol: spec.tolerances.rel,
        atol: spec.tolerances.abs,
        norm_len: 2 * n * n,
        max_steps: 200_000_000,
        h_init: None,
    };
    let mut y = liou.pack(&spec.initial);
    let mut values: Vec<Vec<f64>> = vec![Vec::with_capacity(spec.sample_times.len()); ops.len()];
    let mut diag = Diagnostics {
        min_eigenvalue: spec.track_min_eigenvalue.then(Vec::new),
        sectors: liou.sector_count(),
        blocks: liou.block_count(),
        ..Default::default()
    };
    let mut last = DMatrix::zeros(n, n);
    let mut solver = Dopri5::new(y.len(), ctl);
    let layout = liou.layout().clone();
    let stats: StepStats = {
        let sampled = |_: usize, _: f64, y: &[f64]| -> Result<()> {
            let rho = layout.unpack(y);
            let tr = rho.trace();
            diag.trace_deviation.push((tr.re - 1.0).abs().max(tr.im.abs()));
            diag.hermiticity
                .push((&rho - rho.adjoint()).iter().fold(0.0, |m: f64, z| m.max(z.norm())));
            if let Some(m) = diag.min_eigenvalue.as_mut() {
                let herm = (&rho + rho.adjoint()) * C64::new(0.5, 0.0);
                m.push(herm.symmetric_eigenvalues().min());
            }
            for (op, out) in ops.iter().zip(values.iter_mut()) {
                out.push(trace_product(op.matrix(), &rho));
            }
            last = rho;
            Ok(())
        };
        solver.integrate(&mut liou, 0.0, &mut y, &spec.sample_times, sampled)?
    };
    diag.accepted_steps = stats.accepted;
    diag.rejected_steps = stats.rejected;
    diag.rhs_evals = stats.rhs_evals;
    diag.wall_seconds = started.elapsed().as_secs_f64();
    if spec.sample_times.is_empty() {
        last = spec.initial.matrix().clone();
    }

    let channels: Vec<(String, Vec<f64>)> = spec
        .observables
        .iter()
        .zip(values)
        .map(|((name, obs), v)| {
            if obs.is_population() {
                debug_assert!(v.iter().all(|&p| (-1e-6..=1.0 + 1e-6).contains(&p)));
            }
            (name.clone(), v)
        })
        .collect();
    Ok(Evolution {
        series: TimeSeries {
            times: spec.sample_times.clone(),
            channels,
            diagnostics: diag,
        },
        final_state: DensityState::from_matrix(dims, last)?,
    })
}

/// `Re Tr(O rho)` without forming the product.
fn trace_product(o: &DMatrix<C64>, rho: &DMatrix<C64>) -> f64 {
    let n = o.nrows();
    let mut acc = 0.0;
    for j in 0..n {
        for i in 0..n {
            let a = o[(i, j)];
            if a.re != 0.0 || a.im != 0.0 {
                let b = rho[(j, i)];
                acc += a.re * b.re - a.im * b.im;
            }
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{create, destroy, number, Dims};
    use crate::model::{self, NoiseParams, SystemParams};

    fn fock_density(dim: usize, n: usize) -> DensityState {
        StateVector::fock(dim, n).unwrap().to_density()
    }

    #[test]
    fn damped_cavity_matches_closed_form() {
        let gamma: f64 = 1.0e5;
        let dim = 6;
        let h = TimeDependentHamiltonian::constant(Operator::zeros(Dims::single(dim)));
        let c = vec![destroy(dim).unwrap().scale_real(gamma.sqrt())];
        let spec = EvolveSpec::uniform(fock_density(dim, 3), 50e-6, 1e-6)
            .observe("n", Observable::Operator(number(dim).unwrap()));
        let run = evolve_generator(&h, &c, &spec).unwrap().series;
        for (t, n) in run.times.iter().zip(run.channel("n").unwrap()) {
            let want = 3.0 * (-gamma * t).exp();
            assert!((n - want).abs() <= 1e-6 * want, "t={t} n={n} want={want}");
        }
        assert!(run.diagnostics.max_trace_deviation() < 1e-9);
        let fit = fit_exponential(&run.times, run.channel("n").unwrap()).unwrap();
        assert!((fit.lifetime() * gamma - 1.0).abs() < 1e-3);
    }

    #[test]
    fn closed_system_keeps_purity() {
        let p = SystemParams::reference();
        let h = model::build_kpo_hamiltonian(&p, 30).unwrap();
        let eig = model::kpo_eigenbasis(&h).unwrap();
        let top = |k: usize| {
            let e = eig.iter().find(|e| e.class == k && e.level == 0).unwrap();
            StateVector::from_amplitudes(Dims::single(30), e.vector.clone()).unwrap()
        };
        let plus = top(1)
            .superpose(C64::new(1.0, 0.0), &top(3), C64::new(1.0, 0.0))
            .unwrap()
            .normalized();
        let spec = EvolveSpec::uniform(plus.to_density(), 10e-6, 1e-6);
        let run = evolve_generator(&TimeDependentHamiltonian::constant(h), &[], &spec).unwrap();
        assert!((run.final_state.purity() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn driven_two_level_steady_state() {
        // H = (W/2)(s+ + s-), decay G: rho_ee = (W^2/4) / (G^2/4 + W^2/2).
        let (w, g): (f64, f64) = (2.0e5, 3.0e5);
        let sp = create(2).unwrap();
        let h = TimeDependentHamiltonian::constant((&sp + &sp.dagger()).scale_real(w / 2.0));
        let c = vec![destroy(2).unwrap().scale_real(g.sqrt())];
        let spec = EvolveSpec::uniform(fock_density(2, 0), 200e-6, 10e-6)
            .observe("pe", Observable::Population(StateVector::fock(2, 1).unwrap()));
        let run = evolve_generator(&h, &c, &spec).unwrap().series;
        let want = (w * w / 4.0) / (g * g / 4.0 + w * w / 2.0);
        assert!((run.last("pe").unwrap() - want).abs() < 1e-4);
    }

    #[test]
    fn evolution_is_linear() {
        let p = SystemParams::reference();
        let sys = FullSystem::windowed(&p, 30, 3, model::mhz(1000.0)).unwrap();
        let c = sys.collapse_operators(&NoiseParams::reference()).unwrap();
        let tone = model::ToneParams::correction(model::mhz(1.0), p.delta_an);
        let eig = model::kpo_eigenbasis(&model::build_kpo_hamiltonian(&p, 30).unwrap()).unwrap();
        let top = |k: usize| {
            let e = eig.iter().find(|e| e.class == k && e.level == 0).unwrap();
            StateVector::from_amplitudes(Dims::single(30), e.vector.clone())
                .unwrap()
                .with_ancilla_vacuum(3)
                .unwrap()
                .to_density()
        };
        let (r1, r2) = (top(1), top(3));
        let mix = r1.mix(&r2, 0.5).unwrap();
        let run = |rho: DensityState| {
            let mut spec = EvolveSpec::uniform(rho, 0.5e-6, 0.1e-6);
            spec.tones = vec![tone];
            spec.tolerances = Tolerances { rel: 1e-10, abs: 1e-12 };
            evolve_full(&sys, &c, &spec).unwrap().final_state.into_matrix()
        };
        let (a, b, m) = (run(r1), run(r2), run(mix));
        let diff = (&m - (a + b) * C64::new(0.5, 0.0))
            .iter()
            .fold(0.0, |x: f64, z| x.max(z.norm()));
        assert!(diff < 1e-8, "{diff}");
    }

    #[test]
    fn window_agrees_with_fock_basis() {
        let p = SystemParams::reference();
        let noise = NoiseParams::reference();
        let tone = model::ToneParams::correction(model::mhz(1.0), p.delta_an + model::mhz(0.36));
        let eig = model::kpo_eigenbasis(&model::build_kpo_hamiltonian(&p, 30).unwrap()).unwrap();
        let zero_l = eig.iter().find(|e| e.class == 1 && e.level == 0).unwrap();
        let zero_l = StateVector::from_amplitudes(Dims::single(30), zero_l.vector.clone()).unwrap();
        let run = |sys: &FullSystem| {
            let c = sys.collapse_operators(&noise).unwrap();
            let mut spec = EvolveSpec::uniform(zero_l.with_ancilla_vacuum(3).unwrap().to_density(), 0.3e-6, 0.1e-6)
                .observe("p", Observable::KpoPopulation(zero_l.clone()));
            spec.tones = vec![tone];
            evolve_full(sys, &c, &spec).unwrap()
        };
        let fock = run(&FullSystem::new(&p, 30, 3).unwrap());
        let window = run(&FullSystem::windowed(&p, 30, 3, model::mhz(1000.0)).unwrap());
        for (x, y) in fock
            .series
            .channel("p")
            .unwrap()
            .iter()
            .zip(window.series.channel("p").unwrap())
        {
            assert!((x - y).abs() < 1e-6, "{x} {y}");
        }
        let d = fock.final_state.matrix() - window.final_state.matrix();
        let worst = d.iter().fold(0.0, |m: f64, z| m.max(z.norm()));
        assert!(worst < 1e-4, "{worst}");
    }

    #[test]
    fn rejects_unsorted_samples() {
        let h = TimeDependentHamiltonian::constant(Operator::zeros(Dims::single(3)));
        let mut spec = EvolveSpec::uniform(fock_density(3, 1), 1e-6, 0.5e-6);
        spec.sample_times = vec![0.5e-6, 0.2e-6];
        assert!(matches!(
            evolve_generator(&h, &[], &spec),
            Err(Error::InvalidParameter {
                name: "sample_times",
                ..
            })
        ));
    }
}
