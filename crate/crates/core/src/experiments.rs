//! Protocol drivers built on [`lindblad::evolve`].
//!
//! Every run starts with the ancilla in vacuum. Frequencies and amplitudes
//! are angular (rad/s) and times are in seconds; tables written to CSV use
//! MHz (`f / 2 pi`) and microseconds.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{Dims, Operator, StateVector};
use crate::lindblad::{self, fit_exponential, EvolveSpec, ExpFit, Observable, TimeSeries, Tolerances};
use crate::model::{self, mhz, to_mhz, us, FrameChoice, FullSystem, NoiseParams, SystemParams, ToneParams};
use crate::spectrum::{self, LogicalFrame};

/// Inputs shared by all protocols.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub params: SystemParams,
    pub noise: NoiseParams,
    pub dim_a: usize,
    pub dim_b: usize,
    /// Depth of the KPO eigenstate window below the highest quasienergy;
    /// `None` keeps the truncated Fock basis.
    pub window: Option<f64>,
    pub frame: FrameChoice,
    pub tolerances: Tolerances,
    pub a_cor: f64,
    /// `None` places the tone midway between the two dressed correction
    /// resonances.
    pub omega_cor: Option<f64>,
    /// Sampling interval of flip, leakage and reset runs.
    pub cadence: f64,
    pub flip_t_final: f64,
    /// Samples before this time are left out of flip-time fits.
    pub fit_start: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            params: SystemParams::reference(),
            noise: NoiseParams::reference(),
            dim_a: 30,
            dim_b: 3,
            window: Some(mhz(1000.0)),
            frame: FrameChoice::AncillaRwa,
            tolerances: Tolerances { rel: 1e-6, abs: 1e-8 },
            a_cor: mhz(0.25),
            omega_cor: None,
            cadence: us(0.05),
            flip_t_final: us(100.0),
            fit_start: us(0.5),
        }
    }
}

impl ExperimentConfig {
    /// Every violated constraint, not just the first.
    pub fn validate(&self) -> Vec<String> {
        let mut v = self.params.validate();
        v.extend(self.noise.validate());
        if self.dim_a < 8 {
            v.push("dim_a >= 8".into());
        }
        if self.dim_b < 2 {
            v.push("dim_b >= 2".into());
        }
        if let Some(w) = self.window {
            if !(w > 0.0) {
                v.push("window > 0".into());
            }
        }
        if !(self.tolerances.rel > 0.0 && self.tolerances.abs > 0.0) {
            v.push("tolerances > 0".into());
        }
        if !(self.a_cor >= 0.0) {
            v.push("a_cor >= 0".into());
        }
        if !(self.cadence > 0.0) {
            v.push("cadence > 0".into());
        }
        if !(self.flip_t_final > self.fit_start && self.fit_start >= 0.0) {
            v.push("0 <= fit_start < flip_t_final".into());
        }
        v
    }
}

/// Dressed transition frequencies `E(j, 1_an) - E(i, 0_an)` of the static
/// KPO-ancilla Hamiltonian, i.e. the tone frequencies that drive them.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Resonances {
    pub zero_to_one: f64,
    pub two_to_three: f64,
    /// Bit-flipping transitions, suppressed by `omega_gap`.
    pub zero_to_three: f64,
    pub two_to_one: f64,
}

impl Resonances {
    pub fn center(&self) -> f64 {
        0.5 * (self.zero_to_one + self.two_to_three)
    }
}

struct Dressed {
    /// `[class][ancilla]`.
    energy: [[f64; 2]; 4],
}

fn dressed_levels(p: &SystemParams, dim_a: usize, dim_b: usize) -> Result<Dressed> {
    let info = spectrum::information_space(p, dim_a)?;
    let h = FullSystem::new(p, dim_a, dim_b)?.h_static();
    let n = h.dim();
    let eig = DMatrix::<f64>::from_fn(n, n, |i, j| h.get(i, j).re).symmetric_eigen();
    let mut energy = [[0.0; 2]; 4];
    for (k, st) in info.iter().enumerate() {
        for nb in 0..2 {
            let bare = st.vector.tensor(&StateVector::fock(dim_b, nb)?)?;
            let (mut best, mut idx) = (-1.0, 0);
            for j in 0..n {
                let ov: f64 = (0..n)
                    .map(|i| eig.eigenvectors[(i, j)] * bare.amplitudes()[i].re)
                    .sum::<f64>()
                    .powi(2);
                if ov > best {
                    best = ov;
                    idx = j;
                }
            }
            energy[k][nb] = eig.eigenvalues[idx];
        }
    }
    Ok(Dressed { energy })
}

pub fn dressed_resonances(p: &SystemParams, dim_a: usize, dim_b: usize) -> Result<Resonances> {
    let e = dressed_levels(p, dim_a, dim_b)?.energy;
    Ok(Resonances {
        zero_to_one: e[1][1] - e[0][0],
        two_to_three: e[3][1] - e[2][0],
        zero_to_three: e[3][1] - e[0][0],
        two_to_one: e[1][1] - e[2][0],
    })
}

/// Pump at which the dressed `|0_mod, 0_an>` and `|1_mod, 0_an>` levels cross.
pub fn dressed_degenerate_pump(p: &SystemParams, dim_a: usize, dim_b: usize) -> Result<f64> {
    let bare = spectrum::find_degenerate_pump(p, dim_a)?;
    let f = |pump: f64| -> Result<f64> {
        let e = dressed_levels(&p.with_pump(pump), dim_a, dim_b)?.energy;
        Ok(e[0][0] - e[1][0])
    };
    let (mut lo, mut hi) = (0.8 * bare, 1.2 * bare);
    let (mut flo, fhi) = (f(lo)?, f(hi)?);
    if flo.signum() == fhi.signum() {
        return Err(Error::NoDegeneracy { lo, hi });
    }
    while hi - lo > 1e-10 * hi {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid)?;
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Everything a protocol needs, built once from an [`ExperimentConfig`].
#[derive(Clone, Debug)]
pub struct Setup {
    pub cfg: ExperimentConfig,
    pub logical: LogicalFrame,
    pub system: FullSystem,
    pub collapse: Vec<Operator>,
    pub resonances: Resonances,
    pub omega_cor: f64,
}

impl Setup {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        if let Some(first) = cfg.validate().into_iter().next() {
            return Err(Error::InvalidParameter {
                name: "config",
                reason: first,
            });
        }
        let logical = LogicalFrame::new(&cfg.params, cfg.dim_a)?;
        let system = match cfg.window {
            Some(depth) => FullSystem::windowed(&cfg.params, cfg.dim_a, cfg.dim_b, depth)?,
            None => FullSystem::new(&cfg.params, cfg.dim_a, cfg.dim_b)?,
        };
        let collapse = system.collapse_operators(&cfg.noise)?;
        let resonances = dressed_resonances(&cfg.params, cfg.dim_a, cfg.dim_b)?;
        let omega_cor = cfg.omega_cor.unwrap_or_else(|| resonances.center());
        Ok(Self {
            cfg,
            logical,
            system,
            collapse,
            resonances,
            omega_cor,
        })
    }

    pub fn correction_tone(&self) -> ToneParams {
        ToneParams::correction(self.cfg.a_cor, self.omega_cor)
    }

    /// Channels recorded by every protocol run.
    fn observables(&self) -> Vec<(String, Observable)> {
        let f = &self.logical;
        let mut v = vec![
            ("p_0l", &f.zero_l),
            ("p_1l", &f.one_l),
            ("p_plus", &f.plus_l),
            ("p_minus", &f.minus_l),
            ("p_iplus", &f.iplus_l),
            ("p_iminus", &f.iminus_l),
        ];
        let names = ["p_mod0", "p_mod1", "p_mod2", "p_mod3"];
        for (k, name) in names.iter().enumerate() {
            v.push((name, f.mod_state(k)));
        }
        let mut obs: Vec<(String, Observable)> = v
            .into_iter()
            .map(|(n, s)| (n.to_string(), Observable::KpoPopulation(s.clone())))
            .collect();
        // Re and Im of <0_L|rho|1_L> as Re Tr(O rho).
        let flip = f.one_l.amplitudes() * f.zero_l.amplitudes().adjoint();
        let dims = f.zero_l.dims();
        let op = |c: C64| Operator::from_matrix(dims, &flip * c).expect("single mode");
        obs.push(("re_01".into(), Observable::KpoOperator(op(C64::new(1.0, 0.0)))));
        obs.push(("im_01".into(), Observable::KpoOperator(op(C64::new(0.0, -1.0)))));
        obs
    }

    /// Evolve from `initial` (a single-mode Fock-basis KPO state, ancilla in
    /// vacuum) and record the standard channels plus `code`, `error`, `hel`.
    pub fn run(&self, initial: &StateVector, tones: Vec<ToneParams>, t_final: f64, cadence: f64) -> Result<TimeSeries> {
        let mut psi = self.system.to_working_state(initial)?;
        let kept = psi.norm().powi(2);
        if kept < 1.0 - 1e-3 {
            return Err(Error::InvalidParameter {
                name: "window",
                reason: format!("initial state keeps only {kept:.4} of its weight in the window; deepen it"),
            });
        }
        psi.normalize();
        let rho = psi.with_ancilla_vacuum(self.system.dims.ancilla)?.to_density();
        let mut spec = EvolveSpec::uniform(rho, t_final, cadence);
        spec.tones = tones;
        spec.frame = self.cfg.frame;
        spec.tolerances = self.cfg.tolerances;
        spec.observables = self.observables();
        let mut series = lindblad::evolve(&self.system, &self.collapse, &spec)?;
        let ch = |s: &TimeSeries, n: &str| s.channel(n).expect("recorded").to_vec();
        let (m0, m1, m2, m3) = (
            ch(&series, "p_mod0"),
            ch(&series, "p_mod1"),
            ch(&series, "p_mod2"),
            ch(&series, "p_mod3"),
        );
        series.derive("code", |i| m1[i] + m3[i]);
        series.derive("error", |i| m0[i] + m2[i]);
        series.derive("hel", |i| 1.0 - m0[i] - m1[i] - m2[i] - m3[i]);
        let (re, im) = (ch(&series, "re_01"), ch(&series, "im_01"));
        series.derive("coherence", |i| 2.0 * re[i].hypot(im[i]));
        Ok(series)
    }
}

/// Logical initial states.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogicalState {
    Zero,
    One,
    Plus,
    Minus,
    IPlus,
    IMinus,
}

impl LogicalState {
    pub fn state<'a>(&self, f: &'a LogicalFrame) -> &'a StateVector {
        match self {
            LogicalState::Zero => &f.zero_l,
            LogicalState::One => &f.one_l,
            LogicalState::Plus => &f.plus_l,
            LogicalState::Minus => &f.minus_l,
            LogicalState::IPlus => &f.iplus_l,
            LogicalState::IMinus => &f.iminus_l,
        }
    }

    pub fn channel(&self) -> &'static str {
        match self {
            LogicalState::Zero => "p_0l",
            LogicalState::One => "p_1l",
            LogicalState::Plus => "p_plus",
            LogicalState::Minus => "p_minus",
            LogicalState::IPlus => "p_iplus",
            LogicalState::IMinus => "p_iminus",
        }
    }

    pub fn orthogonal(&self) -> LogicalState {
        match self {
            LogicalState::Zero => LogicalState::One,
            LogicalState::One => LogicalState::Zero,
            LogicalState::Plus => LogicalState::Minus,
            LogicalState::Minus => LogicalState::Plus,
            LogicalState::IPlus => LogicalState::IMinus,
            LogicalState::IMinus => LogicalState::IPlus,
        }
    }

    pub fn is_superposition(&self) -> bool {
        !matches!(self, LogicalState::Zero | LogicalState::One)
    }

    pub fn label(&self) -> &'static str {
        match self {
            LogicalState::Zero => "0L",
            LogicalState::One => "1L",
            LogicalState::Plus => "+L",
            LogicalState::Minus => "-L",
            LogicalState::IPlus => "i+L",
            LogicalState::IMinus => "i-L",
        }
    }
}

/// One evolution of a flip study.
#[derive(Clone, Debug)]
pub struct FlipRun {
    pub initial: LogicalState,
    pub aqec: bool,
    pub series: TimeSeries,
}

impl FlipRun {
    /// `P(initial) - P(orthogonal)` for `|0_L>`, `|1_L>`. For superpositions
    /// the same difference is taken in the frame co-rotating with the
    /// logical qubit, which is `2 |<0_L|rho|1_L>|`.
    pub fn contrast(&self) -> Vec<f64> {
        if self.initial.is_superposition() {
            return self.series.channel("coherence").expect("recorded").to_vec();
        }
        let a = self.series.channel(self.initial.channel()).expect("recorded");
        let b = self
            .series
            .channel(self.initial.orthogonal().channel())
            .expect("recorded");
        a.iter().zip(b).map(|(x, y)| x - y).collect()
    }
}

/// A fitted flip time; `time` is infinite when the contrast does not decay.
#[derive(Clone, Debug, Serialize)]
pub struct FlipFit {
    pub initial: LogicalState,
    pub aqec: bool,
    pub time: f64,
    pub fit: Option<ExpFit>,
}

#[derive(Clone, Debug, Serialize)]
pub struct FlipTimeResult {
    /// Mean over the initial states.
    pub t_flip_with_aqec: f64,
    pub t_flip_without: f64,
    pub channel: String,
    pub fits: Vec<FlipFit>,
}

impl FlipTimeResult {
    pub fn ratio(&self) -> f64 {
        self.t_flip_with_aqec / self.t_flip_without
    }

    pub fn time(&self, initial: LogicalState, aqec: bool) -> Option<f64> {
        self.fits
            .iter()
            .find(|f| f.initial == initial && f.aqec == aqec)
            .map(|f| f.time)
    }

    pub fn max_residual(&self) -> f64 {
        self.fits
            .iter()
            .filter_map(|f| f.fit.map(|x| x.residual))
            .fold(0.0, f64::max)
    }
}

/// Fit `contrast(t) = A exp(-t/T) + c` over `t >= fit_start`.
pub fn fit_flip(times: &[f64], contrast: &[f64], fit_start: f64) -> Result<(f64, Option<ExpFit>)> {
    let (t, y): (Vec<f64>, Vec<f64>) = times
        .iter()
        .zip(contrast)
        .filter(|(t, _)| **t >= fit_start)
        .map(|(t, y)| (*t, *y))
        .unzip();
    let (lo, hi) = y
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if hi - lo < 1e-9 {
        return Ok((f64::INFINITY, None));
    }
    let fit = fit_exponential(&t, &y)?;
    let time = if fit.rate > 0.0 && fit.amplitude > 0.0 {
        fit.lifetime()
    } else {
        f64::INFINITY
    };
    Ok((time, Some(fit)))
}

fn flip_result(setup: &Setup, runs: &[&FlipRun], channel: &str) -> Result<FlipTimeResult> {
    let mut fits = Vec::new();
    for r in runs {
        let (time, fit) = fit_flip(&r.series.times, &r.contrast(), setup.cfg.fit_start)?;
        fits.push(FlipFit {
            initial: r.initial,
            aqec: r.aqec,
            time,
            fit,
        });
    }
    let mean = |aqec: bool| {
        let v: Vec<f64> = fits.iter().filter(|f| f.aqec == aqec).map(|f| f.time).collect();
        if v.is_empty() {
            f64::NAN
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    Ok(FlipTimeResult {
        t_flip_with_aqec: mean(true),
        t_flip_without: mean(false),
        channel: channel.to_string(),
        fits,
    })
}

/// Run every `(initial, aqec)` combination, in parallel, in the given order.
pub fn flip_runs(setup: &Setup, initials: &[LogicalState], aqec: &[bool]) -> Result<Vec<FlipRun>> {
    let jobs: Vec<(LogicalState, bool)> = initials
        .iter()
        .flat_map(|s| aqec.iter().map(move |a| (*s, *a)))
        .collect();
    jobs.par_iter()
        .map(|&(initial, on)| {
            let tones = if on { vec![setup.correction_tone()] } else { Vec::new() };
            let series = setup.run(
                initial.state(&setup.logical),
                tones,
                setup.cfg.flip_t_final,
                setup.cfg.cadence,
            )?;
            Ok(FlipRun {
                initial,
                aqec: on,
                series,
            })
        })
        .collect()
}

/// Bit-flip time from `|0_L>` and `|1_L>`, with and without the correction tone.
pub fn flip_time_bit(setup: &Setup) -> Result<FlipTimeResult> {
    let runs = flip_runs(setup, &[LogicalState::Zero, LogicalState::One], &[true, false])?;
    flip_result(setup, &runs.iter().collect::<Vec<_>>(), "P(initial) - P(orthogonal)")
}

const COHERENCE: &str = "2 |<0_L|rho|1_L>|";

/// Phase-flip time from `|+_L>`.
pub fn flip_time_phase(setup: &Setup) -> Result<FlipTimeResult> {
    flip_time_phase_from(setup, &[LogicalState::Plus])
}

/// Phase-flip time averaged over the given superposition states.
pub fn flip_time_phase_from(setup: &Setup, initials: &[LogicalState]) -> Result<FlipTimeResult> {
    let runs = flip_runs(setup, initials, &[true, false])?;
    flip_result(setup, &runs.iter().collect::<Vec<_>>(), COHERENCE)
}

/// Population of the code, error and HEL spaces from `|+_L>`.
#[derive(Clone, Debug)]
pub struct Leakage {
    pub with_aqec: TimeSeries,
    pub without: TimeSeries,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct LeakageSummary {
    pub t_error: f64,
    pub error_with: f64,
    pub error_without: f64,
    /// `error_without / error_with`.
    pub error_suppression: f64,
    pub t_hel: f64,
    pub hel_with: f64,
    pub hel_without: f64,
    /// `1 - hel_with / hel_without`.
    pub hel_reduction: f64,
}

impl Leakage {
    pub fn summary(&self, t_error: f64, t_hel: f64) -> LeakageSummary {
        let get = |s: &TimeSeries, n: &str, t: f64| s.at(n, t).unwrap_or(f64::NAN);
        let (ew, eo) = (
            get(&self.with_aqec, "error", t_error),
            get(&self.without, "error", t_error),
        );
        let (hw, ho) = (get(&self.with_aqec, "hel", t_hel), get(&self.without, "hel", t_hel));
        LeakageSummary {
            t_error,
            error_with: ew,
            error_without: eo,
            error_suppression: eo / ew,
            t_hel,
            hel_with: hw,
            hel_without: ho,
            hel_reduction: 1.0 - hw / ho,
        }
    }

    /// One row per sample with both runs side by side.
    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record([
            "time_us",
            "code_with",
            "error_with",
            "hel_with",
            "code_without",
            "error_without",
            "hel_without",
        ])?;
        let col = |s: &TimeSeries, n: &str| s.channel(n).expect("recorded").to_vec();
        let cols = [
            col(&self.with_aqec, "code"),
            col(&self.with_aqec, "error"),
            col(&self.with_aqec, "hel"),
            col(&self.without, "code"),
            col(&self.without, "error"),
            col(&self.without, "hel"),
        ];
        for (i, t) in self.with_aqec.times.iter().enumerate() {
            let mut row = vec![format!("{:.6}", t * 1e6)];
            row.extend(cols.iter().map(|c| format!("{:.10e}", c[i])));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

pub fn leakage_populations(setup: &Setup, t_final: f64) -> Result<Leakage> {
    let mut s = setup.clone();
    s.cfg.flip_t_final = t_final;
    leakage_from(&flip_runs(&s, &[LogicalState::Plus], &[true, false])?)
}

fn leakage_from(runs: &[FlipRun]) -> Result<Leakage> {
    let pick = |on: bool| {
        runs.iter()
            .find(|r| r.initial == LogicalState::Plus && r.aqec == on)
            .map(|r| r.series.clone())
            .ok_or_else(|| Error::InvalidParameter {
                name: "runs",
                reason: "no |+_L> run".into(),
            })
    };
    Ok(Leakage {
        with_aqec: pick(true)?,
        without: pick(false)?,
    })
}

/// Bit flips, phase flips and leakage from one set of six runs.
#[derive(Clone, Debug)]
pub struct FlipStudy {
    pub runs: Vec<FlipRun>,
    pub bit: FlipTimeResult,
    pub phase: FlipTimeResult,
    pub leakage: Leakage,
}

impl FlipStudy {
    pub fn run(setup: &Setup) -> Result<Self> {
        let runs = flip_runs(
            setup,
            &[LogicalState::Zero, LogicalState::One, LogicalState::Plus],
            &[true, false],
        )?;
        let of = |states: &[LogicalState]| runs.iter().filter(|r| states.contains(&r.initial)).collect::<Vec<_>>();
        let bit = flip_result(
            setup,
            &of(&[LogicalState::Zero, LogicalState::One]),
            "P(initial) - P(orthogonal)",
        )?;
        let phase = flip_result(setup, &of(&[LogicalState::Plus]), COHERENCE)?;
        let leakage = leakage_from(&runs)?;
        Ok(Self {
            runs,
            bit,
            phase,
            leakage,
        })
    }

    pub fn max_trace_deviation(&self) -> f64 {
        self.runs
            .iter()
            .map(|r| r.series.diagnostics.max_trace_deviation())
            .fold(0.0, f64::max)
    }

    /// Contrast curves of every run, long format.
    pub fn write_curves_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["initial", "aqec", "time_us", "p_initial", "p_orthogonal", "contrast"])?;
        for r in &self.runs {
            let a = r.series.channel(r.initial.channel()).expect("recorded");
            let b = r.series.channel(r.initial.orthogonal().channel()).expect("recorded");
            let c = r.contrast();
            for (i, t) in r.series.times.iter().enumerate() {
                wtr.write_record(&[
                    r.initial.label().to_string(),
                    r.aqec.to_string(),
                    format!("{:.6}", t * 1e6),
                    format!("{:.10e}", a[i]),
                    format!("{:.10e}", b[i]),
                    format!("{:.10e}", c[i]),
                ])?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

/// One point of a correction-frequency sweep.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct SweepRow {
    pub omega_cor: f64,
    /// `P(0_L)` after starting in `|0_L>`.
    pub p_zero: f64,
    pub p_one: f64,
    /// `P(code)` after starting in `|0_L>` and `|1_L>`.
    pub code_zero: f64,
    pub code_one: f64,
}

/// Peak and dip of one sweep curve, refined by a parabola through the
/// extreme sample and its neighbours.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct SweepFeatures {
    pub peak: f64,
    pub peak_value: f64,
    pub dip: f64,
    pub dip_value: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Sweep {
    pub a_cor: f64,
    pub t_eval: f64,
    pub delta_an: f64,
    pub rows: Vec<SweepRow>,
    pub max_trace_deviation: f64,
}

fn vertex(x: [f64; 3], y: [f64; 3]) -> (f64, f64) {
    let d1 = (y[1] - y[0]) / (x[1] - x[0]);
    let d2 = (y[2] - y[1]) / (x[2] - x[1]);
    let a = (d2 - d1) / (x[2] - x[0]);
    if a == 0.0 {
        return (x[1], y[1]);
    }
    let b = d1 - a * (x[0] + x[1]);
    let xv = (-b / (2.0 * a)).clamp(x[0], x[2]);
    let yv = y[0] + (xv - x[0]) * (d1 + a * (xv - x[1]));
    (xv, yv)
}

impl Sweep {
    /// `state` is 0 for `|0_L>` and 1 for `|1_L>`.
    pub fn features(&self, state: usize) -> SweepFeatures {
        let x: Vec<f64> = self.rows.iter().map(|r| r.omega_cor).collect();
        let y: Vec<f64> = self
            .rows
            .iter()
            .map(|r| if state == 0 { r.p_zero } else { r.p_one })
            .collect();
        let refine = |i: usize| {
            if i == 0 || i + 1 == x.len() {
                (x[i], y[i])
            } else {
                vertex([x[i - 1], x[i], x[i + 1]], [y[i - 1], y[i], y[i + 1]])
            }
        };
        let imax = (0..y.len()).max_by(|&a, &b| y[a].total_cmp(&y[b])).unwrap_or(0);
        let imin = (0..y.len()).min_by(|&a, &b| y[a].total_cmp(&y[b])).unwrap_or(0);
        let (peak, peak_value) = refine(imax);
        let (dip, dip_value) = refine(imin);
        SweepFeatures {
            peak,
            peak_value,
            dip,
            dip_value,
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record([
            "omega_cor_mhz",
            "offset_mhz",
            "p_zero_l",
            "p_one_l",
            "code_from_zero",
            "code_from_one",
        ])?;
        for r in &self.rows {
            wtr.write_record(&[
                format!("{:.6}", to_mhz(r.omega_cor)),
                format!("{:.6}", to_mhz(r.omega_cor - self.delta_an)),
                format!("{:.10e}", r.p_zero),
                format!("{:.10e}", r.p_one),
                format!("{:.10e}", r.code_zero),
                format!("{:.10e}", r.code_one),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// `n` tone frequencies spaced uniformly over `delta_an + [lo, hi]`.
pub fn sweep_grid(delta_an: f64, lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![delta_an + 0.5 * (lo + hi)];
    }
    (0..n)
        .map(|i| delta_an + lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

pub fn sweep_correction_frequency(setup: &Setup, omegas: &[f64], a_cor: f64, t_eval: f64) -> Result<Sweep> {
    if !(t_eval > 0.0) {
        return Err(Error::InvalidParameter {
            name: "t_eval",
            reason: format!("must be positive, got {t_eval}"),
        });
    }
    let jobs: Vec<(usize, LogicalState)> = (0..omegas.len())
        .flat_map(|i| [(i, LogicalState::Zero), (i, LogicalState::One)])
        .collect();
    let out: Vec<(f64, f64, f64)> = jobs
        .par_iter()
        .map(|&(i, s)| {
            let tones = vec![ToneParams::correction(a_cor, omegas[i])];
            let series = setup.run(s.state(&setup.logical), tones, t_eval, t_eval)?;
            Ok((
                series.last(s.channel()).expect("recorded"),
                series.last("code").expect("recorded"),
                series.diagnostics.max_trace_deviation(),
            ))
        })
        .collect::<Result<_>>()?;
    let rows = omegas
        .iter()
        .enumerate()
        .map(|(i, &w)| SweepRow {
            omega_cor: w,
            p_zero: out[2 * i].0,
            p_one: out[2 * i + 1].0,
            code_zero: out[2 * i].1,
            code_one: out[2 * i + 1].1,
        })
        .collect();
    Ok(Sweep {
        a_cor,
        t_eval,
        delta_an: setup.cfg.params.delta_an,
        rows,
        max_trace_deviation: out.iter().map(|o| o.2).fold(0.0, f64::max),
    })
}

/// One cell of an `(A_cor, gamma_an)` grid; failed cells keep the message.
#[derive(Clone, Debug, Serialize)]
pub struct GridCell {
    pub a_cor: f64,
    pub gamma_an: f64,
    pub bit: Option<f64>,
    pub phase: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Grid {
    pub cells: Vec<GridCell>,
}

impl Grid {
    pub fn coverage(&self) -> f64 {
        self.cells.iter().filter(|c| c.error.is_none()).count() as f64 / self.cells.len().max(1) as f64
    }

    fn argmax(&self, f: impl Fn(&GridCell) -> Option<f64>) -> Option<&GridCell> {
        self.cells
            .iter()
            .filter(|c| f(c).is_some_and(|v| v.is_finite()))
            .max_by(|a, b| f(a).unwrap().total_cmp(&f(b).unwrap()))
    }

    pub fn best_bit(&self) -> Option<&GridCell> {
        self.argmax(|c| c.bit)
    }

    pub fn best_phase(&self) -> Option<&GridCell> {
        self.argmax(|c| c.phase)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["a_cor_mhz", "gamma_an_mhz", "t_bit_us", "t_phase_us", "error"])?;
        for c in &self.cells {
            wtr.write_record(&[
                format!("{:.6}", to_mhz(c.a_cor)),
                format!("{:.6}", to_mhz(c.gamma_an)),
                opt_us(c.bit),
                opt_us(c.phase),
                c.error.clone().unwrap_or_default(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn opt_us(t: Option<f64>) -> String {
    match t {
        Some(t) if t.is_finite() => format!("{:.6}", t * 1e6),
        Some(_) => "inf".into(),
        None => String::new(),
    }
}

/// AQEC bit- and phase-flip times.
fn aqec_times(setup: &Setup) -> Result<(f64, f64, Vec<FlipRun>)> {
    let runs = flip_runs(
        setup,
        &[LogicalState::Zero, LogicalState::One, LogicalState::Plus],
        &[true],
    )?;
    let of = |s: &[LogicalState]| runs.iter().filter(|r| s.contains(&r.initial)).collect::<Vec<_>>();
    let bit = flip_result(setup, &of(&[LogicalState::Zero, LogicalState::One]), "")?;
    let phase = flip_result(setup, &of(&[LogicalState::Plus]), "")?;
    Ok((bit.t_flip_with_aqec, phase.t_flip_with_aqec, runs))
}

pub fn optimize_grid(setup: &Setup, a_cor_values: &[f64], gamma_an_values: &[f64]) -> Grid {
    let jobs: Vec<(f64, f64)> = a_cor_values
        .iter()
        .flat_map(|&a| gamma_an_values.iter().map(move |&g| (a, g)))
        .collect();
    let cells = jobs
        .par_iter()
        .map(|&(a_cor, gamma_an)| {
            let mut cfg = setup.cfg.clone();
            cfg.a_cor = a_cor;
            cfg.noise.gamma_an = gamma_an;
            cfg.omega_cor = Some(setup.omega_cor);
            match Setup::new(cfg).and_then(|s| aqec_times(&s)) {
                Ok((bit, phase, _)) => GridCell {
                    a_cor,
                    gamma_an,
                    bit: Some(bit),
                    phase: Some(phase),
                    error: None,
                },
                Err(e) => GridCell {
                    a_cor,
                    gamma_an,
                    bit: None,
                    phase: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    Grid { cells }
}

#[derive(Clone, Debug, Serialize)]
pub struct PumpStudyRow {
    pub g: f64,
    pub p_degenerate: f64,
    pub p_optimal: Option<f64>,
    pub omega_cor: Option<f64>,
    pub phase_at_degenerate: Option<f64>,
    pub phase_at_optimal: Option<f64>,
    pub phase_without: Option<f64>,
    pub error: Option<String>,
}

/// For each coupling `g`: the dressed degeneracy pump, then the pump among
/// `p_degenerate * (1 + f)` for `f` in `pump_offsets` that maximizes the
/// AQEC phase-flip time, with the tone midway between the two dressed
/// correction resonances at that pump.
pub fn pump_detuning_study(setup: &Setup, g_values: &[f64], pump_offsets: &[f64]) -> Vec<PumpStudyRow> {
    g_values
        .par_iter()
        .map(|&g| {
            let mut row = PumpStudyRow {
                g,
                p_degenerate: f64::NAN,
                p_optimal: None,
                omega_cor: None,
                phase_at_degenerate: None,
                phase_at_optimal: None,
                phase_without: None,
                error: None,
            };
            let attempt = |row: &mut PumpStudyRow| -> Result<()> {
                let mut p = setup.cfg.params;
                p.g = g;
                let cfg = &setup.cfg;
                row.p_degenerate = dressed_degenerate_pump(&p, cfg.dim_a, cfg.dim_b)?;
                let mut offsets = vec![0.0];
                offsets.extend(pump_offsets.iter().copied().filter(|&f| f != 0.0));
                let results: Vec<(f64, f64, f64, f64)> = offsets
                    .par_iter()
                    .map(|&f| {
                        let mut c = cfg.clone();
                        c.params = p.with_pump(row.p_degenerate * (1.0 + f));
                        c.omega_cor = None;
                        let s = Setup::new(c)?;
                        let r = flip_time_phase(&s)?;
                        Ok((s.cfg.params.pump, s.omega_cor, r.t_flip_with_aqec, r.t_flip_without))
                    })
                    .collect::<Result<_>>()?;
                row.phase_at_degenerate = Some(results[0].2);
                let best = results
                    .iter()
                    .max_by(|a, b| a.2.total_cmp(&b.2))
                    .expect("at least the degenerate point");
                row.p_optimal = Some(best.0);
                row.omega_cor = Some(best.1);
                row.phase_at_optimal = Some(best.2);
                row.phase_without = Some(best.3);
                Ok(())
            };
            if let Err(e) = attempt(&mut row) {
                row.error = Some(e.to_string());
            }
            row
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    NTh,
    GammaPhi,
}

#[derive(Clone, Debug, Serialize)]
pub struct NoiseRow {
    pub kind: NoiseKind,
    pub value: f64,
    pub bit: Option<f64>,
    pub phase: Option<f64>,
    /// Final error- and HEL-space populations of the AQEC `|+_L>` run.
    pub error_population: Option<f64>,
    pub hel_population: Option<f64>,
    pub error: Option<String>,
}

/// AQEC flip times against thermal photons (`gamma_phi = 0`) and against
/// dephasing (`n_th = 0`).
pub fn noise_scan(setup: &Setup, n_th_values: &[f64], gamma_phi_values: &[f64]) -> Vec<NoiseRow> {
    let jobs: Vec<(NoiseKind, f64)> = n_th_values
        .iter()
        .map(|&v| (NoiseKind::NTh, v))
        .chain(gamma_phi_values.iter().map(|&v| (NoiseKind::GammaPhi, v)))
        .collect();
    jobs.par_iter()
        .map(|&(kind, value)| {
            let mut cfg = setup.cfg.clone();
            cfg.omega_cor = Some(setup.omega_cor);
            match kind {
                NoiseKind::NTh => {
                    cfg.noise.n_th = value;
                    cfg.noise.gamma_phi = 0.0;
                }
                NoiseKind::GammaPhi => {
                    cfg.noise.gamma_phi = value;
                    cfg.noise.n_th = 0.0;
                }
            }
            match Setup::new(cfg).and_then(|s| aqec_times(&s)) {
                Ok((bit, phase, runs)) => {
                    let plus = runs.iter().find(|r| r.initial == LogicalState::Plus);
                    NoiseRow {
                        kind,
                        value,
                        bit: Some(bit),
                        phase: Some(phase),
                        error_population: plus.and_then(|r| r.series.last("error")),
                        hel_population: plus.and_then(|r| r.series.last("hel")),
                        error: None,
                    }
                }
                Err(e) => NoiseRow {
                    kind,
                    value,
                    bit: None,
                    phase: None,
                    error_population: None,
                    hel_population: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect()
}

/// Dephasing of a mode dispersively coupled (shift `chi`) to a thermal
/// mode with decay rate `gamma_nqs` and occupation `n_th_q`:
/// `(gamma/2) Re[sqrt((1 + 2i chi/gamma)^2 + 8i chi n / gamma) - 1]`.
pub fn induced_dephasing_rate(gamma_nqs: f64, n_th_q: f64, chi: f64) -> Result<f64> {
    if !(gamma_nqs > 0.0) {
        return Err(Error::InvalidParameter {
            name: "gamma_nqs",
            reason: format!("must be positive, got {gamma_nqs}"),
        });
    }
    let x = chi / gamma_nqs;
    // sqrt(w) - 1 = (w - 1) / (sqrt(w) + 1) avoids cancellation for small x.
    let w_minus_1 = C64::new(-4.0 * x * x, 4.0 * x + 8.0 * x * n_th_q);
    let root = (w_minus_1 + 1.0).sqrt();
    Ok(0.5 * gamma_nqs * (w_minus_1 / (root + 1.0)).re)
}

/// `K (g / (omega_an - omega_KPO))^2`: dispersive shift of the KPO from the ancilla.
pub fn dispersive_shift(p: &SystemParams) -> f64 {
    p.kerr * (p.g / (p.omega_an - p.omega_kpo)).powi(2)
}

/// Tone settings of the reset protocol.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResetSettings {
    /// Logical target, 0 or 1.
    pub target: usize,
    pub a_cor: f64,
    pub a_reset: f64,
}

impl ResetSettings {
    /// `A_cor = 0.50 MHz, A_reset = 0.32 MHz` for `|0_L>`;
    /// `A_cor = 0.45 MHz, A_reset = 0.40 MHz` for `|1_L>`.
    pub fn for_target(target: usize) -> Result<Self> {
        match target {
            0 => Ok(Self {
                target,
                a_cor: mhz(0.50),
                a_reset: mhz(0.32),
            }),
            1 => Ok(Self {
                target,
                a_cor: mhz(0.45),
                a_reset: mhz(0.40),
            }),
            _ => Err(Error::InvalidParameter {
                name: "target",
                reason: format!("logical target must be 0 or 1, got {target}"),
            }),
        }
    }

    /// `omega_cor - omega_gap` for `|0_L>`, `omega_cor + omega_gap` for `|1_L>`.
    pub fn reset_frequency(&self, omega_cor: f64, omega_gap: f64) -> f64 {
        if self.target == 0 {
            omega_cor - omega_gap
        } else {
            omega_cor + omega_gap
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "index")]
pub enum ResetInitial {
    Logical(LogicalState),
    /// `|k_mod>`.
    Mod(usize),
    Fock(usize),
}

impl ResetInitial {
    pub fn label(&self) -> String {
        match self {
            ResetInitial::Logical(s) => s.label().to_string(),
            ResetInitial::Mod(k) => format!("{k}mod"),
            ResetInitial::Fock(n) => format!("fock{n}"),
        }
    }

    fn state(&self, setup: &Setup) -> Result<StateVector> {
        match *self {
            ResetInitial::Logical(s) => Ok(s.state(&setup.logical).clone()),
            ResetInitial::Mod(k) if k < 4 => Ok(setup.logical.mod_state(k).clone()),
            ResetInitial::Mod(k) => Err(Error::InvalidModClass(k)),
            ResetInitial::Fock(n) => StateVector::fock(setup.cfg.dim_a, n),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ResetRun {
    pub initial: ResetInitial,
    pub series: TimeSeries,
}

impl ResetRun {
    /// First sample time at which `p_target` reaches `level`.
    pub fn time_to_reach(&self, level: f64) -> Option<f64> {
        let p = self.series.channel("p_target")?;
        p.iter().position(|&v| v >= level).map(|i| self.series.times[i])
    }

    /// Mean of `p_target` over samples with `t >= t_from`.
    pub fn plateau(&self, t_from: f64) -> f64 {
        let p = self.series.channel("p_target").expect("recorded");
        let v: Vec<f64> = self
            .series
            .times
            .iter()
            .zip(p)
            .filter(|(t, _)| **t >= t_from)
            .map(|(_, v)| *v)
            .collect();
        v.iter().sum::<f64>() / v.len().max(1) as f64
    }
}

pub fn reset_experiment(
    setup: &Setup,
    settings: &ResetSettings,
    initials: &[ResetInitial],
    t_final: f64,
) -> Result<Vec<ResetRun>> {
    if settings.target > 1 {
        return Err(Error::InvalidParameter {
            name: "target",
            reason: format!("logical target must be 0 or 1, got {}", settings.target),
        });
    }
    let tones = vec![
        ToneParams::correction(settings.a_cor, setup.omega_cor),
        ToneParams::reset(
            settings.a_reset,
            settings.reset_frequency(setup.omega_cor, setup.logical.omega_gap),
        ),
    ];
    let target = if settings.target == 0 { "p_0l" } else { "p_1l" };
    initials
        .par_iter()
        .map(|init| {
            let mut series = setup.run(&init.state(setup)?, tones.clone(), t_final, setup.cfg.cadence)?;
            let p = series.channel(target).expect("recorded").to_vec();
            series.derive("p_target", |i| p[i]);
            Ok(ResetRun { initial: *init, series })
        })
        .collect()
}

pub fn write_reset_csv<W: Write>(runs: &[ResetRun], w: W) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["initial", "time_us", "p_target", "code", "error", "hel"])?;
    for r in runs {
        let ch = |n: &str| r.series.channel(n).expect("recorded");
        let (p, c, e, h) = (ch("p_target"), ch("code"), ch("error"), ch("hel"));
        for (i, t) in r.series.times.iter().enumerate() {
            wtr.write_record(&[
                r.initial.label(),
                format!("{:.6}", t * 1e6),
                format!("{:.10e}", p[i]),
                format!("{:.10e}", c[i]),
                format!("{:.10e}", e[i]),
                format!("{:.10e}", h[i]),
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Outcome of a two-photon Rabi drive between `|0_L>` and `|1_L>`.
#[derive(Clone, Debug)]
pub struct RabiResult {
    pub series: TimeSeries,
    /// Drive frequency in the frame rotating at a quarter of the pump.
    pub frequency: f64,
    /// `|<1_L|a'^2 + a^2|0_L>|`.
    pub matrix_element: f64,
    /// Full Rabi period from the first maximum of `P(1_L)`.
    pub period: Option<f64>,
    /// Largest `P(1_L)` reached.
    pub contrast: f64,
}

impl RabiResult {
    /// Two-level prediction `2 pi / (A |M|)`.
    pub fn oracle_period(&self, a_2ph: f64) -> f64 {
        2.0 * PI / (a_2ph * self.matrix_element)
    }
}

/// Drive the isolated KPO with `A cos(w t)(a'^2 + a^2)`, starting in `|0_L>`.
///
/// `w = sign * (E_3mod - E_1mod)`, which matches the logical splitting
/// (about `omega_gap`). A cosine drive is even in `w`, so both signs give the
/// same dynamics; the sign is kept for reporting. The ancilla is left out
/// and only the KPO noise channels act.
pub fn x_gate_rabi(setup: &Setup, detuning_sign: f64, a_2ph: f64, t_final: f64) -> Result<RabiResult> {
    if detuning_sign.abs() != 1.0 {
        return Err(Error::InvalidParameter {
            name: "detuning_sign",
            reason: format!("must be +1 or -1, got {detuning_sign}"),
        });
    }
    let cfg = &setup.cfg;
    let f = &setup.logical;
    let frequency = detuning_sign * (f.states[3].energy - f.states[1].energy);
    let drive = model::build_two_photon_drive(cfg.dim_a)?;
    let matrix_element = f.one_l.inner(&drive.apply(&f.zero_l)?)?.norm();
    let fock_collapse = model::collapse_operators(&cfg.noise, Dims::single(cfg.dim_a))?;
    let (h0, drive_w, collapse, zero, one) = match cfg.window {
        Some(depth) => {
            let w = model::kpo_window(&cfg.params, cfg.dim_a, depth)?;
            let c = fock_collapse
                .iter()
                .map(|op| w.operator(op))
                .collect::<Result<Vec<_>>>()?;
            (
                w.hamiltonian.clone(),
                w.operator(&drive)?,
                c,
                w.state(&f.zero_l)?,
                w.state(&f.one_l)?,
            )
        }
        None => (
            model::build_kpo_hamiltonian(&cfg.params, cfg.dim_a)?,
            drive,
            fock_collapse,
            f.zero_l.clone(),
            f.one_l.clone(),
        ),
    };
    let mut h = model::TimeDependentHamiltonian::constant(h0);
    if a_2ph != 0.0 {
        h = h.with_term(drive_w, 0.5 * a_2ph, frequency)?;
    }
    let cadence = cfg.cadence.min(t_final / 200.0);
    let mut spec = EvolveSpec::uniform(zero.to_density(), t_final, cadence)
        .observe("p_0l", Observable::Population(zero))
        .observe("p_1l", Observable::Population(one));
    spec.tolerances = cfg.tolerances;
    let series = lindblad::evolve_generator(&h, &collapse, &spec)?.series;
    let p1 = series.channel("p_1l").expect("recorded");
    let contrast = p1.iter().copied().fold(0.0, f64::max);
    let period = (1..p1.len().saturating_sub(1))
        .find(|&i| p1[i] >= p1[i - 1] && p1[i] > p1[i + 1] && p1[i] > 0.5 * contrast)
        .map(|i| {
            let t = &series.times;
            2.0 * vertex([t[i - 1], t[i], t[i + 1]], [p1[i - 1], p1[i], p1[i + 1]]).0
        });
    Ok(RabiResult {
        series,
        frequency,
        matrix_element,
        period,
        contrast,
    })
}

/// Fidelity decay of a Pauli channel whose Bloch components relax as
/// `lambda_z = exp(-t/T_bit)` and `lambda_x = lambda_y = exp(-t/T_phase)`:
/// `F(t) = 1/2 + (lambda_z + 2 lambda_x)/6`. The relaxation time is where
/// `(lambda_z + 2 lambda_x)/3` falls to `1/e`.
pub const FIDELITY_FORMULA: &str =
    "F(t) = 1/2 + (exp(-t/T_bit) + 2 exp(-t/T_phase))/6; T_F solves (exp(-T_F/T_bit) + 2 exp(-T_F/T_phase))/3 = 1/e";

pub fn fidelity_relaxation_time(t_bit: f64, t_phase: f64) -> f64 {
    let target = (-1.0f64).exp();
    let f = |t: f64| ((-t / t_bit).exp() + 2.0 * (-t / t_phase).exp()) / 3.0 - target;
    if !t_bit.is_finite() && !t_phase.is_finite() {
        return f64::INFINITY;
    }
    let (mut lo, mut hi) = (t_bit.min(t_phase), t_bit.max(t_phase));
    if !hi.is_finite() {
        hi = lo;
        while f(hi) > 0.0 {
            hi *= 2.0;
        }
    }
    // f(min) >= 0 >= f(max) since each exponential is between its 1/e values.
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[derive(Clone, Debug, Serialize)]
pub struct BreakEven {
    pub formula: &'static str,
    pub t1_baseline: f64,
    pub t2_baseline: f64,
    pub t_fidelity_baseline: f64,
    pub t_fidelity_aqec: f64,
    pub t_fidelity_no_aqec: f64,
    pub ratio: f64,
    pub ratio_no_aqec: f64,
}

/// Compare the encoded qubit with `{|0>, |1>}` under the same loss, where
/// `T1 = 1/gamma_KPO` and `T2 = 2 T1`.
pub fn break_even_comparison(bit: &FlipTimeResult, phase: &FlipTimeResult, noise: &NoiseParams) -> Result<BreakEven> {
    if !(noise.gamma_kpo > 0.0) {
        return Err(Error::InvalidParameter {
            name: "gamma_kpo",
            reason: "the baseline needs a finite T1".into(),
        });
    }
    let t1 = 1.0 / noise.gamma_kpo;
    let t2 = 2.0 * t1;
    let base = fidelity_relaxation_time(t1, t2);
    let with = fidelity_relaxation_time(bit.t_flip_with_aqec, phase.t_flip_with_aqec);
    let without = fidelity_relaxation_time(bit.t_flip_without, phase.t_flip_without);
    Ok(BreakEven {
        formula: FIDELITY_FORMULA,
        t1_baseline: t1,
        t2_baseline: t2,
        t_fidelity_baseline: base,
        t_fidelity_aqec: with,
        t_fidelity_no_aqec: without,
        ratio: with / base,
        ratio_no_aqec: without / base,
    })
}
