//! Command-line front end.
//!
//! Configuration is a TOML file with frequencies given as `f / 2 pi` in MHz,
//! times in microseconds and loss rates as `1/T` in inverse microseconds
//! (the ancilla linewidth `gamma_an / 2 pi` is in MHz). Every run writes
//! `<out>/<experiment>-<timestamp>/` holding CSV tables, `summary.json` and
//! `manifest.json`; the manifest is itself a valid `--config`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::experiments::{self, ExperimentConfig, FlipStudy, LogicalState, ResetInitial, ResetSettings, Setup};
use crate::lindblad::Tolerances;
use crate::model::{mhz, to_mhz, us, FrameChoice, NoiseParams, SystemParams};
use crate::spectrum::{self, PhaseGrid};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_PHYSICS: i32 = 4;
pub const EXIT_IO: i32 = 5;

#[derive(Parser, Debug)]
#[command(name = "kpo-aqec", version, about = "Four-photon KPO error-correction simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Quasienergy scan, degeneracy point, gap and eigenstate coefficients.
    Spectrum(Common),
    /// Wigner functions of the four information-space states.
    Wigner(Common),
    /// Correction-frequency sweep.
    SweepCor(Common),
    /// Bit- and phase-flip times with and without the correction tone.
    FlipTimes(Common),
    /// Code, error and HEL populations from |+_L>.
    Leakage(Common),
    /// Flip times on an (A_cor, gamma_an) grid.
    Optimize(Common),
    /// Degenerate and optimal pump against the coupling g.
    PumpStudy(Common),
    /// Flip times against thermal photons and dephasing.
    NoiseScan(Common),
    /// Unconditional reset with correction and reset tones.
    Reset(Common),
    /// Two-photon Rabi drive between the logical states.
    Xgate(Common),
    /// Process-fidelity relaxation against the {|0>, |1>} encoding.
    BreakEven(Common),
    /// Check a configuration and print it resolved, without running.
    Validate(Common),
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// TOML configuration, or a manifest.json from an earlier run.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one field, e.g. `--set system.pump_mhz=5.53`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Parent directory for run directories.
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub frame: Option<FrameArg>,
    /// Truncation `A,B` of the KPO and ancilla.
    #[arg(long, value_name = "A,B")]
    pub dims: Option<String>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum FrameArg {
    Rwa,
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemSection {
    pub omega_kpo_mhz: f64,
    pub kerr_mhz: f64,
    pub delta_kpo_mhz: f64,
    pub pump_mhz: f64,
    pub omega_an_mhz: f64,
    pub g_mhz: f64,
}

impl Default for SystemSection {
    fn default() -> Self {
        Self {
            omega_kpo_mhz: 2980.0,
            kerr_mhz: 20.0,
            delta_kpo_mhz: 30.0,
            pump_mhz: 5.5405,
            omega_an_mhz: 4000.0,
            g_mhz: 7.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSection {
    pub gamma_kpo_per_us: f64,
    pub n_th: f64,
    pub gamma_phi_per_us: f64,
    pub gamma_an_mhz: f64,
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self {
            gamma_kpo_per_us: 1.0 / 50.0,
            n_th: 0.0,
            gamma_phi_per_us: 0.0,
            gamma_an_mhz: 0.557,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub dim_a: usize,
    pub dim_b: usize,
    /// KPO eigenstate window depth; 0 keeps the Fock basis.
    pub window_mhz: f64,
    pub frame: String,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub cadence_us: f64,
    pub jobs: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            dim_a: 30,
            dim_b: 3,
            window_mhz: 1000.0,
            frame: "rwa".into(),
            rel_tol: 1e-6,
            abs_tol: 1e-8,
            cadence_us: 0.05,
            jobs: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToneSection {
    pub a_cor_mhz: f64,
    /// `omega_cor - delta_an`; absent places the tone midway between the
    /// dressed correction resonances.
    pub omega_cor_offset_mhz: Option<f64>,
}

impl Default for ToneSection {
    fn default() -> Self {
        Self {
            a_cor_mhz: 0.25,
            omega_cor_offset_mhz: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumSection {
    pub pump_over_k_min: f64,
    pub pump_over_k_max: f64,
    pub points: usize,
}

impl Default for SpectrumSection {
    fn default() -> Self {
        Self {
            pump_over_k_min: 0.0,
            pump_over_k_max: 0.5,
            points: 101,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WignerSection {
    pub points: usize,
    /// Half-width of the square grid; absent sizes it from the photon number.
    pub extent: Option<f64>,
}

impl Default for WignerSection {
    fn default() -> Self {
        Self {
            points: 101,
            extent: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub offset_min_mhz: f64,
    pub offset_max_mhz: f64,
    pub points: usize,
    pub t_eval_us: f64,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            offset_min_mhz: -15.0,
            offset_max_mhz: 15.0,
            points: 61,
            t_eval_us: 10.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlipSection {
    pub t_final_us: f64,
    pub fit_start_us: f64,
}

impl Default for FlipSection {
    fn default() -> Self {
        Self {
            t_final_us: 100.0,
            fit_start_us: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizeSection {
    pub a_cor_mhz: Vec<f64>,
    pub gamma_an_mhz: Vec<f64>,
}

impl Default for OptimizeSection {
    fn default() -> Self {
        Self {
            a_cor_mhz: vec![0.1, 0.25, 0.5],
            gamma_an_mhz: vec![0.3, 0.557, 1.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PumpStudySection {
    pub g_mhz: Vec<f64>,
    /// Relative steps above the degenerate pump.
    pub pump_offsets: Vec<f64>,
}

impl Default for PumpStudySection {
    fn default() -> Self {
        Self {
            g_mhz: vec![2.0, 4.0, 7.0],
            pump_offsets: vec![0.002, 0.005],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseScanSection {
    pub n_th: Vec<f64>,
    pub gamma_phi_per_us: Vec<f64>,
}

impl Default for NoiseScanSection {
    fn default() -> Self {
        Self {
            n_th: vec![0.0, 0.01, 0.05],
            gamma_phi_per_us: vec![0.001, 0.01],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResetSection {
    pub target: usize,
    pub t_final_us: f64,
    /// `0L`, `1L`, `+L`, `-L`, `i+L`, `i-L`, `<k>mod` or `fock<n>`.
    pub initial: Vec<String>,
    pub a_cor_mhz: Option<f64>,
    pub a_reset_mhz: Option<f64>,
}

impl Default for ResetSection {
    fn default() -> Self {
        Self {
            target: 0,
            t_final_us: 100.0,
            initial: ["0L", "1L", "0mod", "2mod", "fock0"].map(String::from).to_vec(),
            a_cor_mhz: None,
            a_reset_mhz: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct XgateSection {
    pub sign: f64,
    pub a_2ph_mhz: f64,
    pub t_final_us: f64,
}

impl Default for XgateSection {
    fn default() -> Self {
        Self {
            sign: 1.0,
            a_2ph_mhz: 0.05,
            t_final_us: 10.0,
        }
    }
}

/// Full run configuration in file units.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemSection,
    pub noise: NoiseSection,
    pub run: RunSection,
    pub tones: ToneSection,
    pub spectrum: SpectrumSection,
    pub wigner: WignerSection,
    pub sweep: SweepSection,
    pub flip: FlipSection,
    pub optimize: OptimizeSection,
    pub pump_study: PumpStudySection,
    pub noise_scan: NoiseScanSection,
    pub reset: ResetSection,
    pub xgate: XgateSection,
}

fn parse_initial(s: &str) -> Option<ResetInitial> {
    let logical = match s {
        "0L" => Some(LogicalState::Zero),
        "1L" => Some(LogicalState::One),
        "+L" => Some(LogicalState::Plus),
        "-L" => Some(LogicalState::Minus),
        "i+L" => Some(LogicalState::IPlus),
        "i-L" => Some(LogicalState::IMinus),
        _ => None,
    };
    if let Some(l) = logical {
        return Some(ResetInitial::Logical(l));
    }
    if let Some(k) = s.strip_suffix("mod") {
        return k.parse().ok().filter(|k| *k < 4).map(ResetInitial::Mod);
    }
    s.strip_prefix("fock")
        .and_then(|n| n.parse().ok())
        .map(ResetInitial::Fock)
}

fn sorted_nonempty(name: &str, v: &[f64], out: &mut Vec<String>) {
    if v.is_empty() {
        out.push(format!("{name} has no points"));
    } else if v.windows(2).any(|w| !(w[0] < w[1])) {
        out.push(format!("{name} must be strictly increasing"));
    }
}

impl RunConfig {
    pub fn frame(&self) -> Option<FrameChoice> {
        match self.run.frame.as_str() {
            "rwa" => Some(FrameChoice::AncillaRwa),
            "full" => Some(FrameChoice::FullCosine),
            _ => None,
        }
    }

    pub fn params(&self) -> SystemParams {
        let s = &self.system;
        SystemParams::from_lab(
            mhz(s.omega_kpo_mhz),
            mhz(s.kerr_mhz),
            mhz(s.delta_kpo_mhz),
            mhz(s.pump_mhz),
            mhz(s.omega_an_mhz),
            mhz(s.g_mhz),
        )
    }

    pub fn noise_params(&self) -> NoiseParams {
        let n = &self.noise;
        NoiseParams {
            gamma_kpo: n.gamma_kpo_per_us * 1e6,
            n_th: n.n_th,
            gamma_phi: n.gamma_phi_per_us * 1e6,
            gamma_an: mhz(n.gamma_an_mhz),
        }
    }

    /// The one place file units become SI.
    pub fn experiment_config(&self) -> ExperimentConfig {
        let params = self.params();
        ExperimentConfig {
            params,
            noise: self.noise_params(),
            dim_a: self.run.dim_a,
            dim_b: self.run.dim_b,
            window: (self.run.window_mhz > 0.0).then(|| mhz(self.run.window_mhz)),
            frame: self.frame().unwrap_or(FrameChoice::AncillaRwa),
            tolerances: Tolerances {
                rel: self.run.rel_tol,
                abs: self.run.abs_tol,
            },
            a_cor: mhz(self.tones.a_cor_mhz),
            omega_cor: self.tones.omega_cor_offset_mhz.map(|o| params.delta_an + mhz(o)),
            cadence: us(self.run.cadence_us),
            flip_t_final: us(self.flip.t_final_us),
            fit_start: us(self.flip.fit_start_us),
        }
    }

    /// Every violated constraint.
    pub fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.frame().is_none() {
            v.push(format!("run.frame must be `rwa` or `full`, got `{}`", self.run.frame));
        }
        if self.run.window_mhz < 0.0 {
            v.push("run.window_mhz >= 0".into());
        }
        v.extend(self.experiment_config().validate());
        if self.spectrum.points == 0 {
            v.push("spectrum.points has no points".into());
        }
        if !(self.spectrum.pump_over_k_min >= 0.0 && self.spectrum.pump_over_k_max > self.spectrum.pump_over_k_min) {
            v.push("0 <= spectrum.pump_over_k_min < spectrum.pump_over_k_max".into());
        }
        if self.wigner.points < 2 {
            v.push("wigner.points >= 2".into());
        }
        if self.sweep.points == 0 {
            v.push("sweep.points has no points".into());
        }
        if !(self.sweep.offset_max_mhz >= self.sweep.offset_min_mhz) {
            v.push("sweep.offset_min_mhz <= sweep.offset_max_mhz".into());
        }
        if !(self.sweep.t_eval_us > 0.0) {
            v.push("sweep.t_eval_us > 0".into());
        }
        sorted_nonempty("optimize.a_cor_mhz", &self.optimize.a_cor_mhz, &mut v);
        sorted_nonempty("optimize.gamma_an_mhz", &self.optimize.gamma_an_mhz, &mut v);
        sorted_nonempty("pump_study.g_mhz", &self.pump_study.g_mhz, &mut v);
        sorted_nonempty("noise_scan.n_th", &self.noise_scan.n_th, &mut v);
        sorted_nonempty("noise_scan.gamma_phi_per_us", &self.noise_scan.gamma_phi_per_us, &mut v);
        if self.reset.target > 1 {
            v.push("reset.target must be 0 or 1".into());
        }
        if !(self.reset.t_final_us > 0.0) {
            v.push("reset.t_final_us > 0".into());
        }
        for s in &self.reset.initial {
            match parse_initial(s) {
                None => v.push(format!("reset.initial: unknown state `{s}`")),
                Some(ResetInitial::Fock(n)) if n >= self.run.dim_a => {
                    v.push(format!("reset.initial: `{s}` exceeds dim_a"))
                }
                _ => {}
            }
        }
        if self.reset.initial.is_empty() {
            v.push("reset.initial has no states".into());
        }
        if self.xgate.sign.abs() != 1.0 {
            v.push("xgate.sign must be 1 or -1".into());
        }
        if !(self.xgate.a_2ph_mhz >= 0.0 && self.xgate.t_final_us > 0.0) {
            v.push("xgate.a_2ph_mhz >= 0 and xgate.t_final_us > 0".into());
        }
        v
    }
}

/// A failure with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub kind: &'static str,
    pub message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            kind: "config",
            message: message.into(),
        }
    }

    fn io(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_IO,
            kind: "io",
            message: message.into(),
        }
    }

    pub fn record(&self) -> Value {
        json!({ "error": { "kind": self.kind, "code": self.code, "message": self.message } })
    }
}

impl From<crate::Error> for Failure {
    fn from(e: crate::Error) -> Self {
        Self {
            code: EXIT_PHYSICS,
            kind: "physics",
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::io(e.to_string())
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::io(e.to_string())
    }
}

fn set_path(root: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), Failure> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts
        .pop()
        .filter(|s| !s.is_empty())
        .ok_or_else(|| Failure::config(format!("empty key in `{key}`")))?;
    let mut table = root;
    for p in parts {
        table = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Failure::config(format!("`{p}` in `{key}` is not a section")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Read the file (TOML, or the `config` of a manifest), apply overrides and
/// command-line shortcuts.
pub fn resolve(common: &Common) -> Result<RunConfig, Failure> {
    let mut table = match &common.config {
        None => toml::Table::new(),
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::config(format!("cannot read {}: {e}", path.display())))?;
            if path.extension().is_some_and(|e| e == "json") {
                let manifest: Value =
                    serde_json::from_str(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
                let cfg: RunConfig = serde_json::from_value(manifest.get("config").cloned().unwrap_or(Value::Null))
                    .map_err(|e| Failure::config(format!("{}: no usable `config`: {e}", path.display())))?;
                toml::Table::try_from(cfg).map_err(|e| Failure::config(e.to_string()))?
            } else {
                toml::from_str(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?
            }
        }
    };
    for o in &common.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Failure::config(format!("override `{o}` is not KEY=VALUE")))?;
        set_path(&mut table, k.trim(), parse_value(v.trim()))?;
    }
    if let Some(f) = common.frame {
        let name = if f == FrameArg::Rwa { "rwa" } else { "full" };
        set_path(&mut table, "run.frame", toml::Value::String(name.into()))?;
    }
    if let Some(d) = &common.dims {
        let parsed: Option<(i64, i64)> = d
            .split_once(',')
            .and_then(|(a, b)| Some((a.trim().parse().ok()?, b.trim().parse().ok()?)));
        let (a, b) = parsed.ok_or_else(|| Failure::config(format!("--dims expects A,B, got `{d}`")))?;
        set_path(&mut table, "run.dim_a", toml::Value::Integer(a))?;
        set_path(&mut table, "run.dim_b", toml::Value::Integer(b))?;
    }
    if let Some(j) = common.jobs {
        set_path(&mut table, "run.jobs", toml::Value::Integer(j as i64))?;
    }
    toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| Failure::config(e.to_string()))
}

/// Files produced by an experiment, written only once it has succeeded.
struct Artifacts {
    files: BTreeMap<String, Vec<u8>>,
    summary: Value,
}

impl Artifacts {
    fn new() -> Self {
        Self {
            files: BTreeMap::new(),
            summary: json!({}),
        }
    }

    fn csv(&mut self, name: &str, f: impl FnOnce(&mut Vec<u8>) -> csv::Result<()>) -> Result<(), Failure> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.files.insert(name.to_string(), buf);
        Ok(())
    }
}

fn us_or_inf(t: f64) -> Value {
    if t.is_finite() {
        json!(t * 1e6)
    } else {
        json!("inf")
    }
}

fn flip_json(r: &experiments::FlipTimeResult) -> Value {
    json!({
        "channel": r.channel,
        "t_with_aqec_us": us_or_inf(r.t_flip_with_aqec),
        "t_without_us": us_or_inf(r.t_flip_without),
        "ratio": r.ratio(),
        "max_fit_residual": r.max_residual(),
        "per_state": r.fits.iter().map(|f| json!({
            "initial": f.initial.label(),
            "aqec": f.aqec,
            "t_us": us_or_inf(f.time),
            "fit": f.fit.map(|x| json!({
                "amplitude": x.amplitude, "lifetime_us": x.lifetime() * 1e6,
                "offset": x.offset, "residual": x.residual,
            })),
        })).collect::<Vec<_>>(),
    })
}

fn run_spectrum(cfg: &RunConfig, art: &mut Artifacts) -> Result<(), Failure> {
    let p = cfg.params();
    let dim = cfg.run.dim_a;
    let s = &cfg.spectrum;
    let pumps: Vec<f64> = (0..s.points)
        .map(|i| {
            let f = if s.points == 1 {
                0.0
            } else {
                i as f64 / (s.points - 1) as f64
            };
            p.kerr * (s.pump_over_k_min + f * (s.pump_over_k_max - s.pump_over_k_min))
        })
        .collect();
    let rows = spectrum::quasienergy_scan(&p, dim, &pumps)?;
    art.csv("scan.csv", |b| spectrum::write_scan_csv(&rows, p.kerr, b))?;
    let states = spectrum::information_space(&p, dim)?;
    art.csv("coefficients.csv", |b| spectrum::write_coefficients_csv(&states, b))?;
    let degenerate = spectrum::find_degenerate_pump(&p, dim)?;
    let h0 = spectrum::block_spectrum(&p, dim, 0)?;
    let h2 = spectrum::block_spectrum(&p, dim, 2)?;
    let protection: Vec<f64> = (0..4)
        .map(|k| spectrum::block_spectrum(&p, dim, k).map(|b| to_mhz(b[0].energy - b[1].energy)))
        .collect::<crate::Result<_>>()?;
    art.summary = json!({
        "degenerate_pump_mhz": to_mhz(degenerate),
        "degenerate_pump_over_k": degenerate / p.kerr,
        "delta_kpo_over_k": p.delta_kpo / p.kerr,
        "omega_gap_mhz": to_mhz(spectrum::energy_gap(&states)),
        "energies_mhz": states.iter().map(|s| to_mhz(s.energy)).collect::<Vec<_>>(),
        "mean_photon": states.iter().map(|s| s.mean_photon).collect::<Vec<_>>(),
        "protection_gap_mhz": protection,
        "hel_matrix_elements": {
            "0h_a_1mod": spectrum::transition_element(&h0[1].vector, &states[1].vector)?,
            "2h_a_3mod": spectrum::transition_element(&h2[1].vector, &states[3].vector)?,
        },
    });
    Ok(())
}

fn run_wigner(cfg: &RunConfig, art: &mut Artifacts) -> Result<(), Failure> {
    let p = cfg.params();
    let states = spectrum::information_space(&p, cfg.run.dim_a)?;
    let extent = cfg
        .wigner
        .extent
        .unwrap_or_else(|| PhaseGrid::auto(states.iter().map(|s| s.mean_photon).fold(0.0, f64::max)).extent);
    let grid = PhaseGrid::new(extent, cfg.wigner.points);
    let mut integrals = Vec::new();
    for s in &states {
        let w = spectrum::wigner(&s.vector, &grid);
        integrals.push(w.integral());
        art.csv(&format!("wigner_{}mod.csv", s.k), |b| w.write_csv(b))?;
    }
    art.summary = json!({ "extent": extent, "points": grid.points, "integrals": integrals });
    Ok(())
}

fn setup(cfg: &RunConfig) -> Result<Setup, Failure> {
    Ok(Setup::new(cfg.experiment_config())?)
}

fn tone_json(s: &Setup) -> Value {
    let d = s.cfg.params.delta_an;
    json!({
        "delta_an_mhz": to_mhz(d),
        "omega_cor_offset_mhz": to_mhz(s.omega_cor - d),
        "a_cor_mhz": to_mhz(s.cfg.a_cor),
        "dressed_resonance_offsets_mhz": {
            "0mod_to_1mod": to_mhz(s.resonances.zero_to_one - d),
            "2mod_to_3mod": to_mhz(s.resonances.two_to_three - d),
            "0mod_to_3mod": to_mhz(s.resonances.zero_to_three - d),
            "2mod_to_1mod": to_mhz(s.resonances.two_to_one - d),
        },
    })
}

fn run_sweep(cfg: &RunConfig, art: &mut Artifacts) -> Result<(), Failure> {
    let s = setup(cfg)?;
    let sw = &cfg.sweep;
    let omegas = experiments::sweep_grid(
        s.cfg.params.delta_an,
        mhz(sw.offset_min_mhz),
        mhz(sw.offset_max_mhz),
        sw.points,
    );
    let sweep = experiments::sweep_correction_frequency(&s, &omegas, s.cfg.a_cor, us(sw.t_eval_us))?;
    art.csv("sweep.csv", |b| sweep.write_csv(b))?;
    let d = s.cfg.params.delta_an;
    let feat = |k: usize| {
        let f = sweep.features(k);
        json!({
            "peak_offset_mhz": to_mhz(f.peak - d), "peak_value": f.peak_value,
            "dip_offset_mhz": to_mhz(f.dip - d), "dip_value": f.dip_value,
            "dip_minus_peak_mhz": to_mhz(f.dip - f.peak),
        })
    };
    art.summary = json!({
        "tone": tone_json(&s),
        "omega_gap_mhz": to_mhz(s.logical.omega_gap),
        "zero_l": feat(0),
        "one_l": feat(1),
        "max_trace_deviation": sweep.max_trace_deviation,
    });
    Ok(())
}

fn run_flip(cfg: &RunConfig, art: &mut Artifacts, break_even: bool) -> Result<(), Failure> {
    let s = setup(cfg)?;
    let study = FlipStudy::run(&s)?;
    art.csv("flip_curves.csv", |b| study.write_curves_csv(b))?;
    art.csv("leakage.csv", |b| study.leakage.write_csv(b))?;
    let leak = study
        .leakage
        .summary(us(10.0).min(s.cfg.flip_t_final), s.cfg.flip_t_final);
    let mut summary = json!({
        "tone": tone_json(&s),
        "bit": flip_json(&study.bit),
        "phase": flip_json(&study.phase),
        "leakage": leak,
        "max_trace_deviation": study.max_trace_deviation(),
    });
    if break_even {
        let be = experiments::break_even_comparison(&study.bit, &study.phase, &s.cfg.noise)?;
        summary["break_even"] = json!({
            "formula": be.formula,
            "t1_baseline_us": be.t1_baseline * 1e6,
            "t2_baseline_us": be.t2_baseline * 1e6,
            "t_fidelity_baseline_us": us_or_inf(be.t_fidelity_baseline),
            "t_fidelity_aqec_us": us_or_inf(be.t_fidelity_aqec),
            "t_fidelity_no_aqec_us": us_or_inf(be.t_fidelity_no_aqec),
            "ratio": be.ratio,
            "ratio_no_aqec": be.ratio_no_aqec,
        });
    }
    art.summary = summary;
    Ok(())
}

fn run_leakage(cfg: &RunConfig, art: &mut Artifacts) -> Result<(), Failure> {
    let s = setup(cfg)?;
    let leak = experiments::leakage_populations(&s, s.cfg.flip_t_final)?;
    art.csv("leakage.csv", |b| leak.write_csv(b))?;
    art.summary = json!({
        "tone": tone_json(&s),
        "summary": leak.summary(us(10.0).min(s.cfg.flip_t_final), s.cfg.flip_t_final),
    });
    Ok(())
}

fn run_optimize(cfg: &RunConfig, art: &mut Artifacts) -> Result<(), Failure> {
    let s = setup(cfg)?;
    let a: Vec<f64> = cfg.optimize.a_cor_mhz.iter().map(|&x| mhz(x)).collect();
    let g: Vec<f64> = cfg.optimize.gamma_an_mhz.iter().map(|&x| mhz(x)).collect();
    let grid = experiments::optimize_grid(&s, &a, &g);
    art.csv("grid.csv", |b| grid.write_csv(b))?;
    let cell = |c: Option<&experiments::GridCell>| {
        c.map(|c| json!({ "a_cor_mhz": to_mhz(c.a_cor), "gamma_an_mhz": to_mhz(c.gamma_an) }))
    };
    art.summary = json!({
        "tone": tone_json(&s),
        "coverage": grid.coverage(),
        "best_bit": cell(grid.best_bit()),
        "best_phase": cell(grid.best_phase()),
    });
    Ok(())
}

fn run_pump_study(cfg: &RunConfig, art: &mut Artifacts) -> Result<(), Failure> {
    let s = setup(cfg)?;
    let g: Vec<f64> = cfg.pump_study.g_mhz.iter().map(|&x| mhz(x)).collect();
    let rows = experiments::pump_detuning_study(&s, &g, &cfg.pump_study.pump_offsets);
    art.csv("pump_study.csv", |b| {
        let mut w = csv::Writer::from_writer(b);
        w.write_record([
            "g_mhz",
            "p_degenerate_mhz",
            "p_optimal_mhz",
            "omega_cor_offset_mhz",
            "t_phase_degenerate_us",
            "t_phase_optimal_us",
            "t_phase_without_us",
            "error",
        ])?;
        let d = s.cfg.params.delta_an;
        let f = |x: Option<f64>, scale: f64| x.map(|v| format!("{:.6}", v * scale)).unwrap_or_default();
        for r in &rows {
            w.write_record(&[
                format!("{:.6}", to_mhz(r.g)),
                format!("{:.6}", to_mhz(r.p_degenerate)),
                f(r.p_optimal.map(to_mhz), 1.0),
                f(r.omega_cor.map(|w| to_mhz(w - d)), 1.0),
                f(r.phase_at_degenerate, 1e6),
                f(r.phase_at_optimal, 1e6),
                f(r.phase_without, 1e6),
                r.error.clone().unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    })?;
    art.summary = json!({ "points": rows.len(), "failed": rows.iter().filter(|r| r.error.is_some()).count() });
    Ok(())
}

fn run_noise_scan(cfg: &RunConfig, art: &mut Artifacts) -> Result<(), Failure> {
    let s = setup(cfg)?;
    let phi: Vec<f64> = cfg.noise_scan.gamma_phi_per_us.iter().map(|&x| x * 1e6).collect();
    let rows = experiments::noise_scan(&s, &cfg.noise_scan.n_th, &phi);
    art.csv("noise_scan.csv", |b| {
        let mut w = csv::Writer::from_writer(b);
        w.write_record([
            "kind",
            "value",
            "t_bit_us",
            "t_phase_us",
            "error_population",
            "hel_population",
            "error",
        ])?;
        for r in &rows {
            let (kind, value) = match r.kind {
                experiments::NoiseKind::NTh => ("n_th", r.value),
                experiments::NoiseKind::GammaPhi => ("gamma_phi_per_us", r.value * 1e-6),
            };
            let o = |x: Option<f64>, scale: f64| x.map(|v| format!("{:.8e}", v * scale)).unwrap_or_default();
            w.write_record(&[
                kind.to_string(),
                format!("{value}"),
                o(r.bit, 1e6),
                o(r.phase, 1e6),
                o(r.error_population, 1.0),
                o(r.hel_population, 1.0),
                r.error.clone().unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    })?;
    art.summary = json!({ "points": rows.len(), "failed": rows.iter().filter(|r| r.error.is_some()).count() });
    Ok(())
}

fn run_reset(cfg: &RunConfig, art: &mut Artifacts) -> Result<(), Failure> {
    let s = setup(cfg)?;
    let mut settings = ResetSettings::for_target(cfg.reset.target)?;
    if let Some(a) = cfg.reset.a_cor_mhz {
        settings.a_cor = mhz(a);
    }
    if let Some(a) = cfg.reset.a_reset_mhz {
        settings.a_reset = mhz(a);
    }
    let initials: Vec<ResetInitial> = cfg
        .reset
        .initial
        .iter()
        .map(|x| parse_initial(x).ok_or_else(|| Failure::config(format!("unknown initial state `{x}`"))))
        .collect::<Result<_, _>>()?;
    let runs = experiments::reset_experiment(&s, &settings, &initials, us(cfg.reset.t_final_us))?;
    art.csv("reset.csv", |b| experiments::write_reset_csv(&runs, b))?;
    let t_final = us(cfg.reset.t_final_us);
    art.summary = json!({
        "target": settings.target,
        "a_cor_mhz": to_mhz(settings.a_cor),
        "a_reset_mhz": to_mhz(settings.a_reset),
        "omega_reset_offset_mhz": to_mhz(settings.reset_frequency(s.omega_cor, s.logical.omega_gap) - s.cfg.params.delta_an),
        "runs": runs.iter().map(|r| json!({
            "initial": r.initial.label(),
            "p_target_at_5us": r.series.at("p_target", us(5.0)),
            "p_target_final": r.series.last("p_target"),
            "plateau_last_10pct": r.plateau(0.9 * t_final),
            "t_to_0_85_us": r.time_to_reach(0.85).map(|t| t * 1e6),
        })).collect::<Vec<_>>(),
    });
    Ok(())
}

fn run_xgate(cfg: &RunConfig, art: &mut Artifacts) -> Result<(), Failure> {
    let s = setup(cfg)?;
    let a = mhz(cfg.xgate.a_2ph_mhz);
    let r = experiments::x_gate_rabi(&s, cfg.xgate.sign, a, us(cfg.xgate.t_final_us))?;
    art.csv("rabi.csv", |b| r.series.write_csv(b))?;
    art.summary = json!({
        "drive_frequency_mhz": to_mhz(r.frequency),
        "matrix_element": r.matrix_element,
        "period_us": r.period.map(|t| t * 1e6),
        "oracle_period_us": if a > 0.0 { Some(r.oracle_period(a) * 1e6) } else { None },
        "contrast": r.contrast,
    });
    Ok(())
}

fn dispatch(name: &str, cfg: &RunConfig) -> Result<Artifacts, Failure> {
    let mut art = Artifacts::new();
    match name {
        "spectrum" => run_spectrum(cfg, &mut art)?,
        "wigner" => run_wigner(cfg, &mut art)?,
        "sweep-cor" => run_sweep(cfg, &mut art)?,
        "flip-times" => run_flip(cfg, &mut art, false)?,
        "break-even" => run_flip(cfg, &mut art, true)?,
        "leakage" => run_leakage(cfg, &mut art)?,
        "optimize" => run_optimize(cfg, &mut art)?,
        "pump-study" => run_pump_study(cfg, &mut art)?,
        "noise-scan" => run_noise_scan(cfg, &mut art)?,
        "reset" => run_reset(cfg, &mut art)?,
        "xgate" => run_xgate(cfg, &mut art)?,
        other => {
            return Err(Failure {
                code: EXIT_USAGE,
                kind: "usage",
                message: format!("unknown experiment `{other}`"),
            })
        }
    }
    Ok(art)
}

fn fresh_dir(out: &Path, name: &str, stamp: &str) -> PathBuf {
    let base = out.join(format!("{name}-{stamp}"));
    if !base.exists() {
        return base;
    }
    (1..)
        .map(|i| out.join(format!("{name}-{stamp}-{i}")))
        .find(|p| !p.exists())
        .expect("unbounded")
}

/// Run `name` with `common`; returns the run directory.
pub fn execute(name: &str, common: &Common) -> Result<PathBuf, Failure> {
    let cfg = resolve(common)?;
    let problems = cfg.validate();
    if !problems.is_empty() {
        return Err(Failure::config(problems.join("; ")));
    }
    let started = Instant::now();
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ").to_string();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.run.jobs)
        .build()
        .map_err(|e| Failure::config(format!("run.jobs: {e}")))?;
    let art = pool.install(|| dispatch(name, &cfg))?;

    fs::create_dir_all(&common.out)?;
    let dir = fresh_dir(&common.out, name, &stamp);
    let staging = common.out.join(format!(
        ".{}.partial",
        dir.file_name().expect("named").to_string_lossy()
    ));
    let write = || -> Result<(), Failure> {
        fs::create_dir_all(&staging)?;
        for (file, bytes) in &art.files {
            fs::write(staging.join(file), bytes)?;
        }
        fs::write(
            staging.join("summary.json"),
            serde_json::to_string_pretty(&art.summary).expect("json") + "\n",
        )?;
        let manifest = json!({
            "tool": env!("CARGO_PKG_NAME"),
            "version": env!("CARGO_PKG_VERSION"),
            "experiment": name,
            "started_utc": stamp,
            "wall_seconds": started.elapsed().as_secs_f64(),
            "files": art.files.keys().collect::<Vec<_>>(),
            "config": cfg,
        });
        fs::write(
            staging.join("manifest.json"),
            serde_json::to_string_pretty(&manifest).expect("json") + "\n",
        )?;
        fs::rename(&staging, &dir)?;
        Ok(())
    };
    if let Err(e) = write() {
        let _ = fs::remove_dir_all(&staging);
        return Err(e);
    }
    Ok(dir)
}

/// Print the resolved configuration and every violation.
pub fn validate(common: &Common) -> Result<String, Failure> {
    let cfg = resolve(common)?;
    let problems = cfg.validate();
    let text = toml::to_string_pretty(&cfg).map_err(|e| Failure::config(e.to_string()))?;
    if problems.is_empty() {
        Ok(text)
    } else {
        Err(Failure::config(problems.join("; ")))
    }
}

/// Entry point; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let (name, common) = match &cli.command {
        Command::Spectrum(c) => ("spectrum", c),
        Command::Wigner(c) => ("wigner", c),
        Command::SweepCor(c) => ("sweep-cor", c),
        Command::FlipTimes(c) => ("flip-times", c),
        Command::Leakage(c) => ("leakage", c),
        Command::Optimize(c) => ("optimize", c),
        Command::PumpStudy(c) => ("pump-study", c),
        Command::NoiseScan(c) => ("noise-scan", c),
        Command::Reset(c) => ("reset", c),
        Command::Xgate(c) => ("xgate", c),
        Command::BreakEven(c) => ("break-even", c),
        Command::Validate(c) => ("validate", c),
    };
    let result = if name == "validate" {
        validate(common).map(|text| print!("{text}"))
    } else {
        execute(name, common).map(|dir| println!("{}", dir.display()))
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("{}", f.record());
            f.code
        }
    }
}
