//! Declarative scenario files: parsing, validation and execution.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::corr::{self, CrossOptions, HomOptions};
use crate::dynamics::{self, calibrated, default_end_time_ns, emission_probabilities, fiber_efficiency};
use crate::error::{Error, Result};
use crate::fitkit::{self, FitResult, PhotoionizationConstants};
use crate::model::{DriveMode, SystemParams};
use crate::qspace::{BasisState, DensityMatrix, Mode};
use crate::steady::{self, PulsedWindow, SweepResult};
use crate::util::{check_grid, linspace, logspace};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spacing {
    #[default]
    Linear,
    Log,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridRange {
    pub start: f64,
    pub stop: f64,
    pub points: usize,
    #[serde(default)]
    pub spacing: Spacing,
}

/// A grid given either explicitly or as a range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Grid {
    Values(Vec<f64>),
    Range(GridRange),
}

impl Grid {
    pub fn values(&self) -> Vec<f64> {
        match self {
            Grid::Values(v) => v.clone(),
            Grid::Range(r) => match r.spacing {
                Spacing::Linear => linspace(r.start, r.stop, r.points),
                Spacing::Log => logspace(r.start, r.stop, r.points),
            },
        }
    }

    fn checked(&self, pointer: &str) -> Result<Vec<f64>> {
        if let Grid::Range(r) = self {
            if r.spacing == Spacing::Log && !(r.start > 0.0 && r.stop > 0.0) {
                return Err(config(pointer, "log spacing needs positive bounds"));
            }
        }
        let v = self.values();
        check_grid(pointer, &v).map_err(|e| match e {
            Error::InvalidParameter { reason, .. } => config(pointer, reason),
            other => other,
        })?;
        Ok(v)
    }
}

fn config(pointer: &str, message: impl Into<String>) -> Error {
    Error::Config {
        pointer: pointer.to_string(),
        message: message.into(),
    }
}

fn yes() -> bool {
    true
}

fn half_ns() -> f64 {
    0.5
}

fn upper() -> Mode {
    Mode::Upper
}

fn sixty_one() -> usize {
    61
}

fn one_twenty_one() -> usize {
    121
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitModel {
    Exponential,
    RiseFall,
    Photoionization,
}

/// Synthetic data drawn from a fit model with multiplicative Gaussian noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Synthetic {
    pub x: Grid,
    /// Model parameters by name.
    pub truth: BTreeMap<String, f64>,
    #[serde(default)]
    pub noise_rel: f64,
    /// Independent draws fitted one after another.
    #[serde(default = "one")]
    pub repeats: usize,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Task {
    /// Pulsed trajectory with emission summary.
    Pulse {
        #[serde(default)]
        t_end_ns: Option<f64>,
        #[serde(default = "half_ns")]
        sample_dt_ns: f64,
        #[serde(default = "yes")]
        calibrate: bool,
        /// Fit exponentials to both fluxes inside this window.
        #[serde(default)]
        lifetime_window_ns: Option<(f64, f64)>,
    },
    SteadySweep {
        delta_d: Grid,
    },
    KappaMap {
        kappa_u: Grid,
        delta_d: Grid,
    },
    Spectrum {
        mode: Mode,
        tau_ns: Grid,
        omega_mhz: Grid,
        /// Prepared state for a transient spectrum; the steady state when absent.
        #[serde(default)]
        initial: Option<BasisState>,
    },
    HomPoint {
        #[serde(default = "upper")]
        mode: Mode,
        #[serde(default = "sixty_one")]
        points: usize,
        #[serde(default)]
        span_ns: Option<f64>,
        #[serde(default = "yes")]
        check_convergence: bool,
        #[serde(default = "yes")]
        calibrate: bool,
    },
    HomMap {
        g_u: Grid,
        g_l: Grid,
        #[serde(default = "one_twenty_one")]
        points: usize,
        #[serde(default = "yes")]
        check_convergence: bool,
    },
    CrossCorrelation {
        delays_ns: Grid,
        #[serde(default = "sixty_one")]
        t1_points: usize,
        #[serde(default = "yes")]
        calibrate: bool,
        /// Fit the rise/fall model to the part of the curve inside this window.
        #[serde(default)]
        fit_window_ns: Option<(f64, f64)>,
    },
    PairStats {
        #[serde(default = "yes")]
        calibrate: bool,
    },
    DetuningSweepCommon {
        delta: Grid,
        #[serde(default)]
        t_end_ns: Option<f64>,
        #[serde(default = "half_ns")]
        sample_dt_ns: f64,
        #[serde(default = "yes")]
        calibrate: bool,
    },
    DetuningSweepOpposite {
        delta: Grid,
        #[serde(default)]
        t_end_ns: Option<f64>,
        #[serde(default = "half_ns")]
        sample_dt_ns: f64,
        #[serde(default = "yes")]
        calibrate: bool,
    },
    Fit {
        model: FitModel,
        /// CSV with a header row and two numeric columns, relative to the
        /// scenario file.
        #[serde(default)]
        csv: Option<PathBuf>,
        #[serde(default)]
        synthetic: Option<Synthetic>,
        #[serde(default)]
        window: Option<(f64, f64)>,
        #[serde(default)]
        constants: Option<PhotoionizationConstants>,
    },
}

impl Task {
    pub fn kind(&self) -> &'static str {
        match self {
            Task::Pulse { .. } => "pulse",
            Task::SteadySweep { .. } => "steady_sweep",
            Task::KappaMap { .. } => "kappa_map",
            Task::Spectrum { .. } => "spectrum",
            Task::HomPoint { .. } => "hom_point",
            Task::HomMap { .. } => "hom_map",
            Task::CrossCorrelation { .. } => "cross_correlation",
            Task::PairStats { .. } => "pair_stats",
            Task::DetuningSweepCommon { .. } => "detuning_sweep_common",
            Task::DetuningSweepOpposite { .. } => "detuning_sweep_opposite",
            Task::Fit { .. } => "fit",
        }
    }
}

/// Every task kind, in schema order.
pub const TASK_KINDS: [&str; 11] = [
    "pulse",
    "steady_sweep",
    "kappa_map",
    "spectrum",
    "hom_point",
    "hom_map",
    "cross_correlation",
    "pair_stats",
    "detuning_sweep_common",
    "detuning_sweep_opposite",
    "fit",
];

fn schema_version() -> u32 {
    SCHEMA_VERSION
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    pub name: String,
    #[serde(default)]
    pub description: String,
    /// Declared wall-time budget on a laptop-class machine.
    #[serde(default)]
    pub budget_s: Option<f64>,
    pub params: SystemParams,
    pub task: Task,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Seed for synthetic fit noise.
    #[serde(default)]
    pub seed: Option<u64>,
}

fn pointer_of(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        out.push('/');
        match seg {
            Segment::Seq { index } => out.push_str(&index.to_string()),
            Segment::Map { key } => out.push_str(&key.replace('~', "~0").replace('/', "~1")),
            Segment::Enum { variant } => out.push_str(variant),
            Segment::Unknown => out.push('?'),
        }
    }
    if out.is_empty() {
        out.push('/');
    }
    out
}

/// Parse and validate scenario JSON.
pub fn parse_scenario(bytes: &[u8]) -> Result<Scenario> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    let sc: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
        let pointer = pointer_of(e.path());
        config(&pointer, e.into_inner().to_string())
    })?;
    sc.validate()?;
    Ok(sc)
}

pub fn load_scenario(path: &Path) -> Result<(Scenario, Vec<u8>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok((parse_scenario(&bytes)?, bytes))
}

fn positive(pointer: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(config(pointer, format!("must be positive and finite, got {v}")))
    }
}

fn window_ok(pointer: &str, w: (f64, f64)) -> Result<()> {
    if w.0.is_finite() && w.1.is_finite() && w.1 > w.0 {
        Ok(())
    } else {
        Err(config(pointer, "window must be [start, stop] with stop > start"))
    }
}

impl Scenario {
    /// Schema-level and physical checks, reported with JSON pointers.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(config(
                "/schema_version",
                format!("unsupported version {} (expected {SCHEMA_VERSION})", self.schema_version),
            ));
        }
        if self.name.trim().is_empty() {
            return Err(config("/name", "must not be empty"));
        }
        if let Some(b) = self.budget_s {
            positive("/budget_s", b)?;
        }
        self.params.validate().map_err(|e| match e {
            Error::InvalidParameter { field, reason } => config(&format!("/params/{}", field.replace('.', "/")), reason),
            other => other,
        })?;
        let mode = self.params.drive.mode;
        let need = |want: DriveMode| -> Result<()> {
            if mode == want {
                Ok(())
            } else {
                let name = serde_json::to_value(want).unwrap();
                Err(config("/params/drive/mode", format!("task `{}` needs drive mode {name}", self.task.kind())))
            }
        };
        let uses_seed = matches!(&self.task, Task::Fit { synthetic: Some(s), .. } if s.noise_rel > 0.0);
        if self.seed.is_some() && !uses_seed {
            return Err(config("/seed", "only used by fit tasks with synthetic noise"));
        }
        match &self.task {
            Task::Pulse {
                t_end_ns,
                sample_dt_ns,
                lifetime_window_ns,
                ..
            } => {
                need(DriveMode::PulsedG0E)?;
                if let Some(t) = t_end_ns {
                    positive("/task/t_end_ns", *t)?;
                }
                positive("/task/sample_dt_ns", *sample_dt_ns)?;
                if let Some(w) = lifetime_window_ns {
                    window_ok("/task/lifetime_window_ns", *w)?;
                }
            }
            Task::SteadySweep { delta_d } => {
                need(DriveMode::CwGE)?;
                delta_d.checked("/task/delta_d")?;
            }
            Task::KappaMap { kappa_u, delta_d } => {
                need(DriveMode::CwGE)?;
                let k = kappa_u.checked("/task/kappa_u")?;
                if k[0] <= 0.0 {
                    return Err(config("/task/kappa_u", "cavity decay rates must be positive"));
                }
                delta_d.checked("/task/delta_d")?;
            }
            Task::Spectrum {
                tau_ns,
                omega_mhz,
                initial,
                ..
            } => {
                let tau = tau_ns.checked("/task/tau_ns")?;
                if tau[0] != 0.0 {
                    return Err(config("/task/tau_ns", "must start at 0"));
                }
                omega_mhz.checked("/task/omega_mhz")?;
                match initial {
                    Some(s) => {
                        let layout = self.params.layout()?;
                        if layout.encode(*s).is_none() {
                            return Err(config("/task/initial", "state lies outside the Fock cutoffs"));
                        }
                    }
                    None => need(DriveMode::CwGE)?,
                }
            }
            Task::HomPoint { points, span_ns, .. } => {
                need(DriveMode::PulsedG0E)?;
                if *points < 3 {
                    return Err(config("/task/points", "need at least 3 grid points"));
                }
                if let Some(s) = span_ns {
                    positive("/task/span_ns", *s)?;
                }
            }
            Task::HomMap { g_u, g_l, points, .. } => {
                need(DriveMode::PulsedG0E)?;
                g_u.checked("/task/g_u")?;
                g_l.checked("/task/g_l")?;
                if *points < 3 {
                    return Err(config("/task/points", "need at least 3 grid points"));
                }
            }
            Task::CrossCorrelation {
                delays_ns,
                t1_points,
                fit_window_ns,
                ..
            } => {
                need(DriveMode::PulsedG0E)?;
                delays_ns.checked("/task/delays_ns")?;
                if *t1_points < 3 {
                    return Err(config("/task/t1_points", "need at least 3 points"));
                }
                if let Some(w) = fit_window_ns {
                    window_ok("/task/fit_window_ns", *w)?;
                }
            }
            Task::PairStats { .. } => need(DriveMode::PulsedG0E)?,
            Task::DetuningSweepCommon {
                delta,
                t_end_ns,
                sample_dt_ns,
                ..
            }
            | Task::DetuningSweepOpposite {
                delta,
                t_end_ns,
                sample_dt_ns,
                ..
            } => {
                need(DriveMode::PulsedG0E)?;
                delta.checked("/task/delta")?;
                if let Some(t) = t_end_ns {
                    positive("/task/t_end_ns", *t)?;
                }
                positive("/task/sample_dt_ns", *sample_dt_ns)?;
            }
            Task::Fit {
                model,
                csv,
                synthetic,
                window,
                constants,
            } => {
                match (csv, synthetic) {
                    (Some(_), None) => {}
                    (None, Some(s)) => {
                        s.x.checked("/task/synthetic/x")?;
                        for name in model_parameters(*model) {
                            if !s.truth.contains_key(*name) {
                                return Err(config("/task/synthetic/truth", format!("missing `{name}`")));
                            }
                        }
                        if let Some(extra) = s.truth.keys().find(|k| !model_parameters(*model).contains(&k.as_str())) {
                            return Err(config(&format!("/task/synthetic/truth/{extra}"), "not a parameter of this model"));
                        }
                        if !(s.noise_rel >= 0.0 && s.noise_rel.is_finite()) {
                            return Err(config("/task/synthetic/noise_rel", "must be ≥ 0"));
                        }
                        if s.repeats == 0 {
                            return Err(config("/task/synthetic/repeats", "must be ≥ 1"));
                        }
                        if s.noise_rel > 0.0 && self.seed.is_none() {
                            return Err(config("/seed", "synthetic noise needs a seed"));
                        }
                    }
                    _ => return Err(config("/task", "give exactly one of `csv` and `synthetic`")),
                }
                if let Some(w) = window {
                    window_ok("/task/window", *w)?;
                }
                if constants.is_some() && *model != FitModel::Photoionization {
                    return Err(config("/task/constants", "only the photoionization model takes constants"));
                }
            }
        }
        Ok(())
    }
}

fn model_parameters(model: FitModel) -> &'static [&'static str] {
    match model {
        FitModel::Exponential => &["amplitude", "tau"],
        FitModel::RiseFall => &["amplitude", "center", "tau_rise", "tau_fall"],
        FitModel::Photoionization => &["eta", "sigma_mb", "tau0_s"],
    }
}

/// What one run produced.
#[derive(Clone, Debug)]
pub struct RunReport {
    pub outputs: Vec<PathBuf>,
    pub metadata: Value,
}

struct Outputs<'a> {
    dir: &'a Path,
    files: Vec<PathBuf>,
}

impl Outputs<'_> {
    fn write(&mut self, name: &str, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
        let path = self.dir.join(name);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        f(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(&path, e))?;
        self.files.push(path);
        Ok(())
    }

    fn json(&mut self, name: &str, v: &Value) -> Result<()> {
        let text = serde_json::to_string_pretty(v)?;
        self.write(name, |w| {
            w.write_all(text.as_bytes())?;
            w.write_all(b"\n")
        })
    }

    fn sweep(&mut self, s: &SweepResult) -> Result<()> {
        self.write("sweep.csv", |w| s.write_csv(w))?;
        self.json("sweep.json", &s.sidecar())
    }
}

fn maybe_calibrate(params: &SystemParams, calibrate: bool) -> Result<(SystemParams, Option<dynamics::PulseCalibration>)> {
    if calibrate {
        let (p, c) = calibrated(params)?;
        Ok((p, Some(c)))
    } else {
        Ok((params.clone(), None))
    }
}

fn read_two_columns(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        let parse = |s: Option<&&str>| s.and_then(|v| v.parse::<f64>().ok());
        match (parse(cells.first()), parse(cells.get(1))) {
            (Some(a), Some(b)) => {
                x.push(a);
                y.push(b);
            }
            _ => {
                return Err(Error::FitInput(format!("{}:{}: expected two numeric columns", path.display(), n + 1)));
            }
        }
    }
    Ok((x, y))
}

fn synthetic_values(model: FitModel, truth: &BTreeMap<String, f64>, x: &[f64], k: &PhotoionizationConstants) -> Vec<f64> {
    let t = |n: &str| truth[n];
    x.iter()
        .map(|&v| match model {
            FitModel::Exponential => t("amplitude") * (-v / t("tau")).exp(),
            FitModel::RiseFall => fitkit::rise_fall_value(t("amplitude"), t("center"), t("tau_rise"), t("tau_fall"), v),
            FitModel::Photoionization => k.trap_lifetime(t("eta"), t("sigma_mb"), t("tau0_s"), v),
        })
        .collect()
}

fn run_fit(model: FitModel, x: &[f64], y: &[f64], window: Option<(f64, f64)>, k: &PhotoionizationConstants) -> Result<FitResult> {
    match model {
        FitModel::Exponential => fitkit::fit_exponential(x, y, window.unwrap_or((f64::NEG_INFINITY, f64::INFINITY))),
        FitModel::RiseFall => {
            let (xs, ys): (Vec<f64>, Vec<f64>) = x
                .iter()
                .zip(y)
                .filter(|(t, _)| window.is_none_or(|w| **t >= w.0 && **t <= w.1))
                .map(|(a, b)| (*a, *b))
                .unzip();
            fitkit::fit_rise_fall(&xs, &ys)
        }
        FitModel::Photoionization => fitkit::fit_photoionization(x, y, k),
    }
}

fn summary_stats(values: &[f64]) -> Value {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    json!({"mean": mean, "sd": sd, "count": values.len()})
}

/// Execute a validated scenario, writing artifacts into `out_dir`.
/// `base_dir` resolves relative data paths.
pub fn run_scenario(sc: &Scenario, out_dir: &Path, base_dir: &Path) -> Result<RunReport> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut out = Outputs {
        dir: out_dir,
        files: Vec::new(),
    };
    let params = &sc.params;
    let metadata = match &sc.task {
        Task::Pulse {
            t_end_ns,
            sample_dt_ns,
            calibrate,
            lifetime_window_ns,
        } => {
            let (p, cal) = maybe_calibrate(params, *calibrate)?;
            let t_end = t_end_ns.unwrap_or_else(|| default_end_time_ns(&p));
            let traj = dynamics::pulsed_trajectory(&p, t_end, *sample_dt_ns)?;
            let em = emission_probabilities(&traj);
            let clamp = |v: f64| v.clamp(0.0, 1.0);
            let mut meta = json!({
                "calibration": cal,
                "peak_omega_mhz": p.drive.omega_d,
                "emission": em,
                "eta_u": fiber_efficiency(clamp(em.p_u), Mode::Upper, &p.collection)?,
                "eta_l": fiber_efficiency(clamp(em.p_l), Mode::Lower, &p.collection)?,
                "trace_error": traj.trace_error,
                "min_eigenvalue": traj.min_eigenvalue,
                "t_end_ns": t_end,
            });
            if let Some(w) = lifetime_window_ns {
                let fu = fitkit::fit_exponential(&traj.times_ns, traj.series("flux_u").unwrap(), *w)?;
                let fl = fitkit::fit_exponential(&traj.times_ns, traj.series("flux_l").unwrap(), *w)?;
                meta["lifetime_fit_u"] = fu.to_json();
                meta["lifetime_fit_l"] = fl.to_json();
            }
            out.write("trajectory.csv", |w| traj.write_csv(w))?;
            out.json("summary.json", &meta)?;
            meta
        }
        Task::SteadySweep { delta_d } => {
            let s = steady::sweep_drive_detuning(params, &delta_d.values())?;
            out.sweep(&s)?;
            json!({"failures": s.failures()})
        }
        Task::KappaMap { kappa_u, delta_d } => {
            let s = steady::kappa_detuning_map(params, &kappa_u.values(), &delta_d.values())?;
            out.sweep(&s)?;
            json!({"failures": s.failures()})
        }
        Task::Spectrum {
            mode,
            tau_ns,
            omega_mhz,
            initial,
        } => {
            let spec = match initial {
                Some(state) => {
                    let rho0 = DensityMatrix::basis(params.layout()?, *state)?;
                    corr::transient_spectrum(params, *mode, &rho0, &tau_ns.values(), &omega_mhz.values())?
                }
                None => corr::steady_spectrum(params, *mode, &tau_ns.values(), &omega_mhz.values())?,
            };
            out.write("spectrum.csv", |w| spec.write_csv(w))?;
            let meta = json!({
                "fwhm_mhz": spec.fwhm(),
                "window_start_ns": spec.window_start_ns,
                "window_decay_ns": spec.window_decay_ns,
                "source": if initial.is_some() { "prepared state" } else { "steady state" },
            });
            out.json("spectrum.json", &meta)?;
            meta
        }
        Task::HomPoint {
            mode,
            points,
            span_ns,
            check_convergence,
            calibrate,
        } => {
            let (p, cal) = maybe_calibrate(params, *calibrate)?;
            let opts = HomOptions {
                points: *points,
                span_ns: *span_ns,
                check_convergence: *check_convergence,
            };
            let hom = corr::hom_point(&p, *mode, &opts)?;
            let meta = json!({"hom": hom, "calibration": cal, "options": opts});
            out.json("hom.json", &meta)?;
            meta
        }
        Task::HomMap {
            g_u,
            g_l,
            points,
            check_convergence,
        } => {
            let opts = HomOptions {
                points: *points,
                span_ns: None,
                check_convergence: *check_convergence,
            };
            let s = corr::hom_map(params, &g_u.values(), &g_l.values(), &opts)?;
            out.sweep(&s)?;
            json!({"failures": s.failures()})
        }
        Task::CrossCorrelation {
            delays_ns,
            t1_points,
            calibrate,
            fit_window_ns,
        } => {
            let (p, cal) = maybe_calibrate(params, *calibrate)?;
            let opts = CrossOptions {
                t1_points: *t1_points,
                span_ns: None,
            };
            let c = corr::cross_correlation(&p, &delays_ns.values(), &opts)?;
            out.write("cross_correlation.csv", |w| c.write_csv(w))?;
            let fit = run_fit(FitModel::RiseFall, &c.delays_ns, &c.raw, *fit_window_ns, &PhotoionizationConstants::default())?;
            let meta = json!({
                "calibration": cal,
                "integral": c.integral(),
                "span_ns": c.span_ns,
                "t1_nodes": c.t1_ns.len(),
                "rise_fall_fit": fit.to_json(),
            });
            out.json("cross_correlation.json", &meta)?;
            meta
        }
        Task::PairStats { calibrate } => {
            let (p, cal) = maybe_calibrate(params, *calibrate)?;
            let ps = corr::pair_statistics(&p, &CrossOptions::default())?;
            let meta = json!({
                "pairs": ps,
                "calibration": cal,
                "correlated": ps.p_pair_raw >= ps.p_u_raw * ps.p_l_raw,
            });
            out.json("pair_stats.json", &meta)?;
            meta
        }
        Task::DetuningSweepCommon {
            delta,
            t_end_ns,
            sample_dt_ns,
            calibrate,
        }
        | Task::DetuningSweepOpposite {
            delta,
            t_end_ns,
            sample_dt_ns,
            calibrate,
        } => {
            let (p, cal) = maybe_calibrate(params, *calibrate)?;
            let window = PulsedWindow {
                t_end_ns: t_end_ns.unwrap_or_else(|| default_end_time_ns(&p)),
                sample_dt_ns: *sample_dt_ns,
            };
            let s = if matches!(sc.task, Task::DetuningSweepCommon { .. }) {
                steady::sweep_common_drive_cavity_detuning(&p, &delta.values(), &window)?
            } else {
                steady::sweep_opposite_cavity_detunings(&p, &delta.values(), &window)?
            };
            out.sweep(&s)?;
            json!({"failures": s.failures(), "calibration": cal})
        }
        Task::Fit {
            model,
            csv,
            synthetic,
            window,
            constants,
        } => {
            let k = constants.unwrap_or_default();
            let fits: Vec<FitResult> = match (csv, synthetic) {
                (Some(path), _) => {
                    let (x, y) = read_two_columns(&base_dir.join(path))?;
                    vec![run_fit(*model, &x, &y, *window, &k)?]
                }
                (None, Some(s)) => {
                    let x = s.x.values();
                    let clean = synthetic_values(*model, &s.truth, &x, &k);
                    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed.unwrap_or(0));
                    let noise = Normal::new(0.0, s.noise_rel).map_err(|e| config("/task/synthetic/noise_rel", e.to_string()))?;
                    (0..s.repeats)
                        .map(|_| {
                            let y: Vec<f64> = clean.iter().map(|v| v * (1.0 + noise.sample(&mut rng))).collect();
                            run_fit(*model, &x, &y, *window, &k)
                        })
                        .collect::<Result<_>>()?
                }
                (None, None) => unreachable!("validated"),
            };
            let mut summary = serde_json::Map::new();
            for par in &fits[0].parameters {
                let vals: Vec<f64> = fits.iter().filter_map(|f| f.value(&par.name)).collect();
                summary.insert(par.name.clone(), summary_stats(&vals));
            }
            let meta = json!({
                "model": model,
                "fits": fits.iter().map(FitResult::to_json).collect::<Vec<_>>(),
                "summary": summary,
            });
            out.json("fit.json", &meta)?;
            meta
        }
    };
    Ok(RunReport {
        outputs: out.files,
        metadata,
    })
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Manifest of one run.
pub fn manifest(sc: &Scenario, input: &[u8], report: &RunReport, wall_time_s: f64, threads: Option<usize>) -> Result<Value> {
    let mut outputs = Vec::new();
    for path in &report.outputs {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        outputs.push(json!({
            "file": path.file_name().map(|n| n.to_string_lossy().into_owned()),
            "sha256": sha256_hex(&bytes),
            "bytes": bytes.len(),
        }));
    }
    Ok(json!({
        "toolkit": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "scenario": sc.name,
        "task": sc.task.kind(),
        "input_digest": sha256_hex(input),
        "wall_time_s": wall_time_s,
        "budget_s": sc.budget_s,
        "threads": threads,
        "outputs": outputs,
        "metadata": report.metadata,
    }))
}

/// Scenario files shipped with the toolkit.
pub const CATALOG: [(&str, &str); 17] = [
    ("emission_profiles", include_str!("../scenarios/emission_profiles.json")),
    ("cross_correlation", include_str!("../scenarios/cross_correlation.json")),
    ("pair_statistics", include_str!("../scenarios/pair_statistics.json")),
    ("hom_experimental", include_str!("../scenarios/hom_experimental.json")),
    ("hom_strong_upper", include_str!("../scenarios/hom_strong_upper.json")),
    ("hom_map", include_str!("../scenarios/hom_map.json")),
    ("stirap", include_str!("../scenarios/stirap.json")),
    ("steady_detuning", include_str!("../scenarios/steady_detuning.json")),
    ("steady_detuning_lower_off", include_str!("../scenarios/steady_detuning_lower_off.json")),
    ("steady_detuning_upper_off", include_str!("../scenarios/steady_detuning_upper_off.json")),
    ("spectrum_lower", include_str!("../scenarios/spectrum_lower.json")),
    ("spectrum_lower_upper_off", include_str!("../scenarios/spectrum_lower_upper_off.json")),
    ("spectrum_empty_cavity", include_str!("../scenarios/spectrum_empty_cavity.json")),
    ("kappa_map", include_str!("../scenarios/kappa_map.json")),
    ("photoionization_synthetic", include_str!("../scenarios/photoionization_synthetic.json")),
    ("detuning_common", include_str!("../scenarios/detuning_common.json")),
    ("detuning_opposite", include_str!("../scenarios/detuning_opposite.json")),
];

/// Shipped scenario by catalog name.
pub fn shipped(name: &str) -> Option<Result<Scenario>> {
    CATALOG
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| parse_scenario(text.as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_shipped_scenario_validates() {
        for (name, text) in CATALOG {
            let sc = parse_scenario(text.as_bytes()).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(sc.name, name);
            assert!(sc.budget_s.is_some(), "{name} declares no budget");
            assert!(!sc.description.is_empty());
        }
    }

    #[test]
    fn negative_kappa_names_field() {
        let text = CATALOG[6].1.replace("\"kappa_u\": 1e-10", "\"kappa_u\": -1.0");
        let err = parse_scenario(text.as_bytes()).unwrap_err();
        assert!(matches!(&err, Error::Config { pointer, .. } if pointer == "/params/kappa_u"), "{err}");
    }

    #[test]
    fn unknown_fields_report_pointer() {
        let text = CATALOG[6].1.replace("\"gamma_u\"", "\"gama_u\"");
        let err = parse_scenario(text.as_bytes()).unwrap_err();
        assert!(matches!(&err, Error::Config { pointer, .. } if pointer.starts_with("/params")), "{err}");
    }

    #[test]
    fn grids_expand() {
        let g: Grid = serde_json::from_str(r#"{"start": 1, "stop": 100, "points": 3, "spacing": "log"}"#).unwrap();
        let v = g.values();
        assert!((v[1] - 10.0).abs() < 1e-12);
        let g: Grid = serde_json::from_str("[0, 2, 1]").unwrap();
        assert!(g.checked("/x").is_err());
    }

    #[test]
    fn seed_only_with_noise() {
        let mut sc = shipped("stirap").unwrap().unwrap();
        sc.seed = Some(3);
        assert!(matches!(sc.validate(), Err(Error::Config { pointer, .. }) if pointer == "/seed"));
    }

    #[test]
    fn schema_lists_every_task_kind() {
        let schema: Value = serde_json::from_str(include_str!("../scenarios/schema.json")).unwrap();
        let kinds: Vec<String> = schema["$defs"]["task"]["oneOf"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v["properties"]["kind"]["const"].as_str().unwrap().to_string())
            .collect();
        assert_eq!(kinds, TASK_KINDS.map(String::from).to_vec());
    }
}
