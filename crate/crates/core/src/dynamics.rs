//! Time-dependent master-equation integration, pulse calibration, photon
//! fluxes and emission-efficiency accounting.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::liouville::Generator;
use crate::model::{angular, free_space_lifetime_ns, CollectionParams, DriveMode, SystemParams};
use crate::ode::{integrate, Tolerances};
use crate::qspace::{BasisState, DensityMatrix, Level, Mode, Operator, C64, ZERO};
use crate::util::{sci, trapezoid, write_row};

/// Residual photon number above which an emission integral counts as truncated.
pub const RESIDUAL_THRESHOLD: f64 = 1e-4;

pub const SERIES: [&str; 8] = ["P_g0", "P_g", "P_i", "P_e", "n_u", "n_l", "flux_u", "flux_l"];

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times_ns: Vec<f64>,
    pub series: BTreeMap<String, Vec<f64>>,
    /// Max `|Tr ρ − 1|` over the samples.
    pub trace_error: f64,
    /// Smallest eigenvalue of the Hermitian part of any sampled `ρ`.
    pub min_eigenvalue: f64,
    pub final_state: DensityMatrix,
    pub kappa_u: f64,
    pub kappa_l: f64,
}

impl Trajectory {
    pub fn series(&self, name: &str) -> Option<&[f64]> {
        self.series.get(name).map(Vec::as_slice)
    }

    fn column(&self, name: &str) -> &[f64] {
        self.series(name).expect("trajectory series are fixed at construction")
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let header = [
            "time_ns",
            "P_g0",
            "P_g",
            "P_i",
            "P_e",
            "n_u",
            "n_l",
            "flux_u_per_ns",
            "flux_l_per_ns",
        ];
        write_row(&mut w, &header.map(String::from))?;
        let cols: Vec<&[f64]> = SERIES.iter().map(|s| self.column(s)).collect();
        for (k, t) in self.times_ns.iter().enumerate() {
            let mut row = vec![sci(*t)];
            row.extend(cols.iter().map(|c| sci(c[k])));
            write_row(&mut w, &row)?;
        }
        Ok(())
    }
}

fn support(rho: &DensityMatrix) -> Vec<usize> {
    let m = rho.matrix();
    (0..m.nrows())
        .filter(|&r| (0..m.ncols()).any(|c| m[(r, c)] != ZERO || m[(c, r)] != ZERO))
        .collect()
}

const MAX_SAMPLES: usize = 10_000_000;

pub(crate) fn sample_times(t_end_ns: f64, dt_ns: f64) -> Result<Vec<f64>> {
    if !(dt_ns > 0.0) || !dt_ns.is_finite() {
        return Err(Error::param("sample_dt_ns", "must be > 0"));
    }
    if !(t_end_ns >= 0.0) || !t_end_ns.is_finite() {
        return Err(Error::param("t_end_ns", "must be finite and ≥ 0"));
    }
    let n = (t_end_ns / dt_ns - 1e-9).ceil().max(0.0);
    if n > MAX_SAMPLES as f64 {
        return Err(Error::param(
            "t_end_ns",
            format!("{n:.3e} samples exceed the limit of {MAX_SAMPLES}; raise sample_dt_ns or shorten the run"),
        ));
    }
    let n = n as usize;
    let mut out: Vec<f64> = (0..n).map(|k| k as f64 * dt_ns).collect();
    out.push(t_end_ns);
    Ok(out)
}

/// Observables evaluated on every trajectory sample, in [`SERIES`] order of
/// the first six entries.
pub(crate) struct Probes {
    ops: Vec<DMatrix<C64>>,
}

impl Probes {
    pub(crate) fn new(gen: &Generator) -> Self {
        let layout = gen.layout();
        let full = [
            Operator::projector(layout, Level::G0),
            Operator::projector(layout, Level::G),
            Operator::projector(layout, Level::I),
            Operator::projector(layout, Level::E),
            Operator::number(layout, Mode::Upper),
            Operator::number(layout, Mode::Lower),
        ];
        Probes {
            ops: full.iter().map(|o| gen.restrict(o.matrix())).collect(),
        }
    }

    pub(crate) fn eval(&self, gen: &Generator, x: &[C64]) -> [f64; 6] {
        let mut out = [0.0; 6];
        for (o, op) in out.iter_mut().zip(&self.ops) {
            *o = gen.expect_reduced(op, x).re;
        }
        out
    }
}

fn min_eigenvalue(gen: &Generator, x: &[C64]) -> f64 {
    let m = gen.unvectorize_reduced(x);
    let herm = (&m + m.adjoint()) * C64::new(0.5, 0.0);
    herm.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
}

/// Integrate the master equation from `rho0` at t = 0 to `t_end_ns`, sampling
/// every `sample_dt_ns` (the last sample is exactly `t_end_ns`).
pub fn integrate_master_equation(
    params: &SystemParams,
    rho0: &DensityMatrix,
    t_end_ns: f64,
    sample_dt_ns: f64,
) -> Result<Trajectory> {
    params.validate()?;
    let layout = params.layout()?;
    if rho0.layout() != layout {
        return Err(Error::LayoutMismatch {
            left: layout.to_string(),
            right: rho0.layout().to_string(),
        });
    }
    let times_ns = sample_times(t_end_ns, sample_dt_ns)?;
    let gen = Generator::reachable(params, &support(rho0), &[])?;
    let x0 = gen.vectorize(rho0)?;
    let probes = Probes::new(&gen);
    let outputs: Vec<f64> = times_ns.iter().map(|t| t * 1e-3).collect();

    let mut cols: Vec<Vec<f64>> = (0..6).map(|_| Vec::with_capacity(times_ns.len())).collect();
    let mut trace_error = 0.0f64;
    let mut min_eig = f64::INFINITY;
    let (x_end, _) = integrate(&gen, 0.0, x0, &outputs, &Tolerances::default(), |_, _, x| {
        for (c, v) in cols.iter_mut().zip(probes.eval(&gen, x)) {
            c.push(v);
        }
        trace_error = trace_error.max((gen.trace(x) - C64::new(1.0, 0.0)).norm());
        min_eig = min_eig.min(min_eigenvalue(&gen, x));
        Ok(())
    })?;

    let flux = |n: &[f64], kappa: f64| n.iter().map(|v| 2.0 * angular(kappa) * v * 1e-3).collect::<Vec<_>>();
    let flux_u = flux(&cols[4], params.kappa_u);
    let flux_l = flux(&cols[5], params.kappa_l);
    let mut series = BTreeMap::new();
    for (name, col) in SERIES.iter().zip(cols.into_iter().chain([flux_u, flux_l])) {
        series.insert(name.to_string(), col);
    }
    Ok(Trajectory {
        times_ns,
        series,
        trace_error,
        min_eigenvalue: min_eig,
        final_state: gen.expand(&x_end),
        kappa_u: params.kappa_u,
        kappa_l: params.kappa_l,
    })
}

/// Output-coupled photon flux `2·(2πκ)·n(t)` in photons/ns.
pub fn photon_flux(traj: &Trajectory, mode: Mode) -> Vec<f64> {
    match mode {
        Mode::Upper => traj.column("flux_u").to_vec(),
        Mode::Lower => traj.column("flux_l").to_vec(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EmissionProbabilities {
    pub p_u: f64,
    pub p_l: f64,
    pub residual_n_u: f64,
    pub residual_n_l: f64,
    /// Residual photon number at the end exceeds [`RESIDUAL_THRESHOLD`].
    pub truncated: bool,
}

/// Time-integrated flux through each cavity channel.
pub fn emission_probabilities(traj: &Trajectory) -> EmissionProbabilities {
    let p_u = trapezoid(&traj.times_ns, traj.column("flux_u"));
    let p_l = trapezoid(&traj.times_ns, traj.column("flux_l"));
    let residual_n_u = *traj.column("n_u").last().unwrap_or(&0.0);
    let residual_n_l = *traj.column("n_l").last().unwrap_or(&0.0);
    EmissionProbabilities {
        p_u,
        p_l,
        residual_n_u,
        residual_n_l,
        truncated: residual_n_u > RESIDUAL_THRESHOLD || residual_n_l > RESIDUAL_THRESHOLD,
    }
}

/// In-fiber efficiency `P · η_oc · η_mm`.
pub fn fiber_efficiency(p: f64, mode: Mode, collection: &CollectionParams) -> Result<f64> {
    if !(0.0..=1.0 + 1e-9).contains(&p) {
        return Err(Error::param("probability", format!("must lie in [0, 1], got {p}")));
    }
    Ok(p * collection.factor(mode))
}

/// Pulse end plus five times the slowest bare decay time of the scenario.
pub fn default_end_time_ns(params: &SystemParams) -> f64 {
    let start = params.drive.pulse.map_or(0.0, |p| p.end_ns());
    let slowest = [params.kappa_u, params.kappa_l, params.gamma_u, params.gamma_l]
        .into_iter()
        .filter(|&r| r > 0.0)
        .map(free_space_lifetime_ns)
        .fold(0.0, f64::max);
    start + 5.0 * slowest
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PulseCalibration {
    /// Calibrated peak Rabi frequency (MHz).
    pub peak_omega: f64,
    /// `1 − P_g0` once the pulse is over.
    pub excitation: f64,
    /// `⟨σ_ee⟩` once the pulse is over.
    pub excited_population: f64,
    /// Largest `⟨σ_ee⟩` reached during the pulse window.
    pub peak_excited_population: f64,
    /// `∫ 2π Ω_D(t) dt` in rad.
    pub pulse_area: f64,
    pub iterations: usize,
}

struct PulseProbe {
    excitation: f64,
    final_pe: f64,
    peak_pe: f64,
}

fn probe_pulse(params: &SystemParams, omega: f64) -> Result<PulseProbe> {
    let mut p = params.clone();
    p.drive.omega_d = omega;
    let pulse = p.drive.pulse.expect("checked by caller");
    let layout = p.layout()?;
    let seed = layout.index_of(Level::G0, 0, 0);
    let gen = Generator::reachable(&p, &[seed], &[])?;
    let x0 = gen.vectorize(&DensityMatrix::basis(layout, BasisState::new(Level::G0, 0, 0))?)?;
    let end_us = pulse.end_ns() * 1e-3;
    let outputs: Vec<f64> = (1..=120).map(|k| end_us * k as f64 / 120.0).collect();
    let probes = Probes::new(&gen);
    let mut peak_pe = 0.0f64;
    let mut last = [0.0; 6];
    integrate(&gen, 0.0, x0, &outputs, &Tolerances::default(), |_, _, x| {
        last = probes.eval(&gen, x);
        peak_pe = peak_pe.max(last[3]);
        Ok(())
    })?;
    Ok(PulseProbe {
        excitation: 1.0 - last[0],
        final_pe: last[3],
        peak_pe,
    })
}

const SCAN_STEP: f64 = 0.02;
const SCAN_LIMIT: f64 = 100.0;
const MAX_BISECTIONS: usize = 60;

/// Find the peak Rabi frequency that empties `g0` by the end of the pulse.
///
/// The amplitude is scanned upward in units of the two-level π-pulse value
/// and the first local maximum of `1 − P_g0` is refined by bisection on the
/// sign of the finite-difference slope.
pub fn calibrate_pi_pulse(params: &SystemParams) -> Result<PulseCalibration> {
    params.validate()?;
    let pulse = match (params.drive.mode, params.drive.pulse) {
        (DriveMode::PulsedG0E, Some(p)) => p,
        _ => return Err(Error::param("drive.mode", "calibration needs the pulsed g0–e drive")),
    };
    // 2π Ω ∫env dt = π/2 swaps g0 and e for the σ + σ† coupling
    let nominal = 1.0 / (4.0 * pulse.area_ns() * 1e-3);
    let objective = |r: f64| probe_pulse(params, r * nominal).map(|p| p.excitation);

    let mut prev = objective(SCAN_STEP)?;
    let mut cur = objective(2.0 * SCAN_STEP)?;
    let mut r = 2.0 * SCAN_STEP;
    let bracket = loop {
        if r > SCAN_LIMIT {
            return Err(Error::NoConvergence {
                what: "pi-pulse amplitude scan".into(),
                iterations: (SCAN_LIMIT / SCAN_STEP) as usize,
            });
        }
        let next = objective(r + SCAN_STEP)?;
        if cur > prev && cur >= next {
            break (r - SCAN_STEP, r + SCAN_STEP);
        }
        prev = cur;
        cur = next;
        r += SCAN_STEP;
    };

    let (mut lo, mut hi) = bracket;
    let mut iterations = 0;
    while hi - lo > 1e-7 * hi {
        if iterations == MAX_BISECTIONS {
            return Err(Error::NoConvergence {
                what: "pi-pulse bisection".into(),
                iterations,
            });
        }
        iterations += 1;
        let mid = 0.5 * (lo + hi);
        let eps = 0.05 * (hi - lo);
        if objective(mid + eps)? > objective(mid - eps)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let peak_omega = 0.5 * (lo + hi) * nominal;
    let probe = probe_pulse(params, peak_omega)?;
    Ok(PulseCalibration {
        peak_omega,
        excitation: probe.excitation,
        excited_population: probe.final_pe,
        peak_excited_population: probe.peak_pe,
        pulse_area: angular(peak_omega) * pulse.area_ns() * 1e-3,
        iterations,
    })
}

/// Copy of `params` with the drive amplitude set by [`calibrate_pi_pulse`].
pub fn calibrated(params: &SystemParams) -> Result<(SystemParams, PulseCalibration)> {
    let cal = calibrate_pi_pulse(params)?;
    let mut p = params.clone();
    p.drive.omega_d = cal.peak_omega;
    Ok((p, cal))
}

/// Trajectory of a pulsed scenario from `|g0,0,0⟩`.
pub fn pulsed_trajectory(params: &SystemParams, t_end_ns: f64, sample_dt_ns: f64) -> Result<Trajectory> {
    let rho0 = DensityMatrix::basis(params.layout()?, BasisState::new(Level::G0, 0, 0))?;
    integrate_master_equation(params, &rho0, t_end_ns, sample_dt_ns)
}
