//! Two-time correlation functions via the quantum regression theorem, and
//! what is built on them: spectra, HOM visibility, the two-cavity
//! cross-correlation and pair statistics.

use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::{
    calibrate_pi_pulse, default_end_time_ns, emission_probabilities, fiber_efficiency, pulsed_trajectory,
    RESIDUAL_THRESHOLD,
};
use crate::error::{Error, Result};
use crate::liouville::{Csr, Generator};
use crate::model::{angular, DriveMode, SystemParams};
use crate::ode::{integrate, Rhs, Tolerances};
use crate::qspace::{BasisState, DensityMatrix, Level, Mode, Operator, C64, ZERO};
use crate::steady::{steady_state, SweepResult};
use crate::util::{check_grid, linspace, sci, simpson_weights, trapezoid, trapezoid_weights, write_row};

/// Starting point of a regression calculation.
#[derive(Clone, Copy, Debug)]
pub enum Initial<'a> {
    /// Evolve this state from t = 0.
    State(&'a DensityMatrix),
    /// Use the steady state for every `t1`.
    Steady,
}

/// `⟨A(t1) B(t1+τ) C(t1)⟩` on a `t1 × τ` table.
#[derive(Clone, Debug)]
pub struct CorrelationTable {
    pub t1_ns: Vec<f64>,
    pub tau_ns: Vec<f64>,
    pub values: DMatrix<C64>,
}

struct Regression {
    gen: Generator,
    a: DMatrix<C64>,
    b: DMatrix<C64>,
    c: DMatrix<C64>,
}

impl Regression {
    fn new(params: &SystemParams, seeds: &[usize], a: &Operator, b: &Operator, c: &Operator) -> Result<Self> {
        let gen = Generator::reachable(params, seeds, &[a, b, c])?;
        Ok(Regression {
            a: gen.restrict(a.matrix()),
            b: gen.restrict(b.matrix()),
            c: gen.restrict(c.matrix()),
            gen,
        })
    }

    /// `X = C ρ A` evolved from `t1_us` and traced against `B` at each
    /// absolute time of `samples_us`.
    fn run(&self, x: &[C64], t1_us: f64, samples_us: &[f64]) -> Result<Vec<C64>> {
        let rho = self.gen.unvectorize_reduced(x);
        let start = self.gen.vectorize_reduced(&(&self.c * rho * &self.a));
        let mut out = Vec::with_capacity(samples_us.len());
        integrate(&self.gen, t1_us, start, samples_us, &Tolerances::default(), |_, _, y| {
            out.push(self.gen.expect_reduced(&self.b, y));
            Ok(())
        })?;
        Ok(out)
    }
}

fn check_layouts(params: &SystemParams, ops: &[&Operator]) -> Result<()> {
    let layout = params.layout()?;
    for op in ops {
        if op.layout() != layout {
            return Err(Error::LayoutMismatch {
                left: layout.to_string(),
                right: op.layout().to_string(),
            });
        }
    }
    Ok(())
}

fn support(rho: &DensityMatrix) -> Vec<usize> {
    let m = rho.matrix();
    (0..m.nrows())
        .filter(|&r| (0..m.ncols()).any(|c| m[(r, c)] != ZERO || m[(c, r)] != ZERO))
        .collect()
}

/// Vectorized states at each `t1` (ascending, ns).
fn states_at(gen: &Generator, x0: Vec<C64>, t1_ns: &[f64]) -> Result<Vec<Vec<C64>>> {
    let outputs: Vec<f64> = t1_ns.iter().map(|t| t * 1e-3).collect();
    let mut out = Vec::with_capacity(t1_ns.len());
    integrate(gen, 0.0, x0, &outputs, &Tolerances::default(), |_, _, x| {
        out.push(x.to_vec());
        Ok(())
    })?;
    Ok(out)
}

fn prepare(params: &SystemParams, initial: Initial<'_>, a: &Operator, b: &Operator, c: &Operator, t1_ns: &[f64]) -> Result<(Regression, Vec<Vec<C64>>)> {
    params.validate()?;
    check_layouts(params, &[a, b, c])?;
    let layout = params.layout()?;
    match initial {
        Initial::State(rho0) => {
            let reg = Regression::new(params, &support(rho0), a, b, c)?;
            let x0 = reg.gen.vectorize(rho0)?;
            let xs = states_at(&reg.gen, x0, t1_ns)?;
            Ok((reg, xs))
        }
        Initial::Steady => {
            let ss = steady_state(params)?;
            let reg = Regression::new(params, &[layout.index_of(Level::G, 0, 0)], a, b, c)?;
            let x = reg.gen.vectorize(&ss.rho)?;
            Ok((reg, vec![x; t1_ns.len()]))
        }
    }
}

/// `⟨A(t1) B(t1+τ) C(t1)⟩ = Tr[B · U(t1+τ, t1)(C ρ(t1) A)]` for every pair of
/// `t1_ns` and `tau_ns` (both ascending, τ ≥ 0).
pub fn regression_correlation(
    params: &SystemParams,
    initial: Initial<'_>,
    a: &Operator,
    b: &Operator,
    c: &Operator,
    t1_ns: &[f64],
    tau_ns: &[f64],
) -> Result<CorrelationTable> {
    check_grid("t1_ns", t1_ns)?;
    check_grid("tau_ns", tau_ns)?;
    if tau_ns[0] < 0.0 || t1_ns[0] < 0.0 {
        return Err(Error::param("tau_ns", "times must be ≥ 0"));
    }
    let (reg, xs) = prepare(params, initial, a, b, c, t1_ns)?;
    let rows: Vec<Vec<C64>> = t1_ns
        .par_iter()
        .zip(xs.par_iter())
        .map(|(&t1, x)| {
            let samples: Vec<f64> = tau_ns.iter().map(|tau| (t1 + tau) * 1e-3).collect();
            reg.run(x, t1 * 1e-3, &samples)
        })
        .collect::<Result<_>>()?;
    let values = DMatrix::from_fn(t1_ns.len(), tau_ns.len(), |i, j| rows[i][j]);
    Ok(CorrelationTable {
        t1_ns: t1_ns.to_vec(),
        tau_ns: tau_ns.to_vec(),
        values,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum CorrelationKind {
    #[serde(rename = "G1_u")]
    G1U,
    #[serde(rename = "G1_l")]
    G1L,
    #[serde(rename = "G2_auto_u")]
    G2AutoU,
    #[serde(rename = "G2_auto_l")]
    G2AutoL,
    #[serde(rename = "G2_cross")]
    G2Cross,
}

/// Two-time function `G(t1, t2)` on a square grid.
#[derive(Clone, Debug)]
pub struct TwoTimeGrid {
    pub kind: CorrelationKind,
    pub t1_ns: Vec<f64>,
    pub t2_ns: Vec<f64>,
    pub values: DMatrix<C64>,
}

impl TwoTimeGrid {
    /// Max `|G(t1,t2) − conj G(t2,t1)|`.
    pub fn hermiticity_error(&self) -> f64 {
        let n = self.values.nrows().min(self.values.ncols());
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                worst = worst.max((self.values[(i, j)] - self.values[(j, i)].conj()).norm());
            }
        }
        worst
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write_row(&mut w, &["t1_ns", "t2_ns", "re", "im"].map(String::from))?;
        for (i, t1) in self.t1_ns.iter().enumerate() {
            for (j, t2) in self.t2_ns.iter().enumerate() {
                let v = self.values[(i, j)];
                write_row(&mut w, &[sci(*t1), sci(*t2), sci(v.re), sci(v.im)])?;
            }
        }
        Ok(())
    }
}

fn require_pulsed(params: &SystemParams) -> Result<()> {
    params.validate()?;
    if params.drive.mode != DriveMode::PulsedG0E {
        return Err(Error::param("drive.mode", "needs the pulsed g0–e drive"));
    }
    Ok(())
}

fn ground_seed(params: &SystemParams) -> Result<DensityMatrix> {
    DensityMatrix::basis(params.layout()?, BasisState::new(Level::G0, 0, 0))
}

/// Square two-time grid of a pulsed scenario: rows `t1 = grid[k]` evolve over
/// `grid[k..]`, the lower triangle follows from `G(t2,t1) = conj G(t1,t2)`.
pub fn pulsed_two_time_grid(params: &SystemParams, kind: CorrelationKind, grid_ns: &[f64]) -> Result<TwoTimeGrid> {
    require_pulsed(params)?;
    check_grid("grid_ns", grid_ns)?;
    let layout = params.layout()?;
    let au = Operator::lowering(layout, Mode::Upper);
    let al = Operator::lowering(layout, Mode::Lower);
    let id = Operator::identity(layout);
    let (a, b, c) = match kind {
        CorrelationKind::G1U => (au.dagger(), au.clone(), id),
        CorrelationKind::G1L => (al.dagger(), al.clone(), id),
        CorrelationKind::G2AutoU => (au.dagger(), Operator::number(layout, Mode::Upper), au.clone()),
        CorrelationKind::G2AutoL => (al.dagger(), Operator::number(layout, Mode::Lower), al.clone()),
        CorrelationKind::G2Cross => (au.dagger(), Operator::number(layout, Mode::Lower), au.clone()),
    };
    let rho0 = ground_seed(params)?;
    let (reg, xs) = prepare(params, Initial::State(&rho0), &a, &b, &c, grid_ns)?;
    let n = grid_ns.len();
    let rows: Vec<Vec<C64>> = (0..n)
        .into_par_iter()
        .map(|k| {
            let samples: Vec<f64> = grid_ns[k..].iter().map(|t| t * 1e-3).collect();
            reg.run(&xs[k], grid_ns[k] * 1e-3, &samples)
        })
        .collect::<Result<_>>()?;
    let mut values = DMatrix::zeros(n, n);
    for (k, row) in rows.iter().enumerate() {
        for (off, v) in row.iter().enumerate() {
            values[(k, k + off)] = *v;
        }
    }
    if kind == CorrelationKind::G2Cross {
        // l detected first: ⟨a_l† n_u a_l⟩, its own regression pass
        let ol = Operator::number(layout, Mode::Upper);
        let (reg, xs) = prepare(params, Initial::State(&rho0), &al.dagger(), &ol, &al, grid_ns)?;
        let rows: Vec<Vec<C64>> = (0..n)
            .into_par_iter()
            .map(|k| {
                let samples: Vec<f64> = grid_ns[k + 1..].iter().map(|t| t * 1e-3).collect();
                if samples.is_empty() {
                    return Ok(Vec::new());
                }
                reg.run(&xs[k], grid_ns[k] * 1e-3, &samples)
            })
            .collect::<Result<_>>()?;
        for (k, row) in rows.iter().enumerate() {
            for (off, v) in row.iter().enumerate() {
                values[(k + 1 + off, k)] = *v;
            }
        }
    } else {
        for i in 0..n {
            for j in 0..i {
                values[(i, j)] = values[(j, i)].conj();
            }
        }
    }
    Ok(TwoTimeGrid {
        kind,
        t1_ns: grid_ns.to_vec(),
        t2_ns: grid_ns.to_vec(),
        values,
    })
}

/// `G1(t1,t2) = ⟨a†(t1) a(t2)⟩` of one cavity on a uniform grid.
pub fn pulsed_g1_grid(params: &SystemParams, mode: Mode, grid_ns: &[f64]) -> Result<TwoTimeGrid> {
    let kind = match mode {
        Mode::Upper => CorrelationKind::G1U,
        Mode::Lower => CorrelationKind::G1L,
    };
    pulsed_two_time_grid(params, kind, grid_ns)
}

/// `∫∫|G1(t,t')|² dt dt' / (∫ G1(t,t) dt)²` with trapezoid weights.
pub fn hom_visibility(g1: &TwoTimeGrid) -> Result<f64> {
    let n = g1.t1_ns.len();
    if g1.t2_ns != g1.t1_ns || g1.values.nrows() != n || g1.values.ncols() != n {
        return Err(Error::param("g1", "HOM visibility needs a square grid with t1 = t2"));
    }
    let w = trapezoid_weights(&g1.t1_ns);
    let mut num = 0.0;
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            row += w[j] * g1.values[(i, j)].norm_sqr();
        }
        num += w[i] * row;
    }
    let den: f64 = (0..n).map(|i| w[i] * g1.values[(i, i)].norm()).sum();
    if !(den > 0.0) {
        return Err(Error::param("g1", "photon number integrates to zero"));
    }
    Ok(num / (den * den))
}

/// Time after the pulse by which the remaining excitation
/// `P_e + P_i + n_u + n_l` has dropped below `threshold`.
pub fn emission_span_ns(params: &SystemParams, threshold: f64) -> Result<f64> {
    require_pulsed(params)?;
    let pulse_end = params.drive.pulse.map_or(0.0, |p| p.end_ns());
    let t_max = default_end_time_ns(params).max(pulse_end + 1.0);
    let dt = params.drive.pulse.map_or(1.0, |p| p.fwhm_ns / 8.0).min(t_max / 200.0);
    let traj = pulsed_trajectory(params, t_max, dt)?;
    let cols = ["P_e", "P_i", "n_u", "n_l"].map(|c| traj.series(c).unwrap());
    for (k, &t) in traj.times_ns.iter().enumerate() {
        if t >= pulse_end && cols.iter().map(|c| c[k]).sum::<f64>() < threshold {
            return Ok(t);
        }
    }
    Err(Error::GridNotConverged(format!(
        "remaining excitation still above {threshold:e} at {t_max:.1} ns"
    )))
}

/// Remaining-excitation threshold that sets the default correlation span.
pub const SPAN_THRESHOLD: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HomOptions {
    pub points: usize,
    /// Grid span; by default the emission span at [`SPAN_THRESHOLD`].
    pub span_ns: Option<f64>,
    /// Recompute on a doubled span (same spacing) and require agreement.
    pub check_convergence: bool,
}

impl Default for HomOptions {
    fn default() -> Self {
        HomOptions {
            points: 121,
            span_ns: None,
            check_convergence: true,
        }
    }
}

/// Largest visibility change tolerated when the grid span is doubled.
pub const HOM_CONVERGENCE: f64 = 0.005;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HomResult {
    pub visibility: f64,
    pub doubled_visibility: Option<f64>,
    pub span_ns: f64,
    pub points: usize,
    pub photon_number: f64,
}

/// HOM visibility of one cavity's photon in a pulsed scenario.
pub fn hom_point(params: &SystemParams, mode: Mode, opts: &HomOptions) -> Result<HomResult> {
    require_pulsed(params)?;
    if opts.points < 3 {
        return Err(Error::param("points", "need at least 3 grid points"));
    }
    let span = match opts.span_ns {
        Some(s) => s,
        None => emission_span_ns(params, SPAN_THRESHOLD)?,
    };
    let grid = linspace(0.0, span, opts.points);
    let g1 = pulsed_g1_grid(params, mode, &grid)?;
    let visibility = hom_visibility(&g1)?;
    let w = trapezoid_weights(&grid);
    let photon_number = (0..grid.len()).map(|i| w[i] * g1.values[(i, i)].re).sum::<f64>();
    let doubled_visibility = if opts.check_convergence {
        let big = linspace(0.0, 2.0 * span, 2 * opts.points - 1);
        let v2 = hom_visibility(&pulsed_g1_grid(params, mode, &big)?)?;
        if (v2 - visibility).abs() >= HOM_CONVERGENCE {
            return Err(Error::GridNotConverged(format!(
                "HOM visibility {visibility:.4} changes to {v2:.4} when the {span:.1} ns span is doubled"
            )));
        }
        Some(v2)
    } else {
        None
    };
    Ok(HomResult {
        visibility,
        doubled_visibility,
        span_ns: span,
        points: opts.points,
        photon_number,
    })
}

/// Upper-photon HOM visibility over a (g_u, g_l) grid, recalibrating the
/// pulse at every point.
pub fn hom_map(params: &SystemParams, g_u: &[f64], g_l: &[f64], opts: &HomOptions) -> Result<SweepResult> {
    require_pulsed(params)?;
    check_grid("g_u", g_u)?;
    check_grid("g_l", g_l)?;
    let indices: Vec<Vec<usize>> = (0..g_u.len())
        .flat_map(|i| (0..g_l.len()).map(move |j| vec![i, j]))
        .collect();
    let points = crate::steady::evaluate_points(indices, 4, |ix| {
        let mut p = params.clone();
        p.g_u = g_u[ix[0]];
        p.g_l = g_l[ix[1]];
        let cal = calibrate_pi_pulse(&p)?;
        p.drive.omega_d = cal.peak_omega;
        let hom = hom_point(&p, Mode::Upper, opts)?;
        Ok(vec![hom.visibility, hom.photon_number, cal.peak_omega, hom.span_ns])
    });
    let mut metadata = std::collections::BTreeMap::new();
    metadata.insert("grid_points".into(), opts.points.to_string());
    metadata.insert("calibration".into(), "pi pulse recalibrated per point".into());
    Ok(SweepResult {
        axes: vec![
            crate::steady::SweepAxis {
                name: "g_u".into(),
                unit: "MHz".into(),
                values: g_u.to_vec(),
            },
            crate::steady::SweepAxis {
                name: "g_l".into(),
                unit: "MHz".into(),
                values: g_l.to_vec(),
            },
        ],
        columns: ["V_u", "n_u_integral", "peak_omega", "span_ns"].map(String::from).to_vec(),
        points,
        params: params.clone(),
        metadata,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CrossOptions {
    /// Nodes of the Simpson rule over the pulse window (rounded up to odd).
    pub t1_points: usize,
    /// End of the emission window; by default the emission span at
    /// [`SPAN_THRESHOLD`].
    pub span_ns: Option<f64>,
}

impl Default for CrossOptions {
    fn default() -> Self {
        CrossOptions {
            t1_points: 61,
            span_ns: None,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CrossCorrelation {
    /// `t_l − t_u`.
    pub delays_ns: Vec<f64>,
    /// Coincidence density of cavity-channel photon pairs, per ns of delay.
    pub raw: Vec<f64>,
    /// Product of marginal fluxes at the same delay (independent trials).
    pub independent: Vec<f64>,
    /// `raw / independent`.
    pub normalized: Vec<f64>,
    pub t1_ns: Vec<f64>,
    pub span_ns: f64,
}

impl CrossCorrelation {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write_row(&mut w, &["delay_ns", "raw_per_ns", "independent_per_ns", "normalized"].map(String::from))?;
        for k in 0..self.delays_ns.len() {
            write_row(
                &mut w,
                &[
                    sci(self.delays_ns[k]),
                    sci(self.raw[k]),
                    sci(self.independent[k]),
                    sci(self.normalized[k]),
                ],
            )?;
        }
        Ok(())
    }

    /// `∫ raw dτ` over the delay grid.
    pub fn integral(&self) -> f64 {
        trapezoid(&self.delays_ns, &self.raw)
    }
}

/// Linear interpolation on an ascending grid (clamped at the ends).
fn interp(x: &[f64], y: &[f64], at: f64) -> f64 {
    if at <= x[0] {
        return y[0];
    }
    if at >= x[x.len() - 1] {
        return y[y.len() - 1];
    }
    let k = x.partition_point(|&v| v <= at) - 1;
    let f = (at - x[k]) / (x[k + 1] - x[k]);
    y[k] + f * (y[k + 1] - y[k])
}

/// Superoperator `X ↦ A X A†` on the retained basis.
fn sandwich(gen: &Generator, a: &DMatrix<C64>) -> Csr {
    let d = gen.dim();
    let mut triplets = Vec::new();
    for r in 0..d {
        for c in 0..d {
            let arc = a[(r, c)];
            if arc == ZERO {
                continue;
            }
            for s in 0..d {
                for e in 0..d {
                    let ase = a[(s, e)];
                    if ase != ZERO {
                        triplets.push((r * d + s, c * d + e, arc * ase.conj()));
                    }
                }
            }
        }
    }
    Csr::from_triplets(gen.vec_dim(), triplets)
}

fn evolve_trace(gen: &Generator, x0: Vec<C64>, t0_us: f64, samples_us: &[f64], obs: &DMatrix<C64>) -> Result<Vec<C64>> {
    let mut out = Vec::with_capacity(samples_us.len());
    integrate(gen, t0_us, x0, samples_us, &Tolerances::default(), |_, _, y| {
        out.push(gen.expect_reduced(obs, y));
        Ok(())
    })?;
    Ok(out)
}

/// Shared pieces of the two-cavity calculations.
struct CrossSetup {
    gen: Generator,
    nu: DMatrix<C64>,
    nl: DMatrix<C64>,
    ju: Csr,
    jl: Csr,
    x0: Vec<C64>,
    /// `(2κ_u)(2κ_l)` in ns⁻².
    scale: f64,
}

impl CrossSetup {
    fn new(params: &SystemParams) -> Result<Self> {
        let layout = params.layout()?;
        let au = Operator::lowering(layout, Mode::Upper);
        let al = Operator::lowering(layout, Mode::Lower);
        let rho0 = ground_seed(params)?;
        let gen = Generator::reachable(params, &support(&rho0), &[&au, &al])?;
        let x0 = gen.vectorize(&rho0)?;
        Ok(CrossSetup {
            nu: gen.restrict(Operator::number(layout, Mode::Upper).matrix()),
            nl: gen.restrict(Operator::number(layout, Mode::Lower).matrix()),
            ju: sandwich(&gen, &gen.restrict(au.matrix())),
            jl: sandwich(&gen, &gen.restrict(al.matrix())),
            scale: 2.0 * angular(params.kappa_u) * 1e-3 * 2.0 * angular(params.kappa_l) * 1e-3,
            x0,
            gen,
        })
    }

    fn jump(&self, j: &Csr, x: &[C64]) -> Vec<C64> {
        let mut out = vec![ZERO; x.len()];
        j.mul_add(C64::new(1.0, 0.0), x, &mut out);
        out
    }
}

/// `[ρ, Y_u, Y_l, s_u, s_l]` with `Y' = L Y + J ρ` and `s' = Tr(n Y)`: the
/// detection-ordered pair integrals without a `t1` grid.
struct PairRhs<'a> {
    setup: &'a CrossSetup,
    accumulate_traces: bool,
}

impl Rhs for PairRhs<'_> {
    fn eval(&self, t: f64, y: &[C64], dy: &mut [C64]) {
        let s = self.setup;
        let n = s.gen.vec_dim();
        let (rho, rest) = y.split_at(n);
        let (yu, rest) = rest.split_at(n);
        let (yl, _) = rest.split_at(n);
        let (drho, drest) = dy.split_at_mut(n);
        let (dyu, drest) = drest.split_at_mut(n);
        let (dyl, dsc) = drest.split_at_mut(n);
        let one = C64::new(1.0, 0.0);
        s.gen.apply(t, rho, drho);
        if self.accumulate_traces {
            s.gen.apply(t, yu, dyu);
            s.gen.apply(t, yl, dyl);
            dsc[0] = s.gen.expect_reduced(&s.nl, yu);
            dsc[1] = s.gen.expect_reduced(&s.nu, yl);
        } else {
            dyu.iter_mut().chain(dyl.iter_mut()).for_each(|v| *v = ZERO);
            dsc.iter_mut().for_each(|v| *v = ZERO);
        }
        s.ju.mul_add(one, rho, dyu);
        s.jl.mul_add(one, rho, dyl);
    }

    fn max_step(&self, t: f64) -> f64 {
        self.setup.gen.pulse_step_limit(t)
    }
}

/// Delay marginal of the two-cavity intensity correlation.
///
/// For `τ ≥ 0` the upper photon is detected first,
/// `G2x(t, t+τ) = ⟨a_u†(t) a_l†a_l(t+τ) a_u(t)⟩`; for `τ < 0` a second pass
/// uses the mirrored ordering with the lower photon first. The `t1` integral
/// uses a Simpson rule over the pulse window; past the pulse the generator is
/// constant, so the remaining `t1` range is folded into one operator
/// `∫ a ρ(t1) a† dt1` evolved once.
pub fn cross_correlation(params: &SystemParams, delays_ns: &[f64], opts: &CrossOptions) -> Result<CrossCorrelation> {
    require_pulsed(params)?;
    check_grid("delays_ns", delays_ns)?;
    let span = match opts.span_ns {
        Some(s) => s,
        None => emission_span_ns(params, SPAN_THRESHOLD)?,
    };
    let pulse_end = params.drive.pulse.map_or(0.0, |p| p.end_ns());
    if span <= pulse_end {
        return Err(Error::param("span_ns", "emission window must extend past the pulse"));
    }
    let n1 = (opts.t1_points.max(3)) | 1;
    let t1 = linspace(0.0, pulse_end, n1);
    let w = simpson_weights(&t1);
    let setup = CrossSetup::new(params)?;
    let gen = &setup.gen;
    let xs = states_at(gen, setup.x0.clone(), &t1)?;

    // tail operators W = ∫_{pulse end}^{span} J ρ dt1
    let n = gen.vec_dim();
    let mut y0 = vec![ZERO; 3 * n + 2];
    y0[..n].copy_from_slice(&xs[n1 - 1]);
    let rhs = PairRhs {
        setup: &setup,
        accumulate_traces: false,
    };
    let (yt, _) = integrate(&rhs, pulse_end * 1e-3, y0, &[span * 1e-3], &Tolerances::default(), |_, _, _| Ok(()))?;
    let wu = yt[n..2 * n].to_vec();
    let wl = yt[2 * n..3 * n].to_vec();

    let pos: Vec<f64> = delays_ns.iter().copied().filter(|&d| d >= 0.0).collect();
    let neg: Vec<f64> = delays_ns.iter().rev().copied().filter(|&d| d < 0.0).map(|d| -d).collect();
    let pass = |j: &Csr, obs: &DMatrix<C64>, tail: &[C64], taus: &[f64]| -> Result<Vec<f64>> {
        if taus.is_empty() {
            return Ok(Vec::new());
        }
        let jobs: Vec<(f64, Vec<C64>)> = t1
            .iter()
            .zip(&xs)
            .map(|(&t, x)| (t, setup.jump(j, x)))
            .chain(std::iter::once((pulse_end, tail.to_vec())))
            .collect();
        let rows: Vec<Vec<C64>> = jobs
            .into_par_iter()
            .map(|(t, x)| {
                let samples: Vec<f64> = taus.iter().map(|tau| (t + tau) * 1e-3).collect();
                evolve_trace(gen, x, t * 1e-3, &samples, obs)
            })
            .collect::<Result<_>>()?;
        Ok((0..taus.len())
            .map(|q| {
                let grid: f64 = (0..n1).map(|k| w[k] * rows[k][q].re).sum();
                // the tail operator was accumulated over µs
                setup.scale * (grid + 1e3 * rows[n1][q].re)
            })
            .collect())
    };
    let raw_pos = pass(&setup.ju, &setup.nl, &wu, &pos)?;
    let raw_neg = pass(&setup.jl, &setup.nu, &wl, &neg)?;

    let max_delay = delays_ns.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    let dt = params.drive.pulse.map_or(1.0, |p| p.fwhm_ns / 16.0).max((span + max_delay) / 50_000.0);
    let traj = pulsed_trajectory(params, span + max_delay, dt)?;
    let times = &traj.times_ns;
    let fu = traj.series("flux_u").unwrap();
    let fl = traj.series("flux_l").unwrap();
    let inside = times.partition_point(|&t| t <= span);
    let tw = trapezoid_weights(&times[..inside]);
    let base = |first: &[f64], second: &[f64], tau: f64| -> f64 {
        (0..inside).map(|k| tw[k] * first[k] * interp(times, second, times[k] + tau)).sum()
    };

    let mut raw = Vec::with_capacity(delays_ns.len());
    let mut independent = Vec::with_capacity(delays_ns.len());
    let (mut ip, mut ineg) = (0, neg.len());
    for &d in delays_ns {
        if d >= 0.0 {
            raw.push(raw_pos[ip]);
            ip += 1;
            independent.push(base(fu, fl, d));
        } else {
            ineg -= 1;
            raw.push(raw_neg[ineg]);
            independent.push(base(fl, fu, -d));
        }
    }
    let normalized = raw
        .iter()
        .zip(&independent)
        .map(|(r, i)| if *i > 0.0 { r / i } else { f64::NAN })
        .collect();
    Ok(CrossCorrelation {
        delays_ns: delays_ns.to_vec(),
        raw,
        independent,
        normalized,
        t1_ns: t1,
        span_ns: span,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PairStatistics {
    /// Photon-pair probability at the cavity-channel level.
    pub p_pair_raw: f64,
    pub p_u_raw: f64,
    pub p_l_raw: f64,
    /// Pair probability after both channels' collection factors.
    pub p_pair: f64,
    pub eta_u: f64,
    pub eta_l: f64,
    /// Probability of the upper photon given the lower one, in fiber.
    pub eta_u_given_l: f64,
    /// Probability of the lower photon given the upper one, in fiber.
    pub eta_l_given_u: f64,
    pub truncated: bool,
}

/// Pair and conditional in-fiber efficiencies of a pulsed scenario.
///
/// The double integral of the cross-correlation over both detection times is
/// carried as extra components of one master-equation integration up to
/// `span_ns` (default: twice the emission span), so no grid is involved.
pub fn pair_statistics(params: &SystemParams, opts: &CrossOptions) -> Result<PairStatistics> {
    require_pulsed(params)?;
    let t_end = match opts.span_ns {
        Some(s) => s,
        None => 2.0 * emission_span_ns(params, SPAN_THRESHOLD)?,
    };
    let setup = CrossSetup::new(params)?;
    let n = setup.gen.vec_dim();
    let mut y0 = vec![ZERO; 3 * n + 2];
    y0[..n].copy_from_slice(&setup.x0);
    let rhs = PairRhs {
        setup: &setup,
        accumulate_traces: true,
    };
    let (y, _) = integrate(&rhs, 0.0, y0, &[t_end * 1e-3], &Tolerances::default(), |_, _, _| Ok(()))?;
    // two nested time integrals in µs; scale is per ns²
    let p_pair_raw = setup.scale * 1e6 * (y[3 * n].re + y[3 * n + 1].re);

    let dt = params.drive.pulse.map_or(1.0, |p| p.fwhm_ns / 16.0).max(t_end / 50_000.0);
    let traj = pulsed_trajectory(params, t_end, dt)?;
    let em = emission_probabilities(&traj);
    let c = &params.collection;
    let eta_u = fiber_efficiency(em.p_u.clamp(0.0, 1.0), Mode::Upper, c)?;
    let eta_l = fiber_efficiency(em.p_l.clamp(0.0, 1.0), Mode::Lower, c)?;
    let p_pair = p_pair_raw * c.factor(Mode::Upper) * c.factor(Mode::Lower);
    let ratio = |num: f64, den: f64| if den > 0.0 { num / den } else { 0.0 };
    Ok(PairStatistics {
        p_pair_raw,
        p_u_raw: em.p_u,
        p_l_raw: em.p_l,
        p_pair,
        eta_u,
        eta_l,
        eta_u_given_l: ratio(p_pair, eta_l),
        eta_l_given_u: ratio(p_pair, eta_u),
        truncated: em.residual_n_u > RESIDUAL_THRESHOLD || em.residual_n_l > RESIDUAL_THRESHOLD,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct Spectrum {
    /// Linear frequency offsets (MHz).
    pub omega_mhz: Vec<f64>,
    /// Unit-area density (per MHz).
    pub density: Vec<f64>,
    /// τ beyond which the exponential window applies, if any.
    pub window_start_ns: Option<f64>,
    /// e-folding time of the exponential window.
    pub window_decay_ns: Option<f64>,
}

impl Spectrum {
    /// Full width at half maximum, from linear interpolation of the
    /// half-level crossings around the global maximum.
    pub fn fwhm(&self) -> Option<f64> {
        let (imax, &peak) = self
            .density
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))?;
        let half = 0.5 * peak;
        let x = &self.omega_mhz;
        let y = &self.density;
        let mut left = None;
        for k in (0..imax).rev() {
            if y[k] < half {
                left = Some(x[k] + (half - y[k]) / (y[k + 1] - y[k]) * (x[k + 1] - x[k]));
                break;
            }
        }
        let mut right = None;
        for k in imax + 1..y.len() {
            if y[k] < half {
                right = Some(x[k - 1] + (y[k - 1] - half) / (y[k - 1] - y[k]) * (x[k] - x[k - 1]));
                break;
            }
        }
        Some(right? - left?)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write_row(&mut w, &["omega_MHz", "density"].map(String::from))?;
        for (o, d) in self.omega_mhz.iter().zip(&self.density) {
            write_row(&mut w, &[sci(*o), sci(*d)])?;
        }
        Ok(())
    }
}

/// Relative `|g1|` level that the τ window must reach.
pub const G1_TAIL: f64 = 1e-4;

/// `S(ω) ∝ Re ∫ g1(τ) e^{iωτ} dτ` normalized to unit area on `omega_mhz`.
///
/// Past the first τ where `|g1|` falls below [`G1_TAIL`] of its initial value
/// the series is multiplied by an exponential window reaching `e^{-5}` at the
/// end of the grid.
pub fn spectrum_from_g1(tau_ns: &[f64], g1: &[C64], omega_mhz: &[f64]) -> Result<Spectrum> {
    check_grid("tau_ns", tau_ns)?;
    check_grid("omega_mhz", omega_mhz)?;
    if g1.len() != tau_ns.len() {
        return Err(Error::DimensionMismatch {
            expected: tau_ns.len(),
            actual: g1.len(),
        });
    }
    if tau_ns[0] != 0.0 {
        return Err(Error::param("tau_ns", "one-sided series must start at τ = 0"));
    }
    let g0 = g1[0].norm();
    if !(g0 > 0.0) {
        return Err(Error::param("g1", "g1(0) is zero"));
    }
    let ratio = g1[g1.len() - 1].norm() / g0;
    if ratio >= G1_TAIL {
        return Err(Error::InsufficientDecay {
            ratio,
            threshold: G1_TAIL,
        });
    }
    let start = g1.iter().position(|v| v.norm() < G1_TAIL * g0).unwrap();
    let t_end = tau_ns[tau_ns.len() - 1];
    let (window_start, window_decay) = if start + 1 < tau_ns.len() {
        (Some(tau_ns[start]), Some((t_end - tau_ns[start]) / 5.0))
    } else {
        (None, None)
    };
    let windowed: Vec<C64> = tau_ns
        .iter()
        .zip(g1)
        .map(|(&t, &v)| match (window_start, window_decay) {
            (Some(s), Some(d)) if t > s => v * (-(t - s) / d).exp(),
            _ => v,
        })
        .collect();
    let w = trapezoid_weights(tau_ns);
    let raw: Vec<f64> = omega_mhz
        .iter()
        .map(|&om| {
            let k = angular(om) * 1e-3;
            tau_ns
                .iter()
                .zip(&windowed)
                .zip(&w)
                .map(|((&t, &v), &wt)| wt * (v * C64::from_polar(1.0, k * t)).re)
                .sum()
        })
        .collect();
    let area = trapezoid(omega_mhz, &raw);
    if !(area > 0.0) {
        return Err(Error::param("omega_mhz", "spectrum has no weight on this frequency grid"));
    }
    Ok(Spectrum {
        omega_mhz: omega_mhz.to_vec(),
        density: raw.iter().map(|v| v / area).collect(),
        window_start_ns: window_start,
        window_decay_ns: window_decay,
    })
}

/// Steady-state fluctuation coherence `⟨δa†(0) δa(τ)⟩` of one cavity.
pub fn steady_g1(params: &SystemParams, mode: Mode, tau_ns: &[f64]) -> Result<Vec<C64>> {
    let layout = params.layout()?;
    let a = Operator::lowering(layout, mode);
    let table = regression_correlation(
        params,
        Initial::Steady,
        &a.dagger(),
        &a,
        &Operator::identity(layout),
        &[0.0],
        tau_ns,
    )?;
    let ss = steady_state(params)?;
    let mean = crate::qspace::expectation(&ss.rho, &a)?;
    Ok((0..tau_ns.len()).map(|j| table.values[(0, j)] - mean.norm_sqr()).collect())
}

/// Emission spectrum of one cavity in a cw steady state.
pub fn steady_spectrum(params: &SystemParams, mode: Mode, tau_ns: &[f64], omega_mhz: &[f64]) -> Result<Spectrum> {
    spectrum_from_g1(tau_ns, &steady_g1(params, mode, tau_ns)?, omega_mhz)
}

/// Spectrum of the field emitted from a prepared state, from
/// `⟨a†(0) a(τ)⟩` with the state at `t = 0`.
pub fn transient_spectrum(
    params: &SystemParams,
    mode: Mode,
    rho0: &DensityMatrix,
    tau_ns: &[f64],
    omega_mhz: &[f64],
) -> Result<Spectrum> {
    let layout = params.layout()?;
    let a = Operator::lowering(layout, mode);
    let table = regression_correlation(
        params,
        Initial::State(rho0),
        &a.dagger(),
        &a,
        &Operator::identity(layout),
        &[0.0],
        tau_ns,
    )?;
    let g1: Vec<C64> = (0..tau_ns.len()).map(|j| table.values[(0, j)]).collect();
    spectrum_from_g1(tau_ns, &g1, omega_mhz)
}
