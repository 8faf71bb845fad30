//! Liouvillian steady states and parameter sweeps.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::{emission_probabilities, fiber_efficiency, pulsed_trajectory};
use crate::error::{Error, Result};
use crate::liouville::Generator;
use crate::model::{DriveMode, SystemParams};
use crate::qspace::{BasisState, DensityMatrix, Level, Mode, C64, ZERO};
use crate::util::{check_grid, sci, write_row};

#[derive(Clone, Debug)]
pub struct SteadyState {
    pub rho: DensityMatrix,
    /// `‖L ρ‖_max` of the returned solution.
    pub residual: f64,
    /// Number of unknowns in the solved population sector.
    pub unknowns: usize,
}

/// Groups of basis states that trap population; more than one means the
/// steady state is not unique.
fn closed_classes(gen: &Generator) -> Vec<Vec<usize>> {
    let d = gen.dim();
    let l = gen.static_part();
    let mut reach = vec![vec![false; d]; d];
    for (a, row) in reach.iter_mut().enumerate() {
        row[a] = true;
    }
    // population leaves s through a coherence ρ_as (coherent coupling)
    // or straight into ρ_aa (jump)
    for r in 0..l.dim() {
        let (a, b) = (r / d, r % d);
        for (c, _) in l.row(r) {
            let (x, y) = (c / d, c % d);
            if x != y {
                continue;
            }
            if (a == b || b == x) && a != x {
                reach[x][a] = true;
            } else if a == x && b != x {
                reach[x][b] = true;
            }
        }
    }
    for k in 0..d {
        for a in 0..d {
            if reach[a][k] {
                for b in 0..d {
                    if reach[k][b] {
                        reach[a][b] = true;
                    }
                }
            }
        }
    }
    let mut assigned = vec![false; d];
    let mut classes = Vec::new();
    for a in 0..d {
        if assigned[a] || !(0..d).all(|b| !reach[a][b] || reach[b][a]) {
            continue;
        }
        let class: Vec<usize> = (0..d).filter(|&b| reach[a][b]).collect();
        for &b in &class {
            assigned[b] = true;
        }
        classes.push(class);
    }
    classes
}

/// Solve `L ρ = 0`, `Tr ρ = 1` for a time-independent generator.
///
/// The system is restricted to states reachable from `|g,0,0⟩` and to the
/// coherence sector containing the populations; one population equation is
/// replaced by the trace constraint and the rest is solved by dense LU.
pub fn steady_state(params: &SystemParams) -> Result<SteadyState> {
    steady_state_from(params, &[BasisState::new(Level::G, 0, 0)])
}

/// Steady state on the component reachable from `seeds`.
pub fn steady_state_from(params: &SystemParams, seeds: &[BasisState]) -> Result<SteadyState> {
    params.validate()?;
    if params.drive.mode == DriveMode::PulsedG0E {
        return Err(Error::param(
            "drive.mode",
            "steady state needs a time-independent generator (cw_g_e or none)",
        ));
    }
    if [params.kappa_u, params.kappa_l, params.gamma_u, params.gamma_l]
        .iter()
        .all(|&r| r == 0.0)
    {
        return Err(Error::param("kappa/gamma", "steady state needs at least one decay channel"));
    }
    let layout = params.layout()?;
    let seeds = seeds
        .iter()
        .map(|&s| layout.encode(s).ok_or_else(|| Error::param("seeds", format!("{s} is outside the layout"))))
        .collect::<Result<Vec<_>>>()?;
    let gen = Generator::reachable(params, &seeds, &[])?;
    let d = gen.dim();

    let classes = closed_classes(&gen);
    if classes.len() > 1 {
        let names: Vec<String> = classes
            .iter()
            .map(|c| {
                let states: Vec<String> = c
                    .iter()
                    .map(|&k| layout.decode(gen.basis()[k]).unwrap().to_string())
                    .collect();
                format!("{{{}}}", states.join(" "))
            })
            .collect();
        return Err(Error::SingularSystem(format!(
            "population is trapped in {} invariant subspaces: {}",
            classes.len(),
            names.join(", ")
        )));
    }

    let sector = gen.population_sector();
    let n = sector.len();
    let mut local = vec![usize::MAX; gen.vec_dim()];
    for (k, &g) in sector.iter().enumerate() {
        local[g] = k;
    }
    let l = gen.static_part();
    let mut m = DMatrix::<C64>::zeros(n, n);
    for (k, &row) in sector.iter().enumerate() {
        for (c, v) in l.row(row) {
            let j = local[c];
            debug_assert!(j != usize::MAX, "sector must be closed under L");
            m[(k, j)] += v;
        }
    }
    let trace_row = local[0];
    for j in 0..n {
        m[(trace_row, j)] = ZERO;
    }
    for a in 0..d {
        m[(trace_row, local[a * d + a])] = C64::new(1.0, 0.0);
    }
    let mut rhs = DVector::<C64>::zeros(n);
    rhs[trace_row] = C64::new(1.0, 0.0);
    let sol = m
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::SingularSystem("trace-constrained Liouvillian is singular".into()))?;
    if sol.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::SingularSystem("steady-state solve produced non-finite values".into()));
    }

    let mut x = vec![ZERO; gen.vec_dim()];
    for (k, &g) in sector.iter().enumerate() {
        x[g] = sol[k];
    }
    let mut lx = vec![ZERO; x.len()];
    gen.apply(0.0, &x, &mut lx);
    let residual = lx.iter().map(|z| z.norm()).fold(0.0, f64::max);
    Ok(SteadyState {
        rho: gen.expand(&x),
        residual,
        unknowns: n,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepAxis {
    pub name: String,
    pub unit: String,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepPoint {
    /// Grid index along each axis.
    pub index: Vec<usize>,
    pub values: Vec<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepResult {
    pub axes: Vec<SweepAxis>,
    pub columns: Vec<String>,
    /// Row-major over the axes.
    pub points: Vec<SweepPoint>,
    pub params: SystemParams,
    pub metadata: BTreeMap<String, String>,
}

impl SweepResult {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// All values of one observable, in point order.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.column_index(name)?;
        Some(self.points.iter().map(|p| p.values[k]).collect())
    }

    /// Values of one observable along the last axis at a fixed first-axis row.
    pub fn row(&self, name: &str, row: usize) -> Option<Vec<f64>> {
        let k = self.column_index(name)?;
        Some(
            self.points
                .iter()
                .filter(|p| p.index.len() == 2 && p.index[0] == row)
                .map(|p| p.values[k])
                .collect(),
        )
    }

    pub fn failures(&self) -> usize {
        self.points.iter().filter(|p| p.error.is_some()).count()
    }

    /// Long-format CSV: two axis name/value pairs (blank for 1D), then the
    /// observables.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let mut header: Vec<String> =
            ["axis1_name", "axis1_value", "axis2_name", "axis2_value"].map(String::from).to_vec();
        header.extend(self.columns.iter().cloned());
        write_row(&mut w, &header)?;
        for p in &self.points {
            let mut row = Vec::with_capacity(4 + self.columns.len());
            for slot in 0..2 {
                match (self.axes.get(slot), p.index.get(slot)) {
                    (Some(axis), Some(&i)) => {
                        row.push(axis.name.clone());
                        row.push(sci(axis.values[i]));
                    }
                    _ => {
                        row.push(String::new());
                        row.push(String::new());
                    }
                }
            }
            row.extend(p.values.iter().map(|&v| sci(v)));
            write_row(&mut w, &row)?;
        }
        Ok(())
    }

    /// JSON sidecar: axes, columns, parameters, metadata and failures.
    pub fn sidecar(&self) -> serde_json::Value {
        let failures: Vec<_> = self
            .points
            .iter()
            .filter_map(|p| p.error.as_ref().map(|e| serde_json::json!({"index": p.index, "error": e})))
            .collect();
        serde_json::json!({
            "axes": self.axes.iter().map(|a| serde_json::json!({
                "name": a.name, "unit": a.unit, "points": a.values.len(),
                "min": a.values.first(), "max": a.values.last(),
            })).collect::<Vec<_>>(),
            "columns": self.columns,
            "params": self.params,
            "metadata": self.metadata,
            "failures": failures,
        })
    }
}

fn axis(name: &str, unit: &str, values: &[f64]) -> SweepAxis {
    SweepAxis {
        name: name.into(),
        unit: unit.into(),
        values: values.to_vec(),
    }
}

/// Evaluate `f` at every index concurrently, preserving order.
pub(crate) fn evaluate_points<F>(indices: Vec<Vec<usize>>, width: usize, f: F) -> Vec<SweepPoint>
where
    F: Fn(&[usize]) -> Result<Vec<f64>> + Sync,
{
    indices
        .into_par_iter()
        .map(|index| match f(&index) {
            Ok(values) => SweepPoint {
                index,
                values,
                error: None,
            },
            Err(e) => SweepPoint {
                index,
                values: vec![f64::NAN; width],
                error: Some(e.to_string()),
            },
        })
        .collect()
}

fn require_mode(params: &SystemParams, mode: DriveMode, what: &str) -> Result<()> {
    params.validate()?;
    if params.drive.mode != mode {
        return Err(Error::param("drive.mode", format!("{what} needs drive mode {mode:?}")));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SteadyObservables {
    pub n_u: f64,
    pub n_l: f64,
    pub p_i: f64,
    pub p_e: f64,
    pub residual: f64,
}

pub fn steady_observables(params: &SystemParams) -> Result<SteadyObservables> {
    let ss = steady_state(params)?;
    let rho = &ss.rho;
    Ok(SteadyObservables {
        n_u: rho.mean_photons(Mode::Upper),
        n_l: rho.mean_photons(Mode::Lower),
        p_i: rho.population(Level::I),
        p_e: rho.population(Level::E),
        residual: ss.residual,
    })
}

pub const STEADY_COLUMNS: [&str; 5] = ["n_u", "n_l", "P_i", "P_e", "residual"];

/// Steady-state observables as a function of the drive detuning Δ_D.
pub fn sweep_drive_detuning(params: &SystemParams, delta_d: &[f64]) -> Result<SweepResult> {
    require_mode(params, DriveMode::CwGE, "drive-detuning sweep")?;
    check_grid("delta_d", delta_d)?;
    let points = evaluate_points((0..delta_d.len()).map(|i| vec![i]).collect(), 5, |ix| {
        let mut p = params.clone();
        p.drive.delta_d = delta_d[ix[0]];
        let o = steady_observables(&p)?;
        Ok(vec![o.n_u, o.n_l, o.p_i, o.p_e, o.residual])
    });
    Ok(SweepResult {
        axes: vec![axis("delta_d", "MHz", delta_d)],
        columns: STEADY_COLUMNS.map(String::from).to_vec(),
        points,
        params: params.clone(),
        metadata: BTreeMap::new(),
    })
}

/// Map over (κ_u, Δ_D) of n_l and P_i, with each observable also normalized
/// to a maximum of 1 along every κ_u row.
pub fn kappa_detuning_map(params: &SystemParams, kappa_u: &[f64], delta_d: &[f64]) -> Result<SweepResult> {
    require_mode(params, DriveMode::CwGE, "kappa/detuning map")?;
    check_grid("kappa_u", kappa_u)?;
    check_grid("delta_d", delta_d)?;
    if kappa_u[0] <= 0.0 {
        return Err(Error::param("kappa_u", "grid values must be > 0"));
    }
    let indices: Vec<Vec<usize>> = (0..kappa_u.len())
        .flat_map(|i| (0..delta_d.len()).map(move |j| vec![i, j]))
        .collect();
    let mut points = evaluate_points(indices, 5, |ix| {
        let mut p = params.clone();
        p.kappa_u = kappa_u[ix[0]];
        p.drive.delta_d = delta_d[ix[1]];
        let o = steady_observables(&p)?;
        Ok(vec![o.n_l, o.p_i, 0.0, 0.0, o.residual])
    });
    for row in 0..kappa_u.len() {
        for (src, dst) in [(0usize, 2usize), (1, 3)] {
            let max = points
                .iter()
                .filter(|p| p.index[0] == row)
                .map(|p| p.values[src])
                .fold(f64::NEG_INFINITY, f64::max);
            for p in points.iter_mut().filter(|p| p.index[0] == row) {
                p.values[dst] = p.values[src] / max;
            }
        }
    }
    let mut metadata = BTreeMap::new();
    metadata.insert(
        "normalization".into(),
        "n_l_norm and P_i_norm are divided by their own maximum within each kappa_u row".into(),
    );
    Ok(SweepResult {
        axes: vec![axis("kappa_u", "MHz", kappa_u), axis("delta_d", "MHz", delta_d)],
        columns: ["n_l", "P_i", "n_l_norm", "P_i_norm", "residual"].map(String::from).to_vec(),
        points,
        params: params.clone(),
        metadata,
    })
}

/// Time window used by the pulsed efficiency sweeps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PulsedWindow {
    pub t_end_ns: f64,
    pub sample_dt_ns: f64,
}

pub const EFFICIENCY_COLUMNS: [&str; 5] = ["eta_u", "eta_l", "P_u", "P_l", "truncated"];

fn pulsed_efficiency_point(p: &SystemParams, window: &PulsedWindow) -> Result<Vec<f64>> {
    let traj = pulsed_trajectory(p, window.t_end_ns, window.sample_dt_ns)?;
    let em = emission_probabilities(&traj);
    let clamp = |v: f64| v.clamp(0.0, 1.0);
    Ok(vec![
        fiber_efficiency(clamp(em.p_u), Mode::Upper, &p.collection)?,
        fiber_efficiency(clamp(em.p_l), Mode::Lower, &p.collection)?,
        em.p_u,
        em.p_l,
        if em.truncated { 1.0 } else { 0.0 },
    ])
}

fn pulsed_sweep(
    params: &SystemParams,
    grid: &[f64],
    window: &PulsedWindow,
    name: &str,
    apply: impl Fn(&mut SystemParams, f64) + Sync,
    note: &str,
) -> Result<SweepResult> {
    require_mode(params, DriveMode::PulsedG0E, name)?;
    check_grid("delta", grid)?;
    let points = evaluate_points((0..grid.len()).map(|i| vec![i]).collect(), 5, |ix| {
        let mut p = params.clone();
        apply(&mut p, grid[ix[0]]);
        pulsed_efficiency_point(&p, window)
    });
    let mut metadata = BTreeMap::new();
    metadata.insert("detuning_rule".into(), note.into());
    metadata.insert("t_end_ns".into(), sci(window.t_end_ns));
    metadata.insert("sample_dt_ns".into(), sci(window.sample_dt_ns));
    Ok(SweepResult {
        axes: vec![axis("delta", "MHz", grid)],
        columns: EFFICIENCY_COLUMNS.map(String::from).to_vec(),
        points,
        params: params.clone(),
        metadata,
    })
}

/// In-fiber efficiencies with the cavities detuned oppositely,
/// `Δ_u = +δ`, `Δ_l = −δ`.
pub fn sweep_opposite_cavity_detunings(
    params: &SystemParams,
    delta: &[f64],
    window: &PulsedWindow,
) -> Result<SweepResult> {
    pulsed_sweep(
        params,
        delta,
        window,
        "opposite-cavity detuning sweep",
        |p, d| {
            p.delta_u = d;
            p.delta_l = -d;
        },
        "delta_u = +delta, delta_l = -delta",
    )
}

/// In-fiber efficiencies with drive and upper cavity detuned together,
/// `Δ_D = Δ_u = δ`.
pub fn sweep_common_drive_cavity_detuning(
    params: &SystemParams,
    delta: &[f64],
    window: &PulsedWindow,
) -> Result<SweepResult> {
    pulsed_sweep(
        params,
        delta,
        window,
        "common drive/cavity detuning sweep",
        |p, d| {
            p.drive.delta_d = d;
            p.delta_u = d;
        },
        "delta_d = delta_u = delta",
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DriveSpec;

    #[test]
    fn undriven_steady_state_is_ground() {
        let mut p = SystemParams::strong_coupling_cw();
        p.drive = DriveSpec::cw(0.0, 0.0);
        let ss = steady_state(&p).unwrap();
        let layout = p.layout().unwrap();
        let g00 = layout.index_of(Level::G, 0, 0);
        for r in 0..layout.total_dim() {
            for c in 0..layout.total_dim() {
                let expect = if r == g00 && c == g00 { 1.0 } else { 0.0 };
                assert_eq!(ss.rho.matrix()[(r, c)], C64::new(expect, 0.0));
            }
        }
    }

    #[test]
    fn strong_coupling_residual_and_validity() {
        let ss = steady_state(&SystemParams::strong_coupling_cw()).unwrap();
        assert!(ss.residual < 1e-10, "{}", ss.residual);
        assert!((ss.rho.trace().re - 1.0).abs() < 1e-12);
        assert!(ss.rho.hermiticity_error() < 1e-10);
        assert!(ss.rho.min_eigenvalue() > -1e-8);
    }

    #[test]
    fn pulsed_mode_is_rejected() {
        let p = SystemParams::experimental().with_pulse(1.0, crate::model::PulseShape::gaussian(10.0, 5.0));
        assert!(steady_state(&p).is_err());
    }

    #[test]
    fn trapped_population_is_named() {
        // the cw drive never repumps g0
        let p = SystemParams::strong_coupling_cw();
        let seeds = [BasisState::new(Level::G, 0, 0), BasisState::new(Level::G0, 0, 0)];
        let err = steady_state_from(&p, &seeds).unwrap_err();
        assert!(err.to_string().contains("|g0,0u,0l⟩"), "{err}");
        assert!(matches!(err, Error::SingularSystem(_)), "{err}");
        assert!(err.to_string().contains("invariant subspaces"), "{err}");
    }

    #[test]
    fn map_rows_are_normalized() {
        let p = SystemParams::strong_coupling_cw();
        let map = kappa_detuning_map(&p, &[0.01, 1.0], &[-12.0, -6.0, 0.0, 6.0, 12.0]).unwrap();
        for row in 0..2 {
            for col in ["n_l_norm", "P_i_norm"] {
                let v = map.row(col, row).unwrap();
                let max = v.iter().cloned().fold(f64::MIN, f64::max);
                assert!((max - 1.0).abs() < 1e-15);
            }
        }
        let mut buf = Vec::new();
        map.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("axis1_name,axis1_value,axis2_name,axis2_value,n_l,P_i,n_l_norm,P_i_norm,residual\n"));
        assert_eq!(text.lines().count(), 11);
    }

    #[test]
    fn one_dimensional_csv_leaves_second_axis_blank() {
        let p = SystemParams::strong_coupling_cw();
        let sweep = sweep_drive_detuning(&p, &[-1.0, 1.0]).unwrap();
        let mut buf = Vec::new();
        sweep.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let second = text.lines().nth(1).unwrap();
        assert!(second.starts_with("delta_d,-1.00000000e0,,,"), "{second}");
    }
}
