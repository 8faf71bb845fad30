//! Liouvillian superoperator on the dynamically reachable subspace.
//!
//! Density matrices are vectorized row-major on the retained basis: entry
//! `ρ_ab` of the `d×d` restricted matrix sits at `a·d + b`. The generator is
//! `L(t) = L_static + f(t)·L_drive`, where `f` is the pulse envelope in rad/µs
//! and times are in µs.

use std::collections::VecDeque;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{
    angular, build_static_hamiltonian, collapse_channels, drive_coupling_shape,
    drive_detuning_term, DriveMode, PulseShape, SystemParams,
};
use crate::qspace::{DensityMatrix, Operator, SpaceLayout, C64, ZERO};

const I: C64 = C64::new(0.0, 1.0);

/// Compressed sparse row matrix.
#[derive(Clone, Debug)]
pub struct Csr {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<C64>,
}

impl Csr {
    /// Build from `(row, col, value)` triplets; duplicates are summed and
    /// exact zeros dropped.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, C64)>) -> Self {
        triplets.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut indptr = vec![0usize; n + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values: Vec<C64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        let mut rows = Vec::with_capacity(triplets.len());
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                indices.push(c);
                values.push(v);
                rows.push(r);
                last = Some((r, c));
            }
        }
        let mut keep_idx = Vec::with_capacity(indices.len());
        let mut keep_val = Vec::with_capacity(values.len());
        for ((r, c), v) in rows.into_iter().zip(indices).zip(values) {
            if v != ZERO {
                indptr[r + 1] += 1;
                keep_idx.push(c);
                keep_val.push(v);
            }
        }
        for r in 0..n {
            indptr[r + 1] += indptr[r];
        }
        Csr {
            n,
            indptr,
            indices: keep_idx,
            values: keep_val,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// `y += alpha · A x`.
    pub fn mul_add(&self, alpha: C64, x: &[C64], y: &mut [C64]) {
        for (r, out) in y.iter_mut().enumerate().take(self.n) {
            let mut acc = ZERO;
            for k in self.indptr[r]..self.indptr[r + 1] {
                acc += self.values[k] * x[self.indices[k]];
            }
            *out += alpha * acc;
        }
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, C64)> + '_ {
        (self.indptr[r]..self.indptr[r + 1]).map(move |k| (self.indices[k], self.values[k]))
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for r in 0..self.n {
            for (c, v) in self.row(r) {
                m[(r, c)] += v;
            }
        }
        m
    }
}

#[derive(Clone, Copy, Debug)]
struct Envelope {
    peak: f64,
    center_us: f64,
    fwhm_us: f64,
}

impl Envelope {
    fn at(&self, t_us: f64) -> f64 {
        let x = (t_us - self.center_us) / self.fwhm_us;
        self.peak * (-4.0 * std::f64::consts::LN_2 * x * x).exp()
    }
}

/// Liouvillian of one scenario, restricted to the basis states connected to
/// the seeds.
#[derive(Clone, Debug)]
pub struct Generator {
    layout: SpaceLayout,
    basis: Vec<usize>,
    position: Vec<Option<usize>>,
    static_part: Csr,
    drive_part: Option<(Csr, Envelope)>,
}

fn nonzeros(m: &DMatrix<C64>) -> Vec<(usize, usize, C64)> {
    let mut out = Vec::new();
    for c in 0..m.ncols() {
        for r in 0..m.nrows() {
            let v = m[(r, c)];
            if v != ZERO {
                out.push((r, c, v));
            }
        }
    }
    out
}

impl Generator {
    /// Generator on the full Hilbert space.
    pub fn full(params: &SystemParams) -> Result<Self> {
        let layout = params.layout()?;
        let all: Vec<usize> = (0..layout.total_dim()).collect();
        Self::build(params, Some(all), &[], &[])
    }

    /// Generator on the closure of `seeds` under the Hamiltonian and drive
    /// couplings, the forward action of the collapse operators, and both
    /// directions of every `extra` operator.
    ///
    /// The closure is exact: no matrix element of the model connects it to
    /// the discarded states.
    pub fn reachable(params: &SystemParams, seeds: &[usize], extra: &[&Operator]) -> Result<Self> {
        Self::build(params, None, seeds, extra)
    }

    fn build(
        params: &SystemParams,
        basis: Option<Vec<usize>>,
        seeds: &[usize],
        extra: &[&Operator],
    ) -> Result<Self> {
        params.validate()?;
        let layout = params.layout()?;
        let dim = layout.total_dim();

        let mut h = build_static_hamiltonian(params)?;
        if params.drive.mode != DriveMode::None {
            h = &h + &drive_detuning_term(params, layout);
        }
        let shape = drive_coupling_shape(layout, params.drive.mode);
        let (static_drive, pulsed) = match (params.drive.mode, &shape, params.drive.pulse) {
            (DriveMode::CwGE, Some(s), _) => (Some(s.scale_real(angular(params.drive.omega_d))), None),
            (DriveMode::PulsedG0E, Some(s), Some(p)) => (None, Some((s.clone(), p))),
            _ => (None, None),
        };
        if let Some(v) = &static_drive {
            h = &h + v;
        }
        let channels = collapse_channels(params)?;

        for op in extra {
            if op.layout() != layout {
                return Err(Error::LayoutMismatch {
                    left: layout.to_string(),
                    right: op.layout().to_string(),
                });
            }
        }

        let basis = match basis {
            Some(b) => b,
            None => {
                let mut adjacency = vec![Vec::new(); dim];
                let mut link = |m: &DMatrix<C64>, both: bool| {
                    for (r, c, _) in nonzeros(m) {
                        if r != c {
                            adjacency[c].push(r);
                            if both {
                                adjacency[r].push(c);
                            }
                        }
                    }
                };
                link(h.matrix(), true);
                if let Some((s, _)) = &pulsed {
                    link(s.matrix(), true);
                }
                for ch in &channels {
                    link(ch.operator.matrix(), false);
                }
                for op in extra {
                    link(op.matrix(), true);
                }
                let mut seen = vec![false; dim];
                let mut queue = VecDeque::new();
                for &s in seeds {
                    if s >= dim {
                        return Err(Error::DimensionMismatch {
                            expected: dim,
                            actual: s,
                        });
                    }
                    if !seen[s] {
                        seen[s] = true;
                        queue.push_back(s);
                    }
                }
                while let Some(a) = queue.pop_front() {
                    for &b in &adjacency[a] {
                        if !seen[b] {
                            seen[b] = true;
                            queue.push_back(b);
                        }
                    }
                }
                (0..dim).filter(|&k| seen[k]).collect()
            }
        };
        let mut position = vec![None; dim];
        for (k, &b) in basis.iter().enumerate() {
            position[b] = Some(k);
        }

        let restrict = |m: &DMatrix<C64>| DMatrix::from_fn(basis.len(), basis.len(), |r, c| m[(basis[r], basis[c])]);
        let h_r = restrict(h.matrix());
        let jumps: Vec<DMatrix<C64>> = channels.iter().map(|c| restrict(c.operator.matrix())).collect();
        let static_part = liouvillian(&h_r, &jumps);
        let drive_part = pulsed.map(|(s, p): (Operator, PulseShape)| {
            let csr = liouvillian(&restrict(s.matrix()), &[]);
            let env = Envelope {
                peak: angular(params.drive.omega_d),
                center_us: p.center_ns * 1e-3,
                fwhm_us: p.fwhm_ns * 1e-3,
            };
            (csr, env)
        });

        Ok(Generator {
            layout,
            basis,
            position,
            static_part,
            drive_part,
        })
    }

    pub fn layout(&self) -> SpaceLayout {
        self.layout
    }

    /// Retained full-space basis indices, ascending.
    pub fn basis(&self) -> &[usize] {
        &self.basis
    }

    /// Number of retained basis states `d`.
    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    /// Length `d²` of a vectorized density matrix.
    pub fn vec_dim(&self) -> usize {
        self.basis.len() * self.basis.len()
    }

    pub fn is_time_dependent(&self) -> bool {
        self.drive_part.is_some()
    }

    pub fn static_part(&self) -> &Csr {
        &self.static_part
    }

    /// Drive coefficient `f(t)` (rad/µs) multiplying the drive superoperator.
    pub fn drive_coefficient(&self, t_us: f64) -> f64 {
        self.drive_part.as_ref().map_or(0.0, |(_, e)| e.at(t_us))
    }

    /// Step-size cap that keeps the integrator from striding over the pulse.
    pub fn pulse_step_limit(&self, t_us: f64) -> f64 {
        match &self.drive_part {
            Some((_, env)) if t_us < env.center_us + 3.0 * env.fwhm_us => env.fwhm_us / 8.0,
            _ => f64::INFINITY,
        }
    }

    /// `dx = L(t) x`.
    pub fn apply(&self, t_us: f64, x: &[C64], dx: &mut [C64]) {
        dx.iter_mut().for_each(|v| *v = ZERO);
        self.static_part.mul_add(C64::new(1.0, 0.0), x, dx);
        if let Some((csr, env)) = &self.drive_part {
            let f = env.at(t_us);
            if f != 0.0 {
                csr.mul_add(C64::new(f, 0.0), x, dx);
            }
        }
    }

    /// Dense `d²×d²` matrix of `L(t)`.
    pub fn dense(&self, t_us: f64) -> DMatrix<C64> {
        let mut m = self.static_part.to_dense();
        if let Some((csr, env)) = &self.drive_part {
            m += csr.to_dense() * C64::new(env.at(t_us), 0.0);
        }
        m
    }

    /// Position of a full-space index in the retained basis.
    pub fn position(&self, full_index: usize) -> Option<usize> {
        self.position.get(full_index).copied().flatten()
    }

    /// Restrict a full-space matrix to the retained basis.
    pub fn restrict(&self, m: &DMatrix<C64>) -> DMatrix<C64> {
        let d = self.dim();
        DMatrix::from_fn(d, d, |r, c| m[(self.basis[r], self.basis[c])])
    }

    /// Vectorize a density matrix; weight outside the retained basis is an
    /// error because the dynamics would not conserve it.
    pub fn vectorize(&self, rho: &DensityMatrix) -> Result<Vec<C64>> {
        let m = rho.matrix();
        let full = self.layout.total_dim();
        if m.nrows() != full {
            return Err(Error::DimensionMismatch {
                expected: full,
                actual: m.nrows(),
            });
        }
        for r in 0..full {
            for c in 0..full {
                if m[(r, c)] != ZERO && (self.position(r).is_none() || self.position(c).is_none()) {
                    return Err(Error::param(
                        "initial_state",
                        "state has weight outside the generator's reachable subspace",
                    ));
                }
            }
        }
        Ok(self.vectorize_reduced(&self.restrict(m)))
    }

    pub fn vectorize_reduced(&self, m: &DMatrix<C64>) -> Vec<C64> {
        let d = self.dim();
        let mut out = Vec::with_capacity(d * d);
        for a in 0..d {
            for b in 0..d {
                out.push(m[(a, b)]);
            }
        }
        out
    }

    pub fn unvectorize_reduced(&self, x: &[C64]) -> DMatrix<C64> {
        let d = self.dim();
        DMatrix::from_fn(d, d, |a, b| x[a * d + b])
    }

    /// Embed a vectorized state back into the full Hilbert space.
    pub fn expand(&self, x: &[C64]) -> DensityMatrix {
        let full = self.layout.total_dim();
        let d = self.dim();
        let mut m = DMatrix::zeros(full, full);
        for a in 0..d {
            for b in 0..d {
                m[(self.basis[a], self.basis[b])] = x[a * d + b];
            }
        }
        DensityMatrix::from_matrix(self.layout, m).expect("layout matches by construction")
    }

    pub fn trace(&self, x: &[C64]) -> C64 {
        let d = self.dim();
        (0..d).map(|a| x[a * d + a]).sum()
    }

    /// `Tr(O X)` for an operator already restricted to the retained basis.
    pub fn expect_reduced(&self, obs: &DMatrix<C64>, x: &[C64]) -> C64 {
        let d = self.dim();
        let mut acc = ZERO;
        for a in 0..d {
            for b in 0..d {
                let o = obs[(b, a)];
                if o != ZERO {
                    acc += o * x[a * d + b];
                }
            }
        }
        acc
    }

    /// Indices (into the vectorized state) of the even "charge" sector that
    /// contains every population. For time-independent generators it
    /// decouples exactly from the remaining coherences.
    pub fn population_sector(&self) -> Vec<usize> {
        let n = self.vec_dim();
        let d = self.dim();
        let mut adjacency = vec![Vec::new(); n];
        let mut add = |csr: &Csr| {
            for r in 0..n {
                for (c, _) in csr.row(r) {
                    if r != c {
                        adjacency[r].push(c);
                        adjacency[c].push(r);
                    }
                }
            }
        };
        add(&self.static_part);
        if let Some((csr, _)) = &self.drive_part {
            add(csr);
        }
        let mut seen = vec![false; n];
        let mut queue: VecDeque<usize> = (0..d).map(|a| a * d + a).collect();
        for &k in &queue {
            seen[k] = true;
        }
        while let Some(k) = queue.pop_front() {
            for &j in &adjacency[k] {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        (0..n).filter(|&k| seen[k]).collect()
    }
}

/// `L X = −i(H_eff X − X H_eff†) + Σ c X c†` with `H_eff = H − (i/2)Σ c†c`.
fn liouvillian(h: &DMatrix<C64>, jumps: &[DMatrix<C64>]) -> Csr {
    let d = h.nrows();
    let mut h_eff = h.clone();
    for c in jumps {
        h_eff -= c.adjoint() * c * C64::new(0.0, 0.5);
    }
    let heff_nz = nonzeros(&h_eff);
    let mut trip = Vec::new();
    // −i H_eff X: row (a,b) ← (c,b)
    for &(a, c, v) in &heff_nz {
        for b in 0..d {
            trip.push((a * d + b, c * d + b, -I * v));
        }
    }
    // +i X H_eff†: (X H_eff†)_ab = Σ_c X_ac conj(H_eff[b,c])
    for &(b, c, v) in &heff_nz {
        for a in 0..d {
            trip.push((a * d + b, a * d + c, I * v.conj()));
        }
    }
    for jump in jumps {
        let nz = nonzeros(jump);
        for &(a, c, u) in &nz {
            for &(b, e, w) in &nz {
                trip.push((a * d + b, c * d + e, u * w.conj()));
            }
        }
    }
    Csr::from_triplets(d * d, trip)
}
