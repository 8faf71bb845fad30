//! Dense complex operator algebra on the atom ⊗ cavity_u ⊗ cavity_l space.
//!
//! Basis order is atom-major, then the upper-cavity photon number, then the
//! lower-cavity photon number:
//!
//! ```text
//! index = (level · (n_max_u + 1) + n_u) · (n_max_l + 1) + n_l
//! ```
//!
//! The shipped scenarios use cutoffs ≤ 3, so the full space has at most 48
//! states and dense operator storage is the right tool. Revisit this once
//! `n_max_u, n_max_l ≳ 6` (total_dim ≳ 200, Liouvillian ≳ 4·10⁴ unknowns).

use std::fmt;
use std::io::Write;
use std::ops::{Add, Mul, Sub};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub(crate) const ZERO: C64 = C64::new(0.0, 0.0);
pub(crate) const ONE: C64 = C64::new(1.0, 0.0);

/// Atomic level of the ladder emitter plus the auxiliary ground state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    G0,
    G,
    I,
    E,
}

impl Level {
    pub const ALL: [Level; 4] = [Level::G0, Level::G, Level::I, Level::E];

    pub fn index(self) -> usize {
        match self {
            Level::G0 => 0,
            Level::G => 1,
            Level::I => 2,
            Level::E => 3,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Level::G0 => "g0",
            Level::G => "g",
            Level::I => "i",
            Level::E => "e",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "g0" => Ok(Level::G0),
            "g" => Ok(Level::G),
            "i" => Ok(Level::I),
            "e" => Ok(Level::E),
            other => Err(Error::UnknownLevel(other.to_string())),
        }
    }
}

/// One of the two cavity modes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Cavity on the i–e transition.
    Upper,
    /// Cavity on the g–i transition.
    Lower,
}

impl Mode {
    pub fn suffix(self) -> &'static str {
        match self {
            Mode::Upper => "u",
            Mode::Lower => "l",
        }
    }
}

/// A product basis state `|level, n_u, n_l⟩`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisState {
    pub level: Level,
    pub n_u: usize,
    pub n_l: usize,
}

impl BasisState {
    pub fn new(level: Level, n_u: usize, n_l: usize) -> Self {
        BasisState { level, n_u, n_l }
    }
}

impl fmt::Display for BasisState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "|{},{}u,{}l⟩", self.level, self.n_u, self.n_l)
    }
}

/// Shape of the composite Hilbert space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpaceLayout {
    n_max_u: usize,
    n_max_l: usize,
}

impl SpaceLayout {
    pub fn new(n_max_u: usize, n_max_l: usize) -> Result<Self> {
        if n_max_u == 0 {
            return Err(Error::param("n_max_u", "Fock cutoff must be at least 1"));
        }
        if n_max_l == 0 {
            return Err(Error::param("n_max_l", "Fock cutoff must be at least 1"));
        }
        Ok(SpaceLayout { n_max_u, n_max_l })
    }

    pub fn atomic_levels(&self) -> &'static [Level] {
        &Level::ALL
    }

    pub fn n_max_u(&self) -> usize {
        self.n_max_u
    }

    pub fn n_max_l(&self) -> usize {
        self.n_max_l
    }

    pub fn cutoff(&self, mode: Mode) -> usize {
        match mode {
            Mode::Upper => self.n_max_u,
            Mode::Lower => self.n_max_l,
        }
    }

    pub fn total_dim(&self) -> usize {
        Level::ALL.len() * (self.n_max_u + 1) * (self.n_max_l + 1)
    }

    /// Index of a basis state; `None` if a photon number exceeds its cutoff.
    pub fn encode(&self, state: BasisState) -> Option<usize> {
        if state.n_u > self.n_max_u || state.n_l > self.n_max_l {
            return None;
        }
        Some((state.level.index() * (self.n_max_u + 1) + state.n_u) * (self.n_max_l + 1) + state.n_l)
    }

    pub fn decode(&self, index: usize) -> Option<BasisState> {
        if index >= self.total_dim() {
            return None;
        }
        let nl1 = self.n_max_l + 1;
        let nu1 = self.n_max_u + 1;
        let n_l = index % nl1;
        let rest = index / nl1;
        let n_u = rest % nu1;
        let level = Level::ALL[rest / nu1];
        Some(BasisState { level, n_u, n_l })
    }

    pub(crate) fn index_of(&self, level: Level, n_u: usize, n_l: usize) -> usize {
        self.encode(BasisState::new(level, n_u, n_l))
            .expect("basis state within cutoffs")
    }

    fn check_same(&self, other: &SpaceLayout) -> Result<()> {
        if self != other {
            return Err(Error::LayoutMismatch {
                left: self.to_string(),
                right: other.to_string(),
            });
        }
        Ok(())
    }
}

impl fmt::Display for SpaceLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "4x{}x{}", self.n_max_u + 1, self.n_max_l + 1)
    }
}

/// Operator on a single bosonic mode, before it is lifted to the full space.
#[derive(Clone, Debug, PartialEq)]
pub struct ModeOperator {
    matrix: DMatrix<C64>,
}

impl ModeOperator {
    pub fn from_matrix(matrix: DMatrix<C64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::DimensionMismatch {
                expected: matrix.nrows(),
                actual: matrix.ncols(),
            });
        }
        Ok(ModeOperator { matrix })
    }

    pub fn identity(n_max: usize) -> Self {
        ModeOperator {
            matrix: DMatrix::identity(n_max + 1, n_max + 1),
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn dagger(&self) -> Self {
        ModeOperator {
            matrix: self.matrix.adjoint(),
        }
    }
}

/// Ladder operator `a` truncated at `n_max` photons.
pub fn annihilation(n_max: usize) -> Result<ModeOperator> {
    if n_max == 0 {
        return Err(Error::param("n_max", "Fock cutoff must be at least 1"));
    }
    let mut m = DMatrix::zeros(n_max + 1, n_max + 1);
    for n in 1..=n_max {
        m[(n - 1, n)] = C64::new((n as f64).sqrt(), 0.0);
    }
    Ok(ModeOperator { matrix: m })
}

/// Dense operator on the full space.
#[derive(Clone, Debug, PartialEq)]
pub struct Operator {
    layout: SpaceLayout,
    matrix: DMatrix<C64>,
}

impl Operator {
    pub fn from_matrix(layout: SpaceLayout, matrix: DMatrix<C64>) -> Result<Self> {
        let d = layout.total_dim();
        if matrix.nrows() != d || matrix.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: matrix.nrows().max(matrix.ncols()),
            });
        }
        Ok(Operator { layout, matrix })
    }

    pub fn zeros(layout: SpaceLayout) -> Self {
        let d = layout.total_dim();
        Operator {
            layout,
            matrix: DMatrix::zeros(d, d),
        }
    }

    pub fn identity(layout: SpaceLayout) -> Self {
        let d = layout.total_dim();
        Operator {
            layout,
            matrix: DMatrix::identity(d, d),
        }
    }

    /// Projector `|level⟩⟨level| ⊗ 1 ⊗ 1`.
    pub fn projector(layout: SpaceLayout, level: Level) -> Self {
        let mut op = Operator::zeros(layout);
        for n_u in 0..=layout.n_max_u {
            for n_l in 0..=layout.n_max_l {
                let k = layout.index_of(level, n_u, n_l);
                op.matrix[(k, k)] = ONE;
            }
        }
        op
    }

    /// Photon-number operator `a†a` of one mode.
    pub fn number(layout: SpaceLayout, mode: Mode) -> Self {
        let mut op = Operator::zeros(layout);
        for k in 0..layout.total_dim() {
            let s = layout.decode(k).expect("index in range");
            let n = match mode {
                Mode::Upper => s.n_u,
                Mode::Lower => s.n_l,
            };
            op.matrix[(k, k)] = C64::new(n as f64, 0.0);
        }
        op
    }

    /// Annihilation operator of one mode, lifted to the full space.
    pub fn lowering(layout: SpaceLayout, mode: Mode) -> Self {
        let a = annihilation(layout.cutoff(mode)).expect("layout cutoffs are ≥ 1");
        embed(&a, mode, layout).expect("dimension matches layout")
    }

    pub fn layout(&self) -> SpaceLayout {
        self.layout
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn element(&self, bra: BasisState, ket: BasisState) -> C64 {
        match (self.layout.encode(bra), self.layout.encode(ket)) {
            (Some(r), Some(c)) => self.matrix[(r, c)],
            _ => ZERO,
        }
    }

    pub fn dagger(&self) -> Self {
        Operator {
            layout: self.layout,
            matrix: self.matrix.adjoint(),
        }
    }

    pub fn scale(&self, s: C64) -> Self {
        Operator {
            layout: self.layout,
            matrix: &self.matrix * s,
        }
    }

    pub fn scale_real(&self, s: f64) -> Self {
        self.scale(C64::new(s, 0.0))
    }

    pub fn try_mul(&self, rhs: &Operator) -> Result<Operator> {
        self.layout.check_same(&rhs.layout)?;
        Ok(Operator {
            layout: self.layout,
            matrix: &self.matrix * &rhs.matrix,
        })
    }

    pub fn try_add(&self, rhs: &Operator) -> Result<Operator> {
        self.layout.check_same(&rhs.layout)?;
        Ok(Operator {
            layout: self.layout,
            matrix: &self.matrix + &rhs.matrix,
        })
    }

    pub fn commutator(&self, rhs: &Operator) -> Result<Operator> {
        self.layout.check_same(&rhs.layout)?;
        Ok(Operator {
            layout: self.layout,
            matrix: &self.matrix * &rhs.matrix - &rhs.matrix * &self.matrix,
        })
    }

    /// Largest absolute matrix element.
    pub fn max_abs(&self) -> f64 {
        self.matrix.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// `max |A − A†|` elementwise.
    pub fn hermiticity_error(&self) -> f64 {
        hermiticity_error(&self.matrix)
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_error() <= tol
    }

    pub fn apply(&self, state: &StateVector) -> Result<StateVector> {
        self.layout.check_same(&state.layout)?;
        Ok(StateVector {
            layout: self.layout,
            amplitudes: &self.matrix * &state.amplitudes,
        })
    }

    /// Plain-text dump: one row per line, entries `re,im` separated by spaces.
    pub fn write_dump<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# layout {} dim {}", self.layout, self.dim())?;
        for r in 0..self.dim() {
            let row: Vec<String> = (0..self.dim())
                .map(|c| {
                    let z = self.matrix[(r, c)];
                    format!("{:e},{:e}", z.re, z.im)
                })
                .collect();
            writeln!(w, "{}", row.join(" "))?;
        }
        Ok(())
    }
}

impl<'a> Mul<&'a Operator> for &'a Operator {
    type Output = Operator;

    /// Panics on layout mismatch; use [`Operator::try_mul`] for fallible code.
    fn mul(self, rhs: &'a Operator) -> Operator {
        self.try_mul(rhs).expect("operator layouts must match")
    }
}

impl<'a> Add<&'a Operator> for &'a Operator {
    type Output = Operator;

    fn add(self, rhs: &'a Operator) -> Operator {
        self.try_add(rhs).expect("operator layouts must match")
    }
}

impl<'a> Sub<&'a Operator> for &'a Operator {
    type Output = Operator;

    fn sub(self, rhs: &'a Operator) -> Operator {
        self.layout.check_same(&rhs.layout).expect("operator layouts must match");
        Operator {
            layout: self.layout,
            matrix: &self.matrix - &rhs.matrix,
        }
    }
}

pub(crate) fn hermiticity_error(m: &DMatrix<C64>) -> f64 {
    let n = m.nrows();
    let mut worst: f64 = 0.0;
    for r in 0..n {
        for c in r..n {
            worst = worst.max((m[(r, c)] - m[(c, r)].conj()).norm());
        }
    }
    worst
}

/// Atomic operator `|ket⟩⟨bra| ⊗ 1 ⊗ 1`.
///
/// `transition(layout, Level::G, Level::I)` is σ_gi, which takes `|i⟩` to `|g⟩`.
pub fn transition(layout: SpaceLayout, ket: Level, bra: Level) -> Result<Operator> {
    if ket == bra {
        return Err(Error::param(
            "transition",
            format!("levels must differ (got {ket} twice); use Operator::projector"),
        ));
    }
    Ok(atomic_outer(layout, ket, bra))
}

/// Like [`transition`] but taking level labels.
pub fn transition_by_label(layout: SpaceLayout, ket: &str, bra: &str) -> Result<Operator> {
    transition(layout, ket.parse()?, bra.parse()?)
}

pub(crate) fn atomic_outer(layout: SpaceLayout, ket: Level, bra: Level) -> Operator {
    let mut op = Operator::zeros(layout);
    for n_u in 0..=layout.n_max_u {
        for n_l in 0..=layout.n_max_l {
            let r = layout.index_of(ket, n_u, n_l);
            let c = layout.index_of(bra, n_u, n_l);
            op.matrix[(r, c)] = ONE;
        }
    }
    op
}

/// Lift a single-mode operator into the full space (identity elsewhere).
pub fn embed(single: &ModeOperator, slot: Mode, layout: SpaceLayout) -> Result<Operator> {
    let expected = layout.cutoff(slot) + 1;
    if single.dim() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            actual: single.dim(),
        });
    }
    let d = layout.total_dim();
    let mut m = DMatrix::zeros(d, d);
    for r in 0..d {
        let sr = layout.decode(r).expect("index in range");
        for c in 0..d {
            let sc = layout.decode(c).expect("index in range");
            if sr.level != sc.level {
                continue;
            }
            let v = match slot {
                Mode::Upper if sr.n_l == sc.n_l => single.matrix[(sr.n_u, sc.n_u)],
                Mode::Lower if sr.n_u == sc.n_u => single.matrix[(sr.n_l, sc.n_l)],
                _ => continue,
            };
            m[(r, c)] = v;
        }
    }
    Ok(Operator { layout, matrix: m })
}

/// Pure state amplitudes.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    layout: SpaceLayout,
    amplitudes: DVector<C64>,
}

impl StateVector {
    pub fn basis(layout: SpaceLayout, state: BasisState) -> Result<Self> {
        let k = layout
            .encode(state)
            .ok_or_else(|| Error::param("state", format!("{state} exceeds the Fock cutoffs")))?;
        let mut amplitudes = DVector::zeros(layout.total_dim());
        amplitudes[k] = ONE;
        Ok(StateVector { layout, amplitudes })
    }

    pub fn from_amplitudes(layout: SpaceLayout, amplitudes: DVector<C64>) -> Result<Self> {
        if amplitudes.len() != layout.total_dim() {
            return Err(Error::DimensionMismatch {
                expected: layout.total_dim(),
                actual: amplitudes.len(),
            });
        }
        Ok(StateVector { layout, amplitudes })
    }

    pub fn layout(&self) -> SpaceLayout {
        self.layout
    }

    pub fn amplitudes(&self) -> &DVector<C64> {
        &self.amplitudes
    }

    pub fn amplitude(&self, state: BasisState) -> C64 {
        self.layout
            .encode(state)
            .map(|k| self.amplitudes[k])
            .unwrap_or(ZERO)
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &StateVector) -> Result<C64> {
        self.layout.check_same(&other.layout)?;
        Ok(self.amplitudes.dotc(&other.amplitudes))
    }
}

/// Density matrix over a layout.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    layout: SpaceLayout,
    matrix: DMatrix<C64>,
}

impl DensityMatrix {
    pub fn from_matrix(layout: SpaceLayout, matrix: DMatrix<C64>) -> Result<Self> {
        let d = layout.total_dim();
        if matrix.nrows() != d || matrix.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: matrix.nrows().max(matrix.ncols()),
            });
        }
        Ok(DensityMatrix { layout, matrix })
    }

    pub fn pure(state: &StateVector) -> Self {
        let v = &state.amplitudes;
        DensityMatrix {
            layout: state.layout,
            matrix: v * v.adjoint(),
        }
    }

    pub fn basis(layout: SpaceLayout, state: BasisState) -> Result<Self> {
        Ok(Self::pure(&StateVector::basis(layout, state)?))
    }

    pub fn layout(&self) -> SpaceLayout {
        self.layout
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn trace(&self) -> C64 {
        self.matrix.trace()
    }

    pub fn hermiticity_error(&self) -> f64 {
        hermiticity_error(&self.matrix)
    }

    /// Smallest eigenvalue of the Hermitian part.
    pub fn min_eigenvalue(&self) -> f64 {
        let h = (&self.matrix + self.matrix.adjoint()) * C64::new(0.5, 0.0);
        h.symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn population(&self, level: Level) -> f64 {
        let mut p = 0.0;
        for n_u in 0..=self.layout.n_max_u {
            for n_l in 0..=self.layout.n_max_l {
                let k = self.layout.index_of(level, n_u, n_l);
                p += self.matrix[(k, k)].re;
            }
        }
        p
    }

    pub fn mean_photons(&self, mode: Mode) -> f64 {
        (0..self.layout.total_dim())
            .map(|k| {
                let s = self.layout.decode(k).expect("index in range");
                let n = match mode {
                    Mode::Upper => s.n_u,
                    Mode::Lower => s.n_l,
                };
                n as f64 * self.matrix[(k, k)].re
            })
            .sum()
    }

    /// Largest elementwise deviation from another density matrix.
    pub fn max_abs_diff(&self, other: &DensityMatrix) -> Result<f64> {
        self.layout.check_same(&other.layout)?;
        Ok((&self.matrix - &other.matrix)
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max))
    }
}

/// `Tr(ρ · O)`.
pub fn expectation(rho: &DensityMatrix, obs: &Operator) -> Result<C64> {
    rho.layout.check_same(&obs.layout)?;
    let n = rho.matrix.nrows();
    let mut acc = ZERO;
    for r in 0..n {
        for c in 0..n {
            acc += rho.matrix[(r, c)] * obs.matrix[(c, r)];
        }
    }
    Ok(acc)
}
