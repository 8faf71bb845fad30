//! Physical parameters, Hamiltonian and dissipation channels, and closed-form
//! analytics of the ladder emitter.
//!
//! Inputs are linear frequencies in MHz (a rate `r` stands for `2π·r` rad/µs)
//! and times in ns. Operators built here are in angular units of rad/µs.

use std::f64::consts::{LN_2, PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qspace::{
    atomic_outer, BasisState, Level, Mode, Operator, SpaceLayout, StateVector, C64,
};

/// `2π·mhz`, in rad/µs.
pub fn angular(mhz: f64) -> f64 {
    TAU * mhz
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DriveMode {
    /// Gaussian pulse on g0–e (cavity-STIRAP and single-shot pair emission).
    #[serde(rename = "pulsed_g0_e")]
    PulsedG0E,
    /// Continuous drive on g–e (cycling emission, steady state).
    #[serde(rename = "cw_g_e")]
    CwGE,
    #[default]
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PulseKind {
    #[default]
    Gaussian,
}

/// Temporal envelope of the pulsed drive; the peak comes from [`DriveSpec::omega_d`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseShape {
    #[serde(default)]
    pub kind: PulseKind,
    pub center_ns: f64,
    /// Full width at half maximum of the Rabi-frequency envelope.
    pub fwhm_ns: f64,
}

impl PulseShape {
    pub fn gaussian(center_ns: f64, fwhm_ns: f64) -> Self {
        PulseShape {
            kind: PulseKind::Gaussian,
            center_ns,
            fwhm_ns,
        }
    }

    /// Envelope value in `[0, 1]`.
    pub fn envelope(&self, t_ns: f64) -> f64 {
        let x = (t_ns - self.center_ns) / self.fwhm_ns;
        (-4.0 * LN_2 * x * x).exp()
    }

    /// `∫ envelope dt` in ns.
    pub fn area_ns(&self) -> f64 {
        self.fwhm_ns * (PI / (4.0 * LN_2)).sqrt()
    }

    /// Time after which the envelope is below ~1e-11 of its peak.
    pub fn end_ns(&self) -> f64 {
        self.center_ns + 3.0 * self.fwhm_ns
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct DriveSpec {
    pub mode: DriveMode,
    /// Peak Rabi frequency (MHz).
    #[serde(default)]
    pub omega_d: f64,
    /// Drive detuning (MHz).
    #[serde(default)]
    pub delta_d: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pulse: Option<PulseShape>,
}

impl DriveSpec {
    pub fn pulsed(omega_d: f64, pulse: PulseShape) -> Self {
        DriveSpec {
            mode: DriveMode::PulsedG0E,
            omega_d,
            delta_d: 0.0,
            pulse: Some(pulse),
        }
    }

    pub fn cw(omega_d: f64, delta_d: f64) -> Self {
        DriveSpec {
            mode: DriveMode::CwGE,
            omega_d,
            delta_d,
            pulse: None,
        }
    }

    /// Rabi frequency (MHz) at time `t_ns`.
    pub fn omega_at(&self, t_ns: f64) -> f64 {
        match (self.mode, self.pulse) {
            (DriveMode::PulsedG0E, Some(p)) => self.omega_d * p.envelope(t_ns),
            (DriveMode::CwGE, _) => self.omega_d,
            _ => 0.0,
        }
    }
}

/// Fiber-collection factors downstream of the cavity mode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollectionParams {
    pub eta_oc_u: f64,
    pub eta_oc_l: f64,
    pub eta_mm_u: f64,
    pub eta_mm_l: f64,
}

impl Default for CollectionParams {
    fn default() -> Self {
        CollectionParams {
            eta_oc_u: 1.0,
            eta_oc_l: 1.0,
            eta_mm_u: 1.0,
            eta_mm_l: 1.0,
        }
    }
}

impl CollectionParams {
    /// Outcoupling and mode-matching values of the two fiber cavities.
    pub fn experimental() -> Self {
        CollectionParams {
            eta_oc_u: 0.79,
            eta_oc_l: 0.85,
            eta_mm_u: 0.94,
            eta_mm_l: 0.81,
        }
    }

    /// Product `η_oc · η_mm` for one channel.
    pub fn factor(&self, mode: Mode) -> f64 {
        match mode {
            Mode::Upper => self.eta_oc_u * self.eta_mm_u,
            Mode::Lower => self.eta_oc_l * self.eta_mm_l,
        }
    }
}

fn default_cutoff() -> usize {
    2
}

/// Everything needed to build the generator of one scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemParams {
    pub g_u: f64,
    pub g_l: f64,
    pub kappa_u: f64,
    pub kappa_l: f64,
    pub gamma_u: f64,
    pub gamma_l: f64,
    #[serde(default)]
    pub delta_u: f64,
    #[serde(default)]
    pub delta_l: f64,
    #[serde(default)]
    pub drive: DriveSpec,
    #[serde(default = "default_cutoff")]
    pub n_max_u: usize,
    #[serde(default = "default_cutoff")]
    pub n_max_l: usize,
    #[serde(default)]
    pub collection: CollectionParams,
}

impl SystemParams {
    /// Couplings and decay rates of the experiment, without a drive.
    pub fn experimental() -> Self {
        SystemParams {
            g_u: 4.0,
            g_l: 21.9,
            kappa_u: 30.0,
            kappa_l: 60.0,
            gamma_u: 0.33,
            gamma_l: 3.0,
            delta_u: 0.0,
            delta_l: 0.0,
            drive: DriveSpec::default(),
            n_max_u: 2,
            n_max_l: 2,
            collection: CollectionParams::experimental(),
        }
    }

    /// Strong-coupling cycling configuration with a weak cw g–e drive.
    pub fn strong_coupling_cw() -> Self {
        SystemParams {
            g_u: 10.0,
            g_l: 1.0,
            kappa_u: 0.01,
            kappa_l: 0.1,
            gamma_u: 1.0,
            gamma_l: 2.0,
            delta_u: 0.0,
            delta_l: 0.0,
            drive: DriveSpec::cw(0.1, 0.0),
            n_max_u: 2,
            n_max_l: 2,
            collection: CollectionParams::default(),
        }
    }

    /// Nearly lossless cavity-STIRAP configuration with a 2 µs pulse; the
    /// drive amplitude is left at zero for the caller to set.
    pub fn cavity_stirap() -> Self {
        SystemParams {
            g_u: 10.0,
            g_l: 1.0,
            kappa_u: 1e-10,
            kappa_l: 1e-10,
            gamma_u: 1e-3,
            gamma_l: 1e-2,
            delta_u: 0.0,
            delta_l: 0.0,
            drive: DriveSpec::pulsed(0.0, PulseShape::gaussian(3000.0, 2000.0)),
            n_max_u: 2,
            n_max_l: 2,
            collection: CollectionParams::default(),
        }
    }

    pub fn layout(&self) -> Result<SpaceLayout> {
        SpaceLayout::new(self.n_max_u, self.n_max_l)
    }

    pub fn with_pulse(mut self, omega_d: f64, pulse: PulseShape) -> Self {
        self.drive = DriveSpec::pulsed(omega_d, pulse);
        self
    }

    /// Check the type invariants; the error names the offending field.
    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("g_u", self.g_u),
            ("g_l", self.g_l),
            ("kappa_u", self.kappa_u),
            ("kappa_l", self.kappa_l),
            ("gamma_u", self.gamma_u),
            ("gamma_l", self.gamma_l),
            ("drive.omega_d", self.drive.omega_d),
        ];
        for (name, v) in rates {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::param(name, format!("must be finite and ≥ 0, got {v}")));
            }
        }
        for (name, v) in [
            ("delta_u", self.delta_u),
            ("delta_l", self.delta_l),
            ("drive.delta_d", self.drive.delta_d),
        ] {
            if !v.is_finite() {
                return Err(Error::param(name, "must be finite"));
            }
        }
        if self.n_max_u == 0 {
            return Err(Error::param("n_max_u", "Fock cutoff must be at least 1"));
        }
        if self.n_max_l == 0 {
            return Err(Error::param("n_max_l", "Fock cutoff must be at least 1"));
        }
        let c = &self.collection;
        for (name, v) in [
            ("collection.eta_oc_u", c.eta_oc_u),
            ("collection.eta_oc_l", c.eta_oc_l),
            ("collection.eta_mm_u", c.eta_mm_u),
            ("collection.eta_mm_l", c.eta_mm_l),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::param(name, format!("must lie in [0, 1], got {v}")));
            }
        }
        match (self.drive.mode, self.drive.pulse) {
            (DriveMode::PulsedG0E, None) => {
                return Err(Error::param("drive.pulse", "pulsed mode requires a pulse shape"))
            }
            (DriveMode::CwGE, Some(_)) => {
                return Err(Error::param("drive.pulse", "cw mode does not take a pulse shape"))
            }
            (_, Some(p)) => {
                if !(p.fwhm_ns.is_finite() && p.fwhm_ns > 0.0) {
                    return Err(Error::param("drive.pulse.fwhm_ns", "must be > 0"));
                }
                if !p.center_ns.is_finite() {
                    return Err(Error::param("drive.pulse.center_ns", "must be finite"));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// `H0 = g_l a_l†σ_gi + g_u a_u†σ_ie + H.c. + Δ_l a_l†a_l + Δ_u a_u†a_u` (rad/µs).
pub fn build_static_hamiltonian(params: &SystemParams) -> Result<Operator> {
    params.validate()?;
    let layout = params.layout()?;
    let a_u = Operator::lowering(layout, Mode::Upper);
    let a_l = Operator::lowering(layout, Mode::Lower);
    let s_gi = atomic_outer(layout, Level::G, Level::I);
    let s_ie = atomic_outer(layout, Level::I, Level::E);

    let lower = (&a_l.dagger() * &s_gi).scale_real(angular(params.g_l));
    let upper = (&a_u.dagger() * &s_ie).scale_real(angular(params.g_u));
    let coupling = &lower + &upper;
    let mut h = &coupling + &coupling.dagger();
    if params.delta_l != 0.0 {
        h = &h + &Operator::number(layout, Mode::Lower).scale_real(angular(params.delta_l));
    }
    if params.delta_u != 0.0 {
        h = &h + &Operator::number(layout, Mode::Upper).scale_real(angular(params.delta_u));
    }
    Ok(h)
}

/// Hermitian `σ + σ†` coupling the drive acts through, with unit amplitude.
pub(crate) fn drive_coupling_shape(layout: SpaceLayout, mode: DriveMode) -> Option<Operator> {
    let (lower, upper) = match mode {
        DriveMode::PulsedG0E => (Level::G0, Level::E),
        DriveMode::CwGE => (Level::G, Level::E),
        DriveMode::None => return None,
    };
    let s = atomic_outer(layout, lower, upper);
    Some(&s + &s.dagger())
}

/// `−Δ_D(σ_ee + a_u†a_u)` in rad/µs.
pub(crate) fn drive_detuning_term(params: &SystemParams, layout: SpaceLayout) -> Operator {
    let ee = Operator::projector(layout, Level::E);
    let nu = Operator::number(layout, Mode::Upper);
    (&ee + &nu).scale_real(-angular(params.drive.delta_d))
}

/// Drive term `V(t) = Ω_D(t)(σ + σ†) − Δ_D(σ_ee + a_u†a_u)` (rad/µs).
pub fn build_drive_term(params: &SystemParams, t_ns: f64) -> Result<Operator> {
    params.validate()?;
    let layout = params.layout()?;
    let shape = drive_coupling_shape(layout, params.drive.mode).ok_or(Error::NoDrive)?;
    let omega = angular(params.drive.omega_at(t_ns));
    Ok(&shape.scale_real(omega) + &drive_detuning_term(params, layout))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelLabel {
    CavityU,
    CavityL,
    DipoleU,
    DipoleL,
}

/// Lindblad jump operator `c`, entering as `c ρ c† − ½{c†c, ρ}`.
#[derive(Clone, Debug)]
pub struct CollapseChannel {
    pub label: ChannelLabel,
    /// Rate symbol of the channel (MHz); the operator carries `√(2·2π·rate)`.
    pub rate: f64,
    pub operator: Operator,
}

/// Cavity and dipole decay channels; zero-rate channels are left out.
pub fn collapse_channels(params: &SystemParams) -> Result<Vec<CollapseChannel>> {
    params.validate()?;
    let layout = params.layout()?;
    let candidates = [
        (ChannelLabel::CavityU, params.kappa_u),
        (ChannelLabel::CavityL, params.kappa_l),
        (ChannelLabel::DipoleU, params.gamma_u),
        (ChannelLabel::DipoleL, params.gamma_l),
    ];
    let mut out = Vec::new();
    for (label, rate) in candidates {
        if rate == 0.0 {
            continue;
        }
        let base = match label {
            ChannelLabel::CavityU => Operator::lowering(layout, Mode::Upper),
            ChannelLabel::CavityL => Operator::lowering(layout, Mode::Lower),
            ChannelLabel::DipoleU => atomic_outer(layout, Level::I, Level::E),
            ChannelLabel::DipoleL => atomic_outer(layout, Level::G, Level::I),
        };
        out.push(CollapseChannel {
            label,
            rate,
            operator: base.scale_real((2.0 * angular(rate)).sqrt()),
        });
    }
    Ok(out)
}

/// `(−g_l|e,0,0⟩ + g_u|g,1,1⟩)/√(g_l² + g_u²)`.
pub fn dark_state(params: &SystemParams) -> Result<StateVector> {
    let norm = params.g_u.hypot(params.g_l);
    if norm == 0.0 {
        return Err(Error::param("g_u, g_l", "dark state needs a nonzero coupling"));
    }
    let layout = params.layout()?;
    let e00 = layout.index_of(Level::E, 0, 0);
    let g11 = layout.index_of(Level::G, 1, 1);
    let mut amps = nalgebra::DVector::zeros(layout.total_dim());
    amps[e00] = C64::new(-params.g_l / norm, 0.0);
    amps[g11] = C64::new(params.g_u / norm, 0.0);
    StateVector::from_amplitudes(layout, amps)
}

/// Closed-form energies (MHz) of the one-excitation chain
/// `{|e,0,0⟩, |i,1,0⟩, |g,1,1⟩}`, measured from `|e⟩`.
///
/// `delta` is the upper-cavity detuning with `Δ_u = −Δ_l = delta`; under this
/// reading `E1 = Δ/2 + √(g_u² + g_l² + Δ²/4)` and `E2 = Δ/2 − √(…)` are exact
/// eigenvalues of `H0`.
pub fn chain_eigenenergies(params: &SystemParams, delta: f64) -> (f64, f64, f64) {
    let root = (params.g_u * params.g_u + params.g_l * params.g_l + 0.25 * delta * delta).sqrt();
    (0.0, 0.5 * delta + root, 0.5 * delta - root)
}

/// `C = g² / (2κγ)`.
pub fn cooperativity(g: f64, kappa: f64, gamma: f64) -> Result<f64> {
    if !(kappa > 0.0) || !(gamma > 0.0) {
        return Err(Error::param(
            "kappa, gamma",
            "cooperativity needs positive decay rates",
        ));
    }
    Ok(g * g / (2.0 * kappa * gamma))
}

/// Purcell-shortened lifetime `τ/(2C + 1)`.
pub fn purcell_lifetime(tau_free: f64, c: f64) -> f64 {
    tau_free / (2.0 * c + 1.0)
}

/// Free-space population lifetime (ns) of a level decaying at `2·2πγ`.
pub fn free_space_lifetime_ns(gamma: f64) -> f64 {
    1e3 / (2.0 * angular(gamma))
}

/// Intracavity photon lifetime (ns), `1/(2·2πκ)`.
pub fn cavity_lifetime_ns(kappa: f64) -> f64 {
    1e3 / (2.0 * angular(kappa))
}

/// Basis state the pulsed scenarios start in.
pub fn initial_ground(params: &SystemParams) -> BasisState {
    match params.drive.mode {
        DriveMode::PulsedG0E => BasisState::new(Level::G0, 0, 0),
        _ => BasisState::new(Level::G, 0, 0),
    }
}
