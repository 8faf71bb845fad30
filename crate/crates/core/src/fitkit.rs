//! Damped Gauss–Newton (Levenberg–Marquardt) fits with analytic Jacobians.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Planck constant (J s).
pub const PLANCK: f64 = 6.626_070_15e-34;
/// Speed of light (m/s).
pub const LIGHT_SPEED: f64 = 299_792_458.0;
/// One megabarn in m².
pub const MEGABARN: f64 = 1e-22;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FitParameter {
    pub name: String,
    pub value: f64,
    /// 1σ from the covariance of the linearized problem.
    pub sigma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FitResult {
    pub model: String,
    pub parameters: Vec<FitParameter>,
    pub residual_rms: f64,
    pub converged: bool,
    pub iterations: usize,
    pub points: usize,
    /// SHA-256 of the model name and the input bytes.
    pub input_digest: String,
}

impl FitResult {
    pub fn value(&self, name: &str) -> Option<f64> {
        self.parameters.iter().find(|p| p.name == name).map(|p| p.value)
    }

    pub fn sigma(&self, name: &str) -> Option<f64> {
        self.parameters.iter().find(|p| p.name == name).map(|p| p.sigma)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("fit result serializes")
    }
}

/// Model evaluated at one abscissa: returns the value and fills the gradient
/// with respect to the parameters.
trait Model {
    fn eval(&self, p: &[f64], x: f64, grad: &mut [f64]) -> f64;
    fn admissible(&self, p: &[f64]) -> bool;
}

const MAX_ITERATIONS: usize = 200;

struct Solution {
    params: Vec<f64>,
    sigma: Vec<f64>,
    rms: f64,
    iterations: usize,
}

fn residuals<M: Model>(m: &M, p: &[f64], x: &[f64], y: &[f64], jac: Option<&mut DMatrix<f64>>) -> DVector<f64> {
    let mut grad = vec![0.0; p.len()];
    let mut r = DVector::zeros(x.len());
    match jac {
        Some(j) => {
            for i in 0..x.len() {
                r[i] = y[i] - m.eval(p, x[i], &mut grad);
                for (k, g) in grad.iter().enumerate() {
                    j[(i, k)] = *g;
                }
            }
        }
        None => {
            for i in 0..x.len() {
                r[i] = y[i] - m.eval(p, x[i], &mut grad);
            }
        }
    }
    r
}

fn levenberg_marquardt<M: Model>(m: &M, x: &[f64], y: &[f64], seed: Vec<f64>, what: &str) -> Result<Solution> {
    let n = x.len();
    let np = seed.len();
    if n <= np {
        return Err(Error::FitInput(format!("{n} points cannot constrain {np} parameters")));
    }
    let mut p = seed;
    let mut jac = DMatrix::zeros(n, np);
    let mut r = residuals(m, &p, x, y, Some(&mut jac));
    let mut cost = r.norm_squared();
    if !cost.is_finite() {
        return Err(Error::FitInput(format!("{what}: model is not finite at the seed")));
    }
    let mut lambda = 1e-3;
    let mut iterations = 0;
    let mut converged = cost == 0.0;
    while !converged && iterations < MAX_ITERATIONS {
        iterations += 1;
        let jt = jac.transpose();
        let a = &jt * &jac;
        let g = &jt * &r;
        let scale = (0..np).map(|k| a[(k, k)]).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        let mut accepted = false;
        while lambda < 1e20 {
            let mut damped = a.clone();
            for k in 0..np {
                damped[(k, k)] += lambda * a[(k, k)].max(1e-12 * scale);
            }
            let Some(step) = damped.lu().solve(&g) else {
                lambda *= 10.0;
                continue;
            };
            let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            if m.admissible(&trial) {
                let r_new = residuals(m, &trial, x, y, None);
                let c_new = r_new.norm_squared();
                if c_new.is_finite() && c_new <= cost {
                    let small = step.iter().zip(&trial).all(|(s, v)| s.abs() <= 1e-12 * (v.abs() + 1e-300));
                    let flat = cost - c_new <= 1e-15 * cost;
                    p = trial;
                    cost = c_new;
                    r = residuals(m, &p, x, y, Some(&mut jac));
                    lambda = (lambda / 10.0).max(1e-12);
                    accepted = true;
                    converged = small || flat || cost == 0.0;
                    break;
                }
            }
            lambda *= 10.0;
        }
        if !accepted {
            // no damped step lowers the cost: at a minimum to machine precision
            converged = true;
        }
    }
    if !converged {
        return Err(Error::NoConvergence {
            what: what.to_string(),
            iterations,
        });
    }
    let a = jac.transpose() * &jac;
    let cov = a
        .try_inverse()
        .ok_or_else(|| Error::FitInput(format!("{what}: parameters are not identifiable from the data")))?;
    let s2 = cost / (n - np) as f64;
    let sigma = (0..np).map(|k| (s2 * cov[(k, k)]).max(0.0).sqrt()).collect();
    Ok(Solution {
        params: p,
        sigma,
        rms: (cost / n as f64).sqrt(),
        iterations,
    })
}

fn digest(model: &str, columns: &[&[f64]], constants: &[f64]) -> String {
    let mut h = Sha256::new();
    h.update(model.as_bytes());
    for col in columns {
        h.update((col.len() as u64).to_le_bytes());
        for v in *col {
            h.update(v.to_le_bytes());
        }
    }
    for v in constants {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

fn finish(model: &str, names: &[&str], sol: Solution, points: usize, digest: String) -> FitResult {
    FitResult {
        model: model.to_string(),
        parameters: names
            .iter()
            .zip(sol.params.iter().zip(&sol.sigma))
            .map(|(n, (v, s))| FitParameter {
                name: n.to_string(),
                value: *v,
                sigma: *s,
            })
            .collect(),
        residual_rms: sol.rms,
        converged: true,
        iterations: sol.iterations,
        points,
        input_digest: digest,
    }
}

fn check_series(t: &[f64], y: &[f64]) -> Result<()> {
    if t.len() != y.len() {
        return Err(Error::FitInput(format!("{} abscissae but {} values", t.len(), y.len())));
    }
    if t.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::FitInput("non-finite data".into()));
    }
    Ok(())
}

/// Least-squares line through `(x, y)`: `(intercept, slope)`.
fn line_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (my - slope * mx, slope)
}

struct Exponential;

impl Model for Exponential {
    fn eval(&self, p: &[f64], t: f64, grad: &mut [f64]) -> f64 {
        let e = (-t / p[1]).exp();
        grad[0] = e;
        grad[1] = p[0] * e * t / (p[1] * p[1]);
        p[0] * e
    }

    fn admissible(&self, p: &[f64]) -> bool {
        p[1] > 0.0
    }
}

/// Fits `y = A e^{−t/τ}` to the points with `t` inside `window` (inclusive).
/// Seeded from a regression of `ln y` on `t`.
pub fn fit_exponential(t: &[f64], y: &[f64], window: (f64, f64)) -> Result<FitResult> {
    check_series(t, y)?;
    let (ts, ys): (Vec<f64>, Vec<f64>) = t
        .iter()
        .zip(y)
        .filter(|(t, _)| **t >= window.0 && **t <= window.1)
        .map(|(a, b)| (*a, *b))
        .unzip();
    if ts.len() < 8 {
        return Err(Error::FitInput(format!("{} points in the window, need at least 8", ts.len())));
    }
    if ys.iter().any(|v| *v <= 0.0) {
        return Err(Error::FitInput("exponential fit needs positive data in the window".into()));
    }
    let logs: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let (b, slope) = line_fit(&ts, &logs);
    let tau0 = if slope < 0.0 { -1.0 / slope } else { ts[ts.len() - 1] - ts[0] };
    let amp0 = if slope < 0.0 { b.exp() } else { ys[0] * (ts[0] / tau0).exp() };
    let sol = levenberg_marquardt(&Exponential, &ts, &ys, vec![amp0, tau0], "exponential fit")?;
    let d = digest("exponential", &[t, y], &[window.0, window.1]);
    Ok(finish("exponential", &["amplitude", "tau"], sol, ts.len(), d))
}

struct RiseFall;

impl Model for RiseFall {
    // p = [amplitude, center, tau_rise, tau_fall]
    fn eval(&self, p: &[f64], x: f64, grad: &mut [f64]) -> f64 {
        let (a, c, r, f) = (p[0], p[1], p[2], p[3]);
        let d = x - c;
        if d < 0.0 {
            let e = (d / r).exp();
            grad[0] = e;
            grad[1] = -a * e / r;
            grad[2] = -a * e * d / (r * r);
            grad[3] = 0.0;
            a * e
        } else {
            let e = (-d / f).exp();
            grad[0] = e;
            grad[1] = a * e / f;
            grad[2] = 0.0;
            grad[3] = a * e * d / (f * f);
            a * e
        }
    }

    fn admissible(&self, p: &[f64]) -> bool {
        p[2] > 0.0 && p[3] > 0.0
    }
}

fn side_time(x: &[f64], y: &[f64], peak: f64, sign: f64) -> Option<f64> {
    let (xs, ls): (Vec<f64>, Vec<f64>) = x
        .iter()
        .zip(y)
        .filter(|(_, v)| **v > 0.05 * peak)
        .map(|(a, b)| (*a, b.ln()))
        .unzip();
    if xs.len() < 2 {
        return None;
    }
    let (_, slope) = line_fit(&xs, &ls);
    (sign * slope > 0.0).then(|| sign / slope)
}

/// The two-sided exponential peak evaluated at `x`.
pub fn rise_fall_value(amplitude: f64, center: f64, tau_rise: f64, tau_fall: f64, x: f64) -> f64 {
    RiseFall.eval(&[amplitude, center, tau_rise, tau_fall], x, &mut [0.0; 4])
}

/// Fits the two-sided exponential peak
/// `A e^{(τ−τ0)/τ_rise}` (τ < τ0), `A e^{−(τ−τ0)/τ_fall}` (τ ≥ τ0).
///
/// Seeds: the sampled maximum for `A` and `τ0`, and log-linear slopes of the
/// points above 5% of the peak on each side for the two times.
pub fn fit_rise_fall(tau: &[f64], c: &[f64]) -> Result<FitResult> {
    check_series(tau, c)?;
    if tau.len() < 5 {
        return Err(Error::FitInput("rise/fall fit needs at least 5 points".into()));
    }
    let (imax, &peak) = c
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .unwrap();
    let low = c.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(peak > low) {
        return Err(Error::FitInput("flat data has no peak".into()));
    }
    if imax == 0 || imax == c.len() - 1 {
        return Err(Error::FitInput("maximum is at the edge of the series; need an interior peak".into()));
    }
    let span = tau[tau.len() - 1] - tau[0];
    let rise = side_time(&tau[..=imax], &c[..=imax], peak, 1.0).unwrap_or(span / 10.0);
    let fall = side_time(&tau[imax..], &c[imax..], peak, -1.0).unwrap_or(span / 10.0);
    let sol = levenberg_marquardt(&RiseFall, tau, c, vec![peak, tau[imax], rise, fall], "rise/fall fit")?;
    let d = digest("rise_fall", &[tau, c], &[]);
    Ok(finish("rise_fall", &["amplitude", "center", "tau_rise", "tau_fall"], sol, tau.len(), d))
}

/// Experimental constants of the trap-loss measurement.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhotoionizationConstants {
    pub wavelength_m: f64,
    /// Duration of the ionizing exposure per shot.
    pub pulse_window_s: f64,
    /// Time between shots.
    pub rep_period_s: f64,
    /// Trap lifetime without excitation; fitted when absent.
    #[serde(default)]
    pub tau0_s: Option<f64>,
}

impl Default for PhotoionizationConstants {
    fn default() -> Self {
        PhotoionizationConstants {
            wavelength_m: 852e-9,
            pulse_window_s: 800e-9,
            rep_period_s: 0.2,
            tau0_s: None,
        }
    }
}

impl PhotoionizationConstants {
    /// `λ/(hc)` in J⁻¹.
    fn photons_per_joule(&self) -> f64 {
        self.wavelength_m / (PLANCK * LIGHT_SPEED)
    }

    /// Per-shot ionization probability `η(1 − e^{−σFλ/hc})` with `σ` in Mb.
    pub fn ionization_probability(&self, eta: f64, sigma_mb: f64, intensity: f64) -> f64 {
        let f = intensity * self.pulse_window_s;
        eta * (1.0 - (-sigma_mb * MEGABARN * f * self.photons_per_joule()).exp())
    }

    /// Trap lifetime `1/(1/τ0 + P_PI/T_rep)`.
    pub fn trap_lifetime(&self, eta: f64, sigma_mb: f64, tau0: f64, intensity: f64) -> f64 {
        1.0 / (1.0 / tau0 + self.ionization_probability(eta, sigma_mb, intensity) / self.rep_period_s)
    }
}

struct Photoionization {
    k: PhotoionizationConstants,
    fixed_tau0: Option<f64>,
}

impl Model for Photoionization {
    // p = [eta, sigma_mb, (tau0)]
    fn eval(&self, p: &[f64], intensity: f64, grad: &mut [f64]) -> f64 {
        let tau0 = self.fixed_tau0.unwrap_or_else(|| p[2]);
        let q = MEGABARN * intensity * self.k.pulse_window_s * self.k.photons_per_joule();
        let e = (-p[1] * q).exp();
        let rate = 1.0 / tau0 + p[0] * (1.0 - e) / self.k.rep_period_s;
        let life = 1.0 / rate;
        let dl = -life * life;
        grad[0] = dl * (1.0 - e) / self.k.rep_period_s;
        grad[1] = dl * p[0] * q * e / self.k.rep_period_s;
        if self.fixed_tau0.is_none() {
            grad[2] = dl * (-1.0 / (tau0 * tau0));
        }
        life
    }

    fn admissible(&self, p: &[f64]) -> bool {
        p[1] > 0.0 && (self.fixed_tau0.is_some() || p[2] > 0.0)
    }
}

/// Fits `(η, σ)`, and `τ0` unless fixed, of the rate-additive loss model
/// `1/τ_trap = 1/τ0 + η(1 − e^{−σFλ/hc})/T_rep` with `F = I·pulse_window`.
///
/// Seeds: `τ0` from the lowest-intensity lifetime, `η` from the largest loss
/// rate, `σ` from the intensity at which the loss rate reaches half of it.
pub fn fit_photoionization(intensity: &[f64], lifetime_s: &[f64], k: &PhotoionizationConstants) -> Result<FitResult> {
    check_series(intensity, lifetime_s)?;
    if intensity.len() < 5 {
        return Err(Error::FitInput("photoionization fit needs at least 5 points".into()));
    }
    if intensity.iter().any(|v| *v < 0.0) {
        return Err(Error::FitInput("intensities must be ≥ 0".into()));
    }
    if lifetime_s.iter().any(|v| *v <= 0.0) {
        return Err(Error::FitInput("trap lifetimes must be positive".into()));
    }
    if intensity.iter().all(|v| *v == 0.0) || !(k.pulse_window_s > 0.0) {
        return Err(Error::FitInput("fluence column is all zero".into()));
    }
    let mut order: Vec<usize> = (0..intensity.len()).collect();
    order.sort_by(|a, b| intensity[*a].total_cmp(&intensity[*b]));
    let tau0 = k.tau0_s.unwrap_or(lifetime_s[order[0]]);
    let rates: Vec<f64> = order.iter().map(|&i| (1.0 / lifetime_s[i] - 1.0 / tau0).max(0.0)).collect();
    let max_rate = rates.iter().cloned().fold(0.0, f64::max);
    let eta = (max_rate * k.rep_period_s).max(1e-6);
    let half = order
        .iter()
        .zip(&rates)
        .find(|(_, r)| **r >= 0.5 * max_rate && max_rate > 0.0)
        .map_or(intensity[order[order.len() - 1]], |(&i, _)| intensity[i])
        .max(f64::MIN_POSITIVE);
    let sigma = 2f64.ln() / (half * k.pulse_window_s * k.photons_per_joule() * MEGABARN);
    let model = Photoionization {
        k: *k,
        fixed_tau0: k.tau0_s,
    };
    let mut seed = vec![eta, sigma];
    let mut names = vec!["eta", "sigma_mb"];
    if k.tau0_s.is_none() {
        seed.push(tau0);
        names.push("tau0_s");
    }
    let sol = levenberg_marquardt(&model, intensity, lifetime_s, seed, "photoionization fit")?;
    let consts = [k.wavelength_m, k.pulse_window_s, k.rep_period_s, k.tau0_s.unwrap_or(f64::NAN)];
    let d = digest("photoionization", &[intensity, lifetime_s], &consts);
    Ok(finish("photoionization", &names, sol, intensity.len(), d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linspace;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn noisy(values: &[f64], rel: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, rel).unwrap();
        values.iter().map(|v| v * (1.0 + n.sample(&mut rng))).collect()
    }

    #[test]
    fn exponential_noiseless_is_exact() {
        let t = linspace(30.0, 600.0, 58);
        let y: Vec<f64> = t.iter().map(|t| 0.02 * (-t / 104.7f64).exp()).collect();
        let fit = fit_exponential(&t, &y, (0.0, 1e9)).unwrap();
        assert!((fit.value("tau").unwrap() / 104.7 - 1.0).abs() < 1e-9);
        assert!(fit.residual_rms < 1e-9);
    }

    #[test]
    fn exponential_with_noise() {
        let t = linspace(0.0, 500.0, 200);
        let y: Vec<f64> = t.iter().map(|t| (-t / 100.0f64).exp()).collect();
        let fit = fit_exponential(&t, &noisy(&y, 0.01, 7), (0.0, 500.0)).unwrap();
        let tau = fit.value("tau").unwrap();
        assert!((tau - 100.0).abs() < 3.0, "{tau}");
        assert!(fit.sigma("tau").unwrap() > 0.0);
    }

    #[test]
    fn exponential_rejects_bad_input() {
        let t = linspace(0.0, 10.0, 20);
        let mut y: Vec<f64> = t.iter().map(|t| (-t).exp()).collect();
        assert!(matches!(fit_exponential(&t, &y, (0.0, 3.0)), Err(Error::FitInput(_))));
        y[3] = -1e-3;
        assert!(matches!(fit_exponential(&t, &y, (0.0, 10.0)), Err(Error::FitInput(_))));
    }

    #[test]
    fn rise_fall_noiseless_is_exact() {
        let p = [0.03, 3.3, 2.6, 7.2];
        let tau = linspace(-40.0, 80.0, 241);
        let mut g = [0.0; 4];
        let c: Vec<f64> = tau.iter().map(|x| RiseFall.eval(&p, *x, &mut g)).collect();
        let fit = fit_rise_fall(&tau, &c).unwrap();
        for (name, want) in ["amplitude", "center", "tau_rise", "tau_fall"].iter().zip(p) {
            let got = fit.value(name).unwrap();
            assert!((got / want - 1.0).abs() < 1e-6, "{name}: {got} vs {want}");
        }
        assert!(fit.residual_rms < 1e-9);
    }

    #[test]
    fn symmetric_peak_has_equal_times() {
        let p = [1.0, 0.25, 4.0, 4.0];
        let tau = linspace(-30.0, 30.0, 121);
        let mut g = [0.0; 4];
        let c: Vec<f64> = tau.iter().map(|x| RiseFall.eval(&p, *x, &mut g)).collect();
        let fit = fit_rise_fall(&tau, &noisy(&c, 0.02, 3)).unwrap();
        let (r, f) = (fit.value("tau_rise").unwrap(), fit.value("tau_fall").unwrap());
        let joint = (fit.sigma("tau_rise").unwrap().powi(2) + fit.sigma("tau_fall").unwrap().powi(2)).sqrt();
        assert!((r - f).abs() < 3.0 * joint, "{r} {f} ± {joint}");
    }

    #[test]
    fn rise_fall_needs_interior_peak() {
        let tau = linspace(0.0, 10.0, 11);
        let c: Vec<f64> = tau.iter().map(|t| (-t).exp()).collect();
        assert!(matches!(fit_rise_fall(&tau, &c), Err(Error::FitInput(_))));
        assert!(matches!(fit_rise_fall(&tau, &[1.0; 11]), Err(Error::FitInput(_))));
    }

    fn photo_data(k: &PhotoionizationConstants, sigma: f64, eta: f64, tau0: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
        let i = linspace(0.0, 5.25e9, n);
        let l = i.iter().map(|v| k.trap_lifetime(eta, sigma, tau0, *v)).collect();
        (i, l)
    }

    #[test]
    fn photoionization_noiseless_is_exact() {
        let k = PhotoionizationConstants::default();
        let (i, l) = photo_data(&k, 12.0, 0.8, 6.0, 12);
        let fit = fit_photoionization(&i, &l, &k).unwrap();
        assert!((fit.value("sigma_mb").unwrap() / 12.0 - 1.0).abs() < 1e-8);
        assert!((fit.value("eta").unwrap() / 0.8 - 1.0).abs() < 1e-8);
        assert!((fit.value("tau0_s").unwrap() / 6.0 - 1.0).abs() < 1e-8);
        assert!(fit.residual_rms < 1e-9);
    }

    #[test]
    fn photoionization_with_noise() {
        let k = PhotoionizationConstants::default();
        let mut i = vec![0.0];
        i.extend(crate::logspace(5e7, 5.25e9, 14));
        let l: Vec<f64> = i.iter().map(|v| k.trap_lifetime(0.8, 12.0, 6.0, *v)).collect();
        let fit = fit_photoionization(&i, &noisy(&l, 0.05, 11), &k).unwrap();
        let s = fit.value("sigma_mb").unwrap();
        assert!((s - 12.0).abs() < 3.0, "{s}");
    }

    #[test]
    fn zero_intensity_gives_baseline() {
        let k = PhotoionizationConstants::default();
        assert_eq!(k.trap_lifetime(0.8, 12.0, 6.0, 0.0), 6.0);
        assert!(matches!(fit_photoionization(&[0.0; 6], &[1.0; 6], &k), Err(Error::FitInput(_))));
    }

    #[test]
    fn fixed_baseline_mode() {
        let k = PhotoionizationConstants {
            tau0_s: Some(6.0),
            ..Default::default()
        };
        let (i, l) = photo_data(&k, 17.0, 0.7, 6.0, 10);
        let fit = fit_photoionization(&i, &l, &k).unwrap();
        assert_eq!(fit.parameters.len(), 2);
        assert!((fit.value("sigma_mb").unwrap() - 17.0).abs() < 1e-6);
    }

    #[test]
    fn uncertainties_scale_with_sample_size() {
        let sig = |n: usize| {
            let t = linspace(0.0, 500.0, n);
            let y: Vec<f64> = t.iter().map(|t| (-t / 100.0f64).exp()).collect();
            // ensemble mean of the reported σ over a few seeds
            (0..8)
                .map(|s| fit_exponential(&t, &noisy(&y, 0.01, s), (0.0, 500.0)).unwrap().sigma("tau").unwrap())
                .sum::<f64>()
                / 8.0
        };
        let (s50, s200, s800) = (sig(50), sig(200), sig(800));
        assert!((s50 / s200 / 2.0 - 1.0).abs() < 0.2, "{s50} {s200}");
        assert!((s200 / s800 / 2.0 - 1.0).abs() < 0.2, "{s200} {s800}");
    }

    #[test]
    fn digest_is_stable() {
        let t = linspace(0.0, 10.0, 10);
        let y: Vec<f64> = t.iter().map(|t| (-t / 3.0f64).exp()).collect();
        let a = fit_exponential(&t, &y, (0.0, 10.0)).unwrap();
        let b = fit_exponential(&t, &y, (0.0, 10.0)).unwrap();
        assert_eq!(a, b);
        let mut y2 = y.clone();
        y2[4] *= 1.0 + 1e-15;
        assert_ne!(fit_exponential(&t, &y2, (0.0, 10.0)).unwrap().input_digest, a.input_digest);
    }
}
