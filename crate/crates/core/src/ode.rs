//! Adaptive Dormand–Prince 5(4) integrator for complex linear systems.
//!
//! Output times are hit exactly: a step is shortened to land on the next
//! requested time instead of interpolating.

use crate::error::{Error, Result};
use crate::liouville::Generator;
use crate::qspace::{C64, ZERO};

/// Right-hand side `dy/dt = f(t, y)`.
pub trait Rhs {
    fn eval(&self, t: f64, y: &[C64], dy: &mut [C64]);

    /// Upper bound on the step size near `t`, for features the error
    /// estimate cannot see in advance (such as a pulse ahead of a quiet
    /// stretch).
    fn max_step(&self, _t: f64) -> f64 {
        f64::INFINITY
    }
}

impl Rhs for Generator {
    fn eval(&self, t: f64, y: &[C64], dy: &mut [C64]) {
        self.apply(t, y, dy);
    }

    fn max_step(&self, t_us: f64) -> f64 {
        self.pulse_step_limit(t_us)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    /// Factor converting integrator time to ns, for error reports.
    pub time_unit_ns: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            rtol: 1e-8,
            atol: 1e-10,
            max_steps: 20_000_000,
            time_unit_ns: 1e3,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Stats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

fn combine(out: &mut [C64], y: &[C64], h: f64, terms: &[(f64, &[C64])]) {
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = ZERO;
        for &(w, k) in terms {
            acc += k[i] * w;
        }
        *o = y[i] + acc * h;
    }
}

fn scaled_norm(err: &[C64], y0: &[C64], y1: &[C64], tol: &Tolerances) -> f64 {
    let mut acc = 0.0;
    for i in 0..err.len() {
        let sc = tol.atol + tol.rtol * y0[i].norm().max(y1[i].norm());
        let r = err[i].norm() / sc;
        acc += r * r;
    }
    (acc / err.len().max(1) as f64).sqrt()
}

/// Integrate from `t0` through the ascending `outputs`, calling `sink(k, t, y)`
/// at each. Output times equal to `t0` are reported without stepping.
pub fn integrate<F, S>(
    rhs: &F,
    t0: f64,
    mut y: Vec<C64>,
    outputs: &[f64],
    tol: &Tolerances,
    mut sink: S,
) -> Result<(Vec<C64>, Stats)>
where
    F: Rhs + ?Sized,
    S: FnMut(usize, f64, &[C64]) -> Result<()>,
{
    let n = y.len();
    let mut stats = Stats::default();
    if outputs.windows(2).any(|w| w[1] < w[0]) || outputs.first().is_some_and(|&t| t < t0) {
        return Err(Error::param("outputs", "output times must be ascending and ≥ t0"));
    }
    let mut k: Vec<Vec<C64>> = (0..7).map(|_| vec![ZERO; n]).collect();
    let mut stage = vec![ZERO; n];
    let mut y_new = vec![ZERO; n];
    let mut err = vec![ZERO; n];

    let mut t = t0;
    rhs.eval(t, &y, &mut k[0]);
    stats.evaluations += 1;
    let mut h = initial_step(rhs, t, &y, &k[0], tol, &mut stage, &mut y_new);
    stats.evaluations += 1;

    for (idx, &t_out) in outputs.iter().enumerate() {
        while t < t_out {
            if stats.accepted + stats.rejected >= tol.max_steps {
                return Err(Error::ToleranceFailure {
                    t_ns: t * tol.time_unit_ns,
                    max_steps: tol.max_steps,
                });
            }
            let h_cap = rhs.max_step(t);
            let mut h_try = h.min(h_cap);
            let remaining = t_out - t;
            let landing = h_try >= remaining;
            if landing {
                h_try = remaining;
            }
            if !(h_try > 1e-14 * t.abs().max(t_out.abs())) && !landing {
                return Err(Error::StepSizeUnderflow {
                    t_ns: t * tol.time_unit_ns,
                });
            }

            {
                let (k0, rest) = k.split_at_mut(1);
                let k0 = &k0[0];
                combine(&mut stage, &y, h_try, &[(A21, k0)]);
                rhs.eval(t + C2 * h_try, &stage, &mut rest[0]);
                combine(&mut stage, &y, h_try, &[(A31, k0), (A32, &rest[0])]);
                rhs.eval(t + C3 * h_try, &stage, &mut rest[1]);
                combine(&mut stage, &y, h_try, &[(A41, k0), (A42, &rest[0]), (A43, &rest[1])]);
                rhs.eval(t + C4 * h_try, &stage, &mut rest[2]);
                combine(
                    &mut stage,
                    &y,
                    h_try,
                    &[(A51, k0), (A52, &rest[0]), (A53, &rest[1]), (A54, &rest[2])],
                );
                rhs.eval(t + C5 * h_try, &stage, &mut rest[3]);
                combine(
                    &mut stage,
                    &y,
                    h_try,
                    &[(A61, k0), (A62, &rest[0]), (A63, &rest[1]), (A64, &rest[2]), (A65, &rest[3])],
                );
                rhs.eval(t + h_try, &stage, &mut rest[4]);
                combine(
                    &mut y_new,
                    &y,
                    h_try,
                    &[(A71, k0), (A73, &rest[1]), (A74, &rest[2]), (A75, &rest[3]), (A76, &rest[4])],
                );
                rhs.eval(t + h_try, &y_new, &mut rest[5]);
                for i in 0..n {
                    err[i] = (k0[i] * E1
                        + rest[1][i] * E3
                        + rest[2][i] * E4
                        + rest[3][i] * E5
                        + rest[4][i] * E6
                        + rest[5][i] * E7)
                        * h_try;
                }
            }
            stats.evaluations += 6;

            let e = scaled_norm(&err, &y, &y_new, tol);
            let factor = if e == 0.0 {
                10.0
            } else if e.is_finite() {
                (0.9 * e.powf(-0.2)).clamp(0.2, 10.0)
            } else {
                0.2
            };
            if e <= 1.0 {
                stats.accepted += 1;
                t = if landing { t_out } else { t + h_try };
                std::mem::swap(&mut y, &mut y_new);
                k.swap(0, 6);
                let grown = h_try * factor;
                // a landing step may be artificially short; keep the old proposal
                h = if landing { h.max(grown) } else { grown };
            } else {
                stats.rejected += 1;
                h = h_try * factor.min(1.0);
            }
        }
        sink(idx, t_out, &y)?;
    }
    Ok((y, stats))
}

fn initial_step<F: Rhs + ?Sized>(
    rhs: &F,
    t: f64,
    y: &[C64],
    f0: &[C64],
    tol: &Tolerances,
    scratch_y: &mut [C64],
    scratch_f: &mut [C64],
) -> f64 {
    let n = y.len().max(1) as f64;
    let sc = |i: usize| tol.atol + tol.rtol * y[i].norm();
    let d0 = (y.iter().enumerate().map(|(i, v)| (v.norm() / sc(i)).powi(2)).sum::<f64>() / n).sqrt();
    let d1 = (f0.iter().enumerate().map(|(i, v)| (v.norm() / sc(i)).powi(2)).sum::<f64>() / n).sqrt();
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let h0 = h0.min(rhs.max_step(t));
    for i in 0..y.len() {
        scratch_y[i] = y[i] + f0[i] * h0;
    }
    rhs.eval(t + h0, scratch_y, scratch_f);
    let d2 = (scratch_f
        .iter()
        .zip(f0)
        .enumerate()
        .map(|(i, (a, b))| ((a - b).norm() / sc(i)).powi(2))
        .sum::<f64>()
        / n)
        .sqrt()
        / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    (100.0 * h0).min(h1).min(rhs.max_step(t))
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Decay(C64);

    impl Rhs for Decay {
        fn eval(&self, _t: f64, y: &[C64], dy: &mut [C64]) {
            dy[0] = self.0 * y[0];
        }
    }

    struct Forced;

    impl Rhs for Forced {
        fn eval(&self, t: f64, _y: &[C64], dy: &mut [C64]) {
            dy[0] = C64::new(t.cos(), 0.0);
        }
    }

    #[test]
    fn complex_exponential_to_tolerance() {
        let lam = C64::new(-0.3, 5.0);
        let outs: Vec<f64> = (1..=20).map(|k| k as f64 * 0.5).collect();
        let mut worst = 0.0f64;
        integrate(&Decay(lam), 0.0, vec![C64::new(1.0, 0.0)], &outs, &Tolerances::default(), |_, t, y| {
            let exact = (lam * t).exp();
            worst = worst.max((y[0] - exact).norm());
            Ok(())
        })
        .unwrap();
        assert!(worst < 1e-7, "{worst}");
    }

    #[test]
    fn outputs_are_hit_exactly() {
        let outs = [0.0, 0.1, 0.25, 3.0];
        let mut seen = Vec::new();
        integrate(&Forced, 0.0, vec![ZERO], &outs, &Tolerances::default(), |k, t, y| {
            seen.push((k, t));
            assert!((y[0].re - t.sin()).abs() < 1e-8);
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, vec![(0, 0.0), (1, 0.1), (2, 0.25), (3, 3.0)]);
    }

    #[test]
    fn step_budget_is_reported() {
        let tol = Tolerances {
            max_steps: 5,
            ..Tolerances::default()
        };
        let res = integrate(&Decay(C64::new(0.0, 200.0)), 0.0, vec![C64::new(1.0, 0.0)], &[10.0], &tol, |_, _, _| Ok(()));
        assert!(matches!(res, Err(Error::ToleranceFailure { max_steps: 5, .. })));
    }

    #[test]
    fn descending_outputs_rejected() {
        let res = integrate(&Forced, 0.0, vec![ZERO], &[1.0, 0.5], &Tolerances::default(), |_, _, _| Ok(()));
        assert!(res.is_err());
    }
}
