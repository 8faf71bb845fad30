#![allow(dead_code)]

use cascade_qed::model::{build_drive_term, build_static_hamiltonian, collapse_channels, DriveMode, SystemParams};
use cascade_qed::qspace::DensityMatrix;
use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

/// Kets coupled to the support of `rho0` by the Hamiltonian or any jump.
fn closure(ops: &[DMatrix<C64>], rho0: &DMatrix<C64>) -> Vec<usize> {
    let n = rho0.nrows();
    let mut seen: Vec<bool> = (0..n).map(|k| rho0.row(k).iter().any(|v| v.norm() > 0.0)).collect();
    loop {
        let mut grew = false;
        for m in ops {
            for s in 0..n {
                if !seen[s] {
                    continue;
                }
                for k in 0..n {
                    if !seen[k] && (m[(k, s)].norm() > 0.0 || m[(s, k)].norm() > 0.0) {
                        seen[k] = true;
                        grew = true;
                    }
                }
            }
        }
        if !grew {
            return (0..n).filter(|&k| seen[k]).collect();
        }
    }
}

fn restrict(m: &DMatrix<C64>, keep: &[usize]) -> DMatrix<C64> {
    DMatrix::from_fn(keep.len(), keep.len(), |r, c| m[(keep[r], keep[c])])
}

fn one_norm(m: &DMatrix<C64>) -> f64 {
    m.column_iter().map(|c| c.iter().map(|v| v.norm()).sum::<f64>()).fold(0.0, f64::max)
}

/// Restricted Hamiltonian and jump operators of a time-independent generator (rad/µs).
struct DenseGenerator {
    h: DMatrix<C64>,
    jumps: Vec<DMatrix<C64>>,
    damping: DMatrix<C64>,
}

impl DenseGenerator {
    fn new(full_ops: &[DMatrix<C64>], keep: &[usize]) -> Self {
        let h = restrict(&full_ops[0], keep);
        let jumps: Vec<DMatrix<C64>> = full_ops[1..].iter().map(|c| restrict(c, keep)).collect();
        let d = keep.len();
        let mut damping = DMatrix::<C64>::zeros(d, d);
        for c in &jumps {
            damping += c.adjoint() * c * C64::new(0.5, 0.0);
        }
        DenseGenerator { h, jumps, damping }
    }

    /// `L(ρ) = −i[H,ρ] + Σ CρC† − ½{C†C,ρ}`.
    fn apply(&self, rho: &DMatrix<C64>) -> DMatrix<C64> {
        let i = C64::new(0.0, 1.0);
        let k = &self.h * (-i) - &self.damping;
        let mut out = &k * rho + rho * k.adjoint();
        for c in &self.jumps {
            out += c * rho * c.adjoint();
        }
        out
    }

    fn norm_bound(&self) -> f64 {
        let k = &self.h * C64::new(0.0, -1.0) - &self.damping;
        2.0 * one_norm(&k) + self.jumps.iter().map(|c| one_norm(c).powi(2)).sum::<f64>()
    }

    /// `exp(L t) ρ` as a product of Taylor-expanded sub-interval exponentials.
    fn propagate(&self, rho: &DMatrix<C64>, t_us: f64) -> DMatrix<C64> {
        let steps = (self.norm_bound() * t_us).ceil().max(1.0) as usize;
        let h = t_us / steps as f64;
        let mut x = rho.clone();
        for _ in 0..steps {
            let mut term = x.clone();
            let mut sum = x.clone();
            for k in 1..=40 {
                term = self.apply(&term) * C64::new(h / k as f64, 0.0);
                sum += &term;
                if term.iter().all(|v| v.norm() < 1e-20) {
                    break;
                }
            }
            x = sum;
        }
        x
    }
}

/// `ρ(t)` from an independent exponential propagation of the generator.
pub fn exact_evolution(params: &SystemParams, rho0: &DensityMatrix, t_ns: f64) -> DMatrix<C64> {
    assert!(params.drive.mode != DriveMode::PulsedG0E, "oracle needs a time-independent generator");
    let full = rho0.matrix();
    let mut h = build_static_hamiltonian(params).unwrap().into_matrix();
    if params.drive.mode == DriveMode::CwGE {
        h += build_drive_term(params, 0.0).unwrap().into_matrix();
    }
    let mut ops = vec![h];
    ops.extend(collapse_channels(params).unwrap().into_iter().map(|c| c.operator.into_matrix()));
    let keep = closure(&ops, full);
    let gen = DenseGenerator::new(&ops, &keep);
    let reduced = gen.propagate(&restrict(full, &keep), t_ns * 1e-3);
    let mut out = DMatrix::<C64>::zeros(full.nrows(), full.ncols());
    for (r, &kr) in keep.iter().enumerate() {
        for (c, &kc) in keep.iter().enumerate() {
            out[(kr, kc)] = reduced[(r, c)];
        }
    }
    out
}

pub fn max_abs_diff(a: &DMatrix<C64>, b: &DMatrix<C64>) -> f64 {
    (a - b).iter().map(|v| v.norm()).fold(0.0, f64::max)
}
