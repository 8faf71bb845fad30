use std::io::Write;

/// Trapezoid weights for an ascending, possibly non-uniform grid.
pub(crate) fn trapezoid_weights(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut w = vec![0.0; n];
    for k in 1..n {
        let h = 0.5 * (x[k] - x[k - 1]);
        w[k - 1] += h;
        w[k] += h;
    }
    w
}

/// Composite Simpson weights for a uniform grid with an odd number of points.
pub(crate) fn simpson_weights(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    assert!(n >= 3 && n % 2 == 1, "Simpson rule needs an odd number of points");
    let h = (x[n - 1] - x[0]) / (n - 1) as f64;
    (0..n)
        .map(|k| {
            let c = if k == 0 || k == n - 1 {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            c * h / 3.0
        })
        .collect()
}

pub(crate) fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    trapezoid_weights(x).iter().zip(y).map(|(w, v)| w * v).sum()
}

/// `n` points from `a` to `b` inclusive.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect(),
    }
}

/// `n` log-spaced points from `a` to `b` inclusive.
pub fn logspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    linspace(a.ln(), b.ln(), n).into_iter().map(f64::exp).collect()
}

/// Scientific notation with nine significant digits.
pub(crate) fn sci(v: f64) -> String {
    format!("{v:.8e}")
}

pub(crate) fn write_row<W: Write>(w: &mut W, cells: &[String]) -> std::io::Result<()> {
    w.write_all(cells.join(",").as_bytes())?;
    w.write_all(b"\n")
}

pub(crate) fn check_grid(name: &str, grid: &[f64]) -> crate::Result<()> {
    if grid.is_empty() {
        return Err(crate::Error::param(name, "grid is empty"));
    }
    if grid.iter().any(|v| !v.is_finite()) {
        return Err(crate::Error::param(name, "grid has non-finite values"));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(crate::Error::param(name, "grid must be strictly increasing"));
    }
    Ok(())
}
