//! Scalar root finding shared by several modules.

use crate::error::{Error, Result};

/// Safeguarded secant/bisection on a bracket with f(a) f(b) <= 0.
pub fn bracketed<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64) -> Result<f64> {
    let mut fa = f(a);
    let mut fb = f(b);
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(Error::NoSolution(format!("no sign change on [{a}, {b}]")));
    }
    for it in 0..400 {
        let mid = 0.5 * (a + b);
        let secant = b - fb * (b - a) / (fb - fa);
        // every third step is a plain bisection to guarantee shrinkage
        let x = if it % 3 != 2 && secant.is_finite() && secant > a.min(b) && secant < a.max(b) {
            secant
        } else {
            mid
        };
        let fx = f(x);
        if fx == 0.0 {
            return Ok(x);
        }
        if fx.signum() == fa.signum() {
            a = x;
            fa = fx;
        } else {
            b = x;
            fb = fx;
        }
        if (b - a).abs() <= 4.0 * f64::EPSILON * a.abs().max(b.abs()) {
            break;
        }
    }
    Ok(if fa.abs() < fb.abs() { a } else { b })
}

/// Scans `intervals` log-spaced cells of (lo, hi) for sign changes.
pub fn log_brackets<F: Fn(f64) -> f64>(f: &F, lo: f64, hi: f64, intervals: usize) -> Vec<(f64, f64)> {
    let (la, lb) = (lo.ln(), hi.ln());
    let pts: Vec<f64> = (0..=intervals)
        .map(|i| (la + (lb - la) * i as f64 / intervals as f64).exp())
        .collect();
    let vals: Vec<f64> = pts.iter().map(|&x| f(x)).collect();
    let mut out = Vec::new();
    for i in 0..intervals {
        if vals[i] == 0.0 || vals[i].signum() != vals[i + 1].signum() {
            out.push((pts[i], pts[i + 1]));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_sqrt2() {
        let r = bracketed(|x| x * x - 2.0, 0.0, 3.0).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn scan_finds_all() {
        let f = |x: f64| (x - 0.01) * (x - 5.0);
        let b = log_brackets(&f, 1e-4, 1e4, 64);
        assert_eq!(b.len(), 2);
    }
}
