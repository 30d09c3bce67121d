//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use std::f64::consts::PI;

/// sinh(a) sinh(b) / sinh(c) for 0 ≤ a, b and a + b ≤ c, without overflow.
fn sinh_ratio(a: f64, b: f64, c: f64) -> f64 {
    (a + b - c).exp() * (-(-2.0 * a).exp_m1()) * (-(-2.0 * b).exp_m1()) / (2.0 * -(-2.0 * c).exp_m1())
}

/// Dirichlet Green's function of -Δ on [-r, r]², as a sine series in x1 with
/// the exact 1D hyperbolic Green's function in x2. Converges exponentially in
/// |x2 - y2|, so probes must keep x2 ≠ y2.
pub fn square_green(r: f64, x: [f64; 2], y: [f64; 2]) -> f64 {
    let l = 2.0 * r;
    let (u1, u2) = (x[0] + r, x[1] + r);
    let (v1, v2) = (y[0] + r, y[1] + r);
    let (lo, hi) = (u2.min(v2), u2.max(v2));
    let gap = hi - lo;
    assert!(gap > 1e-3 * l, "series oracle needs separated second coordinates");
    let mut sum = 0.0;
    for m in 1..200_000 {
        let k = m as f64 * PI / l;
        let term = 2.0 / l * (k * u1).sin() * (k * v1).sin() * sinh_ratio(k * lo, k * (l - hi), k * l) / k;
        sum += term;
        if (-k * gap).exp() / k < 1e-18 {
            break;
        }
    }
    sum
}

/// Max absolute entry difference.
pub fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
