//! Radial ground state of -Δφ = φ^p on the unit disk and the core radius
//! relation that glues it to the logarithmic tail.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::roots;

const STEPS: usize = 8192;
const R0: f64 = 1e-5;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProfileTable {
    pub p: f64,
    /// φ(0)
    pub amplitude: f64,
    pub radii: Vec<f64>,
    pub values: Vec<f64>,
    pub slopes: Vec<f64>,
    pub slope_at_one: f64,
    /// ∫_{B_1} φ^p
    pub int_p: f64,
    /// ∫_{B_1} φ^{p+1}
    pub int_p1: f64,
}

#[derive(Clone, Copy)]
struct State {
    phi: f64,
    dphi: f64,
    ip: f64,
    ip1: f64,
}

fn spow(x: f64, p: f64) -> f64 {
    x.signum() * x.abs().powf(p)
}

fn deriv(r: f64, s: &State, p: f64) -> State {
    let fp = spow(s.phi, p);
    State {
        phi: s.dphi,
        dphi: -s.dphi / r - fp,
        ip: 2.0 * PI * r * fp,
        ip1: 2.0 * PI * r * fp * s.phi,
    }
}

fn add(a: &State, b: &State, h: f64) -> State {
    State { phi: a.phi + h * b.phi, dphi: a.dphi + h * b.dphi, ip: a.ip + h * b.ip, ip1: a.ip1 + h * b.ip1 }
}

/// Integrates from the series start at R0 to r = 1 with `steps` RK4 steps,
/// calling `record` at every node.
fn shoot(a: f64, p: f64, steps: usize, mut record: impl FnMut(f64, &State)) -> State {
    // φ = a(1 - c r² + c2 r⁴), c = a^{p-1}/4, c2 = p a^{2(p-1)}/64
    let c = a.powf(p - 1.0) / 4.0;
    let c2 = p * a.powf(2.0 * (p - 1.0)) / 64.0;
    let r0 = R0;
    let mut s = State {
        phi: a * (1.0 - c * r0 * r0 + c2 * r0.powi(4)),
        dphi: a * (-2.0 * c * r0 + 4.0 * c2 * r0.powi(3)),
        ip: PI * r0 * r0 * a.powf(p),
        ip1: PI * r0 * r0 * a.powf(p + 1.0),
    };
    record(0.0, &State { phi: a, dphi: 0.0, ip: 0.0, ip1: 0.0 });
    let h = (1.0 - r0) / steps as f64;
    for k in 0..steps {
        let r = r0 + k as f64 * h;
        let k1 = deriv(r, &s, p);
        let k2 = deriv(r + 0.5 * h, &add(&s, &k1, 0.5 * h), p);
        let k3 = deriv(r + 0.5 * h, &add(&s, &k2, 0.5 * h), p);
        let k4 = deriv(r + h, &add(&s, &k3, h), p);
        s = State {
            phi: s.phi + h / 6.0 * (k1.phi + 2.0 * k2.phi + 2.0 * k3.phi + k4.phi),
            dphi: s.dphi + h / 6.0 * (k1.dphi + 2.0 * k2.dphi + 2.0 * k3.dphi + k4.dphi),
            ip: s.ip + h / 6.0 * (k1.ip + 2.0 * k2.ip + 2.0 * k3.ip + k4.ip),
            ip1: s.ip1 + h / 6.0 * (k1.ip1 + 2.0 * k2.ip1 + 2.0 * k3.ip1 + k4.ip1),
        };
        record(r + h, &s);
    }
    s
}

/// First zero of the unit-amplitude solution, located on a coarse march.
fn first_zero(p: f64) -> Result<f64> {
    let mut s = State { phi: 1.0 - R0 * R0 / 4.0, dphi: -R0 / 2.0, ip: 0.0, ip1: 0.0 };
    let h = 1e-3;
    let mut r = R0;
    while r < 50.0 {
        let prev = s;
        let k1 = deriv(r, &s, p);
        let k2 = deriv(r + 0.5 * h, &add(&s, &k1, 0.5 * h), p);
        let k3 = deriv(r + 0.5 * h, &add(&s, &k2, 0.5 * h), p);
        let k4 = deriv(r + h, &add(&s, &k3, h), p);
        s = add(&s, &add(&add(&k1, &k2, 2.0), &add(&k3, &k4, 0.5), 2.0), h / 6.0);
        if s.phi <= 0.0 {
            return Ok(r + h * prev.phi / (prev.phi - s.phi));
        }
        r += h;
    }
    Err(Error::Solver(format!("no zero of the radial profile found for p = {p}")))
}

pub fn solve_profile(p: f64) -> Result<ProfileTable> {
    solve_profile_with(p, STEPS)
}

/// Same as [`solve_profile`] with an explicit number of radial steps.
pub fn solve_profile_with(p: f64, steps: usize) -> Result<ProfileTable> {
    if !(p > 1.0 && p <= 6.0) {
        return Err(Error::Domain(format!("exponent p must lie in (1, 6], got {p}")));
    }
    // scaling φ(r) = R1^{2/(p-1)} ψ(R1 r) gives the amplitude guess
    let r1 = first_zero(p)?;
    let guess = r1.powf(2.0 / (p - 1.0));
    let end = |a: f64| shoot(a, p, steps, |_, _| {}).phi;
    let amplitude = roots::bracketed(end, 0.9 * guess, 1.1 * guess)
        .map_err(|e| Error::Solver(format!("profile amplitude bracket failed: {e}")))?;
    let mut radii = Vec::with_capacity(steps + 1);
    let mut values = Vec::with_capacity(steps + 1);
    let mut slopes = Vec::with_capacity(steps + 1);
    let last = shoot(amplitude, p, steps, |r, s| {
        radii.push(r);
        values.push(s.phi);
        slopes.push(s.dphi);
    });
    if last.phi.abs() > 1e-12 {
        return Err(Error::Solver(format!("profile boundary value {:e} above tolerance", last.phi)));
    }
    *values.last_mut().unwrap() = 0.0;
    Ok(ProfileTable { p, amplitude, radii, values, slopes, slope_at_one: last.dphi, int_p: last.ip, int_p1: last.ip1 })
}

impl ProfileTable {
    /// φ(ρ) and φ'(ρ) by cubic Hermite interpolation; zero outside the disk.
    pub fn eval(&self, rho: f64) -> (f64, f64) {
        if rho >= 1.0 {
            return (0.0, 0.0);
        }
        let rho = rho.max(0.0);
        let k = match self.radii.binary_search_by(|r| r.partial_cmp(&rho).unwrap()) {
            Ok(k) => return (self.values[k], self.slopes[k]),
            Err(k) => k.max(1) - 1,
        };
        let (r0, r1) = (self.radii[k], self.radii[k + 1]);
        let h = r1 - r0;
        let t = (rho - r0) / h;
        let (y0, y1, d0, d1) = (self.values[k], self.values[k + 1], self.slopes[k] * h, self.slopes[k + 1] * h);
        let t2 = t * t;
        let t3 = t2 * t;
        let v = (2.0 * t3 - 3.0 * t2 + 1.0) * y0 + (t3 - 2.0 * t2 + t) * d0 + (-2.0 * t3 + 3.0 * t2) * y1 + (t3 - t2) * d1;
        let dv = ((6.0 * t2 - 6.0 * t) * y0 + (3.0 * t2 - 4.0 * t + 1.0) * d0 + (-6.0 * t2 + 6.0 * t) * y1 + (3.0 * t2 - 2.0 * t) * d1) / h;
        (v, dv)
    }

    /// Relative defects of the two Pohozaev identities.
    pub fn pohozaev_defects(&self) -> (f64, f64) {
        let d = self.slope_at_one.abs();
        let t1 = PI * (self.p + 1.0) * d * d / 2.0;
        let t0 = 2.0 * PI * d;
        ((self.int_p1 - t1).abs() / t1, (self.int_p - t0).abs() / t0)
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct CoreRadius {
    pub s: f64,
    pub residual: f64,
}

/// Solves ε^{2/(p-1)} s^{-2/(p-1)} φ'(1) = q̂ ln(1/ε) / ln s for s.
///
/// In t = ln s both sides are negative and the log-difference
/// g(t) = (2/(p-1))(ln ε - t) + ln|φ'(1)| - ln(q̂ ln(1/ε)) + ln(-t) is strictly
/// decreasing on t < 0, so the root is unique.
pub fn solve_core_radius(eps: f64, qhat: f64, table: &ProfileTable) -> Result<CoreRadius> {
    if !(eps > 0.0 && eps < 0.5) {
        return Err(Error::Domain(format!("epsilon must lie in (0, 0.5), got {eps}")));
    }
    if !(qhat > 0.0) || !qhat.is_finite() {
        return Err(Error::Domain(format!("q-hat must be positive, got {qhat}")));
    }
    let p = table.p;
    let e = 2.0 / (p - 1.0);
    let d = table.slope_at_one.abs();
    let le = eps.ln();
    let rhs_c = (qhat * (-le)).ln();
    let g = |t: f64| e * (le - t) + d.ln() - rhs_c + (-t).ln();
    let dg = |t: f64| -e + 1.0 / t;
    let s0 = eps * (d / qhat).powf((p - 1.0) / 2.0);
    let mut t = s0.ln().min(-1e-3);
    let (lo, hi) = (2.0 * le, 0.5 * le);
    for _ in 0..100 {
        let step = g(t) / dg(t);
        let mut next = t - step;
        if next >= 0.0 {
            // keep the iterate on t < 0
            next = 0.5 * t;
        }
        let done = (next - t).abs() <= 1e-15 * t.abs();
        t = next;
        if done {
            break;
        }
    }
    if !(g(t).abs() < 1e-12) {
        t = roots::bracketed(g, 4.0 * le - 50.0, -1e-12)?;
    }
    if !(t > lo && t < hi) {
        return Err(Error::Solver(format!("core radius e^{t} outside (eps^2, sqrt(eps)) for eps = {eps}")));
    }
    let s = t.exp();
    let lhs = eps.powf(e) * s.powf(-e) * table.slope_at_one;
    let rhs = qhat * (-le) / t;
    Ok(CoreRadius { s, residual: (lhs - rhs).abs() / rhs.abs() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pohozaev_identities() {
        for p in [1.5, 2.0, 3.0, 5.0] {
            let t = solve_profile(p).unwrap();
            let (a, b) = t.pohozaev_defects();
            assert!(a < 1e-8 && b < 1e-8, "p={p}: {a:e} {b:e}");
        }
    }

    #[test]
    fn monotone_and_resolution_converged() {
        let t = solve_profile(2.0).unwrap();
        assert!(t.values.windows(2).all(|w| w[1] <= w[0]));
        assert!(t.slopes[1..].iter().all(|d| *d < 0.0));
        let fine = solve_profile_with(2.0, 2 * STEPS).unwrap();
        assert!((fine.slope_at_one - t.slope_at_one).abs() <= 1e-8);
    }

    #[test]
    fn hermite_matches_nodes() {
        let t = solve_profile(1.5).unwrap();
        let k = 1234;
        let (v, d) = t.eval(t.radii[k]);
        assert_eq!(v, t.values[k]);
        assert_eq!(d, t.slopes[k]);
        let mid = 0.5 * (t.radii[k] + t.radii[k + 1]);
        let (v, _) = t.eval(mid);
        assert!((v - 0.5 * (t.values[k] + t.values[k + 1])).abs() < 1e-6);
    }

    #[test]
    fn out_of_range_exponent() {
        assert!(matches!(solve_profile(1.0), Err(Error::Domain(_))));
        assert!(matches!(solve_profile(6.5), Err(Error::Domain(_))));
    }

    #[test]
    fn core_radius_limit_and_monotonicity() {
        let t = solve_profile(2.0).unwrap();
        let d = t.slope_at_one.abs();
        let c = solve_core_radius(1e-6, d, &t).unwrap();
        assert!((c.s / 1e-6 - 1.0).abs() < 0.05, "{}", c.s / 1e-6);
        assert!(c.residual <= 1e-14, "{:e}", c.residual);
        let a = solve_core_radius(0.01, 1.0, &t).unwrap().s;
        let b = solve_core_radius(0.01, 2.0, &t).unwrap().s;
        assert!(b < a);
    }
}
