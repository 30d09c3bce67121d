//! The five exact co-rotating helical configurations.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kmd::FilamentEnsemble;
use crate::roots;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Case {
    Polygon { n: usize, kappa: f64, r: f64 },
    PolygonPlusCenter { n: usize, kappa: f64, mu: f64, r: f64 },
    Asym2 { kappa1: f64, kappa2: f64, lambda1: f64, lambda2: f64 },
    TwoByTwo { kappa: f64, mu: f64, lambda1: f64, lambda2: f64 },
    TwoByTwoPlusCenter { kappa0: f64, kappa: f64, mu: f64, lambda1: f64, lambda2: f64 },
}

impl Case {
    pub fn name(&self) -> &'static str {
        match self {
            Case::Polygon { .. } => "polygon",
            Case::PolygonPlusCenter { .. } => "polygon_plus_center",
            Case::Asym2 { .. } => "asym2",
            Case::TwoByTwo { .. } => "two_by_two",
            Case::TwoByTwoPlusCenter { .. } => "two_by_two_plus_center",
        }
    }

    pub fn number(&self) -> usize {
        match self {
            Case::Polygon { .. } => 1,
            Case::PolygonPlusCenter { .. } => 2,
            Case::Asym2 { .. } => 3,
            Case::TwoByTwo { .. } => 4,
            Case::TwoByTwoPlusCenter { .. } => 5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HelicalFamily {
    pub case: Case,
    pub h: f64,
    #[serde(default)]
    pub theta0: f64,
}

#[derive(Clone, Debug)]
pub struct Configuration {
    pub positions: Vec<Complex64>,
    pub kappa: Vec<f64>,
    pub alpha: f64,
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Validation(format!("{name} must be positive, got {v}")))
    }
}

/// Left and right sides of the two-by-two compatibility condition, with the
/// optional center circulation.
fn cross_sides(kappa0: f64, kappa: f64, mu: f64, l1: f64, l2: f64, h: f64) -> (f64, f64, f64) {
    let s = l1 * l1 + l2 * l2;
    let t = [
        kappa / (4.0 * PI * h * h),
        kappa0 / (2.0 * PI * l1 * l1),
        kappa / (4.0 * PI * l1 * l1),
        mu / (PI * s),
        mu / (4.0 * PI * h * h),
        kappa0 / (2.0 * PI * l2 * l2),
        mu / (4.0 * PI * l2 * l2),
        kappa / (PI * s),
    ];
    let lhs = t[0] - t[1] - t[2] - t[3];
    let rhs = t[4] - t[5] - t[6] - t[7];
    (lhs, rhs, t.iter().map(|v| v.abs()).sum())
}

impl HelicalFamily {
    pub fn new(case: Case, h: f64) -> Self {
        Self { case, h, theta0: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        positive("h", self.h)?;
        match self.case {
            Case::Polygon { n, kappa, r } => {
                if n < 2 {
                    return Err(Error::Validation(format!("n must be >= 2, got {n}")));
                }
                positive("kappa", kappa)?;
                positive("r", r)
            }
            Case::PolygonPlusCenter { n, kappa, mu, r } => {
                if n < 2 {
                    return Err(Error::Validation(format!("n must be >= 2, got {n}")));
                }
                positive("kappa", kappa)?;
                positive("mu", mu)?;
                positive("r", r)
            }
            Case::Asym2 { kappa1, kappa2, lambda1, lambda2 } => {
                positive("kappa1", kappa1)?;
                positive("kappa2", kappa2)?;
                positive("lambda1", lambda1)?;
                positive("lambda2", lambda2)
            }
            Case::TwoByTwo { kappa, mu, lambda1, lambda2 } => {
                positive("kappa", kappa)?;
                positive("mu", mu)?;
                positive("lambda1", lambda1)?;
                positive("lambda2", lambda2)
            }
            Case::TwoByTwoPlusCenter { kappa0, kappa, mu, lambda1, lambda2 } => {
                positive("kappa0", kappa0)?;
                positive("kappa", kappa)?;
                positive("mu", mu)?;
                positive("lambda1", lambda1)?;
                positive("lambda2", lambda2)
            }
        }
    }

    /// Relative residual of the compatibility condition (zero for the polygon cases).
    pub fn compat_residual(&self) -> f64 {
        let h = self.h;
        match self.case {
            Case::Polygon { .. } | Case::PolygonPlusCenter { .. } => 0.0,
            Case::Asym2 { kappa1, kappa2, lambda1, lambda2 } => {
                let p = lambda1 * lambda2 * (lambda1 + lambda2);
                let a = kappa2 * (2.0 * lambda2 * h * h + p);
                let b = kappa1 * (2.0 * lambda1 * h * h + p);
                (a - b).abs() / a.abs().max(b.abs())
            }
            Case::TwoByTwo { kappa, mu, lambda1, lambda2 } => {
                let (l, r, s) = cross_sides(0.0, kappa, mu, lambda1, lambda2, h);
                (l - r).abs() / s
            }
            Case::TwoByTwoPlusCenter { kappa0, kappa, mu, lambda1, lambda2 } => {
                let (l, r, s) = cross_sides(kappa0, kappa, mu, lambda1, lambda2, h);
                (l - r).abs() / s
            }
        }
    }

    pub fn alpha(&self) -> f64 {
        let h = self.h;
        match self.case {
            Case::Polygon { n, kappa, r } => kappa / (4.0 * PI) * (1.0 / (h * h) - (n as f64 - 1.0) / (r * r)),
            Case::PolygonPlusCenter { n, kappa, mu, r } => {
                kappa / (4.0 * PI) * (1.0 / (h * h) - (n as f64 - 1.0) / (r * r)) - mu / (2.0 * PI * r * r)
            }
            Case::Asym2 { kappa1, kappa2, lambda1, lambda2 } => {
                kappa1 / (4.0 * PI * h * h) - kappa2 / (2.0 * PI * lambda1 * (lambda1 + lambda2))
            }
            Case::TwoByTwo { kappa, mu, lambda1, lambda2 } => cross_sides(0.0, kappa, mu, lambda1, lambda2, h).0,
            Case::TwoByTwoPlusCenter { kappa0, kappa, mu, lambda1, lambda2 } => {
                cross_sides(kappa0, kappa, mu, lambda1, lambda2, h).0
            }
        }
    }

    pub fn build_configuration(&self) -> Result<Configuration> {
        self.validate()?;
        let res = self.compat_residual();
        if res > 1e-10 {
            return Err(Error::Compatibility { residual: res });
        }
        let i = Complex64::new(0.0, 1.0);
        let (positions, kappa) = match self.case {
            Case::Polygon { n, kappa, r } => (polygon(n, r), vec![kappa; n]),
            Case::PolygonPlusCenter { n, kappa, mu, r } => {
                let mut p = polygon(n, r);
                p.push(Complex64::new(0.0, 0.0));
                let mut k = vec![kappa; n];
                k.push(mu);
                (p, k)
            }
            Case::Asym2 { kappa1, kappa2, lambda1, lambda2 } => (
                vec![Complex64::new(lambda1, 0.0), Complex64::new(-lambda2, 0.0)],
                vec![kappa1, kappa2],
            ),
            Case::TwoByTwo { kappa, mu, lambda1, lambda2 } => (
                vec![lambda1.into(), i * lambda2, (-lambda1).into(), -i * lambda2],
                vec![kappa, mu, kappa, mu],
            ),
            Case::TwoByTwoPlusCenter { kappa0, kappa, mu, lambda1, lambda2 } => (
                vec![lambda1.into(), i * lambda2, (-lambda1).into(), -i * lambda2, 0.0.into()],
                vec![kappa, mu, kappa, mu, kappa0],
            ),
        };
        Ok(Configuration { positions, kappa, alpha: self.alpha() })
    }

    pub fn equilibrium_residual(&self) -> Result<f64> {
        let c = self.build_configuration()?;
        rotating_residual(&c.positions, &c.kappa, c.alpha, self.h)
    }

    pub fn sample_filaments(&self, m: usize) -> Result<FilamentEnsemble> {
        if m < 8 || !m.is_power_of_two() {
            return Err(Error::Validation(format!("M = {m} must be a power of two >= 8")));
        }
        let c = self.build_configuration()?;
        let l = 2.0 * PI * self.h;
        let x = c
            .positions
            .iter()
            .map(|z| {
                (0..m)
                    .map(|k| {
                        let s = l * k as f64 / m as f64;
                        z * Complex64::from_polar(1.0, s / self.h + self.theta0)
                    })
                    .collect()
            })
            .collect();
        FilamentEnsemble::new(c.kappa, l, x)
    }
}

fn polygon(n: usize, r: f64) -> Vec<Complex64> {
    (0..n).map(|j| Complex64::from_polar(r, 2.0 * PI * j as f64 / n as f64)).collect()
}

/// max_j |-i alpha Z_j - rhs_j| for the helical reduction at tau = 0.
pub fn rotating_residual(z: &[Complex64], kappa: &[f64], alpha: f64, h: f64) -> Result<f64> {
    let i = Complex64::new(0.0, 1.0);
    let mut worst: f64 = 0.0;
    for j in 0..z.len() {
        let mut acc = Complex64::new(0.0, 0.0);
        for k in 0..z.len() {
            if k != j {
                let d = z[j] - z[k];
                if d.norm() == 0.0 {
                    return Err(Error::Collision { separation: 0.0, floor: 0.0 });
                }
                acc += d * (kappa[k] / d.norm_sqr());
            }
        }
        let rhs = (-i * kappa[j] * z[j] / (h * h) + 2.0 * i * acc) / (4.0 * PI);
        worst = worst.max((-i * alpha * z[j] - rhs).norm());
    }
    Ok(worst)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unknown {
    Kappa2,
    Lambda2,
}

/// Solves the compatibility condition for one missing parameter. The value of
/// the unknown field in `f` is ignored.
pub fn solve_missing_parameter(f: &HelicalFamily, unknown: Unknown, guess: Option<f64>) -> Result<f64> {
    let h = f.h;
    match (f.case, unknown) {
        (Case::Asym2 { kappa1, lambda1, lambda2, .. }, Unknown::Kappa2) => {
            positive("kappa1", kappa1)?;
            positive("lambda1", lambda1)?;
            positive("lambda2", lambda2)?;
            let p = lambda1 * lambda2 * (lambda1 + lambda2);
            Ok(kappa1 * (2.0 * lambda1 * h * h + p) / (2.0 * lambda2 * h * h + p))
        }
        (Case::TwoByTwo { kappa, mu, lambda1, .. }, Unknown::Lambda2) => {
            solve_lambda2(0.0, kappa, mu, lambda1, h, guess)
        }
        (Case::TwoByTwoPlusCenter { kappa0, kappa, mu, lambda1, .. }, Unknown::Lambda2) => {
            positive("kappa0", kappa0)?;
            solve_lambda2(kappa0, kappa, mu, lambda1, h, guess)
        }
        _ => Err(Error::Validation(format!("unknown {unknown:?} not supported for case {}", f.case.name()))),
    }
}

fn solve_lambda2(kappa0: f64, kappa: f64, mu: f64, l1: f64, h: f64, guess: Option<f64>) -> Result<f64> {
    positive("kappa", kappa)?;
    positive("mu", mu)?;
    positive("lambda1", l1)?;
    positive("h", h)?;
    let g = |l2: f64| {
        let (a, b, s) = cross_sides(kappa0, kappa, mu, l1, l2, h);
        (a - b) / s
    };
    let brackets = roots::log_brackets(&g, 1e-4, 1e4, 64);
    if brackets.is_empty() {
        return Err(Error::NoSolution("compatibility residual has no sign change on (1e-4, 1e4)".into()));
    }
    let chosen = match guess {
        None if brackets.len() > 1 => return Err(Error::Ambiguous { brackets }),
        None => roots::bracketed(g, brackets[0].0, brackets[0].1)?,
        Some(x0) => {
            let mut best = None;
            for (a, b) in &brackets {
                let r = roots::bracketed(g, *a, *b)?;
                if best.map_or(true, |(d, _)| (r - x0).abs() < d) {
                    best = Some(((r - x0).abs(), r));
                }
            }
            best.map(|(_, r)| r).unwrap_or(f64::NAN)
        }
    };
    Ok(chosen)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alpha_examples() {
        let f = HelicalFamily::new(Case::Polygon { n: 2, kappa: 2.0 * PI, r: 1.0 }, 1.0);
        assert!(f.alpha().abs() < 1e-15);
        let f = HelicalFamily::new(Case::PolygonPlusCenter { n: 2, kappa: 2.0 * PI, mu: 2.0 * PI, r: 1.0 }, 1.0);
        assert!((f.alpha() + 1.0).abs() < 1e-15);
        let k = 1.7;
        let f = HelicalFamily::new(Case::Asym2 { kappa1: k, kappa2: k, lambda1: 0.8, lambda2: 0.8 }, 1.3);
        assert_eq!(f.compat_residual(), 0.0);
        let want = k / (4.0 * PI * 1.69) - k / (4.0 * PI * 0.64);
        assert!((f.alpha() - want).abs() < 1e-15);
    }

    #[test]
    fn missing_kappa2() {
        let f = HelicalFamily::new(Case::Asym2 { kappa1: 1.0, kappa2: 0.0, lambda1: 1.0, lambda2: 2.0 }, 1.0);
        let k2 = solve_missing_parameter(&f, Unknown::Kappa2, None).unwrap();
        assert!((k2 - 0.8).abs() < 1e-15);
    }

    #[test]
    fn symmetric_lambda2() {
        let f = HelicalFamily::new(Case::TwoByTwo { kappa: 1.0, mu: 1.0, lambda1: 0.7, lambda2: 0.0 }, 1.0);
        let l2 = solve_missing_parameter(&f, Unknown::Lambda2, Some(0.7)).unwrap();
        assert!((l2 - 0.7).abs() < 1e-12);
    }

    #[test]
    fn wrong_alpha_residual_is_radius() {
        let f = HelicalFamily::new(Case::Polygon { n: 4, kappa: 1.0, r: 1.5 }, 1.0);
        let c = f.build_configuration().unwrap();
        let r = rotating_residual(&c.positions, &c.kappa, c.alpha + 1.0, 1.0).unwrap();
        assert!((r - 1.5).abs() < 1e-12);
    }

    #[test]
    fn polygon_identity() {
        for n in 2..=12 {
            let mut s = Complex64::new(0.0, 0.0);
            for k in 1..n {
                let w = Complex64::new(1.0, 0.0) - Complex64::from_polar(1.0, 2.0 * PI * k as f64 / n as f64);
                s += w / w.norm_sqr();
            }
            assert!((s - (n as f64 - 1.0) / 2.0).norm() < 1e-13);
        }
    }

    #[test]
    fn sample_examples() {
        let f = HelicalFamily::new(Case::Polygon { n: 2, kappa: 1.0, r: 1.0 }, 1.0);
        let e = f.sample_filaments(8).unwrap();
        assert!((e.x[0][0] - 1.0).norm() < 1e-15);
        assert!((e.x[1][0] + 1.0).norm() < 1e-15);
        let mut g = f;
        g.theta0 = PI / 2.0;
        let e2 = g.sample_filaments(8).unwrap();
        for j in 0..2 {
            for m in 0..8 {
                assert!((e2.x[j][m] - Complex64::new(0.0, 1.0) * e.x[j][m]).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn incompatible_rejected() {
        let f = HelicalFamily::new(Case::Asym2 { kappa1: 1.0, kappa2: 1.0, lambda1: 1.0, lambda2: 2.0 }, 1.0);
        assert!(matches!(f.build_configuration(), Err(Error::Compatibility { .. })));
    }

    #[test]
    fn serde_roundtrip() {
        let f = HelicalFamily::new(Case::TwoByTwo { kappa: 1.0, mu: 2.0, lambda1: 0.5, lambda2: 0.6 }, 1.2);
        let s = serde_json::to_string(&f).unwrap();
        let g: HelicalFamily = serde_json::from_str(&s).unwrap();
        assert_eq!(f, g);
    }
}
