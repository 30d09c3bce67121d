//! Nearly-parallel vortex filament system, pseudo-spectral in s, RK4 in time.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::par;

#[derive(Clone, Debug)]
pub struct FilamentEnsemble {
    pub kappa: Vec<f64>,
    /// Structure constants, one per filament.
    pub alpha: Vec<f64>,
    pub period: f64,
    /// X[j][m] = X_j(m L / M)
    pub x: Vec<Vec<Complex64>>,
}

impl FilamentEnsemble {
    pub fn new(kappa: Vec<f64>, period: f64, x: Vec<Vec<Complex64>>) -> Result<Self> {
        let alpha = vec![1.0; kappa.len()];
        let e = Self { kappa, alpha, period, x };
        e.check()?;
        Ok(e)
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn modes(&self) -> usize {
        self.x.first().map(|v| v.len()).unwrap_or(0)
    }

    pub fn check(&self) -> Result<()> {
        let m = self.modes();
        if self.kappa.len() != self.n() || self.alpha.len() != self.n() {
            return Err(Error::Validation("circulation/structure constant count mismatch".into()));
        }
        if m < 8 || !m.is_power_of_two() {
            return Err(Error::Validation(format!("mode count {m} must be a power of two >= 8")));
        }
        if self.x.iter().any(|v| v.len() != m) {
            return Err(Error::Validation("filaments have different sample counts".into()));
        }
        if self.period <= 0.0 || !self.period.is_finite() {
            return Err(Error::Validation("period must be positive".into()));
        }
        Ok(())
    }

    pub fn min_separation(&self) -> f64 {
        let mut d = f64::INFINITY;
        for j in 0..self.n() {
            for k in j + 1..self.n() {
                for (a, b) in self.x[j].iter().zip(&self.x[k]) {
                    d = d.min((a - b).norm());
                }
            }
        }
        d
    }
}

#[derive(Clone, Copy, Debug)]
pub struct KmdOptions {
    pub collision_floor: f64,
    pub save_stride: usize,
}

impl Default for KmdOptions {
    fn default() -> Self {
        Self { collision_floor: 1e-8, save_stride: 1 }
    }
}

/// FFT plans for one (M, L) pair.
pub struct Spectral {
    m: usize,
    period: f64,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl Spectral {
    pub fn new(m: usize, period: f64) -> Self {
        let mut planner = FftPlanner::new();
        Self { m, period, fwd: planner.plan_fft_forward(m), inv: planner.plan_fft_inverse(m) }
    }

    fn wavenumber(&self, i: usize) -> f64 {
        let k = if i <= self.m / 2 { i as f64 } else { i as f64 - self.m as f64 };
        2.0 * PI * k / self.period
    }

    /// Multiplies the Fourier coefficients by `sym(k)`.
    fn apply(&self, x: &[Complex64], sym: impl Fn(f64, usize) -> Complex64) -> Vec<Complex64> {
        let mut buf = x.to_vec();
        self.fwd.process(&mut buf);
        let scale = 1.0 / self.m as f64;
        for (i, c) in buf.iter_mut().enumerate() {
            *c *= sym(self.wavenumber(i), i) * scale;
        }
        self.inv.process(&mut buf);
        buf
    }

    pub fn d2(&self, x: &[Complex64]) -> Vec<Complex64> {
        self.apply(x, |k, _| Complex64::new(-k * k, 0.0))
    }

    pub fn d1(&self, x: &[Complex64]) -> Vec<Complex64> {
        let nyq = self.m / 2;
        self.apply(x, |k, i| if i == nyq { Complex64::new(0.0, 0.0) } else { Complex64::new(0.0, k) })
    }
}

fn check_collision(e: &FilamentEnsemble, floor: f64) -> Result<()> {
    let d = e.min_separation();
    if d < floor {
        return Err(Error::Collision { separation: d, floor });
    }
    Ok(())
}

/// Right-hand side of the filament system.
pub fn kmd_rhs(e: &FilamentEnsemble, sp: &Spectral, opts: &KmdOptions) -> Result<Vec<Vec<Complex64>>> {
    check_collision(e, opts.collision_floor)?;
    let i = Complex64::new(0.0, 1.0);
    let n = e.n();
    Ok(par::map_collect(n, |j| {
        let mut out = sp.d2(&e.x[j]);
        let c = i * e.alpha[j] * e.kappa[j];
        for (m, o) in out.iter_mut().enumerate() {
            let xj = e.x[j][m];
            let mut acc = Complex64::new(0.0, 0.0);
            for k in 0..n {
                if k != j {
                    let d = xj - e.x[k][m];
                    acc += d * (e.kappa[k] / d.norm_sqr());
                }
            }
            *o = (c * *o + 2.0 * i * acc) / (4.0 * PI);
        }
        out
    }))
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<FilamentEnsemble>,
    /// Set when the run stopped early on a collision.
    pub collision: Option<Error>,
}

fn add_scaled(e: &FilamentEnsemble, k: &[Vec<Complex64>], h: f64) -> FilamentEnsemble {
    let mut out = e.clone();
    for (xj, kj) in out.x.iter_mut().zip(k) {
        for (a, b) in xj.iter_mut().zip(kj) {
            *a += b * h;
        }
    }
    out
}

/// Classical RK4 with fixed step; the step is adjusted so that an integer
/// number of steps covers [0, T].
pub fn kmd_integrate(e: &FilamentEnsemble, dt: f64, t_end: f64, opts: &KmdOptions) -> Result<Trajectory> {
    e.check()?;
    if !(dt > 0.0) || t_end < dt {
        return Err(Error::Validation(format!("need dt > 0 and T >= dt (dt={dt}, T={t_end})")));
    }
    let steps = (t_end / dt).round().max(1.0) as usize;
    let h = t_end / steps as f64;
    let sp = Spectral::new(e.modes(), e.period);
    let stride = opts.save_stride.max(1);
    let mut traj = Trajectory { times: vec![0.0], states: vec![e.clone()], collision: None };
    let mut cur = e.clone();
    for step in 1..=steps {
        let stage = |s: &FilamentEnsemble| kmd_rhs(s, &sp, opts);
        let res = (|| {
            let k1 = stage(&cur)?;
            let k2 = stage(&add_scaled(&cur, &k1, 0.5 * h))?;
            let k3 = stage(&add_scaled(&cur, &k2, 0.5 * h))?;
            let k4 = stage(&add_scaled(&cur, &k3, h))?;
            let mut next = cur.clone();
            for j in 0..next.n() {
                for m in 0..next.x[j].len() {
                    next.x[j][m] += (k1[j][m] + 2.0 * k2[j][m] + 2.0 * k3[j][m] + k4[j][m]) * (h / 6.0);
                }
            }
            Ok::<_, Error>(next)
        })();
        match res {
            Ok(next) => {
                if next.x.iter().flatten().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
                    return Err(Error::Blowup { step });
                }
                cur = next;
            }
            Err(err @ Error::Collision { .. }) => {
                traj.collision = Some(err);
                return Ok(traj);
            }
            Err(err) => return Err(err),
        }
        if step % stride == 0 || step == steps {
            traj.times.push(step as f64 * h);
            traj.states.push(cur.clone());
        }
    }
    Ok(traj)
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct Diagnostics {
    pub mean: Complex64,
    pub second_moment: f64,
    pub hamiltonian: f64,
    pub min_separation: f64,
}

pub fn kmd_diagnostics(e: &FilamentEnsemble, opts: &KmdOptions) -> Result<Diagnostics> {
    check_collision(e, opts.collision_floor)?;
    let sp = Spectral::new(e.modes(), e.period);
    let ds = e.period / e.modes() as f64;
    let mut mean = Complex64::new(0.0, 0.0);
    let mut second = 0.0;
    let mut ham = 0.0;
    for j in 0..e.n() {
        let kj = e.kappa[j];
        mean += e.x[j].iter().sum::<Complex64>() * (kj * ds);
        second += kj * ds * e.x[j].iter().map(|c| c.norm_sqr()).sum::<f64>();
        let dx = sp.d1(&e.x[j]);
        ham += e.alpha[j] * kj * kj / (8.0 * PI) * ds * dx.iter().map(|c| c.norm_sqr()).sum::<f64>();
        for k in 0..e.n() {
            if k != j {
                let l: f64 = e.x[j].iter().zip(&e.x[k]).map(|(a, b)| (a - b).norm().ln()).sum();
                ham -= kj * e.kappa[k] / (4.0 * PI) * ds * l;
            }
        }
    }
    Ok(Diagnostics { mean, second_moment: second, hamiltonian: ham, min_separation: e.min_separation() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn polygon(n: usize, r: f64, kappa: f64, m: usize, h: f64) -> FilamentEnsemble {
        let l = 2.0 * PI * h;
        let x = (0..n)
            .map(|j| {
                (0..m)
                    .map(|i| {
                        let s = l * i as f64 / m as f64;
                        Complex64::from_polar(r, 2.0 * PI * j as f64 / n as f64 + s / h)
                    })
                    .collect()
            })
            .collect();
        FilamentEnsemble::new(vec![kappa; n], l, x).unwrap()
    }

    #[test]
    fn single_mode_rotation() {
        let l = 3.0;
        let m = 16;
        let x = vec![(0..m).map(|i| Complex64::from_polar(0.7, 2.0 * PI * i as f64 / m as f64)).collect()];
        let e = FilamentEnsemble::new(vec![1.3], l, x).unwrap();
        let sp = Spectral::new(m, l);
        let r = kmd_rhs(&e, &sp, &KmdOptions::default()).unwrap();
        let c = Complex64::new(0.0, -1.3 * (2.0 * PI / l).powi(2) / (4.0 * PI));
        for (a, b) in r[0].iter().zip(&e.x[0]) {
            assert!((a - c * b).norm() < 1e-13);
        }
    }

    #[test]
    fn antipodal_interaction() {
        let m = 8;
        let x1: Vec<Complex64> = (0..m).map(|i| Complex64::new(1.0 + 0.1 * i as f64, 0.5)).collect();
        let x2: Vec<Complex64> = x1.iter().map(|c| -c).collect();
        let mut e = FilamentEnsemble::new(vec![2.0, 2.0], 1.0, vec![x1.clone(), x2]).unwrap();
        e.alpha = vec![0.0, 0.0];
        let sp = Spectral::new(m, 1.0);
        let r = kmd_rhs(&e, &sp, &KmdOptions::default()).unwrap();
        for (a, b) in r[0].iter().zip(&x1) {
            let want = Complex64::new(0.0, 2.0) * b / b.norm_sqr() / (4.0 * PI);
            assert!((a - want).norm() < 1e-14);
        }
    }

    #[test]
    fn polygon_rotates_rigidly() {
        let e = polygon(3, 1.0, 1.0, 32, 1.0);
        let alpha = (1.0 / (4.0 * PI)) * (1.0 - 2.0);
        let sp = Spectral::new(32, e.period);
        let r = kmd_rhs(&e, &sp, &KmdOptions::default()).unwrap();
        for j in 0..3 {
            for (a, b) in r[j].iter().zip(&e.x[j]) {
                assert!((a - Complex64::new(0.0, -alpha) * b).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_circulation_is_static() {
        let mut e = polygon(2, 1.0, 0.0, 16, 1.0);
        e.x[1][3] += Complex64::new(0.1, 0.0);
        let t = kmd_integrate(&e, 0.01, 0.1, &KmdOptions::default()).unwrap();
        let last = t.states.last().unwrap();
        assert_eq!(last.x, e.x);
    }

    #[test]
    fn diagnostics_of_pair() {
        let e = polygon(2, 1.0, 1.0, 16, 1.0);
        let d = kmd_diagnostics(&e, &KmdOptions::default()).unwrap();
        assert!(d.mean.norm() < 1e-13);
        assert!((d.second_moment - 4.0 * PI).abs() < 1e-12);
    }

    #[test]
    fn collision_reported() {
        let mut e = polygon(2, 1.0, 1.0, 8, 1.0);
        e.x[1] = e.x[0].clone();
        let sp = Spectral::new(8, e.period);
        assert!(matches!(kmd_rhs(&e, &sp, &KmdOptions::default()), Err(Error::Collision { .. })));
    }

    #[test]
    fn rejects_bad_mode_count() {
        let x = vec![vec![Complex64::new(1.0, 0.0); 12]];
        assert!(FilamentEnsemble::new(vec![1.0], 1.0, x).is_err());
    }
}
