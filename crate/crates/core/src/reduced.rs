//! Reduced energy H_N, the case landscapes H_1..H_5, a damped Newton critical
//! point search and the finite-dimensional energy expansion.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::coeff::{CoefficientField, Mat2, Vec2, WeightProfile};
use crate::equilibria::{Case, HelicalFamily};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct ReducedEnergyContext {
    pub hessian: Mat2,
    pub c0: f64,
    pub whitening: Mat2,
}

impl ReducedEnergyContext {
    pub fn from_field(field: &CoefficientField, profile: &WeightProfile) -> Result<Self> {
        let w = profile.eval(field, Vec2::zeros(), true)?;
        Ok(Self {
            hessian: w.hess.unwrap_or_else(Mat2::zeros),
            c0: w.f,
            whitening: field.factor_t(Vec2::zeros())?,
        })
    }
}

/// Value and gradient of H_N. The pair sum runs over ordered pairs.
pub fn h_n_eval(ctx: &ReducedEnergyContext, z: &[Vec2]) -> Result<(f64, Vec<Vec2>)> {
    let n = z.len();
    let mut value = 0.0;
    let mut grad = vec![Vec2::zeros(); n];
    let wtw = ctx.whitening.transpose() * ctx.whitening;
    for i in 0..n {
        let hz = ctx.hessian * z[i];
        value += 0.5 * z[i].dot(&hz);
        grad[i] += hz;
        for j in 0..n {
            if i == j {
                continue;
            }
            let d = z[i] - z[j];
            let wd = ctx.whitening * d;
            let r2 = wd.norm_squared();
            if r2 == 0.0 {
                return Err(Error::Singularity(format!("positions {i} and {j} coincide")));
            }
            value += ctx.c0 * 0.5 * r2.ln();
            grad[i] += wtw * d * (2.0 * ctx.c0 / r2);
        }
    }
    Ok((value, grad))
}

pub trait Objective {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
}

/// Objective assembled from two closures.
pub struct FnObjective<F, G> {
    pub dim: usize,
    pub f: F,
    pub g: G,
}

impl<F: Fn(&[f64]) -> f64, G: Fn(&[f64]) -> Vec<f64>> Objective for FnObjective<F, G> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        (self.g)(x)
    }
}

/// H_N over flattened positions.
pub struct HnObjective {
    pub ctx: ReducedEnergyContext,
    pub n: usize,
}

impl HnObjective {
    fn unpack(x: &[f64]) -> Vec<Vec2> {
        x.chunks(2).map(|c| Vec2::new(c[0], c[1])).collect()
    }
}

impl Objective for HnObjective {
    fn dim(&self) -> usize {
        2 * self.n
    }
    fn value(&self, x: &[f64]) -> f64 {
        h_n_eval(&self.ctx, &Self::unpack(x)).map(|v| v.0).unwrap_or(f64::NAN)
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        match h_n_eval(&self.ctx, &Self::unpack(x)) {
            Ok((_, g)) => g.iter().flat_map(|v| [v[0], v[1]]).collect(),
            Err(_) => vec![f64::NAN; x.len()],
        }
    }
}

/// One of the five case landscapes, parameterised as in the equilibrium family.
#[derive(Clone, Debug, Serialize)]
pub struct Landscape {
    pub case: usize,
    pub n: usize,
    pub alpha: f64,
    pub h: f64,
    /// Species offsets: case 1 [beta]; case 2 [beta1, beta2]; cases 3, 4 [beta1, beta2];
    /// case 5 [beta1, beta2, beta0].
    pub betas: Vec<f64>,
    /// Critical point predicted by the equilibrium family.
    pub predicted: Vec<f64>,
}

impl Landscape {
    pub fn from_family(f: &HelicalFamily) -> Result<Self> {
        f.validate()?;
        let res = f.compat_residual();
        if res > 1e-10 {
            return Err(Error::Compatibility { residual: res });
        }
        let b = |k: f64| k / (2.0 * PI);
        let (case, n, betas, predicted) = match f.case {
            Case::Polygon { n, kappa, r } => (1, n, vec![b(kappa)], vec![r]),
            Case::PolygonPlusCenter { n, kappa, mu, r } => (2, n, vec![b(kappa), b(mu)], vec![r]),
            Case::Asym2 { kappa1, kappa2, lambda1, lambda2 } => {
                (3, 2, vec![b(kappa1), b(kappa2)], vec![lambda1, lambda2])
            }
            Case::TwoByTwo { kappa, mu, lambda1, lambda2 } => (4, 4, vec![b(kappa), b(mu)], vec![lambda1, lambda2]),
            Case::TwoByTwoPlusCenter { kappa0, kappa, mu, lambda1, lambda2 } => {
                (5, 5, vec![b(kappa), b(mu), b(kappa0)], vec![lambda1, lambda2])
            }
        };
        Ok(Self { case, n, alpha: f.alpha(), h: f.h, betas, predicted })
    }

    /// (q_i^2 sqrt(det K_H))''(0)
    pub fn curvature(&self, beta: f64) -> f64 {
        beta * (2.0 * self.alpha * self.h * self.h - beta) / (self.h * self.h)
    }

    pub fn dim(&self) -> usize {
        self.predicted.len()
    }

    pub fn eval(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        if x.len() != self.dim() {
            return Err(Error::Validation(format!("landscape expects {} coordinates", self.dim())));
        }
        if x.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Domain(format!("radii must be positive, got {x:?}")));
        }
        let nf = self.n as f64;
        Ok(match self.case {
            1 | 2 => {
                let r = x[0];
                let b1 = self.betas[0];
                let c = self.curvature(b1);
                let mut v = 0.5 * nf * c * r * r + nf * (nf - 1.0) * b1 * b1 * r.ln();
                let mut g = nf * (c * r + (nf - 1.0) * b1 * b1 / r);
                if self.case == 2 {
                    let b2 = self.betas[1];
                    v += 2.0 * nf * b1 * b2 * r.ln();
                    g += 2.0 * nf * b1 * b2 / r;
                }
                (v, vec![g])
            }
            3 => {
                let (b1, b2) = (self.betas[0], self.betas[1]);
                let (c1, c2) = (self.curvature(b1), self.curvature(b2));
                let s = x[0] + x[1];
                let v = 0.5 * (c1 * x[0] * x[0] + c2 * x[1] * x[1]) + 2.0 * b1 * b2 * s.ln();
                (v, vec![c1 * x[0] + 2.0 * b1 * b2 / s, c2 * x[1] + 2.0 * b1 * b2 / s])
            }
            _ => {
                let (b1, b2) = (self.betas[0], self.betas[1]);
                let c = [self.curvature(b1), self.curvature(b2)];
                let bb = [b1, b2];
                let s = x[0] * x[0] + x[1] * x[1];
                let mut v = 4.0 * b1 * b2 * s.ln();
                let mut g = vec![8.0 * b1 * b2 * x[0] / s, 8.0 * b1 * b2 * x[1] / s];
                for i in 0..2 {
                    v += c[i] * x[i] * x[i] + 2.0 * bb[i] * bb[i] * (2.0 * x[i]).ln();
                    g[i] += 2.0 * c[i] * x[i] + 2.0 * bb[i] * bb[i] / x[i];
                }
                if self.case == 5 {
                    let b0 = self.betas[2];
                    for i in 0..2 {
                        v += 4.0 * b0 * bb[i] * x[i].ln();
                        g[i] += 4.0 * b0 * bb[i] / x[i];
                    }
                }
                (v, g)
            }
        })
    }

    /// Trust radius used by the optimizer: a quarter of the smallest radius.
    pub fn trust_radius(x: &[f64]) -> f64 {
        0.25 * x.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

impl Objective for Landscape {
    fn dim(&self) -> usize {
        self.predicted.len()
    }
    fn value(&self, x: &[f64]) -> f64 {
        self.eval(x).map(|v| v.0).unwrap_or(f64::NAN)
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.eval(x).map(|v| v.1).unwrap_or_else(|_| vec![f64::NAN; x.len()])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Max,
    Min,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Definiteness {
    NegativeDefinite,
    PositiveDefinite,
    Indefinite,
    Degenerate,
}

#[derive(Clone, Debug, Serialize)]
pub struct CriticalPoint {
    pub point: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub hessian_eigs: Vec<f64>,
    pub classification: Definiteness,
    pub iterations: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub trust_radius: Option<f64>,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 200, trust_radius: None }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

pub fn fd_hessian<O: Objective + ?Sized>(obj: &O, x: &[f64]) -> DMatrix<f64> {
    let d = x.len();
    let mut h = DMatrix::zeros(d, d);
    for i in 0..d {
        let step = 1e-5 * x[i].abs().max(1.0);
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[i] += step;
        xm[i] -= step;
        let (gp, gm) = (obj.gradient(&xp), obj.gradient(&xm));
        for j in 0..d {
            h[(j, i)] = (gp[j] - gm[j]) / (2.0 * step);
        }
    }
    (&h + h.transpose()) * 0.5
}

pub fn classify(eigs: &[f64]) -> Definiteness {
    const ZERO: f64 = 1e-8;
    if eigs.iter().any(|e| e.abs() <= ZERO) {
        Definiteness::Degenerate
    } else if eigs.iter().all(|e| *e < 0.0) {
        Definiteness::NegativeDefinite
    } else if eigs.iter().all(|e| *e > 0.0) {
        Definiteness::PositiveDefinite
    } else {
        Definiteness::Indefinite
    }
}

/// Damped Newton with a finite-difference Hessian, eigenvalue modification
/// towards the requested mode, trust-radius capping and backtracking.
pub fn find_critical<O: Objective + ?Sized>(
    obj: &O,
    start: &[f64],
    mode: Mode,
    opts: &NewtonOptions,
) -> Result<CriticalPoint> {
    let sign = if mode == Mode::Max { 1.0 } else { -1.0 };
    let mut x = start.to_vec();
    let mut f = obj.value(&x);
    if !f.is_finite() {
        return Err(Error::Domain("objective not finite at start".into()));
    }
    let mut g = obj.gradient(&x);
    let mut it = 0;
    while norm(&g) > opts.tol {
        if it >= opts.max_iter {
            return Err(Error::Convergence { iterations: it, residual: norm(&g) });
        }
        it += 1;
        let h = fd_hessian(obj, &x);
        let eig = SymmetricEigen::new(h);
        let scale = eig.eigenvalues.amax().max(1e-300);
        // Solve with the sign-corrected Hessian so the step always moves
        // towards the requested extremum.
        let gv = DVector::from_column_slice(&g);
        let mut p = DVector::zeros(x.len());
        for k in 0..x.len() {
            let v = eig.eigenvectors.column(k);
            let lam = eig.eigenvalues[k].abs().max(1e-10 * scale);
            p += v * (sign * v.dot(&gv) / lam);
        }
        let mut p: Vec<f64> = p.iter().cloned().collect();
        if let Some(tr) = opts.trust_radius {
            let pn = norm(&p);
            if pn > tr {
                p.iter_mut().for_each(|v| *v *= tr / pn);
            }
        }
        let slope = sign * g.iter().zip(&p).map(|(a, b)| a * b).sum::<f64>();
        let gn = norm(&g);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let xt: Vec<f64> = x.iter().zip(&p).map(|(a, b)| a + t * b).collect();
            let ft = obj.value(&xt);
            if ft.is_finite() {
                let gt = obj.gradient(&xt);
                let armijo = sign * (ft - f) >= 1e-4 * t * slope;
                if armijo || (t == 1.0 && norm(&gt) < gn) {
                    x = xt;
                    f = ft;
                    g = gt;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            return Err(Error::Convergence { iterations: it, residual: gn });
        }
    }
    let h = fd_hessian(obj, &x);
    let mut eigs: Vec<f64> = SymmetricEigen::new(h).eigenvalues.iter().cloned().collect();
    eigs.sort_by(|a, b| a.total_cmp(b));
    Ok(CriticalPoint {
        grad_norm: norm(&g),
        value: f,
        classification: classify(&eigs),
        hessian_eigs: eigs,
        point: x,
        iterations: it,
    })
}

/// Runs `find_critical` from `seeds` perturbed copies of `start` (relative
/// spread `spread`) and returns every converged result.
pub fn find_critical_multistart<O: Objective + ?Sized>(
    obj: &O,
    start: &[f64],
    mode: Mode,
    opts: &NewtonOptions,
    seeds: usize,
    spread: f64,
    seed: u64,
) -> Vec<CriticalPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..seeds)
        .filter_map(|_| {
            let s: Vec<f64> = start.iter().map(|v| v * (1.0 + spread * rng.random_range(-1.0..1.0))).collect();
            find_critical(obj, &s, mode, opts).ok()
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct ExpansionInputs {
    pub epsilon: f64,
    pub q: Vec<f64>,
    pub sqrt_det: Vec<f64>,
    pub robin: Vec<f64>,
    /// Row-major N x N matrix of G_K(z_i, z_j); the diagonal is ignored.
    pub green: Vec<f64>,
    pub p: f64,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct ExpansionTerms {
    pub leading: f64,
    pub profile: f64,
    pub robin: f64,
    pub interaction: f64,
    pub total: f64,
}

pub fn energy_expansion(inp: &ExpansionInputs) -> Result<ExpansionTerms> {
    let e = inp.epsilon;
    if !(e > 0.0 && e < 1.0) {
        return Err(Error::Domain(format!("epsilon must lie in (0, 1), got {e}")));
    }
    let n = inp.q.len();
    if inp.sqrt_det.len() != n || inp.robin.len() != n || inp.green.len() != n * n {
        return Err(Error::Validation("expansion input lengths disagree".into()));
    }
    let e2 = e * e;
    let mut t = ExpansionTerms { leading: 0.0, profile: 0.0, robin: 0.0, interaction: 0.0, total: 0.0 };
    for j in 0..n {
        let q2s = inp.q[j] * inp.q[j] * inp.sqrt_det[j];
        t.leading += PI * e2 * e.ln().abs() * q2s;
        t.profile += (inp.p - 1.0) * PI * e2 * q2s / 4.0;
        t.robin -= 2.0 * PI * PI * e2 * inp.q[j].powi(2) * inp.sqrt_det[j].powi(2) * inp.robin[j];
        for i in 0..n {
            if i != j {
                t.interaction -= 2.0 * PI * PI * e2 * inp.q[i] * inp.q[j] * inp.sqrt_det[i] * inp.sqrt_det[j]
                    * inp.green[i * n + j];
            }
        }
    }
    t.total = t.leading + t.profile + t.robin + t.interaction;
    Ok(t)
}
