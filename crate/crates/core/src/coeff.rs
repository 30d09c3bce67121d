//! Coefficient fields K(x), the weight q(x) and the local quantities built from them.

use std::fmt;
use std::sync::Arc;

use nalgebra::{Matrix2, SymmetricEigen, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Mat2 = Matrix2<f64>;
pub type Vec2 = Vector2<f64>;

pub type MatrixMap = Arc<dyn Fn(Vec2) -> Mat2 + Send + Sync>;

#[derive(Clone)]
pub enum FieldKind {
    Helical { h: f64 },
    Identity,
    Custom(MatrixMap),
}

impl fmt::Debug for FieldKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FieldKind::Helical { h } => write!(f, "Helical {{ h: {h} }}"),
            FieldKind::Identity => write!(f, "Identity"),
            FieldKind::Custom(_) => write!(f, "Custom"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct CoefficientField {
    pub kind: FieldKind,
    /// Half width R of the square computational domain [-R, R]^2.
    pub half_width: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct Metric {
    pub k: Mat2,
    pub det: f64,
    pub sqrt_det: f64,
}

impl CoefficientField {
    pub fn helical(h: f64, half_width: f64) -> Self {
        Self { kind: FieldKind::Helical { h }, half_width }
    }

    pub fn identity(half_width: f64) -> Self {
        Self { kind: FieldKind::Identity, half_width }
    }

    pub fn custom<F>(f: F, half_width: f64) -> Self
    where
        F: Fn(Vec2) -> Mat2 + Send + Sync + 'static,
    {
        Self { kind: FieldKind::Custom(Arc::new(f)), half_width }
    }

    pub fn contains(&self, x: Vec2) -> bool {
        let r = self.half_width * (1.0 + 1e-12);
        x[0].abs() <= r && x[1].abs() <= r
    }

    /// K(x) without domain or SPD checks; used in tight loops.
    #[inline]
    pub fn k(&self, x: Vec2) -> Mat2 {
        match &self.kind {
            FieldKind::Helical { h } => {
                let d = h * h + x.norm_squared();
                Mat2::identity() - x * x.transpose() / d
            }
            FieldKind::Identity => Mat2::identity(),
            FieldKind::Custom(f) => f(x),
        }
    }

    pub fn eval_metric(&self, x: Vec2) -> Result<Metric> {
        if !self.contains(x) {
            return Err(Error::Domain(format!("point ({}, {}) outside [-R, R]^2", x[0], x[1])));
        }
        let k = self.k(x);
        if let FieldKind::Custom(_) = self.kind {
            check_spd(&k)?;
        }
        let det = k.determinant();
        Ok(Metric { k, det, sqrt_det: det.sqrt() })
    }

    pub fn sqrt_det(&self, x: Vec2) -> f64 {
        match &self.kind {
            FieldKind::Helical { h } => h / (h * h + x.norm_squared()).sqrt(),
            FieldKind::Identity => 1.0,
            FieldKind::Custom(f) => f(x).determinant().sqrt(),
        }
    }

    /// T = K(y)^{-1/2}, the SPD factor with T^{-1} T^{-T} = K(y).
    pub fn factor_t(&self, y: Vec2) -> Result<Mat2> {
        let m = self.eval_metric(y)?;
        inv_sqrt_spd(&m.k)
    }

    /// Partial derivatives [dK/dx1, dK/dx2] at x.
    pub fn dk(&self, x: Vec2) -> [Mat2; 2] {
        match &self.kind {
            FieldKind::Helical { h } => {
                let d = h * h + x.norm_squared();
                let xxt = x * x.transpose();
                let mut out = [Mat2::zeros(); 2];
                for (a, o) in out.iter_mut().enumerate() {
                    let mut e = Vec2::zeros();
                    e[a] = 1.0;
                    *o = -(e * x.transpose() + x * e.transpose()) / d + xxt * (2.0 * x[a] / (d * d));
                }
                out
            }
            FieldKind::Identity => [Mat2::zeros(); 2],
            FieldKind::Custom(f) => {
                let step = fd_step(x);
                let mut out = [Mat2::zeros(); 2];
                for (a, o) in out.iter_mut().enumerate() {
                    let mut e = Vec2::zeros();
                    e[a] = step;
                    *o = (f(x + e) - f(x - e)) / (2.0 * step);
                }
                out
            }
        }
    }
}

pub(crate) fn fd_step(x: Vec2) -> f64 {
    1e-5 * x.norm().max(1.0)
}

pub fn check_spd(k: &Mat2) -> Result<()> {
    if (k[(0, 1)] - k[(1, 0)]).abs() > 1e-12 * k.norm().max(1.0) {
        return Err(Error::Validation("coefficient matrix not symmetric".into()));
    }
    let eig = SymmetricEigen::new(*k);
    if eig.eigenvalues.min() <= 0.0 || !eig.eigenvalues.iter().all(|v| v.is_finite()) {
        return Err(Error::Validation(format!(
            "coefficient matrix not positive definite (eigenvalues {:?})",
            eig.eigenvalues.as_slice()
        )));
    }
    Ok(())
}

fn spd_power(k: &Mat2, power: f64) -> Result<Mat2> {
    let eig = SymmetricEigen::new(*k);
    if eig.eigenvalues.min() <= 0.0 {
        return Err(Error::Factorization(format!(
            "matrix not positive definite (eigenvalues {:?})",
            eig.eigenvalues.as_slice()
        )));
    }
    let d = Mat2::from_diagonal(&eig.eigenvalues.map(|l| l.powf(power)));
    let t = eig.eigenvectors * d * eig.eigenvectors.transpose();
    Ok((t + t.transpose()) * 0.5)
}

pub fn inv_sqrt_spd(k: &Mat2) -> Result<Mat2> {
    spd_power(k, -0.5)
}

pub fn sqrt_spd(k: &Mat2) -> Result<Mat2> {
    spd_power(k, 0.5)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightProfile {
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct WeightEval {
    pub q: f64,
    /// q^2 sqrt(det K)
    pub f: f64,
    pub grad: Option<Vec2>,
    pub hess: Option<Mat2>,
}

impl WeightProfile {
    pub fn new(alpha: f64, beta: f64) -> Self {
        Self { alpha, beta }
    }

    #[inline]
    pub fn q(&self, x: Vec2) -> f64 {
        0.5 * self.alpha * x.norm_squared() + self.beta
    }

    /// Value and, optionally, gradient and Hessian of q^2 sqrt(det K).
    pub fn eval(&self, field: &CoefficientField, x: Vec2, derivatives: bool) -> Result<WeightEval> {
        let q = self.q(x);
        if q <= 0.0 {
            return Err(Error::Assumption(format!("q = {q} <= 0 at ({}, {})", x[0], x[1])));
        }
        let f = q * q * field.sqrt_det(x);
        if !derivatives {
            return Ok(WeightEval { q, f, grad: None, hess: None });
        }
        // Radial forms in s = |x|^2: f(s) = q(s)^2 g(s).
        let radial = match field.kind {
            FieldKind::Helical { h } => {
                let d = h * h + x.norm_squared();
                Some((h / d.sqrt(), -0.5 * h * d.powf(-1.5), 0.75 * h * d.powf(-2.5)))
            }
            FieldKind::Identity => Some((1.0, 0.0, 0.0)),
            FieldKind::Custom(_) => None,
        };
        let (grad, hess) = match radial {
            Some((g, gs, gss)) => {
                let qs = 0.5 * self.alpha;
                let fs = 2.0 * q * qs * g + q * q * gs;
                let fss = 2.0 * qs * qs * g + 4.0 * q * qs * gs + q * q * gss;
                (x * (2.0 * fs), Mat2::identity() * (2.0 * fs) + x * x.transpose() * (4.0 * fss))
            }
            None => {
                let fx = |y: Vec2| self.q(y).powi(2) * field.sqrt_det(y);
                let step = fd_step(x);
                let hstep = 1e-4 * x.norm().max(1.0);
                let mut grad = Vec2::zeros();
                let mut hess = Mat2::zeros();
                for a in 0..2 {
                    let mut ea = Vec2::zeros();
                    ea[a] = step;
                    grad[a] = (fx(x + ea) - fx(x - ea)) / (2.0 * step);
                    for b in 0..2 {
                        let mut da = Vec2::zeros();
                        let mut db = Vec2::zeros();
                        da[a] = hstep;
                        db[b] = hstep;
                        hess[(a, b)] = (fx(x + da + db) - fx(x + da - db) - fx(x - da + db)
                            + fx(x - da - db))
                            / (4.0 * hstep * hstep);
                    }
                }
                (grad, (hess + hess.transpose()) * 0.5)
            }
        };
        Ok(WeightEval { q, f, grad: Some(grad), hess: Some(hess) })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AssumptionReport {
    pub samples: usize,
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    pub min_q: f64,
    pub grad_norm_at_origin: f64,
    pub k1: bool,
    pub q1: bool,
    pub kq: bool,
    pub passed: bool,
}

fn halton(mut i: usize, base: usize) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

/// Samples the inscribed disk of radius R (plus its boundary circle) and checks
/// positivity of K, positivity of q and stationarity of q^2 sqrt(det K) at 0.
pub fn validate_assumptions(
    field: &CoefficientField,
    profile: &WeightProfile,
    sample_count: usize,
) -> AssumptionReport {
    let r_max = field.half_width;
    let boundary = 64;
    let mut min_eig = f64::INFINITY;
    let mut max_eig = f64::NEG_INFINITY;
    let mut min_q = f64::INFINITY;
    let mut symmetric = true;
    let total = sample_count + boundary;
    for i in 0..total {
        let (r, th) = if i < sample_count {
            (r_max * halton(i + 1, 2).sqrt(), 2.0 * std::f64::consts::PI * halton(i + 1, 3))
        } else {
            (r_max, 2.0 * std::f64::consts::PI * (i - sample_count) as f64 / boundary as f64)
        };
        let x = Vec2::new(r * th.cos(), r * th.sin());
        let k = field.k(x);
        if (k[(0, 1)] - k[(1, 0)]).abs() > 1e-12 * k.norm().max(1.0) {
            symmetric = false;
        }
        let eig = SymmetricEigen::new(k).eigenvalues;
        min_eig = min_eig.min(eig.min());
        max_eig = max_eig.max(eig.max());
        min_q = min_q.min(profile.q(x));
    }
    let grad_norm = match profile.eval(field, Vec2::zeros(), true) {
        Ok(w) => w.grad.map(|g| g.norm()).unwrap_or(f64::INFINITY),
        Err(_) => f64::INFINITY,
    };
    let k1 = symmetric && min_eig > 0.0 && max_eig.is_finite();
    let q1 = min_q > 0.0;
    let kq = grad_norm <= 1e-10;
    AssumptionReport {
        samples: total,
        min_eigenvalue: min_eig,
        max_eigenvalue: max_eig,
        min_q,
        grad_norm_at_origin: grad_norm,
        k1,
        q1,
        kq,
        passed: k1 && q1 && kq,
    }
}
