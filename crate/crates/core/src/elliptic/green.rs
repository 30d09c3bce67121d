//! Discrete Green's function of -div(K∇·) on the square, its regular part,
//! the Robin value and the two explicit correctors of the regular part.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::coeff::{inv_sqrt_spd, sqrt_spd, CoefficientField, Mat2, Vec2};
use crate::elliptic::grid::{Grid, ScalarField};
use crate::elliptic::solver::{Discretization, SolveStats};
use crate::error::{Error, Result};
use crate::par;

/// Γ(z) = -(1/2π) ln|z|
pub fn gamma(z: Vec2) -> f64 {
    -z.norm().ln() / (2.0 * PI)
}

/// Frozen-coefficient fundamental solution at a source y:
/// √det K(y)^{-1} Γ(T_y(x - y)), with its first and second x-derivatives.
#[derive(Clone, Copy, Debug)]
pub struct Singular {
    pub y: Vec2,
    pub t: Mat2,
    pub t_inv: Mat2,
    /// K(y)^{-1} = TᵀT
    pub m: Mat2,
    pub k_y: Mat2,
    pub sqrt_det: f64,
}

impl Singular {
    pub fn new(field: &CoefficientField, y: Vec2) -> Result<Self> {
        let metric = field.eval_metric(y)?;
        let t = inv_sqrt_spd(&metric.k)?;
        let t_inv = sqrt_spd(&metric.k)?;
        Ok(Self { y, t, t_inv, m: t.transpose() * t, k_y: metric.k, sqrt_det: metric.sqrt_det })
    }

    pub fn value(&self, x: Vec2) -> f64 {
        gamma(self.t * (x - self.y)) / self.sqrt_det
    }

    pub fn grad(&self, x: Vec2) -> Vec2 {
        let d = x - self.y;
        let md = self.m * d;
        -md / (2.0 * PI * self.sqrt_det * d.dot(&md))
    }

    pub fn hess(&self, x: Vec2) -> Mat2 {
        let d = x - self.y;
        let md = self.m * d;
        let q = d.dot(&md);
        -(self.m / q - md * md.transpose() * (2.0 / (q * q))) / (2.0 * PI * self.sqrt_det)
    }

    /// div((K(x) - K(y))∇Γ̃), the load seen by the regular part.
    pub fn regular_load(&self, field: &CoefficientField, x: Vec2) -> f64 {
        let g = self.grad(x);
        let hs = self.hess(x);
        let dk = field.dk(x);
        let dk_k = field.k(x) - self.k_y;
        let mut s = 0.0;
        for j in 0..2 {
            let div_col = dk[0][(0, j)] + dk[1][(1, j)];
            s += div_col * g[j];
            for i in 0..2 {
                s += dk_k[(i, j)] * hs[(i, j)];
            }
        }
        s
    }
}

/// Correctors F1, F2 of the regular part at x for the source y.
pub fn eval_correctors(field: &CoefficientField, y: Vec2, x: Vec2) -> Result<(f64, f64)> {
    let sing = Singular::new(field, y)?;
    correctors(&sing, &field.dk(y), x)
}

fn correctors(sing: &Singular, dk: &[Mat2; 2], x: Vec2) -> Result<(f64, f64)> {
    let d = x - sing.y;
    if d.norm() == 0.0 {
        return Err(Error::Singularity("correctors are singular at x = y".into()));
    }
    let (t, ti) = (&sing.t, &sing.t_inv);
    let z = t * d;
    let r2 = z.norm_squared();
    let ln = 0.5 * r2.ln();
    let mut f1 = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            for m in 0..2 {
                f1 += t[(m, j)] * dk[i][(i, j)] * z[m] * ln;
            }
        }
    }
    f1 *= -1.0 / (4.0 * PI * sing.sqrt_det);
    // kernel(a; b, c) = -(1/8) z_a z_b z_c / |z|² + (1/8) σ z_l ln|z|
    let kernel = |a: usize, b: usize, c: usize| -> f64 {
        let cubic = -z[a] * z[b] * z[c] / (8.0 * r2);
        let (sign, l) = match (a, b, c) {
            (0, 0, 0) => (1.0, 0),
            (0, 0, 1) | (0, 1, 0) => (1.0, 1),
            (0, 1, 1) => (-1.0, 0),
            (1, 0, 0) => (-1.0, 1),
            (1, 0, 1) | (1, 1, 0) => (1.0, 0),
            _ => (1.0, 1),
        };
        cubic + sign * z[l] * ln / 8.0
    };
    let mut f2 = 0.0;
    for alpha in 0..2 {
        for i in 0..2 {
            for j in 0..2 {
                let dkij = dk[alpha][(i, j)];
                if dkij == 0.0 {
                    continue;
                }
                let mut s = 0.0;
                for a in 0..2 {
                    for b in 0..2 {
                        for c in 0..2 {
                            s += ti[(alpha, a)] * t[(b, j)] * t[(c, i)] * kernel(a, b, c);
                        }
                    }
                }
                f2 += dkij * s;
            }
        }
    }
    f2 /= PI * sing.sqrt_det;
    Ok((f1, f2))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GreenMethod {
    /// Solve for the regular part with the analytic load div((K - K(y))∇Γ̃).
    SingularSubtraction,
    /// Unit load on the nearest node, scaled by 1/cell-area.
    PointLoad,
}

#[derive(Clone, Debug)]
pub struct GreenResult {
    pub y: Vec2,
    pub g: ScalarField,
    /// S(x) = G(x, y) - √det K(y)^{-1} Γ(T_y(x - y))
    pub s: ScalarField,
    /// S + F1 + F2, the part expected to be C^{1,γ}
    pub smooth: ScalarField,
    pub robin: f64,
    pub stats: SolveStats,
}

impl GreenResult {
    /// G(x, y) by bilinear interpolation of the regular part plus the exact
    /// singular part, valid off the source node.
    pub fn value_at(&self, field: &CoefficientField, x: Vec2) -> Result<f64> {
        let sing = Singular::new(field, self.y)?;
        Ok(self.s.interpolate(x)? + sing.value(x))
    }
}

pub fn green_function(grid: Grid, field: &CoefficientField, y: Vec2) -> Result<GreenResult> {
    let disc = Discretization::new(grid, field);
    green_function_with(&disc, field, y, GreenMethod::SingularSubtraction)
}

pub fn green_function_with(disc: &Discretization, field: &CoefficientField, y: Vec2, method: GreenMethod) -> Result<GreenResult> {
    let grid = disc.grid();
    let h = grid.spacing();
    let lim = grid.half_width - 4.0 * h;
    if !(y[0].abs() <= lim + 1e-12 && y[1].abs() <= lim + 1e-12) {
        return Err(Error::Placement(format!("source ({}, {}) closer than 4 spacings to the boundary", y[0], y[1])));
    }
    let sing = Singular::new(field, y)?;
    let dk_y = field.dk(y);
    let n = grid.n;
    let (iy, jy) = grid.nearest(y);
    let near = |x: Vec2| (x - y).norm() < 0.5 * h;
    let mut s = vec![0.0; grid.len()];
    let stats = match method {
        GreenMethod::SingularSubtraction => {
            let mut b = par::map_collect(grid.len(), |k| {
                let (i, j) = (k % n, k / n);
                let x = grid.point(i, j);
                if grid.is_boundary(i, j) || near(x) {
                    0.0
                } else {
                    h * h * sing.regular_load(field, x)
                }
            });
            for j in 0..n {
                for i in 0..n {
                    if grid.is_boundary(i, j) {
                        let k = j * n + i;
                        s[k] = -sing.value(grid.point(i, j));
                        b[k] = 0.0;
                    }
                }
            }
            disc.solve(&b, &mut s)?
        }
        GreenMethod::PointLoad => {
            let mut b = vec![0.0; grid.len()];
            b[jy * n + iy] = 1.0;
            let mut g = vec![0.0; grid.len()];
            let st = disc.solve(&b, &mut g)?;
            for j in 0..n {
                for i in 0..n {
                    let x = grid.point(i, j);
                    let k = j * n + i;
                    s[k] = if near(x) { f64::NAN } else { g[k] - sing.value(x) };
                }
            }
            // the source node has no regular-part value; fill from neighbours
            let k = jy * n + iy;
            if s[k].is_nan() {
                s[k] = 0.25 * (s[k - 1] + s[k + 1] + s[k - n] + s[k + n]);
            }
            st
        }
    };
    let r_eff = h / PI.sqrt();
    let g = (0..grid.len())
        .map(|k| {
            let x = grid.point(k % n, k / n);
            if grid.is_boundary(k % n, k / n) {
                0.0
            } else if near(x) {
                s[k] - r_eff.ln() / (2.0 * PI * sing.sqrt_det)
            } else {
                s[k] + sing.value(x)
            }
        })
        .collect();
    let smooth: Vec<f64> = par::map_collect(grid.len(), |k| {
        let x = grid.point(k % n, k / n);
        if near(x) {
            s[k]
        } else {
            let (f1, f2) = correctors(&sing, &dk_y, x).unwrap_or((0.0, 0.0));
            s[k] + f1 + f2
        }
    });
    let robin = ring_fit(&grid, &smooth, y, 3.0 * h, 6.0 * h)?;
    Ok(GreenResult {
        y,
        g: ScalarField { grid, values: g, label: "green".into() },
        s: ScalarField { grid, values: s, label: "regular_part".into() },
        smooth: ScalarField { grid, values: smooth, label: "regular_part_plus_correctors".into() },
        robin,
        stats,
    })
}

/// Least-squares quadratic through the nodes with r_in ≤ |x - y| ≤ r_out,
/// evaluated at y.
pub fn ring_fit(grid: &Grid, values: &[f64], y: Vec2, r_in: f64, r_out: f64) -> Result<f64> {
    Ok(ring_fit_jet(grid, values, y, r_in, r_out)?.0)
}

/// Value and gradient at y of the ring quadratic fit.
pub fn ring_fit_jet(grid: &Grid, values: &[f64], y: Vec2, r_in: f64, r_out: f64) -> Result<(f64, Vec2)> {
    let h = grid.spacing();
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    for j in 0..grid.n {
        for i in 0..grid.n {
            let d = (grid.point(i, j) - y) / h;
            let r = d.norm() * h;
            if r >= r_in - 1e-12 && r <= r_out + 1e-12 {
                rows.push([1.0, d[0], d[1], d[0] * d[0], d[0] * d[1], d[1] * d[1]]);
                rhs.push(values[grid.idx(i, j)]);
            }
        }
    }
    if rows.len() < 6 {
        return Err(Error::Resolution("too few nodes on the extrapolation ring".into()));
    }
    let a = DMatrix::from_fn(rows.len(), 6, |r, c| rows[r][c]);
    let b = DVector::from_vec(rhs);
    let sol = a.svd(true, true).solve(&b, 1e-14).map_err(|e| Error::Solver(e.to_string()))?;
    Ok((sol[0], Vec2::new(sol[1], sol[2]) / h))
}

/// Central-difference gradient of a grid field at interior node (i, j).
pub fn node_gradient(f: &ScalarField, i: usize, j: usize) -> Vec2 {
    let n = f.grid.n;
    let h = f.grid.spacing();
    let v = &f.values;
    Vec2::new((v[j * n + i + 1] - v[j * n + i - 1]) / (2.0 * h), (v[(j + 1) * n + i] - v[(j - 1) * n + i]) / (2.0 * h))
}

/// Max of the measured gradient norm over `samples` points on the circle of
/// radius r about c; node gradients are bilinearly interpolated.
pub fn ring_gradient_max(f: &ScalarField, c: Vec2, r: f64, samples: usize) -> Result<f64> {
    ring_gradient_deviation(f, c, r, samples, Vec2::zeros())
}

/// Max over the ring of |∇f - g0|.
pub fn ring_gradient_deviation(f: &ScalarField, c: Vec2, r: f64, samples: usize, g0: Vec2) -> Result<f64> {
    let g = f.grid;
    let mut best: f64 = 0.0;
    for k in 0..samples {
        let th = 2.0 * PI * k as f64 / samples as f64;
        let x = c + r * Vec2::new(th.cos(), th.sin());
        let (fx, fy) = g.frac(x);
        let (i0, j0) = (fx.floor() as usize, fy.floor() as usize);
        if i0 < 1 || j0 < 1 || i0 + 2 >= g.n || j0 + 2 >= g.n {
            return Err(Error::Domain("gradient probe too close to the boundary".into()));
        }
        let (tx, ty) = (fx - i0 as f64, fy - j0 as f64);
        let grad = node_gradient(f, i0, j0) * ((1.0 - tx) * (1.0 - ty))
            + node_gradient(f, i0 + 1, j0) * (tx * (1.0 - ty))
            + node_gradient(f, i0, j0 + 1) * ((1.0 - tx) * ty)
            + node_gradient(f, i0 + 1, j0 + 1) * (tx * ty);
        best = best.max((grad - g0).norm());
    }
    Ok(best)
}
