//! Multigrid-preconditioned conjugate gradients for the flux-form operator,
//! and GMRES for the shifted (indefinite) Newton systems.

use nalgebra::{DMatrix, DVector};

use std::sync::Arc;

use crate::coeff::{CoefficientField, Vec2};
use crate::elliptic::grid::Grid;
use crate::elliptic::operator::{KFn, Operator};
use crate::error::{Error, Result};
use crate::par;

const OMEGA: f64 = 0.75;
const SWEEPS: usize = 2;
const COARSEST: usize = 17;

struct Level {
    op: Operator,
    inv_diag: Vec<f64>,
}

enum Coarse {
    Cholesky(nalgebra::Cholesky<f64, nalgebra::Dyn>),
    Jacobi,
}

/// Geometric V-cycle on nested grids (n - 1 a power of two times the coarsest
/// size). Coarse operators are rediscretized from the same coefficient map.
pub struct Multigrid {
    levels: Vec<Level>,
    coarse: Coarse,
}

fn level(op: Operator) -> Level {
    let inv_diag = op.diag().iter().map(|d| if *d != 0.0 { 1.0 / d } else { 0.0 }).collect();
    Level { op, inv_diag }
}

fn interior_dense(op: &Operator) -> DMatrix<f64> {
    let n = op.grid.n;
    let m = n - 2;
    let mut a = DMatrix::zeros(m * m, m * m);
    for j in 1..n - 1 {
        for i in 1..n - 1 {
            let r = (j - 1) * m + (i - 1);
            for dj in -1i64..=1 {
                for di in -1i64..=1 {
                    let (ii, jj) = ((i as i64 + di) as usize, (j as i64 + dj) as usize);
                    if op.grid.is_boundary(ii, jj) {
                        continue;
                    }
                    a[(r, (jj - 1) * m + (ii - 1))] = op.coef[j * n + i][super::operator::slot(di, dj)];
                }
            }
        }
    }
    a
}

impl Multigrid {
    pub fn new(op: &Operator, k: Option<&KFn>) -> Self {
        let mut levels = vec![level(op.clone())];
        let mut g = op.grid;
        if let Some(k) = k {
            while g.n > COARSEST {
                match g.coarsen() {
                    Some(c) => {
                        levels.push(level(Operator::assemble(c, k.as_ref())));
                        g = c;
                    }
                    None => break,
                }
            }
        }
        let last = &levels.last().unwrap().op;
        let coarse = if last.grid.n <= COARSEST {
            match interior_dense(last).cholesky() {
                Some(c) => Coarse::Cholesky(c),
                None => Coarse::Jacobi,
            }
        } else {
            Coarse::Jacobi
        };
        Self { levels, coarse }
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    /// z = M^{-1} r, one symmetric V-cycle from a zero initial guess.
    pub fn precondition(&self, r: &[f64], z: &mut [f64]) {
        let v = self.vcycle(0, r);
        z.copy_from_slice(&v);
    }

    fn smooth(&self, lvl: &Level, b: &[f64], x: &mut Vec<f64>) {
        let n = lvl.op.grid.n;
        let mut ax = vec![0.0; x.len()];
        lvl.op.apply(x, &mut ax);
        let inv = &lvl.inv_diag;
        par::for_rows(x, n, |j, row| {
            for (i, v) in row.iter_mut().enumerate() {
                let k = j * n + i;
                *v += OMEGA * inv[k] * (b[k] - ax[k]);
            }
        });
    }

    fn vcycle(&self, l: usize, b: &[f64]) -> Vec<f64> {
        let lvl = &self.levels[l];
        let g = lvl.op.grid;
        if l + 1 == self.levels.len() {
            return self.coarse_solve(lvl, b);
        }
        let mut x = vec![0.0; b.len()];
        for _ in 0..SWEEPS {
            self.smooth(lvl, b, &mut x);
        }
        let mut ax = vec![0.0; b.len()];
        lvl.op.apply(&x, &mut ax);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(a, c)| a - c).collect();
        let cg = self.levels[l + 1].op.grid;
        let rc = restrict(&g, &cg, &r);
        let ec = self.vcycle(l + 1, &rc);
        prolong_add(&g, &cg, &ec, &mut x);
        for _ in 0..SWEEPS {
            self.smooth(lvl, b, &mut x);
        }
        x
    }

    fn coarse_solve(&self, lvl: &Level, b: &[f64]) -> Vec<f64> {
        let g = lvl.op.grid;
        let n = g.n;
        match &self.coarse {
            Coarse::Cholesky(ch) => {
                let m = n - 2;
                let mut rhs = DVector::zeros(m * m);
                for j in 1..n - 1 {
                    for i in 1..n - 1 {
                        rhs[(j - 1) * m + (i - 1)] = b[j * n + i];
                    }
                }
                let s = ch.solve(&rhs);
                let mut x = vec![0.0; n * n];
                for j in 1..n - 1 {
                    for i in 1..n - 1 {
                        x[j * n + i] = s[(j - 1) * m + (i - 1)];
                    }
                }
                x
            }
            Coarse::Jacobi => {
                let mut x = vec![0.0; b.len()];
                for _ in 0..SWEEPS {
                    self.smooth(lvl, b, &mut x);
                }
                x
            }
        }
    }
}

/// Transpose of bilinear prolongation (full weighting times four).
fn restrict(fine: &Grid, coarse: &Grid, r: &[f64]) -> Vec<f64> {
    let (nf, nc) = (fine.n, coarse.n);
    let mut out = vec![0.0; nc * nc];
    par::for_rows(&mut out, nc, |jc, row| {
        if jc == 0 || jc == nc - 1 {
            return;
        }
        for ic in 1..nc - 1 {
            let (i, j) = (2 * ic, 2 * jc);
            let mut s = 0.0;
            for (dj, wj) in [(-1i64, 0.5), (0, 1.0), (1, 0.5)] {
                for (di, wi) in [(-1i64, 0.5), (0, 1.0), (1, 0.5)] {
                    s += wi * wj * r[(j as i64 + dj) as usize * nf + (i as i64 + di) as usize];
                }
            }
            row[ic] = s;
        }
    });
    out
}

fn prolong_add(fine: &Grid, coarse: &Grid, e: &[f64], x: &mut [f64]) {
    let (nf, nc) = (fine.n, coarse.n);
    par::for_rows(x, nf, |j, row| {
        if j == 0 || j == nf - 1 {
            return;
        }
        let (jc, oj) = (j / 2, j % 2);
        for i in 1..nf - 1 {
            let (ic, oi) = (i / 2, i % 2);
            let v = match (oi, oj) {
                (0, 0) => e[jc * nc + ic],
                (1, 0) => 0.5 * (e[jc * nc + ic] + e[jc * nc + ic + 1]),
                (0, 1) => 0.5 * (e[jc * nc + ic] + e[(jc + 1) * nc + ic]),
                _ => 0.25 * (e[jc * nc + ic] + e[jc * nc + ic + 1] + e[(jc + 1) * nc + ic] + e[(jc + 1) * nc + ic + 1]),
            };
            row[i] += v;
        }
    });
}

#[derive(Clone, Copy, Debug)]
pub struct SolveStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Solves A x = b on interior nodes with the boundary entries of `x` held as
/// Dirichlet data. The interior of `x` is the initial guess.
pub fn pcg(op: &Operator, mg: Option<&Multigrid>, b: &[f64], x: &mut [f64], rtol: f64, max_iter: usize) -> Result<SolveStats> {
    let g = op.grid;
    let n = g.n;
    let len = g.len();
    // reference norm: residual of the boundary extension alone
    let mut ext = vec![0.0; len];
    for j in 0..n {
        for i in 0..n {
            if g.is_boundary(i, j) {
                ext[j * n + i] = x[j * n + i];
            }
        }
    }
    let mut tmp = vec![0.0; len];
    op.apply(&ext, &mut tmp);
    let mut reference = 0.0;
    for j in 1..n - 1 {
        for i in 1..n - 1 {
            let k = j * n + i;
            reference += (b[k] - tmp[k]).powi(2);
        }
    }
    let reference = reference.sqrt();
    if reference == 0.0 {
        for j in 1..n - 1 {
            for i in 1..n - 1 {
                x[j * n + i] = 0.0;
            }
        }
        return Ok(SolveStats { iterations: 0, relative_residual: 0.0 });
    }
    let mask_interior = |v: &mut [f64]| {
        for j in 0..n {
            for i in 0..n {
                if g.is_boundary(i, j) {
                    v[j * n + i] = 0.0;
                }
            }
        }
    };
    op.apply(x, &mut tmp);
    let mut r: Vec<f64> = b.iter().zip(&tmp).map(|(a, c)| a - c).collect();
    mask_interior(&mut r);
    let diag = op.diag();
    let mut z = vec![0.0; len];
    let apply_prec = |r: &[f64], z: &mut [f64]| match mg {
        Some(m) => m.precondition(r, z),
        None => {
            for k in 0..len {
                z[k] = if diag[k] != 0.0 { r[k] / diag[k] } else { 0.0 };
            }
        }
    };
    apply_prec(&r, &mut z);
    let mut p = z.clone();
    let mut rz = par::dot(&r, &z);
    let mut rel = par::norm(&r) / reference;
    let mut it = 0;
    let mut ap = vec![0.0; len];
    while rel > rtol {
        if it >= max_iter {
            return Err(Error::Solver(format!("PCG stalled at relative residual {rel:e} after {it} iterations")));
        }
        it += 1;
        op.apply(&p, &mut ap);
        let pap = par::dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::Solver(format!("operator not positive definite (p^T A p = {pap:e})")));
        }
        let a = rz / pap;
        par::axpy(a, &p, x);
        par::axpy(-a, &ap, &mut r);
        apply_prec(&r, &mut z);
        let rz_new = par::dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        par::zip_apply(&mut p, &z, |pi, zi| *pi = zi + beta * *pi);
        rel = par::norm(&r) / reference;
    }
    Ok(SolveStats { iterations: it, relative_residual: rel })
}

/// Right-preconditioned restarted GMRES for (A - diag(shift)) x = b with zero
/// Dirichlet data; `x` holds the initial guess.
pub fn gmres_shifted(
    op: &Operator,
    shift: &[f64],
    mg: &Multigrid,
    b: &[f64],
    x: &mut [f64],
    rtol: f64,
    restart: usize,
    max_iter: usize,
) -> Result<SolveStats> {
    let len = op.grid.len();
    let apply = |v: &[f64], out: &mut [f64]| {
        op.apply(v, out);
        for k in 0..len {
            out[k] -= shift[k] * v[k];
        }
    };
    let bnorm = par::norm(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(SolveStats { iterations: 0, relative_residual: 0.0 });
    }
    let mut total = 0;
    let mut tmp = vec![0.0; len];
    loop {
        apply(x, &mut tmp);
        let r: Vec<f64> = b.iter().zip(&tmp).map(|(a, c)| a - c).collect();
        let beta = par::norm(&r);
        let rel0 = beta / bnorm;
        if rel0 <= rtol {
            return Ok(SolveStats { iterations: total, relative_residual: rel0 });
        }
        if total >= max_iter {
            return Err(Error::Solver(format!("GMRES stalled at relative residual {rel0:e}")));
        }
        let mut v: Vec<Vec<f64>> = vec![r.iter().map(|a| a / beta).collect()];
        let mut zs: Vec<Vec<f64>> = Vec::new();
        let mut hmat = vec![vec![0.0; restart]; restart + 1];
        let (mut cs, mut sn) = (vec![0.0; restart], vec![0.0; restart]);
        let mut gvec = vec![0.0; restart + 1];
        gvec[0] = beta;
        let mut k_used = 0;
        for k in 0..restart {
            let mut z = vec![0.0; len];
            mg.precondition(&v[k], &mut z);
            let mut w = vec![0.0; len];
            apply(&z, &mut w);
            zs.push(z);
            for i in 0..=k {
                let hik = par::dot(&w, &v[i]);
                hmat[i][k] = hik;
                par::axpy(-hik, &v[i], &mut w);
            }
            let wn = par::norm(&w);
            hmat[k + 1][k] = wn;
            for i in 0..k {
                let t = cs[i] * hmat[i][k] + sn[i] * hmat[i + 1][k];
                hmat[i + 1][k] = -sn[i] * hmat[i][k] + cs[i] * hmat[i + 1][k];
                hmat[i][k] = t;
            }
            let d = (hmat[k][k].powi(2) + hmat[k + 1][k].powi(2)).sqrt();
            cs[k] = hmat[k][k] / d;
            sn[k] = hmat[k + 1][k] / d;
            hmat[k][k] = d;
            hmat[k + 1][k] = 0.0;
            gvec[k + 1] = -sn[k] * gvec[k];
            gvec[k] *= cs[k];
            k_used = k + 1;
            total += 1;
            if gvec[k + 1].abs() / bnorm <= rtol || wn == 0.0 || total >= max_iter {
                break;
            }
            v.push(w.iter().map(|a| a / wn).collect());
        }
        let mut y = vec![0.0; k_used];
        for i in (0..k_used).rev() {
            let mut s = gvec[i];
            for j in i + 1..k_used {
                s -= hmat[i][j] * y[j];
            }
            y[i] = s / hmat[i][i];
        }
        for (i, yi) in y.iter().enumerate() {
            par::axpy(*yi, &zs[i], x);
        }
    }
}

/// Assembled operator plus its multigrid hierarchy, reused across solves.
pub struct Discretization {
    pub op: Operator,
    pub mg: Multigrid,
    pub rtol: f64,
    pub max_iter: usize,
}

impl Discretization {
    pub fn new(grid: Grid, field: &CoefficientField) -> Self {
        let f = field.clone();
        let k: KFn = Arc::new(move |x: Vec2| f.k(x));
        let op = Operator::assemble(grid, k.as_ref());
        let mg = Multigrid::new(&op, Some(&k));
        Self { op, mg, rtol: 1e-10, max_iter: 500 }
    }

    pub fn grid(&self) -> Grid {
        self.op.grid
    }

    /// Solves A x = b (b already scaled by h²) with the boundary of `x` as data.
    pub fn solve(&self, b: &[f64], x: &mut [f64]) -> Result<SolveStats> {
        pcg(&self.op, Some(&self.mg), b, x, self.rtol, self.max_iter)
    }
}
