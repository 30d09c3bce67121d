//! Symmetric 9-point flux-form discretization of -div(K grad u).
//!
//! Each cell carries K at its center. The cell energy averages the four
//! one-sided corner gradients, so the assembled matrix is symmetric positive
//! definite for SPD K and reduces to the 5-point Laplacian when K = I. Rows
//! are scaled as stiffness rows: (A u)_i is about h^2 times the operator.

use std::sync::Arc;

use crate::coeff::{Mat2, Vec2};
use crate::elliptic::grid::Grid;
use crate::par;

pub type KFn = Arc<dyn Fn(Vec2) -> Mat2 + Send + Sync>;

/// Stencil offset index for (di, dj) in {-1, 0, 1}^2.
#[inline]
pub const fn slot(di: i64, dj: i64) -> usize {
    ((dj + 1) * 3 + (di + 1)) as usize
}

#[derive(Clone)]
pub struct Operator {
    pub grid: Grid,
    /// Stencil rows; boundary rows are zero.
    pub coef: Vec<[f64; 9]>,
}

const LOCAL: [(usize, usize); 4] = [(0, 0), (1, 0), (0, 1), (1, 1)];

/// 4x4 local stiffness of one cell with K = [[a, b], [b, c]].
fn cell_matrix(a: f64, b: f64, c: f64) -> [[f64; 4]; 4] {
    let corners: [([f64; 4], [f64; 4]); 4] = [
        ([-1.0, 1.0, 0.0, 0.0], [-1.0, 0.0, 1.0, 0.0]),
        ([-1.0, 1.0, 0.0, 0.0], [0.0, -1.0, 0.0, 1.0]),
        ([0.0, 0.0, -1.0, 1.0], [-1.0, 0.0, 1.0, 0.0]),
        ([0.0, 0.0, -1.0, 1.0], [0.0, -1.0, 0.0, 1.0]),
    ];
    let mut m = [[0.0; 4]; 4];
    for (dx, dy) in corners.iter() {
        for p in 0..4 {
            for q in 0..4 {
                m[p][q] += 0.25 * (a * dx[p] * dx[q] + b * (dx[p] * dy[q] + dy[p] * dx[q]) + c * dy[p] * dy[q]);
            }
        }
    }
    m
}

impl Operator {
    pub fn assemble(grid: Grid, k: &(dyn Fn(Vec2) -> Mat2 + Sync)) -> Self {
        let n = grid.n;
        let h = grid.spacing();
        let cells: Vec<[f64; 3]> = par::map_collect((n - 1) * (n - 1), |c| {
            let (ci, cj) = (c % (n - 1), c / (n - 1));
            let x = Vec2::new(grid.coord(ci) + 0.5 * h, grid.coord(cj) + 0.5 * h);
            let m = k(x);
            [m[(0, 0)], 0.5 * (m[(0, 1)] + m[(1, 0)]), m[(1, 1)]]
        });
        Self::from_cells(grid, &cells)
    }

    pub fn constant(grid: Grid, k: Mat2) -> Self {
        let n = grid.n;
        let cells = vec![[k[(0, 0)], 0.5 * (k[(0, 1)] + k[(1, 0)]), k[(1, 1)]]; (n - 1) * (n - 1)];
        Self::from_cells(grid, &cells)
    }

    fn from_cells(grid: Grid, cells: &[[f64; 3]]) -> Self {
        let n = grid.n;
        let coef = par::map_collect(n * n, |node| {
            let (i, j) = (node % n, node / n);
            let mut row = [0.0; 9];
            if grid.is_boundary(i, j) {
                return row;
            }
            for (l, (ox, oy)) in LOCAL.iter().enumerate() {
                let (ci, cj) = (i - ox, j - oy);
                let [a, b, c] = cells[cj * (n - 1) + ci];
                let m = cell_matrix(a, b, c);
                for (q, (qx, qy)) in LOCAL.iter().enumerate() {
                    row[slot(*qx as i64 - *ox as i64, *qy as i64 - *oy as i64)] += m[l][q];
                }
            }
            row
        });
        Self { grid, coef }
    }

    /// out = A u on interior rows, zero on boundary rows. Boundary entries of
    /// `u` act as Dirichlet data.
    pub fn apply(&self, u: &[f64], out: &mut [f64]) {
        let n = self.grid.n;
        par::for_rows(out, n, |j, row| {
            if j == 0 || j == n - 1 {
                row.iter_mut().for_each(|v| *v = 0.0);
                return;
            }
            row[0] = 0.0;
            row[n - 1] = 0.0;
            for i in 1..n - 1 {
                let c = &self.coef[j * n + i];
                let b = (j - 1) * n + i;
                let m = j * n + i;
                let t = (j + 1) * n + i;
                row[i] = c[0] * u[b - 1] + c[1] * u[b] + c[2] * u[b + 1]
                    + c[3] * u[m - 1] + c[4] * u[m] + c[5] * u[m + 1]
                    + c[6] * u[t - 1] + c[7] * u[t] + c[8] * u[t + 1];
            }
        });
    }

    pub fn diag(&self) -> Vec<f64> {
        self.coef.iter().map(|c| c[4]).collect()
    }

    /// u^T A u, which equals the discrete integral of K grad u . grad u when u
    /// vanishes on the boundary.
    pub fn energy(&self, u: &[f64]) -> f64 {
        let mut au = vec![0.0; u.len()];
        self.apply(u, &mut au);
        par::dot(u, &au)
    }

    /// Largest asymmetry |a_ij - a_ji| over interior couplings.
    pub fn symmetry_defect(&self) -> f64 {
        let n = self.grid.n;
        let mut worst: f64 = 0.0;
        for j in 1..n - 1 {
            for i in 1..n - 1 {
                for dj in -1i64..=1 {
                    for di in -1i64..=1 {
                        let (ii, jj) = ((i as i64 + di) as usize, (j as i64 + dj) as usize);
                        if self.grid.is_boundary(ii, jj) {
                            continue;
                        }
                        let a = self.coef[j * n + i][slot(di, dj)];
                        let b = self.coef[jj * n + ii][slot(-di, -dj)];
                        worst = worst.max((a - b).abs());
                    }
                }
            }
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeff::CoefficientField;

    #[test]
    fn identity_gives_five_point() {
        let g = Grid::new(1.0, 9).unwrap();
        let op = Operator::constant(g, Mat2::identity());
        let c = op.coef[g.idx(4, 4)];
        assert_eq!(c, [0.0, -1.0, 0.0, -1.0, 4.0, -1.0, 0.0, -1.0, 0.0]);
    }

    #[test]
    fn helical_operator_symmetric() {
        let g = Grid::new(1.0, 33).unwrap();
        let f = CoefficientField::helical(0.8, 1.0);
        let op = Operator::assemble(g, &|x| f.k(x));
        assert!(op.symmetry_defect() < 1e-15);
        // constants and linears are annihilated row-wise (consistency)
        let u: Vec<f64> = (0..g.len()).map(|_| 1.0).collect();
        let mut out = vec![0.0; g.len()];
        op.apply(&u, &mut out);
        assert!(out.iter().all(|v| v.abs() < 1e-13));
    }

    #[test]
    fn second_order_consistency() {
        // -div(K grad u) for u = x^2 y + y^3, K = [[1+x^2, xy],[xy, 2]]
        let kf = |x: Vec2| Mat2::new(1.0 + x[0] * x[0], x[0] * x[1], x[0] * x[1], 2.0);
        let exact = |x: Vec2| {
            let (a, b) = (x[0], x[1]);
            let (ux, uy) = (2.0 * a * b, a * a + 3.0 * b * b);
            let f1 = (1.0 + a * a) * ux + a * b * uy;
            let f2 = a * b * ux + 2.0 * uy;
            let df1 = 2.0 * a * ux + (1.0 + a * a) * 2.0 * b + b * uy + a * b * 2.0 * a;
            let df2 = a * ux + a * b * 2.0 * a + 2.0 * 6.0 * b;
            let _ = (f1, f2);
            -(df1 + df2)
        };
        let mut errs = vec![];
        for n in [17, 33, 65] {
            let g = Grid::new(1.0, n).unwrap();
            let op = Operator::assemble(g, &kf);
            let u: Vec<f64> = (0..g.len()).map(|k| {
                let x = g.point(k % n, k / n);
                x[0] * x[0] * x[1] + x[1].powi(3)
            }).collect();
            let mut out = vec![0.0; g.len()];
            op.apply(&u, &mut out);
            let h2 = g.spacing().powi(2);
            let i = (n - 1) / 4 * 3;
            let j = (n - 1) / 4;
            errs.push((out[g.idx(i, j)] / h2 - exact(g.point(i, j))).abs());
        }
        assert!(errs[0] / errs[1] > 3.5 && errs[1] / errs[2] > 3.5, "{errs:?}");
    }
}
