//! Uniform square grids, scalar fields and their on-disk formats.

use std::io::{Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::coeff::Vec2;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Grid {
    pub half_width: f64,
    /// Points per axis, boundary included.
    pub n: usize,
}

impl Grid {
    pub fn new(half_width: f64, n: usize) -> Result<Self> {
        if n < 5 {
            return Err(Error::Validation(format!("grid needs at least 5 points per axis, got {n}")));
        }
        if !(half_width > 0.0) {
            return Err(Error::Validation("grid half width must be positive".into()));
        }
        Ok(Self { half_width, n })
    }

    #[inline]
    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / (self.n - 1) as f64
    }

    #[inline]
    pub fn coord(&self, i: usize) -> f64 {
        -self.half_width + i as f64 * self.spacing()
    }

    #[inline]
    pub fn point(&self, i: usize, j: usize) -> Vec2 {
        Vec2::new(self.coord(i), self.coord(j))
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.n + i
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n * self.n
    }

    #[inline]
    pub fn is_boundary(&self, i: usize, j: usize) -> bool {
        i == 0 || j == 0 || i == self.n - 1 || j == self.n - 1
    }

    /// Fractional grid coordinates of x.
    pub fn frac(&self, x: Vec2) -> (f64, f64) {
        let h = self.spacing();
        ((x[0] + self.half_width) / h, (x[1] + self.half_width) / h)
    }

    pub fn nearest(&self, x: Vec2) -> (usize, usize) {
        let (a, b) = self.frac(x);
        let c = |v: f64| (v.round().max(0.0) as usize).min(self.n - 1);
        (c(a), c(b))
    }

    pub fn contains(&self, x: Vec2) -> bool {
        let r = self.half_width * (1.0 + 1e-12);
        x[0].abs() <= r && x[1].abs() <= r
    }

    /// Coarser grid with every other point, when n - 1 is even.
    pub fn coarsen(&self) -> Option<Grid> {
        if (self.n - 1) % 2 == 0 && (self.n - 1) / 2 + 1 >= 3 {
            Some(Grid { half_width: self.half_width, n: (self.n - 1) / 2 + 1 })
        } else {
            None
        }
    }
}

#[derive(Clone, Debug)]
pub struct ScalarField {
    pub grid: Grid,
    pub values: Vec<f64>,
    pub label: String,
}

impl ScalarField {
    pub fn zeros(grid: Grid, label: &str) -> Self {
        Self { grid, values: vec![0.0; grid.len()], label: label.to_string() }
    }

    pub fn from_fn(grid: Grid, label: &str, f: impl Fn(Vec2) -> f64 + Sync + Send) -> Self {
        let values = crate::par::map_collect(grid.len(), |k| f(grid.point(k % grid.n, k / grid.n)));
        Self { grid, values, label: label.to_string() }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.idx(i, j)]
    }

    /// Bilinear interpolation.
    pub fn interpolate(&self, x: Vec2) -> Result<f64> {
        if !self.grid.contains(x) {
            return Err(Error::Domain(format!("point ({}, {}) outside the grid", x[0], x[1])));
        }
        let n = self.grid.n;
        let (a, b) = self.grid.frac(x);
        let i = (a.floor().max(0.0) as usize).min(n - 2);
        let j = (b.floor().max(0.0) as usize).min(n - 2);
        let (s, t) = (a - i as f64, b - j as f64);
        Ok((1.0 - s) * (1.0 - t) * self.at(i, j)
            + s * (1.0 - t) * self.at(i + 1, j)
            + (1.0 - s) * t * self.at(i, j + 1)
            + s * t * self.at(i + 1, j + 1))
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// CSV with columns i, j, x, y, value.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "i,j,x,y,value")?;
        for j in 0..self.grid.n {
            for i in 0..self.grid.n {
                writeln!(
                    w,
                    "{},{},{},{},{}",
                    i,
                    j,
                    fmt17(self.grid.coord(i)),
                    fmt17(self.grid.coord(j)),
                    fmt17(self.at(i, j))
                )?;
            }
        }
        Ok(())
    }

    /// Binary dump: u64 n, f64 R, then n*n f64 values row-major, all little-endian.
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        w.write_all(&(self.grid.n as u64).to_le_bytes())?;
        w.write_all(&self.grid.half_width.to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary(path: &Path, label: &str) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        if bytes.len() < 16 {
            return Err(Error::Io("binary grid truncated".into()));
        }
        let word = |k: usize| -> [u8; 8] { bytes[k..k + 8].try_into().unwrap() };
        let n = u64::from_le_bytes(word(0)) as usize;
        let r = f64::from_le_bytes(word(8));
        if bytes.len() != 16 + 8 * n * n {
            return Err(Error::Io(format!("binary grid size mismatch for n = {n}")));
        }
        let values = (0..n * n).map(|k| f64::from_le_bytes(word(16 + 8 * k))).collect();
        Ok(Self { grid: Grid::new(r, n)?, values, label: label.to_string() })
    }
}

/// Shortest representation that round-trips, at most 17 significant digits.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}
