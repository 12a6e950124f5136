//! Rectangular mission space discretized into uniform cells.
//!
//! Cells are addressed by `(i, j)` with `i` along `q1` and `j` along `q2`.
//! The linear index is `j * nx + i`, which is also the row-major order of the
//! block CSV layout (one text row per `j`).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A planar position in meters.
pub type Point = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MissionGrid {
    pub q1_min: f64,
    pub q1_max: f64,
    pub q2_min: f64,
    pub q2_max: f64,
    pub nx: usize,
    pub ny: usize,
}

impl MissionGrid {
    pub fn new(q1_min: f64, q1_max: f64, q2_min: f64, q2_max: f64, nx: usize, ny: usize) -> Result<Self> {
        let grid = Self { q1_min, q1_max, q2_min, q2_max, nx, ny };
        grid.validate()?;
        Ok(grid)
    }

    /// The 97 x 72 plant rectangle used in the hardware experiment.
    pub fn plant() -> Self {
        Self { q1_min: -1.41, q1_max: 2.38, q2_min: -1.26, q2_max: 1.53, nx: 97, ny: 72 }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.q1_min, self.q1_max, self.q2_min, self.q2_max].iter().all(|v| v.is_finite());
        if !finite || self.q1_min >= self.q1_max || self.q2_min >= self.q2_max {
            return Err(Error::InvalidParameter(format!(
                "grid bounds must satisfy min < max (q1 [{}, {}], q2 [{}, {}])",
                self.q1_min, self.q1_max, self.q2_min, self.q2_max
            )));
        }
        if self.nx == 0 || self.ny == 0 {
            return Err(Error::InvalidParameter(format!(
                "grid cell counts must be >= 1 (nx={}, ny={})",
                self.nx, self.ny
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn dx(&self) -> f64 {
        (self.q1_max - self.q1_min) / self.nx as f64
    }

    #[inline]
    pub fn dy(&self) -> f64 {
        (self.q2_max - self.q2_min) / self.ny as f64
    }

    #[inline]
    pub fn cell_area(&self) -> f64 {
        self.dx() * self.dy()
    }

    pub fn area(&self) -> f64 {
        (self.q1_max - self.q1_min) * (self.q2_max - self.q2_min)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> (usize, usize) {
        (idx % self.nx, idx / self.nx)
    }

    #[inline]
    pub fn center(&self, i: usize, j: usize) -> Point {
        [
            self.q1_min + (i as f64 + 0.5) * self.dx(),
            self.q2_min + (j as f64 + 0.5) * self.dy(),
        ]
    }

    #[inline]
    pub fn center_of(&self, idx: usize) -> Point {
        let (i, j) = self.coords(idx);
        self.center(i, j)
    }

    /// Cell centers in linear-index order.
    pub fn centers(&self) -> Vec<Point> {
        (0..self.len()).map(|idx| self.center_of(idx)).collect()
    }

    pub fn contains(&self, p: Point) -> bool {
        p[0] >= self.q1_min && p[0] <= self.q1_max && p[1] >= self.q2_min && p[1] <= self.q2_max
    }

    pub fn clamp(&self, p: Point) -> Point {
        [p[0].clamp(self.q1_min, self.q1_max), p[1].clamp(self.q2_min, self.q2_max)]
    }

    /// Cell whose center is nearest to `p` after clamping into the domain.
    /// Equidistant candidates resolve to the lower index on each axis, which
    /// is the lowest linear index.
    pub fn nearest_cell(&self, p: Point) -> (usize, usize) {
        let p = self.clamp(p);
        let axis = |x: f64, lo: f64, d: f64, n: usize| -> usize {
            let u = (x - lo) / d - 0.5;
            let k = (u - 0.5).ceil();
            k.clamp(0.0, (n - 1) as f64) as usize
        };
        (
            axis(p[0], self.q1_min, self.dx(), self.nx),
            axis(p[1], self.q2_min, self.dy(), self.ny),
        )
    }

    /// Linear indices of cells whose centers lie within `radius` of `p`.
    pub fn cells_within(&self, p: Point, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.for_each_within(p, radius, |idx, _, _| out.push(idx));
        out
    }

    /// Visits cells whose centers satisfy `|c - p|^2 <= radius^2`, passing the
    /// linear index, the center and the squared distance.
    pub fn for_each_within<F: FnMut(usize, Point, f64)>(&self, p: Point, radius: f64, mut f: F) {
        let (dx, dy) = (self.dx(), self.dy());
        let r2 = radius * radius;
        let i_lo = (((p[0] - radius - self.q1_min) / dx - 0.5).floor().max(0.0)) as usize;
        let j_lo = (((p[1] - radius - self.q2_min) / dy - 0.5).floor().max(0.0)) as usize;
        let i_hi = ((p[0] + radius - self.q1_min) / dx - 0.5).ceil();
        let j_hi = ((p[1] + radius - self.q2_min) / dy - 0.5).ceil();
        if i_hi < 0.0 || j_hi < 0.0 {
            return;
        }
        let i_hi = (i_hi as usize).min(self.nx - 1);
        let j_hi = (j_hi as usize).min(self.ny - 1);
        for j in j_lo..=j_hi {
            for i in i_lo..=i_hi {
                let c = self.center(i, j);
                let s = (c[0] - p[0]).powi(2) + (c[1] - p[1]).powi(2);
                if s <= r2 {
                    f(self.index(i, j), c, s);
                }
            }
        }
    }

    /// Same grid refined by an integer factor along both axes.
    pub fn refined(&self, factor: usize) -> Self {
        Self { nx: self.nx * factor, ny: self.ny * factor, ..*self }
    }
}

/// A scalar value per grid cell, stored in linear-index order.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMap {
    pub grid: MissionGrid,
    pub values: Vec<f64>,
}

impl GridMap {
    pub fn filled(grid: MissionGrid, value: f64) -> Self {
        Self { grid, values: vec![value; grid.len()] }
    }

    pub fn from_fn<F: FnMut(Point) -> f64>(grid: MissionGrid, mut f: F) -> Self {
        let values = (0..grid.len()).map(|idx| f(grid.center_of(idx))).collect();
        Self { grid, values }
    }

    pub fn from_values(grid: MissionGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} values for a {}x{} grid, got {}",
                grid.len(),
                grid.nx,
                grid.ny,
                values.len()
            )));
        }
        Ok(Self { grid, values })
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.index(i, j)]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn check_same_grid(&self, other: &MissionGrid) -> Result<()> {
        if self.grid != *other {
            return Err(Error::ShapeMismatch(format!(
                "grid {}x{} does not match {}x{}",
                self.grid.nx, self.grid.ny, other.nx, other.ny
            )));
        }
        Ok(())
    }
}
