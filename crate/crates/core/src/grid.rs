//! Dense row-major grids and integer cell coordinates.
//!
//! Cells are addressed as `(row, col)`. Row 0 is the top (north) edge of the
//! map and columns grow to the east.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub row: i32,
    pub col: i32,
}

impl Cell {
    pub const fn new(row: i32, col: i32) -> Self {
        Cell { row, col }
    }

    pub fn offset(self, dr: i32, dc: i32) -> Self {
        Cell::new(self.row + dr, self.col + dc)
    }

    /// Euclidean distance between cell centers.
    pub fn distance(self, other: Cell) -> f64 {
        (self.distance_sq(other) as f64).sqrt()
    }

    pub fn distance_sq(self, other: Cell) -> i64 {
        let dr = (self.row - other.row) as i64;
        let dc = (self.col - other.col) as i64;
        dr * dr + dc * dc
    }

    /// `distance(other) <= radius` without the square root.
    pub fn within(self, other: Cell, radius: f64) -> bool {
        radius >= 0.0 && (self.distance_sq(other) as f64) <= radius * radius
    }
}

/// Axis-aligned inclusive cell rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub r0: usize,
    pub r1: usize,
    pub c0: usize,
    pub c1: usize,
}

impl Rect {
    pub fn single(row: usize, col: usize) -> Self {
        Rect {
            r0: row,
            r1: row,
            c0: col,
            c1: col,
        }
    }

    pub fn union(self, other: Rect) -> Rect {
        Rect {
            r0: self.r0.min(other.r0),
            r1: self.r1.max(other.r1),
            c0: self.c0.min(other.c0),
            c1: self.c1.max(other.c1),
        }
    }

    /// Grow by `k` cells on every side, clipped to an `h`×`w` grid.
    pub fn grow(self, k: usize, h: usize, w: usize) -> Rect {
        Rect {
            r0: self.r0.saturating_sub(k),
            r1: (self.r1 + k).min(h - 1),
            c0: self.c0.saturating_sub(k),
            c1: (self.c1 + k).min(w - 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Grid {
    pub fn zeros(height: usize, width: usize) -> Self {
        Grid::filled(height, width, 0.0)
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Grid {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    /// Panics if `data.len() != height * width`.
    pub fn from_vec(height: usize, width: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), height * width, "grid data length mismatch");
        Grid {
            height,
            width,
            data,
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Grid {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn same_shape(&self, other: &Grid) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn contains(&self, cell: Cell) -> bool {
        cell.row >= 0
            && cell.col >= 0
            && (cell.row as usize) < self.height
            && (cell.col as usize) < self.width
    }

    #[inline]
    pub fn idx(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn at_mut(&mut self, row: usize, col: usize) -> &mut f64 {
        &mut self.data[row * self.width + col]
    }

    /// Panics when `cell` is out of bounds.
    pub fn get(&self, cell: Cell) -> f64 {
        assert!(self.contains(cell), "cell {cell:?} out of bounds");
        self.at(cell.row as usize, cell.col as usize)
    }

    pub fn set(&mut self, cell: Cell, value: f64) {
        assert!(self.contains(cell), "cell {cell:?} out of bounds");
        *self.at_mut(cell.row as usize, cell.col as usize) = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// First cell (row-major) holding the maximum value.
    pub fn argmax(&self) -> Cell {
        let mut best = 0;
        for (i, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = i;
            }
        }
        Cell::new((best / self.width) as i32, (best % self.width) as i32)
    }

    pub fn clamp_cell(&self, cell: Cell) -> Cell {
        Cell::new(
            cell.row.clamp(0, self.height as i32 - 1),
            cell.col.clamp(0, self.width as i32 - 1),
        )
    }

    pub fn full_rect(&self) -> Rect {
        Rect {
            r0: 0,
            r1: self.height - 1,
            c0: 0,
            c1: self.width - 1,
        }
    }
}

/// Summed-area table with one row/column of zero padding.
#[derive(Debug, Clone)]
pub struct IntegralImage {
    height: usize,
    width: usize,
    table: Vec<f64>,
}

impl IntegralImage {
    pub fn new(grid: &Grid) -> Self {
        let (h, w) = (grid.height(), grid.width());
        let stride = w + 1;
        let mut table = vec![0.0; (h + 1) * stride];
        for r in 0..h {
            let mut row_sum = 0.0;
            for c in 0..w {
                row_sum += grid.at(r, c);
                table[(r + 1) * stride + c + 1] = table[r * stride + c + 1] + row_sum;
            }
        }
        IntegralImage {
            height: h,
            width: w,
            table,
        }
    }

    /// Sum over rows `[r0, r1]` and cols `[c0, c1]` (inclusive, signed);
    /// the part of the window outside the grid contributes nothing.
    pub fn window_sum(&self, r0: i64, r1: i64, c0: i64, c1: i64) -> f64 {
        let r0 = r0.max(0);
        let c0 = c0.max(0);
        let r1 = r1.min(self.height as i64 - 1);
        let c1 = c1.min(self.width as i64 - 1);
        if r0 > r1 || c0 > c1 {
            return 0.0;
        }
        let stride = self.width + 1;
        let (r0, r1, c0, c1) = (r0 as usize, r1 as usize + 1, c0 as usize, c1 as usize + 1);
        self.table[r1 * stride + c1] - self.table[r0 * stride + c1] - self.table[r1 * stride + c0]
            + self.table[r0 * stride + c0]
    }
}
