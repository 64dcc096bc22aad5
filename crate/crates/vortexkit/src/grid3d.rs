//! Dyadic grids on the unit cube: 7-point Laplacian stencils, trilinear
//! deposit weights for line sources, and point sampling of nodal fields.
//!
//! Interior nodes of the level-L grid sit at ((i+1)h, (j+1)h, (k+1)h) with
//! h = 2^{-L} and 0 <= i,j,k < 2^L - 1. The flat index is x-fastest. All
//! operators here impose homogeneous Dirichlet conditions on the cube faces.

use crate::grid2d::{Scaling, SparseOperator};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Grid3D {
    level: usize,
}

impl Grid3D {
    /// Levels above 7 would exceed desk-scale memory for the assembled stencil.
    pub fn new(level: u32) -> Result<Self> {
        if !(1..=7).contains(&level) {
            return Err(Error::Config(format!(
                "3D grid level must be in 1..=7, got {level}"
            )));
        }
        Ok(Self {
            level: level as usize,
        })
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn n(&self) -> usize {
        1 << self.level
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n() as f64
    }

    /// Interior nodes per axis.
    pub fn m(&self) -> usize {
        self.n() - 1
    }

    pub fn num_interior(&self) -> usize {
        let m = self.m();
        m * m * m
    }

    pub fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        let m = self.m();
        debug_assert!(i < m && j < m && k < m);
        i + m * (j + m * k)
    }

    pub fn coord(&self, i: usize, j: usize, k: usize) -> (f64, f64, f64) {
        let h = self.h();
        (
            (i + 1) as f64 * h,
            (j + 1) as f64 * h,
            (k + 1) as f64 * h,
        )
    }
}

/// 7-point Laplacian on interior nodes, CSR, symmetric.
///
/// Stiffness scaling gives entries h*(6, -1); FiniteDifference gives
/// h^{-2}*(6, -1). Boundary couplings are dropped (homogeneous Dirichlet).
pub fn assemble_laplacian3(grid: Grid3D, scaling: Scaling) -> SparseOperator {
    let m = grid.m();
    let dim = grid.num_interior();
    let factor = match scaling {
        Scaling::Stiffness => grid.h(),
        Scaling::FiniteDifference => 1.0 / (grid.h() * grid.h()),
    };
    let mut row_ptr = Vec::with_capacity(dim + 1);
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    row_ptr.push(0usize);
    for k in 0..m {
        for j in 0..m {
            for i in 0..m {
                // column-sorted: -z, -y, -x, center, +x, +y, +z
                if k > 0 {
                    cols.push(grid.idx(i, j, k - 1));
                    vals.push(-factor);
                }
                if j > 0 {
                    cols.push(grid.idx(i, j - 1, k));
                    vals.push(-factor);
                }
                if i > 0 {
                    cols.push(grid.idx(i - 1, j, k));
                    vals.push(-factor);
                }
                cols.push(grid.idx(i, j, k));
                vals.push(6.0 * factor);
                if i + 1 < m {
                    cols.push(grid.idx(i + 1, j, k));
                    vals.push(-factor);
                }
                if j + 1 < m {
                    cols.push(grid.idx(i, j + 1, k));
                    vals.push(-factor);
                }
                if k + 1 < m {
                    cols.push(grid.idx(i, j, k + 1));
                    vals.push(-factor);
                }
                row_ptr.push(cols.len());
            }
        }
    }
    SparseOperator {
        dim,
        row_ptr,
        cols,
        vals,
        symmetric: true,
    }
}

/// Exact eigenvalue of the FiniteDifference-scaled 7-point Laplacian for
/// mode (p, q, r), 1-based, eigenvector sin(p pi x) sin(q pi y) sin(r pi z).
pub fn fd_eigenvalue3(grid: Grid3D, p: usize, q: usize, r: usize) -> f64 {
    let h = grid.h();
    let s = |k: usize| {
        let t = (k as f64 * std::f64::consts::PI * h / 2.0).sin();
        t * t
    };
    4.0 / (h * h) * (s(p) + s(q) + s(r))
}

/// Extremal eigenvalues (min, max) of the scaled 7-point Laplacian.
pub fn laplacian3_extremes(grid: Grid3D, scaling: Scaling) -> (f64, f64) {
    let m = grid.m();
    let lo = fd_eigenvalue3(grid, 1, 1, 1);
    let hi = fd_eigenvalue3(grid, m, m, m);
    match scaling {
        Scaling::FiniteDifference => (lo, hi),
        Scaling::Stiffness => (lo * grid.h(), hi * grid.h()),
    }
}

/// Trilinear weights of a point onto the surrounding interior nodes.
///
/// Corners of the containing cell that lie on the boundary are omitted;
/// their weight is absorbed by the homogeneous Dirichlet condition. The
/// remaining entries are (interior index, weight) with weights in (0, 1].
pub fn trilinear_weights(grid: Grid3D, point: (f64, f64, f64)) -> Result<Vec<(usize, f64)>> {
    let (x, y, z) = point;
    if !(x > 0.0 && x < 1.0 && y > 0.0 && y < 1.0 && z > 0.0 && z < 1.0) {
        return Err(Error::Geometry(format!(
            "point ({x}, {y}, {z}) is outside the open unit cube"
        )));
    }
    let n = grid.n();
    let h = grid.h();
    let cell = |c: f64| -> (usize, f64) {
        let g = c / h;
        let mut i = g.floor() as usize;
        if i >= n {
            i = n - 1;
        }
        (i, g - i as f64)
    };
    let (ix, tx) = cell(x);
    let (iy, ty) = cell(y);
    let (iz, tz) = cell(z);
    let mut out = Vec::with_capacity(8);
    for dz in 0..2usize {
        for dy in 0..2usize {
            for dx in 0..2usize {
                let gx = ix + dx;
                let gy = iy + dy;
                let gz = iz + dz;
                let w = (if dx == 0 { 1.0 - tx } else { tx })
                    * (if dy == 0 { 1.0 - ty } else { ty })
                    * (if dz == 0 { 1.0 - tz } else { tz });
                if w == 0.0 {
                    continue;
                }
                let interior = (1..n).contains(&gx) && (1..n).contains(&gy) && (1..n).contains(&gz);
                if interior {
                    out.push((grid.idx(gx - 1, gy - 1, gz - 1), w));
                }
            }
        }
    }
    Ok(out)
}

/// Trilinear sample of an interior nodal field; the boundary is taken as 0.
pub fn sample_trilinear(grid: Grid3D, values: &[f64], point: (f64, f64, f64)) -> Result<f64> {
    if values.len() != grid.num_interior() {
        return Err(Error::Dimension {
            expected: grid.num_interior(),
            got: values.len(),
        });
    }
    let w = trilinear_weights(grid, point)?;
    Ok(w.iter().map(|&(i, wi)| wi * values[i]).sum())
}
