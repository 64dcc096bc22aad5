//! Dyadic grids on the unit square, the five-point Laplacian with Dirichlet
//! elimination, boundary indexing, and the shared interpolation stencils.

use num_complex::Complex64;

use crate::{Error, Result};

/// Uniform grid on [0,1]² at dyadic level `level`: spacing h = 2^-level,
/// (2^level - 1)² interior nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grid2D {
    level: u32,
}

impl Grid2D {
    pub fn new(level: u32) -> Result<Self> {
        if level < 1 {
            return Err(Error::Config("grid level must be >= 1".into()));
        }
        if level > 14 {
            return Err(Error::Resource(format!("2D level {level} exceeds desk scale")));
        }
        Ok(Grid2D { level })
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    /// Intervals per side, n = 2^level.
    pub fn n(&self) -> usize {
        1 << self.level
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n() as f64
    }

    /// Interior nodes per side.
    pub fn m(&self) -> usize {
        self.n() - 1
    }

    /// Total interior node count N_h = (2^level - 1)².
    pub fn num_interior(&self) -> usize {
        self.m() * self.m()
    }

    /// Perimeter node count, corners counted once.
    pub fn num_boundary(&self) -> usize {
        4 * self.n()
    }

    /// Flat index of interior node (i, j), both 0-based, node at ((i+1)h, (j+1)h).
    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        i + self.m() * j
    }

    /// Coordinates of interior node (i, j).
    #[inline]
    pub fn coord(&self, i: usize, j: usize) -> (f64, f64) {
        let h = self.h();
        ((i + 1) as f64 * h, (j + 1) as f64 * h)
    }

    /// Perimeter nodes in counterclockwise order starting at (0,0), corners once.
    pub fn boundary_nodes(&self) -> Vec<(f64, f64)> {
        let n = self.n();
        let h = self.h();
        let mut pts = Vec::with_capacity(4 * n);
        for i in 0..n {
            pts.push((i as f64 * h, 0.0));
        }
        for j in 0..n {
            pts.push((1.0, j as f64 * h));
        }
        for i in (1..=n).rev() {
            pts.push((i as f64 * h, 1.0));
        }
        for j in (1..=n).rev() {
            pts.push((0.0, j as f64 * h));
        }
        pts
    }

    /// Maps a global node (gi, gj) on the perimeter (gi, gj in 0..=n) to its
    /// index in the counterclockwise trace. Panics on interior nodes.
    pub fn boundary_index(&self, gi: usize, gj: usize) -> usize {
        let n = self.n();
        if gj == 0 && gi < n {
            gi
        } else if gi == n && gj < n {
            n + gj
        } else if gj == n && gi >= 1 {
            2 * n + (n - gi)
        } else if gi == 0 && gj >= 1 {
            3 * n + (n - gj)
        } else {
            panic!("node ({gi}, {gj}) is not on the perimeter");
        }
    }
}

/// Scaling convention for the assembled Laplacian.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scaling {
    /// h-independent (4,-1) stencil entries (2D); h·(6,-1) in 3D.
    Stiffness,
    /// Stencil divided by h², approximating -Δ directly.
    FiniteDifference,
}

/// Compressed-sparse-row symmetric operator.
#[derive(Debug, Clone)]
pub struct SparseOperator {
    pub dim: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
    pub symmetric: bool,
}

impl SparseOperator {
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim);
        debug_assert_eq!(y.len(), self.dim);
        for r in 0..self.dim {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            y[r] = acc;
        }
    }

    pub fn apply_alloc(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim];
        self.apply(x, &mut y);
        y
    }

    pub fn apply_complex(&self, x: &[Complex64], y: &mut [Complex64]) {
        debug_assert_eq!(x.len(), self.dim);
        for r in 0..self.dim {
            let mut acc = Complex64::new(0.0, 0.0);
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += x[self.cols[k]] * self.vals[k];
            }
            y[r] = acc;
        }
    }

    /// Entry lookup, O(row nnz). Intended for tests and assembly checks.
    pub fn entry(&self, r: usize, c: usize) -> f64 {
        for k in self.row_ptr[r]..self.row_ptr[r + 1] {
            if self.cols[k] == c {
                return self.vals[k];
            }
        }
        0.0
    }
}

/// Five-point Laplacian on the interior nodes, Dirichlet values eliminated.
pub fn assemble_laplacian(grid: Grid2D, scaling: Scaling) -> SparseOperator {
    let m = grid.m();
    let dim = m * m;
    let scale = match scaling {
        Scaling::Stiffness => 1.0,
        Scaling::FiniteDifference => 1.0 / (grid.h() * grid.h()),
    };
    let mut row_ptr = Vec::with_capacity(dim + 1);
    let mut cols = Vec::with_capacity(5 * dim);
    let mut vals = Vec::with_capacity(5 * dim);
    row_ptr.push(0);
    for j in 0..m {
        for i in 0..m {
            // row-sorted columns keep CSR canonical
            if j > 0 {
                cols.push(grid.idx(i, j - 1));
                vals.push(-scale);
            }
            if i > 0 {
                cols.push(grid.idx(i - 1, j));
                vals.push(-scale);
            }
            cols.push(grid.idx(i, j));
            vals.push(4.0 * scale);
            if i + 1 < m {
                cols.push(grid.idx(i + 1, j));
                vals.push(-scale);
            }
            if j + 1 < m {
                cols.push(grid.idx(i, j + 1));
                vals.push(-scale);
            }
            row_ptr.push(cols.len());
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

/// Right-hand side induced by eliminating Dirichlet boundary values: only
/// interior nodes adjacent to the perimeter receive contributions.
pub fn apply_dirichlet_rhs(grid: Grid2D, scaling: Scaling, boundary: &[f64]) -> Result<Vec<f64>> {
    if boundary.len() != grid.num_boundary() {
        return Err(Error::Dimension {
            expected: grid.num_boundary(),
            got: boundary.len(),
        });
    }
    let n = grid.n();
    let m = grid.m();
    let scale = match scaling {
        Scaling::Stiffness => 1.0,
        Scaling::FiniteDifference => 1.0 / (grid.h() * grid.h()),
    };
    let mut b = vec![0.0; m * m];
    for i in 0..m {
        b[grid.idx(i, 0)] += scale * boundary[grid.boundary_index(i + 1, 0)];
        b[grid.idx(i, m - 1)] += scale * boundary[grid.boundary_index(i + 1, n)];
        b[grid.idx(0, i)] += scale * boundary[grid.boundary_index(0, i + 1)];
        b[grid.idx(m - 1, i)] += scale * boundary[grid.boundary_index(n, i + 1)];
    }
    Ok(b)
}

/// Closed-form eigenvalue of the FiniteDifference Laplacian for mode (p, q),
/// p, q in 1..=2^level-1.
pub fn fd_eigenvalue(grid: Grid2D, p: usize, q: usize) -> f64 {
    let h = grid.h();
    let s = |k: usize| {
        let t = (k as f64 * std::f64::consts::PI * h / 2.0).sin();
        t * t
    };
    4.0 / (h * h) * (s(p) + s(q))
}

/// Extremal eigenvalues of the assembled Laplacian in the given scaling.
pub fn laplacian_extremes(grid: Grid2D, scaling: Scaling) -> (f64, f64) {
    let m = grid.m();
    let lo = fd_eigenvalue(grid, 1, 1);
    let hi = fd_eigenvalue(grid, m, m);
    match scaling {
        Scaling::FiniteDifference => (lo, hi),
        Scaling::Stiffness => {
            let h2 = grid.h() * grid.h();
            (lo * h2, hi * h2)
        }
    }
}

/// Real scalar field over all grid nodes: interior values plus the Dirichlet
/// boundary trace in counterclockwise order.
#[derive(Debug, Clone)]
pub struct Field2D {
    pub grid: Grid2D,
    pub interior: Vec<f64>,
    pub boundary: Vec<f64>,
}

impl Field2D {
    pub fn new(grid: Grid2D, interior: Vec<f64>, boundary: Vec<f64>) -> Result<Self> {
        if interior.len() != grid.num_interior() {
            return Err(Error::Dimension {
                expected: grid.num_interior(),
                got: interior.len(),
            });
        }
        if boundary.len() != grid.num_boundary() {
            return Err(Error::Dimension {
                expected: grid.num_boundary(),
                got: boundary.len(),
            });
        }
        Ok(Field2D {
            grid,
            interior,
            boundary,
        })
    }

    /// Value at global node (gi, gj), gi, gj in 0..=n.
    #[inline]
    pub fn at(&self, gi: usize, gj: usize) -> f64 {
        let n = self.grid.n();
        if gi == 0 || gj == 0 || gi == n || gj == n {
            self.boundary[self.grid.boundary_index(gi, gj)]
        } else {
            self.interior[self.grid.idx(gi - 1, gj - 1)]
        }
    }
}

/// Complex field over the interior with an optional boundary trace.
#[derive(Debug, Clone)]
pub struct ComplexField2D {
    pub grid: Grid2D,
    pub values: Vec<Complex64>,
    pub boundary: Option<Vec<Complex64>>,
}

impl ComplexField2D {
    pub fn new(grid: Grid2D, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.num_interior() {
            return Err(Error::Dimension {
                expected: grid.num_interior(),
                got: values.len(),
            });
        }
        Ok(ComplexField2D {
            grid,
            values,
            boundary: None,
        })
    }
}

/// Central-difference gradient at the four nodes surrounding `point`,
/// bilinearly interpolated. Requires distance >= 2h from the boundary so the
/// stencil never leaves the grid.
pub fn sample_gradient(field: &Field2D, point: (f64, f64)) -> Result<(f64, f64)> {
    let grid = field.grid;
    let h = grid.h();
    let (x, y) = point;
    if x < 2.0 * h || x > 1.0 - 2.0 * h || y < 2.0 * h || y > 1.0 - 2.0 * h {
        return Err(Error::Geometry(format!(
            "gradient sample at ({x:.4}, {y:.4}) closer than 2h to the boundary"
        )));
    }
    // cell corners (gi0, gj0)..(gi0+1, gj0+1) in global node indices
    let fi = x / h;
    let fj = y / h;
    let gi0 = (fi.floor() as usize).min(grid.n() - 1).max(1);
    let gj0 = (fj.floor() as usize).min(grid.n() - 1).max(1);
    let tx = fi - gi0 as f64;
    let ty = fj - gj0 as f64;
    let gx = |gi: usize, gj: usize| (field.at(gi + 1, gj) - field.at(gi - 1, gj)) / (2.0 * h);
    let gy = |gi: usize, gj: usize| (field.at(gi, gj + 1) - field.at(gi, gj - 1)) / (2.0 * h);
    let bilin = |f: &dyn Fn(usize, usize) -> f64| {
        (1.0 - tx) * (1.0 - ty) * f(gi0, gj0)
            + tx * (1.0 - ty) * f(gi0 + 1, gj0)
            + (1.0 - tx) * ty * f(gi0, gj0 + 1)
            + tx * ty * f(gi0 + 1, gj0 + 1)
    };
    Ok((bilin(&gx), bilin(&gy)))
}
