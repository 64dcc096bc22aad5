//! Harmonic correction of the multi-vortex phase on the unit square.
//!
//! For vortex centers a_1..a_M and a boundary phase lifting phi_g of
//! winding M, the correction h solves the Laplace equation with Dirichlet
//! data phi_g - sum_j arg(x - a_j), lifted to a continuous single-valued
//! trace along the perimeter. The solvers, observable functionals, and the
//! gradient-feedback abstraction used by the motion models live here.

use crate::bpx;
use crate::grid2d::{
    apply_dirichlet_rhs, assemble_laplacian, sample_gradient, ComplexField2D, Field2D, Grid2D,
    Scaling,
};
use crate::linalg;
use crate::{Error, Result};
use num_complex::Complex64;

fn wrap_pi(x: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut y = (x + std::f64::consts::PI).rem_euclid(two_pi) - std::f64::consts::PI;
    if y == -std::f64::consts::PI {
        y = std::f64::consts::PI;
    }
    y
}

/// Sum of principal-branch polar angles around each center.
pub fn theta_sum(centers: &[(f64, f64)], x: f64, y: f64) -> f64 {
    centers
        .iter()
        .map(|&(ax, ay)| (y - ay).atan2(x - ax))
        .sum()
}

/// Gradient of `theta_sum`: sum of (x - a)^perp / |x - a|^2.
pub fn grad_theta(centers: &[(f64, f64)], x: f64, y: f64) -> Result<(f64, f64)> {
    let mut gx = 0.0;
    let mut gy = 0.0;
    for &(ax, ay) in centers {
        let dx = x - ax;
        let dy = y - ay;
        let r2 = dx * dx + dy * dy;
        if r2 == 0.0 {
            return Err(Error::Singularity);
        }
        gx += -dy / r2;
        gy += dx / r2;
    }
    Ok((gx, gy))
}

/// Continuous lifting of a boundary phase datum along the perimeter loop.
#[derive(Debug, Clone)]
pub struct BoundaryPhase {
    pub grid: Grid2D,
    pub phi_g: Vec<f64>,
    pub winding: i32,
}

impl BoundaryPhase {
    /// Lift a pointwise phase formula along the perimeter and verify that
    /// its total increment is 2 pi times `winding`.
    pub fn from_fn(grid: Grid2D, winding: i32, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let raw: Vec<f64> = grid.boundary_nodes().iter().map(|&(x, y)| f(x, y)).collect();
        let mut phi = Vec::with_capacity(raw.len());
        phi.push(raw[0]);
        for k in 1..raw.len() {
            let prev = phi[k - 1];
            phi.push(prev + wrap_pi(raw[k] - raw[k - 1]));
        }
        let increment = phi[phi.len() - 1] + wrap_pi(raw[0] - raw[raw.len() - 1]) - phi[0];
        let want = 2.0 * std::f64::consts::PI * winding as f64;
        if (increment - want).abs() > 1e-8 {
            return Err(Error::WindingMismatch {
                defect: increment - want,
            });
        }
        Ok(Self {
            grid,
            phi_g: phi,
            winding,
        })
    }

    /// Built-in degree-2 datum: twice the polar angle about the center plus
    /// a sine-product ripple that vanishes on the perimeter corners and
    /// preserves the winding for any amplitude below roughly 2.
    pub fn deg2_sine(grid: Grid2D, amplitude: f64) -> Result<Self> {
        Self::from_fn(grid, 2, move |x, y| {
            2.0 * (y - 0.5).atan2(x - 0.5)
                + amplitude
                    * (2.0 * std::f64::consts::PI * x).sin()
                    * (2.0 * std::f64::consts::PI * y).sin()
        })
    }

    /// Wrap an externally supplied table of perimeter values.
    pub fn from_values(grid: Grid2D, phi_g: Vec<f64>, winding: i32) -> Result<Self> {
        if phi_g.len() != grid.num_boundary() {
            return Err(Error::Dimension {
                expected: grid.num_boundary(),
                got: phi_g.len(),
            });
        }
        let b = phi_g.len();
        let mut increment = 0.0;
        for k in 0..b {
            increment += wrap_pi(phi_g[(k + 1) % b] - phi_g[k]);
        }
        let want = 2.0 * std::f64::consts::PI * winding as f64;
        if (increment - want).abs() > 1e-8 {
            return Err(Error::WindingMismatch {
                defect: increment - want,
            });
        }
        Ok(Self {
            grid,
            phi_g,
            winding,
        })
    }
}

/// Continuous single-valued trace of phi_g - Theta_a along the perimeter.
///
/// The trace must close: a residual winding means the boundary degree does
/// not match the vortex count, which is a hard error rather than something
/// to smooth over.
pub fn unwrap_boundary_phase(centers: &[(f64, f64)], phase: &BoundaryPhase) -> Result<Vec<f64>> {
    let grid = phase.grid;
    let h = grid.h();
    for &(x, y) in centers {
        let margin = x.min(y).min(1.0 - x).min(1.0 - y);
        if margin < 2.0 * h {
            return Err(Error::Geometry(format!(
                "vortex ({x}, {y}) closer than 2h to the boundary"
            )));
        }
    }
    let nodes = grid.boundary_nodes();
    let delta: Vec<f64> = nodes
        .iter()
        .zip(&phase.phi_g)
        .map(|(&(x, y), &p)| p - theta_sum(centers, x, y))
        .collect();
    let b = delta.len();
    let mut trace = Vec::with_capacity(b);
    trace.push(wrap_pi(delta[0]));
    for k in 1..b {
        let prev = trace[k - 1];
        trace.push(prev + wrap_pi(delta[k] - delta[k - 1]));
    }
    let defect = (wrap_pi(delta[0] - delta[b - 1]) + trace[b - 1] - trace[0]).abs();
    if defect > 1e-6 * 2.0 * std::f64::consts::PI {
        return Err(Error::WindingMismatch { defect });
    }
    Ok(trace)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolverKind {
    /// Dense Cholesky of the stiffness matrix; levels up to 6 only.
    DirectDense,
    /// Conjugate gradients preconditioned by the multilevel cascade.
    BpxCg,
}

/// Solved harmonic correction for one vortex configuration.
#[derive(Debug, Clone)]
pub struct HarmonicField {
    pub field: Field2D,
    pub centers: Vec<(f64, f64)>,
    pub residual: f64,
    pub iterations: usize,
}

pub fn solve_harmonic(
    centers: &[(f64, f64)],
    phase: &BoundaryPhase,
    solver: SolverKind,
    tol: f64,
) -> Result<HarmonicField> {
    let grid = phase.grid;
    let trace = unwrap_boundary_phase(centers, phase)?;
    let k = assemble_laplacian(grid, Scaling::Stiffness);
    let b = apply_dirichlet_rhs(grid, Scaling::Stiffness, &trace)?;
    let (interior, iterations) = match solver {
        SolverKind::DirectDense => {
            if grid.level() > 6 {
                return Err(Error::Resource(format!(
                    "dense solve refused at level {}",
                    grid.level()
                )));
            }
            let kd = linalg::dense_from_apply(|v, out| k.apply(v, out), k.dim);
            let chol = kd
                .cholesky()
                .ok_or_else(|| Error::Spectral("stiffness matrix not positive definite".into()))?;
            let x = chol.solve(&nalgebra::DVector::from_column_slice(&b));
            (x.as_slice().to_vec(), 0)
        }
        SolverKind::BpxCg => {
            let bpx = bpx::build_bpx(2, grid.level() as usize)?;
            let (x, iters) = linalg::pcg(
                |v, out| k.apply(v, out),
                |v, out| bpx.apply(v, out),
                &b,
                tol,
                500,
            )?;
            (x, iters)
        }
    };
    let mut kx = vec![0.0; k.dim];
    k.apply(&interior, &mut kx);
    let bnorm = linalg::norm(&b);
    let residual = if bnorm == 0.0 {
        0.0
    } else {
        kx.iter()
            .zip(&b)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
            / bnorm
    };
    Ok(HarmonicField {
        field: Field2D::new(grid, interior, trace)?,
        centers: centers.to_vec(),
        residual,
        iterations,
    })
}

/// Unit-modulus outer field exp(i (Theta_a + h_a)) on the grid.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub field: ComplexField2D,
    /// Interior nodes that coincided with a vortex center exactly and were
    /// evaluated at a diagonally perturbed point.
    pub perturbed_nodes: Vec<usize>,
}

pub fn reconstruct_outer(centers: &[(f64, f64)], h: &HarmonicField) -> Reconstruction {
    let grid = h.field.grid;
    let m = grid.m();
    let mut values = Vec::with_capacity(grid.num_interior());
    let mut perturbed = Vec::new();
    for j in 0..m {
        for i in 0..m {
            let (mut x, mut y) = grid.coord(i, j);
            if centers.iter().any(|&(ax, ay)| ax == x && ay == y) {
                x += 1e-12;
                y += 1e-12;
                perturbed.push(grid.idx(i, j));
            }
            let phase = theta_sum(centers, x, y) + h.field.interior[grid.idx(i, j)];
            values.push(Complex64::new(0.0, phase).exp());
        }
    }
    let boundary: Vec<Complex64> = grid
        .boundary_nodes()
        .iter()
        .zip(&h.field.boundary)
        .map(|(&(x, y), &t)| Complex64::new(0.0, theta_sum(centers, x, y) + t).exp())
        .collect();
    Reconstruction {
        field: ComplexField2D {
            grid,
            values,
            boundary: Some(boundary),
        },
        perturbed_nodes: perturbed,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ObservableKind {
    PointValue,
    GradientX,
    GradientY,
}

/// Sparse linear functional over interior nodes reproducing point
/// interpolation or an interpolated central-difference gradient.
#[derive(Debug, Clone)]
pub struct ObservableFunctional {
    pub kind: ObservableKind,
    pub location: (f64, f64),
    pub entries: Vec<(usize, f64)>,
}

impl ObservableFunctional {
    pub fn evaluate(&self, interior: &[f64]) -> f64 {
        self.entries.iter().map(|&(i, w)| w * interior[i]).sum()
    }
}

pub fn build_observable(
    kind: ObservableKind,
    location: (f64, f64),
    grid: Grid2D,
) -> Result<ObservableFunctional> {
    let (x, y) = location;
    let h = grid.h();
    let margin = x.min(y).min(1.0 - x).min(1.0 - y);
    if margin < 2.0 * h {
        return Err(Error::Geometry(format!(
            "observable location ({x}, {y}) closer than 2h to the boundary"
        )));
    }
    let n = grid.n();
    let cell = |c: f64| -> (usize, f64) {
        let g = c / h;
        let mut i = g.floor() as usize;
        if i >= n - 1 {
            i = n - 2;
        }
        (i, g - i as f64)
    };
    // global corner indices of the containing cell; all strictly interior
    // together with their one-ring given the 2h margin
    let (gi0, tx) = cell(x);
    let (gj0, ty) = cell(y);
    let corners = [
        (gi0, gj0, (1.0 - tx) * (1.0 - ty)),
        (gi0 + 1, gj0, tx * (1.0 - ty)),
        (gi0, gj0 + 1, (1.0 - tx) * ty),
        (gi0 + 1, gj0 + 1, tx * ty),
    ];
    let mut acc: Vec<(usize, f64)> = Vec::new();
    let mut add = |idx: usize, w: f64| {
        if w == 0.0 {
            return;
        }
        if let Some(e) = acc.iter_mut().find(|e| e.0 == idx) {
            e.1 += w;
        } else {
            acc.push((idx, w));
        }
    };
    for &(gi, gj, w) in &corners {
        if w == 0.0 {
            continue;
        }
        match kind {
            ObservableKind::PointValue => add(grid.idx(gi - 1, gj - 1), w),
            ObservableKind::GradientX => {
                add(grid.idx(gi, gj - 1), w / (2.0 * h));
                add(grid.idx(gi - 2, gj - 1), -w / (2.0 * h));
            }
            ObservableKind::GradientY => {
                add(grid.idx(gi - 1, gj), w / (2.0 * h));
                add(grid.idx(gi - 1, gj - 2), -w / (2.0 * h));
            }
        }
    }
    Ok(ObservableFunctional {
        kind,
        location,
        entries: acc,
    })
}

/// Source of harmonic-correction gradients at the vortex centers, the
/// feedback quantity consumed by the bounded-domain motion models. The
/// direct implementation below solves and samples; the warped-evolution
/// emulator provides the same interface elsewhere.
pub trait GradientProvider {
    fn gradients(
        &mut self,
        centers: &[(f64, f64)],
        phase: &BoundaryPhase,
    ) -> Result<Vec<(f64, f64)>>;
}

/// Classical feedback: solve the Dirichlet problem, then sample gradients.
pub struct DirectGradients {
    pub solver: SolverKind,
    pub tol: f64,
}

impl Default for DirectGradients {
    fn default() -> Self {
        Self {
            solver: SolverKind::BpxCg,
            tol: 1e-11,
        }
    }
}

impl GradientProvider for DirectGradients {
    fn gradients(
        &mut self,
        centers: &[(f64, f64)],
        phase: &BoundaryPhase,
    ) -> Result<Vec<(f64, f64)>> {
        let h = solve_harmonic(centers, phase, self.solver, self.tol)?;
        centers
            .iter()
            .map(|&c| sample_gradient(&h.field, c))
            .collect()
    }
}
