//! Point-vortex dynamics on the unit square, the harmonic phase-correction
//! problem with a multilevel (BPX) preconditioner, a classical emulator of the
//! warped-phase unitary solver, a nonlinear Schrödinger reference solver, and
//! 3D filament/London-equation machinery, plus the comparison metrics and
//! experiment drivers shared by the CLI.

pub mod bpx;
pub mod filament;
pub mod grid2d;
pub mod grid3d;
pub mod harmonic;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod nls;
pub mod schrodingerize;
pub mod sweep;
pub mod vortex;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("evaluation point coincides with a vortex center")]
    Singularity,
    #[error("vortex collision: pairwise distance {dist:.3e} below tolerance {tol:.3e}")]
    Collision { dist: f64, tol: f64 },
    #[error("vortex left the domain at ({x:.6}, {y:.6})")]
    DomainExit { x: f64, y: f64 },
    #[error("boundary phase winding mismatch: closure defect {defect:.3e}")]
    WindingMismatch { defect: f64 },
    #[error("geometry constraint violated: {0}")]
    Geometry(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("iteration failed to converge: residual {residual:.3e} after {iters} iterations")]
    IterationFailure { residual: f64, iters: usize },
    #[error("problem size exceeds the desk-scale guard: {0}")]
    Resource(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("spectral structure violated: {0}")]
    Spectral(String),
    #[error("i/o failure on {path}: {reason}")]
    Io { path: String, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;
