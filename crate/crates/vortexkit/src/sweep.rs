//! Boundary-effect error sweep: evolve the full model to the final time,
//! integrate both reduced motion laws, rebuild their outer reconstructions,
//! and score the masked phase-aligned errors across the core-scale list.

use rayon::prelude::*;

use crate::grid2d::Grid2D;
use crate::harmonic::{
    reconstruct_outer, solve_harmonic, BoundaryPhase, DirectGradients, SolverKind,
};
use crate::metrics::{build_mask, masked_relative_error};
use crate::nls::{evolve_nls, NLSParams};
use crate::schrodingerize::EmulatedGradients;
use crate::vortex::{step_explicit, MotionLaw, VortexConfig};
use crate::{Error, Result};

pub const SWEEP_T_FINAL: f64 = 0.05;
pub const SWEEP_R_MASK: f64 = 0.1;
/// Step of the reduced-law integrations; the boundary-feedback drift over
/// the sweep horizon is two orders above the Euler error this leaves.
pub const REDUCED_DT: f64 = 2.5e-4;
/// Boundary-datum ripple amplitude used in all sweep experiments.
pub const SWEEP_AMPLITUDE: f64 = 0.3;

/// Two same-sign vortices, off-center so the boundary matters.
pub fn default_positions() -> Vec<(f64, f64)> {
    vec![(0.35, 0.55), (0.70, 0.40)]
}

#[derive(Debug, Clone, Copy)]
pub struct SweepCase {
    pub epsilon: f64,
    pub level: u32,
    pub dt: f64,
}

impl SweepCase {
    /// Smallest level with h <= eps/4, time step at 80% of the accuracy
    /// budget (the solver rounds it to divide the final time).
    pub fn for_epsilon(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::Config(format!(
                "core scale must be positive, got {epsilon}"
            )));
        }
        let level = (4.0 / epsilon).log2().ceil() as u32;
        let h = 0.5f64.powi(level as i32);
        debug_assert!(h <= epsilon / 4.0);
        Ok(SweepCase {
            epsilon,
            level,
            dt: 0.4 * h * h,
        })
    }
}

/// The published core-scale list.
pub fn default_cases() -> Result<Vec<SweepCase>> {
    [0.2, 0.1, 0.05, 0.025]
        .iter()
        .map(|&e| SweepCase::for_epsilon(e))
        .collect()
}

/// Where the reduced feedback gradients come from.
#[derive(Debug, Clone, Copy)]
pub enum FeedbackMode {
    Direct,
    /// Warped-phase emulated solves at the given solver precision.
    Emulated { epsilon_solver: f64 },
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub epsilon: f64,
    pub level: u32,
    /// Actual full-model step after rounding.
    pub dt: f64,
    pub e_m1: f64,
    pub e_m2: f64,
    pub ratio: f64,
    pub final_m1: Vec<(f64, f64)>,
    pub final_m2: Vec<(f64, f64)>,
}

/// Integrate a reduced law with forward Euler, returning the sampled path.
pub fn reduced_path(
    start: &VortexConfig,
    law: &mut MotionLaw,
    dt: f64,
    t_final: f64,
) -> Result<(Vec<f64>, Vec<Vec<(f64, f64)>>)> {
    if !(dt > 0.0 && t_final >= 0.0 && dt.is_finite() && t_final.is_finite()) {
        return Err(Error::Config(format!(
            "reduced integration needs dt > 0, t_final >= 0; got {dt}, {t_final}"
        )));
    }
    let raw = t_final / dt;
    let steps = if (raw - raw.round()).abs() <= 1e-9 * raw.max(1.0) {
        raw.round() as usize
    } else {
        raw.ceil() as usize
    };
    let mut config = start.clone();
    let mut times = vec![config.time];
    let mut path = vec![config.positions.clone()];
    for step in 0..steps {
        // Shorten the last step so the path ends exactly at t_final.
        let step_dt = if step + 1 == steps {
            t_final - step as f64 * dt
        } else {
            dt
        };
        config = step_explicit(&config, law, step_dt)?;
        times.push(config.time);
        path.push(config.positions.clone());
    }
    Ok((times, path))
}

pub fn run_case(case: &SweepCase, mode: FeedbackMode) -> Result<SweepRow> {
    let grid = Grid2D::new(case.level)?;
    let phase = BoundaryPhase::deg2_sine(grid, SWEEP_AMPLITUDE)?;
    let start = VortexConfig::new(default_positions(), 0.0)?;

    let params = NLSParams {
        epsilon: case.epsilon,
        level: case.level,
        dt: case.dt,
        t_final: SWEEP_T_FINAL,
        positions: start.positions.clone(),
        phase: phase.clone(),
    };
    let trajectory = evolve_nls(&params, &[SWEEP_T_FINAL], SolverKind::BpxCg, 1e-10)?;
    let u_ref = trajectory
        .snapshots
        .last()
        .ok_or_else(|| Error::Config("no final snapshot".into()))?;

    let mut m1_law = MotionLaw::nls_m1();
    let (_, m1_path) = reduced_path(&start, &mut m1_law, REDUCED_DT, SWEEP_T_FINAL)?;
    let final_m1 = m1_path.last().unwrap().clone();

    let mut direct = DirectGradients {
        solver: SolverKind::BpxCg,
        tol: 1e-11,
    };
    let mut emulated;
    let provider: &mut dyn crate::harmonic::GradientProvider = match mode {
        FeedbackMode::Direct => &mut direct,
        FeedbackMode::Emulated { epsilon_solver } => {
            emulated = EmulatedGradients::new(case.level, epsilon_solver)?;
            &mut emulated
        }
    };
    let mut m2_law = MotionLaw::nls_m2(provider, &phase);
    let (_, m2_path) = reduced_path(&start, &mut m2_law, REDUCED_DT, SWEEP_T_FINAL)?;
    let final_m2 = m2_path.last().unwrap().clone();

    let rec_m1 = {
        let hf = solve_harmonic(&final_m1, &phase, SolverKind::BpxCg, 1e-11)?;
        reconstruct_outer(&final_m1, &hf).field
    };
    let rec_m2 = {
        let hf = solve_harmonic(&final_m2, &phase, SolverKind::BpxCg, 1e-11)?;
        reconstruct_outer(&final_m2, &hf).field
    };

    // Both errors use the same mask, centered at the coupled-law endpoints.
    let mask_centers = VortexConfig::new(final_m2.clone(), SWEEP_T_FINAL)?;
    let mask = build_mask(&mask_centers, SWEEP_R_MASK, grid)?;
    let e_m1 = masked_relative_error(u_ref, &rec_m1, &mask)?;
    let e_m2 = masked_relative_error(u_ref, &rec_m2, &mask)?;

    Ok(SweepRow {
        epsilon: case.epsilon,
        level: case.level,
        dt: trajectory.dt,
        e_m1,
        e_m2,
        ratio: e_m2 / e_m1,
        final_m1,
        final_m2,
    })
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub slope_m1: f64,
    pub slope_m2: f64,
}

/// Least-squares slope of log(err) against log(eps).
pub fn loglog_slope(epsilons: &[f64], errors: &[f64]) -> Result<f64> {
    if epsilons.len() != errors.len() {
        return Err(Error::Dimension {
            expected: epsilons.len(),
            got: errors.len(),
        });
    }
    if epsilons.len() < 2 {
        return Err(Error::Config("slope needs at least two points".into()));
    }
    if epsilons.iter().chain(errors).any(|&v| !(v > 0.0)) {
        return Err(Error::Config("log-log slope needs positive data".into()));
    }
    let xs: Vec<f64> = epsilons.iter().map(|e| e.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        num += (x - mx) * (y - my);
        den += (x - mx) * (x - mx);
    }
    Ok(num / den)
}

/// Run the cases concurrently; rows come back in input order so emitted
/// artifacts stay deterministic.
pub fn run_sweep(cases: &[SweepCase], mode: FeedbackMode) -> Result<SweepReport> {
    let rows: Vec<SweepRow> = cases
        .par_iter()
        .map(|case| run_case(case, mode))
        .collect::<Result<Vec<_>>>()?;
    let eps: Vec<f64> = rows.iter().map(|r| r.epsilon).collect();
    let e1: Vec<f64> = rows.iter().map(|r| r.e_m1).collect();
    let e2: Vec<f64> = rows.iter().map(|r| r.e_m2).collect();
    let slope_m1 = loglog_slope(&eps, &e1)?;
    let slope_m2 = loglog_slope(&eps, &e2)?;
    Ok(SweepReport {
        rows,
        slope_m1,
        slope_m2,
    })
}
