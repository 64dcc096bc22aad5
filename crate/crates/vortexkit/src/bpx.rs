//! Multilevel preconditioner on dyadic grids in 2D and 3D.
//!
//! B = sum over levels l of c_l P_l P_l^T, where P_l interpolates the level-l
//! grid to the finest grid by tensor-product linear interpolation and
//! c_l = h_l^{2-d}. Applied matrix-free through a restriction/prolongation
//! cascade; assembled and factored densely only at desk scale, where the
//! square Cholesky factor S (B = S S^T) makes the symmetrically
//! preconditioned stiffness S^T K S available explicitly.

use crate::grid2d::{self, Grid2D, Scaling, SparseOperator};
use crate::grid3d::{self, Grid3D};
use crate::linalg;
use crate::{Error, Result};
use nalgebra::DMatrix;
use std::sync::OnceLock;

/// Build guard: total interior nodes on the finest grid.
const MAX_NODES: usize = 200_000;
/// Dense assembly/factorization guard.
const MAX_DENSE: usize = 4_096;

fn interior_per_axis(level: usize) -> usize {
    (1 << level) - 1
}

/// Linear interpolation of one grid line to the next finer one.
/// Coarse node k lands on fine node 2k+1; its even neighbors get half
/// weight. Endpoint halves fall on interior fine nodes, never outside.
fn prolong_line(coarse: &[f64], fine: &mut [f64]) {
    let mc = coarse.len();
    debug_assert_eq!(fine.len(), 2 * mc + 1);
    fine.fill(0.0);
    for (k, &c) in coarse.iter().enumerate() {
        fine[2 * k] += 0.5 * c;
        fine[2 * k + 1] += c;
        fine[2 * k + 2] += 0.5 * c;
    }
}

/// Transpose of `prolong_line`.
fn restrict_line(fine: &[f64], coarse: &mut [f64]) {
    let mc = coarse.len();
    debug_assert_eq!(fine.len(), 2 * mc + 1);
    for k in 0..mc {
        coarse[k] = fine[2 * k + 1] + 0.5 * (fine[2 * k] + fine[2 * k + 2]);
    }
}

/// Expand one axis of an x-fastest tensor through `prolong_line`.
fn prolong_axis(src: &[f64], shape: [usize; 3], axis: usize) -> (Vec<f64>, [usize; 3]) {
    let [sx, sy, sz] = shape;
    let la = shape[axis];
    let lf = 2 * la + 1;
    let mut out_shape = shape;
    out_shape[axis] = lf;
    let mut out = vec![0.0; out_shape[0] * out_shape[1] * out_shape[2]];
    let mut cbuf = vec![0.0; la];
    let mut fbuf = vec![0.0; lf];
    match axis {
        0 => {
            for k in 0..sz {
                for j in 0..sy {
                    let ib = sx * (j + sy * k);
                    cbuf.copy_from_slice(&src[ib..ib + sx]);
                    prolong_line(&cbuf, &mut fbuf);
                    let ob = lf * (j + sy * k);
                    out[ob..ob + lf].copy_from_slice(&fbuf);
                }
            }
        }
        1 => {
            for k in 0..sz {
                for i in 0..sx {
                    for j in 0..sy {
                        cbuf[j] = src[i + sx * (j + sy * k)];
                    }
                    prolong_line(&cbuf, &mut fbuf);
                    for j in 0..lf {
                        out[i + sx * (j + lf * k)] = fbuf[j];
                    }
                }
            }
        }
        2 => {
            for j in 0..sy {
                for i in 0..sx {
                    for k in 0..sz {
                        cbuf[k] = src[i + sx * (j + sy * k)];
                    }
                    prolong_line(&cbuf, &mut fbuf);
                    for k in 0..lf {
                        out[i + sx * (j + sy * k)] = fbuf[k];
                    }
                }
            }
        }
        _ => unreachable!(),
    }
    (out, out_shape)
}

/// Contract one axis of an x-fastest tensor through `restrict_line`.
fn restrict_axis(src: &[f64], shape: [usize; 3], axis: usize) -> (Vec<f64>, [usize; 3]) {
    let [sx, sy, sz] = shape;
    let la = shape[axis];
    let lc = (la - 1) / 2;
    let mut out_shape = shape;
    out_shape[axis] = lc;
    let mut out = vec![0.0; out_shape[0] * out_shape[1] * out_shape[2]];
    let mut fbuf = vec![0.0; la];
    let mut cbuf = vec![0.0; lc];
    match axis {
        0 => {
            for k in 0..sz {
                for j in 0..sy {
                    let ib = sx * (j + sy * k);
                    fbuf.copy_from_slice(&src[ib..ib + sx]);
                    restrict_line(&fbuf, &mut cbuf);
                    let ob = lc * (j + sy * k);
                    out[ob..ob + lc].copy_from_slice(&cbuf);
                }
            }
        }
        1 => {
            for k in 0..sz {
                for i in 0..sx {
                    for j in 0..la {
                        fbuf[j] = src[i + sx * (j + sy * k)];
                    }
                    restrict_line(&fbuf, &mut cbuf);
                    for j in 0..lc {
                        out[i + sx * (j + lc * k)] = cbuf[j];
                    }
                }
            }
        }
        2 => {
            for j in 0..sy {
                for i in 0..sx {
                    for k in 0..la {
                        fbuf[k] = src[i + sx * (j + sy * k)];
                    }
                    restrict_line(&fbuf, &mut cbuf);
                    for k in 0..lc {
                        out[i + sx * (j + sy * k)] = cbuf[k];
                    }
                }
            }
        }
        _ => unreachable!(),
    }
    (out, out_shape)
}

fn shape_for(d: usize, m: usize) -> [usize; 3] {
    if d == 2 {
        [m, m, 1]
    } else {
        [m, m, m]
    }
}

fn prolong_level(v: &[f64], d: usize, coarse_level: usize) -> Vec<f64> {
    let m = interior_per_axis(coarse_level);
    let mut data = v.to_vec();
    let mut shape = shape_for(d, m);
    for axis in 0..d {
        let (next, next_shape) = prolong_axis(&data, shape, axis);
        data = next;
        shape = next_shape;
    }
    data
}

fn restrict_level(v: &[f64], d: usize, fine_level: usize) -> Vec<f64> {
    let m = interior_per_axis(fine_level);
    let mut data = v.to_vec();
    let mut shape = shape_for(d, m);
    for axis in 0..d {
        let (next, next_shape) = restrict_axis(&data, shape, axis);
        data = next;
        shape = next_shape;
    }
    data
}

/// Multilevel preconditioner over levels 1..=L.
///
/// Level 0 has no interior nodes, so the sum starts at the coarsest level
/// with at least one. Immutable after build; `apply` is pure.
pub struct BpxPreconditioner {
    d: usize,
    level: usize,
    assembled: OnceLock<DMatrix<f64>>,
    factor: OnceLock<DMatrix<f64>>,
}

pub fn build_bpx(d: usize, level: usize) -> Result<BpxPreconditioner> {
    if d != 2 && d != 3 {
        return Err(Error::Config(format!("dimension must be 2 or 3, got {d}")));
    }
    if level < 1 {
        return Err(Error::Config("level must be at least 1".into()));
    }
    let m = interior_per_axis(level);
    let dim = m.pow(d as u32);
    if dim > MAX_NODES {
        return Err(Error::Resource(format!(
            "{dim} interior nodes exceed the limit of {MAX_NODES}"
        )));
    }
    Ok(BpxPreconditioner {
        d,
        level,
        assembled: OnceLock::new(),
        factor: OnceLock::new(),
    })
}

impl BpxPreconditioner {
    pub fn d(&self) -> usize {
        self.d
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn dim(&self) -> usize {
        interior_per_axis(self.level).pow(self.d as u32)
    }

    /// Level weight c_l = h_l^{2-d}: 1 in 2D, 2^l in 3D.
    fn weight(&self, l: usize) -> f64 {
        if self.d == 2 {
            1.0
        } else {
            (1u64 << l) as f64
        }
    }

    /// Matrix-free B v: restrict v down the hierarchy, then accumulate
    /// weighted contributions back up (Horner form of the level sum).
    pub fn apply(&self, v: &[f64], out: &mut [f64]) {
        let ll = self.level;
        debug_assert_eq!(v.len(), self.dim());
        debug_assert_eq!(out.len(), self.dim());
        let mut rs: Vec<Vec<f64>> = Vec::with_capacity(ll);
        rs.push(v.to_vec());
        for l in (1..ll).rev() {
            let top = rs.last().unwrap();
            let coarse = restrict_level(top, self.d, l + 1);
            rs.push(coarse);
        }
        // rs[i] holds the restriction to level ll - i
        let mut acc: Vec<f64> = rs.last().unwrap().iter().map(|x| x * self.weight(1)).collect();
        for l in 2..=ll {
            let mut up = prolong_level(&acc, self.d, l - 1);
            let c = self.weight(l);
            let r = &rs[ll - l];
            for (u, ri) in up.iter_mut().zip(r) {
                *u += c * ri;
            }
            acc = up;
        }
        out.copy_from_slice(&acc);
    }

    /// Dense B, materialized on first use. Desk-scale only.
    pub fn assembled(&self) -> Result<&DMatrix<f64>> {
        let dim = self.dim();
        if dim > MAX_DENSE {
            return Err(Error::Resource(format!(
                "dense assembly of a {dim}x{dim} preconditioner refused"
            )));
        }
        Ok(self
            .assembled
            .get_or_init(|| linalg::dense_from_apply(|v, out| self.apply(v, out), dim)))
    }

    /// Lower-triangular S with B = S S^T, verified to 1e-12 relative
    /// Frobenius error on first materialization.
    pub fn factor(&self) -> Result<&DMatrix<f64>> {
        if let Some(s) = self.factor.get() {
            return Ok(s);
        }
        let b = self.assembled()?;
        let chol = b
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Spectral("preconditioner is not positive definite".into()))?;
        let s = chol.l();
        let defect = (&s * s.transpose() - b).norm() / b.norm();
        if defect > 1e-12 {
            return Err(Error::Spectral(format!(
                "Cholesky reconstruction defect {defect:.3e}"
            )));
        }
        let _ = self.factor.set(s);
        Ok(self.factor.get().unwrap())
    }
}

/// Free-function form of the matrix-free product B v.
pub fn bpx_apply(bpx: &BpxPreconditioner, v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; bpx.dim()];
    bpx.apply(v, &mut out);
    out
}

/// Stiffness-scaled Laplacian matching `build_bpx(d, level)`.
pub fn stiffness_for(d: usize, level: usize) -> Result<SparseOperator> {
    match d {
        2 => Ok(grid2d::assemble_laplacian(
            Grid2D::new(level as u32)?,
            Scaling::Stiffness,
        )),
        3 => Ok(grid3d::assemble_laplacian3(
            Grid3D::new(level as u32)?,
            Scaling::Stiffness,
        )),
        _ => Err(Error::Config(format!("dimension must be 2 or 3, got {d}"))),
    }
}

/// S^T K S (optionally with K shifted by a multiple of the identity),
/// with extremal eigenvalues cached at construction.
///
/// At desk scale the operator is materialized densely; above that the
/// extremes come from Lanczos on the product K B, whose spectrum equals
/// that of S^T K S.
pub struct PreconditionedOperator {
    pub d: usize,
    pub level: usize,
    pub shift: Option<f64>,
    pub lambda_min: f64,
    pub lambda_max: f64,
    dense: Option<DMatrix<f64>>,
}

impl PreconditionedOperator {
    pub fn cond(&self) -> f64 {
        self.lambda_max / self.lambda_min
    }

    /// Dense S^T K S when the build was small enough to materialize it.
    pub fn dense(&self) -> Option<&DMatrix<f64>> {
        self.dense.as_ref()
    }
}

pub fn preconditioned_operator(
    k: &SparseOperator,
    bpx: &BpxPreconditioner,
    shift: Option<f64>,
) -> Result<PreconditionedOperator> {
    let dim = bpx.dim();
    if k.dim != dim {
        return Err(Error::Dimension {
            expected: dim,
            got: k.dim,
        });
    }
    let s0 = shift.unwrap_or(0.0);
    let apply_shifted = |v: &[f64], out: &mut [f64]| {
        k.apply(v, out);
        if s0 != 0.0 {
            for (o, vi) in out.iter_mut().zip(v) {
                *o += s0 * vi;
            }
        }
    };
    let (lambda_min, lambda_max, dense) = if dim <= 1024 {
        let s = bpx.factor()?;
        let kd = linalg::dense_from_apply(apply_shifted, dim);
        let ks = s.transpose() * kd * s;
        let asym = (&ks - ks.transpose()).norm() / ks.norm();
        if asym > 1e-12 {
            return Err(Error::Spectral(format!(
                "preconditioned operator asymmetry {asym:.3e}"
            )));
        }
        let sym = (&ks + ks.transpose()) * 0.5;
        let (lo, hi) = linalg::sym_extremes_dense(&sym);
        (lo, hi, Some(sym))
    } else {
        let (lo, hi) = linalg::lanczos_pencil_extremes(
            apply_shifted,
            |v, out| bpx.apply(v, out),
            dim,
            160,
            7,
        )?;
        (lo, hi, None)
    };
    if lambda_min <= 0.0 {
        return Err(Error::Spectral(format!(
            "preconditioned operator has lambda_min = {lambda_min:.3e}"
        )));
    }
    Ok(PreconditionedOperator {
        d: bpx.d(),
        level: bpx.level(),
        shift,
        lambda_min,
        lambda_max,
        dense,
    })
}

/// Discrete Poincare constant 1/lambda_min of the h^{-2}-scaled Laplacian,
/// from the closed-form lowest mode. Tends to 1/(d pi^2) as h -> 0.
pub fn discrete_poincare_constant(d: usize, level: usize) -> Result<f64> {
    match d {
        2 => Ok(1.0 / grid2d::fd_eigenvalue(Grid2D::new(level as u32)?, 1, 1)),
        3 => Ok(1.0 / grid3d::fd_eigenvalue3(Grid3D::new(level as u32)?, 1, 1, 1)),
        _ => Err(Error::Config(format!("dimension must be 2 or 3, got {d}"))),
    }
}

/// One row of the spectral report: extremes and condition numbers of the
/// plain and shifted preconditioned operators at one level.
#[derive(Clone, Copy, Debug)]
pub struct SpectralRow {
    pub d: usize,
    pub level: usize,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub cond: f64,
    pub shifted_lambda_min: f64,
    pub shifted_lambda_max: f64,
    pub shifted_cond: f64,
}

pub fn spectral_scan(d: usize, levels: &[usize]) -> Result<Vec<SpectralRow>> {
    let mut rows = Vec::with_capacity(levels.len());
    for &level in levels {
        let bpx = build_bpx(d, level)?;
        let k = stiffness_for(d, level)?;
        let h = 0.5f64.powi(level as i32);
        let plain = preconditioned_operator(&k, &bpx, None)?;
        let shifted = preconditioned_operator(&k, &bpx, Some(h.powi(d as i32)))?;
        rows.push(SpectralRow {
            d,
            level,
            lambda_min: plain.lambda_min,
            lambda_max: plain.lambda_max,
            cond: plain.cond(),
            shifted_lambda_min: shifted.lambda_min,
            shifted_lambda_max: shifted.lambda_max,
            shifted_cond: shifted.cond(),
        });
    }
    Ok(rows)
}
