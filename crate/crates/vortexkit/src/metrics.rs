//! Masked comparison harness for reduced-model verification: an outer
//! region excluding vortex disks, global phase alignment, aligned relative
//! L2 errors, and pointwise phase-mismatch maps. All quadrature is plain
//! node-sum times h^2 so error ratios are scale-free.

use num_complex::Complex64;

use crate::grid2d::{ComplexField2D, Grid2D};
use crate::vortex::VortexConfig;
use crate::{Error, Result};

/// Interior-node membership bitmap: a node belongs to the region iff its
/// distance to every center is at least `r_mask`.
#[derive(Debug, Clone)]
pub struct MaskRegion {
    pub grid: Grid2D,
    pub centers: Vec<(f64, f64)>,
    pub r_mask: f64,
    members: Vec<bool>,
    count: usize,
}

impl MaskRegion {
    pub fn contains(&self, idx: usize) -> bool {
        self.members[idx]
    }

    /// Number of member nodes.
    pub fn count(&self) -> usize {
        self.count
    }

    /// Quadrature area of the region: member count times h^2.
    pub fn area(&self) -> f64 {
        let h = self.grid.h();
        self.count as f64 * h * h
    }
}

pub fn build_mask(config: &VortexConfig, r_mask: f64, grid: Grid2D) -> Result<MaskRegion> {
    if !(r_mask >= 0.0 && r_mask.is_finite()) {
        return Err(Error::Config(format!(
            "mask radius must be finite and nonnegative, got {r_mask}"
        )));
    }
    let m = grid.m();
    let mut members = vec![false; m * m];
    let mut count = 0;
    for j in 0..m {
        for i in 0..m {
            let (x, y) = grid.coord(i, j);
            let keep = config.positions.iter().all(|&(ax, ay)| {
                let (dx, dy) = (x - ax, y - ay);
                (dx * dx + dy * dy).sqrt() >= r_mask
            });
            if keep {
                members[grid.idx(i, j)] = true;
                count += 1;
            }
        }
    }
    Ok(MaskRegion {
        grid,
        centers: config.positions.clone(),
        r_mask,
        members,
        count,
    })
}

fn check_same_grid(u_ref: &ComplexField2D, u_approx: &ComplexField2D, mask: &MaskRegion) -> Result<()> {
    if u_ref.grid.level() != u_approx.grid.level() || u_ref.grid.level() != mask.grid.level() {
        return Err(Error::Dimension {
            expected: u_ref.values.len(),
            got: u_approx.values.len(),
        });
    }
    Ok(())
}

/// Masked overlap sum conj(u_approx) u_ref; h^2 weights cancel in arg.
fn overlap(u_ref: &ComplexField2D, u_approx: &ComplexField2D, mask: &MaskRegion) -> Complex64 {
    u_ref
        .values
        .iter()
        .zip(&u_approx.values)
        .enumerate()
        .filter(|&(k, _)| mask.contains(k))
        .map(|(_, (r, a))| a.conj() * r)
        .sum()
}

fn masked_norm(u: &ComplexField2D, mask: &MaskRegion) -> f64 {
    let h = u.grid.h();
    let s: f64 = u
        .values
        .iter()
        .enumerate()
        .filter(|&(k, _)| mask.contains(k))
        .map(|(_, v)| v.norm_sqr())
        .sum();
    (s * h * h).sqrt()
}

/// Global phase factor minimizing the masked L2 distance: alpha is the
/// argument of the masked overlap, and e^{i alpha} u_approx is returned.
pub fn align_phase(
    u_ref: &ComplexField2D,
    u_approx: &ComplexField2D,
    mask: &MaskRegion,
) -> Result<(f64, ComplexField2D)> {
    check_same_grid(u_ref, u_approx, mask)?;
    let s = overlap(u_ref, u_approx, mask);
    let scale = masked_norm(u_ref, mask) * masked_norm(u_approx, mask);
    let h = u_ref.grid.h();
    if s.norm() <= f64::EPSILON * scale / (h * h) {
        return Err(Error::Config(format!(
            "degenerate phase alignment: masked overlap {:.3e} vs field scale {:.3e}",
            s.norm(),
            scale
        )));
    }
    let alpha = s.arg();
    let factor = Complex64::from_polar(1.0, alpha);
    let mut aligned = u_approx.clone();
    for v in &mut aligned.values {
        *v *= factor;
    }
    Ok((alpha, aligned))
}

/// Aligned relative masked L2 error. Alignment is applied internally; a
/// vanishing overlap falls back to alpha = 0, where the distance no longer
/// depends on the phase.
pub fn masked_relative_error(
    u_ref: &ComplexField2D,
    u_approx: &ComplexField2D,
    mask: &MaskRegion,
) -> Result<f64> {
    check_same_grid(u_ref, u_approx, mask)?;
    if mask.count() == 0 {
        return Err(Error::Config("empty mask region".into()));
    }
    let denom = masked_norm(u_ref, mask);
    if denom == 0.0 {
        return Err(Error::Config("reference field vanishes on the mask".into()));
    }
    let s = overlap(u_ref, u_approx, mask);
    let factor = Complex64::from_polar(1.0, s.arg());
    let h = u_ref.grid.h();
    let num: f64 = u_ref
        .values
        .iter()
        .zip(&u_approx.values)
        .enumerate()
        .filter(|&(k, _)| mask.contains(k))
        .map(|(_, (r, a))| (r - factor * a).norm_sqr())
        .sum();
    Ok((num * h * h).sqrt() / denom)
}

/// Pointwise phase mismatch Arg(u_ref conj(u_approx)) on masked nodes;
/// unmasked nodes are None. No alignment is applied.
pub fn phase_mismatch(
    u_ref: &ComplexField2D,
    u_approx: &ComplexField2D,
    mask: &MaskRegion,
) -> Result<Vec<Option<f64>>> {
    check_same_grid(u_ref, u_approx, mask)?;
    Ok(u_ref
        .values
        .iter()
        .zip(&u_approx.values)
        .enumerate()
        .map(|(k, (r, a))| {
            if mask.contains(k) {
                Some((r * a.conj()).arg())
            } else {
                None
            }
        })
        .collect())
}
