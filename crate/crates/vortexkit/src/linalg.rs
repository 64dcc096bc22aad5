//! Iterative linear algebra on matrix-free operators.
//!
//! Everything here works through `apply` closures so the same routines serve
//! sparse stencils, dense factors, and multilevel cascades. Operators are
//! assumed symmetric positive definite unless a routine says otherwise.

use crate::{Error, Result};
use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Conjugate gradients for SPD `apply`, starting from `x`.
///
/// Stops when `||b - Ax|| <= tol * ||b||`; returns the solution vector.
/// `x` is updated in place as well. A zero right-hand side returns zeros.
pub fn cg<F>(mut apply: F, b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> Result<Vec<f64>>
where
    F: FnMut(&[f64], &mut [f64]),
{
    let n = b.len();
    if x.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: x.len(),
        });
    }
    let bnorm = norm(b);
    if bnorm == 0.0 {
        x.fill(0.0);
        return Ok(vec![0.0; n]);
    }
    let mut r = vec![0.0; n];
    let mut ax = vec![0.0; n];
    apply(x, &mut ax);
    for i in 0..n {
        r[i] = b[i] - ax[i];
    }
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rr = dot(&r, &r);
    if rr.sqrt() <= tol * bnorm {
        return Ok(x.to_vec());
    }
    for _ in 0..max_iter {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(Error::IterationFailure {
                residual: rr.sqrt() / bnorm,
                iters: max_iter,
            });
        }
        let alpha = rr / pap;
        axpy(alpha, &p, x);
        axpy(-alpha, &ap, &mut r);
        let rr_new = dot(&r, &r);
        if rr_new.sqrt() <= tol * bnorm {
            return Ok(x.to_vec());
        }
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    Err(Error::IterationFailure {
        residual: rr.sqrt() / bnorm,
        iters: max_iter,
    })
}

/// Preconditioned conjugate gradients.
///
/// `apply_a` must be SPD and `apply_m` an SPD approximation of its inverse.
/// Returns the solution and the number of iterations taken to reach
/// `||b - Ax|| <= tol * ||b||`. Starts from the zero vector.
pub fn pcg<F, G>(
    mut apply_a: F,
    mut apply_m: G,
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, usize)>
where
    F: FnMut(&[f64], &mut [f64]),
    G: FnMut(&[f64], &mut [f64]),
{
    let n = b.len();
    let bnorm = norm(b);
    if bnorm == 0.0 {
        return Ok((vec![0.0; n], 0));
    }
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z = vec![0.0; n];
    apply_m(&r, &mut z);
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    for iter in 0..max_iter {
        if norm(&r) <= tol * bnorm {
            return Ok((x, iter));
        }
        apply_a(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 || rz <= 0.0 {
            return Err(Error::IterationFailure {
                residual: norm(&r) / bnorm,
                iters: iter,
            });
        }
        let alpha = rz / pap;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        apply_m(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    if norm(&r) <= tol * bnorm {
        return Ok((x, max_iter));
    }
    Err(Error::IterationFailure {
        residual: norm(&r) / bnorm,
        iters: max_iter,
    })
}

/// Extremal eigenvalues `(min, max)` of an SPD operator by Lanczos
/// iteration with full reorthogonalization.
///
/// Deterministic for a fixed `seed`. `iters` is capped at `dim`.
pub fn lanczos_extremes<F>(apply: F, dim: usize, iters: usize, seed: u64) -> Result<(f64, f64)>
where
    F: FnMut(&[f64], &mut [f64]),
{
    lanczos_pencil_extremes(apply, |v, out| out.copy_from_slice(v), dim, iters, seed)
}

/// Extremal eigenvalues `(min, max)` of the product `A B` where both
/// factors are SPD and only applies are available.
///
/// Runs Lanczos for the operator `v -> A(Bv)`, which is self-adjoint in
/// the `B` inner product, with full reorthogonalization in that inner
/// product. The spectrum of `A B` equals that of `B^{1/2} A B^{1/2}`,
/// so the Ritz extremes converge to real positive eigenvalues. With
/// `B = I` this is plain Lanczos for `A`.
pub fn lanczos_pencil_extremes<F, G>(
    mut apply_a: F,
    mut apply_b: G,
    dim: usize,
    iters: usize,
    seed: u64,
) -> Result<(f64, f64)>
where
    F: FnMut(&[f64], &mut [f64]),
    G: FnMut(&[f64], &mut [f64]),
{
    if dim == 0 {
        return Err(Error::Dimension {
            expected: 1,
            got: 0,
        });
    }
    let steps = iters.min(dim);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut bv = vec![0.0; dim];
    apply_b(&v, &mut bv);
    let vnorm = dot(&v, &bv).sqrt();
    if vnorm == 0.0 {
        return Err(Error::IterationFailure {
            residual: 0.0,
            iters: 0,
        });
    }
    for x in v.iter_mut() {
        *x /= vnorm;
    }
    for x in bv.iter_mut() {
        *x /= vnorm;
    }
    // basis vectors and their B images, kept for full reorthogonalization
    let mut basis: Vec<Vec<f64>> = vec![v.clone()];
    let mut bbasis: Vec<Vec<f64>> = vec![bv.clone()];
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let mut w = vec![0.0; dim];
    for j in 0..steps {
        apply_a(&bbasis[j], &mut w);
        let alpha = dot(&w, &bbasis[j]);
        alphas.push(alpha);
        axpy(-alpha, &basis[j], &mut w);
        if j > 0 {
            let beta_prev = betas[j - 1];
            axpy(-beta_prev, &basis[j - 1], &mut w);
        }
        // full reorthogonalization against all previous vectors, twice
        for _ in 0..2 {
            for k in 0..basis.len() {
                let c = dot(&w, &bbasis[k]);
                axpy(-c, &basis[k], &mut w);
            }
        }
        apply_b(&w, &mut bv);
        let beta = dot(&w, &bv).sqrt();
        if !beta.is_finite() {
            return Err(Error::IterationFailure {
                residual: beta,
                iters: j,
            });
        }
        if beta < 1e-13 || j + 1 == steps {
            break;
        }
        betas.push(beta);
        let next: Vec<f64> = w.iter().map(|x| x / beta).collect();
        let bnext: Vec<f64> = bv.iter().map(|x| x / beta).collect();
        basis.push(next);
        bbasis.push(bnext);
    }
    let k = alphas.len();
    let mut t = DMatrix::<f64>::zeros(k, k);
    for i in 0..k {
        t[(i, i)] = alphas[i];
        if i + 1 < k {
            t[(i, i + 1)] = betas[i];
            t[(i + 1, i)] = betas[i];
        }
    }
    let eig = t.symmetric_eigenvalues();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &e in eig.iter() {
        lo = lo.min(e);
        hi = hi.max(e);
    }
    Ok((lo, hi))
}

/// Materialize a matrix-free operator column by column.
pub fn dense_from_apply<F>(mut apply: F, dim: usize) -> DMatrix<f64>
where
    F: FnMut(&[f64], &mut [f64]),
{
    let mut m = DMatrix::<f64>::zeros(dim, dim);
    let mut e = vec![0.0; dim];
    let mut col = vec![0.0; dim];
    for j in 0..dim {
        e[j] = 1.0;
        apply(&e, &mut col);
        e[j] = 0.0;
        for i in 0..dim {
            m[(i, j)] = col[i];
        }
    }
    m
}

/// Extremal eigenvalues `(min, max)` of a dense symmetric matrix.
pub fn sym_extremes_dense(m: &DMatrix<f64>) -> (f64, f64) {
    let eig = m.clone().symmetric_eigenvalues();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &e in eig.iter() {
        lo = lo.min(e);
        hi = hi.max(e);
    }
    (lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd_apply(m: &DMatrix<f64>) -> impl FnMut(&[f64], &mut [f64]) + '_ {
        move |v, out| {
            for i in 0..m.nrows() {
                let mut s = 0.0;
                for j in 0..m.ncols() {
                    s += m[(i, j)] * v[j];
                }
                out[i] = s;
            }
        }
    }

    fn random_spd(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        &a * a.transpose() + DMatrix::identity(n, n) * 0.5
    }

    #[test]
    fn cg_solves_small_spd_system() {
        let m = random_spd(24, 7);
        let xs: Vec<f64> = (0..24).map(|i| (i as f64 * 0.3).sin()).collect();
        let mut b = vec![0.0; 24];
        spd_apply(&m)(&xs, &mut b);
        let mut x0 = vec![0.0; 24];
        let x = cg(spd_apply(&m), &b, &mut x0, 1e-12, 200).unwrap();
        for (got, want) in x.iter().zip(&xs) {
            assert!((got - want).abs() < 1e-8, "{got} vs {want}");
        }
    }

    #[test]
    fn cg_zero_rhs_returns_zero() {
        let m = random_spd(8, 3);
        let b = vec![0.0; 8];
        let mut x0 = vec![1.0; 8];
        let x = cg(spd_apply(&m), &b, &mut x0, 1e-12, 50).unwrap();
        assert!(x.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cg_reports_nonconvergence() {
        let m = random_spd(40, 11);
        let b = vec![1.0; 40];
        let mut x0 = vec![0.0; 40];
        let err = cg(spd_apply(&m), &b, &mut x0, 1e-14, 2);
        assert!(matches!(err, Err(Error::IterationFailure { .. })));
    }

    #[test]
    fn pcg_with_exact_inverse_converges_immediately() {
        let m = random_spd(16, 5);
        let minv = m.clone().try_inverse().unwrap();
        let b: Vec<f64> = (0..16).map(|i| 1.0 + i as f64).collect();
        let (x, iters) = pcg(spd_apply(&m), spd_apply(&minv), &b, 1e-12, 50).unwrap();
        assert!(iters <= 2, "iters {iters}");
        let mut ax = vec![0.0; 16];
        spd_apply(&m)(&x, &mut ax);
        for (a, bb) in ax.iter().zip(&b) {
            assert!((a - bb).abs() < 1e-8);
        }
    }

    #[test]
    fn pcg_identity_preconditioner_matches_cg() {
        let m = random_spd(20, 9);
        let b: Vec<f64> = (0..20).map(|i| (i as f64).cos()).collect();
        let (x_p, _) = pcg(
            spd_apply(&m),
            |v, out| out.copy_from_slice(v),
            &b,
            1e-12,
            200,
        )
        .unwrap();
        let mut x0 = vec![0.0; 20];
        let x_c = cg(spd_apply(&m), &b, &mut x0, 1e-12, 200).unwrap();
        for (p, c) in x_p.iter().zip(&x_c) {
            assert!((p - c).abs() < 1e-7);
        }
    }

    #[test]
    fn lanczos_matches_dense_extremes() {
        let m = random_spd(60, 13);
        let (lo_d, hi_d) = sym_extremes_dense(&m);
        let (lo_l, hi_l) = lanczos_extremes(spd_apply(&m), 60, 60, 42).unwrap();
        assert!((lo_d - lo_l).abs() / lo_d < 1e-8, "{lo_d} vs {lo_l}");
        assert!((hi_d - hi_l).abs() / hi_d < 1e-8, "{hi_d} vs {hi_l}");
    }

    #[test]
    fn pencil_lanczos_matches_dense_product_spectrum() {
        let a = random_spd(30, 17);
        let b = random_spd(30, 19);
        // eigenvalues of A B via the symmetric congruence L^T A L, B = L L^T
        let chol = b.clone().cholesky().unwrap();
        let l = chol.l();
        let sym = l.transpose() * &a * &l;
        let (lo_d, hi_d) = sym_extremes_dense(&sym);
        let (lo_l, hi_l) =
            lanczos_pencil_extremes(spd_apply(&a), spd_apply(&b), 30, 30, 4).unwrap();
        assert!((lo_d - lo_l).abs() / lo_d < 1e-7, "{lo_d} vs {lo_l}");
        assert!((hi_d - hi_l).abs() / hi_d < 1e-7, "{hi_d} vs {hi_l}");
    }

    #[test]
    fn dense_from_apply_reproduces_matrix() {
        let m = random_spd(12, 23);
        let d = dense_from_apply(spd_apply(&m), 12);
        assert!((&d - &m).abs().max() < 1e-14);
    }
}
