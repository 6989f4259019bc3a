//! Dense linear-algebra helpers shared by every module.
//!
//! Rank decisions are always made on singular values relative to the
//! largest one; nothing here relies on elimination pivots.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Default relative tolerance for rank decisions and pseudoinverses.
pub const DEFAULT_REL_TOL: f64 = 1e-8;

/// Thin singular value decomposition `M = U diag(s) Vᵀ` with `s` sorted
/// in decreasing order.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub v_t: DMatrix<f64>,
}

impl ThinSvd {
    /// Number of singular values strictly above `rel_tol * s_max`.
    pub fn rank(&self, rel_tol: f64) -> usize {
        rank_from_singular_values(self.s.as_slice(), rel_tol)
    }
}

pub fn rank_from_singular_values(s: &[f64], rel_tol: f64) -> usize {
    let smax = s.iter().cloned().fold(0.0_f64, f64::max);
    if smax <= 0.0 {
        return 0;
    }
    s.iter().filter(|&&v| v > rel_tol * smax).count()
}

pub fn ensure_finite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::validation(format!("{what} contains non-finite entries")))
    }
}

const JACOBI_MAX_SWEEPS: usize = 80;

/// One-sided (Hestenes) Jacobi SVD of a matrix with at least as many rows
/// as columns.
///
/// nalgebra's Golub-Kahan path closes 2x2 blocks with explicit formulas
/// that divide by the smaller singular value, so singular vectors of
/// nearly rank-deficient inputs can be off by `ε‖M‖/σ_min`.
fn jacobi_svd(mut a: DMatrix<f64>) -> Result<ThinSvd> {
    let (r, c) = a.shape();
    let mut v = DMatrix::<f64>::identity(c, c);
    // Dot products of r terms carry rounding of order r·ε.
    let tol = (r as f64).sqrt().max(1.0) * f64::EPSILON;
    // Exactly null directions shrink geometrically without reaching zero.
    let negligible = (f64::EPSILON * f64::EPSILON * a.norm()).powi(2);
    let mut converged = false;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..c {
            for q in p + 1..c {
                let alpha = a.column(p).norm_squared();
                let beta = a.column(q).norm_squared();
                let gamma = a.column(p).dot(&a.column(q));
                if gamma == 0.0 || alpha.min(beta) <= negligible || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + zeta.hypot(1.0));
                let cs = 1.0 / t.hypot(1.0);
                let sn = cs * t;
                for (m, rows) in [(&mut a, r), (&mut v, c)] {
                    for i in 0..rows {
                        let (x, y) = (m[(i, p)], m[(i, q)]);
                        m[(i, p)] = cs * x - sn * y;
                        m[(i, q)] = sn * x + cs * y;
                    }
                }
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Numerical("Jacobi SVD did not converge".into()));
    }
    let norms: Vec<f64> = (0..c)
        .map(|j| a.column(j).norm())
        .map(|s| if s * s <= negligible { 0.0 } else { s })
        .collect();
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));
    let s = DVector::from_iterator(c, order.iter().map(|&j| norms[j]));
    let mut u = DMatrix::<f64>::zeros(r, c);
    let mut v_sorted = DMatrix::<f64>::zeros(c, c);
    let mut zero_cols = Vec::new();
    for (k, &j) in order.iter().enumerate() {
        if norms[j] > 0.0 {
            u.set_column(k, &(a.column(j) / norms[j]));
        } else {
            zero_cols.push(k);
        }
        v_sorted.set_column(k, &v.column(j));
    }
    if !zero_cols.is_empty() {
        // Null directions: complete U orthonormally.
        let kept = c - zero_cols.len();
        let q = hstack(&[&u.columns(0, kept).into_owned(), &DMatrix::identity(r, r)]).qr().q();
        for (i, &k) in zero_cols.iter().enumerate() {
            u.set_column(k, &q.column(kept + i));
        }
    }
    Ok(ThinSvd { u, s, v_t: v_sorted.transpose() })
}

fn svd_sorted(m: DMatrix<f64>) -> Result<ThinSvd> {
    let (r, c) = m.shape();
    if r < c {
        let t = svd_sorted(m.transpose())?;
        return Ok(ThinSvd { u: t.v_t.transpose(), s: t.s, v_t: t.u.transpose() });
    }
    if r > c {
        let qr = m.qr();
        let q = qr.q();
        let inner = jacobi_svd(qr.r())?;
        return Ok(ThinSvd { u: q * inner.u, s: inner.s, v_t: inner.v_t });
    }
    jacobi_svd(m)
}

/// Thin SVD. Rectangular inputs are compressed by a Householder QR so the
/// Jacobi sweeps only see a square factor.
pub fn thin_svd(m: &DMatrix<f64>) -> Result<ThinSvd> {
    ensure_finite(m, "matrix")?;
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err(Error::validation("empty matrix"));
    }
    svd_sorted(m.clone())
}

pub fn singular_values(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    Ok(thin_svd(m)?.s.as_slice().to_vec())
}

/// Count of singular values `σ_k > rel_tol · σ_max`; zero for the zero matrix.
pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> Result<usize> {
    if !(rel_tol > 0.0) {
        return Err(Error::validation("rel_tol must be positive"));
    }
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err(Error::validation("numerical_rank of an empty matrix"));
    }
    ensure_finite(m, "matrix")?;
    if m.iter().all(|&v| v == 0.0) {
        return Ok(0);
    }
    Ok(thin_svd(m)?.rank(rel_tol))
}

/// Moore-Penrose pseudoinverse with singular values below `rel_tol · σ_max`
/// discarded. Returns the pseudoinverse and the retained rank.
pub fn pinv(m: &DMatrix<f64>, rel_tol: f64) -> Result<(DMatrix<f64>, usize)> {
    let svd = thin_svd(m)?;
    let k = svd.rank(rel_tol);
    let mut out = DMatrix::zeros(m.ncols(), m.nrows());
    for i in 0..k {
        let vi = svd.v_t.row(i).transpose();
        let ui = svd.u.column(i);
        out += (vi * ui.transpose()) / svd.s[i];
    }
    Ok((out, k))
}

/// `lhs · m†`, computed from the thin SVD of `m` without forming `m†`
/// (which would be as wide as the data for Hankel matrices).
pub fn mul_pinv(lhs: &DMatrix<f64>, m: &DMatrix<f64>, rel_tol: f64) -> Result<(DMatrix<f64>, usize)> {
    if lhs.ncols() != m.ncols() {
        return Err(Error::validation(format!(
            "mul_pinv: lhs has {} columns, matrix has {}",
            lhs.ncols(),
            m.ncols()
        )));
    }
    let svd = thin_svd(m)?;
    let k = svd.rank(rel_tol);
    let v = svd.v_t.rows(0, k).transpose();
    let mut lv = lhs * v;
    for j in 0..k {
        let s = svd.s[j];
        lv.column_mut(j).scale_mut(1.0 / s);
    }
    let u = svd.u.columns(0, k);
    Ok((lv * u.transpose(), k))
}

/// Orthonormal basis of the column space, rank decided at `rel_tol`.
pub fn orth(m: &DMatrix<f64>, rel_tol: f64) -> Result<DMatrix<f64>> {
    if m.iter().all(|&v| v == 0.0) {
        return Ok(DMatrix::zeros(m.nrows(), 0));
    }
    let svd = thin_svd(m)?;
    let k = svd.rank(rel_tol);
    Ok(svd.u.columns(0, k).into_owned())
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Eigenvalues of the symmetric part of `m`, ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut v: Vec<f64> = eig.eigenvalues.iter().cloned().collect();
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

pub fn sym_max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).last().copied().unwrap_or(0.0)
}

pub fn sym_min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).first().copied().unwrap_or(0.0)
}

/// Largest eigenvalue modulus of a square matrix.
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    a.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Eigenvalues as (re, im) pairs.
pub fn eigenvalues(a: &DMatrix<f64>) -> Vec<(f64, f64)> {
    a.complex_eigenvalues().iter().map(|z| (z.re, z.im)).collect()
}

/// Solves `Aᵀ X A − X + Q = 0` through the Kronecker form. Sized for the
/// small state dimensions handled here.
pub fn solve_discrete_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let nn = n * n;
    // vec(AᵀXA) = (Aᵀ ⊗ Aᵀ) vec(X) for column-major vec.
    let at = a.transpose();
    let mut k = DMatrix::<f64>::identity(nn, nn);
    for i in 0..n {
        for j in 0..n {
            let aij = at[(i, j)];
            if aij == 0.0 {
                continue;
            }
            for p in 0..n {
                for r in 0..n {
                    k[(i * n + p, j * n + r)] -= aij * at[(p, r)];
                }
            }
        }
    }
    let rhs = DVector::from_column_slice(q.as_slice());
    let lu = k.full_piv_lu();
    let sol = lu
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("discrete Lyapunov equation is singular".into()))?;
    let x = DMatrix::from_column_slice(n, n, sol.as_slice());
    Ok(symmetrize(&x))
}

/// Symmetric square root factor `V diag(sqrt(max(λ, floor)))` of a PSD matrix.
pub fn psd_sqrt_factor(m: &DMatrix<f64>, rel_floor: f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let floor = (lmax * rel_floor).max(f64::MIN_POSITIVE);
    let mut f = eig.eigenvectors.clone();
    for j in 0..f.ncols() {
        let l = eig.eigenvalues[j].max(floor);
        f.column_mut(j).scale_mut(l.sqrt());
    }
    f
}

pub fn hstack(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks.first().map(|b| b.nrows()).unwrap_or(0);
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut c = 0;
    for b in blocks {
        out.view_mut((0, c), (rows, b.ncols())).copy_from(*b);
        c += b.ncols();
    }
    out
}

pub fn vstack(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let cols = blocks.first().map(|b| b.ncols()).unwrap_or(0);
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut r = 0;
    for b in blocks {
        out.view_mut((r, 0), (b.nrows(), cols)).copy_from(*b);
        r += b.nrows();
    }
    out
}

/// Max absolute entry.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

/// Spectral norm.
pub fn norm2(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    singular_values(m).ok().and_then(|s| s.first().copied()).unwrap_or(f64::NAN)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svd_reconstructs_rank_deficient_input() {
        let m = DMatrix::from_row_slice(
            5,
            3,
            &[
                -0.46600057398779654, 1.01669902936010081, 0.83122796294493750,
                0.14990070876560332, 0.09419698271457813, 0.32294307056562249,
                0.61917147788423266, -0.87088628385894262, -0.43178545675118585,
                -0.37081337453913044, 0.72508800556788700, 0.54381065419000674,
                1.31580741612047980, -0.82533583917092734, 0.51938844514478799,
            ],
        );
        let svd = thin_svd(&m).unwrap();
        let rec = &svd.u * DMatrix::from_diagonal(&svd.s) * &svd.v_t;
        assert!((rec - &m).abs().max() < 1e-12);
        assert_eq!(svd.rank(1e-10), 2);
    }

    #[test]
    fn svd_singular_vectors_of_nearly_singular_triangle() {
        // σ = (0.355, 4.5e-15); U must stay within ε‖M‖/σ₁ of the identity.
        let m = DMatrix::from_row_slice(2, 2, &[0.20623171404202376, 0.2893794369637705, 0.0, 7.760008155309992e-15]);
        let svd = thin_svd(&m).unwrap();
        assert!(svd.u[(1, 0)].abs() < 1e-12, "{}", svd.u);
        let rec = &svd.u * DMatrix::from_diagonal(&svd.s) * &svd.v_t;
        assert!((rec - &m).abs().max() < 1e-15);
    }

    #[test]
    fn svd_of_zero_columns_is_orthonormal() {
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 2.0, 0.0, 0.0, 0.0]);
        let svd = thin_svd(&m).unwrap();
        assert_eq!(svd.s[1], 0.0);
        assert!((svd.u.transpose() * &svd.u - DMatrix::<f64>::identity(2, 2)).abs().max() < 1e-15);
    }

    #[test]
    fn rank_of_identity_and_zero() {
        assert_eq!(numerical_rank(&DMatrix::identity(3, 3), 1e-8).unwrap(), 3);
        assert_eq!(numerical_rank(&DMatrix::zeros(2, 5), 1e-8).unwrap(), 0);
    }

    #[test]
    fn rank_drops_tiny_singular_value() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1e-12]));
        assert_eq!(numerical_rank(&m, 1e-8).unwrap(), 1);
    }

    #[test]
    fn rank_rejects_nan() {
        let mut m = DMatrix::identity(2, 2);
        m[(0, 1)] = f64::NAN;
        assert!(matches!(numerical_rank(&m, 1e-8), Err(Error::Validation(_))));
    }

    #[test]
    fn wide_svd_matches_direct() {
        let m = DMatrix::from_fn(3, 40, |i, j| ((i * 7 + j * 3) % 11) as f64 - 5.0 + 0.1 * j as f64);
        let a = thin_svd(&m).unwrap();
        let b = nalgebra::SVD::new(m.clone(), false, false).singular_values;
        for (x, y) in a.s.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-10 * b[0]);
        }
        let rec = &a.u * DMatrix::from_diagonal(&a.s) * &a.v_t;
        assert!(max_abs(&(rec - m)) < 1e-10);
    }

    #[test]
    fn mul_pinv_matches_pinv() {
        let m = DMatrix::from_fn(4, 30, |i, j| ((i + 1) as f64 * 0.3 * j as f64).sin());
        let lhs = DMatrix::from_fn(2, 30, |i, j| (i as f64 + j as f64 * 0.1).cos());
        let (p, _) = pinv(&m, 1e-10).unwrap();
        let (g, _) = mul_pinv(&lhs, &m, 1e-10).unwrap();
        assert!(max_abs(&(&lhs * p - g)) < 1e-9);
    }

    #[test]
    fn lyapunov_residual() {
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.2, -0.1, 0.7]);
        let q = DMatrix::identity(2, 2);
        let x = solve_discrete_lyapunov(&a, &q).unwrap();
        let res = a.transpose() * &x * &a - &x + q;
        assert!(max_abs(&res) < 1e-12);
    }
}
