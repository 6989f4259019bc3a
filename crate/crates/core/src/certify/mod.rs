//! QSR supply rates, channel-wise passivity indices and dissipativity
//! certificates.
//!
//! A system is certified when a storage matrix `P ⪰ 0` makes
//!
//! ```text
//! [ AᵀPA − P − CᵀQC   AᵀPB − CᵀS ]
//! [ (·)ᵀ              BᵀPB − R   ]  ⪯ 0.
//! ```
//!
//! LMIs are solved in balanced coordinates when the model is Schur stable;
//! the storage matrix is mapped back and re-verified in the caller's
//! coordinates.

pub mod lmi;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::lti::{self, StateSpaceModel};
use crate::realization::MinimalRealization;
use crate::signals::Trajectory;
use lmi::{LmiBlock, LmiProblem, SolverOptions, SymVar};

/// Accepted relative residual for non-strict LMIs.
pub const NONSTRICT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupplyRate {
    #[serde(with = "crate::io::matrix_rows")]
    pub q: DMatrix<f64>,
    #[serde(with = "crate::io::matrix_rows")]
    pub s: DMatrix<f64>,
    #[serde(with = "crate::io::matrix_rows")]
    pub r: DMatrix<f64>,
}

impl SupplyRate {
    pub fn new(q: DMatrix<f64>, s: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        let p = q.nrows();
        let m = r.nrows();
        if q.ncols() != p || r.ncols() != m || s.shape() != (p, m) {
            return Err(Error::validation(format!(
                "supply dimensions: Q {:?}, S {:?}, R {:?}",
                q.shape(),
                s.shape(),
                r.shape()
            )));
        }
        for (mat, name) in [(&q, "Q"), (&r, "R")] {
            linalg::ensure_finite(mat, name)?;
            if linalg::max_abs(&(mat - mat.transpose())) > 1e-12 * (1.0 + linalg::max_abs(mat)) {
                return Err(Error::validation(format!("{name} is not symmetric")));
            }
        }
        linalg::ensure_finite(&s, "S")?;
        Ok(Self { q: linalg::symmetrize(&q), s, r: linalg::symmetrize(&r) })
    }

    /// `uᵀy` (Q = 0, S = ½I, R = 0).
    pub fn passivity(m: usize) -> Self {
        Self {
            q: DMatrix::zeros(m, m),
            s: DMatrix::identity(m, m) * 0.5,
            r: DMatrix::zeros(m, m),
        }
    }

    pub fn outputs(&self) -> usize {
        self.q.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.r.nrows()
    }

    /// `w(u, y) = yᵀQy + 2yᵀSu + uᵀRu`.
    pub fn eval(&self, u: &DVector<f64>, y: &DVector<f64>) -> f64 {
        (y.transpose() * &self.q * y)[0] + 2.0 * (y.transpose() * &self.s * u)[0] + (u.transpose() * &self.r * u)[0]
    }

    fn check_model(&self, b: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<()> {
        if self.inputs() != b.ncols() || self.outputs() != c.nrows() {
            return Err(Error::validation(format!(
                "supply is {}x{} (outputs x inputs), model has {} outputs and {} inputs",
                self.outputs(),
                self.inputs(),
                c.nrows(),
                b.ncols()
            )));
        }
        Ok(())
    }
}

/// Channel-wise output (`rho`) and input (`nu`) passivity indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassivityIndices {
    pub rho: Vec<f64>,
    pub nu: Vec<f64>,
}

impl PassivityIndices {
    pub fn new(rho: Vec<f64>, nu: Vec<f64>) -> Result<Self> {
        if rho.len() != nu.len() || rho.is_empty() {
            return Err(Error::validation("rho and nu need the same nonzero length"));
        }
        if rho.iter().chain(&nu).any(|v| !v.is_finite()) {
            return Err(Error::validation("passivity indices must be finite"));
        }
        Ok(Self { rho, nu })
    }

    pub fn channels(&self) -> usize {
        self.rho.len()
    }
}

/// `Q = −diag(ρ)`, `S = ½I`, `R = −diag(ν)`.
pub fn supply_from_indices(idx: &PassivityIndices) -> Result<SupplyRate> {
    if idx.rho.len() != idx.nu.len() {
        return Err(Error::validation("channel-wise indices need m = p"));
    }
    let m = idx.rho.len();
    SupplyRate::new(
        -DMatrix::from_diagonal(&DVector::from_column_slice(&idx.rho)),
        DMatrix::identity(m, m) * 0.5,
        -DMatrix::from_diagonal(&DVector::from_column_slice(&idx.nu)),
    )
}

/// The QSR dissipation block for a given storage matrix.
pub fn qsr_lmi(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    supply: &SupplyRate,
    p: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n || c.ncols() != n || p.shape() != (n, n) {
        return Err(Error::validation("qsr_lmi: inconsistent dimensions"));
    }
    supply.check_model(b, c)?;
    let m = b.ncols();
    let at_p = a.transpose() * p;
    let tl = &at_p * a - p - c.transpose() * &supply.q * c;
    let tr = &at_p * b - c.transpose() * &supply.s;
    let br = b.transpose() * p * b - &supply.r;
    let mut out = DMatrix::zeros(n + m, n + m);
    out.view_mut((0, 0), (n, n)).copy_from(&tl);
    out.view_mut((0, n), (n, m)).copy_from(&tr);
    out.view_mut((n, 0), (m, n)).copy_from(&tr.transpose());
    out.view_mut((n, n), (m, m)).copy_from(&br);
    Ok(out)
}

/// Storage-dependent part of the QSR block, linear in `p`.
pub(crate) fn storage_part(a: &DMatrix<f64>, b: &DMatrix<f64>, p: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let m = b.ncols();
    let at_p = a.transpose() * p;
    let mut out = DMatrix::zeros(n + m, n + m);
    out.view_mut((0, 0), (n, n)).copy_from(&(&at_p * a - p));
    let tr = &at_p * b;
    out.view_mut((0, n), (n, m)).copy_from(&tr);
    out.view_mut((n, 0), (m, n)).copy_from(&tr.transpose());
    out.view_mut((n, n), (m, m)).copy_from(&(b.transpose() * p * b));
    out
}

/// QSR block with the storage matrix as a decision variable and a fixed supply.
pub fn qsr_block(
    label: impl Into<String>,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    supply: &SupplyRate,
    p: &SymVar,
) -> Result<LmiBlock> {
    let n = a.nrows();
    let m = b.ncols();
    let mut blk = LmiBlock::new(label, n + m);
    blk.add_constant(&qsr_lmi(a, b, c, supply, &DMatrix::zeros(n, n))?);
    blk.add_sym(p, |e| storage_part(a, b, e));
    Ok(blk)
}

/// QSR block with channel-wise indices as decision variables
/// (`Q = −diag(ρ)`, `S = ½I`, `R = −diag(ν)`).
pub fn indexed_qsr_block(
    label: impl Into<String>,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    p: &SymVar,
    rho: &[usize],
    nu: &[usize],
) -> LmiBlock {
    let n = a.nrows();
    let m = b.ncols();
    let mut blk = LmiBlock::new(label, n + m);
    let mut cs = DMatrix::zeros(n + m, n + m);
    let half_ct = c.transpose() * 0.5;
    cs.view_mut((0, n), (n, m)).copy_from(&(-&half_ct));
    cs.view_mut((n, 0), (m, n)).copy_from(&(-half_ct.transpose()));
    blk.add_constant(&cs);
    blk.add_sym(p, |e| storage_part(a, b, e));
    for j in 0..m {
        let cj = c.row(j);
        let mut f = DMatrix::zeros(n + m, n + m);
        f.view_mut((0, 0), (n, n)).copy_from(&(cj.transpose() * cj));
        blk.add_term(rho[j], &f);
        let mut g = DMatrix::zeros(n + m, n + m);
        g[(n + j, n + j)] = 1.0;
        blk.add_term(nu[j], &g);
    }
    blk
}

/// Balancing similarity `(T, T⁻¹)` for a Schur-stable realization, `x = T x̃`.
/// `None` when the model is not stable or the Gramians are degenerate.
pub fn balancing_transform(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
    let n = a.nrows();
    if n == 0 || linalg::spectral_radius(a) >= 1.0 - 1e-9 {
        return None;
    }
    let wc = linalg::solve_discrete_lyapunov(&a.transpose(), &(b * b.transpose())).ok()?;
    let wo = linalg::solve_discrete_lyapunov(a, &(c.transpose() * c)).ok()?;
    let lc = linalg::psd_sqrt_factor(&wc, 1e-14);
    let lo = linalg::psd_sqrt_factor(&wo, 1e-14);
    let svd = linalg::thin_svd(&(lo.transpose() * &lc)).ok()?;
    let smax = svd.s[0];
    if !(smax > 0.0) || svd.s[n - 1] <= 1e-12 * smax {
        return None;
    }
    let inv_sqrt = DMatrix::from_diagonal(&svd.s.map(|s| 1.0 / s.sqrt()));
    let t = &lc * svd.v_t.transpose() * &inv_sqrt;
    let t_inv = &inv_sqrt * svd.u.transpose() * lo.transpose();
    let check = &t_inv * &t - DMatrix::<f64>::identity(n, n);
    if !(linalg::max_abs(&check) < 1e-6) {
        return None;
    }
    Some((t, t_inv))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DissipativityCertificate {
    #[serde(rename = "P", with = "crate::io::matrix_rows")]
    pub p: DMatrix<f64>,
    pub supply: SupplyRate,
    /// Largest eigenvalue of the QSR block at `P`.
    pub lmi_residual: f64,
    pub margin: f64,
    pub strict: bool,
    pub iterations: usize,
}

/// Independent check of a certificate against `(A, B, C)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateCheck {
    pub lmi_max_eigenvalue: f64,
    pub lmi_norm: f64,
    pub p_min_eigenvalue: f64,
    pub p_norm: f64,
    pub ok: bool,
}

pub fn check_certificate(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    p: &DMatrix<f64>,
    supply: &SupplyRate,
    tol: f64,
) -> Result<CertificateCheck> {
    let blk = qsr_lmi(a, b, c, supply, p)?;
    let e = linalg::sym_eigenvalues(&blk);
    let lmax = e.last().copied().unwrap_or(0.0);
    let lnorm = e.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    let pe = linalg::sym_eigenvalues(p);
    let pmin = pe.first().copied().unwrap_or(0.0);
    let pnorm = pe.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    let sym_ok = linalg::max_abs(&(p - p.transpose())) <= 1e-12 * (1.0 + pnorm);
    Ok(CertificateCheck {
        lmi_max_eigenvalue: lmax,
        lmi_norm: lnorm,
        p_min_eigenvalue: pmin,
        p_norm: pnorm,
        ok: sym_ok && lmax <= tol * (1.0 + lnorm) && pmin >= -1e-10 * pnorm.max(f64::MIN_POSITIVE),
    })
}

fn solve_storage(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    supply: &SupplyRate,
    margin: f64,
    opts: &SolverOptions,
) -> Result<(DMatrix<f64>, usize)> {
    let n = a.nrows();
    let (t, t_inv) = balancing_transform(a, b, c)
        .unwrap_or_else(|| (DMatrix::identity(n, n), DMatrix::identity(n, n)));
    let ab = &t_inv * a * &t;
    let bb = &t_inv * b;
    let cb = c * &t;
    let mut prob = LmiProblem::new();
    let pv = prob.add_symmetric(n);
    let mut blk = qsr_block("dissipation", &ab, &bb, &cb, supply, &pv)?;
    blk.margin = margin;
    prob.add_block(blk);
    let mut pos = LmiBlock::new("P >= 0", n);
    pos.add_sym(&pv, |e| -e);
    prob.add_block(pos);
    let sol = lmi::solve(&prob, opts)?;
    let pb = pv.value(&sol.x);
    let p = linalg::symmetrize(&(t_inv.transpose() * pb * &t_inv));
    Ok((p, sol.iterations))
}

/// Certifies QSR-dissipativity of `(A, B, C)` with the given supply; a
/// positive `margin` asks for a strictly negative block.
pub fn certify_matrices(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    supply: &SupplyRate,
    margin: f64,
) -> Result<DissipativityCertificate> {
    supply.check_model(b, c)?;
    let (p, iterations) = solve_storage(a, b, c, supply, margin, &SolverOptions::default())?;
    let chk = check_certificate(a, b, c, &p, supply, NONSTRICT_TOL)?;
    if !chk.ok {
        return Err(lmi::LmiError::VerificationFailed {
            block: "dissipation (original coordinates)".into(),
            residual: chk.lmi_max_eigenvalue,
        }
        .into());
    }
    Ok(DissipativityCertificate {
        p,
        supply: supply.clone(),
        lmi_residual: chk.lmi_max_eigenvalue,
        margin,
        strict: margin > 0.0 && chk.lmi_max_eigenvalue < 0.0,
        iterations,
    })
}

/// Data-based certification of an identified minimal realization.
pub fn certify_qsr(
    model: &MinimalRealization,
    supply: &SupplyRate,
    margin: f64,
) -> Result<DissipativityCertificate> {
    certify_matrices(&model.a, &model.b, &model.c, supply, margin)
}

/// Normalized feasibility slack of the QSR problem (negative: strictly
/// feasible, positive: infeasible). Useful to judge borderline verdicts.
pub fn qsr_feasibility_slack(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    supply: &SupplyRate,
) -> Result<f64> {
    supply.check_model(b, c)?;
    let n = a.nrows();
    let (t, t_inv) = balancing_transform(a, b, c)
        .unwrap_or_else(|| (DMatrix::identity(n, n), DMatrix::identity(n, n)));
    let mut prob = LmiProblem::new();
    let pv = prob.add_symmetric(n);
    prob.add_block(qsr_block("dissipation", &(&t_inv * a * &t), &(&t_inv * b), &(c * &t), supply, &pv)?);
    let mut pos = LmiBlock::new("P >= 0", n);
    pos.add_sym(&pv, |e| -e);
    prob.add_block(pos);
    Ok(lmi::feasibility_slack(&prob, &SolverOptions::default())?.0)
}

/// Largest `V(x(k+1)) − V(x(k)) − w(u(k), y(k))` along a simulated run.
pub fn verify_dissipation_on_trajectory(
    model: &StateSpaceModel,
    p: &DMatrix<f64>,
    supply: &SupplyRate,
    x0: &DVector<f64>,
    u: &Trajectory,
) -> Result<f64> {
    supply.check_model(&model.b, &model.c)?;
    if p.shape() != (model.order(), model.order()) {
        return Err(Error::validation("storage matrix has wrong size"));
    }
    let sim = lti::simulate(model, x0, u)?;
    let x = sim.x.data();
    let y = sim.y.data();
    let v = |k: usize| {
        let xk = x.column(k);
        (xk.transpose() * p * xk)[0]
    };
    let mut worst = f64::NEG_INFINITY;
    let mut v_now = v(0);
    for k in 0..u.len() {
        let v_next = v(k + 1);
        let w = supply.eval(&u.data().column(k).into_owned(), &y.column(k).into_owned());
        worst = worst.max(v_next - v_now - w);
        v_now = v_next;
    }
    Ok(worst)
}
