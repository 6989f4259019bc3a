//! Data-based realizations.
//!
//! From aligned input/output data the non-minimal state
//! `z(k) = [u(k-ℓ..k-1); Θ̄ y(k-ℓ..k-1)]` is formed, the update
//! `z(k+1) = 𝒜 z(k) + ℬ u(k)`, `y(k) = 𝒞 z(k)` is solved by least squares,
//! and the controllable-and-observable part is extracted.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::lti::{self, StateSpaceModel};
use crate::signals::{self, HankelMatrix, RankReport, Trajectory};

/// Principal-angle threshold for the subspace intersection.
pub const INTERSECTION_COS_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaSelector {
    pub row_indices: Vec<usize>,
    pub total_rows: usize,
}

impl ThetaSelector {
    pub fn new(row_indices: Vec<usize>, total_rows: usize) -> Result<Self> {
        let mut sorted = row_indices.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != row_indices.len() {
            return Err(Error::validation("theta rows must be distinct"));
        }
        if sorted.iter().any(|&r| r >= total_rows) {
            return Err(Error::validation("theta row out of range"));
        }
        Ok(Self { row_indices: sorted, total_rows })
    }

    pub fn order(&self) -> usize {
        self.row_indices.len()
    }

    /// The `n × pℓ` 0/1 selection matrix Θ̄.
    pub fn matrix(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.order(), self.total_rows);
        for (i, &r) in self.row_indices.iter().enumerate() {
            m[(i, r)] = 1.0;
        }
        m
    }
}

/// Picks `n` independent rows by pivoted Gram-Schmidt on the rows of the
/// output Hankel: at each step the row with the largest residual norm wins,
/// ties going to the lowest index.
pub fn select_theta(y_hankel: &HankelMatrix, n: usize, rel_tol: f64) -> Result<ThetaSelector> {
    select_rows(&y_hankel.matrix, n, rel_tol)
}

pub(crate) fn select_rows(m: &DMatrix<f64>, n: usize, rel_tol: f64) -> Result<ThetaSelector> {
    let rows = m.nrows();
    if n == 0 {
        return Err(Error::validation("order must be >= 1"));
    }
    if n > rows {
        return Err(Error::Informativity {
            context: format!("theta selection: only {rows} output rows for order {n}; use a larger lag"),
            achieved: rows,
            required: n,
        });
    }
    let mut work: Vec<DVector<f64>> = m.row_iter().map(|r| r.transpose()).collect();
    let scale = work.iter().map(|r| r.norm()).fold(0.0, f64::max);
    let mut chosen = Vec::with_capacity(n);
    let mut used = vec![false; rows];
    for _ in 0..n {
        let mut best: Option<(usize, f64)> = None;
        for (i, r) in work.iter().enumerate() {
            if used[i] {
                continue;
            }
            let norm = r.norm();
            if best.map_or(true, |(_, b)| norm > b) {
                best = Some((i, norm));
            }
        }
        let (idx, norm) = best.expect("unused row exists");
        if !(norm > rel_tol * scale) || scale == 0.0 {
            return Err(Error::Informativity {
                context: "theta selection: output Hankel rank below order; collect longer or richer data".into(),
                achieved: chosen.len(),
                required: n,
            });
        }
        used[idx] = true;
        chosen.push(idx);
        let q = &work[idx] / norm;
        for (i, r) in work.iter_mut().enumerate() {
            if !used[i] {
                let c = q.dot(r);
                r.axpy(-c, &q, 1.0);
            }
        }
    }
    let theta = ThetaSelector::new(chosen, rows)?;
    let sub = DMatrix::from_fn(n, m.ncols(), |i, j| m[(theta.row_indices[i], j)]);
    let r = linalg::numerical_rank(&sub, rel_tol)?;
    if r != n {
        return Err(Error::Informativity {
            context: "theta selection: selected rows are rank deficient".into(),
            achieved: r,
            required: n,
        });
    }
    Ok(theta)
}

/// `z(k)` for every `k` whose past window exists; the result has
/// `len(u) - ℓ` samples and starts at `u.start_index() + ℓ`.
pub fn build_z_trajectory(
    u: &Trajectory,
    y: &Trajectory,
    theta: &ThetaSelector,
    lag: usize,
) -> Result<Trajectory> {
    u.check_aligned(y, "build_z_trajectory")?;
    if lag == 0 {
        return Err(Error::validation("lag must be >= 1"));
    }
    if theta.total_rows != y.channels() * lag {
        return Err(Error::validation(format!(
            "theta addresses {} rows, expected p·ℓ = {}",
            theta.total_rows,
            y.channels() * lag
        )));
    }
    if u.len() <= lag {
        return Err(Error::Range(format!(
            "z needs more than {lag} samples, got {}",
            u.len()
        )));
    }
    let cols = u.len() - lag;
    let hu = signals::build_hankel(u, u.start_index(), lag, cols)?;
    let hy = signals::build_hankel(y, y.start_index(), lag, cols)?;
    let m = u.channels();
    let n = theta.order();
    let mut z = DMatrix::zeros(m * lag + n, cols);
    z.view_mut((0, 0), (m * lag, cols)).copy_from(&hu.matrix);
    for (i, &r) in theta.row_indices.iter().enumerate() {
        z.row_mut(m * lag + i).copy_from(&hy.matrix.row(r));
    }
    Trajectory::new(z, u.dt(), u.start_index() + lag as i64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonMinimalRealization {
    #[serde(with = "crate::io::matrix_rows")]
    pub a: DMatrix<f64>,
    #[serde(with = "crate::io::matrix_rows")]
    pub b: DMatrix<f64>,
    #[serde(with = "crate::io::matrix_rows")]
    pub c: DMatrix<f64>,
    pub lag: usize,
    pub order: usize,
    pub theta: ThetaSelector,
}

/// Least-squares fit diagnostics of the non-minimal realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub rank_condition: RankReport,
    pub persistency_of_excitation: Option<RankReport>,
    pub theta_rows: Vec<usize>,
    pub h_rank: usize,
    pub h_required: usize,
    pub state_residual: f64,
    pub output_residual: f64,
}

/// Lemma-1 style identification of `(𝒜, ℬ, 𝒞)`.
pub fn data_based_nonminimal(
    u: &Trajectory,
    y: &Trajectory,
    lag: usize,
    order: usize,
    rel_tol: f64,
) -> Result<(NonMinimalRealization, FitDiagnostics)> {
    u.check_aligned(y, "data_based_nonminimal")?;
    if order == 0 {
        return Err(Error::validation("order must be >= 1"));
    }
    let m = u.channels();
    let rc = signals::rank_condition(u, y, lag, order, rel_tol)?;
    if !rc.holds {
        return Err(Error::Informativity {
            context: format!("rank condition with lag {lag}, order {order}"),
            achieved: rc.achieved,
            required: rc.required,
        });
    }
    let pe_order = lag + order + 1;
    let pe = signals::is_persistently_exciting(u, pe_order, rel_tol).ok();

    let cols = u.len() - lag;
    let y_hankel = signals::build_hankel(y, y.start_index(), lag, cols)?;
    let theta = select_theta(&y_hankel, order, rel_tol)?;
    let z = build_z_trajectory(u, y, &theta, lag)?;
    let zd = z.data();
    let k = cols - 1;
    if k == 0 {
        return Err(Error::Range("not enough samples for a one-step fit".into()));
    }
    let dim = m * lag + order;
    let u_now = u.data().columns(lag, k).into_owned();
    let y_now = y.data().columns(lag, k).into_owned();
    let z_now = zd.columns(0, k).into_owned();
    let z_next = zd.columns(1, k).into_owned();
    let h = linalg::vstack(&[&u_now, &z_now]);
    let h_required = m * (lag + 1) + order;
    let (g, h_rank) = linalg::mul_pinv(&z_next, &h, rel_tol)?;
    if h_rank != h_required {
        return Err(Error::Informativity {
            context: "data matrix H(u, z)".into(),
            achieved: h_rank,
            required: h_required,
        });
    }
    let b = g.columns(0, m).into_owned();
    let a = g.columns(m, dim).into_owned();
    let (c, _) = linalg::mul_pinv(&y_now, &z_now, rel_tol)?;

    let state_residual = linalg::max_abs(&(&z_next - &a * &z_now - &b * &u_now));
    let output_residual = linalg::max_abs(&(&y_now - &c * &z_now));
    for (mat, name) in [(&a, "𝒜"), (&b, "ℬ"), (&c, "𝒞")] {
        linalg::ensure_finite(mat, name)?;
    }
    let diag = FitDiagnostics {
        rank_condition: rc,
        persistency_of_excitation: pe,
        theta_rows: theta.row_indices.clone(),
        h_rank,
        h_required,
        state_residual,
        output_residual,
    };
    Ok((
        NonMinimalRealization { a, b, c, lag, order, theta },
        diag,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimalRealization {
    #[serde(with = "crate::io::matrix_rows")]
    pub a: DMatrix<f64>,
    #[serde(with = "crate::io::matrix_rows")]
    pub b: DMatrix<f64>,
    #[serde(with = "crate::io::matrix_rows")]
    pub c: DMatrix<f64>,
    #[serde(with = "crate::io::matrix_rows")]
    pub t_co: DMatrix<f64>,
}

impl MinimalRealization {
    /// Wraps matrices known to be minimal (identity basis).
    pub fn from_matrices(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        StateSpaceModel::discrete(a.clone(), b.clone(), c.clone(), 1.0)?;
        Ok(Self { a, b, c, t_co: DMatrix::identity(n, n) })
    }

    pub fn order(&self) -> usize {
        self.a.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.c.nrows()
    }

    pub fn to_model(&self, dt: f64) -> Result<StateSpaceModel> {
        StateSpaceModel::discrete(self.a.clone(), self.b.clone(), self.c.clone(), dt)
    }

    pub fn markov_parameters(&self, count: usize) -> Result<Vec<DMatrix<f64>>> {
        lti::markov_parameters(&self.to_model(1.0)?, count)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReductionDiagnostics {
    pub controllable_dim: usize,
    pub observable_dim: usize,
    pub minimal_order: usize,
    /// Principal cosines between the two subspaces, decreasing.
    pub principal_cosines: Vec<f64>,
    /// Cosines above `1 - INTERSECTION_COS_TOL`.
    pub intersection_dim: usize,
    pub result_controllable: bool,
    pub result_observable: bool,
}

/// Controllable-and-observable part of `(a, b, c)`.
///
/// `observable_cap` bounds the dimension of the observable subspace; for
/// data-based realizations it is the true order, since `x = T̂ z` makes the
/// observable part at most that large.
pub fn kalman_minimal(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    rel_tol: f64,
    observable_cap: Option<usize>,
) -> Result<(MinimalRealization, ReductionDiagnostics)> {
    let reach = lti::krylov_basis(a, b, rel_tol, None)?;
    let obs = lti::krylov_basis(&a.transpose(), &c.transpose(), rel_tol, observable_cap)?;
    if reach.ncols() == 0 || obs.ncols() == 0 {
        return Err(Error::Reduction(format!(
            "degenerate realization: controllable dim {}, observable dim {}",
            reach.ncols(),
            obs.ncols()
        )));
    }
    let cross = reach.transpose() * &obs;
    let svd = linalg::thin_svd(&cross)?;
    let cosines: Vec<f64> = svd.s.iter().copied().collect();
    // Project out the unobservable part, then restrict to what is reachable.
    let ao = obs.transpose() * a * &obs;
    let bo = obs.transpose() * b;
    let v = lti::krylov_basis(&ao, &bo, rel_tol, None)?;
    let k = v.ncols();
    if k == 0 {
        return Err(Error::Reduction(
            "controllable and observable subspaces intersect trivially".into(),
        ));
    }
    let t = &obs * v;
    let ah = t.transpose() * a * &t;
    let bh = t.transpose() * b;
    let ch = c * &t;
    let model = StateSpaceModel::discrete(ah.clone(), bh.clone(), ch.clone(), 1.0)?;
    let sc = lti::structural_checks(&model, rel_tol)?;
    let diag = ReductionDiagnostics {
        controllable_dim: reach.ncols(),
        observable_dim: obs.ncols(),
        minimal_order: k,
        intersection_dim: cosines.iter().filter(|&&s| s > 1.0 - INTERSECTION_COS_TOL).count(),
        principal_cosines: cosines,
        result_controllable: sc.controllable,
        result_observable: sc.observable,
    };
    Ok((MinimalRealization { a: ah, b: bh, c: ch, t_co: t }, diag))
}

pub fn minimal_realization(
    nm: &NonMinimalRealization,
    rel_tol: f64,
) -> Result<(MinimalRealization, ReductionDiagnostics)> {
    kalman_minimal(&nm.a, &nm.b, &nm.c, rel_tol, Some(nm.order))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentificationDiagnostics {
    pub lag: usize,
    pub order: usize,
    pub fit: FitDiagnostics,
    pub reduction: ReductionDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Identification {
    pub nonminimal: NonMinimalRealization,
    pub minimal: MinimalRealization,
    pub diagnostics: IdentificationDiagnostics,
}

/// Full pipeline: non-minimal fit followed by reduction.
pub fn identify(
    u: &Trajectory,
    y: &Trajectory,
    lag: usize,
    order: usize,
    rel_tol: f64,
) -> Result<Identification> {
    let (nm, fit) = data_based_nonminimal(u, y, lag, order, rel_tol)?;
    let (minimal, reduction) = minimal_realization(&nm, rel_tol)?;
    Ok(Identification {
        diagnostics: IdentificationDiagnostics { lag, order, fit, reduction },
        nonminimal: nm,
        minimal,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lti::{drss, random_input, simulate};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn hankel_of(rows: DMatrix<f64>) -> HankelMatrix {
        HankelMatrix { matrix: rows, block_rows: 1, source_start: 0 }
    }

    #[test]
    fn theta_on_identity() {
        let t = select_theta(&hankel_of(DMatrix::identity(4, 4)), 2, 1e-8).unwrap();
        assert_eq!(t.row_indices, vec![0, 1]);
        assert_eq!(t.matrix(), DMatrix::from_row_slice(2, 4, &[1., 0., 0., 0., 0., 1., 0., 0.]));
    }

    #[test]
    fn theta_skips_duplicate() {
        let r = [1.0, 2.0, 0.5, -1.0, 0.3];
        let s = [0.0, 1.0, -1.0, 2.0, 1.0];
        let t = [3.0, 0.0, 1.0, 0.0, -2.0];
        let mut m = DMatrix::zeros(4, 5);
        for j in 0..5 {
            m[(0, j)] = r[j];
            m[(1, j)] = r[j];
            m[(2, j)] = s[j];
            m[(3, j)] = t[j];
        }
        let sel = select_theta(&hankel_of(m), 3, 1e-8).unwrap();
        assert_eq!(sel.row_indices.len(), 3);
        assert!(!(sel.row_indices.contains(&0) && sel.row_indices.contains(&1)));
        assert!(sel.row_indices.contains(&2) && sel.row_indices.contains(&3));
    }

    #[test]
    fn theta_rank_one_fails() {
        let m = DMatrix::from_fn(3, 6, |i, j| (i + 1) as f64 * (j as f64 + 1.0));
        assert!(matches!(
            select_theta(&hankel_of(m), 2, 1e-8),
            Err(Error::Informativity { achieved: 1, required: 2, .. })
        ));
    }

    #[test]
    fn z_stacking_lag_one() {
        let u = Trajectory::new(DMatrix::from_fn(1, 5, |_, k| k as f64), 1.0, 0).unwrap();
        let y = Trajectory::new(DMatrix::from_fn(2, 5, |i, k| (10 * (i + 1) + k) as f64), 1.0, 0).unwrap();
        let theta = ThetaSelector::new(vec![0, 1], 2).unwrap();
        let z = build_z_trajectory(&u, &y, &theta, 1).unwrap();
        assert_eq!(z.len(), 4);
        assert_eq!(z.channels(), 3);
        for c in 0..4 {
            assert_eq!(z.data()[(0, c)], u.data()[(0, c)]);
            assert_eq!(z.data()[(1, c)], y.data()[(0, c)]);
            assert_eq!(z.data()[(2, c)], y.data()[(1, c)]);
        }
    }

    #[test]
    fn z_constant_for_constant_data() {
        let u = Trajectory::new(DMatrix::from_element(2, 8, 1.5), 1.0, 0).unwrap();
        let y = Trajectory::new(DMatrix::from_element(2, 8, -0.5), 1.0, 0).unwrap();
        let theta = ThetaSelector::new(vec![0, 1, 3], 4).unwrap();
        let z = build_z_trajectory(&u, &y, &theta, 2).unwrap();
        for c in 1..z.len() {
            assert_eq!(z.data().column(c), z.data().column(0));
        }
    }

    fn second_order_data(seed: u64, len: usize) -> (StateSpaceModel, Trajectory, Trajectory) {
        let m = StateSpaceModel::discrete(
            DMatrix::from_row_slice(2, 2, &[0.6, 0.3, -0.2, 0.5]),
            DMatrix::from_row_slice(2, 1, &[1.0, 0.5]),
            DMatrix::from_row_slice(1, 2, &[1.0, -0.4]),
            1.0,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = random_input(&mut rng, 1, len, 1.0);
        let x0 = DVector::from_vec(vec![0.3, -0.1]);
        let y = simulate(&m, &x0, &u).unwrap().y;
        (m, u, y)
    }

    #[test]
    fn second_order_siso_markov() {
        let (m, u, y) = second_order_data(1, 120);
        let truth = lti::markov_parameters(&m, 20).unwrap();
        let (nm, fit) = data_based_nonminimal(&u, &y, 2, 2, 1e-8).unwrap();
        let nm_model = StateSpaceModel::discrete(nm.a.clone(), nm.b.clone(), nm.c.clone(), 1.0).unwrap();
        let got = lti::markov_parameters(&nm_model, 20).unwrap();
        assert!(lti::markov_distance(&truth, &got) < 1e-8);
        assert!(fit.state_residual < 1e-8, "{}", fit.state_residual);
        assert!(fit.output_residual < 1e-8);
    }

    #[test]
    fn zero_system_is_not_informative() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let u = random_input(&mut rng, 1, 60, 1.0);
        let y = Trajectory::new(DMatrix::zeros(1, 60), 1.0, 0).unwrap();
        assert!(matches!(
            data_based_nonminimal(&u, &y, 1, 1, 1e-8),
            Err(Error::Informativity { .. })
        ));
    }

    #[test]
    fn minimal_of_minimal_is_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = drss(&mut rng, 3, 1, 1, 0.9);
        let (mr, d) = kalman_minimal(&m.a, &m.b, &m.c, 1e-8, None).unwrap();
        assert_eq!(d.minimal_order, 3);
        let got = mr.markov_parameters(15).unwrap();
        assert!(lti::markov_distance(&lti::markov_parameters(&m, 15).unwrap(), &got) < 1e-12);
        let tt = mr.t_co.transpose() * &mr.t_co;
        assert!(linalg::max_abs(&(tt - DMatrix::identity(3, 3))) < 1e-10);
    }

    #[test]
    fn unreachable_block_is_removed() {
        let a = DMatrix::from_row_slice(3, 3, &[0.5, 0.0, 0.0, 0.0, -0.3, 0.0, 0.0, 0.0, 0.8]);
        let b = DMatrix::from_row_slice(3, 1, &[1.0, 1.0, 0.0]);
        let c = DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 1.0]);
        let (mr, _) = kalman_minimal(&a, &b, &c, 1e-8, None).unwrap();
        assert_eq!(mr.order(), 2);
        let mut eig: Vec<f64> = linalg::eigenvalues(&mr.a).iter().map(|z| z.0).collect();
        eig.sort_by(|x, y| x.total_cmp(y));
        assert!((eig[0] + 0.3).abs() < 1e-10 && (eig[1] - 0.5).abs() < 1e-10);
    }

    #[test]
    fn identify_random_mimo() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = drss(&mut rng, 4, 2, 2, 0.9);
        let lag = lti::structural_checks(&m, 1e-8).unwrap().lag.unwrap();
        let u = random_input(&mut rng, 2, 40 * (lag + 4), 1.0);
        let x0 = DVector::from_fn(4, |_, _| 0.5);
        let y = simulate(&m, &x0, &u).unwrap().y;
        let id = identify(&u, &y, lag, 4, 1e-8).unwrap();
        assert_eq!(id.minimal.order(), 4);
        assert!(id.diagnostics.reduction.result_controllable);
        assert!(id.diagnostics.reduction.result_observable);
        let err = lti::markov_distance(
            &lti::markov_parameters(&m, 20).unwrap(),
            &id.minimal.markov_parameters(20).unwrap(),
        );
        assert!(err < 1e-6, "{err}");
        let again = identify(&u, &y, lag, 4, 1e-8).unwrap();
        assert_eq!(again, id);
    }

    #[test]
    fn rank_condition_rejects_overstated_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let m = drss(&mut rng, 4, 2, 2, 0.9);
        let u = random_input(&mut rng, 2, 200, 1.0);
        let y = simulate(&m, &DVector::from_element(4, 1.0), &u).unwrap().y;
        assert!(signals::rank_condition(&u, &y, 2, 4, 1e-8).unwrap().holds);
        let r = signals::rank_condition(&u, &y, 2, 6, 1e-8).unwrap();
        assert!(!r.holds);
        assert_eq!(r.achieved, 10);
    }
}
