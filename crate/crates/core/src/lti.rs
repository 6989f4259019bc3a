//! State-space models with an optional constant offset, exact simulation,
//! zero-order-hold sampling, equilibria and Krylov-based structural tests.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::signals::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeDomain {
    Continuous,
    Discrete,
}

/// `x⁺ = A x + B u + d`, `y = C x` (or `ẋ = …` in continuous time).
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: Option<DVector<f64>>,
    pub time_domain: TimeDomain,
    pub dt: Option<f64>,
}

impl StateSpaceModel {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: Option<DVector<f64>>,
        time_domain: TimeDomain,
        dt: Option<f64>,
    ) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::validation(format!("A must be square, got {}x{}", n, a.ncols())));
        }
        if b.nrows() != n {
            return Err(Error::validation(format!("B has {} rows, expected {n}", b.nrows())));
        }
        if c.ncols() != n {
            return Err(Error::validation(format!("C has {} columns, expected {n}", c.ncols())));
        }
        if let Some(d) = &d {
            if d.len() != n {
                return Err(Error::validation(format!("offset has length {}, expected {n}", d.len())));
            }
            if d.iter().any(|v| !v.is_finite()) {
                return Err(Error::validation("offset contains non-finite entries"));
            }
        }
        linalg::ensure_finite(&a, "A")?;
        linalg::ensure_finite(&b, "B")?;
        linalg::ensure_finite(&c, "C")?;
        match time_domain {
            TimeDomain::Discrete => match dt {
                Some(t) if t > 0.0 && t.is_finite() => {}
                _ => return Err(Error::validation("discrete model needs dt > 0")),
            },
            TimeDomain::Continuous => {
                if dt.is_some() {
                    return Err(Error::validation("continuous model carries no dt"));
                }
            }
        }
        Ok(Self { a, b, c, d, time_domain, dt })
    }

    /// Discrete model without offset.
    pub fn discrete(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, dt: f64) -> Result<Self> {
        Self::new(a, b, c, None, TimeDomain::Discrete, Some(dt))
    }

    pub fn continuous(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: Option<DVector<f64>>,
    ) -> Result<Self> {
        Self::new(a, b, c, d, TimeDomain::Continuous, None)
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

    pub fn offset(&self) -> DVector<f64> {
        self.d.clone().unwrap_or_else(|| DVector::zeros(self.order()))
    }

    /// Same model with the offset dropped (deviation dynamics).
    pub fn linear_part(&self) -> StateSpaceModel {
        StateSpaceModel { d: None, ..self.clone() }
    }

    fn require_discrete(&self, what: &str) -> Result<()> {
        if self.time_domain != TimeDomain::Discrete {
            return Err(Error::validation(format!("{what} needs a discrete-time model")));
        }
        Ok(())
    }

    /// Similarity transform `x = T x̃`.
    pub fn transform(&self, t: &DMatrix<f64>) -> Result<StateSpaceModel> {
        let t_inv = t
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Numerical("singular similarity transform".into()))?;
        StateSpaceModel::new(
            &t_inv * &self.a * t,
            &t_inv * &self.b,
            &self.c * t,
            self.d.as_ref().map(|d| &t_inv * d),
            self.time_domain,
            self.dt,
        )
    }
}

/// Output of [`simulate`]: states `x(0..=N)` and outputs `y(0..N)`.
#[derive(Debug, Clone)]
pub struct SimulationResult {
    pub x: Trajectory,
    pub y: Trajectory,
}

/// Exact recursion `x(k+1) = A x(k) + B u(k) + d`, `y(k) = C x(k)`.
pub fn simulate(model: &StateSpaceModel, x0: &DVector<f64>, u: &Trajectory) -> Result<SimulationResult> {
    model.require_discrete("simulate")?;
    let n = model.order();
    if x0.len() != n {
        return Err(Error::validation(format!("x0 has length {}, expected {n}", x0.len())));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("x0 contains non-finite entries"));
    }
    if u.channels() != model.inputs() {
        return Err(Error::validation(format!(
            "input has {} channels, model expects {}",
            u.channels(),
            model.inputs()
        )));
    }
    let steps = u.len();
    let d = model.offset();
    let mut xs = DMatrix::zeros(n, steps + 1);
    let mut ys = DMatrix::zeros(model.outputs(), steps);
    let mut x = x0.clone();
    xs.set_column(0, &x);
    for k in 0..steps {
        ys.set_column(k, &(&model.c * &x));
        x = &model.a * &x + &model.b * u.data().column(k) + &d;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { index: k + 1 });
        }
        xs.set_column(k + 1, &x);
    }
    let dt = model.dt.unwrap_or(u.dt());
    Ok(SimulationResult {
        x: Trajectory::new(xs, dt, u.start_index())?,
        y: Trajectory::new(ys, dt, u.start_index())?,
    })
}

/// Zero-order-hold sampling through one exponential of the augmented
/// generator `[[A, B, d], [0, 0, 0]]`.
pub fn zoh_discretize(model: &StateSpaceModel, ts: f64) -> Result<StateSpaceModel> {
    if model.time_domain != TimeDomain::Continuous {
        return Err(Error::validation("zoh_discretize needs a continuous-time model"));
    }
    if !(ts > 0.0) || !ts.is_finite() {
        return Err(Error::validation(format!("sample period must be positive, got {ts}")));
    }
    let n = model.order();
    let m = model.inputs();
    let k = n + m + 1;
    let mut g = DMatrix::zeros(k, k);
    g.view_mut((0, 0), (n, n)).copy_from(&(&model.a * ts));
    g.view_mut((0, n), (n, m)).copy_from(&(&model.b * ts));
    if let Some(d) = &model.d {
        g.view_mut((0, n + m), (n, 1)).copy_from(&(d * ts));
    }
    let e = g.exp();
    if e.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("matrix exponential overflowed".into()));
    }
    let ad = e.view((0, 0), (n, n)).into_owned();
    let bd = e.view((0, n), (n, m)).into_owned();
    let dd = model
        .d
        .as_ref()
        .map(|_| e.view((0, n + m), (n, 1)).column(0).into_owned());
    StateSpaceModel::new(ad, bd, model.c.clone(), dd, TimeDomain::Discrete, Some(ts))
}

/// Solves `(I − A) x* = B u + d`.
pub fn equilibrium(model: &StateSpaceModel, u_const: &DVector<f64>) -> Result<DVector<f64>> {
    model.require_discrete("equilibrium")?;
    if u_const.len() != model.inputs() {
        return Err(Error::validation("constant input has wrong length"));
    }
    let n = model.order();
    let lhs = DMatrix::<f64>::identity(n, n) - &model.a;
    let s = linalg::singular_values(&lhs)?;
    let smax = s.first().copied().unwrap_or(0.0);
    let smin = s.last().copied().unwrap_or(0.0);
    if smax == 0.0 || smin <= 1e-10 * smax {
        return Err(Error::NoUniqueEquilibrium(format!(
            "I - A is singular (σ_min/σ_max = {:.3e})",
            if smax > 0.0 { smin / smax } else { 0.0 }
        )));
    }
    let rhs = &model.b * u_const + model.offset();
    let x = lhs
        .clone()
        .full_piv_lu()
        .solve(&rhs)
        .ok_or_else(|| Error::NoUniqueEquilibrium("I - A is singular".into()))?;
    let res = (&lhs * &x - &rhs).amax();
    if res > 1e-10 * (1.0 + x.amax()) * (1.0 + lhs.amax()) {
        return Err(Error::Numerical(format!("equilibrium residual {res:.3e}")));
    }
    Ok(x)
}

/// `(CB, CAB, CA²B, …)` of length `count`.
pub fn markov_parameters(model: &StateSpaceModel, count: usize) -> Result<Vec<DMatrix<f64>>> {
    if count == 0 {
        return Err(Error::validation("count must be >= 1"));
    }
    let mut out = Vec::with_capacity(count);
    let mut ak_b = model.b.clone();
    for _ in 0..count {
        out.push(&model.c * &ak_b);
        ak_b = &model.a * ak_b;
    }
    Ok(out)
}

/// Largest entrywise gap between two Markov sequences.
pub fn markov_distance(a: &[DMatrix<f64>], b: &[DMatrix<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            if x.shape() != y.shape() {
                f64::INFINITY
            } else {
                linalg::max_abs(&(x - y))
            }
        })
        .fold(0.0, f64::max)
}

/// Orthonormal basis of `span[B, AB, A²B, …]`, grown block by block as in
/// the controllability staircase.
///
/// Each new block is `A` applied to the previous orthonormal directions,
/// orthogonalized against the basis (twice). Its directions are kept when
/// their singular value exceeds `rel_tol · ‖B‖` for the first block and
/// `rel_tol · ‖A‖` afterwards. `cap` bounds the dimension; when it binds,
/// the dominant directions of the current block are kept.
pub fn krylov_basis(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    rel_tol: f64,
    cap: Option<usize>,
) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let cap = cap.unwrap_or(n).min(n);
    let mut basis = DMatrix::<f64>::zeros(n, 0);
    if n == 0 || b.ncols() == 0 || linalg::max_abs(b) == 0.0 {
        return Ok(basis);
    }
    let a_norm = linalg::norm2(a);
    let mut reference = linalg::norm2(b);
    let mut block = b.clone();
    while basis.ncols() < cap {
        let mut w = block;
        for _ in 0..2 {
            if basis.ncols() > 0 {
                let proj = &basis * (basis.transpose() * &w);
                w -= proj;
            }
        }
        if linalg::max_abs(&w) == 0.0 {
            break;
        }
        let svd = linalg::thin_svd(&w)?;
        let keep = svd
            .s
            .iter()
            .take_while(|&&s| s > rel_tol * reference)
            .count()
            .min(cap - basis.ncols());
        if keep == 0 {
            break;
        }
        let fresh = svd.u.columns(0, keep).into_owned();
        basis = linalg::hstack(&[&basis, &fresh]);
        block = a * fresh;
        reference = a_norm;
    }
    if basis.ncols() > 0 {
        basis = basis.qr().q();
    }
    Ok(basis)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuralReport {
    pub controllable: bool,
    pub observable: bool,
    pub controllable_dim: usize,
    pub observable_dim: usize,
    /// Smallest `t ≤ n` with `rank(O_t) = n`; `None` when unobservable.
    pub lag: Option<usize>,
}

fn observability_matrix(a: &DMatrix<f64>, c: &DMatrix<f64>, t: usize) -> DMatrix<f64> {
    let mut rows = Vec::with_capacity(t);
    let mut blk = c.clone();
    for _ in 0..t {
        rows.push(blk.clone());
        blk = &blk * a;
    }
    let refs: Vec<&DMatrix<f64>> = rows.iter().collect();
    linalg::vstack(&refs)
}

pub fn structural_checks(model: &StateSpaceModel, rel_tol: f64) -> Result<StructuralReport> {
    model.require_discrete("structural_checks")?;
    let n = model.order();
    let ctrb = krylov_basis(&model.a, &model.b, rel_tol, None)?.ncols();
    let obsv = krylov_basis(&model.a.transpose(), &model.c.transpose(), rel_tol, None)?.ncols();
    let mut lag = None;
    if obsv == n {
        for t in 1..=n {
            if linalg::numerical_rank(&observability_matrix(&model.a, &model.c, t), rel_tol)? == n {
                lag = Some(t);
                break;
            }
        }
        if lag.is_none() {
            lag = Some(n);
        }
    }
    Ok(StructuralReport {
        controllable: ctrb == n,
        observable: obsv == n,
        controllable_dim: ctrb,
        observable_dim: obsv,
        lag,
    })
}

/// Random Schur-stable discrete model with spectral radius at most
/// `max_radius`, built from rotation and scalar blocks under a random
/// orthogonal change of basis. `B` and `C` have uniform entries in [-1, 1].
pub fn drss<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    m: usize,
    p: usize,
    max_radius: f64,
) -> StateSpaceModel {
    let mut a = DMatrix::zeros(n, n);
    let mut k = 0;
    while k < n {
        let r = max_radius * (0.2 + 0.8 * rng.random::<f64>());
        if k + 1 < n && rng.random::<f64>() < 0.5 {
            let th = std::f64::consts::PI * rng.random::<f64>();
            a[(k, k)] = r * th.cos();
            a[(k, k + 1)] = -r * th.sin();
            a[(k + 1, k)] = r * th.sin();
            a[(k + 1, k + 1)] = r * th.cos();
            k += 2;
        } else {
            a[(k, k)] = if rng.random::<bool>() { r } else { -r };
            k += 1;
        }
    }
    let g = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let q = g.qr().q();
    let a = q.transpose() * a * &q;
    let b = DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0));
    let c = DMatrix::from_fn(p, n, |_, _| rng.random_range(-1.0..1.0));
    StateSpaceModel::discrete(a, b, c, 1.0).expect("well-formed random model")
}

/// Uniform i.i.d. input in [-1, 1].
pub fn random_input<R: Rng + ?Sized>(rng: &mut R, m: usize, len: usize, dt: f64) -> Trajectory {
    let data = DMatrix::from_fn(m, len, |_, _| rng.random_range(-1.0..1.0));
    Trajectory::new(data, dt, 0).expect("finite random input")
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
struct ModelJson {
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    b: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    c: Vec<Vec<f64>>,
    #[serde(default)]
    d: Option<Vec<f64>>,
    time_domain: TimeDomain,
    #[serde(default)]
    dt: Option<f64>,
}

pub(crate) fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub(crate) fn from_rows(rows: &[Vec<f64>], cols_if_empty: usize, what: &str) -> Result<DMatrix<f64>> {
    let ncols = rows.first().map(|r| r.len()).unwrap_or(cols_if_empty);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::validation(format!("{what}: ragged rows")));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

impl Serialize for StateSpaceModel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ModelJson {
            a: to_rows(&self.a),
            b: to_rows(&self.b),
            c: to_rows(&self.c),
            d: self.d.as_ref().map(|d| d.iter().copied().collect()),
            time_domain: self.time_domain,
            dt: self.dt,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for StateSpaceModel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let j = ModelJson::deserialize(d)?;
        let a = from_rows(&j.a, 0, "A").map_err(D::Error::custom)?;
        let b = from_rows(&j.b, 0, "B").map_err(D::Error::custom)?;
        let c = from_rows(&j.c, a.nrows(), "C").map_err(D::Error::custom)?;
        let off = j.d.map(DVector::from_vec);
        StateSpaceModel::new(a, b, c, off, j.time_domain, j.dt).map_err(D::Error::custom)
    }
}
