//! Trajectories, block-Hankel matrices and the data-richness tests
//! (persistency of excitation and the input/output rank condition).
//!
//! Storage always begins at physical index 0. For the rank condition and
//! the data-based realization the first `lag` stored samples play the role
//! of the "past" window, i.e. stored index `c` corresponds to time
//! `c - origin_offset` with `origin_offset = lag`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Finite multichannel discrete-time signal, `channels × samples`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    data: DMatrix<f64>,
    dt: f64,
    start_index: i64,
}

impl Trajectory {
    pub fn new(data: DMatrix<f64>, dt: f64, start_index: i64) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::validation("trajectory needs at least one channel and one sample"));
        }
        linalg::ensure_finite(&data, "trajectory")?;
        if !(dt >= 0.0) || !dt.is_finite() {
            return Err(Error::validation(format!("invalid sample period {dt}")));
        }
        Ok(Self { data, dt, start_index })
    }

    /// Builds a trajectory from per-sample vectors.
    pub fn from_samples(samples: &[DVector<f64>], dt: f64, start_index: i64) -> Result<Self> {
        let ch = samples.first().map(|s| s.len()).unwrap_or(0);
        if samples.iter().any(|s| s.len() != ch) {
            return Err(Error::validation("samples have inconsistent channel counts"));
        }
        let mut data = DMatrix::zeros(ch, samples.len());
        for (k, s) in samples.iter().enumerate() {
            data.set_column(k, s);
        }
        Self::new(data, dt, start_index)
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_data(self) -> DMatrix<f64> {
        self.data
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn start_index(&self) -> i64 {
        self.start_index
    }

    pub fn channels(&self) -> usize {
        self.data.nrows()
    }

    pub fn len(&self) -> usize {
        self.data.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.data.ncols() == 0
    }

    pub fn last_index(&self) -> i64 {
        self.start_index + self.len() as i64 - 1
    }

    /// Sample at physical index `k`.
    pub fn at(&self, k: i64) -> Result<DVector<f64>> {
        let pos = self.position(k)?;
        Ok(self.data.column(pos).into_owned())
    }

    fn position(&self, k: i64) -> Result<usize> {
        if k < self.start_index || k > self.last_index() {
            return Err(Error::Range(format!(
                "sample {k} outside [{}, {}]",
                self.start_index,
                self.last_index()
            )));
        }
        Ok((k - self.start_index) as usize)
    }

    /// `z_[i,k]`: exactly `k - i + 1` samples.
    pub fn slice(&self, i: i64, k: i64) -> Result<Trajectory> {
        if i > k {
            return Err(Error::Range(format!("empty window [{i}, {k}]")));
        }
        let a = self.position(i)?;
        let b = self.position(k)?;
        Ok(Trajectory {
            data: self.data.columns(a, b - a + 1).into_owned(),
            dt: self.dt,
            start_index: i,
        })
    }

    /// Samples `[from, from+len)` in storage coordinates, re-indexed from 0.
    pub fn window(&self, from: usize, len: usize) -> Result<Trajectory> {
        if len == 0 || from + len > self.len() {
            return Err(Error::Range(format!(
                "window [{from}, {}) exceeds {} samples",
                from + len,
                self.len()
            )));
        }
        Ok(Trajectory {
            data: self.data.columns(from, len).into_owned(),
            dt: self.dt,
            start_index: 0,
        })
    }

    /// Subtracts a constant vector from every sample.
    pub fn offset_by(&self, center: &DVector<f64>) -> Result<Trajectory> {
        if center.len() != self.channels() {
            return Err(Error::validation("offset vector has wrong channel count"));
        }
        let mut data = self.data.clone();
        for mut col in data.column_iter_mut() {
            col -= center;
        }
        Trajectory::new(data, self.dt, self.start_index)
    }

    /// Mean over the last `count` samples (data-side equilibrium estimate).
    pub fn tail_mean(&self, count: usize) -> DVector<f64> {
        let count = count.clamp(1, self.len());
        let start = self.len() - count;
        let mut acc = DVector::zeros(self.channels());
        for c in start..self.len() {
            acc += self.data.column(c);
        }
        acc / count as f64
    }

    pub(crate) fn check_aligned(&self, other: &Trajectory, what: &str) -> Result<()> {
        if self.len() != other.len() || self.start_index != other.start_index {
            return Err(Error::validation(format!(
                "{what}: trajectories not aligned ({} samples from {} vs {} from {})",
                self.len(),
                self.start_index,
                other.len(),
                other.start_index
            )));
        }
        Ok(())
    }
}

/// Block-Hankel matrix `Z_{i,t,T}`.
#[derive(Debug, Clone, PartialEq)]
pub struct HankelMatrix {
    pub matrix: DMatrix<f64>,
    pub block_rows: usize,
    pub source_start: i64,
}

impl HankelMatrix {
    pub fn columns(&self) -> usize {
        self.matrix.ncols()
    }

    /// Block `(r, c)`, which equals `z(i + r + c)`.
    pub fn block(&self, r: usize, c: usize) -> DVector<f64> {
        let ch = self.matrix.nrows() / self.block_rows;
        self.matrix.view((r * ch, c), (ch, 1)).column(0).into_owned()
    }
}

/// `Z_{i,t,T}` with `t` block rows and `T` columns; block `(r, c)` is `z(i+r+c)`.
pub fn build_hankel(z: &Trajectory, i: i64, t: usize, cols: usize) -> Result<HankelMatrix> {
    if t == 0 || cols == 0 {
        return Err(Error::validation("Hankel needs t >= 1 and T >= 1"));
    }
    let first_needed = i;
    let last_needed = i + t as i64 + cols as i64 - 2;
    if first_needed < z.start_index() || last_needed > z.last_index() {
        let mut missing = Vec::new();
        if first_needed < z.start_index() {
            missing.push(format!("{}..{}", first_needed, (z.start_index() - 1).min(last_needed)));
        }
        if last_needed > z.last_index() {
            missing.push(format!("{}..{}", (z.last_index() + 1).max(first_needed), last_needed));
        }
        return Err(Error::Range(format!(
            "Hankel window needs samples {first_needed}..{last_needed}; missing {}",
            missing.join(", ")
        )));
    }
    let ch = z.channels();
    let base = (i - z.start_index()) as usize;
    let mut m = DMatrix::zeros(t * ch, cols);
    for r in 0..t {
        m.view_mut((r * ch, 0), (ch, cols))
            .copy_from(&z.data().columns(base + r, cols));
    }
    Ok(HankelMatrix {
        matrix: m,
        block_rows: t,
        source_start: i,
    })
}

pub use crate::linalg::numerical_rank;

/// Outcome of a rank test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub holds: bool,
    pub achieved: usize,
    pub required: usize,
    pub rows: usize,
    pub columns: usize,
    /// Singular values relative to the largest, in decreasing order.
    pub relative_singular_values: Vec<f64>,
}

fn rank_report(m: &DMatrix<f64>, required: usize, rel_tol: f64, exact: bool) -> Result<RankReport> {
    if !(rel_tol > 0.0) {
        return Err(Error::validation("rel_tol must be positive"));
    }
    let s = if m.iter().all(|&v| v == 0.0) {
        vec![0.0; m.nrows().min(m.ncols())]
    } else {
        linalg::singular_values(m)?
    };
    let achieved = linalg::rank_from_singular_values(&s, rel_tol);
    let smax = s.first().copied().unwrap_or(0.0);
    let rel = s
        .iter()
        .map(|v| if smax > 0.0 { v / smax } else { 0.0 })
        .collect();
    let holds = if exact { achieved == required } else { achieved >= required };
    Ok(RankReport {
        holds,
        achieved,
        required,
        rows: m.nrows(),
        columns: m.ncols(),
        relative_singular_values: rel,
    })
}

/// Persistency of excitation: the Hankel of `u` with `order` block rows
/// (all available columns) has full row rank `m · order`.
pub fn is_persistently_exciting(u: &Trajectory, order: usize, rel_tol: f64) -> Result<RankReport> {
    if order == 0 {
        return Err(Error::validation("order must be >= 1"));
    }
    let n = u.len();
    if n < order + 1 {
        return Err(Error::Range(format!(
            "persistency of excitation of order {order} needs at least {} samples, got {n}",
            order + 1
        )));
    }
    let cols = n - order + 1;
    let rows = u.channels() * order;
    if rows > cols {
        return Err(Error::Range(format!(
            "order {order} needs at least {rows} Hankel columns, only {cols} available"
        )));
    }
    let h = build_hankel(u, u.start_index(), order, cols)?;
    rank_report(&h.matrix, rows, rel_tol, true)
}

/// The stacked input/output Hankel of the rank condition,
/// `[U_{-ℓ,ℓ+1,K}; Y_{-ℓ,ℓ,K}]` with `K = N - ℓ` columns.
pub fn rank_condition_matrix(u: &Trajectory, y: &Trajectory, lag: usize) -> Result<DMatrix<f64>> {
    u.check_aligned(y, "rank condition")?;
    if lag == 0 {
        return Err(Error::validation("lag must be >= 1"));
    }
    if u.len() <= lag {
        return Err(Error::Range(format!(
            "rank condition with lag {lag} needs more than {lag} samples, got {}",
            u.len()
        )));
    }
    let cols = u.len() - lag;
    let hu = build_hankel(u, u.start_index(), lag + 1, cols)?;
    let hy = build_hankel(y, y.start_index(), lag, cols)?;
    Ok(linalg::vstack(&[&hu.matrix, &hy.matrix]))
}

/// True iff the stacked Hankel has numerical rank exactly `m(ℓ+1) + n`.
pub fn rank_condition(
    u: &Trajectory,
    y: &Trajectory,
    lag: usize,
    order: usize,
    rel_tol: f64,
) -> Result<RankReport> {
    let m = rank_condition_matrix(u, y, lag)?;
    let required = u.channels() * (lag + 1) + order;
    rank_report(&m, required, rel_tol, true)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: &[f64]) -> Trajectory {
        Trajectory::new(DMatrix::from_row_slice(1, v.len(), v), 1.0, 0).unwrap()
    }

    #[test]
    fn hankel_scalar_example() {
        let z = scalar(&[1.0, 2.0, 3.0, 4.0]);
        let h = build_hankel(&z, 0, 2, 3).unwrap();
        assert_eq!(h.matrix, DMatrix::from_row_slice(2, 3, &[1., 2., 3., 2., 3., 4.]));
    }

    #[test]
    fn hankel_single_column() {
        let z = scalar(&[5.0, 6.0, 7.0]);
        let h = build_hankel(&z, 1, 1, 1).unwrap();
        assert_eq!(h.matrix, DMatrix::from_row_slice(1, 1, &[6.0]));
    }

    #[test]
    fn hankel_two_channel_example() {
        let data = DMatrix::from_fn(2, 4, |r, k| if r == 0 { k as f64 } else { -(k as f64) });
        let z = Trajectory::new(data, 0.0, 0).unwrap();
        let h = build_hankel(&z, 0, 2, 2).unwrap();
        let expected = DMatrix::from_row_slice(4, 2, &[0., 1., 0., -1., 1., 2., -1., -2.]);
        assert_eq!(h.matrix, expected);
    }

    #[test]
    fn hankel_range_error_names_missing_samples() {
        let z = scalar(&[1.0, 2.0, 3.0]);
        let err = build_hankel(&z, 0, 2, 3).unwrap_err();
        match err {
            Error::Range(msg) => assert!(msg.contains("3..3"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(build_hankel(&z, -1, 1, 1).is_err());
    }

    #[test]
    fn slice_has_expected_length() {
        let z = Trajectory::new(DMatrix::from_fn(1, 10, |_, k| k as f64), 0.1, 5).unwrap();
        let s = z.slice(7, 11).unwrap();
        assert_eq!(s.len(), 5);
        assert_eq!(s.at(7).unwrap()[0], 2.0);
        assert!(z.slice(4, 6).is_err());
    }

    #[test]
    fn pe_examples() {
        let zero = scalar(&[0.0; 10]);
        assert!(!is_persistently_exciting(&zero, 3, 1e-8).unwrap().holds);
        let ramp = scalar(&(0..10).map(|k| k as f64).collect::<Vec<_>>());
        let r = is_persistently_exciting(&ramp, 2, 1e-8).unwrap();
        assert!(r.holds);
        assert_eq!(r.achieved, 2);
        let ones = scalar(&[1.0; 10]);
        let r = is_persistently_exciting(&ones, 2, 1e-8).unwrap();
        assert!(!r.holds);
        assert_eq!(r.achieved, 1);
    }

    #[test]
    fn pe_too_short() {
        let z = scalar(&[1.0, 2.0]);
        assert!(matches!(is_persistently_exciting(&z, 2, 1e-8), Err(Error::Range(_))));
    }

    #[test]
    fn rank_condition_zero_data() {
        let u = Trajectory::new(DMatrix::zeros(2, 50), 1.0, 0).unwrap();
        let y = Trajectory::new(DMatrix::zeros(2, 50), 1.0, 0).unwrap();
        let r = rank_condition(&u, &y, 2, 4, 1e-8).unwrap();
        assert!(!r.holds);
        assert_eq!(r.achieved, 0);
    }

    #[test]
    fn rank_condition_rejects_mismatch() {
        let u = Trajectory::new(DMatrix::zeros(1, 20), 1.0, 0).unwrap();
        let y = Trajectory::new(DMatrix::zeros(1, 19), 1.0, 0).unwrap();
        assert!(matches!(rank_condition(&u, &y, 1, 1, 1e-8), Err(Error::Validation(_))));
    }
}
