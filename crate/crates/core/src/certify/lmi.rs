//! Small linear-matrix-inequality layer and a log-det barrier solver.
//!
//! Constraints are affine blocks `F0 + Σ xᵢ Fᵢ ⪯ -margin·I` over a vector
//! of scalar decision variables; symmetric matrix variables are expanded
//! into their upper-triangular coordinates. Every returned point is
//! re-checked with an independent symmetric eigenvalue computation.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::linalg;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub phase: u8,
    pub t: f64,
    pub gap: f64,
    pub newton_steps: usize,
    pub value: f64,
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum LmiError {
    #[error("LMI infeasible: block '{block}' violated by {violation:.3e}")]
    Infeasible { block: String, violation: f64 },
    #[error("LMI solver did not converge ({} outer iterations)", trace.len())]
    NonConvergence { trace: Vec<TraceEntry> },
    #[error("LMI objective unbounded: variable {variable} reached the search box")]
    Unbounded { variable: usize },
    #[error("malformed LMI: {0}")]
    Malformed(String),
    #[error("solution failed re-verification: block '{block}' residual {residual:.3e}")]
    VerificationFailed { block: String, residual: f64 },
}

/// Symmetric matrix variable occupying `dim(dim+1)/2` scalar slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SymVar {
    pub offset: usize,
    pub dim: usize,
}

impl SymVar {
    pub fn len(&self) -> usize {
        self.dim * (self.dim + 1) / 2
    }

    pub fn is_empty(&self) -> bool {
        self.dim == 0
    }

    /// `(i, j)` with `i ≤ j` for each slot, row by row.
    pub fn coordinates(&self) -> Vec<(usize, usize)> {
        let mut v = Vec::with_capacity(self.len());
        for i in 0..self.dim {
            for j in i..self.dim {
                v.push((i, j));
            }
        }
        v
    }

    pub fn basis(&self, i: usize, j: usize) -> DMatrix<f64> {
        let mut e = DMatrix::zeros(self.dim, self.dim);
        e[(i, j)] = 1.0;
        e[(j, i)] = 1.0;
        e
    }

    pub fn value(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for (k, (i, j)) in self.coordinates().into_iter().enumerate() {
            m[(i, j)] = x[self.offset + k];
            m[(j, i)] = x[self.offset + k];
        }
        m
    }

    /// Slot values reproducing a given symmetric matrix.
    pub fn encode(&self, m: &DMatrix<f64>, x: &mut DVector<f64>) {
        for (k, (i, j)) in self.coordinates().into_iter().enumerate() {
            x[self.offset + k] = 0.5 * (m[(i, j)] + m[(j, i)]);
        }
    }
}

/// `F0 + Σ xᵢ Fᵢ + margin·I ⪯ 0`.
#[derive(Debug, Clone)]
pub struct LmiBlock {
    pub label: String,
    pub f0: DMatrix<f64>,
    pub terms: Vec<(usize, DMatrix<f64>)>,
    pub margin: f64,
}

impl LmiBlock {
    pub fn new(label: impl Into<String>, size: usize) -> Self {
        Self {
            label: label.into(),
            f0: DMatrix::zeros(size, size),
            terms: Vec::new(),
            margin: 0.0,
        }
    }

    pub fn size(&self) -> usize {
        self.f0.nrows()
    }

    pub fn add_constant(&mut self, m: &DMatrix<f64>) {
        self.f0 += m;
    }

    pub fn add_term(&mut self, var: usize, m: &DMatrix<f64>) {
        if linalg::max_abs(m) == 0.0 {
            return;
        }
        if let Some((_, f)) = self.terms.iter_mut().find(|(v, _)| *v == var) {
            *f += m;
        } else {
            self.terms.push((var, m.clone()));
        }
    }

    /// Adds `map(P)` for a symmetric variable `P` and a linear `map`.
    pub fn add_sym(&mut self, v: &SymVar, map: impl Fn(&DMatrix<f64>) -> DMatrix<f64>) {
        for (k, (i, j)) in v.coordinates().into_iter().enumerate() {
            let img = map(&v.basis(i, j));
            self.add_term(v.offset + k, &img);
        }
    }

    pub fn eval(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut m = self.f0.clone();
        for (v, f) in &self.terms {
            m += f * x[*v];
        }
        m
    }
}

#[derive(Debug, Clone, Default)]
pub struct LmiProblem {
    nvars: usize,
    pub blocks: Vec<LmiBlock>,
    /// Linear objective to minimize.
    pub objective: Option<DVector<f64>>,
}

impl LmiProblem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn add_scalar(&mut self) -> usize {
        self.nvars += 1;
        self.nvars - 1
    }

    pub fn add_symmetric(&mut self, dim: usize) -> SymVar {
        let v = SymVar { offset: self.nvars, dim };
        self.nvars += v.len();
        v
    }

    pub fn add_block(&mut self, b: LmiBlock) -> usize {
        self.blocks.push(b);
        self.blocks.len() - 1
    }

    pub fn minimize(&mut self, terms: &[(usize, f64)]) {
        let mut c = DVector::zeros(self.nvars);
        for &(v, w) in terms {
            c[v] += w;
        }
        self.objective = Some(c);
    }

    pub fn maximize(&mut self, terms: &[(usize, f64)]) {
        let neg: Vec<(usize, f64)> = terms.iter().map(|&(v, w)| (v, -w)).collect();
        self.minimize(&neg);
    }

    fn validate(&self) -> Result<(), LmiError> {
        for b in &self.blocks {
            let s = b.size();
            if b.f0.ncols() != s {
                return Err(LmiError::Malformed(format!("block '{}' is not square", b.label)));
            }
            let sym_err = |m: &DMatrix<f64>| linalg::max_abs(&(m - m.transpose())) > 1e-12 * (1.0 + linalg::max_abs(m));
            if sym_err(&b.f0) {
                return Err(LmiError::Malformed(format!("block '{}' constant is not symmetric", b.label)));
            }
            for (v, f) in &b.terms {
                if *v >= self.nvars {
                    return Err(LmiError::Malformed(format!("block '{}' uses unknown variable {v}", b.label)));
                }
                if f.shape() != (s, s) || sym_err(f) {
                    return Err(LmiError::Malformed(format!(
                        "block '{}' coefficient of variable {v} is not a symmetric {s}x{s} matrix",
                        b.label
                    )));
                }
            }
            if !b.margin.is_finite() || b.margin < 0.0 {
                return Err(LmiError::Malformed(format!("block '{}' has invalid margin", b.label)));
            }
        }
        if let Some(c) = &self.objective {
            if c.len() != self.nvars {
                return Err(LmiError::Malformed("objective length differs from variable count".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    pub mu: f64,
    pub max_outer: usize,
    pub max_newton: usize,
    /// Relative duality-gap target of the optimization phase.
    pub gap_tol: f64,
    /// Accepted normalized violation for non-strict blocks.
    pub feas_tol: f64,
    /// Bound on every decision variable; reaching it signals unboundedness.
    pub box_bound: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            mu: 12.0,
            max_outer: 80,
            max_newton: 150,
            gap_tol: 1e-9,
            feas_tol: 1e-9,
            box_bound: 1e8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmiSolution {
    pub x: DVector<f64>,
    pub objective_value: Option<f64>,
    /// `λ_max(F_j(x)) + margin_j` for every block.
    pub block_residuals: Vec<f64>,
    /// Optimal normalized shift of the feasibility phase (negative: interior).
    pub slack: f64,
    pub iterations: usize,
    pub trace: Vec<TraceEntry>,
    /// The feasible set had no usable interior, so the objective was ignored.
    pub objective_skipped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockCheck {
    pub label: String,
    pub max_eigenvalue: f64,
    pub allowed: f64,
    pub ok: bool,
}

/// Independent eigenvalue check: block `j` passes when
/// `λ_max(F_j(x)) ≤ -margin_j + tol·(1 + ‖F_j(x)‖)`.
pub fn verify(problem: &LmiProblem, x: &DVector<f64>, tol: f64) -> Vec<BlockCheck> {
    problem
        .blocks
        .iter()
        .map(|b| {
            let f = b.eval(x);
            let eig = linalg::sym_eigenvalues(&f);
            let lmax = eig.last().copied().unwrap_or(0.0);
            let norm = eig.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
            let allowed = -b.margin + tol * (1.0 + norm);
            BlockCheck {
                label: b.label.clone(),
                max_eigenvalue: lmax,
                allowed,
                ok: lmax.is_finite() && lmax <= allowed,
            }
        })
        .collect()
}

// Internal barrier problem: minimize cᵀx subject to G_j(x) ≺ 0.
struct Barrier {
    blocks: Vec<(DMatrix<f64>, Vec<(usize, DMatrix<f64>)>)>,
    c: DVector<f64>,
    dim_total: usize,
}

impl Barrier {
    fn eval(&self, j: usize, x: &DVector<f64>) -> DMatrix<f64> {
        let (f0, terms) = &self.blocks[j];
        let mut m = f0.clone();
        for (v, f) in terms {
            m += f * x[*v];
        }
        m
    }

    fn factor(&self, j: usize, x: &DVector<f64>) -> Option<Cholesky<f64, Dyn>> {
        let neg = -self.eval(j, x);
        if neg.iter().any(|v| !v.is_finite()) {
            return None;
        }
        Cholesky::new(neg)
    }

    fn value(&self, x: &DVector<f64>, t: f64) -> Option<f64> {
        let mut phi = t * self.c.dot(x);
        for j in 0..self.blocks.len() {
            let ch = self.factor(j, x)?;
            let l = ch.l_dirty();
            for i in 0..l.nrows() {
                phi -= 2.0 * l[(i, i)].ln();
            }
        }
        Some(phi)
    }

    fn grad_hess(&self, x: &DVector<f64>, t: f64) -> Option<(DVector<f64>, DMatrix<f64>)> {
        let n = x.len();
        let mut g = &self.c * t;
        let mut h = DMatrix::zeros(n, n);
        for j in 0..self.blocks.len() {
            let (_, terms) = &self.blocks[j];
            let ch = self.factor(j, x)?;
            let l = ch.l();
            if l.nrows() == 1 {
                let w = 1.0 / (l[(0, 0)] * l[(0, 0)]);
                for (a, (va, fa)) in terms.iter().enumerate() {
                    let ga = fa[(0, 0)] * w;
                    g[*va] += ga;
                    for (vb, fb) in &terms[a..] {
                        let gb = fb[(0, 0)] * w;
                        h[(*va, *vb)] += ga * gb;
                        if va != vb {
                            h[(*vb, *va)] += ga * gb;
                        }
                    }
                }
                continue;
            }
            let gs: Vec<(usize, DMatrix<f64>)> = terms
                .iter()
                .map(|(v, f)| {
                    let y = l.solve_lower_triangular(f).expect("nonsingular factor");
                    let z = l
                        .solve_lower_triangular(&y.transpose())
                        .expect("nonsingular factor");
                    (*v, z)
                })
                .collect();
            for (a, (va, ga)) in gs.iter().enumerate() {
                g[*va] += ga.trace();
                for (vb, gb) in &gs[a..] {
                    let ip = ga.dot(gb);
                    h[(*va, *vb)] += ip;
                    if va != vb {
                        h[(*vb, *va)] += ip;
                    }
                }
            }
        }
        Some((g, h))
    }

    fn newton_direction(grad: &DVector<f64>, h: &DMatrix<f64>) -> Option<DVector<f64>> {
        let n = h.nrows();
        let scale = (0..n).map(|i| h[(i, i)].abs()).fold(0.0, f64::max).max(1e-300);
        let mut reg = 0.0;
        for _ in 0..12 {
            let mut hr = h.clone();
            if reg > 0.0 {
                for i in 0..n {
                    hr[(i, i)] += reg;
                }
            }
            if let Some(ch) = Cholesky::new(hr) {
                let d = -ch.solve(grad);
                if d.iter().all(|v| v.is_finite()) {
                    return Some(d);
                }
            }
            reg = if reg == 0.0 { 1e-14 * scale } else { reg * 100.0 };
        }
        None
    }

    /// Damped Newton centering at parameter `t`. Returns steps taken and
    /// whether the Newton decrement reached the threshold.
    fn center(
        &self,
        x: &mut DVector<f64>,
        t: f64,
        max_steps: usize,
        stop: &dyn Fn(&DVector<f64>) -> bool,
    ) -> (usize, bool) {
        for step in 0..max_steps {
            if stop(x) {
                return (step, true);
            }
            let Some((g, h)) = self.grad_hess(x, t) else {
                return (step, false);
            };
            let Some(dx) = Self::newton_direction(&g, &h) else {
                return (step, false);
            };
            let dec = -g.dot(&dx);
            if !(dec > 1e-9) {
                return (step, true);
            }
            let Some(f0) = self.value(x, t) else {
                return (step, false);
            };
            let mut alpha = 1.0;
            let mut moved = false;
            for _ in 0..60 {
                let cand = &*x + &dx * alpha;
                if cand == *x {
                    // Step below floating-point resolution.
                    return (step + 1, true);
                }
                if let Some(f1) = self.value(&cand, t) {
                    if f1 <= f0 - 0.25 * alpha * dec {
                        *x = cand;
                        moved = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !moved {
                return (step + 1, dec < 1e-6);
            }
        }
        (max_steps, false)
    }

    fn minimize(
        &self,
        x: &mut DVector<f64>,
        phase: u8,
        opts: &SolverOptions,
        gap_target: &dyn Fn(&DVector<f64>) -> f64,
        stop: &dyn Fn(&DVector<f64>) -> bool,
        trace: &mut Vec<TraceEntry>,
    ) -> Result<bool, LmiError> {
        let mut t = 1.0;
        for _ in 0..opts.max_outer {
            let (steps, ok) = self.center(x, t, opts.max_newton, stop);
            let gap = self.dim_total as f64 / t;
            trace.push(TraceEntry {
                phase,
                t,
                gap,
                newton_steps: steps,
                value: self.c.dot(x),
            });
            if stop(x) {
                return Ok(true);
            }
            if gap <= gap_target(x) {
                return Ok(true);
            }
            if !ok {
                // Centering stalled; accept when already close to the target.
                if gap <= 1e3 * gap_target(x) {
                    return Ok(true);
                }
                return Err(LmiError::NonConvergence { trace: trace.clone() });
            }
            t *= opts.mu;
        }
        Ok(false)
    }
}

fn block_scale(b: &LmiBlock) -> f64 {
    1.0 + linalg::sym_eigenvalues(&b.f0)
        .iter()
        .fold(0.0_f64, |a, v| a.max(v.abs()))
}

/// Outcome of the feasibility phase.
struct PhaseOne {
    x: DVector<f64>,
    slack: f64,
    worst_block: usize,
}

fn phase_one(
    problem: &LmiProblem,
    opts: &SolverOptions,
    early_stop: Option<f64>,
    trace: &mut Vec<TraceEntry>,
) -> Result<PhaseOne, LmiError> {
    let n = problem.nvars;
    let s_idx = n;
    let scales: Vec<f64> = problem.blocks.iter().map(block_scale).collect();
    let mut blocks = Vec::new();
    let mut dim_total = 0;
    for (b, sc) in problem.blocks.iter().zip(&scales) {
        let size = b.size();
        let f0 = (&b.f0 + DMatrix::identity(size, size) * b.margin) / *sc;
        let mut terms: Vec<(usize, DMatrix<f64>)> = b.terms.iter().map(|(v, f)| (*v, f / *sc)).collect();
        terms.push((s_idx, -DMatrix::identity(size, size)));
        blocks.push((f0, terms));
        dim_total += size;
    }
    push_box(&mut blocks, &mut dim_total, n, opts.box_bound);
    // s ≥ -1 keeps the phase bounded when the interior is large.
    blocks.push((DMatrix::from_element(1, 1, -1.0), vec![(s_idx, DMatrix::from_element(1, 1, -1.0))]));
    dim_total += 1;
    let mut c = DVector::zeros(n + 1);
    c[s_idx] = 1.0;
    let bar = Barrier { blocks, c, dim_total };

    let mut x = DVector::zeros(n + 1);
    let worst0 = (0..problem.blocks.len())
        .map(|j| linalg::sym_max_eigenvalue(&bar.eval(j, &x).map(|v| v)))
        .fold(f64::NEG_INFINITY, f64::max);
    x[s_idx] = if worst0.is_finite() { (worst0 + 1.0).max(-0.5) } else { 1.0 };

    let stop_at = early_stop;
    let stop = move |x: &DVector<f64>| stop_at.is_some_and(|d| x[s_idx] < -d);
    let target = |_: &DVector<f64>| 0.1 * opts.feas_tol;
    bar.minimize(&mut x, 1, opts, &target, &stop, trace)?;

    let mut slack = f64::NEG_INFINITY;
    let mut worst_block = 0;
    for j in 0..problem.blocks.len() {
        let b = &problem.blocks[j];
        let f = (b.eval(&x.rows(0, n).into_owned()) + DMatrix::identity(b.size(), b.size()) * b.margin) / scales[j];
        let l = linalg::sym_max_eigenvalue(&f);
        if l > slack {
            slack = l;
            worst_block = j;
        }
    }
    Ok(PhaseOne { x: x.rows(0, n).into_owned(), slack, worst_block })
}

fn push_box(
    blocks: &mut Vec<(DMatrix<f64>, Vec<(usize, DMatrix<f64>)>)>,
    dim_total: &mut usize,
    n: usize,
    bound: f64,
) {
    for v in 0..n {
        blocks.push((DMatrix::from_element(1, 1, -bound), vec![(v, DMatrix::from_element(1, 1, 1.0))]));
        blocks.push((DMatrix::from_element(1, 1, -bound), vec![(v, DMatrix::from_element(1, 1, -1.0))]));
        *dim_total += 2;
    }
}

/// Smallest normalized uniform shift `s` with `F_j(x) + margin_j I ⪯ s·(1+‖F0_j‖)·I`
/// for all blocks, floored at -1. Negative means strictly feasible.
pub fn feasibility_slack(problem: &LmiProblem, opts: &SolverOptions) -> Result<(f64, DVector<f64>), LmiError> {
    problem.validate()?;
    let mut trace = Vec::new();
    let p1 = phase_one(problem, opts, None, &mut trace)?;
    Ok((p1.slack, p1.x))
}

/// Solves the problem: feasibility first, then the objective (if any)
/// over the interior. The point returned always passes [`verify`] at
/// `opts.feas_tol`.
pub fn solve(problem: &LmiProblem, opts: &SolverOptions) -> Result<LmiSolution, LmiError> {
    problem.validate()?;
    let n = problem.nvars;
    let mut trace = Vec::new();
    let early = if problem.objective.is_some() { 1e-2 } else { 1e-6 };
    let p1 = phase_one(problem, opts, Some(early), &mut trace)?;
    if p1.slack > opts.feas_tol {
        return Err(LmiError::Infeasible {
            block: problem.blocks[p1.worst_block].label.clone(),
            violation: p1.slack,
        });
    }
    let mut x = p1.x.clone();
    let mut objective_skipped = false;
    if let Some(c) = &problem.objective {
        // Relax thin interiors so the barrier has room to move.
        let relax = if p1.slack > -1e-7 { p1.slack.max(0.0) + 0.5 * opts.feas_tol } else { 0.0 };
        if relax > 0.0 && p1.slack > 0.0 {
            objective_skipped = true;
        } else {
            let scales: Vec<f64> = problem.blocks.iter().map(block_scale).collect();
            let mut blocks = Vec::new();
            let mut dim_total = 0;
            for (b, sc) in problem.blocks.iter().zip(&scales) {
                let size = b.size();
                let f0 = (&b.f0 + DMatrix::identity(size, size) * b.margin) / *sc
                    - DMatrix::identity(size, size) * relax;
                let terms = b.terms.iter().map(|(v, f)| (*v, f / *sc)).collect();
                blocks.push((f0, terms));
                dim_total += size;
            }
            push_box(&mut blocks, &mut dim_total, n, opts.box_bound);
            let bar = Barrier { blocks, c: c.clone(), dim_total };
            let gap_tol = opts.gap_tol;
            let target = move |x: &DVector<f64>| gap_tol * (1.0 + c.dot(x).abs());
            let never = |_: &DVector<f64>| false;
            let converged = bar.minimize(&mut x, 2, opts, &target, &never, &mut trace)?;
            if !converged {
                return Err(LmiError::NonConvergence { trace });
            }
            if let Some(v) = (0..n).find(|&v| x[v].abs() > 0.5 * opts.box_bound) {
                return Err(LmiError::Unbounded { variable: v });
            }
        }
    }
    let checks = verify(problem, &x, opts.feas_tol);
    if let Some(bad) = checks.iter().find(|c| !c.ok) {
        return Err(LmiError::VerificationFailed {
            block: bad.label.clone(),
            residual: bad.max_eigenvalue - bad.allowed,
        });
    }
    let block_residuals = problem
        .blocks
        .iter()
        .map(|b| linalg::sym_max_eigenvalue(&b.eval(&x)) + b.margin)
        .collect();
    Ok(LmiSolution {
        objective_value: problem.objective.as_ref().map(|c| c.dot(&x)),
        block_residuals,
        slack: p1.slack,
        iterations: trace.iter().map(|t| t.newton_steps).sum(),
        trace,
        objective_skipped,
        x,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maximize_scalar_under_identity_bound() {
        let mut p = LmiProblem::new();
        let x = p.add_scalar();
        let mut b = LmiBlock::new("x I - I", 2);
        b.add_constant(&-DMatrix::identity(2, 2));
        b.add_term(x, &DMatrix::identity(2, 2));
        p.add_block(b);
        p.maximize(&[(x, 1.0)]);
        let s = solve(&p, &SolverOptions::default()).unwrap();
        assert!((s.x[x] - 1.0).abs() < 1e-6, "{}", s.x[x]);
    }

    #[test]
    fn zero_interior_feasible() {
        let mut p = LmiProblem::new();
        let v = p.add_symmetric(2);
        let mut pos = LmiBlock::new("P >= 0", 2);
        pos.add_sym(&v, |e| -e);
        let mut neg = LmiBlock::new("-P >= 0", 2);
        neg.add_sym(&v, |e| e.clone());
        p.add_block(pos);
        p.add_block(neg);
        let s = solve(&p, &SolverOptions::default()).unwrap();
        assert!(linalg::max_abs(&v.value(&s.x)) < 1e-8);
    }

    #[test]
    fn scalar_infeasible() {
        // x ≤ -1 and x ≥ 1.
        let mut p = LmiProblem::new();
        let x = p.add_scalar();
        let mut a = LmiBlock::new("x <= -1", 1);
        a.add_constant(&DMatrix::from_element(1, 1, 1.0));
        a.add_term(x, &DMatrix::from_element(1, 1, 1.0));
        let mut b = LmiBlock::new("x >= 1", 1);
        b.add_constant(&DMatrix::from_element(1, 1, 1.0));
        b.add_term(x, &DMatrix::from_element(1, 1, -1.0));
        p.add_block(a);
        p.add_block(b);
        match solve(&p, &SolverOptions::default()) {
            Err(LmiError::Infeasible { violation, .. }) => assert!(violation > 0.1),
            other => panic!("{other:?}"),
        }
        let (s, _) = feasibility_slack(&p, &SolverOptions::default()).unwrap();
        assert!((s - 1.0 / 2.0).abs() < 1e-6, "{s}");
    }

    #[test]
    fn unbounded_detected() {
        let mut p = LmiProblem::new();
        let x = p.add_scalar();
        let mut b = LmiBlock::new("-x <= 0", 1);
        b.add_term(x, &DMatrix::from_element(1, 1, -1.0));
        p.add_block(b);
        p.maximize(&[(x, 1.0)]);
        assert!(matches!(solve(&p, &SolverOptions::default()), Err(LmiError::Unbounded { .. })));
    }

    #[test]
    fn margin_is_respected() {
        let mut p = LmiProblem::new();
        let x = p.add_scalar();
        let mut b = LmiBlock::new("x I - I", 2);
        b.add_constant(&-DMatrix::identity(2, 2));
        b.add_term(x, &DMatrix::identity(2, 2));
        b.margin = 0.25;
        p.add_block(b);
        p.maximize(&[(x, 1.0)]);
        let s = solve(&p, &SolverOptions::default()).unwrap();
        assert!((s.x[x] - 0.75).abs() < 1e-6);
    }

    #[test]
    fn malformed_rejected() {
        let mut p = LmiProblem::new();
        let x = p.add_scalar();
        let mut b = LmiBlock::new("asym", 2);
        b.add_term(x, &DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]));
        p.add_block(b);
        assert!(matches!(solve(&p, &SolverOptions::default()), Err(LmiError::Malformed(_))));
    }

    #[test]
    fn sym_var_roundtrip() {
        let v = SymVar { offset: 1, dim: 3 };
        let m = DMatrix::from_row_slice(3, 3, &[1., 2., 3., 2., 4., 5., 3., 5., 6.]);
        let mut x = DVector::zeros(7);
        v.encode(&m, &mut x);
        assert_eq!(v.value(&x), m);
    }
}
