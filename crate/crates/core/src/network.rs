//! Interconnection graphs and compositional stability from channel-wise
//! passivity indices.
//!
//! A pairing `((i, j), (a, b))` closes the loop `u_{i,j} = y_{a,b}`,
//! `u_{a,b} = −y_{i,j}`. Summing the channel-wise supplies over the network
//! cancels the cross terms, leaving per pairing
//! `−(ρ_{i,j}+ν_{a,b}) y_{i,j}² − (ρ_{a,b}+ν_{i,j}) y_{a,b}²`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::certify::lmi::{self, LmiBlock, LmiError, LmiProblem, SolverOptions, SymVar};
use crate::certify::{self, DissipativityCertificate, PassivityIndices, NONSTRICT_TOL};
use crate::error::{Error, Result};
use crate::linalg;
use crate::lti::{self, StateSpaceModel};
use crate::realization::{self, IdentificationDiagnostics, MinimalRealization};
use crate::signals::Trajectory;

/// Pairing-constraint tolerance used by the case study.
pub const DEFAULT_TOLERANCE: f64 = 1e-3;
/// Bound on every index in the joint program.
pub const INDEX_BOX: f64 = 1e3;
/// Lower bound `P ⪰ εI` on storage matrices (balanced coordinates).
pub const STORAGE_FLOOR: f64 = 1e-8;
/// Strictness used when testing the asymptotic variant.
pub const STRICT_MARGIN: f64 = 1e-6;

/// `(subsystem, channel)`, 0-based.
pub type Channel = (usize, usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ChannelPairing {
    /// Receives `+y` of `second`.
    pub first: Channel,
    /// Receives `−y` of `first`.
    pub second: Channel,
}

impl fmt::Display for ChannelPairing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({},{})-({},{})",
            self.first.0 + 1,
            self.first.1 + 1,
            self.second.0 + 1,
            self.second.1 + 1
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InterconnectionGraph {
    pub channel_counts: Vec<usize>,
    pub pairings: Vec<ChannelPairing>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GraphViolation {
    Unpaired { subsystem: usize, channel: usize },
    MultiplyPaired { subsystem: usize, channel: usize, count: usize },
    SelfPairing { pairing: usize },
    UnknownChannel { pairing: usize, subsystem: usize, channel: usize },
}

impl fmt::Display for GraphViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphViolation::Unpaired { subsystem, channel } => {
                write!(f, "channel ({},{}) is not paired", subsystem + 1, channel + 1)
            }
            GraphViolation::MultiplyPaired { subsystem, channel, count } => {
                write!(f, "channel ({},{}) appears in {count} pairings", subsystem + 1, channel + 1)
            }
            GraphViolation::SelfPairing { pairing } => {
                write!(f, "pairing {} connects a subsystem to itself", pairing + 1)
            }
            GraphViolation::UnknownChannel { pairing, subsystem, channel } => write!(
                f,
                "pairing {} references unknown channel ({},{})",
                pairing + 1,
                subsystem + 1,
                channel + 1
            ),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct PairingJson {
    first: [usize; 2],
    second: [usize; 2],
}

impl InterconnectionGraph {
    pub fn new(channel_counts: Vec<usize>, pairings: Vec<ChannelPairing>) -> Self {
        Self { channel_counts, pairings }
    }

    pub fn subsystems(&self) -> usize {
        self.channel_counts.len()
    }

    /// Parses the 1-based JSON pairing list. Channel counts are inferred
    /// from the largest channel index per subsystem unless given.
    pub fn from_json(text: &str, channel_counts: Option<Vec<usize>>) -> Result<Self> {
        let raw: Vec<PairingJson> = serde_json::from_str(text)?;
        let mut pairings = Vec::with_capacity(raw.len());
        for (k, p) in raw.iter().enumerate() {
            if p.first.iter().chain(&p.second).any(|&v| v == 0) {
                return Err(Error::validation(format!("pairing {}: indices are 1-based", k + 1)));
            }
            pairings.push(ChannelPairing {
                first: (p.first[0] - 1, p.first[1] - 1),
                second: (p.second[0] - 1, p.second[1] - 1),
            });
        }
        let counts = match channel_counts {
            Some(c) => c,
            None => {
                let n = pairings
                    .iter()
                    .flat_map(|p| [p.first.0, p.second.0])
                    .max()
                    .map_or(0, |v| v + 1);
                let mut c = vec![0; n];
                for p in &pairings {
                    for (s, ch) in [p.first, p.second] {
                        c[s] = c[s].max(ch + 1);
                    }
                }
                c
            }
        };
        Ok(Self::new(counts, pairings))
    }

    pub fn to_json(&self) -> String {
        let raw: Vec<PairingJson> = self
            .pairings
            .iter()
            .map(|p| PairingJson {
                first: [p.first.0 + 1, p.first.1 + 1],
                second: [p.second.0 + 1, p.second.1 + 1],
            })
            .collect();
        serde_json::to_string_pretty(&raw).expect("plain data serializes")
    }

    /// `(sign, source)` feeding input channel `ch`: `u_ch = sign · y_source`.
    pub fn source_of(&self, ch: Channel) -> Option<(f64, Channel)> {
        self.pairings.iter().find_map(|p| {
            if p.first == ch {
                Some((1.0, p.second))
            } else if p.second == ch {
                Some((-1.0, p.first))
            } else {
                None
            }
        })
    }
}

/// Checks exactly-once coverage of every channel and the absence of self loops.
pub fn validate_graph(g: &InterconnectionGraph) -> std::result::Result<(), Vec<GraphViolation>> {
    let mut v = Vec::new();
    let mut counts: Vec<Vec<usize>> = g.channel_counts.iter().map(|&m| vec![0; m]).collect();
    for (k, p) in g.pairings.iter().enumerate() {
        if p.first.0 == p.second.0 {
            v.push(GraphViolation::SelfPairing { pairing: k });
        }
        for (s, ch) in [p.first, p.second] {
            match counts.get_mut(s).and_then(|c| c.get_mut(ch)) {
                Some(c) => *c += 1,
                None => v.push(GraphViolation::UnknownChannel { pairing: k, subsystem: s, channel: ch }),
            }
        }
    }
    for (s, cs) in counts.iter().enumerate() {
        for (ch, &c) in cs.iter().enumerate() {
            match c {
                1 => {}
                0 => v.push(GraphViolation::Unpaired { subsystem: s, channel: ch }),
                _ => v.push(GraphViolation::MultiplyPaired { subsystem: s, channel: ch, count: c }),
            }
        }
    }
    if v.is_empty() {
        Ok(())
    } else {
        Err(v)
    }
}

fn require_valid(g: &InterconnectionGraph) -> Result<()> {
    validate_graph(g).map_err(|v| {
        Error::validation(format!(
            "invalid interconnection graph: {}",
            v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
        ))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairingMargin {
    /// 1-based `[i, j]`.
    pub first: [usize; 2],
    pub second: [usize; 2],
    /// `ρ_{i,j} + ν_{a,b}`.
    pub first_margin: f64,
    /// `ρ_{a,b} + ν_{i,j}`.
    pub second_margin: f64,
}

impl PairingMargin {
    pub fn min(&self) -> f64 {
        self.first_margin.min(self.second_margin)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityCheck {
    pub margins: Vec<PairingMargin>,
    pub passes: bool,
    pub strict: bool,
    pub tolerance: f64,
}

/// Evaluates both pairing sums once per pairing; passes when all are
/// `≥ −tolerance` (or `> tolerance` when `strict`).
pub fn check_stability(
    indices: &[PassivityIndices],
    g: &InterconnectionGraph,
    tolerance: f64,
    strict: bool,
) -> Result<StabilityCheck> {
    require_valid(g)?;
    let get = |ch: Channel| -> Result<(f64, f64)> {
        let idx = indices
            .get(ch.0)
            .ok_or_else(|| Error::validation(format!("no indices for subsystem {}", ch.0 + 1)))?;
        if ch.1 >= idx.rho.len() || ch.1 >= idx.nu.len() {
            return Err(Error::validation(format!(
                "no index for channel ({},{})",
                ch.0 + 1,
                ch.1 + 1
            )));
        }
        Ok((idx.rho[ch.1], idx.nu[ch.1]))
    };
    let mut margins = Vec::with_capacity(g.pairings.len());
    let mut passes = true;
    for p in &g.pairings {
        let (rho_f, nu_f) = get(p.first)?;
        let (rho_s, nu_s) = get(p.second)?;
        let m = PairingMargin {
            first: [p.first.0 + 1, p.first.1 + 1],
            second: [p.second.0 + 1, p.second.1 + 1],
            first_margin: rho_f + nu_s,
            second_margin: rho_s + nu_f,
        };
        let ok = if strict { m.min() > tolerance } else { m.min() >= -tolerance };
        passes &= ok;
        margins.push(m);
    }
    Ok(StabilityCheck { margins, passes, strict, tolerance })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Stable,
    AsymptoticallyStable,
    Undecided,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Stable => "stable",
            Verdict::AsymptoticallyStable => "asymptotically_stable",
            Verdict::Undecided => "undecided",
        })
    }
}

/// Observable, or every unobservable mode strictly inside the unit circle.
pub fn is_detectable(a: &DMatrix<f64>, c: &DMatrix<f64>, rel_tol: f64) -> Result<bool> {
    let n = a.nrows();
    let obs = lti::krylov_basis(&a.transpose(), &c.transpose(), rel_tol, None)?;
    if obs.ncols() == n {
        return Ok(true);
    }
    // Unobservable subspace: orthogonal complement of the observable one.
    let proj = DMatrix::<f64>::identity(n, n) - &obs * obs.transpose();
    let null = linalg::orth(&proj, 1e-6)?;
    let a_null = null.transpose() * a * &null;
    Ok(linalg::spectral_radius(&a_null) < 1.0 - 1e-9)
}

/// Upgrades a strict stability check to asymptotic stability when every
/// subsystem is observable or detectable.
pub fn check_asymptotic(
    models: &[MinimalRealization],
    indices: &[PassivityIndices],
    g: &InterconnectionGraph,
    tolerance: f64,
) -> Result<Verdict> {
    let strict = check_stability(indices, g, tolerance, true)?;
    if !strict.passes {
        let weak = check_stability(indices, g, tolerance, false)?;
        return Ok(if weak.passes { Verdict::Stable } else { Verdict::Undecided });
    }
    for m in models {
        if !is_detectable(&m.a, &m.c, linalg::DEFAULT_REL_TOL)? {
            return Ok(Verdict::Undecided);
        }
    }
    Ok(Verdict::AsymptoticallyStable)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum CostSelector {
    /// Maximize `Σρ + Σν`.
    SumAll,
    /// Maximize `min_i (−Σ_j ρ_{i,j})`.
    #[default]
    MaxMinRho,
    /// Maximize `Σρ`.
    SumRho,
    /// Maximize the smallest pairing margin.
    MaxMargin,
}

impl FromStr for CostSelector {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum-all" => Ok(Self::SumAll),
            "maxmin-rho" => Ok(Self::MaxMinRho),
            "sum-rho" => Ok(Self::SumRho),
            "max-margin" => Ok(Self::MaxMargin),
            other => Err(Error::validation(format!("unknown cost selector {other:?}"))),
        }
    }
}

impl fmt::Display for CostSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::SumAll => "sum-all",
            Self::MaxMinRho => "maxmin-rho",
            Self::SumRho => "sum-rho",
            Self::MaxMargin => "max-margin",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizedIndices {
    pub indices: Vec<PassivityIndices>,
    pub certificates: Vec<DissipativityCertificate>,
    pub objective: f64,
    pub iterations: usize,
}

struct SubsystemVars {
    p: SymVar,
    rho: Vec<usize>,
    nu: Vec<usize>,
    t_inv: DMatrix<f64>,
}

fn balanced(m: &MinimalRealization) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = m.order();
    certify::balancing_transform(&m.a, &m.b, &m.c)
        .unwrap_or_else(|| (DMatrix::identity(n, n), DMatrix::identity(n, n)))
}

fn scalar_block(label: String, constant: f64, terms: &[(usize, f64)]) -> LmiBlock {
    let mut b = LmiBlock::new(label, 1);
    b.add_constant(&DMatrix::from_element(1, 1, constant));
    for &(v, w) in terms {
        b.add_term(v, &DMatrix::from_element(1, 1, w));
    }
    b
}

fn local_blocks(prob: &mut LmiProblem, i: usize, m: &MinimalRealization, margin: f64) -> SubsystemVars {
    let (t, t_inv) = balanced(m);
    let a = &t_inv * &m.a * &t;
    let b = &t_inv * &m.b;
    let c = &m.c * &t;
    let n = m.order();
    let p = prob.add_symmetric(n);
    let ch = m.inputs();
    let rho: Vec<usize> = (0..ch).map(|_| prob.add_scalar()).collect();
    let nu: Vec<usize> = (0..ch).map(|_| prob.add_scalar()).collect();
    let mut blk = certify::indexed_qsr_block(format!("dissipation {}", i + 1), &a, &b, &c, &p, &rho, &nu);
    blk.margin = margin;
    prob.add_block(blk);
    let mut pos = LmiBlock::new(format!("P{} >= eps I", i + 1), n);
    pos.add_constant(&(DMatrix::identity(n, n) * STORAGE_FLOOR));
    pos.add_sym(&p, |e| -e);
    prob.add_block(pos);
    for j in 0..ch {
        for (v, name) in [(rho[j], "rho"), (nu[j], "nu")] {
            prob.add_block(scalar_block(format!("{name}({},{}) <= box", i + 1, j + 1), -INDEX_BOX, &[(v, 1.0)]));
            prob.add_block(scalar_block(format!("{name}({},{}) >= -box", i + 1, j + 1), -INDEX_BOX, &[(v, -1.0)]));
        }
    }
    SubsystemVars { p, rho, nu, t_inv }
}

fn extract(
    models: &[MinimalRealization],
    vars: &[SubsystemVars],
    x: &DVector<f64>,
    iterations: usize,
    margin: f64,
) -> Result<(Vec<PassivityIndices>, Vec<DissipativityCertificate>)> {
    let mut indices = Vec::new();
    let mut certs = Vec::new();
    for (m, v) in models.iter().zip(vars) {
        let idx = PassivityIndices::new(
            v.rho.iter().map(|&k| x[k]).collect(),
            v.nu.iter().map(|&k| x[k]).collect(),
        )?;
        let supply = certify::supply_from_indices(&idx)?;
        let p = linalg::symmetrize(&(v.t_inv.transpose() * v.p.value(x) * &v.t_inv));
        let chk = certify::check_certificate(&m.a, &m.b, &m.c, &p, &supply, NONSTRICT_TOL)?;
        if !chk.ok || chk.p_min_eigenvalue <= 0.0 {
            return Err(LmiError::VerificationFailed {
                block: "joint certificate (original coordinates)".into(),
                residual: chk.lmi_max_eigenvalue,
            }
            .into());
        }
        certs.push(DissipativityCertificate {
            p,
            supply,
            lmi_residual: chk.lmi_max_eigenvalue,
            margin,
            strict: margin > 0.0 && chk.lmi_max_eigenvalue < 0.0,
            iterations,
        });
        indices.push(idx);
    }
    Ok((indices, certs))
}

fn check_models(models: &[MinimalRealization], g: &InterconnectionGraph) -> Result<()> {
    require_valid(g)?;
    if models.len() != g.subsystems() {
        return Err(Error::validation(format!(
            "{} models for {} subsystems",
            models.len(),
            g.subsystems()
        )));
    }
    for (i, m) in models.iter().enumerate() {
        if m.inputs() != m.outputs() || m.inputs() != g.channel_counts[i] {
            return Err(Error::validation(format!(
                "subsystem {} has {} inputs / {} outputs, graph expects {} channels",
                i + 1,
                m.inputs(),
                m.outputs(),
                g.channel_counts[i]
            )));
        }
    }
    Ok(())
}

/// Joint program over storage matrices and channel-wise indices.
pub fn optimize_indices(
    models: &[MinimalRealization],
    g: &InterconnectionGraph,
    cost: CostSelector,
    tolerance: f64,
) -> Result<OptimizedIndices> {
    optimize_with_margin(models, g, cost, tolerance, 0.0)
}

fn optimize_with_margin(
    models: &[MinimalRealization],
    g: &InterconnectionGraph,
    cost: CostSelector,
    tolerance: f64,
    lmi_margin: f64,
) -> Result<OptimizedIndices> {
    check_models(models, g)?;
    let mut prob = LmiProblem::new();
    let vars: Vec<SubsystemVars> = models
        .iter()
        .enumerate()
        .map(|(i, m)| local_blocks(&mut prob, i, m, lmi_margin))
        .collect();
    let epi = match cost {
        CostSelector::MaxMinRho | CostSelector::MaxMargin => Some(prob.add_scalar()),
        _ => None,
    };
    for p in &g.pairings {
        let (i, j) = p.first;
        let (a, b) = p.second;
        let pairs = [
            (vars[i].rho[j], vars[a].nu[b], "first"),
            (vars[a].rho[b], vars[i].nu[j], "second"),
        ];
        for (r, n, side) in pairs {
            prob.add_block(scalar_block(format!("pairing {p} {side}"), -tolerance, &[(r, -1.0), (n, -1.0)]));
            if cost == CostSelector::MaxMargin {
                let t = epi.expect("epigraph variable");
                prob.add_block(scalar_block(format!("margin epigraph {p} {side}"), 0.0, &[(t, 1.0), (r, -1.0), (n, -1.0)]));
            }
        }
    }
    match cost {
        CostSelector::SumAll => {
            let terms: Vec<(usize, f64)> = vars
                .iter()
                .flat_map(|v| v.rho.iter().chain(&v.nu).map(|&k| (k, 1.0)))
                .collect();
            prob.maximize(&terms);
        }
        CostSelector::SumRho => {
            let terms: Vec<(usize, f64)> = vars.iter().flat_map(|v| v.rho.iter().map(|&k| (k, 1.0))).collect();
            prob.maximize(&terms);
        }
        CostSelector::MaxMinRho => {
            let t = epi.expect("epigraph variable");
            for (i, v) in vars.iter().enumerate() {
                // t ≤ −Σ_j ρ_{i,j}
                let mut terms = vec![(t, 1.0)];
                terms.extend(v.rho.iter().map(|&k| (k, 1.0)));
                prob.add_block(scalar_block(format!("maxmin epigraph {}", i + 1), 0.0, &terms));
            }
            prob.maximize(&[(t, 1.0)]);
        }
        CostSelector::MaxMargin => {
            let t = epi.expect("epigraph variable");
            prob.add_block(scalar_block("margin epigraph bound".into(), -INDEX_BOX, &[(t, 1.0)]));
            prob.maximize(&[(t, 1.0)]);
        }
    }
    let sol = lmi::solve(&prob, &SolverOptions::default())?;
    let (indices, certificates) = extract(models, &vars, &sol.x, sol.iterations, lmi_margin)?;
    Ok(OptimizedIndices {
        indices,
        certificates,
        objective: -sol.objective_value.unwrap_or(0.0),
        iterations: sol.iterations,
    })
}

fn add_trace_bound(prob: &mut LmiProblem, i: usize, v: &SubsystemVars) {
    let n = v.p.dim;
    let mut b = LmiBlock::new(format!("trace P{}", i + 1), 1);
    b.add_constant(&DMatrix::from_element(1, 1, -(n as f64)));
    b.add_sym(&v.p, |e| DMatrix::from_element(1, 1, e.trace()));
    prob.add_block(b);
}

/// Indices of one subsystem on its own: maximizes the smallest self margin
/// `min_j (ρ_j + ν_j)` with the storage normalized by `tr P̃ ≤ n`.
pub fn optimize_local_indices(model: &MinimalRealization) -> Result<(PassivityIndices, DissipativityCertificate)> {
    if model.inputs() != model.outputs() {
        return Err(Error::validation("channel-wise indices need as many inputs as outputs"));
    }
    let mut prob = LmiProblem::new();
    let v = local_blocks(&mut prob, 0, model, 0.0);
    add_trace_bound(&mut prob, 0, &v);
    let t = prob.add_scalar();
    prob.add_block(scalar_block("margin epigraph bound".into(), -INDEX_BOX, &[(t, 1.0)]));
    for j in 0..model.inputs() {
        prob.add_block(scalar_block(format!("self margin {}", j + 1), 0.0, &[(t, 1.0), (v.rho[j], -1.0), (v.nu[j], -1.0)]));
    }
    prob.maximize(&[(t, 1.0)]);
    let sol = lmi::solve(&prob, &SolverOptions::default())?;
    let (mut idx, mut cert) = extract(std::slice::from_ref(model), std::slice::from_ref(&v), &sol.x, sol.iterations, 0.0)?;
    Ok((idx.remove(0), cert.remove(0)))
}

/// Block-coordinate variant: each subsystem re-solves its own LMI with the
/// neighbours' indices frozen, maximizing its worst pairing margin, in
/// round-robin until the margins move less than `1e-6`. Each local storage
/// is normalized by `tr P̃ ≤ n` (balanced coordinates) to fix its scale.
pub fn optimize_indices_distributed(
    models: &[MinimalRealization],
    g: &InterconnectionGraph,
    tolerance: f64,
    max_rounds: usize,
) -> Result<OptimizedIndices> {
    check_models(models, g)?;
    let n_sub = models.len();
    // Start from independent local solutions.
    let mut indices: Vec<PassivityIndices> = Vec::with_capacity(n_sub);
    for m in models {
        indices.push(optimize_local_indices(m)?.0);
    }
    let mut certificates = Vec::new();
    let mut iterations = 0;
    let mut last_worst = f64::NEG_INFINITY;
    for _ in 0..max_rounds.max(1) {
        certificates.clear();
        for (i, m) in models.iter().enumerate() {
            let mut prob = LmiProblem::new();
            let v = local_blocks(&mut prob, i, m, 0.0);
            add_trace_bound(&mut prob, i, &v);
            let t = prob.add_scalar();
            prob.add_block(scalar_block("margin epigraph bound".into(), -INDEX_BOX, &[(t, 1.0)]));
            for p in &g.pairings {
                let touches_first = p.first.0 == i;
                let touches_second = p.second.0 == i;
                if !(touches_first || touches_second) {
                    continue;
                }
                let (own, other) = if touches_first { (p.first, p.second) } else { (p.second, p.first) };
                let (o_rho, o_nu) = (indices[other.0].rho[other.1], indices[other.0].nu[other.1]);
                // ρ_own + ν_other ≥ t and ρ_other + ν_own ≥ t.
                prob.add_block(scalar_block(format!("local {p} a"), -o_nu, &[(t, 1.0), (v.rho[own.1], -1.0)]));
                prob.add_block(scalar_block(format!("local {p} b"), -o_rho, &[(t, 1.0), (v.nu[own.1], -1.0)]));
            }
            prob.maximize(&[(t, 1.0)]);
            let sol = lmi::solve(&prob, &SolverOptions::default())?;
            iterations += sol.iterations;
            let (mut idx, mut cert) = extract(std::slice::from_ref(m), std::slice::from_ref(&v), &sol.x, sol.iterations, 0.0)?;
            indices[i] = idx.remove(0);
            certificates.push(cert.remove(0));
        }
        let worst = check_stability(&indices, g, tolerance, false)?
            .margins
            .iter()
            .map(|m| m.min())
            .fold(f64::INFINITY, f64::min);
        let settled = (worst - last_worst).abs() < 1e-6;
        last_worst = worst;
        if settled {
            break;
        }
    }
    Ok(OptimizedIndices { objective: last_worst, indices, certificates, iterations })
}

/// `x⁺ = A_cl x` with every input replaced through the pairing law.
pub fn closed_loop_matrix(models: &[StateSpaceModel], g: &InterconnectionGraph) -> Result<DMatrix<f64>> {
    require_valid(g)?;
    if models.len() != g.subsystems() {
        return Err(Error::validation("model count differs from graph"));
    }
    let offsets: Vec<usize> = models
        .iter()
        .scan(0, |acc, m| {
            let o = *acc;
            *acc += m.order();
            Some(o)
        })
        .collect();
    let total: usize = models.iter().map(|m| m.order()).sum();
    let mut a = DMatrix::zeros(total, total);
    for (i, m) in models.iter().enumerate() {
        a.view_mut((offsets[i], offsets[i]), (m.order(), m.order())).copy_from(&m.a);
        for j in 0..m.inputs() {
            let (sign, (s, ch)) = g
                .source_of((i, j))
                .ok_or_else(|| Error::validation(format!("input ({},{}) is unpaired", i + 1, j + 1)))?;
            let src = &models[s];
            if ch >= src.outputs() {
                return Err(Error::validation("pairing references a missing output"));
            }
            let coupling = m.b.column(j) * src.c.row(ch) * sign;
            let mut blk = a.view_mut((offsets[i], offsets[s]), (m.order(), src.order()));
            blk += coupling;
        }
    }
    Ok(a)
}

/// Per-pairing quadratic forms `−(ρ_{i,j}+ν_{a,b}) y_{i,j}² − (ρ_{a,b}+ν_{i,j}) y_{a,b}²`
/// summed over the graph, for one time instant's outputs.
pub fn pairing_supply_sum(indices: &[PassivityIndices], g: &InterconnectionGraph, ys: &[DVector<f64>]) -> f64 {
    g.pairings
        .iter()
        .map(|p| {
            let (i, j) = p.first;
            let (a, b) = p.second;
            let yf = ys[i][j];
            let ysec = ys[a][b];
            -(indices[i].rho[j] + indices[a].nu[b]) * yf * yf - (indices[a].rho[b] + indices[i].nu[j]) * ysec * ysec
        })
        .sum()
}

/// Inputs implied by the pairing law for given outputs.
pub fn interconnection_inputs(g: &InterconnectionGraph, ys: &[DVector<f64>]) -> Vec<DVector<f64>> {
    g.channel_counts
        .iter()
        .enumerate()
        .map(|(i, &m)| {
            DVector::from_fn(m, |j, _| {
                let (sign, (s, ch)) = g.source_of((i, j)).expect("validated graph");
                sign * ys[s][ch]
            })
        })
        .collect()
}

/// Per-subsystem data for [`certify_network`].
#[derive(Debug, Clone)]
pub struct SubsystemData {
    pub name: String,
    pub u: Trajectory,
    pub y: Trajectory,
    pub lag: usize,
    pub order: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsystemReport {
    pub name: String,
    pub identification: Option<IdentificationDiagnostics>,
    pub model: Option<MinimalRealization>,
    pub indices: Option<PassivityIndices>,
    pub certificate: Option<DissipativityCertificate>,
    pub error: Option<String>,
}

/// Indices and certificates proving the strict variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrictWitness {
    pub indices: Vec<PassivityIndices>,
    pub certificates: Vec<DissipativityCertificate>,
    pub margins: Vec<PairingMargin>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkCertificate {
    pub subsystems: Vec<SubsystemReport>,
    pub margins: Vec<PairingMargin>,
    pub verdict: Verdict,
    pub tolerance: f64,
    pub cost: CostSelector,
    pub strict_witness: Option<StrictWitness>,
    pub diagnostics: Vec<String>,
}

impl NetworkCertificate {
    pub fn indices(&self) -> Option<Vec<PassivityIndices>> {
        self.subsystems.iter().map(|s| s.indices.clone()).collect()
    }

    pub fn models(&self) -> Option<Vec<MinimalRealization>> {
        self.subsystems.iter().map(|s| s.model.clone()).collect()
    }

    pub fn certificates(&self) -> Option<Vec<DissipativityCertificate>> {
        self.subsystems.iter().map(|s| s.certificate.clone()).collect()
    }
}

#[derive(Debug, Clone)]
pub struct NetworkOptions {
    pub tolerance: f64,
    pub cost: CostSelector,
    pub rel_tol: f64,
}

impl Default for NetworkOptions {
    fn default() -> Self {
        Self { tolerance: DEFAULT_TOLERANCE, cost: CostSelector::default(), rel_tol: linalg::DEFAULT_REL_TOL }
    }
}

fn is_soft_failure(e: &Error) -> bool {
    matches!(
        e,
        Error::Informativity { .. } | Error::Reduction(_) | Error::Lmi(_) | Error::Numerical(_)
    )
}

/// Identifies every subsystem from data and combines the certificates.
/// Informativity, reduction and LMI failures yield an undecided verdict;
/// only malformed input is an error.
pub fn certify_network(
    data: &[SubsystemData],
    g: &InterconnectionGraph,
    opts: &NetworkOptions,
) -> Result<NetworkCertificate> {
    require_valid(g)?;
    if data.len() != g.subsystems() {
        return Err(Error::validation(format!(
            "{} datasets for {} subsystems",
            data.len(),
            g.subsystems()
        )));
    }
    for (i, d) in data.iter().enumerate() {
        d.u.check_aligned(&d.y, &d.name)?;
        if d.u.channels() != g.channel_counts[i] || d.y.channels() != g.channel_counts[i] {
            return Err(Error::validation(format!(
                "{}: data has {} inputs / {} outputs, graph expects {}",
                d.name,
                d.u.channels(),
                d.y.channels(),
                g.channel_counts[i]
            )));
        }
    }
    let mut reports: Vec<SubsystemReport> = data
        .iter()
        .map(|d| SubsystemReport {
            name: d.name.clone(),
            identification: None,
            model: None,
            indices: None,
            certificate: None,
            error: None,
        })
        .collect();
    let mut diagnostics = Vec::new();
    let undecided = |reports: Vec<SubsystemReport>, diagnostics: Vec<String>| NetworkCertificate {
        subsystems: reports,
        margins: Vec::new(),
        verdict: Verdict::Undecided,
        tolerance: opts.tolerance,
        cost: opts.cost,
        strict_witness: None,
        diagnostics,
    };

    let mut models = Vec::with_capacity(data.len());
    for (d, rep) in data.iter().zip(reports.iter_mut()) {
        match realization::identify(&d.u, &d.y, d.lag, d.order, opts.rel_tol) {
            Ok(id) => {
                rep.identification = Some(id.diagnostics.clone());
                rep.model = Some(id.minimal.clone());
                models.push(id.minimal);
            }
            Err(e) if is_soft_failure(&e) => {
                diagnostics.push(format!("{}: identification failed: {e}", d.name));
                rep.error = Some(e.to_string());
            }
            Err(e) => return Err(e),
        }
    }
    if models.len() != data.len() {
        return Ok(undecided(reports, diagnostics));
    }
    for (i, m) in models.iter().enumerate() {
        if m.inputs() != m.outputs() {
            diagnostics.push(format!("{}: non-square realization", data[i].name));
            return Ok(undecided(reports, diagnostics));
        }
    }

    let opt = match optimize_indices(&models, g, opts.cost, opts.tolerance) {
        Ok(o) => o,
        Err(e) if is_soft_failure(&e) => {
            diagnostics.push(format!("index optimization failed: {e}"));
            return Ok(undecided(reports, diagnostics));
        }
        Err(e) => return Err(e),
    };
    for (rep, (idx, cert)) in reports.iter_mut().zip(opt.indices.iter().zip(&opt.certificates)) {
        rep.indices = Some(idx.clone());
        rep.certificate = Some(cert.clone());
    }
    let weak = check_stability(&opt.indices, g, opts.tolerance, false)?;
    let mut cert = NetworkCertificate {
        subsystems: reports,
        margins: weak.margins.clone(),
        verdict: if weak.passes { Verdict::Stable } else { Verdict::Undecided },
        tolerance: opts.tolerance,
        cost: opts.cost,
        strict_witness: None,
        diagnostics,
    };
    if !weak.passes {
        cert.diagnostics.push("pairing margins violate the tolerance".into());
        return Ok(cert);
    }

    // Strict variant: reuse the cost-optimal indices when already strict,
    // otherwise search for the largest uniform margin.
    let strict_now = check_stability(&opt.indices, g, opts.tolerance, true)?;
    let witness = if strict_now.passes && opt.certificates.iter().all(|c| c.lmi_residual < 0.0) {
        Some(StrictWitness {
            indices: opt.indices.clone(),
            certificates: opt.certificates.clone(),
            margins: strict_now.margins,
        })
    } else {
        match optimize_with_margin(&models, g, CostSelector::MaxMargin, opts.tolerance, STRICT_MARGIN) {
            Ok(o) => {
                let chk = check_stability(&o.indices, g, opts.tolerance, true)?;
                if chk.passes {
                    Some(StrictWitness { indices: o.indices, certificates: o.certificates, margins: chk.margins })
                } else {
                    cert.diagnostics.push("strict pairing margins not attainable".into());
                    None
                }
            }
            Err(e) if is_soft_failure(&e) => {
                cert.diagnostics.push(format!("strict variant failed: {e}"));
                None
            }
            Err(e) => return Err(e),
        }
    };
    if let Some(w) = witness {
        if check_asymptotic(&models, &w.indices, g, opts.tolerance)? == Verdict::AsymptoticallyStable {
            cert.verdict = Verdict::AsymptoticallyStable;
        } else {
            cert.diagnostics.push("strict margins hold but a subsystem is not detectable".into());
        }
        cert.strict_witness = Some(w);
    }
    Ok(cert)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(i: usize, j: usize, a: usize, b: usize) -> ChannelPairing {
        ChannelPairing { first: (i, j), second: (a, b) }
    }

    pub(crate) fn microgrid_graph() -> InterconnectionGraph {
        InterconnectionGraph::new(
            vec![2, 2, 2, 2],
            vec![pair(0, 1, 1, 0), pair(1, 1, 2, 0), pair(2, 1, 3, 0), pair(3, 1, 0, 0)],
        )
    }

    #[test]
    fn graph_examples() {
        let g = InterconnectionGraph::new(vec![1, 1], vec![pair(0, 0, 1, 0)]);
        assert!(validate_graph(&g).is_ok());
        let g = InterconnectionGraph::new(vec![1, 1, 1], vec![pair(0, 0, 1, 0), pair(0, 0, 2, 0)]);
        let v = validate_graph(&g).unwrap_err();
        assert!(v.contains(&GraphViolation::MultiplyPaired { subsystem: 0, channel: 0, count: 2 }));
        assert!(validate_graph(&microgrid_graph()).is_ok());
        let g = InterconnectionGraph::new(vec![2], vec![pair(0, 0, 0, 1)]);
        assert!(validate_graph(&g).unwrap_err().contains(&GraphViolation::SelfPairing { pairing: 0 }));
        let g = InterconnectionGraph::new(vec![1, 2], vec![pair(0, 0, 1, 0)]);
        assert_eq!(validate_graph(&g).unwrap_err(), vec![GraphViolation::Unpaired { subsystem: 1, channel: 1 }]);
    }

    #[test]
    fn graph_json_is_one_based() {
        let text = r#"[{"first":[1,2],"second":[2,1]},{"first":[2,2],"second":[3,1]},
                       {"first":[3,2],"second":[4,1]},{"first":[4,2],"second":[1,1]}]"#;
        let g = InterconnectionGraph::from_json(text, None).unwrap();
        assert_eq!(g, microgrid_graph());
        let back = InterconnectionGraph::from_json(&g.to_json(), None).unwrap();
        assert_eq!(back, g);
        assert!(InterconnectionGraph::from_json(r#"[{"first":[0,1],"second":[2,1]}]"#, None).is_err());
    }

    #[test]
    fn stability_examples() {
        let g = microgrid_graph();
        let ones: Vec<PassivityIndices> = (0..4)
            .map(|_| PassivityIndices::new(vec![1.0, 1.0], vec![0.0, 0.0]).unwrap())
            .collect();
        assert!(check_stability(&ones, &g, 1e-3, true).unwrap().passes);

        let g2 = InterconnectionGraph::new(vec![1, 1], vec![pair(0, 0, 1, 0)]);
        let bad = vec![
            PassivityIndices::new(vec![0.0], vec![0.0]).unwrap(),
            PassivityIndices::new(vec![0.0], vec![-0.1]).unwrap(),
        ];
        let r = check_stability(&bad, &g2, 1e-3, false).unwrap();
        assert!(!r.passes);
        assert!((r.margins[0].first_margin + 0.1).abs() < 1e-15);
        assert!(check_stability(&bad[..1], &g2, 1e-3, false).is_err());
    }

    #[test]
    fn closed_loop_examples() {
        let one = |v: f64| DMatrix::from_element(1, 1, v);
        let s = StateSpaceModel::discrete(one(1.0), one(1.0), one(1.0), 1.0).unwrap();
        let g = InterconnectionGraph::new(vec![1, 1], vec![pair(0, 0, 1, 0)]);
        let a = closed_loop_matrix(&[s.clone(), s], &g).unwrap();
        assert_eq!(a, DMatrix::from_row_slice(2, 2, &[1.0, 1.0, -1.0, 1.0]));

        let z = StateSpaceModel::discrete(
            DMatrix::from_row_slice(2, 2, &[0.1, 0.2, 0.3, 0.4]),
            DMatrix::zeros(2, 1),
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            1.0,
        )
        .unwrap();
        let w = StateSpaceModel::discrete(one(0.7), one(0.0), one(2.0), 1.0).unwrap();
        let a = closed_loop_matrix(&[z.clone(), w], &g).unwrap();
        let mut expect = DMatrix::zeros(3, 3);
        expect.view_mut((0, 0), (2, 2)).copy_from(&z.a);
        expect[(2, 2)] = 0.7;
        assert_eq!(a, expect);
    }

    #[test]
    fn detectability_examples() {
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.3]);
        let c = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        assert!(is_detectable(&a, &c, 1e-8).unwrap());
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 1.0]);
        assert!(!is_detectable(&a, &c, 1e-8).unwrap());
    }

    #[test]
    fn check_asymptotic_examples() {
        let g = InterconnectionGraph::new(vec![1, 1], vec![pair(0, 0, 1, 0)]);
        let idx = vec![
            PassivityIndices::new(vec![0.5], vec![0.0]).unwrap(),
            PassivityIndices::new(vec![0.5], vec![0.0]).unwrap(),
        ];
        let obs = MinimalRealization::from_matrices(
            DMatrix::from_element(1, 1, 0.5),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap();
        let hidden = |lam: f64| MinimalRealization {
            a: DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, lam]),
            b: DMatrix::from_row_slice(2, 1, &[1.0, 1.0]),
            c: DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            t_co: DMatrix::identity(2, 2),
        };
        assert_eq!(check_asymptotic(&[obs.clone(), obs.clone()], &idx, &g, 1e-3).unwrap(), Verdict::AsymptoticallyStable);
        assert_eq!(check_asymptotic(&[obs.clone(), hidden(0.3)], &idx, &g, 1e-3).unwrap(), Verdict::AsymptoticallyStable);
        assert_eq!(check_asymptotic(&[obs, hidden(1.0)], &idx, &g, 1e-3).unwrap(), Verdict::Undecided);
    }

    #[test]
    fn cost_selector_names() {
        for c in [CostSelector::SumAll, CostSelector::MaxMinRho, CostSelector::SumRho, CostSelector::MaxMargin] {
            assert_eq!(c.to_string().parse::<CostSelector>().unwrap(), c);
        }
        assert!("bogus".parse::<CostSelector>().is_err());
    }

    fn scalar_min(a: f64, b: f64, c: f64) -> MinimalRealization {
        MinimalRealization::from_matrices(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, b),
            DMatrix::from_element(1, 1, c),
        )
        .unwrap()
    }

    #[test]
    fn local_indices_come_with_a_valid_certificate() {
        let s = scalar_min(0.5, 0.5, 0.5);
        let (idx, cert) = optimize_local_indices(&s).unwrap();
        let supply = certify::supply_from_indices(&idx).unwrap();
        let chk = certify::check_certificate(&s.a, &s.b, &s.c, &cert.p, &supply, 1e-9).unwrap();
        assert!(chk.ok && chk.p_min_eigenvalue > 0.0);
    }

    #[test]
    fn two_passive_systems_are_certified() {
        let g = InterconnectionGraph::new(vec![1, 1], vec![pair(0, 0, 1, 0)]);
        let s = scalar_min(0.5, 0.5, 0.5);
        let models = vec![s.clone(), s];
        let o = optimize_indices(&models, &g, CostSelector::MaxMinRho, 1e-3).unwrap();
        for idx in &o.indices {
            assert!(idx.rho[0] > 0.0, "{idx:?}");
        }
        assert!(check_stability(&o.indices, &g, 1e-3, false).unwrap().passes);
        for (m, c) in models.iter().zip(&o.certificates) {
            assert!(certify::check_certificate(&m.a, &m.b, &m.c, &c.p, &c.supply, NONSTRICT_TOL).unwrap().ok);
        }
    }

    #[test]
    fn expansive_pair_is_infeasible() {
        // y = 2·u(k−1)-like gains around a marginal integrator: the loop is unstable.
        let g = InterconnectionGraph::new(vec![1, 1], vec![pair(0, 0, 1, 0)]);
        let exp = scalar_min(0.0, 2.0, 1.0);
        let models = vec![exp.clone(), scalar_min(1.0, 1.0, 1.0)];
        let sys: Vec<StateSpaceModel> = models.iter().map(|m| m.to_model(1.0).unwrap()).collect();
        assert!(linalg::spectral_radius(&closed_loop_matrix(&sys, &g).unwrap()) > 1.0);
        assert!(matches!(optimize_indices(&models, &g, CostSelector::MaxMinRho, 0.0), Err(Error::Lmi(_))));
    }

    #[test]
    fn distributed_matches_feasibility() {
        let g = InterconnectionGraph::new(vec![1, 1], vec![pair(0, 0, 1, 0)]);
        let models = vec![scalar_min(0.5, 0.5, 0.5), scalar_min(0.3, 0.5, 0.5)];
        let o = optimize_indices_distributed(&models, &g, 1e-3, 20).unwrap();
        assert!(check_stability(&o.indices, &g, 1e-3, false).unwrap().passes);
        for (m, c) in models.iter().zip(&o.certificates) {
            assert!(certify::check_certificate(&m.a, &m.b, &m.c, &c.p, &c.supply, NONSTRICT_TOL).unwrap().ok);
        }
    }
}
