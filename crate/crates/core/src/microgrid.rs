//! Four-area DC microgrid with PI-controlled converters, RL lines and ZI
//! loads, sampled by zero-order hold, with generation-unit outage scenarios.
//!
//! Area state is `(i_g, v_g, z_g, i_line)`; outputs are `(v_g, i_line)`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::certify::PassivityIndices;
use crate::error::{Error, Result};
use crate::lti::{self, StateSpaceModel};
use crate::network::{self, ChannelPairing, InterconnectionGraph};
use crate::signals::Trajectory;

/// Sampling period of the case study (s).
pub const DEFAULT_TS: f64 = 3.4e-4;
/// Rank tolerance used for the simulated case-study data.
pub const CASE_STUDY_REL_TOL: f64 = 1e-10;
pub const INTACT_ORDER: usize = 4;
pub const INTACT_LAG: usize = 2;
pub const FAULTED_ORDER: usize = 2;
pub const FAULTED_LAG: usize = 1;
pub const AREAS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AreaMode {
    VoltageSetting,
    CurrentSetting,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaParameters {
    pub r: f64,
    pub l: f64,
    pub c: f64,
    pub r_load: f64,
    pub i_load: f64,
    /// Bus voltage (V) in voltage-setting mode, generator current (A) otherwise.
    pub setpoint: f64,
    pub k_prop: f64,
    pub k_integ: f64,
    pub mode: AreaMode,
}

impl AreaParameters {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("r", self.r), ("l", self.l), ("c", self.c), ("r_load", self.r_load)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::validation(format!("area parameter {name} must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("i_load", self.i_load),
            ("setpoint", self.setpoint),
            ("k_prop", self.k_prop),
            ("k_integ", self.k_integ),
        ] {
            if !v.is_finite() {
                return Err(Error::validation(format!("area parameter {name} is not finite")));
            }
        }
        Ok(())
    }

    pub fn with_gains(&self, k_prop: f64, k_integ: f64) -> Self {
        Self { k_prop, k_integ, ..self.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineParameters {
    pub r: f64,
    pub l: f64,
    /// 1-based area indices.
    pub endpoints: [usize; 2],
}

impl LineParameters {
    pub fn validate(&self) -> Result<()> {
        if !(self.r > 0.0 && self.l > 0.0) || !self.r.is_finite() || !self.l.is_finite() {
            return Err(Error::validation(format!(
                "line {:?} needs positive resistance and inductance",
                self.endpoints
            )));
        }
        Ok(())
    }
}

pub fn default_areas() -> Vec<AreaParameters> {
    let r = [0.2, 0.3, 0.5, 0.1];
    let l = [1.8e-3, 2.0e-3, 3.0e-3, 2.2e-3];
    let c = [2.2e-3, 1.9e-3, 2.5e-3, 1.7e-3];
    let r_load = [7.70, 12.84, 12.84, 9.63];
    let i_load = [16.45, 9.87, 9.87, 13.16];
    let setpoint = [380.0, 39.47, 39.47, 52.63];
    let k_prop = [2.1, 19.0, 35.0, 1.0];
    let k_integ = [60.0, 11.0, 14.0, 1.0];
    (0..AREAS)
        .map(|i| AreaParameters {
            r: r[i],
            l: l[i],
            c: c[i],
            r_load: r_load[i],
            i_load: i_load[i],
            setpoint: setpoint[i],
            k_prop: k_prop[i],
            k_integ: k_integ[i],
            mode: if i == 0 { AreaMode::VoltageSetting } else { AreaMode::CurrentSetting },
        })
        .collect()
}

/// Line embedded in each area's model, in area order.
pub fn default_lines() -> Vec<LineParameters> {
    vec![
        LineParameters { r: 0.70, l: 0.8e-3, endpoints: [1, 2] },
        LineParameters { r: 0.60, l: 1.0e-3, endpoints: [2, 3] },
        LineParameters { r: 0.80, l: 1.0e-3, endpoints: [3, 4] },
        LineParameters { r: 0.90, l: 0.7e-3, endpoints: [1, 4] },
    ]
}

/// `(k_prop, k_integ)` per area for the outage of the given area (2, 3 or 4).
pub fn fault_gains(fault_area: usize) -> Option<Vec<(f64, f64)>> {
    match fault_area {
        2 => Some(vec![(1.5, 100.0), (1.0, 1.0), (11.0, 9.0), (18.0, 12.0)]),
        3 => Some(vec![(1.5, 100.0), (29.0, 28.0), (1.0, 1.0), (18.0, 16.0)]),
        4 => Some(default_areas().iter().map(|a| (a.k_prop, a.k_integ)).collect()),
        _ => None,
    }
}

/// Reference channel-wise indices of the four areas with the default
/// parameters, before or after the fault. Rows are `ρ_{i,1}, ρ_{i,2}`,
/// `ν_{i,1}, ν_{i,2}`.
#[allow(clippy::approx_constant)] // table data, not 2/π
pub fn reference_indices(post_fault: bool) -> Vec<PassivityIndices> {
    const PRE: [[f64; 4]; AREAS] = [
        [0.6004, 0.6098, -1.2000, -0.4421],
        [0.4431, 0.5666, -0.6088, -0.4079],
        [0.4089, 0.8618, -0.5056, -0.5177],
        [0.5187, 1.2012, -0.8608, -0.5994],
    ];
    const POST: [[f64; 4]; AREAS] = [
        [0.5654, 0.6366, -1.0460, -0.4388],
        [0.4398, 0.5155, -0.6356, -0.4095],
        [0.4105, 0.8550, -0.5145, -0.4940],
        [0.4950, 1.0470, -0.8540, -0.5644],
    ];
    let rows = if post_fault { POST } else { PRE };
    rows.iter()
        .map(|r| PassivityIndices { rho: vec![r[0], r[1]], nu: vec![r[2], r[3]] })
        .collect()
}

/// `(1,2)↔(2,1)`, `(2,2)↔(3,1)`, `(3,2)↔(4,1)`, `(4,2)↔(1,1)`.
pub fn microgrid_graph() -> InterconnectionGraph {
    let pairings = (0..AREAS)
        .map(|i| ChannelPairing { first: (i, 1), second: ((i + 1) % AREAS, 0) })
        .collect();
    InterconnectionGraph::new(vec![2; AREAS], pairings)
}

fn area_matrices(p: &AreaParameters, line: &LineParameters) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DVector<f64>)> {
    p.validate()?;
    line.validate()?;
    let (r, l, c, rl) = (p.r, p.l, p.c, p.r_load);
    let (kp, ki, x) = (p.k_prop, p.k_integ, p.setpoint);
    let (rr, ll) = (line.r, line.l);
    #[rustfmt::skip]
    let a = match p.mode {
        AreaMode::VoltageSetting => DMatrix::from_row_slice(4, 4, &[
            -r / l, -(1.0 + kp) / l, 1.0 / l, 0.0,
            1.0 / c, -1.0 / (c * rl), 0.0, 1.0 / c,
            0.0, -ki, 0.0, 0.0,
            0.0, -1.0 / ll, 0.0, -rr / ll,
        ]),
        AreaMode::CurrentSetting => DMatrix::from_row_slice(4, 4, &[
            -(r + kp) / l, -1.0 / l, 1.0 / l, 0.0,
            1.0 / c, -1.0 / (c * rl), 0.0, 1.0 / c,
            -ki, 0.0, 0.0, 0.0,
            0.0, -1.0 / ll, 0.0, -rr / ll,
        ]),
    };
    #[rustfmt::skip]
    let b = DMatrix::from_row_slice(4, 2, &[
        0.0, 0.0,
        1.0 / c, 0.0,
        0.0, 0.0,
        0.0, 1.0 / ll,
    ]);
    let cm = DMatrix::from_row_slice(2, 4, &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    let d = DVector::from_column_slice(&[kp * x / l, -p.i_load / c, ki * x, 0.0]);
    Ok((a, b, cm, d))
}

/// Offset-carrying continuous-time model of an intact area.
pub fn build_area_model(p: &AreaParameters, line: &LineParameters) -> Result<StateSpaceModel> {
    let (a, b, c, d) = area_matrices(p, line)?;
    StateSpaceModel::continuous(a, b, c, Some(d))
}

const KEPT: [usize; 2] = [1, 3];

fn select(m: &DMatrix<f64>, rows: Option<&[usize]>, cols: Option<&[usize]>) -> DMatrix<f64> {
    let rs: Vec<usize> = rows.map_or_else(|| (0..m.nrows()).collect(), |r| r.to_vec());
    let cs: Vec<usize> = cols.map_or_else(|| (0..m.ncols()).collect(), |c| c.to_vec());
    DMatrix::from_fn(rs.len(), cs.len(), |i, j| m[(rs[i], cs[j])])
}

/// Area with its generation branch open: states `(v_g, i_line)` only.
pub fn build_post_fault_model(p: &AreaParameters, line: &LineParameters) -> Result<StateSpaceModel> {
    let (a, b, c, d) = area_matrices(p, line)?;
    StateSpaceModel::continuous(
        select(&a, Some(&KEPT), Some(&KEPT)),
        select(&b, Some(&KEPT), None),
        select(&c, None, Some(&KEPT)),
        Some(DVector::from_fn(2, |i, _| d[KEPT[i]])),
    )
}

/// Zero-mean uniform setpoint perturbation, as a fraction of the setpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dither {
    #[serde(default = "default_dither_amplitude")]
    pub amplitude: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_dither_amplitude() -> f64 {
    0.01
}

fn ser_fault<S: Serializer>(v: &Option<usize>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(a) => s.serialize_u64(*a as u64),
        None => s.serialize_str("none"),
    }
}

fn de_fault<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<usize>, D::Error> {
    use serde::de::Error as _;
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(usize),
        Text(String),
        Null(()),
    }
    match Raw::deserialize(d)? {
        Raw::Num(a) => Ok(Some(a)),
        Raw::Null(()) => Ok(None),
        Raw::Text(t) if t == "none" => Ok(None),
        Raw::Text(t) => t
            .trim_start_matches("sw")
            .parse()
            .map(Some)
            .map_err(|_| D::Error::custom(format!("fault_area must be none, 2, 3 or 4, got {t:?}"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    /// 1-based area whose generation unit is disconnected.
    #[serde(default = "default_fault_area", serialize_with = "ser_fault", deserialize_with = "de_fault")]
    pub fault_area: Option<usize>,
    #[serde(default = "default_fault_time")]
    pub fault_time: f64,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_ts")]
    pub ts: f64,
    /// Gap between the switching instant and the post-fault window (s).
    #[serde(default)]
    pub settle: f64,
    #[serde(default)]
    pub gains_override: Option<Vec<(f64, f64)>>,
    #[serde(default)]
    pub dither: Option<Dither>,
}

fn default_fault_area() -> Option<usize> {
    Some(4)
}
fn default_fault_time() -> f64 {
    25.0
}
fn default_horizon() -> f64 {
    60.0
}
fn default_ts() -> f64 {
    DEFAULT_TS
}

impl Default for Scenario {
    fn default() -> Self {
        Self::baseline()
    }
}

impl Scenario {
    /// Outage of area 4 with the default gains.
    pub fn baseline() -> Self {
        Self {
            fault_area: default_fault_area(),
            fault_time: default_fault_time(),
            horizon: default_horizon(),
            ts: DEFAULT_TS,
            settle: 0.0,
            gains_override: None,
            dither: None,
        }
    }

    pub fn no_fault() -> Self {
        Self { fault_area: None, ..Self::baseline() }
    }

    /// Outage of `area` (2, 3 or 4) with its tuned gains.
    pub fn switch(area: usize) -> Result<Self> {
        let gains = fault_gains(area).ok_or_else(|| Error::validation(format!("no switch scenario for area {area}")))?;
        Ok(Self { fault_area: Some(area), gains_override: Some(gains), ..Self::baseline() })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ts > 0.0) || !self.ts.is_finite() {
            return Err(Error::validation(format!("ts must be positive, got {}", self.ts)));
        }
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(Error::validation(format!("horizon must be positive, got {}", self.horizon)));
        }
        if let Some(a) = self.fault_area {
            if !(2..=AREAS).contains(&a) {
                return Err(Error::validation(format!("fault_area must be none, 2, 3 or 4, got {a}")));
            }
            if !(self.fault_time > 0.0 && self.fault_time < self.horizon) {
                return Err(Error::validation(format!(
                    "fault_time {} must lie in (0, horizon = {})",
                    self.fault_time, self.horizon
                )));
            }
            if !(self.settle >= 0.0) || self.fault_time + self.settle >= self.horizon {
                return Err(Error::validation("settle gap leaves no post-fault samples"));
            }
        }
        if let Some(g) = &self.gains_override {
            if g.len() != AREAS {
                return Err(Error::validation(format!("gains_override needs {AREAS} entries, got {}", g.len())));
            }
        }
        if let Some(d) = &self.dither {
            if !(d.amplitude >= 0.0) || !d.amplitude.is_finite() {
                return Err(Error::validation("dither amplitude must be non-negative"));
            }
        }
        Ok(())
    }

    pub fn fault_sample(&self) -> usize {
        (self.fault_time / self.ts).round() as usize
    }

    pub fn horizon_samples(&self) -> usize {
        (self.horizon / self.ts).round() as usize
    }
}

/// Scenario plus parameter tables, as read from a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "RawConfig", into = "RawConfig")]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub areas: Vec<AreaParameters>,
    pub lines: Vec<LineParameters>,
}

// Flat on-disk layout; `flatten` would disable unknown-field rejection.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default = "default_fault_area", serialize_with = "ser_fault", deserialize_with = "de_fault")]
    fault_area: Option<usize>,
    #[serde(default = "default_fault_time")]
    fault_time: f64,
    #[serde(default = "default_horizon")]
    horizon: f64,
    #[serde(default = "default_ts")]
    ts: f64,
    #[serde(default)]
    settle: f64,
    #[serde(default)]
    gains_override: Option<Vec<(f64, f64)>>,
    #[serde(default)]
    dither: Option<Dither>,
    #[serde(default = "default_areas")]
    areas: Vec<AreaParameters>,
    #[serde(default = "default_lines")]
    lines: Vec<LineParameters>,
}

impl From<RawConfig> for ScenarioConfig {
    fn from(r: RawConfig) -> Self {
        Self {
            scenario: Scenario {
                fault_area: r.fault_area,
                fault_time: r.fault_time,
                horizon: r.horizon,
                ts: r.ts,
                settle: r.settle,
                gains_override: r.gains_override,
                dither: r.dither,
            },
            areas: r.areas,
            lines: r.lines,
        }
    }
}

impl From<ScenarioConfig> for RawConfig {
    fn from(c: ScenarioConfig) -> Self {
        let s = c.scenario;
        Self {
            fault_area: s.fault_area,
            fault_time: s.fault_time,
            horizon: s.horizon,
            ts: s.ts,
            settle: s.settle,
            gains_override: s.gains_override,
            dither: s.dither,
            areas: c.areas,
            lines: c.lines,
        }
    }
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self { scenario: Scenario::baseline(), areas: default_areas(), lines: default_lines() }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        if self.areas.len() != AREAS || self.lines.len() != AREAS {
            return Err(Error::validation(format!("need {AREAS} areas and {AREAS} lines")));
        }
        for a in &self.areas {
            a.validate()?;
        }
        for l in &self.lines {
            l.validate()?;
        }
        Ok(())
    }

    /// Area parameters with any gain override applied.
    pub fn effective_areas(&self) -> Vec<AreaParameters> {
        match &self.scenario.gains_override {
            Some(g) => self.areas.iter().zip(g).map(|(a, &(kp, ki))| a.with_gains(kp, ki)).collect(),
            None => self.areas.clone(),
        }
    }
}

/// Closed-loop operating point of one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Equilibrium {
    pub x: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
    pub y: Vec<DVector<f64>>,
}

/// Solves `A_cl x + d_cl = 0` for continuous-time area models under the
/// pairing law (identical to the fixed point of the sampled loop).
pub fn closed_loop_equilibrium(models: &[StateSpaceModel], g: &InterconnectionGraph) -> Result<Equilibrium> {
    let a_cl = network::closed_loop_matrix(models, g)?;
    let d_cl = DVector::from_iterator(a_cl.nrows(), models.iter().flat_map(|m| m.offset().iter().copied().collect::<Vec<_>>()));
    let x = (-a_cl)
        .full_piv_lu()
        .solve(&d_cl)
        .ok_or_else(|| Error::NoUniqueEquilibrium("closed-loop matrix is singular".into()))?;
    let mut xs = Vec::with_capacity(models.len());
    let mut off = 0;
    for m in models {
        xs.push(x.rows(off, m.order()).into_owned());
        off += m.order();
    }
    let ys: Vec<DVector<f64>> = models.iter().zip(&xs).map(|(m, x)| &m.c * x).collect();
    let us = network::interconnection_inputs(g, &ys);
    Ok(Equilibrium { x: xs, u: us, y: ys })
}

/// `ũ = u − u*`, `ỹ = y − y*`.
pub fn deviation_trajectories(
    u: &Trajectory,
    y: &Trajectory,
    u_eq: &DVector<f64>,
    y_eq: &DVector<f64>,
) -> Result<(Trajectory, Trajectory)> {
    if u_eq.iter().chain(y_eq.iter()).any(|v| !v.is_finite()) {
        return Err(Error::validation("equilibrium values must be finite"));
    }
    Ok((u.offset_by(u_eq)?, y.offset_by(y_eq)?))
}

/// One area's samples within one analysis window.
#[derive(Debug, Clone, PartialEq)]
pub struct AreaWindow {
    pub area: usize,
    /// Deviation input and output.
    pub u: Trajectory,
    pub y: Trajectory,
    pub lag: usize,
    pub order: usize,
    pub u_eq: DVector<f64>,
    pub y_eq: DVector<f64>,
}

/// Sampled models used only by oracle checks; never read by the
/// certification path.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub pre: Vec<StateSpaceModel>,
    pub post: Option<Vec<StateSpaceModel>>,
    pub pre_equilibrium: Equilibrium,
    pub post_equilibrium: Option<Equilibrium>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioRun {
    pub scenario: Scenario,
    pub pre: Vec<AreaWindow>,
    pub post: Option<Vec<AreaWindow>>,
    pub truth: GroundTruth,
}

struct Configuration {
    continuous: Vec<StateSpaceModel>,
    discrete: Vec<StateSpaceModel>,
    /// Sampled response to a unit setpoint step, per area.
    setpoint_gain: Vec<DVector<f64>>,
}

fn configuration(areas: &[AreaParameters], lines: &[LineParameters], fault: Option<usize>, ts: f64) -> Result<Configuration> {
    let mut continuous = Vec::with_capacity(AREAS);
    let mut discrete = Vec::with_capacity(AREAS);
    let mut setpoint_gain = Vec::with_capacity(AREAS);
    for (i, (p, l)) in areas.iter().zip(lines).enumerate() {
        let faulted = fault == Some(i + 1);
        let m = if faulted { build_post_fault_model(p, l)? } else { build_area_model(p, l)? };
        let unit = AreaParameters { i_load: 0.0, setpoint: 1.0, ..p.clone() };
        let mu = if faulted { build_post_fault_model(&unit, l)? } else { build_area_model(&unit, l)? };
        setpoint_gain.push(lti::zoh_discretize(&mu, ts)?.offset());
        discrete.push(lti::zoh_discretize(&m, ts)?);
        continuous.push(m);
    }
    Ok(Configuration { continuous, discrete, setpoint_gain })
}

/// Simulates the interconnected grid from the zero state and returns the
/// pre-fault window `[0, fault_time)` and post-fault window
/// `[fault_time + settle, horizon)` in deviation coordinates.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioRun> {
    cfg.validate()?;
    let s = &cfg.scenario;
    let areas = cfg.effective_areas();
    let g = microgrid_graph();
    let pre_cfg = configuration(&areas, &cfg.lines, None, s.ts)?;
    let post_cfg = match s.fault_area {
        Some(f) => Some(configuration(&areas, &cfg.lines, Some(f), s.ts)?),
        None => None,
    };
    let n_total = s.horizon_samples();
    let kf = match s.fault_area {
        Some(_) => s.fault_sample().min(n_total),
        None => n_total,
    };
    let mut rng = s.dither.as_ref().map(|d| ChaCha8Rng::seed_from_u64(d.seed));
    let setpoints: Vec<f64> = areas.iter().map(|a| a.setpoint).collect();

    let mut x: Vec<DVector<f64>> = pre_cfg.discrete.iter().map(|m| DVector::zeros(m.order())).collect();
    let mut u_hist = vec![DMatrix::zeros(2, n_total); AREAS];
    let mut y_hist = vec![DMatrix::zeros(2, n_total); AREAS];
    let mut active = &pre_cfg;
    for k in 0..n_total {
        if k == kf {
            if let (Some(f), Some(pc)) = (s.fault_area, post_cfg.as_ref()) {
                let xi = &x[f - 1];
                x[f - 1] = DVector::from_fn(KEPT.len(), |r, _| xi[KEPT[r]]);
                active = pc;
            }
        }
        let ys: Vec<DVector<f64>> = active.discrete.iter().zip(&x).map(|(m, xi)| &m.c * xi).collect();
        let us = network::interconnection_inputs(&g, &ys);
        for i in 0..AREAS {
            u_hist[i].set_column(k, &us[i]);
            y_hist[i].set_column(k, &ys[i]);
        }
        for i in 0..AREAS {
            let m = &active.discrete[i];
            let mut next = &m.a * &x[i] + &m.b * &us[i] + m.offset();
            if let (Some(r), Some(d)) = (rng.as_mut(), s.dither.as_ref()) {
                let delta = d.amplitude * setpoints[i] * r.random_range(-1.0..=1.0);
                next += &active.setpoint_gain[i] * delta;
            }
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence { index: k + 1 });
            }
            x[i] = next;
        }
    }

    let g_ref = &g;
    let pre_eq = closed_loop_equilibrium(&pre_cfg.continuous, g_ref)?;
    let post_eq = match &post_cfg {
        Some(pc) => Some(closed_loop_equilibrium(&pc.continuous, g_ref)?),
        None => None,
    };
    let window = |from: usize, to: usize, eq: &Equilibrium, fault: Option<usize>| -> Result<Vec<AreaWindow>> {
        (0..AREAS)
            .map(|i| {
                let raw_u = Trajectory::new(u_hist[i].columns(from, to - from).into_owned(), s.ts, 0)?;
                let raw_y = Trajectory::new(y_hist[i].columns(from, to - from).into_owned(), s.ts, 0)?;
                let (u, y) = deviation_trajectories(&raw_u, &raw_y, &eq.u[i], &eq.y[i])?;
                let faulted = fault == Some(i + 1);
                Ok(AreaWindow {
                    area: i + 1,
                    u,
                    y,
                    lag: if faulted { FAULTED_LAG } else { INTACT_LAG },
                    order: if faulted { FAULTED_ORDER } else { INTACT_ORDER },
                    u_eq: eq.u[i].clone(),
                    y_eq: eq.y[i].clone(),
                })
            })
            .collect()
    };
    if kf == 0 {
        return Err(Error::validation("pre-fault window is empty"));
    }
    let pre = window(0, kf, &pre_eq, None)?;
    let post = match (&post_eq, s.fault_area) {
        (Some(eq), Some(f)) => {
            let ks = kf + (s.settle / s.ts).round() as usize;
            if ks >= n_total {
                return Err(Error::validation("post-fault window is empty"));
            }
            Some(window(ks, n_total, eq, Some(f))?)
        }
        _ => None,
    };
    Ok(ScenarioRun {
        scenario: s.clone(),
        pre,
        post,
        truth: GroundTruth {
            pre: pre_cfg.discrete,
            post: post_cfg.map(|c| c.discrete),
            pre_equilibrium: pre_eq,
            post_equilibrium: post_eq,
        },
    })
}
