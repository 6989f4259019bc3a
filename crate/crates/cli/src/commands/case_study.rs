//! `reproduce-case-study`: the three fault scenarios end to end.

use dissipacert::certify::PassivityIndices;
use dissipacert::microgrid::{self, AreaWindow, Scenario, ScenarioConfig};
use dissipacert::network::{self, NetworkCertificate, NetworkOptions, SubsystemData, Verdict};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::exit::{classify, CliError, ExitKind};
use crate::files;
use crate::report::RunReport;
use crate::CaseStudyArgs;

pub const FAULT_AREAS: [usize; 3] = [2, 3, 4];
pub const WINDOWS: [&str; 2] = ["pre", "post"];

#[derive(Debug, Serialize)]
pub struct WindowComparison {
    pub scenario: String,
    pub window: String,
    pub verdict: Verdict,
    pub signs_match: bool,
    pub sign_mismatches: Vec<String>,
    pub worst_margin: f64,
    pub margins_pass: bool,
    pub pass: bool,
}

#[derive(Debug, Serialize)]
pub struct Comparison {
    pub tolerance: f64,
    pub rel_tol: f64,
    pub cost: String,
    pub reference_passes: [bool; 2],
    pub windows: Vec<WindowComparison>,
    pub pass: bool,
}

pub fn run(a: &CaseStudyArgs, echo: Vec<String>) -> i32 {
    let mut report = RunReport::new(echo, a.seed);
    let outcome = execute(a, &mut report);
    super::finish(report, &a.out.join("report.json"), outcome)
}

fn scenario_config(area: usize, seed: Option<u64>) -> Result<ScenarioConfig, CliError> {
    let mut scenario = Scenario::switch(area)?;
    if let (Some(seed), Some(d)) = (seed, scenario.dither.as_mut()) {
        d.seed = seed;
    }
    Ok(ScenarioConfig { scenario, ..ScenarioConfig::default() })
}

fn window_data(windows: &[AreaWindow]) -> Vec<SubsystemData> {
    windows
        .iter()
        .map(|w| SubsystemData {
            name: format!("area{}", w.area),
            u: w.u.clone(),
            y: w.y.clone(),
            lag: w.lag,
            order: w.order,
        })
        .collect()
}

fn simulation_error(e: dissipacert::error::Error) -> CliError {
    let kind = match e {
        dissipacert::error::Error::Numerical(_) => ExitKind::Divergence,
        ref other => classify(other),
    };
    CliError::new(kind, e.to_string())
}

/// Certifies both windows of one scenario.
fn certify_scenario(area: usize, a: &CaseStudyArgs, opts: &NetworkOptions) -> Result<Vec<NetworkCertificate>, CliError> {
    let run = microgrid::run_scenario(&scenario_config(area, a.seed)?).map_err(simulation_error)?;
    let post = run.post.ok_or_else(|| CliError::input(format!("scenario sw{area} has no post-fault window")))?;
    let g = microgrid::microgrid_graph();
    [run.pre, post]
        .iter()
        .map(|w| network::certify_network(&window_data(w), &g, opts).map_err(CliError::from))
        .collect()
}

fn sign_mismatches(indices: Option<Vec<PassivityIndices>>) -> Vec<String> {
    let Some(indices) = indices else {
        return vec!["no indices".to_string()];
    };
    let mut out = Vec::new();
    for (i, idx) in indices.iter().enumerate() {
        for j in 0..idx.channels() {
            if !(idx.rho[j] > 0.0) {
                out.push(format!("rho({},{}) = {:.6}", i + 1, j + 1, idx.rho[j]));
            }
            if !(idx.nu[j] < 0.0) {
                out.push(format!("nu({},{}) = {:.6}", i + 1, j + 1, idx.nu[j]));
            }
        }
    }
    out
}

fn execute(a: &CaseStudyArgs, report: &mut RunReport) -> Result<String, CliError> {
    if !(a.tolerance >= 0.0 && a.tolerance.is_finite()) {
        return Err(CliError::input("--tolerance must be finite and nonnegative"));
    }
    if !(a.rel_tol > 0.0 && a.rel_tol < 1.0) {
        return Err(CliError::input("--rel-tol must lie in (0, 1)"));
    }
    let opts = NetworkOptions { tolerance: a.tolerance, cost: a.cost.into(), rel_tol: a.rel_tol };
    let g = microgrid::microgrid_graph();
    let reference_passes = report.stage("reference table", || {
        let mut passes = [false; 2];
        for (k, post) in [false, true].into_iter().enumerate() {
            passes[k] = network::check_stability(&microgrid::reference_indices(post), &g, a.tolerance, false)?.passes;
        }
        Ok((passes, json!({ "pre": passes[0], "post": passes[1] })))
    })?;
    let certs = report.stage("scenarios", || {
        let pool = crate::thread_pool();
        let results: Vec<Result<Vec<NetworkCertificate>, CliError>> =
            pool.install(|| FAULT_AREAS.par_iter().map(|&area| certify_scenario(area, a, &opts)).collect());
        let certs = results.into_iter().collect::<Result<Vec<_>, _>>()?;
        let diag = json!({ "threads": pool.current_num_threads(), "scenarios": FAULT_AREAS.len() });
        Ok((certs, diag))
    })?;

    let mut index_table = String::from("scenario,window,area,rho1,rho2,nu1,nu2\n");
    let mut deltas = String::from("scenario,window,area,entry,value,reference,delta\n");
    let mut plots = Vec::new();
    let mut windows = Vec::new();
    for (area, pair) in FAULT_AREAS.iter().zip(&certs) {
        let scenario = format!("sw{area}");
        for (window, cert) in WINDOWS.iter().zip(pair) {
            let stem = format!("{scenario}_{window}");
            report.write_json(&a.out.join(format!("{stem}_certificate.json")), cert)?;
            let margins_file = format!("{stem}_margins.csv");
            report.write_output(&a.out.join(&margins_file), files::margin_csv(&cert.margins).as_bytes())?;
            plots.push((format!("{scenario} {window}"), margins_file));
            let reference = microgrid::reference_indices(*window == "post");
            if let Some(indices) = cert.indices() {
                for (i, idx) in indices.iter().enumerate() {
                    index_table.push_str(&format!(
                        "{scenario},{window},{},{:?},{:?},{:?},{:?}\n",
                        i + 1,
                        idx.rho[0],
                        idx.rho[1],
                        idx.nu[0],
                        idx.nu[1]
                    ));
                    let r = &reference[i];
                    for (name, v, rv) in [
                        ("rho1", idx.rho[0], r.rho[0]),
                        ("rho2", idx.rho[1], r.rho[1]),
                        ("nu1", idx.nu[0], r.nu[0]),
                        ("nu2", idx.nu[1], r.nu[1]),
                    ] {
                        deltas.push_str(&format!("{scenario},{window},{},{name},{v:?},{rv:?},{:?}\n", i + 1, v - rv));
                    }
                }
            }
            let mismatches = sign_mismatches(cert.indices());
            let worst_margin = cert.margins.iter().map(|m| m.min()).fold(f64::INFINITY, f64::min);
            let margins_pass = !cert.margins.is_empty() && worst_margin >= -a.tolerance;
            let decided = cert.verdict != Verdict::Undecided;
            windows.push(WindowComparison {
                scenario: scenario.clone(),
                window: window.to_string(),
                verdict: cert.verdict,
                signs_match: mismatches.is_empty(),
                pass: mismatches.is_empty() && margins_pass && decided,
                sign_mismatches: mismatches,
                worst_margin,
                margins_pass,
            });
        }
    }
    let pass = reference_passes.iter().all(|&p| p) && windows.iter().all(|w| w.pass);
    let comparison = Comparison {
        tolerance: a.tolerance,
        rel_tol: a.rel_tol,
        cost: network::CostSelector::from(a.cost).to_string(),
        reference_passes,
        windows,
        pass,
    };
    report.write_output(&a.out.join("index_table.csv"), index_table.as_bytes())?;
    report.write_output(&a.out.join("margins.gp"), files::margin_plot_script(&plots, a.tolerance).as_bytes())?;
    if a.strict_values {
        report.write_output(&a.out.join("index_deltas.csv"), deltas.as_bytes())?;
    }
    report.write_json(&a.out.join("comparison.json"), &comparison)?;
    let failed: Vec<String> =
        comparison.windows.iter().filter(|w| !w.pass).map(|w| format!("{} {}", w.scenario, w.window)).collect();
    if pass {
        Ok(format!("reproduced: {} windows match the reference signs", comparison.windows.len()))
    } else if failed.is_empty() {
        Err(CliError::new(ExitKind::Undecided, "reference index table fails the pairing check"))
    } else {
        Err(CliError::new(ExitKind::Undecided, format!("not reproduced: {}", failed.join(", "))))
    }
}
