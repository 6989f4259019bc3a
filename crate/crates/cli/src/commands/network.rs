//! `certify-network`: dataset directory and pairing list in, network verdict out.

use std::path::Path;

use dissipacert::io;
use dissipacert::network::{self, NetworkCertificate, NetworkOptions, SubsystemData, Verdict};
use serde_json::json;

use crate::exit::{CliError, ExitKind};
use crate::files::{self, DatasetManifest, MANIFEST};
use crate::report::RunReport;
use crate::NetworkArgs;

pub fn run(a: &NetworkArgs, echo: Vec<String>) -> i32 {
    let mut report = RunReport::new(echo, None);
    let outcome = execute(a, &mut report);
    super::finish(report, &a.out.join("report.json"), outcome)
}

/// Reads a manifest and every trajectory it lists.
pub(crate) fn load_dataset(report: &mut RunReport, dir: &Path) -> Result<(DatasetManifest, Vec<SubsystemData>), CliError> {
    let path = dir.join(MANIFEST);
    let text = report.read_input_text(&path)?;
    let manifest = DatasetManifest::parse(&text, &path)?;
    let mut data = Vec::with_capacity(manifest.subsystems.len());
    for e in &manifest.subsystems {
        let csv = dir.join(&e.file);
        let rec = io::read_record(&csv).map_err(|err| CliError::input(format!("{}: {err}", csv.display())))?;
        report.read_input(&csv)?;
        report.read_input_if_present(&io::sidecar_path(&csv))?;
        data.push(SubsystemData { name: e.name.clone(), u: rec.u, y: rec.y, lag: e.lag, order: e.order });
    }
    Ok((manifest, data))
}

pub(crate) fn verdict_outcome(cert: &NetworkCertificate) -> Result<String, CliError> {
    match cert.verdict {
        Verdict::Stable | Verdict::AsymptoticallyStable => Ok(cert.verdict.to_string()),
        Verdict::Undecided => Err(CliError::new(
            ExitKind::Undecided,
            if cert.diagnostics.is_empty() { "undecided".to_string() } else { cert.diagnostics.join("; ") },
        )),
    }
}

fn execute(a: &NetworkArgs, report: &mut RunReport) -> Result<String, CliError> {
    if !(a.tolerance >= 0.0 && a.tolerance.is_finite()) {
        return Err(CliError::input("--tolerance must be finite and nonnegative"));
    }
    let (manifest, data) = load_dataset(report, &a.dir)?;
    let graph_text = report.read_input_text(&a.graph)?;
    let counts = data.iter().map(|d| d.u.channels()).collect();
    let graph = network::InterconnectionGraph::from_json(&graph_text, Some(counts))
        .map_err(|e| CliError::input(format!("{}: {e}", a.graph.display())))?;
    let opts = NetworkOptions {
        tolerance: a.tolerance,
        cost: a.cost.into(),
        rel_tol: a.rel_tol.unwrap_or(manifest.rel_tol),
    };
    if !(opts.rel_tol > 0.0 && opts.rel_tol < 1.0) {
        return Err(CliError::input("--rel-tol must lie in (0, 1)"));
    }
    let cert = report.stage("certify network", || {
        let cert = network::certify_network(&data, &graph, &opts)?;
        let diag = json!({
            "verdict": cert.verdict,
            "worst_margin": cert.margins.iter().map(|m| m.min()).fold(f64::INFINITY, f64::min),
            "diagnostics": &cert.diagnostics,
        });
        Ok((cert, diag))
    })?;
    report.write_json(&a.out.join("network_certificate.json"), &cert)?;
    report.write_output(&a.out.join("margins.csv"), files::margin_csv(&cert.margins).as_bytes())?;
    let plot = files::margin_plot_script(&[(format!("{} window", manifest.window), "margins.csv".into())], a.tolerance);
    report.write_output(&a.out.join("margins.gp"), plot.as_bytes())?;
    verdict_outcome(&cert)
}
