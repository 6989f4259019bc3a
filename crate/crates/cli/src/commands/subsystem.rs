//! `certify-subsystem`: one trajectory file in, one dissipativity certificate out.

use std::path::Path;

use dissipacert::certify::{self, DissipativityCertificate, PassivityIndices, SupplyRate};
use dissipacert::io;
use dissipacert::linalg::DEFAULT_REL_TOL;
use dissipacert::network;
use dissipacert::realization::{self, IdentificationDiagnostics, MinimalRealization};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::exit::{CliError, ExitKind};
use crate::files::{self, DatasetManifest, ManifestEntry};
use crate::report::{report_path_for, RunReport};
use crate::SubsystemArgs;

pub const OPTIMIZE: &str = "optimize";

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum SupplyFile {
    Indices(PassivityIndices),
    Qsr(SupplyRate),
}

#[derive(Debug, Serialize)]
pub struct SubsystemCertificate {
    pub name: String,
    pub lag: usize,
    pub order: usize,
    pub rel_tol: f64,
    pub identification: IdentificationDiagnostics,
    pub model: MinimalRealization,
    pub indices: Option<PassivityIndices>,
    pub certificate: DissipativityCertificate,
}

pub fn run(a: &SubsystemArgs, echo: Vec<String>) -> i32 {
    let mut report = RunReport::new(echo, None);
    let outcome = execute(a, &mut report);
    super::finish(report, &report_path_for(&a.out), outcome)
}

fn manifest_entry(report: &mut RunReport, traj: &Path) -> Result<Option<(DatasetManifest, ManifestEntry)>, CliError> {
    let path = files::sibling_manifest(traj);
    if !path.is_file() {
        return Ok(None);
    }
    let text = report.read_input_text(&path)?;
    let manifest = DatasetManifest::parse(&text, &path)?;
    let name = traj.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(manifest.entry_for(&name).cloned().map(|e| (manifest, e)))
}

enum Supply {
    Given(SupplyRate, Option<PassivityIndices>),
    Optimize,
}

fn load_supply(report: &mut RunReport, arg: &str) -> Result<Supply, CliError> {
    if arg == OPTIMIZE {
        return Ok(Supply::Optimize);
    }
    let path = Path::new(arg);
    let text = report.read_input_text(path)?;
    let parsed: SupplyFile = serde_json::from_str(&text).map_err(|e| {
        CliError::input(format!("{}: expected {{\"rho\", \"nu\"}} or {{\"q\", \"s\", \"r\"}}: {e}", path.display()))
    })?;
    Ok(match parsed {
        SupplyFile::Indices(idx) => {
            let idx = PassivityIndices::new(idx.rho, idx.nu)?;
            Supply::Given(certify::supply_from_indices(&idx)?, Some(idx))
        }
        SupplyFile::Qsr(s) => Supply::Given(SupplyRate::new(s.q, s.s, s.r)?, None),
    })
}

fn execute(a: &SubsystemArgs, report: &mut RunReport) -> Result<String, CliError> {
    let rec = io::read_record(&a.traj).map_err(|e| CliError::input(format!("{}: {e}", a.traj.display())))?;
    report.read_input(&a.traj)?;
    report.read_input_if_present(&io::sidecar_path(&a.traj))?;
    let entry = manifest_entry(report, &a.traj)?;
    let lag = a.lag.or(entry.as_ref().map(|e| e.1.lag));
    let order = a.order.or(entry.as_ref().map(|e| e.1.order));
    let rel_tol = a.rel_tol.or(entry.as_ref().map(|e| e.0.rel_tol)).unwrap_or(DEFAULT_REL_TOL);
    let (Some(lag), Some(order)) = (lag, order) else {
        return Err(CliError::input("--lag and --order are required when no manifest lists the trajectory"));
    };
    if !(rel_tol > 0.0 && rel_tol < 1.0) {
        return Err(CliError::input("--rel-tol must lie in (0, 1)"));
    }
    let supply = load_supply(report, &a.supply)?;
    let id = report.stage("identify", || {
        let id = realization::identify(&rec.u, &rec.y, lag, order, rel_tol)?;
        let diag = serde_json::to_value(&id.diagnostics).unwrap_or_default();
        Ok((id, diag))
    })?;
    let (certificate, indices) = report.stage("certify", || {
        let (cert, idx) = match &supply {
            Supply::Optimize => {
                let (idx, cert) = network::optimize_local_indices(&id.minimal)?;
                (cert, Some(idx))
            }
            Supply::Given(s, idx) => {
                let cert = certify::certify_qsr(&id.minimal, s, 0.0).map_err(|e| match CliError::from(e) {
                    err if err.kind == ExitKind::Input => err,
                    err => CliError::new(ExitKind::Infeasible, format!("supply rate not certified: {}", err.message)),
                })?;
                (cert, idx.clone())
            }
        };
        let diag = json!({ "lmi_residual": cert.lmi_residual, "iterations": cert.iterations, "indices": &idx });
        Ok(((cert, idx), diag))
    })?;
    let name = a.traj.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let out = SubsystemCertificate {
        name,
        lag,
        order,
        rel_tol,
        identification: id.diagnostics,
        model: id.minimal,
        indices,
        certificate,
    };
    report.write_json(&a.out, &out)?;
    Ok(format!("dissipative: order {} model certified", out.model.order()))
}
