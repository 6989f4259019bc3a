//! `simulate`: scenario config in, per-area trajectories and ground truth out.

use std::path::Path;

use dissipacert::error::Error;
use dissipacert::io::{self, IoRecord, TrajectorySidecar};
use dissipacert::lti::StateSpaceModel;
use dissipacert::microgrid::{self, AreaWindow, ScenarioConfig, CASE_STUDY_REL_TOL};
use serde_json::json;

use crate::exit::{classify, CliError, ExitKind};
use crate::files::{DatasetManifest, EquilibriumFile, ManifestEntry, ModelFile, MANIFEST};
use crate::report::RunReport;
use crate::SimulateArgs;

pub fn run(a: &SimulateArgs, echo: Vec<String>) -> i32 {
    let mut report = RunReport::new(echo, a.seed);
    let outcome = execute(a, &mut report);
    super::finish(report, &a.out.join("report.json"), outcome)
}

fn simulation_error(e: Error) -> CliError {
    let kind = match e {
        Error::Numerical(_) => ExitKind::Divergence,
        ref other => classify(other),
    };
    CliError::new(kind, e.to_string())
}

fn execute(a: &SimulateArgs, report: &mut RunReport) -> Result<String, CliError> {
    let text = report.read_input_text(&a.config)?;
    let cfg = report.stage("load config", || {
        let mut cfg: ScenarioConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::input(format!("{}: {e}", a.config.display())))?;
        if let (Some(seed), Some(d)) = (a.seed, cfg.scenario.dither.as_mut()) {
            d.seed = seed;
        }
        cfg.validate()?;
        let diag = json!({ "scenario": &cfg.scenario });
        Ok((cfg, diag))
    })?;
    let run = report.stage("simulate", || {
        let run = microgrid::run_scenario(&cfg).map_err(simulation_error)?;
        let diag = json!({
            "pre_samples": run.pre.first().map(|w| w.u.len()),
            "post_samples": run.post.as_ref().and_then(|p| p.first()).map(|w| w.u.len()),
        });
        Ok((run, diag))
    })?;
    let mut files = 0;
    report.write_output(&a.out.join("graph.json"), microgrid::microgrid_graph().to_json().as_bytes())?;
    files += write_windows(report, &a.out.join("pre"), "pre", &run.pre)?;
    if let Some(post) = &run.post {
        files += write_windows(report, &a.out.join("post"), "post", post)?;
    }
    let truth = a.out.join("ground_truth");
    write_models(report, &truth, "pre", &run.truth.pre)?;
    report.write_json(&truth.join("pre_equilibrium.json"), &EquilibriumFile::from(&run.truth.pre_equilibrium))?;
    if let (Some(models), Some(eq)) = (&run.truth.post, &run.truth.post_equilibrium) {
        write_models(report, &truth, "post", models)?;
        report.write_json(&truth.join("post_equilibrium.json"), &EquilibriumFile::from(eq))?;
    }
    Ok(format!("simulated: {files} trajectory files"))
}

fn write_windows(report: &mut RunReport, dir: &Path, window: &str, windows: &[AreaWindow]) -> Result<usize, CliError> {
    let mut entries = Vec::with_capacity(windows.len());
    for w in windows {
        let name = format!("area{}", w.area);
        let file = format!("{name}.csv");
        let rec = IoRecord {
            u: w.u.clone(),
            y: w.y.clone(),
            meta: TrajectorySidecar {
                dt: w.u.dt(),
                inputs: io::default_names("u", w.u.channels()),
                outputs: io::default_names("y", w.y.channels()),
                origin_offset: 0,
            },
        };
        let path = dir.join(&file);
        io::write_record(&path, &rec).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        report.outputs.push(path.display().to_string());
        entries.push(ManifestEntry { name, file, lag: w.lag, order: w.order });
    }
    let manifest = DatasetManifest { window: window.to_string(), rel_tol: CASE_STUDY_REL_TOL, subsystems: entries };
    report.write_json(&dir.join(MANIFEST), &manifest)?;
    Ok(windows.len())
}

fn write_models(report: &mut RunReport, dir: &Path, window: &str, models: &[StateSpaceModel]) -> Result<(), CliError> {
    for (i, m) in models.iter().enumerate() {
        report.write_json(&dir.join(format!("{window}_area{}.model.json", i + 1)), &ModelFile::from(m))?;
    }
    Ok(())
}
