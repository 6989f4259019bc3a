//! One module per subcommand.

pub mod case_study;
pub mod network;
pub mod simulate;
pub mod subsystem;

use std::path::Path;

use crate::exit::CliError;
use crate::report::RunReport;

/// Echoes the outcome on stderr and writes the run report.
pub(crate) fn finish(
    report: RunReport,
    report_path: &Path,
    outcome: Result<String, CliError>,
) -> i32 {
    match &outcome {
        Ok(verdict) => eprintln!("{verdict}"),
        Err(e) => eprintln!("error: {e}"),
    }
    report.finish(report_path, &outcome)
}
