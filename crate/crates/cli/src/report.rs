//! Run reports, input hashing and atomic output.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use dissipacert::io::write_atomic;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::exit::{CliError, ExitKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub name: String,
    pub seconds: f64,
    pub diagnostics: Value,
}

/// Everything needed to reproduce and audit one invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub tool: String,
    pub version: String,
    pub command: Vec<String>,
    pub seed: Option<u64>,
    pub inputs: Vec<InputHash>,
    pub stages: Vec<Stage>,
    pub outputs: Vec<String>,
    pub verdict: String,
    pub exit_code: i32,
    pub message: Option<String>,
    pub generated_unix: u64,
}

impl RunReport {
    pub fn new(command: Vec<String>, seed: Option<u64>) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command,
            seed,
            inputs: Vec::new(),
            stages: Vec::new(),
            outputs: Vec::new(),
            verdict: String::new(),
            exit_code: 0,
            message: None,
            generated_unix: 0,
        }
    }

    /// Reads a file and records its hash.
    pub fn read_input(&mut self, path: &Path) -> Result<Vec<u8>, CliError> {
        let bytes = std::fs::read(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        self.inputs.push(InputHash { path: path.display().to_string(), sha256: sha256_hex(&bytes) });
        Ok(bytes)
    }

    pub fn read_input_if_present(&mut self, path: &Path) -> Result<(), CliError> {
        if path.is_file() {
            self.read_input(path)?;
        }
        Ok(())
    }

    pub fn read_input_text(&mut self, path: &Path) -> Result<String, CliError> {
        let bytes = self.read_input(path)?;
        String::from_utf8(bytes).map_err(|_| CliError::input(format!("{}: not UTF-8 text", path.display())))
    }

    /// Runs `f` as a named stage and records its wall-clock time.
    pub fn stage<T>(
        &mut self,
        name: &str,
        f: impl FnOnce() -> Result<(T, Value), CliError>,
    ) -> Result<T, CliError> {
        let start = Instant::now();
        let out = f();
        let seconds = start.elapsed().as_secs_f64();
        match out {
            Ok((value, diagnostics)) => {
                self.stages.push(Stage { name: name.to_string(), seconds, diagnostics });
                Ok(value)
            }
            Err(e) => {
                self.stages.push(Stage {
                    name: name.to_string(),
                    seconds,
                    diagnostics: serde_json::json!({ "error": e.message }),
                });
                Err(e)
            }
        }
    }

    pub fn write_output(&mut self, path: &Path, bytes: &[u8]) -> Result<(), CliError> {
        write_atomic(path, bytes).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        self.outputs.push(path.display().to_string());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, path: &Path, value: &T) -> Result<(), CliError> {
        let text = to_json(value)?;
        self.write_output(path, text.as_bytes())
    }

    /// Stamps the outcome and writes the report itself.
    pub fn finish(mut self, path: &Path, outcome: &Result<String, CliError>) -> i32 {
        let (kind, verdict, message) = match outcome {
            Ok(verdict) => (ExitKind::Ok, verdict.clone(), None),
            Err(e) => (e.kind, e.kind.label().to_string(), Some(e.message.clone())),
        };
        self.verdict = verdict;
        self.exit_code = kind.code();
        self.message = message;
        self.generated_unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        match to_json(&self).and_then(|t| write_atomic(path, t.as_bytes()).map_err(|e| CliError::input(e.to_string()))) {
            Ok(()) => self.exit_code,
            Err(e) => {
                eprintln!("error: could not write report {}: {e}", path.display());
                ExitKind::Input.code()
            }
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::input(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

/// `certificate.json` → `certificate.report.json`.
pub fn report_path_for(out: &Path) -> PathBuf {
    out.with_extension("report.json")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_of_empty_input() {
        assert_eq!(sha256_hex(b""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    }

    #[test]
    fn report_path_keeps_the_stem() {
        assert_eq!(report_path_for(Path::new("out/cert.json")), PathBuf::from("out/cert.report.json"));
    }

    #[test]
    fn failed_stage_is_recorded() {
        let mut r = RunReport::new(vec!["x".into()], None);
        let out: Result<(), _> = r.stage("load", || Err(CliError::input("bad")));
        assert!(out.is_err());
        assert_eq!(r.stages.len(), 1);
        assert_eq!(r.stages[0].diagnostics["error"], "bad");
    }
}
