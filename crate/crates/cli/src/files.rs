//! On-disk formats owned by the command-line tool.

use std::path::{Path, PathBuf};

use dissipacert::io::matrix_rows;
use dissipacert::lti::{StateSpaceModel, TimeDomain};
use dissipacert::microgrid::Equilibrium;
use dissipacert::network::PairingMargin;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::exit::CliError;

pub const MANIFEST: &str = "manifest.json";

/// One dataset directory: trajectory files plus their structural data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub window: String,
    /// Rank tolerance suited to the data.
    pub rel_tol: f64,
    pub subsystems: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub name: String,
    pub file: String,
    pub lag: usize,
    pub order: usize,
}

impl DatasetManifest {
    pub fn parse(text: &str, origin: &Path) -> Result<Self, CliError> {
        let m: DatasetManifest = serde_json::from_str(text)
            .map_err(|e| CliError::input(format!("{}: {e}", origin.display())))?;
        if m.subsystems.is_empty() {
            return Err(CliError::input(format!("{}: no subsystems listed", origin.display())));
        }
        if !(m.rel_tol > 0.0 && m.rel_tol < 1.0) {
            return Err(CliError::input(format!("{}: rel_tol must lie in (0, 1)", origin.display())));
        }
        for e in &m.subsystems {
            // Certification reads trajectories only, never model files.
            if !e.file.ends_with(".csv") || e.file.contains('/') || e.file.contains('\\') {
                return Err(CliError::input(format!(
                    "{}: '{}' is not a trajectory CSV in the dataset directory",
                    origin.display(),
                    e.file
                )));
            }
            if e.lag == 0 || e.order == 0 {
                return Err(CliError::input(format!("{}: {} needs lag and order >= 1", origin.display(), e.name)));
            }
        }
        Ok(m)
    }

    pub fn entry_for(&self, file_name: &str) -> Option<&ManifestEntry> {
        self.subsystems.iter().find(|e| e.file == file_name)
    }
}

/// Manifest next to a trajectory file, if any.
pub fn sibling_manifest(traj: &Path) -> PathBuf {
    traj.parent().unwrap_or(Path::new(".")).join(MANIFEST)
}

/// Ground-truth model export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub time_domain: String,
    pub dt: Option<f64>,
    #[serde(with = "matrix_rows")]
    pub a: DMatrix<f64>,
    #[serde(with = "matrix_rows")]
    pub b: DMatrix<f64>,
    #[serde(with = "matrix_rows")]
    pub c: DMatrix<f64>,
    pub offset: Option<Vec<f64>>,
}

impl From<&StateSpaceModel> for ModelFile {
    fn from(m: &StateSpaceModel) -> Self {
        Self {
            time_domain: match m.time_domain {
                TimeDomain::Discrete => "discrete".into(),
                TimeDomain::Continuous => "continuous".into(),
            },
            dt: m.dt,
            a: m.a.clone(),
            b: m.b.clone(),
            c: m.c.clone(),
            offset: m.d.as_ref().map(|d| d.iter().copied().collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumFile {
    pub x: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
}

impl From<&Equilibrium> for EquilibriumFile {
    fn from(e: &Equilibrium) -> Self {
        let rows = |v: &[nalgebra::DVector<f64>]| v.iter().map(|x| x.iter().copied().collect()).collect();
        Self { x: rows(&e.x), u: rows(&e.u), y: rows(&e.y) }
    }
}

/// Pairing-margin table, one row per pairing.
pub fn margin_csv(margins: &[PairingMargin]) -> String {
    let mut out = String::from("pairing,first,second,first_margin,second_margin,min_margin\n");
    for (k, m) in margins.iter().enumerate() {
        out.push_str(&format!(
            "{},({};{}),({};{}),{:?},{:?},{:?}\n",
            k + 1,
            m.first[0],
            m.first[1],
            m.second[0],
            m.second[1],
            m.first_margin,
            m.second_margin,
            m.min()
        ));
    }
    out
}

/// Gnuplot script drawing both sums of every pairing of each table
/// against the acceptance line `−tolerance`.
pub fn margin_plot_script(tables: &[(String, String)], tolerance: f64) -> String {
    let mut s = String::new();
    s.push_str("# Pairing margins rho_(i,j) + nu_(a,b); render with: gnuplot margins.gp\n");
    s.push_str("set datafile separator ','\n");
    s.push_str("set terminal pngcairo size 900,500\n");
    s.push_str("set style data histograms\nset style histogram clustered gap 1\nset style fill solid 0.8 border -1\n");
    s.push_str("set xlabel 'pairing'\nset ylabel 'margin'\nset key outside right\n");
    s.push_str(&format!("tol = {tolerance:?}\n"));
    for (title, file) in tables {
        let png = file.trim_end_matches(".csv");
        s.push_str(&format!("set output '{png}.png'\nset title '{title}'\n"));
        s.push_str(&format!(
            "plot '{file}' using 4:xtic(1) title 'first sum', '' using 5 title 'second sum', -tol with lines dt 2 title '-tolerance'\n"
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest(file: &str) -> String {
        format!(r#"{{"window":"pre","rel_tol":1e-10,"subsystems":[{{"name":"a","file":"{file}","lag":2,"order":4}}]}}"#)
    }

    #[test]
    fn manifest_accepts_csv_entries() {
        let m = DatasetManifest::parse(&manifest("area1.csv"), Path::new("m.json")).unwrap();
        assert_eq!(m.entry_for("area1.csv").unwrap().order, 4);
    }

    #[test]
    fn manifest_rejects_model_files() {
        assert!(DatasetManifest::parse(&manifest("area1.model.json"), Path::new("m.json")).is_err());
        assert!(DatasetManifest::parse(&manifest("../truth/area1.csv"), Path::new("m.json")).is_err());
    }

    #[test]
    fn margin_table_has_one_row_per_pairing() {
        let m = PairingMargin { first: [1, 2], second: [2, 1], first_margin: 0.001, second_margin: -0.5 };
        let csv = margin_csv(&[m.clone(), m]);
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.lines().nth(1).unwrap().ends_with(",-0.5"));
    }
}
