//! File formats: trajectory CSV with a JSON sidecar, row-major matrix
//! serialization, and atomic writes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signals::Trajectory;

/// Serde adapter storing a matrix as a list of rows (empty matrices become 0×0).
pub mod matrix_rows {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        use serde::de::Error as _;
        let rows: Vec<Vec<f64>> = Deserialize::deserialize(d)?;
        let ncols = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(D::Error::custom("ragged matrix rows"));
        }
        Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
    }
}

/// Metadata stored next to a trajectory CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySidecar {
    pub dt: f64,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    /// Number of leading samples that form the past window (time `-offset`).
    pub origin_offset: usize,
}

/// An aligned input/output record as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct IoRecord {
    pub u: Trajectory,
    pub y: Trajectory,
    pub meta: TrajectorySidecar,
}

pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("meta.json")
}

/// Writes through a temporary file in the target directory and renames it.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn write_record(csv_path: &Path, rec: &IoRecord) -> Result<()> {
    rec.u.check_aligned(&rec.y, "write_record")?;
    if rec.meta.inputs.len() != rec.u.channels() || rec.meta.outputs.len() != rec.y.channels() {
        return Err(Error::validation("channel names do not match trajectory widths"));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["t".to_string()];
    header.extend(rec.meta.inputs.iter().cloned());
    header.extend(rec.meta.outputs.iter().cloned());
    w.write_record(&header).map_err(csv_err)?;
    let offset = rec.meta.origin_offset as i64;
    for k in 0..rec.u.len() {
        let t = (rec.u.start_index() + k as i64 - offset) as f64 * rec.meta.dt;
        let mut row = Vec::with_capacity(header.len());
        row.push(format_num(t));
        row.extend(rec.u.data().column(k).iter().map(|v| format_num(*v)));
        row.extend(rec.y.data().column(k).iter().map(|v| format_num(*v)));
        w.write_record(&row).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::validation(e.to_string()))?;
    write_atomic(csv_path, &bytes)?;
    write_atomic(
        &sidecar_path(csv_path),
        serde_json::to_string_pretty(&rec.meta)?.as_bytes(),
    )
}

// Shortest representation that round-trips exactly.
fn format_num(v: f64) -> String {
    format!("{v:?}")
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::validation(format!("csv: {other:?}")),
    }
}

/// Reads a CSV (and its sidecar when present). Without a sidecar, inputs
/// are the columns named `u*` and outputs those named `y*`; `dt` comes from
/// the time column.
pub fn read_record(csv_path: &Path) -> Result<IoRecord> {
    let text = fs::read_to_string(csv_path)?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header: Vec<String> = rdr
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(|s| s.to_string())
        .collect();
    if header.first().map(|s| s.as_str()) != Some("t") {
        return Err(Error::validation(format!("{}: first column must be t", csv_path.display())));
    }
    let side_path = sidecar_path(csv_path);
    let sidecar: Option<TrajectorySidecar> = if side_path.exists() {
        Some(serde_json::from_str(&fs::read_to_string(&side_path)?)?)
    } else {
        None
    };
    let (inputs, outputs) = match &sidecar {
        Some(s) => (s.inputs.clone(), s.outputs.clone()),
        None => (
            header.iter().filter(|h| h.starts_with('u')).cloned().collect::<Vec<_>>(),
            header.iter().filter(|h| h.starts_with('y')).cloned().collect::<Vec<_>>(),
        ),
    };
    let col_of = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::validation(format!("{}: missing column {name}", csv_path.display())))
    };
    let u_cols = inputs.iter().map(|n| col_of(n)).collect::<Result<Vec<_>>>()?;
    let y_cols = outputs.iter().map(|n| col_of(n)).collect::<Result<Vec<_>>>()?;
    if u_cols.is_empty() || y_cols.is_empty() {
        return Err(Error::validation(format!("{}: needs input and output columns", csv_path.display())));
    }
    let mut times = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        if rec.len() != header.len() {
            return Err(Error::validation(format!(
                "{}: row {} has {} fields, header has {}",
                csv_path.display(),
                line + 2,
                rec.len(),
                header.len()
            )));
        }
        let vals = rec
            .iter()
            .map(|s| {
                s.parse::<f64>().map_err(|_| {
                    Error::validation(format!("{}: row {}: bad number {s:?}", csv_path.display(), line + 2))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        times.push(vals[0]);
        rows.push(vals);
    }
    if rows.is_empty() {
        return Err(Error::validation(format!("{}: no samples", csv_path.display())));
    }
    let dt = match &sidecar {
        Some(s) => s.dt,
        None if times.len() > 1 => times[1] - times[0],
        None => 0.0,
    };
    let origin_offset = sidecar.as_ref().map(|s| s.origin_offset).unwrap_or(0);
    let u = DMatrix::from_fn(u_cols.len(), rows.len(), |i, k| rows[k][u_cols[i]]);
    let y = DMatrix::from_fn(y_cols.len(), rows.len(), |i, k| rows[k][y_cols[i]]);
    Ok(IoRecord {
        u: Trajectory::new(u, dt, 0)?,
        y: Trajectory::new(y, dt, 0)?,
        meta: TrajectorySidecar { dt, inputs, outputs, origin_offset },
    })
}

/// Default channel names `u_1..u_m`, `y_1..y_p`.
pub fn default_names(prefix: &str, count: usize) -> Vec<String> {
    (1..=count).map(|i| format!("{prefix}_{i}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_roundtrip_with_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        let u = Trajectory::new(DMatrix::from_fn(2, 5, |i, k| 0.1 * (i + k) as f64 + 1e-17), 0.5, 0).unwrap();
        let y = Trajectory::new(DMatrix::from_fn(1, 5, |_, k| (k as f64).sqrt()), 0.5, 0).unwrap();
        let rec = IoRecord {
            u,
            y,
            meta: TrajectorySidecar {
                dt: 0.5,
                inputs: default_names("u", 2),
                outputs: default_names("y", 1),
                origin_offset: 2,
            },
        };
        write_record(&p, &rec).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("t,u_1,u_2,y_1\n-1.0,"), "{text}");
        let back = read_record(&p).unwrap();
        assert_eq!(back, rec);
    }

    #[test]
    fn csv_without_sidecar_infers_dt() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.csv");
        fs::write(&p, "t,u_1,y_1\n0,1,2\n0.25,3,4\n").unwrap();
        let r = read_record(&p).unwrap();
        assert_eq!(r.meta.dt, 0.25);
        assert_eq!(r.u.data()[(0, 1)], 3.0);
        assert_eq!(r.y.data()[(0, 0)], 2.0);
    }

    #[test]
    fn csv_bad_number_names_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.csv");
        fs::write(&p, "t,u_1,y_1\n0,1,2\n1,x,4\n").unwrap();
        let err = read_record(&p).unwrap_err().to_string();
        assert!(err.contains("row 3"), "{err}");
    }

    #[test]
    fn matrix_rows_roundtrip() {
        #[derive(Serialize, Deserialize, PartialEq, Debug)]
        struct W {
            #[serde(with = "matrix_rows")]
            m: DMatrix<f64>,
        }
        let w = W { m: DMatrix::from_row_slice(2, 3, &[1., 2., 3., 4., 5., 6.]) };
        let s = serde_json::to_string(&w).unwrap();
        assert_eq!(s, r#"{"m":[[1.0,2.0,3.0],[4.0,5.0,6.0]]}"#);
        assert_eq!(serde_json::from_str::<W>(&s).unwrap(), w);
        assert!(serde_json::from_str::<W>(r#"{"m":[[1.0],[2.0,3.0]]}"#).is_err());
    }
}
