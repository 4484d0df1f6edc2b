//! CSV ingestion and export, plus atomic file writes.
//!
//! An empty outcome cell encodes a missing outcome. Binary columns take the
//! values `0` and `1` only.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::path::Path;

use anyhow::Context;
use ivattrit::data::{ComplianceType, Dataset, Observation};
use ivattrit::SimulatedDataset;

use crate::config::ColumnMapping;

#[derive(Debug)]
pub enum LoadError {
    Io(std::io::Error),
    Csv(csv::Error),
    MissingColumn(String),
    /// A cell that does not parse; `line` is the 1-based line in the file.
    Parse { line: u64, column: String, value: String, expected: &'static str },
    OutcomeWithoutResponse { line: u64 },
    MissingOutcome { line: u64 },
    Invalid(ivattrit::Error),
}

impl fmt::Display for LoadError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Io(e) => write!(f, "{e}"),
            Self::Csv(e) => write!(f, "{e}"),
            Self::MissingColumn(c) => write!(f, "column '{c}' not found in header"),
            Self::Parse { line, column, value, expected } => {
                write!(f, "line {line}, column '{column}': expected {expected}, got '{value}'")
            }
            Self::OutcomeWithoutResponse { line } => write!(
                f,
                "line {line}: outcome present with r=0; an outcome is observed exactly when r=1"
            ),
            Self::MissingOutcome { line } => write!(f, "line {line}: r=1 but the outcome is empty"),
            Self::Invalid(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for LoadError {}

impl LoadError {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Io(_) => "io",
            Self::Csv(_) => "csv",
            Self::MissingColumn(_) => "missing_column",
            Self::Parse { .. } => "parse",
            Self::OutcomeWithoutResponse { .. } => "outcome_without_response",
            Self::MissingOutcome { .. } => "missing_outcome",
            Self::Invalid(e) => e.kind(),
        }
    }
}

struct Columns {
    y: usize,
    d: usize,
    z: usize,
    r: Option<usize>,
    x: Vec<usize>,
    t: Option<usize>,
}

impl Columns {
    fn locate(header: &csv::StringRecord, mapping: &ColumnMapping) -> Result<Self, LoadError> {
        let index: HashMap<&str, usize> = header.iter().enumerate().map(|(i, h)| (h.trim(), i)).collect();
        let find = |name: &str| index.get(name).copied().ok_or_else(|| LoadError::MissingColumn(name.to_string()));
        Ok(Self {
            y: find(&mapping.y)?,
            d: find(&mapping.d)?,
            z: find(&mapping.z)?,
            // an unmapped `r` column is still used when present
            r: match &mapping.r {
                Some(r) => Some(find(r)?),
                None => index.get("r").copied(),
            },
            x: mapping.x.iter().map(|c| find(c)).collect::<Result<_, _>>()?,
            t: mapping.t.as_deref().map(find).transpose()?,
        })
    }
}

/// Read a CSV file with a header row into a validated [`Dataset`].
pub fn load_csv(path: &Path, mapping: &ColumnMapping) -> Result<Dataset, LoadError> {
    let file = std::fs::File::open(path).map_err(LoadError::Io)?;
    read_csv(file, mapping)
}

pub fn read_csv(reader: impl std::io::Read, mapping: &ColumnMapping) -> Result<Dataset, LoadError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers().map_err(LoadError::Csv)?.clone();
    let cols = Columns::locate(&header, mapping)?;
    let mut observations = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(LoadError::Csv)?;
        let line = record.position().map_or(0, |p| p.line());
        let cell = |i: usize| record.get(i).unwrap_or("").trim();
        let bad = |i: usize, expected| LoadError::Parse {
            line,
            column: header.get(i).unwrap_or("").to_string(),
            value: cell(i).to_string(),
            expected,
        };
        let real = |i: usize| cell(i).parse::<f64>().map_err(|_| bad(i, "a number"));
        let binary = |i: usize| match cell(i).parse::<f64>() {
            Ok(v) if v == 0.0 => Ok(false),
            Ok(v) if v == 1.0 => Ok(true),
            _ => Err(bad(i, "0 or 1")),
        };
        let y = match cell(cols.y) {
            "" => None,
            _ => Some(real(cols.y)?),
        };
        let r = match cols.r {
            Some(i) => binary(i)?,
            None => y.is_some(),
        };
        match (r, y.is_some()) {
            (false, true) => return Err(LoadError::OutcomeWithoutResponse { line }),
            (true, false) => return Err(LoadError::MissingOutcome { line }),
            _ => {}
        }
        let x = cols.x.iter().map(|&i| real(i)).collect::<Result<Vec<_>, _>>()?;
        let mut obs = Observation::new(y, binary(cols.d)?, binary(cols.z)?, x);
        if let Some(i) = cols.t {
            obs.t = Some(cell(i).parse::<ComplianceType>().map_err(|_| bad(i, "a compliance type"))?);
        }
        observations.push(obs);
    }
    Dataset::try_new(observations, mapping.x.clone()).map_err(LoadError::Invalid)
}

fn num(v: f64) -> String {
    // `Display` prints the shortest string that parses back to `v`
    format!("{v}")
}

/// Write a simulated dataset as CSV: `y,d,z,r`, the covariates, and with
/// `oracle_columns` the compliance type and latent errors `t,u,v,w`.
pub fn write_simulated(sim: &SimulatedDataset, oracle_columns: bool) -> anyhow::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let ds = &sim.dataset;
    let mut header: Vec<&str> = vec!["y", "d", "z", "r"];
    header.extend(ds.covariate_names.iter().map(String::as_str));
    if oracle_columns {
        header.extend(["t", "u", "v", "w"]);
    }
    w.write_record(&header)?;
    for (o, l) in ds.observations.iter().zip(&sim.latent) {
        let bit = |b: bool| if b { "1".to_string() } else { "0".to_string() };
        let mut row = vec![o.y.map(num).unwrap_or_default(), bit(o.d), bit(o.z), bit(o.r)];
        row.extend(o.x.iter().map(|&v| num(v)));
        if oracle_columns {
            row.push(o.t.map(|t| t.as_str().to_string()).unwrap_or_default());
            row.extend([num(l.u), num(l.v), num(l.w)]);
        }
        w.write_record(&row)?;
    }
    Ok(w.into_inner().context("flushing CSV")?)
}

/// Replace `path` with `bytes` through a temporary file in the same
/// directory, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("creating temp file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mapping() -> ColumnMapping {
        ColumnMapping { x: vec!["age".into()], ..Default::default() }
    }

    fn read(text: &str) -> Result<Dataset, LoadError> {
        read_csv(text.as_bytes(), &mapping())
    }

    #[test]
    fn well_formed_file() {
        let ds = read("y,d,z,r,age\n1.5,1,1,1,20\n,0,1,0,31\n0.25,0,0,1,22\n-2,1,0,1,40\n").unwrap();
        assert_eq!(ds.len(), 4);
        assert_eq!(ds.observations[1].y, None);
        assert!(!ds.observations[1].r);
        assert_eq!(ds.observations[3].x, [40.0]);
        assert_eq!(ds.covariate_names, ["age"]);
    }

    #[test]
    fn outcome_with_r_zero_is_rejected() {
        let err = read("y,d,z,r,age\n1,1,1,1,20\n3.2,0,1,0,31\n").unwrap_err();
        assert!(matches!(err, LoadError::OutcomeWithoutResponse { line: 3 }), "{err}");
        assert!(err.to_string().contains("r=0"));
    }

    #[test]
    fn missing_outcome_with_r_one_is_rejected() {
        let err = read("y,d,z,r,age\n,1,1,1,20\n").unwrap_err();
        assert!(matches!(err, LoadError::MissingOutcome { line: 2 }));
    }

    #[test]
    fn non_binary_columns_cite_line_and_column() {
        let err = read("y,d,z,r,age\n1,1,1,1,20\n1,2,0,1,20\n").unwrap_err();
        assert_eq!(err.to_string(), "line 3, column 'd': expected 0 or 1, got '2'");
        let err = read("y,d,z,r,age\n1,1,1,1,abc\n").unwrap_err();
        assert_eq!(err.kind(), "parse");
    }

    #[test]
    fn response_inferred_without_r_column() {
        let m = ColumnMapping::default();
        let ds = read_csv("y,d,z\n1,1,1\n,0,0\n".as_bytes(), &m).unwrap();
        assert_eq!(ds.observations.iter().map(|o| o.r).collect::<Vec<_>>(), [true, false]);
    }

    #[test]
    fn missing_column_named() {
        let m = ColumnMapping { x: vec!["educ".into()], ..Default::default() };
        let err = read_csv("y,d,z\n1,1,1\n".as_bytes(), &m).unwrap_err();
        assert_eq!(err.to_string(), "column 'educ' not found in header");
    }

    #[test]
    fn dataset_level_violations_surface() {
        let err = read("y,d,z,r,age\n1,1,1,1,20\n2,0,1,1,21\n").unwrap_err();
        assert_eq!(err.kind(), "invalid_dataset");
    }
}
