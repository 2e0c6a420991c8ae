//! CSV ingestion with named column roles.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::projection::RawSample;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InstrumentColumns {
    /// Every column whose name starts with the prefix, in file order.
    Prefix(String),
    Names(Vec<String>),
}

impl InstrumentColumns {
    /// Parses `prefix:z_` or a comma-separated list.
    pub fn parse(s: &str) -> Self {
        match s.strip_prefix("prefix:") {
            Some(p) => InstrumentColumns::Prefix(p.to_string()),
            None => InstrumentColumns::Names(split_list(s)),
        }
    }
}

pub fn split_list(s: &str) -> Vec<String> {
    s.split(',').map(str::trim).filter(|t| !t.is_empty()).map(String::from).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnRoles {
    pub outcome: String,
    pub endogenous: String,
    pub controls: Vec<String>,
    pub instruments: InstrumentColumns,
    /// Append a column of ones to the controls.
    pub add_intercept: bool,
}

/// Column indices for each role, resolved against a header.
struct Resolved {
    y: usize,
    x: usize,
    w: Vec<usize>,
    z: Vec<usize>,
}

fn resolve(header: &[String], roles: &ColumnRoles) -> Result<Resolved> {
    let find = |name: &str| {
        header.iter().position(|h| h == name).ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let y = find(&roles.outcome)?;
    let x = find(&roles.endogenous)?;
    let w = roles.controls.iter().map(|c| find(c)).collect::<Result<Vec<_>>>()?;
    let taken: HashSet<usize> = [y, x].into_iter().chain(w.iter().copied()).collect();
    let z = match &roles.instruments {
        InstrumentColumns::Names(names) => names.iter().map(|c| find(c)).collect::<Result<Vec<_>>>()?,
        InstrumentColumns::Prefix(p) => {
            let z: Vec<usize> =
                (0..header.len()).filter(|i| header[*i].starts_with(p.as_str()) && !taken.contains(i)).collect();
            if z.is_empty() {
                return Err(Error::MissingColumn(format!("{p}*")));
            }
            z
        }
    };
    let mut seen = HashSet::new();
    for &i in [y, x].iter().chain(&w).chain(&z) {
        if !seen.insert(i) {
            return Err(Error::InvalidConfig(format!("column `{}` is assigned to more than one role", header[i])));
        }
    }
    Ok(Resolved { y, x, w, z })
}

/// Reads a headed CSV and assembles the sample in file row order.
pub fn ingest_reader<R: Read>(reader: R, roles: &ColumnRoles) -> Result<RawSample> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::ParseError { row: 0, column: String::new(), message: e.to_string() })?
        .iter()
        .map(String::from)
        .collect();
    let cols = resolve(&header, roles)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let wanted: Vec<usize> = [cols.y, cols.x].into_iter().chain(cols.w.iter().copied()).chain(cols.z.iter().copied()).collect();
    for (r, record) in rdr.records().enumerate() {
        let row = r + 1;
        let record = record.map_err(|e| Error::ParseError { row, column: String::new(), message: e.to_string() })?;
        let mut values = Vec::with_capacity(wanted.len());
        for &c in &wanted {
            let field = record.get(c).unwrap_or("");
            let v: f64 = field.parse().map_err(|_| Error::ParseError {
                row,
                column: header[c].clone(),
                message: format!("`{field}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFinite { row, column: header[c].clone() });
            }
            values.push(v);
        }
        rows.push(values);
    }
    let n = rows.len();
    let l = cols.w.len();
    let k = cols.z.len();
    let y = DVector::from_fn(n, |i, _| rows[i][0]);
    let x = DVector::from_fn(n, |i, _| rows[i][1]);
    let lw = l + roles.add_intercept as usize;
    let w = DMatrix::from_fn(n, lw, |i, j| if j < l { rows[i][2 + j] } else { 1.0 });
    let z = DMatrix::from_fn(n, k, |i, j| rows[i][2 + l + j]);
    RawSample::new(y, x, w, z)
}

pub fn ingest_csv(path: &Path, roles: &ColumnRoles) -> Result<RawSample> {
    let file = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    ingest_reader(std::io::BufReader::new(file), roles)
}

/// Writes a sample as CSV with columns `y, x, w1.., z1..`, and returns the
/// roles that read it back. Values use the shortest round-trip formatting.
pub fn write_sample<W: Write>(raw: &RawSample, out: W) -> Result<ColumnRoles> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(e.to_string());
    let controls: Vec<String> = (1..=raw.w.ncols()).map(|j| format!("w{j}")).collect();
    let instruments: Vec<String> = (1..=raw.z.ncols()).map(|j| format!("z{j}")).collect();
    let header: Vec<String> =
        ["y".to_string(), "x".to_string()].into_iter().chain(controls.iter().cloned()).chain(instruments.iter().cloned()).collect();
    w.write_record(&header).map_err(io)?;
    for i in 0..raw.n() {
        let mut rec = vec![raw.y[i].to_string(), raw.x[i].to_string()];
        rec.extend(raw.w.row(i).iter().map(f64::to_string));
        rec.extend(raw.z.row(i).iter().map(f64::to_string));
        w.write_record(&rec).map_err(io)?;
    }
    w.flush()?;
    Ok(ColumnRoles {
        outcome: "y".into(),
        endogenous: "x".into(),
        controls,
        instruments: InstrumentColumns::Names(instruments),
        add_intercept: false,
    })
}
