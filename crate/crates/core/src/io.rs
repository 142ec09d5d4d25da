//! File formats: fringe CSV, scattering tables, calibration inputs, JSON.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::engine::FringeSeries;
use crate::error::{Error, Result};
use crate::phys::{units, A0, KB};
use crate::scattering::TabulatedModel;

/// Version of the CSV and JSON layouts written by this crate.
pub const SCHEMA_VERSION: u32 = 1;

pub const FRINGE_HEADER: [&str; 4] = ["t_ms", "phase_deg", "p", "p_err"];
pub const SCATTERING_HEADER: [&str; 3] = ["B_mG", "E_over_kB_nK", "a_over_a0"];

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Fringe grid as CSV text, one row per `(t, phi)` cell, time-major.
pub fn fringe_csv(series: &FringeSeries) -> String {
    let mut out = FRINGE_HEADER.join(",");
    out.push('\n');
    for (ti, t) in series.times.iter().enumerate() {
        let errs = series.row_errors(ti);
        for (pi, phi) in series.phases.iter().enumerate() {
            let err = errs.map(|e| e[pi].to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{}\n",
                tidy(t / units::MILLISECOND),
                tidy(phi.to_degrees()),
                series.row(ti)[pi],
                err
            ));
        }
    }
    out
}

/// Drops the last-bit noise of unit conversions (30 deg, not 29.999999999999996).
fn tidy(v: f64) -> f64 {
    let r = (v * 1e9).round() / 1e9;
    if (r - v).abs() <= 1e-12 * v.abs().max(1.0) {
        r
    } else {
        v
    }
}

pub fn write_fringe_csv(path: &Path, series: &FringeSeries) -> Result<()> {
    fs::write(path, fringe_csv(series))?;
    Ok(())
}

fn reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .flexible(true)
        .from_reader(text.as_bytes())
}

fn check_header(rdr: &mut csv::Reader<&[u8]>, expected: &[&str]) -> Result<()> {
    let header = rdr
        .headers()
        .map_err(|e| Error::Parse(format!("header: {e}")))?;
    let got: Vec<&str> = header.iter().collect();
    if got.len() < expected.len() - 1 || got.iter().zip(expected).any(|(a, b)| a != b) {
        return Err(Error::Parse(format!(
            "row 1: expected header {}, found {}",
            expected.join(","),
            got.join(",")
        )));
    }
    Ok(())
}

fn field(record: &csv::StringRecord, k: usize, row: usize, name: &str) -> Result<Option<f64>> {
    match record.get(k) {
        None | Some("") => Ok(None),
        Some(s) => s
            .parse::<f64>()
            .map(Some)
            .map_err(|_| Error::Parse(format!("row {row}: column {name}: cannot parse {s:?}"))),
    }
}

fn required(record: &csv::StringRecord, k: usize, row: usize, name: &str) -> Result<f64> {
    field(record, k, row, name)?
        .ok_or_else(|| Error::Parse(format!("row {row}: column {name} is empty")))
}

/// Rectangular grid assembled from `(x, y, value)` rows in any order.
struct Grid {
    xs: Vec<f64>,
    ys: Vec<f64>,
    cells: BTreeMap<(usize, usize), usize>,
}

fn grid(keys: &[(f64, f64)], what: &str) -> Result<Grid> {
    let sorted_unique = |mut v: Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    };
    let xs = sorted_unique(keys.iter().map(|k| k.0).collect());
    let ys = sorted_unique(keys.iter().map(|k| k.1).collect());
    let mut cells = BTreeMap::new();
    for (row, (x, y)) in keys.iter().enumerate() {
        let i = xs.partition_point(|v| v < x);
        let j = ys.partition_point(|v| v < y);
        if cells.insert((i, j), row).is_some() {
            return Err(Error::Parse(format!("row {}: duplicate {what} cell", row + 2)));
        }
    }
    if cells.len() != xs.len() * ys.len() {
        return Err(Error::Parse(format!(
            "{what} grid is not rectangular: {} rows for {}x{} grid",
            cells.len(),
            xs.len(),
            ys.len()
        )));
    }
    Ok(Grid { xs, ys, cells })
}

pub fn parse_fringe_csv(text: &str) -> Result<FringeSeries> {
    let mut rdr = reader(text);
    check_header(&mut rdr, &FRINGE_HEADER)?;
    let mut keys = Vec::new();
    let mut values = Vec::new();
    let mut errors = Vec::new();
    for (k, record) in rdr.records().enumerate() {
        let row = k + 2;
        let record = record.map_err(|e| Error::Parse(format!("row {row}: {e}")))?;
        let t = required(&record, 0, row, "t_ms")?;
        let phi = required(&record, 1, row, "phase_deg")?;
        let p = required(&record, 2, row, "p")?;
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Parse(format!("row {row}: population {p} outside [0, 1]")));
        }
        let err = field(&record, 3, row, "p_err")?;
        keys.push((t, phi));
        values.push(p);
        errors.push(err);
    }
    if keys.is_empty() {
        return Err(Error::Parse("fringe CSV has no data rows".into()));
    }
    let with_err = errors.iter().filter(|e| e.is_some()).count();
    if with_err != 0 && with_err != errors.len() {
        return Err(Error::Parse("p_err must be given for all rows or for none".into()));
    }
    let g = grid(&keys, "fringe")?;
    let mut populations = Vec::with_capacity(values.len());
    let mut errs = Vec::with_capacity(values.len());
    for i in 0..g.xs.len() {
        for j in 0..g.ys.len() {
            let row = g.cells[&(i, j)];
            populations.push(values[row]);
            errs.push(errors[row].unwrap_or(0.0));
        }
    }
    FringeSeries::new(
        g.xs.iter().map(|t| t * units::MILLISECOND).collect(),
        g.ys.iter().map(|d| d.to_radians()).collect(),
        populations,
        (with_err > 0).then_some(errs),
    )
}

pub fn read_fringe_csv(path: &Path) -> Result<FringeSeries> {
    parse_fringe_csv(&fs::read_to_string(path)?)
}

/// Scattering table with header `B_mG,E_over_kB_nK,a_over_a0`.
pub fn parse_scattering_table(text: &str, a_excited: f64) -> Result<TabulatedModel> {
    let mut rdr = reader(text);
    check_header(&mut rdr, &SCATTERING_HEADER)?;
    let mut keys = Vec::new();
    let mut values = Vec::new();
    for (k, record) in rdr.records().enumerate() {
        let row = k + 2;
        let record = record.map_err(|e| Error::Parse(format!("row {row}: {e}")))?;
        keys.push((
            required(&record, 0, row, "B_mG")?,
            required(&record, 1, row, "E_over_kB_nK")?,
        ));
        values.push(required(&record, 2, row, "a_over_a0")?);
    }
    let g = grid(&keys, "scattering")?;
    let mut table = Vec::with_capacity(values.len());
    for i in 0..g.xs.len() {
        for j in 0..g.ys.len() {
            table.push(values[g.cells[&(i, j)]] * A0);
        }
    }
    TabulatedModel::new(
        g.xs.iter().map(|b| b * units::MILLIGAUSS).collect(),
        g.ys.iter().map(|e| e * KB * units::NANOKELVIN).collect(),
        table,
        a_excited,
    )
}

pub fn read_scattering_table(path: &Path, a_excited: f64) -> Result<TabulatedModel> {
    parse_scattering_table(&fs::read_to_string(path)?, a_excited)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct XyRow {
    pub x: f64,
    pub y: f64,
    pub y_err: Option<f64>,
}

/// Two- or three-column numeric CSV `(x, y, y_err?)`; a non-numeric first
/// line is taken as a header.
pub fn parse_xy_csv(text: &str) -> Result<Vec<XyRow>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .flexible(true)
        .has_headers(false)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (k, record) in rdr.records().enumerate() {
        let row = k + 1;
        let record = record.map_err(|e| Error::Parse(format!("row {row}: {e}")))?;
        if k == 0 && record.get(0).is_some_and(|s| s.parse::<f64>().is_err()) {
            continue;
        }
        if record.len() < 2 || record.len() > 3 {
            return Err(Error::Parse(format!(
                "row {row}: expected 2 or 3 columns, found {}",
                record.len()
            )));
        }
        rows.push(XyRow {
            x: required(&record, 0, row, "x")?,
            y: required(&record, 1, row, "y")?,
            y_err: field(&record, 2, row, "y_err")?,
        });
    }
    if rows.is_empty() {
        return Err(Error::Parse("no data rows".into()));
    }
    Ok(rows)
}

/// Pretty JSON with a trailing newline.
pub fn to_json(value: &impl Serialize) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, to_json(value)?)?;
    Ok(())
}
