//! CSV formats for the two samples and flat `key=value` configuration files.
//!
//! Primary files have the header `y,w1,…,wp`; validation files
//! `w1,…,wp,x1,…,xp`. Lines starting with `#` are ignored. Values are
//! written with 17 significant digits so a save/load round trip is exact.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::sample::{PrimarySample, ValidationSample};

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<f64>>,
}

fn read_table<R: Read>(reader: R) -> Result<Table> {
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = csv
        .headers()
        .map_err(|e| parse_error(1, 0, e.to_string()))?
        .iter()
        .map(|h| h.to_string())
        .collect();
    if header.is_empty() || header.iter().all(|h| h.is_empty()) {
        return Err(parse_error(1, 0, "file is empty or has no header".into()));
    }
    let width = header.len();
    let mut rows = Vec::new();
    for record in csv.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_error(line, 0, e.to_string())
        })?;
        let line = record.position().map_or(rows.len() + 2, |p| p.line() as usize);
        if record.len() != width {
            return Err(parse_error(
                line,
                record.len().min(width) + 1,
                format!("expected {width} fields, found {}", record.len()),
            ));
        }
        let mut row = Vec::with_capacity(width);
        for (k, field) in record.iter().enumerate() {
            let value: f64 = field
                .parse()
                .map_err(|_| parse_error(line, k + 1, format!("'{field}' is not a number")))?;
            if !value.is_finite() {
                return Err(Error::NonFiniteValue {
                    row: line,
                    column: k + 1,
                });
            }
            row.push(value);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(parse_error(2, 0, "no data rows".into()));
    }
    Ok(Table { header, rows })
}

fn parse_error(row: usize, column: usize, message: String) -> Error {
    Error::Parse {
        row,
        column,
        message,
    }
}

fn expect_names(header: &[String], offset: usize, prefix: &str, p: usize) -> Result<()> {
    for k in 0..p {
        let want = format!("{prefix}{}", k + 1);
        let got = &header[offset + k];
        if !got.eq_ignore_ascii_case(&want) {
            return Err(parse_error(
                1,
                offset + k + 1,
                format!("header field '{got}' should be '{want}'"),
            ));
        }
    }
    Ok(())
}

fn matrix(rows: &[Vec<f64>], cols: std::ops::Range<usize>) -> DMatrix<f64> {
    let width = cols.len();
    DMatrix::from_fn(rows.len(), width, |i, j| rows[i][cols.start + j])
}

pub fn read_primary<R: Read>(reader: R) -> Result<PrimarySample> {
    let table = read_table(reader)?;
    if table.header.len() < 2 || !table.header[0].eq_ignore_ascii_case("y") {
        return Err(parse_error(1, 1, "primary header must be y,w1,...,wp".into()));
    }
    let p = table.header.len() - 1;
    expect_names(&table.header, 1, "w", p)?;
    let y = DVector::from_iterator(table.rows.len(), table.rows.iter().map(|r| r[0]));
    PrimarySample::new(y, matrix(&table.rows, 1..p + 1))
}

/// Reads a validation table. `expected_p`, when given, must match the
/// header.
pub fn read_validation<R: Read>(reader: R, expected_p: Option<usize>) -> Result<ValidationSample> {
    let table = read_table(reader)?;
    let width = table.header.len();
    if width < 2 || width % 2 != 0 {
        return Err(Error::DimensionMismatch(format!(
            "validation header needs w1..wp,x1..xp (an even number of columns), found {width}"
        )));
    }
    let p = width / 2;
    if let Some(expected) = expected_p {
        if expected != p {
            return Err(Error::DimensionMismatch(format!(
                "validation data have p = {p} but the primary data have p = {expected}"
            )));
        }
    }
    expect_names(&table.header, 0, "w", p)?;
    expect_names(&table.header, p, "x", p)?;
    ValidationSample::new(matrix(&table.rows, 0..p), matrix(&table.rows, p..2 * p))
}

pub fn load_primary(path: impl AsRef<Path>) -> Result<PrimarySample> {
    read_primary(open(path.as_ref())?)
}

pub fn load_validation(path: impl AsRef<Path>, expected_p: usize) -> Result<ValidationSample> {
    read_validation(open(path.as_ref())?, Some(expected_p))
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn write_rows<W: Write>(out: W, header: Vec<String>, rows: impl Iterator<Item = Vec<f64>>) -> Result<()> {
    let mut csv = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(e.to_string());
    csv.write_record(&header).map_err(io)?;
    for row in rows {
        csv.write_record(row.iter().map(|v| format!("{v:.16e}"))).map_err(io)?;
    }
    csv.flush()?;
    Ok(())
}

fn names(prefix: &str, p: usize) -> impl Iterator<Item = String> + '_ {
    (1..=p).map(move |k| format!("{prefix}{k}"))
}

pub fn write_primary<W: Write>(out: W, sample: &PrimarySample) -> Result<()> {
    let header = std::iter::once("y".to_string()).chain(names("w", sample.p())).collect();
    let rows = (0..sample.n()).map(|i| {
        std::iter::once(sample.y()[i])
            .chain(sample.w().row(i).iter().copied())
            .collect()
    });
    write_rows(out, header, rows)
}

pub fn write_validation<W: Write>(out: W, sample: &ValidationSample) -> Result<()> {
    let p = sample.p();
    let header = names("w", p).chain(names("x", p)).collect();
    let rows = (0..sample.len()).map(|s| {
        sample
            .w_tilde()
            .row(s)
            .iter()
            .chain(sample.x_tilde().row(s).iter())
            .copied()
            .collect()
    });
    write_rows(out, header, rows)
}

pub fn save_primary(path: impl AsRef<Path>, sample: &PrimarySample) -> Result<()> {
    write_primary(create(path.as_ref())?, sample)
}

pub fn save_validation(path: impl AsRef<Path>, sample: &ValidationSample) -> Result<()> {
    write_validation(create(path.as_ref())?, sample)
}

/// Parses `key = value` lines; blank lines and `#` comments are skipped.
/// A repeated key is an error.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            parse_error(idx + 1, 1, format!("expected key=value, found '{line}'"))
        })?;
        let key = key.trim().to_string();
        if key.is_empty() {
            return Err(parse_error(idx + 1, 1, "empty key".into()));
        }
        if out.iter().any(|(k, _)| *k == key) {
            return Err(Error::InvalidConfig(format!("key '{key}' is set twice")));
        }
        out.push((key, value.trim().to_string()));
    }
    Ok(out)
}
