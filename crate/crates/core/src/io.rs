//! CSV and JSON formats.
//!
//! Curve panels: the first row holds the grid points, every further row one
//! curve. Operators: the first row holds the grid points, then one kernel row
//! per grid point. Numbers are written with the shortest representation that
//! parses back to the same `f64`, so write → read round-trips bit-exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::func_core::{CurveSample, Grid, HsOperator};
use crate::tail_diag::HillCurve;

/// Numeric table with a header row. `rows[r][c]` came from data row `r + 1`
/// (1-based, header is row 1) and column `c + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

fn parse_cell(s: &str, row: usize, col: usize) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::Parse(format!("row {row}, column {col}: cannot parse {s:?} as a number")))
}

/// Reads a header row and rectangular numeric data rows. Errors carry 1-based
/// file row and column numbers.
pub fn read_table(reader: impl Read) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        Some(r) => r?.iter().map(|s| s.trim().to_string()).collect::<Vec<_>>(),
        None => return Err(Error::Parse("empty file".into())),
    };
    let width = header.len();
    let mut rows = Vec::new();
    for (i, rec) in records.enumerate() {
        let rec = rec?;
        let row = i + 2;
        if rec.len() != width {
            return Err(Error::Parse(format!(
                "row {row}: expected {width} columns, found {}",
                rec.len()
            )));
        }
        let vals = rec
            .iter()
            .enumerate()
            .map(|(c, s)| {
                if s.trim().is_empty() {
                    Err(Error::Parse(format!("row {row}, column {}: missing value", c + 1)))
                } else {
                    parse_cell(s, row, c + 1)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(vals);
    }
    Ok(Table { header, rows })
}

fn grid_from_header(header: &[String]) -> Result<Arc<Grid>> {
    let points = header
        .iter()
        .enumerate()
        .map(|(c, s)| parse_cell(s, 1, c + 1))
        .collect::<Result<Vec<_>>>()?;
    Grid::trapezoid(points)
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

fn write_rows(
    writer: impl Write,
    header: impl IntoIterator<Item = String>,
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_sample(writer: impl Write, sample: &CurveSample) -> Result<()> {
    let data = sample.data();
    write_rows(
        writer,
        sample.grid().points().iter().map(|p| fmt(*p)),
        data.row_iter().map(|r| r.iter().map(|v| fmt(*v)).collect()),
    )
}

/// Reads a curve panel; the grid gets trapezoid weights from the header points.
pub fn read_sample(reader: impl Read) -> Result<CurveSample> {
    let table = read_table(reader)?;
    let grid = grid_from_header(&table.header)?;
    if table.rows.is_empty() {
        return Err(Error::EmptySample);
    }
    let t = grid.len();
    let flat = table.rows.into_iter().flatten().collect::<Vec<_>>();
    CurveSample::new(grid, DMatrix::from_row_slice(flat.len() / t, t, &flat))
}

pub fn write_operator(writer: impl Write, op: &HsOperator) -> Result<()> {
    write_rows(
        writer,
        op.grid().points().iter().map(|p| fmt(*p)),
        op.kernel().row_iter().map(|r| r.iter().map(|v| fmt(*v)).collect()),
    )
}

pub fn read_operator(reader: impl Read) -> Result<HsOperator> {
    let table = read_table(reader)?;
    let grid = grid_from_header(&table.header)?;
    let t = grid.len();
    if table.rows.len() != t {
        return Err(Error::Dimension(format!(
            "kernel has {} rows on a grid of {t} points",
            table.rows.len()
        )));
    }
    let flat = table.rows.into_iter().flatten().collect::<Vec<_>>();
    HsOperator::new(grid, DMatrix::from_row_slice(t, t, &flat))
}

/// Columns `k, alpha_hat`; undefined estimates are left empty.
pub fn write_hill_curve(writer: impl Write, curve: &HillCurve) -> Result<()> {
    write_rows(
        writer,
        ["k".to_string(), "alpha_hat".to_string()],
        curve
            .k_values
            .iter()
            .zip(&curve.alpha_hat)
            .map(|(k, a)| vec![k.to_string(), a.map(fmt).unwrap_or_default()]),
    )
}

/// Generic CSV with a string header and preformatted cells.
pub fn write_csv(writer: impl Write, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    write_rows(writer, header.iter().map(|s| s.to_string()), rows.iter().cloned())
}

/// Pretty-printed JSON followed by a newline.
pub fn write_json(mut writer: impl Write, value: &impl Serialize) -> Result<()> {
    serde_json::to_writer_pretty(&mut writer, value)?;
    writer.write_all(b"\n")?;
    Ok(())
}

pub fn to_json_string(value: &impl Serialize) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)?)
}

pub fn create(path: impl AsRef<Path>) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

pub fn open(path: impl AsRef<Path>) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path)?))
}

pub fn read_sample_file(path: impl AsRef<Path>) -> Result<CurveSample> {
    read_sample(open(path)?)
}

pub fn write_sample_file(path: impl AsRef<Path>, sample: &CurveSample) -> Result<()> {
    let mut w = create(path)?;
    write_sample(&mut w, sample)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_round_trip_is_bit_exact() {
        let grid = Grid::trapezoid(vec![0.0, 0.1, 0.35, 1.0]).unwrap();
        let data = DMatrix::from_row_slice(2, 4, &[1.0 / 3.0, -2e-300, 1e300, 0.1 + 0.2, 5.0, -0.0, 7.25, 1e-5]);
        let s = CurveSample::new(grid, data).unwrap();
        let mut buf = Vec::new();
        write_sample(&mut buf, &s).unwrap();
        let back = read_sample(buf.as_slice()).unwrap();
        assert_eq!(back.grid().points(), s.grid().points());
        assert_eq!(back.grid().weights(), s.grid().weights());
        for (a, b) in back.data().iter().zip(s.data().iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn operator_round_trip() {
        let grid = Grid::uniform(5).unwrap();
        let op = HsOperator::from_fn(grid, |t, s| (t * 3.0).sin() * s.exp()).unwrap();
        let mut buf = Vec::new();
        write_operator(&mut buf, &op).unwrap();
        assert_eq!(read_operator(buf.as_slice()).unwrap(), op);
    }

    #[test]
    fn errors_carry_locations() {
        let e = read_sample("0,1\n1,2\n3,x\n".as_bytes()).unwrap_err().to_string();
        assert!(e.contains("row 3, column 2"), "{e}");
        let e = read_sample("0,1\n1,2\n3\n".as_bytes()).unwrap_err().to_string();
        assert!(e.contains("row 3"), "{e}");
        assert!(matches!(read_sample("0,1\n".as_bytes()), Err(Error::EmptySample)));
    }
}
