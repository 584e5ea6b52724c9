//! CSV tables and PGM images, written atomically.
//!
//! Floats are written with Rust's shortest round-trip formatting, so reading
//! a table back reproduces every value exactly.

use std::io::Write;
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder};
use tempfile::NamedTempFile;

use crate::error::{Error, Result};

/// Writes `bytes` to a temporary file next to `path` and renames it over
/// `path`, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<i64> for Cell {
    fn from(v: i64) -> Self {
        Cell::Int(v)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

/// A header row plus data rows.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::InvalidSettings(format!("csv: {e}"));
        w.write_record(&self.header).map_err(csv_err)?;
        for (k, row) in self.rows.iter().enumerate() {
            if row.len() != self.header.len() {
                return Err(Error::SizeMismatch {
                    what: "table row",
                    expected: self.header.len(),
                    got: row.len(),
                });
            }
            let mut fields = Vec::with_capacity(row.len());
            for cell in row {
                fields.push(match cell {
                    Cell::Int(v) => v.to_string(),
                    Cell::Float(v) if v.is_finite() => v.to_string(),
                    Cell::Float(_) => {
                        return Err(Error::InvalidSettings(format!("non-finite value in table row {k}")))
                    }
                    Cell::Text(s) => s.clone(),
                });
            }
            w.write_record(&fields).map_err(csv_err)?;
        }
        w.into_inner()
            .map_err(|e| Error::InvalidSettings(format!("csv: {e}")))
    }
}

pub fn emit_csv(table: &Table, path: &Path) -> Result<()> {
    write_atomic(path, &table.to_csv()?)
}

/// Reads a header plus numeric rows back.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
    let header = rdr
        .headers()
        .map_err(|e| Error::Dataset(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Dataset(e.to_string()))?;
        let row = rec
            .iter()
            .map(|f| f.trim().parse::<f64>().map_err(|_| Error::Dataset(format!("not a number: `{f}`"))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok((header, rows))
}

/// Gray value used when a matrix is constant.
pub const MID_GRAY: u8 = 128;

/// Min-max normalizes a rectangular matrix to 8-bit gray levels.
pub fn to_gray_levels(matrix: &[Vec<f64>]) -> Result<(u32, u32, Vec<u8>)> {
    let height = matrix.len();
    let width = matrix.first().map_or(0, Vec::len);
    if height == 0 || width == 0 || matrix.iter().any(|r| r.len() != width) {
        return Err(Error::InvalidSettings("image matrix must be non-empty and rectangular".into()));
    }
    if matrix.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("image matrix"));
    }
    let lo = matrix.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    let hi = matrix.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    let levels = matrix
        .iter()
        .flatten()
        .map(|&v| {
            if hi > lo {
                (255.0 * (v - lo) / (hi - lo)).round() as u8
            } else {
                MID_GRAY
            }
        })
        .collect();
    Ok((width as u32, height as u32, levels))
}

/// Plain (ASCII) PGM with values min-max normalized to `0..=255`.
pub fn emit_pgm(matrix: &[Vec<f64>], path: &Path) -> Result<()> {
    let (width, height, levels) = to_gray_levels(matrix)?;
    let mut buf = Vec::new();
    PnmEncoder::new(&mut buf)
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Ascii))
        .write_image(&levels, width, height, ExtendedColorType::L8)
        .map_err(|e| Error::InvalidSettings(format!("pgm encoding: {e}")))?;
    write_atomic(path, &buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let values = [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE, -0.0];
        let mut t = Table::new(["k", "v"]);
        for (k, &v) in values.iter().enumerate() {
            t.push(vec![k.into(), v.into()]);
        }
        emit_csv(&t, &path).unwrap();
        let (header, rows) = read_csv(&path).unwrap();
        assert_eq!(header, ["k", "v"]);
        for (row, &v) in rows.iter().zip(&values) {
            assert_eq!(row[1].to_bits(), v.to_bits());
        }
    }

    #[test]
    fn nan_rejected() {
        let mut t = Table::new(["v"]);
        t.push(vec![f64::NAN.into()]);
        assert!(t.to_csv().is_err());
        assert!(to_gray_levels(&[vec![1.0, f64::NAN]]).is_err());
    }

    #[test]
    fn constant_matrix_is_mid_gray() {
        let (_, _, g) = to_gray_levels(&vec![vec![3.0; 4]; 2]).unwrap();
        assert!(g.iter().all(|&v| v == MID_GRAY));
        let (w, h, g) = to_gray_levels(&[vec![0.0, 1.0], vec![0.5, 0.25]]).unwrap();
        assert_eq!((w, h), (2, 2));
        assert_eq!(g, [0, 255, 128, 64]);
    }

    #[test]
    fn pgm_is_plain_graymap() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.pgm");
        emit_pgm(&[vec![0.0, 2.0, 1.0]], &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("P2"));
        let nums: Vec<u32> = text
            .split_whitespace()
            .skip(1)
            .map(|t| t.parse().unwrap())
            .collect();
        assert_eq!(nums, [3, 1, 255, 0, 255, 128]);
    }

    #[test]
    fn unwritable_path_is_an_error() {
        let t = Table::new(["v"]);
        assert!(emit_csv(&t, Path::new("/nonexistent-dir/x.csv")).is_err());
    }
}
