//! CSV and JSON plumbing. Floats go out as `{:.16e}`, which round-trips.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{CliError, Result};

/// A numeric CSV table with its header row.
#[derive(Debug, Clone)]
pub struct Table {
    pub headers: Vec<String>,
    pub values: DMatrix<f64>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }
}

pub fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

fn parse_cell(path: &Path, line: u64, column: usize, header: &str, cell: &str) -> Result<f64> {
    let err = |message: String| CliError::Csv {
        path: path.display().to_string(),
        line,
        column,
        message,
    };
    let v: f64 = cell
        .trim()
        .parse()
        .map_err(|_| err(format!("cannot parse {cell:?} as a number (column {header:?})")))?;
    if !v.is_finite() {
        return Err(err(format!("non-finite value {cell:?} (column {header:?})")));
    }
    Ok(v)
}

/// Reads a header row followed by numeric rows of the same width.
pub fn read_table(path: &Path) -> Result<Table> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(file);
    let csv_err = |e: csv::Error| {
        let line = e.position().map_or(0, |p| p.line());
        CliError::Csv {
            path: path.display().to_string(),
            line,
            column: 0,
            message: e.to_string(),
        }
    };
    let headers: Vec<String> = rdr.headers().map_err(csv_err)?.iter().map(|h| h.trim().to_string()).collect();
    if headers.is_empty() || headers.iter().all(String::is_empty) {
        return Err(CliError::Csv {
            path: path.display().to_string(),
            line: 1,
            column: 1,
            message: "missing header row".into(),
        });
    }
    let width = headers.len();
    let mut data = Vec::new();
    let mut rows = 0usize;
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != width {
            return Err(CliError::Csv {
                path: path.display().to_string(),
                line,
                column: rec.len().min(width) + 1,
                message: format!("ragged row: expected {width} fields, found {}", rec.len()),
            });
        }
        for (j, cell) in rec.iter().enumerate() {
            data.push(parse_cell(path, line, j + 1, &headers[j], cell)?);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(CliError::validation(format!("{}: no data rows", path.display())));
    }
    Ok(Table {
        headers,
        values: DMatrix::from_row_slice(rows, width, &data),
    })
}

/// Parses header cells as numbers, as used for curve design points.
pub fn numeric_headers(path: &Path, headers: &[String]) -> Result<Vec<f64>> {
    headers
        .iter()
        .enumerate()
        .map(|(j, h)| parse_cell(path, 1, j + 1, h, h))
        .collect()
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Json {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// The declared output path, or standard output.
pub struct Sink {
    path: Option<PathBuf>,
    inner: Box<dyn Write>,
}

impl Sink {
    pub fn open(path: Option<&Path>) -> Result<Self> {
        let inner: Box<dyn Write> = match path {
            Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| CliError::io(p, e))?)),
            None => Box::new(BufWriter::new(std::io::stdout())),
        };
        Ok(Self {
            path: path.map(Path::to_path_buf),
            inner,
        })
    }

    fn err(&self, e: std::io::Error) -> CliError {
        CliError::io(self.path.as_deref().unwrap_or(Path::new("<stdout>")), e)
    }

    pub fn line(&mut self, fields: &[String]) -> Result<()> {
        let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
        w.write_record(fields).map_err(|e| self.err(e.into()))?;
        let bytes = w.into_inner().map_err(|e| self.err(e.into_error()))?;
        self.inner.write_all(&bytes).map_err(|e| self.err(e))
    }

    pub fn json<T: Serialize>(&mut self, value: &T) -> Result<()> {
        let text = serde_json::to_string_pretty(value).map_err(|e| self.err(e.into()))?;
        writeln!(self.inner, "{text}").map_err(|e| self.err(e))
    }

    pub fn finish(mut self) -> Result<()> {
        self.inner.flush().map_err(|e| self.err(e))
    }
}

/// Dense row-major matrix: header `i,0,1,..`, then the row index and its
/// entries on each line.
pub fn write_matrix(sink: &mut Sink, m: &DMatrix<f64>) -> Result<()> {
    let mut header = vec!["i".to_string()];
    header.extend((0..m.ncols()).map(|j| j.to_string()));
    sink.line(&header)?;
    for (i, row) in m.row_iter().enumerate() {
        let mut fields = vec![i.to_string()];
        fields.extend(row.iter().map(|v| fmt(*v)));
        sink.line(&fields)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, 0.0] {
            let s = fmt(v);
            assert_eq!(s.parse::<f64>().unwrap(), v);
            assert_eq!(s.split('e').next().unwrap().trim_start_matches('-').len(), 18, "{s}");
        }
    }

    #[test]
    fn header_design_points() {
        let h: Vec<String> = ["0", "0.5", " 1 "].map(String::from).to_vec();
        assert_eq!(numeric_headers(Path::new("c.csv"), &h).unwrap(), vec![0.0, 0.5, 1.0]);
        let bad: Vec<String> = ["0", "t"].map(String::from).to_vec();
        match numeric_headers(Path::new("c.csv"), &bad) {
            Err(CliError::Csv { line: 1, column: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
    }
}
