//! CSV ingestion and debug dumps.
//!
//! Input format: header row names the columns, the first column is the
//! timestamp, remaining columns are numeric features. An empty cell or the
//! literal token `NaN` is a missing value.

use crate::data::{RawSeries, TimeSeriesWindow};
use crate::error::{Error, Result};
use ndarray::Array2;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

/// Loads a series from CSV. Malformed rows report their 1-based line number;
/// unparseable values name the offending column.
pub fn load_csv(path: impl AsRef<Path>) -> Result<RawSeries> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::Config(format!("cannot open {}: {e}", path.display())))?;

    let headers = reader
        .headers()
        .map_err(|e| Error::Csv { line: 1, message: e.to_string() })?
        .clone();
    if headers.is_empty() {
        return Err(Error::Csv {
            line: 1,
            message: "header row must name a timestamp column".into(),
        });
    }
    let feature_names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let d = feature_names.len();

    let mut timestamps = Vec::new();
    let mut rows: Vec<f64> = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 2; // header is line 1
        let record = record.map_err(|e| Error::Csv { line, message: e.to_string() })?;
        if record.len() != d + 1 {
            return Err(Error::Csv {
                line,
                message: format!("expected {} fields, found {}", d + 1, record.len()),
            });
        }
        let ts_text = record.get(0).unwrap_or("").trim();
        let ts: f64 = ts_text.parse().map_err(|_| Error::Csv {
            line,
            message: format!("timestamp '{ts_text}' is not a number"),
        })?;
        if let Some(&prev) = timestamps.last() {
            if ts < prev {
                return Err(Error::Csv {
                    line,
                    message: format!("timestamps must be sorted ascending ({ts} after {prev})"),
                });
            }
        }
        timestamps.push(ts);
        for (col, name) in feature_names.iter().enumerate() {
            let text = record.get(col + 1).unwrap_or("").trim();
            let value = if text.is_empty() || text == "NaN" {
                f64::NAN
            } else {
                text.parse().map_err(|_| Error::Csv {
                    line,
                    message: format!("column '{name}': '{text}' is not a number"),
                })?
            };
            rows.push(value);
        }
    }

    let t = timestamps.len();
    let values = Array2::from_shape_vec((t, d), rows)
        .expect("row collection matches declared shape");
    RawSeries::new(timestamps, values, feature_names)
}

/// Writes a complete matrix with the input's schema: header, timestamp
/// column, then one column per feature.
pub fn write_matrix_csv(
    path: impl AsRef<Path>,
    timestamps: &[f64],
    values: &Array2<f64>,
    feature_names: &[String],
) -> Result<()> {
    let file = File::create(path.as_ref())?;
    let mut out = BufWriter::new(file);
    write!(out, "t")?;
    for name in feature_names {
        write!(out, ",{name}")?;
    }
    writeln!(out)?;
    for (t, row) in values.rows().into_iter().enumerate() {
        write!(out, "{}", timestamps[t])?;
        for v in row {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

/// Debug dump of one window: a `T,D` header line, then the value rows, the
/// mask rows, and the delta rows, all row-major.
pub fn dump_window_csv(path: impl AsRef<Path>, window: &TimeSeriesWindow) -> Result<()> {
    let file = File::create(path.as_ref())?;
    let mut out = BufWriter::new(file);
    let (t, d) = window.x_bar.dim();
    writeln!(out, "{t},{d}")?;
    for block in [&window.x_bar, &window.mask.entries, &window.delta.entries] {
        for row in block.rows() {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{}", line.join(","))?;
        }
    }
    out.flush()?;
    Ok(())
}
