use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

/// Column names recognised as ground-truth labels when none is given.
const DEFAULT_LABEL_COLUMNS: [&str; 2] = ["label", "y"];

/// Load a headered CSV file. With `label_column = None` a column named `label`
/// or `y` is used as the label when present.
pub fn load_csv(path: impl AsRef<Path>, label_column: Option<&str>) -> Result<Dataset> {
    read_csv(File::open(path)?, label_column)
}

/// Parse CSV from any reader. Row numbers in errors count data rows from 1
/// (the header is not counted); column numbers count from 1.
pub fn read_csv<R: Read>(reader: R, label_column: Option<&str>) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let label_pos = match label_column {
        Some(name) => Some(
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Format(format!("label column '{name}' not found")))?,
        ),
        None => headers
            .iter()
            .position(|h| DEFAULT_LABEL_COLUMNS.contains(&h.to_ascii_lowercase().as_str())),
    };
    let names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(j, _)| Some(*j) != label_pos)
        .map(|(_, h)| h.clone())
        .collect();
    if names.is_empty() {
        return Err(Error::Format("no feature columns".into()));
    }

    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut n = 0;
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let row = i + 1;
        if record.len() != headers.len() {
            return Err(Error::Parse {
                row,
                column: record.len().min(headers.len()) + 1,
                message: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        for (j, cell) in record.iter().enumerate() {
            let cell = cell.trim();
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                column: j + 1,
                message: format!("'{cell}' is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    column: j + 1,
                    message: format!("'{cell}' is not finite"),
                });
            }
            if Some(j) == label_pos {
                if v != 0.0 && v != 1.0 {
                    return Err(Error::Format(format!(
                        "label at row {row} is {cell}, expected 0 or 1"
                    )));
                }
                labels.push(v == 1.0);
            } else {
                values.push(v);
            }
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::Empty("csv rows"));
    }
    let features = Array2::from_shape_vec((n, names.len()), values)
        .map_err(|e| Error::Format(e.to_string()))?;
    Dataset::new(features, label_pos.map(|_| labels), Some(names))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub row_index: usize,
    pub split: Split,
    pub score: f64,
    pub label: Option<bool>,
}

/// Columns `row_index, split, score` plus `label` when any row carries one.
pub fn write_scores_csv<W: Write>(writer: W, rows: &[ScoreRow]) -> Result<()> {
    let with_label = rows.iter().any(|r| r.label.is_some());
    let mut w = csv::Writer::from_writer(writer);
    if with_label {
        w.write_record(["row_index", "split", "score", "label"])?;
    } else {
        w.write_record(["row_index", "split", "score"])?;
    }
    for r in rows {
        let split = match r.split {
            Split::Train => "train",
            Split::Test => "test",
        };
        let mut rec = vec![r.row_index.to_string(), split.to_string(), r.score.to_string()];
        if with_label {
            rec.push(r.label.map(|l| u8::from(l).to_string()).unwrap_or_default());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
