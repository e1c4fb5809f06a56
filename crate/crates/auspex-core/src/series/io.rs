//! Frame ingestion and serialization: delimiter-separated text with a header
//! row, one integer timestamp column, float metric columns and an optional
//! 0/1 label column.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::series::MetricFrame;

/// Maps file columns onto frame fields.
#[derive(Debug, Clone)]
pub struct ColumnSchema {
    /// Name of the timestamp column (epoch seconds).
    pub timestamp: String,
    /// Metric columns to read; empty means every column that is neither the
    /// timestamp nor the label, in header order.
    pub metrics: Vec<String>,
    /// Label column name. The column itself is optional in the file.
    pub label: Option<String>,
    /// Aspect tag per metric name; metrics not listed become their own aspect.
    pub aspects: BTreeMap<String, String>,
    pub delimiter: u8,
}

impl Default for ColumnSchema {
    fn default() -> Self {
        Self {
            timestamp: "ts".into(),
            metrics: Vec::new(),
            label: Some("label".into()),
            aspects: BTreeMap::new(),
            delimiter: b',',
        }
    }
}

/// Reads a frame from `path`. Rows are sorted by timestamp before
/// validation; duplicate timestamps, non-numeric cells and non-uniform
/// sampling are rejected.
pub fn load_frame(path: impl AsRef<Path>, schema: &ColumnSchema) -> Result<MetricFrame> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::InvalidData(format!("{other:?}")),
        })?;

    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::InvalidData(format!("bad header row: {e}")))?
        .iter()
        .map(str::to_owned)
        .collect();
    let col_of = |name: &str| headers.iter().position(|h| h == name);

    let ts_col = col_of(&schema.timestamp).ok_or_else(|| {
        Error::InvalidData(format!("timestamp column {:?} not in header", schema.timestamp))
    })?;
    let label_col = schema.label.as_deref().and_then(col_of);

    let metric_cols: Vec<(usize, String)> = if schema.metrics.is_empty() {
        headers
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != ts_col && Some(*i) != label_col)
            .map(|(i, h)| (i, h.clone()))
            .collect()
    } else {
        schema
            .metrics
            .iter()
            .map(|name| {
                col_of(name)
                    .map(|i| (i, name.clone()))
                    .ok_or_else(|| Error::InvalidData(format!("metric column {name:?} not in header")))
            })
            .collect::<Result<_>>()?
    };
    if metric_cols.is_empty() {
        return Err(Error::InvalidData("no metric columns".into()));
    }

    // (timestamp, values, label) triples, sorted after the parse.
    let mut rows: Vec<(i64, Vec<f64>, u8)> = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::InvalidData(format!("row {}: {e}", line + 2)))?;
        let cell = |col: usize| -> Result<&str> {
            record
                .get(col)
                .ok_or_else(|| Error::InvalidData(format!("row {}: missing column {col}", line + 2)))
        };
        let ts: i64 = cell(ts_col)?.trim().parse().map_err(|_| {
            Error::InvalidData(format!("row {}: non-integer timestamp {:?}", line + 2, cell(ts_col).unwrap()))
        })?;
        let mut vals = Vec::with_capacity(metric_cols.len());
        for (col, name) in &metric_cols {
            let raw = cell(*col)?.trim();
            let v: f64 = raw.parse().map_err(|_| {
                Error::InvalidData(format!("row {}: non-numeric cell {raw:?} in {name:?}", line + 2))
            })?;
            vals.push(v);
        }
        let label = match label_col {
            Some(col) => match cell(col)?.trim() {
                "0" => 0,
                "1" => 1,
                other => {
                    return Err(Error::InvalidData(format!(
                        "row {}: label {other:?} is not 0 or 1",
                        line + 2
                    )))
                }
            },
            None => 0,
        };
        rows.push((ts, vals, label));
    }
    if rows.is_empty() {
        return Err(Error::InvalidData(format!("{}: no data rows", path.display())));
    }

    rows.sort_by_key(|(ts, _, _)| *ts);
    for pair in rows.windows(2) {
        if pair[0].0 == pair[1].0 {
            return Err(Error::InvalidData(format!("duplicate timestamp {}", pair[0].0)));
        }
    }

    let len = rows.len();
    let m = metric_cols.len();
    let mut values = Array2::zeros((m, len));
    let mut timestamps = Vec::with_capacity(len);
    let mut labels = Vec::with_capacity(len);
    for (j, (ts, vals, label)) in rows.into_iter().enumerate() {
        timestamps.push(ts);
        labels.push(label);
        for (i, v) in vals.into_iter().enumerate() {
            values[[i, j]] = v;
        }
    }
    let names: Vec<String> = metric_cols.into_iter().map(|(_, n)| n).collect();
    MetricFrame::new(
        timestamps,
        values,
        names,
        schema.aspects.clone(),
        label_col.map(|_| labels),
    )
}

/// Writes a frame in the same format [`load_frame`] reads. Output is
/// byte-stable: floats print in shortest round-trip form.
pub fn write_frame(frame: &MetricFrame, path: impl AsRef<Path>, delimiter: u8) -> Result<()> {
    let path = path.as_ref();
    let mut writer = csv::WriterBuilder::new()
        .delimiter(delimiter)
        .from_path(path)
        .map_err(|e| Error::InvalidData(format!("{}: {e}", path.display())))?;

    let mut header = vec!["ts".to_string()];
    header.extend(frame.names().iter().cloned());
    if frame.labels().is_some() {
        header.push("label".into());
    }
    writer
        .write_record(&header)
        .map_err(|e| Error::InvalidData(e.to_string()))?;

    for (j, &ts) in frame.timestamps().iter().enumerate() {
        let mut record = vec![ts.to_string()];
        for i in 0..frame.num_metrics() {
            record.push(frame.values()[[i, j]].to_string());
        }
        if let Some(labels) = frame.labels() {
            record.push(labels[j].to_string());
        }
        writer
            .write_record(&record)
            .map_err(|e| Error::InvalidData(e.to_string()))?;
    }
    writer
        .flush()
        .map_err(|e| Error::io(path, e))
}
