//! Metrics CSV.
//!
//! Columns, in order: `epoch, class, train_iou, iou_el, iou_m, val_miou,
//! test_miou, label_quality, triggered, trigger_epoch, corrected_pixels, fit_a,
//! fit_b, fit_c, fit_sse, consistency_loss, train_loss`. The aggregate row of
//! an epoch has `class = all`. Undefined values are empty cells and reals are
//! written with 6 significant digits. New columns are only ever appended.

use std::path::Path;

use super::write_file;
use crate::error::{Error, Result};
use crate::trainer::MetricsRow;

pub const METRICS_COLUMNS: [&str; 17] = [
    "epoch",
    "class",
    "train_iou",
    "iou_el",
    "iou_m",
    "val_miou",
    "test_miou",
    "label_quality",
    "triggered",
    "trigger_epoch",
    "corrected_pixels",
    "fit_a",
    "fit_b",
    "fit_c",
    "fit_sse",
    "consistency_loss",
    "train_loss",
];

const AGGREGATE: &str = "all";

/// `v` rounded to 6 significant digits, printed in the shortest form that parses back to it.
pub fn fmt_sig6(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    let rounded: f64 = format!("{v:.5e}").parse().expect("scientific output parses");
    if rounded == 0.0 {
        // drop the sign of negative zero
        return "0".into();
    }
    rounded.to_string()
}

/// The value a real takes after a trip through the CSV.
pub fn round_sig6(v: f64) -> f64 {
    fmt_sig6(v).parse().expect("formatted reals parse")
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn opt_real(v: Option<f64>) -> String {
    v.map(fmt_sig6).unwrap_or_default()
}

fn record(r: &MetricsRow) -> [String; 17] {
    [
        r.epoch.to_string(),
        r.class.map(|c| c.to_string()).unwrap_or_else(|| AGGREGATE.into()),
        opt_real(r.train_iou),
        opt_real(r.iou_el),
        opt_real(r.iou_m),
        opt_real(r.val_miou),
        opt_real(r.test_miou),
        opt_real(r.label_quality),
        r.triggered.to_string(),
        opt(r.trigger_epoch),
        r.corrected_pixels.to_string(),
        opt_real(r.fit_a),
        opt_real(r.fit_b),
        opt_real(r.fit_c),
        opt_real(r.fit_sse),
        opt_real(r.consistency_loss),
        opt_real(r.train_loss),
    ]
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e),
        other => Error::invalid(format!("metrics CSV: {other:?}")),
    }
}

pub fn metrics_to_csv(rows: &[MetricsRow]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(METRICS_COLUMNS).map_err(csv_err)?;
    for r in rows {
        w.write_record(record(r)).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("CSV output is ASCII"))
}

fn parse_cell<T: std::str::FromStr>(cell: &str, line: usize, col: &str) -> Result<Option<T>> {
    if cell.is_empty() {
        return Ok(None);
    }
    cell.parse()
        .map(Some)
        .map_err(|_| Error::invalid(format!("metrics CSV line {line}: bad {col} value {cell:?}")))
}

fn required<T: std::str::FromStr>(cell: &str, line: usize, col: &str) -> Result<T> {
    parse_cell(cell, line, col)?.ok_or_else(|| Error::invalid(format!("metrics CSV line {line}: {col} is empty")))
}

pub fn metrics_from_csv(text: &str) -> Result<Vec<MetricsRow>> {
    let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = rd.headers().map_err(csv_err)?.clone();
    let n = METRICS_COLUMNS.len();
    if header.len() < n || header.iter().take(n).ne(METRICS_COLUMNS) {
        return Err(Error::invalid(format!(
            "metrics CSV header must start with {}",
            METRICS_COLUMNS.join(",")
        )));
    }
    let mut rows = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let line = i + 2;
        let c = |j: usize| rec.get(j).unwrap_or("");
        let class = match c(1) {
            AGGREGATE => None,
            s => Some(required::<u8>(s, line, "class")?),
        };
        rows.push(MetricsRow {
            epoch: required(c(0), line, "epoch")?,
            class,
            train_iou: parse_cell(c(2), line, "train_iou")?,
            iou_el: parse_cell(c(3), line, "iou_el")?,
            iou_m: parse_cell(c(4), line, "iou_m")?,
            val_miou: parse_cell(c(5), line, "val_miou")?,
            test_miou: parse_cell(c(6), line, "test_miou")?,
            label_quality: parse_cell(c(7), line, "label_quality")?,
            triggered: required(c(8), line, "triggered")?,
            trigger_epoch: parse_cell(c(9), line, "trigger_epoch")?,
            corrected_pixels: required(c(10), line, "corrected_pixels")?,
            fit_a: parse_cell(c(11), line, "fit_a")?,
            fit_b: parse_cell(c(12), line, "fit_b")?,
            fit_c: parse_cell(c(13), line, "fit_c")?,
            fit_sse: parse_cell(c(14), line, "fit_sse")?,
            consistency_loss: parse_cell(c(15), line, "consistency_loss")?,
            train_loss: parse_cell(c(16), line, "train_loss")?,
        });
    }
    Ok(rows)
}

pub fn write_metrics_csv(rows: &[MetricsRow], path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), metrics_to_csv(rows)?.as_bytes())
}

pub fn read_metrics_csv(path: impl AsRef<Path>) -> Result<Vec<MetricsRow>> {
    let bytes = super::read_file(path.as_ref())?;
    metrics_from_csv(&String::from_utf8_lossy(&bytes))
}

/// Appends rows as they are produced so an aborted run keeps what it logged.
pub struct MetricsWriter {
    inner: csv::Writer<std::fs::File>,
}

impl MetricsWriter {
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::create(path.as_ref())?;
        let mut inner = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(file);
        inner.write_record(METRICS_COLUMNS).map_err(csv_err)?;
        inner.flush()?;
        Ok(MetricsWriter { inner })
    }

    pub fn append(&mut self, rows: &[MetricsRow]) -> Result<()> {
        for r in rows {
            self.inner.write_record(record(r)).map_err(csv_err)?;
        }
        self.inner.flush()?;
        Ok(())
    }
}
