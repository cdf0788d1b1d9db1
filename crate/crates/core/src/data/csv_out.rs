//! Results persistence: RFC-4180-style CSV with a header row, floats at
//! six significant digits. Output bytes are a pure function of the rows,
//! so reruns with the same results are byte-identical.

use std::fs;
use std::path::Path;

use super::DataError;

#[derive(Debug, Clone, PartialEq)]
pub enum CsvValue {
    Int(i64),
    Float(f64),
    Str(String),
    /// Empty cell (e.g. a column that does not apply to this row).
    Empty,
}

impl From<f64> for CsvValue {
    fn from(v: f64) -> Self {
        Self::Float(v)
    }
}

impl From<i64> for CsvValue {
    fn from(v: i64) -> Self {
        Self::Int(v)
    }
}

impl From<u64> for CsvValue {
    fn from(v: u64) -> Self {
        Self::Int(v as i64)
    }
}

impl From<&str> for CsvValue {
    fn from(v: &str) -> Self {
        Self::Str(v.to_string())
    }
}

/// Format with six significant digits, keeping trailing zeros
/// (0.78951 -> "0.789510"). Magnitudes at or above 10^6 fall back to
/// scientific notation to keep six significant digits.
pub fn format_float(v: f64) -> String {
    if !v.is_finite() {
        return if v.is_nan() { "nan".into() } else if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0.000000".into();
    }
    // nudge compensates log10 landing a hair under a decade boundary
    let magnitude = (v.abs().log10() + 1e-9).floor() as i32;
    if magnitude >= 6 {
        return format!("{v:.5e}");
    }
    let decimals = (5 - magnitude).max(0) as usize;
    format!("{v:.decimals$}")
}

fn escape(field: &str) -> String {
    if field.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

fn render_value(v: &CsvValue) -> String {
    match v {
        CsvValue::Int(i) => i.to_string(),
        CsvValue::Float(f) => format_float(*f),
        CsvValue::Str(s) => escape(s),
        CsvValue::Empty => String::new(),
    }
}

/// Write one results table. Every row must have exactly one value per
/// header column.
pub fn write_results_csv(
    header: &[&str],
    rows: &[Vec<CsvValue>],
    path: &Path,
) -> Result<(), DataError> {
    for (i, row) in rows.iter().enumerate() {
        if row.len() != header.len() {
            return Err(DataError::Format(format!(
                "row {i} has {} fields for {} columns",
                row.len(),
                header.len()
            )));
        }
    }
    let mut out = String::new();
    out.push_str(&header.iter().map(|h| escape(h)).collect::<Vec<_>>().join(","));
    out.push('\n');
    for row in rows {
        out.push_str(&row.iter().map(render_value).collect::<Vec<_>>().join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| DataError::io(path, e))
}
