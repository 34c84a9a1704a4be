//! Long-format result tables and CSV emission.

use std::fmt::Write as _;

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub axis: f64,
    pub series: String,
    pub value: f64,
}

/// `(axis, series, value)` rows, kept sorted by axis then series name.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub axis_name: String,
    rows: Vec<Row>,
}

impl ResultTable {
    pub fn new(axis_name: impl Into<String>) -> Self {
        Self { axis_name: axis_name.into(), rows: Vec::new() }
    }

    pub fn push(&mut self, axis: f64, series: impl Into<String>, value: f64) {
        self.rows.push(Row { axis, series: series.into(), value });
    }

    pub fn extend(&mut self, other: ResultTable) {
        self.rows.extend(other.rows);
    }

    pub fn sort(&mut self) {
        self.rows
            .sort_by(|a, b| a.axis.total_cmp(&b.axis).then_with(|| a.series.cmp(&b.series)));
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    pub fn value(&self, axis: f64, series: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.axis == axis && r.series == series).map(|r| r.value)
    }

    /// `(axis, value)` pairs of one series in axis order.
    pub fn series(&self, name: &str) -> Vec<(f64, f64)> {
        let mut v: Vec<(f64, f64)> =
            self.rows.iter().filter(|r| r.series == name).map(|r| (r.axis, r.value)).collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        v
    }

    pub fn to_csv(&self) -> String {
        let mut sorted = self.clone();
        sorted.sort();
        let mut out = format!("{},series,value\n", sorted.axis_name);
        for r in &sorted.rows {
            let _ = writeln!(out, "{},{},{}", fmt_num(r.axis), r.series, fmt_num(r.value));
        }
        out
    }
}

/// Twelve significant digits, shortest form.
pub fn fmt_num(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    let rounded: f64 = format!("{v:.11e}").parse().unwrap_or(v);
    let s = rounded.to_string();
    if s == "-0" {
        "0".to_string()
    } else {
        s
    }
}

/// Writes a rectangular CSV with the given header.
pub fn wide_csv(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&r.join(","));
        out.push('\n');
    }
    out
}
