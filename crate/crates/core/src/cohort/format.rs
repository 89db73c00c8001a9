//! Number formatting shared by the CSV and markdown reports.

use crate::stats::Summary;

/// Fixed-precision CSV value: six decimals, trailing zeros trimmed.
pub fn csv_num(v: f64) -> String {
    crate::dosimetry::format_num(v)
}

pub fn csv_opt(v: Option<f64>) -> String {
    v.map(csv_num).unwrap_or_default()
}

/// `v` with `sig` significant digits (never in exponent form).
pub fn sig(v: f64, sig: usize) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let magnitude = v.abs().log10().floor() as i64;
    let decimals = (sig as i64 - 1 - magnitude).max(0) as usize;
    format!("{v:.decimals$}")
}

pub fn p_value(p: f64) -> String {
    format!("{p:.4}")
}

/// Table cell in the `0.91 ±0.03` style; a single observation shows
/// `(1 scan)` and no observations show `-`.
pub fn mean_std_cell(summary: Option<&Summary>, decimals: usize) -> String {
    match summary {
        None => "-".into(),
        Some(s) => match s.std {
            Some(sd) => format!("{:.decimals$} ±{:.decimals$}", s.mean, sd),
            None => format!("{:.decimals$} (1 scan)", s.mean),
        },
    }
}

/// Markdown table from a header and rows.
pub fn markdown_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = String::new();
    out.push_str(&format!("| {} |\n", header.join(" | ")));
    out.push_str(&format!("|{}\n", header.iter().map(|_| "---|").collect::<String>()));
    for row in rows {
        out.push_str(&format!("| {} |\n", row.join(" | ")));
    }
    out
}
