//! CSV assembly with stable numeric formatting.
//!
//! Every figure is rounded to three decimals before printing and negative
//! zero is normalized away, so repeated runs produce byte-identical files.

/// One dB (or weight) figure, three decimals, `-0.000` never emitted.
pub fn fmt3(value: f64) -> String {
    let rounded = (value * 1000.0).round() / 1000.0 + 0.0;
    format!("{rounded:.3}")
}

/// An optional figure; `None` prints as an empty cell.
pub fn fmt3_opt(value: Option<f64>) -> String {
    value.map(fmt3).unwrap_or_default()
}

/// Builds a CSV from a header and rows of preformatted cells.
pub fn table(header: &[String], rows: &[Vec<String>]) -> String {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        debug_assert_eq!(row.len(), header.len(), "ragged CSV row");
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}
