//! Number formatting shared by every CSV writer.

/// 17 significant digits in scientific notation; parses back bit-exactly.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn csv_row(values: impl IntoIterator<Item = f64>) -> String {
    let mut line = values.into_iter().map(fmt_f64).collect::<Vec<_>>().join(",");
    line.push('\n');
    line
}
