//! Plain CSV tables with 17 significant digits.

use std::io::Write;

use crate::error::Result;

/// Formats a real with 17 significant digits, enough to round-trip an `f64`.
pub fn fmt_real(value: f64) -> String {
    format!("{value:.16e}")
}

/// Writes an optional `# ...` comment line, a header row, then numeric rows.
pub fn write_table<W, I>(out: W, comment: Option<&str>, header: &[&str], rows: I) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = Vec<f64>>,
{
    let mut out = out;
    if let Some(comment) = comment {
        writeln!(out, "# {comment}")?;
    }
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(header)?;
    for row in rows {
        writer.write_record(row.iter().map(|&v| fmt_real(v)))?;
    }
    writer.flush()?;
    Ok(())
}
