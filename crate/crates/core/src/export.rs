//! CSV output with full double precision.

use std::fs::File;
use std::path::Path;

use crate::error::Result;

/// Seventeen significant digits.
pub fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_rows<I, R>(path: &Path, header: &[String], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_writer(File::create(path)?);
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}
