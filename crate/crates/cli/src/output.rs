//! CSV emission. Every file starts with a `# schema: isac-sim/<kind>/<version>`
//! line followed by a header row and the data rows in a fixed order.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

pub fn write_csv<T: Serialize>(path: &Path, kind: &str, rows: &[T]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut file = BufWriter::new(File::create(path)?);
    writeln!(file, "# schema: isac-sim/{kind}/{SCHEMA_VERSION}")?;
    let mut w = csv::Writer::from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `header` then `rows` of preformatted values.
pub fn write_table(path: &Path, kind: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut file = BufWriter::new(File::create(path)?);
    writeln!(file, "# schema: isac-sim/{kind}/{SCHEMA_VERSION}")?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}
