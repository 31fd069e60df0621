//! CSV writers whose first line records the resolved configuration.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::CliError;

pub type CsvOut = csv::Writer<BufWriter<File>>;

/// Opens `path`, writes `# <config>` and the header row.
pub fn create(path: &Path, config: &str, header: &[&str]) -> Result<CsvOut, CliError> {
    let mut file = BufWriter::new(File::create(path)?);
    writeln!(file, "# {config}")?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(header)?;
    Ok(w)
}

/// Writes a whole table and flushes it.
pub fn write_table(path: &Path, config: &str, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut w = create(path, config, header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}
