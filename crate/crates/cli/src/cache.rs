//! On-disk cache of built outcome tables, keyed by spec fingerprint.

use std::fs;
use std::io::Write;
use std::path::PathBuf;

use qei_core::detection::{OutcomeTable, TableSpec};

use crate::error::CliError;

#[derive(Clone, Debug)]
pub struct TableCache {
    dir: Option<PathBuf>,
}

impl TableCache {
    pub fn new(dir: PathBuf) -> Self {
        Self { dir: Some(dir) }
    }

    pub fn disabled() -> Self {
        Self { dir: None }
    }

    /// Loads the table for `spec`, building and storing it on a miss. Unreadable
    /// or mismatched cache files are rebuilt.
    pub fn table(&self, spec: &TableSpec) -> Result<OutcomeTable, CliError> {
        let Some(dir) = &self.dir else {
            return Ok(spec.build()?);
        };
        let fingerprint = spec.fingerprint();
        let path = dir.join(format!("{fingerprint}.json"));
        if let Ok(text) = fs::read_to_string(&path) {
            if let Ok(table) = OutcomeTable::from_json(&text) {
                if table.metadata.fingerprint == fingerprint
                    && table.metadata.spec.as_ref() == Some(spec)
                {
                    return Ok(table);
                }
            }
        }
        let table = spec.build()?;
        fs::create_dir_all(dir)?;
        // Write then rename so concurrent readers never see a partial file.
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        tmp.write_all(table.to_json()?.as_bytes())?;
        tmp.persist(&path)
            .map_err(|e| CliError::Io(e.to_string()))?;
        Ok(table)
    }
}
