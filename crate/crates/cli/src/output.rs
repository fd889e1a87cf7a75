//! Error type with exit codes, and atomic file output.

use std::fmt;
use std::io::Write;
use std::path::Path;

use tempfile::NamedTempFile;
use tethernet_core::Error;

#[derive(Debug)]
pub enum CliError {
    Parse(String),
    Validation(String),
    Diverged(String),
    NoFeasible(String),
    MissingCheckpoint(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Parse(_) => 1,
            CliError::Validation(_) => 2,
            CliError::Diverged(_) => 3,
            CliError::NoFeasible(_) => 4,
            CliError::MissingCheckpoint(_) => 5,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Parse(m) | CliError::Validation(m) | CliError::Diverged(m) | CliError::NoFeasible(m) => f.write_str(m),
            CliError::MissingCheckpoint(m) => write!(f, "missing checkpoint: {m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Parse { .. } | Error::Json(_) => CliError::Parse(e.to_string()),
            Error::Numerical(_) => CliError::Diverged(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn io_error(path: &Path, e: impl fmt::Display) -> CliError {
    CliError::Validation(format!("{}: {e}", path.display()))
}

/// Write `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = NamedTempFile::new_in(dir).map_err(|e| io_error(path, e))?;
    tmp.write_all(bytes).map_err(|e| io_error(path, e))?;
    tmp.as_file().sync_all().map_err(|e| io_error(path, e))?;
    tmp.persist(path).map_err(|e| io_error(path, e.error))?;
    Ok(())
}

pub fn json_bytes<T: serde::Serialize>(value: &T) -> CliResult<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Validation(e.to_string()))?;
    s.push('\n');
    Ok(s.into_bytes())
}

/// CSV text with a leading `# <schema>` comment line.
pub fn csv_bytes<R: serde::Serialize>(schema: &str, header: Option<&[&str]>, rows: &[R]) -> CliResult<Vec<u8>> {
    let mut out = format!("# {schema}\n").into_bytes();
    {
        let mut w = csv::WriterBuilder::new().has_headers(header.is_none()).from_writer(&mut out);
        if let Some(h) = header {
            w.write_record(h).map_err(|e| CliError::Validation(e.to_string()))?;
        }
        for r in rows {
            w.serialize(r).map_err(|e| CliError::Validation(e.to_string()))?;
        }
        w.flush().map_err(|e| CliError::Validation(e.to_string()))?;
    }
    Ok(out)
}

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))
}
