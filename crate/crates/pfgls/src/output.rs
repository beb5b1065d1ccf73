//! Atomic file output and the block dump format.

use std::io::Write;
use std::path::Path;

use pfgls_core::BlockBandedMatrix;

use crate::error::{CliError, Result};

/// Writes through a temporary file in the target directory and renames it
/// into place, so a failure never leaves a partial file behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let err = |source| CliError::Write { path: path.to_path_buf(), source };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(err)?;
    tmp.write_all(bytes).map_err(err)?;
    tmp.as_file().sync_all().map_err(err)?;
    tmp.persist(path).map_err(|e| err(e.error))?;
    Ok(())
}

pub fn write_block_dump(path: &Path, m: &BlockBandedMatrix) -> Result<()> {
    write_atomic(path, &m.to_bytes())
}

pub fn read_block_dump(path: &Path) -> Result<BlockBandedMatrix> {
    let bytes = std::fs::read(path).map_err(|source| CliError::Read { path: path.to_path_buf(), source })?;
    BlockBandedMatrix::from_bytes(&bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}
