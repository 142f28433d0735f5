//! Timestamped, never-overwritten output directories.

use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use s2pd::error::{Error, Result};

/// Creates `<root>/<prefix>-<UTC timestamp>`, appending `-1`, `-2`, ... when
/// that name is taken.
pub fn create(root: &Path, prefix: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(root).map_err(|e| io(root, e))?;
    let stamp = chrono::Utc::now().format("%Y%m%d-%H%M%S");
    let base = format!("{prefix}-{stamp}");
    for n in 0.. {
        let name = if n == 0 { base.clone() } else { format!("{base}-{n}") };
        let dir = root.join(name);
        match std::fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(io(&dir, e)),
        }
    }
    unreachable!()
}

pub fn io(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| io(path, e))
}
