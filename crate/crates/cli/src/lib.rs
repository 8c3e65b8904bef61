//! Command-line front end: run configs, checkpoints, trajectory export and property checks.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

pub mod checkpoint;
pub mod checks;
pub mod commands;
pub mod config;
pub mod trajectory;

pub use checkpoint::Checkpoint;
pub use config::{RoleChoice, RunConfig};

/// Environment variable naming the directory relative output paths are resolved against.
pub const OUT_ROOT_ENV: &str = "SWARM_OUT_ROOT";
pub const LOCK_FILE: &str = ".swarm.lock";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error at {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("property check failed: {0}")]
    Check(String),
    #[error("checksum error: {0}")]
    Checksum(String),
    #[error("incompatible: {0}")]
    Incompatible(String),
    #[error(transparent)]
    Core(swarm_core::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Process exit status; each failure class has its own code.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io { .. } => 3,
            CliError::Check(_) => 4,
            CliError::Checksum(_) => 5,
            CliError::Incompatible(_) => 6,
            CliError::Core(e) => match e {
                swarm_core::Error::Config(_) => 2,
                swarm_core::Error::Incompatible(_) => 6,
                _ => 1,
            },
        }
    }
}

impl From<swarm_core::Error> for CliError {
    fn from(e: swarm_core::Error) -> Self {
        CliError::Core(e)
    }
}

/// Writes through a sibling temporary file and a rename, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let result = (|| {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = std::fs::remove_file(&tmp);
        return Err(CliError::io(path, e));
    }
    Ok(())
}

/// Resolves a relative output path against `$SWARM_OUT_ROOT` when it is set.
pub fn resolve_out(path: &Path) -> PathBuf {
    match std::env::var_os(OUT_ROOT_ENV) {
        Some(root) if path.is_relative() => PathBuf::from(root).join(path),
        _ => path.to_path_buf(),
    }
}

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::Io {
                path: path.clone(),
                source: std::io::Error::new(e.kind(), "output directory is in use by another run"),
            }),
            Err(e) => Err(CliError::io(&path, e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_whole_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a/b.txt");
        write_atomic(&p, b"first").unwrap();
        write_atomic(&p, b"second").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"second");
        assert_eq!(std::fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let a = DirLock::acquire(dir.path()).unwrap();
        assert!(matches!(DirLock::acquire(dir.path()), Err(CliError::Io { .. })));
        drop(a);
        DirLock::acquire(dir.path()).unwrap();
    }

    #[test]
    fn exit_codes_are_distinct() {
        let codes = [
            CliError::Config(String::new()).exit_code(),
            CliError::io(Path::new("x"), std::io::Error::other("x")).exit_code(),
            CliError::Check(String::new()).exit_code(),
            CliError::Checksum(String::new()).exit_code(),
            CliError::Incompatible(String::new()).exit_code(),
        ];
        let mut sorted = codes.to_vec();
        sorted.dedup();
        assert_eq!(sorted.len(), codes.len());
        assert!(codes.iter().all(|&c| c != 0));
    }
}
