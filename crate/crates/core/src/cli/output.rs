use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use super::config::PipelineConfig;
use crate::corpus::write_atomic;
use crate::error::{Error, Result};

pub const LOCK_FILE: &str = ".hopespeech.lock";
pub const RESOLVED_CONFIG: &str = "run_config.resolved";

/// One JSON object per line on standard error.
pub fn log(level: &str, event: &str, fields: Value) {
    let mut obj = json!({ "level": level, "event": event });
    if let (Some(o), Value::Object(f)) = (obj.as_object_mut(), fields) {
        o.extend(f);
    }
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "{obj}");
}

/// An output directory held under a lock marker. If the run fails before
/// [`OutputDir::finish`], the lock is released and a directory created by
/// this run is removed when still empty.
pub struct OutputDir {
    path: PathBuf,
    created: bool,
    committed: bool,
}

impl OutputDir {
    pub fn acquire(path: &Path) -> Result<Self> {
        if path.exists() && !path.is_dir() {
            return Err(Error::InvalidArgument(format!(
                "paths.output: {} exists and is not a directory",
                path.display()
            )));
        }
        let created = !path.exists();
        fs::create_dir_all(path).map_err(|e| Error::io(path, e))?;
        let lock = path.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                return Err(Error::InvalidArgument(format!(
                    "paths.output: {} is locked by another run ({LOCK_FILE} present)",
                    path.display()
                )));
            }
            Err(e) => return Err(Error::io(&lock, e)),
        }
        Ok(OutputDir {
            path: path.to_path_buf(),
            created,
            committed: false,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn write(&self, name: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(&self.path.join(name), bytes)
    }

    /// Echoes the resolved configuration and releases the lock.
    pub fn finish(mut self, cfg: &PipelineConfig) -> Result<()> {
        self.write(RESOLVED_CONFIG, cfg.to_toml().as_bytes())?;
        self.committed = true;
        Ok(())
    }

    pub fn commit(mut self) {
        self.committed = true;
    }
}

impl Drop for OutputDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(self.path.join(LOCK_FILE));
        if !self.committed && self.created {
            let _ = fs::remove_dir(&self.path);
        }
    }
}
