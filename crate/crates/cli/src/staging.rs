//! Write into a hidden sibling directory, then rename into place, so a
//! failed run leaves nothing behind. A lock file keeps two commands off the
//! same output.

use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};

use crate::error::{CliError, CliResult};

pub struct Staged {
    target: PathBuf,
    staging: PathBuf,
    lock: Option<PathBuf>,
    committed: bool,
}

fn hidden_sibling(target: &Path, suffix: &str) -> CliResult<PathBuf> {
    let name = target
        .file_name()
        .ok_or_else(|| CliError::usage(format!("output path `{}` has no final component", target.display())))?
        .to_string_lossy();
    let parent = target.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    Ok(parent.join(format!(".{name}.{suffix}")))
}

/// Create `path` exclusively; fails if another command holds it.
pub fn acquire_lock(path: &Path) -> CliResult<()> {
    match OpenOptions::new().write(true).create_new(true).open(path) {
        Ok(_) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::runtime(format!(
            "`{}` exists: another command is using this output (remove the file if that run died)",
            path.display()
        ))),
        Err(e) => Err(CliError::runtime(format!("cannot create lock `{}`: {e}", path.display()))),
    }
}

impl Staged {
    /// `lock` defaults to a hidden file next to the target.
    pub fn begin(target: &Path, overwrite: bool, lock: Option<PathBuf>) -> CliResult<Self> {
        if target.exists() && !overwrite {
            return Err(CliError::usage(format!(
                "output `{}` already exists; pass --overwrite to replace it",
                target.display()
            )));
        }
        if let Some(parent) = target.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        let lock = lock.unwrap_or(hidden_sibling(target, "lock")?);
        acquire_lock(&lock)?;
        let mut staged = Staged {
            target: target.to_path_buf(),
            staging: hidden_sibling(target, &format!("staging-{}", std::process::id()))?,
            lock: Some(lock),
            committed: false,
        };
        if staged.staging.exists() {
            fs::remove_dir_all(&staged.staging)?;
        }
        if let Err(e) = fs::create_dir_all(&staged.staging) {
            staged.committed = true; // nothing to clean
            return Err(e.into());
        }
        Ok(staged)
    }

    pub fn dir(&self) -> &Path {
        &self.staging
    }

    pub fn target(&self) -> &Path {
        &self.target
    }

    pub fn commit(mut self) -> CliResult<PathBuf> {
        if self.target.exists() {
            fs::remove_dir_all(&self.target)?;
        }
        fs::rename(&self.staging, &self.target)?;
        self.committed = true;
        Ok(self.target.clone())
    }
}

impl Drop for Staged {
    fn drop(&mut self) {
        if !self.committed {
            let _ = fs::remove_dir_all(&self.staging);
        }
        if let Some(lock) = self.lock.take() {
            let _ = fs::remove_file(lock);
        }
    }
}
