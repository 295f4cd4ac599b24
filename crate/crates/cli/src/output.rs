use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use tempfile::NamedTempFile;

use crate::error::{CliError, Result};

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub seed: Option<u64>,
    pub tool_version: &'static str,
    pub duration_secs: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub results: Option<serde_json::Value>,
}

pub fn manifest_path(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".manifest.json");
    s.into()
}

/// Writes `path` through a temporary file in the same directory followed by a
/// rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = temp_beside(path)?;
    finish(tmp, path, bytes)
}

fn temp_beside(path: &Path) -> Result<NamedTempFile> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let tmp = tempfile::Builder::new()
        .prefix(".nmslab-")
        .tempfile_in(dir)
        .map_err(|e| CliError::io(path, e))?;
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        tmp.as_file()
            .set_permissions(std::fs::Permissions::from_mode(0o644))
            .map_err(|e| CliError::io(path, e))?;
    }
    Ok(tmp)
}

fn finish(mut tmp: NamedTempFile, path: &Path, bytes: &[u8]) -> Result<()> {
    tmp.write_all(bytes)
        .and_then(|_| tmp.as_file().sync_all())
        .map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

/// Collects every artifact of a command in temporary files and publishes
/// them together with the manifest. Dropping without `commit` leaves nothing
/// behind.
pub struct Outputs {
    command: String,
    started: Instant,
    staged: Vec<(NamedTempFile, PathBuf)>,
}

impl Outputs {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_owned(),
            started: Instant::now(),
            staged: Vec::new(),
        }
    }

    pub fn add(&mut self, path: &Path, bytes: &[u8]) -> Result<()> {
        let mut tmp = temp_beside(path)?;
        tmp.write_all(bytes)
            .and_then(|_| tmp.as_file().sync_all())
            .map_err(|e| CliError::io(path, e))?;
        self.staged.push((tmp, path.to_owned()));
        Ok(())
    }

    /// Publishes the staged files and a manifest beside `primary`.
    pub fn commit(
        self,
        primary: &Path,
        config: serde_json::Value,
        inputs: Vec<PathBuf>,
        seed: Option<u64>,
        results: Option<serde_json::Value>,
    ) -> Result<()> {
        let manifest_file = manifest_path(primary);
        let mut outputs: Vec<PathBuf> = self.staged.iter().map(|(_, p)| p.clone()).collect();
        outputs.push(manifest_file.clone());
        let manifest = RunManifest {
            command: self.command,
            config,
            inputs,
            outputs,
            seed,
            tool_version: env!("CARGO_PKG_VERSION"),
            duration_secs: self.started.elapsed().as_secs_f64(),
            results,
        };
        let mut json = serde_json::to_vec_pretty(&manifest).map_err(nmslab::Error::from)?;
        json.push(b'\n');
        let manifest_tmp = temp_beside(&manifest_file)?;

        let mut published = Vec::new();
        for (tmp, path) in self.staged {
            if let Err(e) = tmp.persist(&path) {
                remove_all(&published);
                return Err(CliError::io(path, e.error));
            }
            published.push(path);
        }
        if let Err(e) = finish(manifest_tmp, &manifest_file, &json) {
            remove_all(&published);
            return Err(e);
        }
        Ok(())
    }
}

fn remove_all(paths: &[PathBuf]) {
    for p in paths {
        let _ = std::fs::remove_file(p);
    }
}
