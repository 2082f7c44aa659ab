use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub command: &'a str,
    pub seed: u64,
    pub config_sha256: String,
    pub config: RunConfig,
    pub inputs: Vec<PathBuf>,
    /// Files written, relative to the output directory.
    pub outputs: Vec<String>,
}

/// Lists regular files under `dir`, sorted, skipping the manifest.
fn list_outputs(dir: &Path) -> CliResult<Vec<String>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let entries = std::fs::read_dir(&d).map_err(|e| CliError::Runtime(format!("{}: {e}", d.display())))?;
        for entry in entries {
            let path = entry.map_err(|e| CliError::Runtime(e.to_string()))?.path();
            if path.is_dir() {
                stack.push(path);
            } else if let Ok(rel) = path.strip_prefix(dir) {
                if rel != Path::new(MANIFEST_FILE) {
                    out.push(rel.to_string_lossy().into_owned());
                }
            }
        }
    }
    out.sort();
    Ok(out)
}

pub fn write_manifest(command: &str, cfg: &RunConfig, inputs: Vec<PathBuf>, out: &Path) -> CliResult<()> {
    let manifest = Manifest {
        command,
        seed: cfg.seed,
        config_sha256: cfg.hash()?,
        config: cfg.identity(),
        inputs,
        outputs: list_outputs(out)?,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Runtime(e.to_string()))?;
    let path = out.join(MANIFEST_FILE);
    std::fs::write(&path, json).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}
