//! Output files: text writes, the reproducibility manifest and its
//! timestamp sidecar.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};

pub const MANIFEST: &str = "manifest.json";
pub const RUN_INFO: &str = "run_info.json";

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

#[derive(Debug, Serialize)]
struct Versions {
    mapt_core: &'static str,
    mapt_cli: &'static str,
    checkpoint_format: u16,
}

#[derive(Debug, Serialize)]
struct FileDigest {
    path: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config_sha256: String,
    seeds: &'a [u64],
    versions: Versions,
    /// The resolved config, so a run can be repeated from the manifest alone.
    config: String,
    files: Vec<FileDigest>,
}

#[derive(Debug, Serialize)]
struct RunInfo {
    command: String,
    finished_at: String,
}

/// Every regular file under `root`, as sorted relative paths.
pub fn list_files(root: &Path) -> CliResult<Vec<PathBuf>> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> CliResult<()> {
        for entry in fs::read_dir(dir).map_err(|e| CliError::io(dir, e))? {
            let path = entry.map_err(|e| CliError::io(dir, e))?.path();
            if path.is_dir() {
                walk(root, &path, out)?;
            } else {
                out.push(path.strip_prefix(root).expect("under root").to_path_buf());
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(root, root, &mut out)?;
    out.sort();
    Ok(out)
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Writes `manifest.json` (deterministic: config hash, seeds, versions and
/// digests of every output) and `run_info.json` (wall-clock timestamp).
pub fn write_manifest(out: &Path, command: &str, cfg: &ExperimentConfig) -> CliResult<()> {
    let mut files = Vec::new();
    for rel in list_files(out)? {
        let name = rel.to_string_lossy().replace('\\', "/");
        if name == MANIFEST || name == RUN_INFO {
            continue;
        }
        files.push(FileDigest {
            sha256: sha256_file(&out.join(&rel))?,
            path: name,
        });
    }
    let manifest = Manifest {
        command,
        config_sha256: cfg.hash(),
        seeds: &cfg.seeds,
        versions: Versions {
            mapt_core: mapt_core::VERSION,
            mapt_cli: env!("CARGO_PKG_VERSION"),
            checkpoint_format: mapt_core::policy::CHECKPOINT_FORMAT_VERSION,
        },
        config: cfg.canonical(),
        files,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    write_text(&out.join(MANIFEST), &json)?;
    let info = RunInfo {
        command: command.to_string(),
        finished_at: chrono::Utc::now().to_rfc3339(),
    };
    write_text(&out.join(RUN_INFO), &(serde_json::to_string_pretty(&info).expect("serializes") + "\n"))
}
