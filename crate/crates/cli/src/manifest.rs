//! Self-describing run directories. Every command that produces artifacts
//! drops a `manifest.txt` naming the exact config snapshot, dataset, and
//! checkpoints involved, so a later `eval --manifest` can reproduce the
//! run's report from the directory alone.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use mmc_core::config::Config;
use mmc_core::{MmcError, Result};

pub const FILE_NAME: &str = "manifest.txt";

/// Name of the effective-config snapshot written next to the manifest.
pub const CONFIG_SNAPSHOT: &str = "config.txt";

#[derive(Clone, Debug)]
pub struct RunManifest {
    pub run_id: String,
    /// `mmc-v<semver>` of the binary that produced the run.
    pub version: String,
    /// Wall-clock seconds since the epoch at write time.
    pub created_unix: u64,
    /// Variant name, or "none" for runs without a model (synth).
    pub variant: String,
    pub dataset: PathBuf,
    pub dataset_hash: String,
    /// Checkpoint file names inside the run directory (may be empty).
    pub checkpoints: Vec<String>,
    /// Config snapshot file name inside the run directory.
    pub config_file: String,
    /// SHA-256 of the snapshot's bytes, guarding byte-preservation.
    pub config_sha256: String,
}

pub fn tool_version() -> String {
    format!("mmc-v{}", env!("CARGO_PKG_VERSION"))
}

pub fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(bytes);
    format!("{:x}", h.finalize())
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> Result<()> {
        let mut s = String::from("[run]\n");
        s.push_str(&format!("run_id = {}\n", self.run_id));
        s.push_str(&format!("version = {}\n", self.version));
        s.push_str(&format!("created_unix = {}\n", self.created_unix));
        s.push_str(&format!("variant = {}\n", self.variant));
        s.push_str(&format!("dataset = {}\n", self.dataset.display()));
        s.push_str(&format!("dataset_hash = {}\n", self.dataset_hash));
        s.push_str(&format!("checkpoints = {}\n", self.checkpoints.join(",")));
        s.push_str(&format!("config_file = {}\n", self.config_file));
        s.push_str(&format!("config_sha256 = {}\n", self.config_sha256));
        fs::create_dir_all(dir)?;
        fs::write(dir.join(FILE_NAME), s)?;
        Ok(())
    }

    /// Read from a manifest file or a directory containing one. Returns the
    /// manifest plus the run directory it lives in.
    pub fn read(path: &Path) -> Result<(RunManifest, PathBuf)> {
        let file = if path.is_dir() {
            path.join(FILE_NAME)
        } else {
            path.to_path_buf()
        };
        let dir = file
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        let text = fs::read_to_string(&file).map_err(|e| {
            MmcError::Config(format!("cannot read manifest {}: {e}", file.display()))
        })?;
        let cfg = Config::parse(&text)?;
        let want = |key: &str| {
            cfg.get("run", key).map(str::to_string).ok_or_else(|| {
                MmcError::Format(format!("manifest {} lacks '{key}'", file.display()))
            })
        };
        let checkpoints: Vec<String> = want("checkpoints")?
            .split(',')
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect();
        let created_unix = want("created_unix")?.parse::<u64>().map_err(|_| {
            MmcError::Format(format!("manifest {}: bad created_unix", file.display()))
        })?;
        Ok((
            RunManifest {
                run_id: want("run_id")?,
                version: want("version")?,
                created_unix,
                variant: want("variant")?,
                dataset: PathBuf::from(want("dataset")?),
                dataset_hash: want("dataset_hash")?,
                checkpoints,
                config_file: want("config_file")?,
                config_sha256: want("config_sha256")?,
            },
            dir,
        ))
    }
}
