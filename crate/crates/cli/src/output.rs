//! Deterministic artifact emission: CSV/JSON files written atomically, plus a
//! manifest recording the resolved configuration and content digests.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};
use crate::scenario::ScenarioConfig;

/// f64 with 17 significant digits, locale-independent; round-trips exactly.
pub fn g17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Column-safe version of a label.
pub fn column_name(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect()
}

/// Collects artifact bytes, then flushes them atomically with a manifest.
pub struct OutputWriter {
    dir: PathBuf,
    write_csv: bool,
    write_json: bool,
    files: Vec<(String, Vec<u8>)>,
    started: Instant,
}

#[derive(Serialize)]
struct ManifestEntry {
    path: String,
    sha256: String,
    bytes: usize,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool_version: &'static str,
    created_unix: f64,
    elapsed_seconds: f64,
    seed: u64,
    scenario: &'a ScenarioConfig,
    outputs: Vec<ManifestEntry>,
}

impl OutputWriter {
    pub fn new(dir: &Path, formats: &[String]) -> Self {
        Self {
            dir: dir.to_path_buf(),
            write_csv: formats.iter().any(|f| f == "csv"),
            write_json: formats.iter().any(|f| f == "json"),
            files: Vec::new(),
            started: Instant::now(),
        }
    }

    /// Add a CSV artifact; every row must match the header width.
    pub fn add_csv(&mut self, name: &str, header: &[String], rows: &[Vec<String>]) {
        if !self.write_csv {
            return;
        }
        let mut text = String::new();
        text.push_str(&header.join(","));
        text.push('\n');
        for row in rows {
            debug_assert_eq!(row.len(), header.len(), "csv row width mismatch in {name}");
            text.push_str(&row.join(","));
            text.push('\n');
        }
        self.files.push((name.to_string(), text.into_bytes()));
    }

    pub fn add_json(&mut self, name: &str, value: &serde_json::Value) {
        if !self.write_json {
            return;
        }
        let mut text = serde_json::to_string_pretty(value).expect("json serialization");
        text.push('\n');
        self.files.push((name.to_string(), text.into_bytes()));
    }

    /// Write all artifacts and the manifest; returns the emitted paths.
    pub fn finalize(self, config: &ScenarioConfig) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(&self.dir)
            .map_err(|e| CliError::Io(format!("creating {}: {e}", self.dir.display())))?;
        let mut outputs = Vec::new();
        let mut paths = Vec::new();
        for (name, bytes) in &self.files {
            let path = self.dir.join(name);
            atomic_write(&path, bytes)?;
            outputs.push(ManifestEntry {
                path: name.clone(),
                sha256: hex_digest(bytes),
                bytes: bytes.len(),
            });
            paths.push(path);
        }
        let manifest = Manifest {
            tool_version: env!("CARGO_PKG_VERSION"),
            created_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs_f64())
                .unwrap_or(0.0),
            elapsed_seconds: self.started.elapsed().as_secs_f64(),
            seed: config.seed,
            scenario: config,
            outputs,
        };
        let mut text = serde_json::to_string_pretty(&manifest)
            .map_err(|e| CliError::Io(format!("manifest serialization: {e}")))?;
        text.push('\n');
        let manifest_path = self.dir.join("manifest.json");
        atomic_write(&manifest_path, text.as_bytes())?;
        paths.push(manifest_path);
        Ok(paths)
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Write-temp-then-rename within the target directory.
fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    std::fs::write(&tmp, bytes).map_err(|e| CliError::Io(format!("writing {}: {e}", tmp.display())))?;
    std::fs::rename(&tmp, path)
        .map_err(|e| CliError::Io(format!("renaming into {}: {e}", path.display())))?;
    Ok(())
}
