//! Artifact files and the run manifest.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

/// Shortest representation that parses back to the same `f64`.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

/// Empty cell for missing values.
pub fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// Incremental CSV text.
pub struct Csv(String);

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        Csv(header.join(",") + "\n")
    }

    pub fn row(&mut self, cells: &[String]) {
        let _ = writeln!(self.0, "{}", cells.join(","));
    }

    pub fn into_string(self) -> String {
        self.0
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Output directory and the files written to it.
pub struct Artifacts {
    dir: PathBuf,
    written: Vec<String>,
}

impl Artifacts {
    pub fn create(dir: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Artifacts { dir: dir.to_path_buf(), written: Vec::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn files(&self) -> &[String] {
        &self.written
    }

    pub fn write(&mut self, name: &str, contents: &str) -> CliResult<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, contents).map_err(|e| CliError::io(&path, e))?;
        self.written.push(name.to_string());
        Ok(())
    }

    pub fn write_json(&mut self, name: &str, v: &Value) -> CliResult<()> {
        let text = serde_json::to_string_pretty(v).expect("JSON values serialize") + "\n";
        self.write(name, &text)
    }
}

/// Run metadata; the only artifact that varies between identical runs.
pub struct Manifest<'a> {
    pub experiment: &'a str,
    pub config_path: &'a Path,
    pub config_bytes: &'a [u8],
    pub seed: u64,
    pub threads: usize,
    pub wall_time_s: f64,
}

impl Manifest<'_> {
    pub fn to_json(&self, outputs: &[String]) -> Value {
        json!({
            "tool": env!("CARGO_PKG_NAME"),
            "version": env!("CARGO_PKG_VERSION"),
            "experiment": self.experiment,
            "config": self.config_path.to_string_lossy(),
            "config_sha256": sha256_hex(self.config_bytes),
            "seed": self.seed,
            "threads": self.threads,
            "wall_time_s": self.wall_time_s,
            "outputs": outputs,
        })
    }
}
