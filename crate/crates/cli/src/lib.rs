//! Batch front end: parse experiment configs, run them, and write
//! plot-ready CSV/JSON artifacts plus a manifest.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::Value;

pub use config::{Config, Kind};
pub use error::{CliError, CliResult};

use output::{Artifacts, Manifest};

/// Where a run writes: the flag (or its environment override), then the
/// config's `out_dir`, then `out/<experiment>`.
pub fn resolve_out_dir(flag: Option<&Path>, cfg: &Config) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(cfg.kind.name()))
}

/// Load, preflight and run the config at `path` as experiment `kind`.
pub fn run_experiment(kind: Kind, path: &Path, seed: Option<u64>, out_dir: Option<&Path>) -> CliResult<Value> {
    let start = Instant::now();
    let (cfg, bytes) = Config::load(path, Some(kind))?;
    let flags = commands::preflight(&cfg);
    if !flags.is_empty() {
        return Err(CliError::Flagged(flags.into_iter().map(|f| f.message).collect()));
    }
    let seed = seed.or(cfg.seed).unwrap_or(0);
    let mut out = Artifacts::create(&resolve_out_dir(out_dir, &cfg))?;
    let summary = commands::run(&cfg, seed, &mut out)?;
    let manifest = Manifest {
        experiment: kind.name(),
        config_path: path,
        config_bytes: &bytes,
        seed,
        threads: rayon::current_num_threads(),
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    let mut files = out.files().to_vec();
    files.push("manifest.json".into());
    out.write_json("manifest.json", &manifest.to_json(&files))?;
    Ok(serde_json::json!({ "out_dir": out.dir().to_string_lossy(), "summary": summary }))
}

/// Parse `path` without running it. Flags are reported as an error after
/// the report is built so callers can print both.
pub fn validate_config(path: &Path) -> CliResult<(Value, Vec<String>)> {
    let (cfg, _) = Config::load(path, None)?;
    let report = commands::validation_report(&cfg);
    let flags = commands::preflight(&cfg).into_iter().map(|f| f.message).collect();
    Ok((report, flags))
}
