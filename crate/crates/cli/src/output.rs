//! Output helpers: sidecar meta records and error reports.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::RunConfig;

/// `<file>.<suffix>` next to `path`.
pub fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".");
    name.push(suffix);
    path.with_file_name(name)
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Writes `<output>.meta.json` holding the command, seed, resolved config and
/// command parameters. File paths are left out so reruns compare equal.
pub fn write_meta(output: &Path, command: &str, cfg: &RunConfig, params: Value) -> Result<()> {
    let meta = json!({
        "command": command,
        "tool_version": env!("CARGO_PKG_VERSION"),
        "seed": cfg.seed,
        "config": cfg,
        "params": params,
    });
    write_json(&sidecar(output, "meta.json"), &meta)
}

#[derive(Debug, Clone, Serialize)]
pub struct ItemError {
    pub item: String,
    pub error: String,
}

impl ItemError {
    pub fn new(item: impl Into<String>, error: impl std::fmt::Display) -> Self {
        ItemError {
            item: item.into(),
            error: error.to_string(),
        }
    }
}

/// Writes `<output>.errors.json` when there is anything to report and logs each entry.
pub fn write_errors(output: &Path, errors: &[ItemError]) -> Result<()> {
    let path = sidecar(output, "errors.json");
    if errors.is_empty() {
        if path.exists() {
            std::fs::remove_file(&path).with_context(|| format!("removing stale {}", path.display()))?;
        }
        return Ok(());
    }
    for e in errors {
        tracing::warn!(item = %e.item, "{}", e.error);
    }
    write_json(&path, &errors)
}
