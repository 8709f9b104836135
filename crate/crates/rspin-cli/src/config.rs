//! Run configuration: built-in defaults, simple key=value config files,
//! and flag overlays, with flags taking precedence over file entries.

use std::path::{Path, PathBuf};

use crate::CliError;

/// The fixed verification-suite registry, in report order.
pub const SUITE_REGISTRY: &[&str] = &[
    "theorem",
    "strings",
    "trr",
    "flows",
    "homogeneity",
    "ramond",
    "open",
    "lax",
    "dispersive",
];

/// Output serialization format.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Format {
    Json,
    Csv,
    Text,
}

impl Format {
    pub fn parse(s: &str) -> Result<Format, String> {
        match s {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            "text" => Ok(Format::Text),
            other => Err(format!("unknown format {other:?}; expected json, csv, or text")),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Format::Json => "json",
            Format::Csv => "csv",
            Format::Text => "text",
        }
    }
}

/// Effective run settings after defaults, config file, and flags merge.
///
/// The defaults match the acceptance caps: insertions up to 6, descendent
/// depth up to 2, dispersive layers through genus 1, every suite on.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub r: u32,
    pub max_insertions: usize,
    pub max_descendent_depth: u32,
    pub genus_max: u32,
    pub suites: Vec<String>,
    pub format: Format,
    pub output: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            r: 3,
            max_insertions: 6,
            max_descendent_depth: 2,
            genus_max: 1,
            suites: SUITE_REGISTRY.iter().map(|s| s.to_string()).collect(),
            format: Format::Json,
            output: None,
        }
    }
}

impl RunConfig {
    /// Overlay entries from a key=value file; `#` starts a comment.
    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("config {}: {e}", path.display())))?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Parse(format!(
                    "config {}:{}: expected key=value, got {raw:?}",
                    path.display(),
                    lineno + 1
                )));
            };
            self.set(key.trim(), value.trim()).map_err(|m| {
                CliError::Parse(format!("config {}:{}: {m}", path.display(), lineno + 1))
            })?;
        }
        Ok(())
    }

    /// Apply one configuration entry by name.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
            value.parse().map_err(|_| format!("{key} wants a number, got {value:?}"))
        }
        match key {
            "r" => self.r = num(key, value)?,
            "max_insertions" => self.max_insertions = num(key, value)?,
            "max_descendent_depth" => self.max_descendent_depth = num(key, value)?,
            "genus_max" => self.genus_max = num(key, value)?,
            "suites" => self.suites = parse_suites(value)?,
            "format" => self.format = Format::parse(value)?,
            "output" => self.output = Some(PathBuf::from(value)),
            other => return Err(format!("unknown config key {other:?}")),
        }
        Ok(())
    }

    /// Enforce the structural invariants before any command runs.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.r < 2 {
            return Err(CliError::Parse(format!("r must be at least 2, got {}", self.r)));
        }
        if self.max_insertions == 0 {
            return Err(CliError::Parse("max_insertions must be positive".into()));
        }
        for name in &self.suites {
            if !SUITE_REGISTRY.contains(&name.as_str()) {
                return Err(CliError::Parse(format!(
                    "unknown suite {name:?}; registry: {}",
                    SUITE_REGISTRY.join(", ")
                )));
            }
        }
        Ok(())
    }
}

/// Parse a comma-separated suite list against the registry.
pub fn parse_suites(value: &str) -> Result<Vec<String>, String> {
    let mut out = Vec::new();
    for part in value.split(',') {
        let name = part.trim();
        if name.is_empty() {
            continue;
        }
        if !SUITE_REGISTRY.contains(&name) {
            return Err(format!(
                "unknown suite {name:?}; registry: {}",
                SUITE_REGISTRY.join(", ")
            ));
        }
        if !out.iter().any(|s| s == name) {
            out.push(name.to_string());
        }
    }
    if out.is_empty() {
        return Err("suite list is empty".into());
    }
    Ok(out)
}
