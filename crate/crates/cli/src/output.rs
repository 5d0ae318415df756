//! CSV and manifest writers.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Hash of everything that determines the outputs: configuration, software
/// version and master seed. Timestamps are deliberately left out.
pub fn manifest_hash<C: Serialize>(config: &C, seed: u64) -> String {
    #[derive(Serialize)]
    struct Identity<'a, C> {
        config: &'a C,
        version: &'a str,
        seed: u64,
    }
    let json = serde_json::to_string(&Identity { config, version: VERSION, seed }).expect("config serializes");
    let digest = Sha256::digest(json.as_bytes());
    digest.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Decimal with 17 significant digits, which round-trips every `f64`.
pub fn number(x: f64) -> String {
    format!("{x:.16e}")
}

/// A CSV table with `#` metadata lines.
pub struct Table {
    header: Vec<String>,
    columns: Vec<&'static str>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(hash: &str, title: &str, columns: &[&'static str]) -> Self {
        Self {
            header: vec![format!("# unravel {VERSION}"), format!("# {title}"), format!("# manifest_sha256 {hash}")],
            columns: columns.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn comment(&mut self, line: impl AsRef<str>) {
        self.header.push(format!("# {}", line.as_ref()));
    }

    pub fn row(&mut self, cells: Vec<String>) {
        assert_eq!(cells.len(), self.columns.len(), "row width");
        self.rows.push(cells);
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for line in &self.header {
            out.push_str(line);
            out.push('\n');
        }
        out.push_str(&self.columns.join(","));
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        write_atomic(path, self.render().as_bytes())
    }
}

/// Writes through a temporary sibling so readers never see partial files.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    write_atomic(path, text.as_bytes())
}

pub fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}
