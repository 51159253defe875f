//! Deterministic artifacts: CSV tables, `summary.json` and `manifest.json`.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// `v` in scientific notation with 15 significant digits. Non-finite values
/// print as `nan`, `inf` or `-inf`.
pub fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.14e}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone)]
pub struct Csv {
    pub name: String,
    text: String,
    columns: usize,
}

impl Csv {
    pub fn new(name: impl Into<String>, header: &[&str]) -> Self {
        let mut text = header.join(",");
        text.push('\n');
        Self { name: name.into(), text, columns: header.len() }
    }

    pub fn row(&mut self, cells: &[String]) {
        debug_assert_eq!(cells.len(), self.columns);
        self.text.push_str(&cells.join(","));
        self.text.push('\n');
    }

    pub fn text(&self) -> &str {
        &self.text
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub subcommand: String,
    pub config_path: String,
    pub config_sha256: String,
    pub seed: u64,
    pub versions: Versions,
    pub threads: usize,
    pub files: Vec<FileDigest>,
    /// Wall clock at write time; the only field that differs between reruns.
    pub timestamp_unix: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Versions {
    #[serde(rename = "ebsde-cli")]
    pub cli: String,
    #[serde(rename = "ebsde-core")]
    pub core: String,
}

/// Everything one subcommand produces.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub tables: Vec<Csv>,
    pub summary: serde_json::Value,
}

pub struct RunInfo<'a> {
    pub subcommand: &'a str,
    pub config_path: &'a Path,
    pub config_text: &'a str,
    pub seed: u64,
    pub threads: usize,
}

/// Write tables, summary and manifest into `dir`; returns the paths written.
pub fn write_all(dir: &Path, art: &Artifacts, info: &RunInfo) -> Result<Vec<PathBuf>, CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(format!("creating {}", dir.display()), e))?;
    let mut written = Vec::new();
    let mut files = Vec::new();
    let mut put = |name: &str, bytes: &[u8]| -> Result<(), CliError> {
        let p = dir.join(name);
        std::fs::write(&p, bytes).map_err(|e| CliError::io(format!("writing {}", p.display()), e))?;
        files.push(FileDigest { name: name.to_string(), sha256: sha256_hex(bytes) });
        written.push(p);
        Ok(())
    };
    for t in &art.tables {
        put(&t.name, t.text().as_bytes())?;
    }
    let mut summary = serde_json::to_string_pretty(&art.summary).map_err(|e| CliError::Other(e.to_string()))?;
    summary.push('\n');
    put("summary.json", summary.as_bytes())?;

    let manifest = Manifest {
        subcommand: info.subcommand.to_string(),
        config_path: info.config_path.display().to_string(),
        config_sha256: sha256_hex(info.config_text.as_bytes()),
        seed: info.seed,
        versions: Versions { cli: env!("CARGO_PKG_VERSION").into(), core: ebsde_core::VERSION.into() },
        threads: info.threads,
        files,
        timestamp_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
    };
    let mut m = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Other(e.to_string()))?;
    m.push('\n');
    let p = dir.join("manifest.json");
    std::fs::write(&p, m).map_err(|e| CliError::io(format!("writing {}", p.display()), e))?;
    written.push(p);
    Ok(written)
}
