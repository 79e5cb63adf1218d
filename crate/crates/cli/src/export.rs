//! Artifact writing: CSV files at full double precision, content digests,
//! and the per-run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// 17 significant digits: round-trip exact for doubles.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// One emitted file with its content digest.
#[derive(Debug, Clone, Serialize)]
pub struct Artifact {
    pub file: String,
    pub sha256: String,
    pub bytes: usize,
}

/// Collects artifacts as they are written and renders the manifest.
pub struct ArtifactSink {
    out_dir: PathBuf,
    artifacts: Vec<Artifact>,
}

impl ArtifactSink {
    pub fn new(out_dir: &Path) -> Result<Self> {
        fs::create_dir_all(out_dir)
            .with_context(|| format!("creating output directory {}", out_dir.display()))?;
        Ok(ArtifactSink {
            out_dir: out_dir.to_path_buf(),
            artifacts: Vec::new(),
        })
    }

    pub fn out_dir(&self) -> &Path {
        &self.out_dir
    }

    pub fn artifacts(&self) -> &[Artifact] {
        &self.artifacts
    }

    pub fn write(&mut self, name: &str, content: &str) -> Result<()> {
        let path = self.out_dir.join(name);
        fs::write(&path, content).with_context(|| format!("writing {}", path.display()))?;
        let digest = Sha256::digest(content.as_bytes());
        self.artifacts.push(Artifact {
            file: name.to_string(),
            sha256: hex_string(&digest),
            bytes: content.len(),
        });
        Ok(())
    }

    /// Writes a CSV with a declared header row; each cell of a data row is
    /// either a preformatted string or a full-precision float.
    pub fn write_csv(&mut self, name: &str, header: &[&str], rows: &[Vec<CsvCell>]) -> Result<()> {
        let mut text = String::new();
        text.push_str(&header.join(","));
        text.push('\n');
        for row in rows {
            let cells: Vec<String> = row.iter().map(CsvCell::render).collect();
            text.push_str(&cells.join(","));
            text.push('\n');
        }
        self.write(name, &text)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value).context("serializing JSON artifact")?;
        text.push('\n');
        self.write(name, &text)
    }
}

/// A CSV cell: text or a float rendered at full precision.
#[derive(Debug, Clone)]
pub enum CsvCell {
    Text(String),
    Num(f64),
    Int(i64),
}

impl CsvCell {
    fn render(&self) -> String {
        match self {
            CsvCell::Text(s) => s.clone(),
            CsvCell::Num(x) => fmt_f64(*x),
            CsvCell::Int(i) => i.to_string(),
        }
    }
}

pub fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// The per-run manifest: config echo, resolved metadata, artifact digests.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub version: String,
    pub kind: String,
    pub config_echo: String,
    pub overrides: ManifestOverrides,
    pub grid: ManifestGrid,
    pub seed: Option<u64>,
    pub duration_ms: u128,
    pub artifacts: Vec<Artifact>,
}

#[derive(Debug, Default, Serialize)]
pub struct ManifestOverrides {
    pub seed: Option<u64>,
    pub n_paths: Option<usize>,
    pub n_steps: Option<usize>,
}

#[derive(Debug, Serialize)]
pub struct ManifestGrid {
    pub n_steps: usize,
    pub dt: f64,
    pub horizon: f64,
}

impl RunManifest {
    pub fn write(mut self, sink: &mut ArtifactSink) -> Result<()> {
        self.artifacts = sink.artifacts().to_vec();
        let mut text = serde_json::to_string_pretty(&self).context("serializing manifest")?;
        text.push('\n');
        let path = sink.out_dir().join("manifest.json");
        fs::write(&path, &text).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}
