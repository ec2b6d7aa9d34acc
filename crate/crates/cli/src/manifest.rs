//! Per-stage run manifests: what was read, what was written, and with which
//! configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::Failure;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub tool: String,
    pub version: String,
    pub created_at: String,
    pub seed: u64,
    pub config_sha256: String,
    pub inputs: Vec<FileHash>,
    /// Paths relative to the stage directory.
    pub outputs: Vec<FileHash>,
    #[serde(default)]
    pub params: serde_json::Value,
}

pub fn sha256_file(path: &Path) -> Result<String, Failure> {
    let bytes = std::fs::read(path).map_err(|e| Failure::Fatal(format!("cannot hash {}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Display form of an input path: relative to `out_dir` when inside it.
fn input_label(path: &Path, out_dir: &Path) -> String {
    path.strip_prefix(out_dir)
        .map(|p| p.to_string_lossy().into_owned())
        .unwrap_or_else(|_| path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default())
}

pub struct ManifestBuilder {
    manifest: Manifest,
    stage_dir: PathBuf,
    out_dir: PathBuf,
}

impl ManifestBuilder {
    pub fn new(stage: &str, out_dir: &Path, seed: u64, config_sha256: String) -> Self {
        ManifestBuilder {
            manifest: Manifest {
                stage: stage.to_owned(),
                tool: env!("CARGO_PKG_NAME").to_owned(),
                version: env!("CARGO_PKG_VERSION").to_owned(),
                created_at: chrono::Utc::now().format("%Y-%m-%dT%H:%M:%SZ").to_string(),
                seed,
                config_sha256,
                inputs: Vec::new(),
                outputs: Vec::new(),
                params: serde_json::Value::Null,
            },
            stage_dir: out_dir.join(stage),
            out_dir: out_dir.to_owned(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<(), Failure> {
        let sha256 = sha256_file(path)?;
        self.manifest.inputs.push(FileHash {
            path: input_label(path, &self.out_dir),
            sha256,
        });
        Ok(())
    }

    pub fn params(&mut self, params: serde_json::Value) {
        self.manifest.params = params;
    }

    /// Hashes the named files in the stage directory and writes the manifest.
    pub fn finish(mut self, outputs: &[&str]) -> Result<Manifest, Failure> {
        for name in outputs {
            let sha256 = sha256_file(&self.stage_dir.join(name))?;
            self.manifest.outputs.push(FileHash {
                path: (*name).to_owned(),
                sha256,
            });
        }
        let path = self.stage_dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| Failure::Fatal(format!("cannot write {}: {e}", path.display())))?;
        Ok(self.manifest)
    }
}

pub fn read_manifest(stage_dir: &Path) -> Result<Manifest, Failure> {
    let path = stage_dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Failure::Fatal(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Fatal(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Discrepancy {
    Missing(String),
    Modified(String),
    /// A recorded stage input no longer matches the producing stage's output.
    StaleInput { stage: String, input: String },
}

impl std::fmt::Display for Discrepancy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Discrepancy::Missing(p) => write!(f, "missing: {p}"),
            Discrepancy::Modified(p) => write!(f, "modified: {p}"),
            Discrepancy::StaleInput { stage, input } => {
                write!(f, "{stage}: input {input} differs from what its producer recorded")
            }
        }
    }
}

/// Re-hashes every output listed in the manifests under `out_dir` and
/// checks that recorded inputs from other stages still match.
pub fn verify(out_dir: &Path) -> Result<(Vec<Manifest>, Vec<Discrepancy>), Failure> {
    let mut manifests = Vec::new();
    let mut entries: Vec<PathBuf> = std::fs::read_dir(out_dir)
        .map_err(|e| Failure::Fatal(format!("cannot read {}: {e}", out_dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(MANIFEST_FILE).is_file())
        .collect();
    entries.sort();
    let mut problems = Vec::new();
    for dir in &entries {
        let m = read_manifest(dir)?;
        for out in &m.outputs {
            let rel = format!("{}/{}", m.stage, out.path);
            match sha256_file(&dir.join(&out.path)) {
                Ok(h) if h == out.sha256 => {}
                Ok(_) => problems.push(Discrepancy::Modified(rel)),
                Err(_) => problems.push(Discrepancy::Missing(rel)),
            }
        }
        manifests.push(m);
    }
    let produced: std::collections::HashMap<String, &str> = manifests
        .iter()
        .flat_map(|m| m.outputs.iter().map(move |o| (format!("{}/{}", m.stage, o.path), o.sha256.as_str())))
        .collect();
    for m in &manifests {
        for input in &m.inputs {
            if let Some(h) = produced.get(&input.path) {
                if *h != input.sha256 {
                    problems.push(Discrepancy::StaleInput {
                        stage: m.stage.clone(),
                        input: input.path.clone(),
                    });
                }
            }
        }
    }
    Ok((manifests, problems))
}
