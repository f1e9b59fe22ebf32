//! Output directory bookkeeping: hashed files and the manifest that lists them.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::models::{save_checkpoint, Model};

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Complete,
    Partial,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub kind: String,
    pub status: RunStatus,
    pub completed_stages: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub files: Vec<ManifestEntry>,
}

/// Everything a run left on disk.
#[derive(Debug, Clone)]
pub struct RunArtifactSet {
    pub root: PathBuf,
    pub manifest: Manifest,
}

impl RunArtifactSet {
    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn hashes(&self) -> BTreeMap<String, String> {
        self.manifest
            .files
            .iter()
            .map(|e| (e.path.clone(), e.sha256.clone()))
            .collect()
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes files under one root and remembers their hashes.
#[derive(Debug)]
pub struct ArtifactWriter {
    root: PathBuf,
    kind: String,
    files: Vec<ManifestEntry>,
    stages: Vec<String>,
}

impl ArtifactWriter {
    pub fn create(root: impl AsRef<Path>, kind: &str) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(ArtifactWriter {
            root,
            kind: kind.to_string(),
            files: Vec::new(),
            stages: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn target(&self, rel: &str) -> Result<PathBuf> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        Ok(path)
    }

    fn record(&mut self, rel: &str, bytes: &[u8]) {
        let entry = ManifestEntry {
            path: rel.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        };
        match self.files.iter_mut().find(|e| e.path == rel) {
            Some(old) => *old = entry,
            None => self.files.push(entry),
        }
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.target(rel)?;
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.record(rel, bytes);
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::contract(format!("serializing {rel}: {e}")))?;
        bytes.push(b'\n');
        self.write(rel, &bytes)
    }

    pub fn save_model(&mut self, rel: &str, model: &Model, extra: &BTreeMap<String, String>) -> Result<()> {
        let path = self.target(rel)?;
        save_checkpoint(model, extra, &path)?;
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        self.record(rel, &bytes);
        Ok(())
    }

    /// Registers a file some other writer already put under the root.
    pub fn adopt(&mut self, rel: &str) -> Result<()> {
        let path = self.root.join(rel);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        self.record(rel, &bytes);
        Ok(())
    }

    pub fn stage_done(&mut self, stage: &str) {
        self.stages.push(stage.to_string());
    }

    pub fn finish(self) -> Result<RunArtifactSet> {
        self.write_manifest(RunStatus::Complete, None)
    }

    /// Writes a manifest marking the stages that finished before `err`.
    pub fn fail(self, err: &Error) -> Result<RunArtifactSet> {
        self.write_manifest(RunStatus::Partial, Some(err.to_string()))
    }

    fn write_manifest(self, status: RunStatus, error: Option<String>) -> Result<RunArtifactSet> {
        let mut files = self.files;
        files.sort_by(|a, b| a.path.cmp(&b.path));
        let manifest = Manifest {
            schema_version: SCHEMA_VERSION,
            kind: self.kind,
            status,
            completed_stages: self.stages,
            error,
            files,
        };
        let path = self.root.join(MANIFEST_FILE);
        let mut bytes = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::contract(e.to_string()))?;
        bytes.push(b'\n');
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        Ok(RunArtifactSet {
            root: self.root,
            manifest,
        })
    }
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<Manifest> {
    let path = dir.as_ref().join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(0, format!("{}: {e}", path.display())))
}

/// Files whose current hash differs from the manifest (missing files included).
pub fn verify_manifest(dir: impl AsRef<Path>) -> Result<Vec<String>> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    let mut bad = Vec::new();
    for entry in &manifest.files {
        match fs::read(dir.join(&entry.path)) {
            Ok(bytes) if sha256_hex(&bytes) == entry.sha256 => {}
            _ => bad.push(entry.path.clone()),
        }
    }
    Ok(bad)
}

/// Removes wall-clock fields (`seconds`, `noise_seconds`) from a JSON tree.
pub fn strip_timing(value: &mut serde_json::Value) {
    match value {
        serde_json::Value::Object(map) => {
            map.remove("seconds");
            map.remove("noise_seconds");
            map.values_mut().for_each(strip_timing);
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(strip_timing),
        _ => {}
    }
}

/// Minimal CSV builder; fields containing separators are quoted.
#[derive(Debug, Default, Clone)]
pub struct Csv {
    out: String,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        let mut c = Csv::default();
        c.row(header.iter().map(|s| s.to_string()));
        c
    }

    pub fn row<I: IntoIterator<Item = String>>(&mut self, fields: I) {
        let line: Vec<String> = fields
            .into_iter()
            .map(|f| {
                if f.contains([',', '"', '\n']) {
                    format!("\"{}\"", f.replace('"', "\"\""))
                } else {
                    f
                }
            })
            .collect();
        self.out.push_str(&line.join(","));
        self.out.push('\n');
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.out.into_bytes()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_lists_every_file_with_its_hash() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = ArtifactWriter::create(dir.path(), "test").unwrap();
        w.write("a.txt", b"hello").unwrap();
        w.write("sub/b.txt", b"world").unwrap();
        w.stage_done("one");
        let set = w.finish().unwrap();
        assert_eq!(set.manifest.files.len(), 2);
        assert_eq!(
            set.hashes()["a.txt"],
            "2cf24dba5fb0a30e26e83b2ac5b9e29e1b161e5c1fa7425e73043362938b9824"
        );
        assert!(verify_manifest(dir.path()).unwrap().is_empty());
        fs::write(dir.path().join("a.txt"), b"changed").unwrap();
        assert_eq!(verify_manifest(dir.path()).unwrap(), vec!["a.txt".to_string()]);
    }

    #[test]
    fn failed_run_leaves_partial_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = ArtifactWriter::create(dir.path(), "test").unwrap();
        w.stage_done("train");
        let set = w.fail(&Error::contract("boom")).unwrap();
        let m = read_manifest(dir.path()).unwrap();
        assert_eq!(m, set.manifest);
        assert_eq!(m.status, RunStatus::Partial);
        assert_eq!(m.completed_stages, vec!["train".to_string()]);
        assert!(m.error.unwrap().contains("boom"));
    }

    #[test]
    fn timing_fields_are_stripped_recursively() {
        let mut v = serde_json::json!({"seconds": 1.0, "a": [{"seconds": 2.0, "b": 3}], "noise_seconds": 4.0});
        strip_timing(&mut v);
        assert_eq!(v, serde_json::json!({"a": [{"b": 3}]}));
    }

    #[test]
    fn csv_quotes_fields_with_commas() {
        let mut c = Csv::new(&["x", "y"]);
        c.row(["1,2".to_string(), "z".to_string()]);
        assert_eq!(String::from_utf8(c.into_bytes()).unwrap(), "x,y\n\"1,2\",z\n");
    }
}
