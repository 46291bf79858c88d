//! Stage directory layout, atomic writes and the run manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes through a sibling temp file and renames it into place, so readers
/// never observe a partial artifact.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// JSON artifacts carry the digest of the config that produced them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub config_digest: String,
    pub stage: String,
    pub payload: T,
}

pub fn envelope_bytes<T: Serialize>(digest: &str, stage: &str, payload: &T) -> Vec<u8> {
    let env = Envelope { config_digest: digest.to_string(), stage: stage.to_string(), payload };
    let mut v = serde_json::to_vec(&env).expect("artifact serializes");
    v.push(b'\n');
    v
}

pub fn read_envelope<T: DeserializeOwned>(path: &Path, digest: &str) -> CliResult<T> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    let env: Envelope<T> = serde_json::from_slice(&bytes)
        .map_err(|e| CliError::Artifact { path: path.display().to_string(), detail: e.to_string() })?;
    if env.config_digest != digest {
        return Err(CliError::DigestMismatch(path.display().to_string()));
    }
    Ok(env.payload)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    /// Relative to the stage directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub seed: u64,
    /// Fingerprints of the upstream stages (or input files) this stage read.
    pub inputs: BTreeMap<String, String>,
    pub artifacts: Vec<ArtifactRecord>,
    pub seconds: f64,
}

impl StageRecord {
    /// Digest over this stage's artifact hashes; downstream stages record it.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for a in &self.artifacts {
            h.update(a.path.as_bytes());
            h.update([0]);
            h.update(a.sha256.as_bytes());
            h.update([0]);
        }
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_digest: String,
    pub seed: u64,
    pub stages: BTreeMap<String, StageRecord>,
}

impl RunManifest {
    pub fn new(config_digest: &str, seed: u64) -> Self {
        Self { config_digest: config_digest.to_string(), seed, stages: BTreeMap::new() }
    }

    pub fn load(dir: &Path) -> CliResult<Option<Self>> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(None);
        }
        let bytes = std::fs::read(&path).map_err(|e| CliError::io(&path, e))?;
        serde_json::from_slice(&bytes)
            .map(Some)
            .map_err(|e| CliError::Artifact { path: path.display().to_string(), detail: e.to_string() })
    }

    pub fn save(&self, dir: &Path) -> CliResult<()> {
        let mut bytes = serde_json::to_vec_pretty(self).expect("manifest serializes");
        bytes.push(b'\n');
        write_atomic(&dir.join(MANIFEST_FILE), &bytes)
    }

    /// A stage record whose artifacts all still exist with their recorded
    /// hashes.
    pub fn intact(&self, dir: &Path, stage: &str) -> Option<&StageRecord> {
        let rec = self.stages.get(stage)?;
        let ok = rec
            .artifacts
            .iter()
            .all(|a| file_sha256(&dir.join(&a.path)).map(|h| h == a.sha256).unwrap_or(false));
        ok.then_some(rec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_leaves_no_temp_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a/b.txt");
        write_atomic(&p, b"hello").unwrap();
        write_atomic(&p, b"world").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"world");
        let names: Vec<_> = std::fs::read_dir(dir.path().join("a")).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names.len(), 1);
    }

    #[test]
    fn envelope_rejects_foreign_digest() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.json");
        write_atomic(&p, &envelope_bytes("abc", "embed", &vec![1, 2, 3])).unwrap();
        let v: Vec<i32> = read_envelope(&p, "abc").unwrap();
        assert_eq!(v, vec![1, 2, 3]);
        assert!(matches!(read_envelope::<Vec<i32>>(&p, "abd"), Err(CliError::DigestMismatch(_))));
    }

    #[test]
    fn tampered_artifact_is_not_intact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s/out.csv");
        write_atomic(&p, b"1,2\n").unwrap();
        let mut m = RunManifest::new("d", 0);
        m.stages.insert(
            "s".into(),
            StageRecord {
                seed: 0,
                inputs: BTreeMap::new(),
                artifacts: vec![ArtifactRecord { path: "s/out.csv".into(), sha256: file_sha256(&p).unwrap() }],
                seconds: 0.0,
            },
        );
        m.save(dir.path()).unwrap();
        let back = RunManifest::load(dir.path()).unwrap().unwrap();
        assert!(back.intact(dir.path(), "s").is_some());
        write_atomic(&p, b"1,3\n").unwrap();
        assert!(back.intact(dir.path(), "s").is_none());
        assert!(back.intact(dir.path(), "t").is_none());
    }
}
