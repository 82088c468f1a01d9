//! `manifest.json`: the resolved configuration, the seed and a SHA-256 of
//! every artifact a command wrote.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{BtnError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    pub config: serde_json::Value,
    /// File name relative to the output directory -> hex SHA-256.
    pub artifacts: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| BtnError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl Manifest {
    /// Hashes `files` (relative to `dir`).
    pub fn new(
        command: &str,
        seed: u64,
        config: serde_json::Value,
        dir: &Path,
        files: &[String],
    ) -> Result<Manifest> {
        let mut artifacts = BTreeMap::new();
        for f in files {
            artifacts.insert(f.clone(), sha256_file(&dir.join(f))?);
        }
        Ok(Manifest {
            command: command.into(),
            seed,
            config,
            artifacts,
        })
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| BtnError::io(path, e))
    }

    pub fn read(dir: &Path) -> Result<Manifest> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| BtnError::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hashes_and_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.txt"), b"abc").unwrap();
        let m = Manifest::new(
            "test",
            3,
            serde_json::json!({"k": 1}),
            dir.path(),
            &["a.txt".into()],
        )
        .unwrap();
        assert_eq!(
            m.artifacts["a.txt"],
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        m.write(dir.path()).unwrap();
        assert_eq!(Manifest::read(dir.path()).unwrap(), m);
        assert!(Manifest::new("t", 0, serde_json::Value::Null, dir.path(), &["missing".into()]).is_err());
    }
}
