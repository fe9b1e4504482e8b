//! Run manifests written next to every output.
//!
//! A manifest stores the fully resolved config (environment inlined), so it
//! can be passed back as `--config` to repeat the run without the original
//! fixture files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{config, Error, Result};

pub const TOOL_NAME: &str = "spolab";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentManifest {
    pub tool: String,
    pub tool_version: String,
    /// Subcommand that produced the output.
    pub command: String,
    pub config_path: PathBuf,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    /// SHA-256 of every input file read, keyed by path as given.
    pub fixture_hashes: BTreeMap<String, String>,
    /// Non-config flags that affect output (e.g. replication count).
    #[serde(default)]
    pub options: BTreeMap<String, serde_json::Value>,
    /// Resolved config, ready to be read back as a config of the same command.
    pub config: serde_json::Value,
}

impl ExperimentManifest {
    pub fn new(command: &str, config_path: &Path, out: &Path, config: serde_json::Value) -> Self {
        Self {
            tool: TOOL_NAME.to_string(),
            tool_version: TOOL_VERSION.to_string(),
            command: command.to_string(),
            config_path: config_path.to_path_buf(),
            seeds: Vec::new(),
            out: out.to_path_buf(),
            fixture_hashes: BTreeMap::new(),
            options: BTreeMap::new(),
            config,
        }
    }

    /// Hash `path` and record it.
    pub fn record_input(&mut self, path: &Path) -> Result<()> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        self.fixture_hashes
            .insert(path.display().to_string(), sha256_hex(&bytes));
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    /// Parse `value` as a manifest if it has the manifest shape.
    pub fn detect(value: &serde_json::Value) -> Result<Option<Self>> {
        let is_manifest = value
            .get("tool")
            .and_then(|t| t.as_str())
            .is_some_and(|t| t == TOOL_NAME)
            && value.get("config").is_some();
        if !is_manifest {
            return Ok(None);
        }
        let m: Self =
            serde_json::from_value(value.clone()).map_err(|e| Error::json("manifest", e))?;
        Ok(Some(m))
    }

    /// Check that this manifest was written by `command`.
    pub fn expect_command(&self, command: &str) -> Result<()> {
        if self.command == command {
            Ok(())
        } else {
            Err(config(format!(
                "manifest was written by `{}`, not `{command}`",
                self.command
            )))
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn roundtrip_and_detect() {
        let mut m = ExperimentManifest::new(
            "train",
            Path::new("cfg.json"),
            Path::new("out"),
            serde_json::json!({"algorithm": "spo"}),
        );
        m.seeds.push(7);
        m.options.insert("threads".into(), 1.into());
        let v: serde_json::Value = serde_json::from_str(&m.to_json()).unwrap();
        let back = ExperimentManifest::detect(&v).unwrap().unwrap();
        assert_eq!(back, m);
        back.expect_command("train").unwrap();
        assert!(back.expect_command("sched").is_err());
        assert!(
            ExperimentManifest::detect(&serde_json::json!({"algorithm": "spo"}))
                .unwrap()
                .is_none()
        );
    }
}
