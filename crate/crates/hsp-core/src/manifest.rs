//! Run manifests: what produced which output from which inputs.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

/// Provenance record emitted next to command outputs.
///
/// Files are keyed by file name (disambiguated on collision) so that two
/// runs writing to different directories stay comparable. `result_digest`
/// covers only the deterministic content (config hash, input digests,
/// output digests, row counts): re-running a seeded command reproduces it
/// even though `created_unix_ms` differs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub config_hash: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub row_counts: BTreeMap<String, u64>,
    pub created_unix_ms: u64,
    pub result_digest: String,
}

fn file_key(map: &BTreeMap<String, String>, path: &Path) -> String {
    let base = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    if !map.contains_key(&base) {
        return base;
    }
    let mut n = 2;
    loop {
        let candidate = format!("{base}#{n}");
        if !map.contains_key(&candidate) {
            return candidate;
        }
        n += 1;
    }
}

impl RunManifest {
    pub fn new(command: &str, config_hash: String) -> RunManifest {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config_hash,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            row_counts: BTreeMap::new(),
            created_unix_ms: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_millis() as u64)
                .unwrap_or(0),
            result_digest: String::new(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> std::io::Result<()> {
        let key = file_key(&self.inputs, path);
        self.inputs.insert(key, sha256_file(path)?);
        Ok(())
    }

    pub fn add_output(&mut self, path: &Path) -> std::io::Result<()> {
        let key = file_key(&self.outputs, path);
        self.outputs.insert(key, sha256_file(path)?);
        Ok(())
    }

    pub fn add_count(&mut self, key: &str, value: u64) {
        self.row_counts.insert(key.to_string(), value);
    }

    /// Fix the result digest from the deterministic fields. Call after all
    /// inputs/outputs/counts are recorded.
    pub fn seal(&mut self) {
        let mut content = String::new();
        content.push_str(&self.tool_version);
        content.push('\n');
        content.push_str(&self.command);
        content.push('\n');
        content.push_str(&self.config_hash);
        content.push('\n');
        for (k, v) in &self.inputs {
            content.push_str(&format!("in {k} {v}\n"));
        }
        for (k, v) in &self.outputs {
            content.push_str(&format!("out {k} {v}\n"));
        }
        for (k, v) in &self.row_counts {
            content.push_str(&format!("count {k} {v}\n"));
        }
        self.result_digest = sha256_hex(content.as_bytes());
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, json)
    }
}
