use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

/// Record of one command invocation, written next to its outputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_paths: Vec<PathBuf>,
    /// SHA-256 of the effective config serialized with sorted keys.
    pub config_hash: String,
    pub effective_config: Value,
    pub seed: u64,
    pub deterministic: bool,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub version: String,
    pub outputs: Vec<PathBuf>,
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

/// Objects are re-emitted with sorted keys so the hash ignores key order.
fn canonical(v: &Value) -> Value {
    match v {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            let mut out = serde_json::Map::new();
            for k in keys {
                out.insert(k.clone(), canonical(&map[k]));
            }
            Value::Object(out)
        }
        Value::Array(items) => Value::Array(items.iter().map(canonical).collect()),
        other => other.clone(),
    }
}

pub fn config_hash(config: &Value) -> String {
    let text = serde_json::to_string(&canonical(config)).expect("JSON values serialize");
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl RunManifest {
    pub fn start(command: &str, config_paths: Vec<PathBuf>, effective_config: Value, seed: u64, deterministic: bool) -> Self {
        Self {
            command: command.into(),
            config_paths,
            config_hash: config_hash(&effective_config),
            effective_config,
            seed,
            deterministic,
            started_unix: now(),
            finished_unix: 0,
            version: env!("CARGO_PKG_VERSION").into(),
            outputs: Vec::new(),
        }
    }

    pub fn finish(mut self, outputs: Vec<PathBuf>, path: &Path) -> std::io::Result<()> {
        self.outputs = outputs;
        self.finished_unix = now();
        let text = serde_json::to_string_pretty(&self).expect("manifest serializes");
        std::fs::write(path, text + "\n")
    }
}
