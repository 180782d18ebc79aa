use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::CliError;

/// Written as `manifest.json` next to every command's outputs. The
/// effective config is embedded so the run can be repeated from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    /// SHA-256 of the config file as read, hex encoded.
    pub config_sha256: Option<String>,
    pub seeds: BTreeMap<String, u64>,
    /// Wall-clock milliseconds per stage; the only non-reproducible field.
    pub timings_ms: BTreeMap<String, u64>,
    pub corrections: BTreeMap<String, bool>,
    pub parameters: BTreeMap<String, serde_json::Value>,
    pub config: Option<RunConfig>,
}

impl RunManifest {
    pub fn new(command: &str, raw_config: Option<&[u8]>, config: Option<&RunConfig>) -> Self {
        let mut corrections = BTreeMap::new();
        if let Some(pk) = config.and_then(|c| c.pk.as_ref()) {
            corrections.insert("pk_mass_conserving".into(), !pk.pk_literal);
        }
        Self {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_sha256: raw_config.map(sha256_hex),
            seeds: BTreeMap::new(),
            timings_ms: BTreeMap::new(),
            corrections,
            parameters: BTreeMap::new(),
            config: config.cloned(),
        }
    }

    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let t0 = std::time::Instant::now();
        let out = f();
        self.timings_ms.insert(stage.into(), t0.elapsed().as_millis() as u64);
        out
    }

    pub fn param(&mut self, key: &str, value: impl Serialize) {
        self.parameters.insert(key.into(), serde_json::to_value(value).expect("serializable"));
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let p = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(self).expect("serializable");
        std::fs::write(&p, text + "\n").map_err(|e| CliError::io(&p, e))
    }

    pub fn read(dir: &Path) -> Result<Self, CliError> {
        let p = dir.join("manifest.json");
        let text = std::fs::read_to_string(&p).map_err(|e| CliError::io(&p, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", p.display())))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_known_value() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
