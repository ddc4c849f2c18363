//! Self-description embedded in every benchmark output. Contains no clock
//! or host data, so identical invocations produce identical bytes.

use serde::{Deserialize, Serialize};

use crate::codec::fnv1a64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    /// FNV-1a over the config snapshot followed by every input file.
    pub input_hash: String,
    /// Output file names, relative to the output directory.
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, seed: Option<u64>, config: serde_json::Value, inputs: &[&[u8]]) -> Self {
        let mut buf = serde_json::to_vec(&config).expect("config serializes");
        for i in inputs {
            buf.extend_from_slice(&(i.len() as u64).to_le_bytes());
            buf.extend_from_slice(i);
        }
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seed,
            config,
            input_hash: format!("{:016x}", fnv1a64(&buf)),
            outputs: Vec::new(),
        }
    }

    pub fn with_outputs(mut self, outputs: &[&str]) -> Self {
        self.outputs = outputs.iter().map(|s| s.to_string()).collect();
        self
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }
}
