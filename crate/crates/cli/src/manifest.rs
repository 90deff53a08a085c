use std::collections::BTreeMap;
use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};

pub const RUN_FILE: &str = "run.json";

/// Record of one subcommand invocation, written next to its outputs.
/// The `config` block can be fed back through `--config` to redo the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: Vec<String>,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    /// Output files, relative to the manifest's directory.
    pub artifacts: Vec<String>,
    pub version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<serde_json::Value>,
}

impl RunManifest {
    pub fn new(command: Vec<String>, config: &impl Serialize) -> anyhow::Result<Self> {
        Ok(Self {
            command,
            config: serde_json::to_value(config)?,
            seeds: BTreeMap::new(),
            artifacts: Vec::new(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            metrics: None,
        })
    }

    pub fn write(&self, dir: &Path) -> anyhow::Result<()> {
        let path = dir.join(RUN_FILE);
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }

    pub fn read(dir: &Path) -> anyhow::Result<Self> {
        let path = dir.join(RUN_FILE);
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        Ok(serde_json::from_str(&text)?)
    }
}
