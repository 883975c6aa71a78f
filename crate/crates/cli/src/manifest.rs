use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{io_err, Result};

pub const MANIFEST: &str = "manifest.json";

/// Written beside every output; with the embedded config it is enough to
/// rerun the command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    /// Arguments after the program name.
    pub args: Vec<String>,
    pub seed: u64,
    pub config_hash: String,
    pub config: Option<ExperimentConfig>,
    pub tool_version: String,
    pub format_versions: FormatVersions,
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormatVersions {
    pub checkpoint: u32,
}

impl Manifest {
    /// `args` is the full argument vector, program name first.
    pub fn new(command: &str, args: &[String], seed: u64, config: Option<&ExperimentConfig>) -> Self {
        Self {
            command: command.to_string(),
            args: args.iter().skip(1).cloned().collect(),
            seed,
            config_hash: config.map_or_else(|| hash_args(args), ExperimentConfig::hash),
            config: config.cloned(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            format_versions: FormatVersions {
                checkpoint: ltlm_autodiff::CHECKPOINT_VERSION,
            },
            outputs: Vec::new(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST);
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))
    }
}

/// Commands run without a config file hash their argument list instead.
fn hash_args(args: &[String]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(args.join("\u{0}").as_bytes()))
}
