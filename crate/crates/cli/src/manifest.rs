use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use fedtraffic::scenario::{profiles_to_csv, DetectorProfile, RoadNetwork};
use fedtraffic::seeds;

use crate::{CliError, RunConfig};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Everything needed to repeat a command. Contains no timestamps or host
/// data, so equal runs write equal manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<PathBuf>,
    /// Fully resolved configuration, overrides applied.
    pub config: RunConfig,
    /// `master` plus the derived seed of every participating node.
    pub seeds: BTreeMap<String, u64>,
    pub out_dir: PathBuf,
    pub tool_version: String,
    pub scenario_hash: String,
}

impl RunManifest {
    pub fn new(command: &str, config_path: Option<&Path>, config: &RunConfig, nodes: &[String], scenario_hash: &str) -> Self {
        let mut seed_map = BTreeMap::new();
        seed_map.insert("master".to_string(), config.seed);
        for n in nodes {
            seed_map.insert(n.clone(), seeds::derive_str(config.seed, n));
        }
        Self {
            command: command.to_string(),
            config_path: config_path.map(Path::to_path_buf),
            config: config.clone(),
            seeds: seed_map,
            out_dir: config.out.clone(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            scenario_hash: scenario_hash.to_string(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::validation(format!("manifest: {e}")))
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::runtime(format!("{}: {e}", dir.display())))?;
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, self.to_json()).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
        Ok(path)
    }
}

/// SHA-256 over the canonical text forms of the network and the profiles.
pub fn scenario_hash(net: &RoadNetwork, profiles: &[DetectorProfile]) -> String {
    let mut h = Sha256::new();
    h.update(net.to_string().as_bytes());
    h.update(b"\0");
    h.update(profiles_to_csv(profiles).as_bytes());
    hex::encode(h.finalize())
}
