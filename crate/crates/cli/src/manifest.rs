//! Run manifests: the resolved config, seed, tool version and digests of the
//! model, the landscapes and every output file.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::config::{resolve, RunConfig};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TOOL: &str = "famtune";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub config: RunConfig,
    pub model_digest: String,
    /// Landscape CSV digest per seed.
    pub landscape_digests: BTreeMap<u64, String>,
    /// Output file name to content digest.
    pub outputs: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Manifest {
    pub fn new(command: &str, config: &RunConfig, model_json: &str) -> Self {
        Manifest {
            tool: TOOL.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed: config.seed,
            config: config.clone(),
            model_digest: sha256_hex(model_json.as_bytes()),
            landscape_digests: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }
}

/// Writes `manifest.json` into `dir`.
pub fn emit_manifest(manifest: &Manifest, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(manifest)? + "\n";
    std::fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))
}

/// Reads a manifest. The seed is required, and the embedded config is
/// re-resolved so it passes the same validation as a fresh run.
pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read manifest {}", path.display()))?;
    let raw: Value = serde_json::from_str(&text).with_context(|| format!("malformed manifest {}", path.display()))?;
    let Some(obj) = raw.as_object() else {
        bail!("manifest {} must hold a JSON object", path.display());
    };
    match obj.get("seed") {
        Some(Value::Number(n)) if n.is_u64() => {}
        Some(_) => bail!("manifest {} has a non-integer seed", path.display()),
        None => bail!("manifest {} has no seed", path.display()),
    }
    let manifest: Manifest = serde_json::from_value(raw.clone()).with_context(|| format!("invalid manifest {}", path.display()))?;
    if manifest.tool != TOOL {
        bail!("manifest was written by {:?}, not {TOOL}", manifest.tool);
    }
    if manifest.config.seed != manifest.seed {
        bail!("manifest seed {} disagrees with its config seed {}", manifest.seed, manifest.config.seed);
    }
    let layer = match &obj["config"] {
        Value::Object(m) => m.clone(),
        _ => bail!("manifest config must be an object"),
    };
    let config = resolve(&[layer])?;
    Ok(Manifest { config, ..manifest })
}
