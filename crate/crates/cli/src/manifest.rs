//! Plain-text run manifest: enough to reproduce or audit a run without
//! opening the JSON artifacts.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::scenario::{Experiment, Scenario};

/// SHA-256 of the effective scenario (after CLI overrides), hex-encoded.
/// Hashing the serialized form rather than the input file means the manifest
/// reflects what actually ran.
pub fn config_hash(scenario: &Scenario) -> anyhow::Result<String> {
    let canonical = toml::to_string(scenario)?;
    let digest = Sha256::digest(canonical.as_bytes());
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Write `manifest.txt` as `key = value` lines; `extra` entries follow the
/// standard block in the order given.
pub fn write_manifest(
    out_dir: &Path,
    experiment: Experiment,
    scenario: &Scenario,
    extra: &[(String, String)],
) -> anyhow::Result<()> {
    let mut text = String::new();
    text.push_str(&format!("experiment = {}\n", experiment.name()));
    text.push_str(&format!("config_sha256 = {}\n", config_hash(scenario)?));
    text.push_str(&format!("seed = {}\n", scenario.seed));
    text.push_str(&format!("tool_version = {}\n", env!("CARGO_PKG_VERSION")));
    for (k, v) in extra {
        text.push_str(&format!("{k} = {v}\n"));
    }
    std::fs::write(out_dir.join("manifest.txt"), text)?;
    Ok(())
}
