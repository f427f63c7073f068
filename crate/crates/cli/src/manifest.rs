//! Run manifests: every command emits one, and every result file references
//! its digest. The digest covers the reproducibility-relevant fields
//! (command, resolved configuration, seeds, input digests, library version)
//! and deliberately excludes wall-clock timings, so re-running the same
//! manifest reproduces outputs carrying the same digest.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{CliResult, StageClock};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub fnv1a64: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub command: String,
    /// Fully resolved configuration; sufficient for an exact re-run.
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub library_version: String,
    pub input_digests: Vec<InputDigest>,
    /// Digest over everything above (hex).
    pub digest: String,
    /// Wall-clock stage timings; excluded from the digest.
    pub timings: Vec<(String, f64)>,
    /// Where the configuration came from (path, preset or manifest);
    /// excluded from the digest so re-runs reproduce it.
    #[serde(default)]
    pub provenance: Option<String>,
}

/// 64-bit FNV-1a over a byte stream.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325_u64;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

pub fn digest_file(path: &Path) -> CliResult<InputDigest> {
    let bytes = std::fs::read(path)?;
    Ok(InputDigest {
        path: path.display().to_string(),
        fnv1a64: format!("{:016x}", fnv1a64(&bytes)),
    })
}

impl RunManifest {
    pub fn new(
        command: &str,
        config: serde_json::Value,
        seeds: Vec<u64>,
        input_digests: Vec<InputDigest>,
    ) -> Self {
        let library_version = env!("CARGO_PKG_VERSION").to_string();
        let core = serde_json::json!({
            "schema_version": SCHEMA_VERSION,
            "command": command,
            "config": config,
            "seeds": seeds,
            "library_version": library_version,
            "input_digests": input_digests.iter().map(|d| (&d.path, &d.fnv1a64)).collect::<Vec<_>>(),
        });
        let digest = format!("{:016x}", fnv1a64(core.to_string().as_bytes()));
        RunManifest {
            schema_version: SCHEMA_VERSION,
            command: command.to_string(),
            config,
            seeds,
            library_version,
            input_digests,
            digest,
            timings: Vec::new(),
            provenance: None,
        }
    }

    pub fn with_timings(mut self, clock: &StageClock) -> Self {
        self.timings = clock.stages().to_vec();
        self
    }

    pub fn with_provenance(mut self, provenance: &str) -> Self {
        self.provenance = Some(provenance.to_string());
        self
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| crate::CliError::Parse(e.to_string()))?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| crate::CliError::Parse(e.to_string()))
    }
}
