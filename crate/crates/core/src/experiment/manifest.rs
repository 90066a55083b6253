use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ExperimentConfig;
use crate::error::{Error, Result};

pub const MANIFEST_FORMAT: &str = "driftlab-manifest";
pub const RESULT_FORMAT: &str = "driftlab-result";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Content hash of the canonical (key-sorted, compact) JSON form of `cfg`.
/// The seed is part of the config, so this covers config + seed.
pub fn run_id(cfg: &ExperimentConfig) -> String {
    let canonical = serde_json::to_value(cfg)
        .expect("config serializes")
        .to_string();
    sha256_hex(canonical.as_bytes())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub format: String,
    pub run_id: String,
    pub seed: u64,
    pub tool_version: String,
    /// Seconds since the Unix epoch. Never part of any checksummed artifact.
    pub created_unix: u64,
    pub config: ExperimentConfig,
}

impl RunManifest {
    pub fn new(config: ExperimentConfig) -> Self {
        let created_unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        Self {
            format: MANIFEST_FORMAT.into(),
            run_id: run_id(&config),
            seed: config.seed,
            tool_version: TOOL_VERSION.into(),
            created_unix,
            config,
        }
    }

    /// Reads a manifest written by a previous run. The stored run_id must
    /// match the config, so a hand-edited config cannot masquerade as the
    /// original run.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let m: Self = serde_path_to_error::deserialize(de)
            .map_err(|e| Error::schema(e.path().to_string(), e.inner().to_string()))?;
        if m.format != MANIFEST_FORMAT {
            return Err(Error::schema(
                "format",
                format!("expected {MANIFEST_FORMAT:?}"),
            ));
        }
        m.config.validate()?;
        if m.seed != m.config.seed {
            return Err(Error::schema(
                "seed",
                "manifest seed differs from config seed",
            ));
        }
        if m.run_id != run_id(&m.config) {
            return Err(Error::schema("run_id", "run_id does not match the config"));
        }
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }

    pub fn kind(&self) -> &'static str {
        self.config.experiment.kind()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArtifactKind {
    Batch,
    Trajectory,
    Report,
    Checkpoint,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArtifactRecord {
    pub kind: ArtifactKind,
    /// File name relative to the output directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentResult {
    pub format: String,
    pub kind: String,
    pub run_id: String,
    /// Manifest file name relative to the output directory.
    pub manifest: String,
    pub artifacts: Vec<ArtifactRecord>,
    pub summary: BTreeMap<String, f64>,
}

/// Upper bound on artifacts listed in one result file.
pub const MAX_ARTIFACTS: usize = 100_000;

impl ExperimentResult {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let r: Self = serde_path_to_error::deserialize(de)
            .map_err(|e| Error::schema(e.path().to_string(), e.inner().to_string()))?;
        if r.format != RESULT_FORMAT {
            return Err(Error::schema(
                "format",
                format!("expected {RESULT_FORMAT:?}"),
            ));
        }
        if r.artifacts.len() > MAX_ARTIFACTS {
            return Err(Error::schema("artifacts", "too many artifacts"));
        }
        for (i, a) in r.artifacts.iter().enumerate() {
            if !is_plain_file_name(&a.path) {
                return Err(Error::schema(
                    format!("artifacts[{i}].path"),
                    "must be a plain file name",
                ));
            }
            if a.sha256.len() != 64 || !a.sha256.bytes().all(|b| b.is_ascii_hexdigit()) {
                return Err(Error::schema(
                    format!("artifacts[{i}].sha256"),
                    "must be 64 hex digits",
                ));
            }
        }
        if !is_plain_file_name(&r.manifest) {
            return Err(Error::schema("manifest", "must be a plain file name"));
        }
        Ok(r)
    }

    /// Reads `result.json` (or `<stem>.result.json`) from disk.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("result serializes") + "\n"
    }

    pub fn artifacts_of(&self, kind: ArtifactKind) -> impl Iterator<Item = &ArtifactRecord> {
        self.artifacts.iter().filter(move |a| a.kind == kind)
    }
}

pub(crate) fn is_plain_file_name(name: &str) -> bool {
    !name.is_empty()
        && name != "."
        && name != ".."
        && !name.contains(['/', '\\', '\0'])
        && Path::new(name).file_name().is_some_and(|f| f == name)
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AuditReport {
    pub results: usize,
    /// Listed artifacts (or manifests) that do not exist.
    pub missing: Vec<String>,
    /// Listed artifacts whose content no longer matches the checksum.
    pub corrupted: Vec<String>,
    /// Files in the directory that no result accounts for.
    pub orphans: Vec<String>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.missing.is_empty() && self.corrupted.is_empty() && self.orphans.is_empty()
    }
}

pub(crate) fn is_result_file(name: &str) -> bool {
    name == "result.json" || name.ends_with(".result.json")
}

/// Checks an output directory: every result's artifacts and manifest exist
/// and match their checksums, and no file is left unaccounted for.
pub fn audit_dir(dir: &Path) -> Result<AuditReport> {
    let mut names = BTreeSet::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if entry
            .file_type()
            .map_err(|e| Error::io(entry.path(), e))?
            .is_file()
        {
            names.insert(entry.file_name().to_string_lossy().into_owned());
        }
    }
    let mut report = AuditReport::default();
    let mut claimed = BTreeSet::new();
    for name in names.iter().filter(|n| is_result_file(n)) {
        let result = ExperimentResult::load(&dir.join(name))?;
        report.results += 1;
        claimed.insert(name.clone());
        claimed.insert(result.manifest.clone());
        if !names.contains(&result.manifest) {
            report.missing.push(result.manifest.clone());
        }
        for a in &result.artifacts {
            claimed.insert(a.path.clone());
            match std::fs::read(dir.join(&a.path)) {
                Ok(bytes) if sha256_hex(&bytes) == a.sha256 => {}
                Ok(_) => report.corrupted.push(a.path.clone()),
                Err(_) => report.missing.push(a.path.clone()),
            }
        }
    }
    report.orphans = names.difference(&claimed).cloned().collect();
    Ok(report)
}
