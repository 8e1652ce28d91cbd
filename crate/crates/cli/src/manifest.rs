//! Per-stage run manifests. Every stage records the artifacts it produced
//! with content hashes; consuming stages verify those hashes before use, so
//! a stale or hand-edited artifact fails loudly instead of skewing results.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArtifactRecord {
    /// Relative to the output root, forward slashes.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Hash of the resolved config text stored next to this manifest.
    pub config_hash: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub versions: BTreeMap<String, String>,
    pub artifacts: Vec<ArtifactRecord>,
}

pub fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).expect("clock after epoch").as_secs()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    hex(&h.finalize())
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = fs::File::open(path)
        .with_context(|| format!("cannot open {} for hashing", path.display()))?;
    let mut h = Sha256::new();
    let mut buf = [0u8; 65536];
    loop {
        let n = file.read(&mut buf).with_context(|| format!("reading {}", path.display()))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex(&h.finalize()))
}

fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

pub fn manifest_path(out: &Path, command: &str) -> PathBuf {
    out.join("manifests").join(format!("{command}.json"))
}

pub fn config_copy_path(out: &Path, command: &str) -> PathBuf {
    out.join("manifests").join(format!("{command}.config.toml"))
}

/// Write via a sibling temp file and rename, so readers never observe a
/// half-written manifest.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().ok_or_else(|| anyhow!("{} has no parent", path.display()))?;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path)
        .with_context(|| format!("renaming {} into place", tmp.display()))?;
    Ok(())
}

fn rel_path(out: &Path, artifact: &Path) -> Result<String> {
    let rel = artifact.strip_prefix(out).with_context(|| {
        format!("artifact {} is outside the output root {}", artifact.display(), out.display())
    })?;
    Ok(rel
        .components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/"))
}

/// Hash `artifacts`, store the resolved config copy, and write the stage
/// manifest atomically.
pub fn write_run_manifest(
    out: &Path,
    command: &str,
    config_text: &str,
    started_unix: u64,
    artifacts: &[PathBuf],
) -> Result<RunManifest> {
    let mut records = Vec::with_capacity(artifacts.len());
    for artifact in artifacts {
        records.push(ArtifactRecord {
            path: rel_path(out, artifact)?,
            sha256: sha256_file(artifact)?,
        });
    }
    write_atomic(&config_copy_path(out, command), config_text.as_bytes())?;
    let manifest = RunManifest {
        command: command.to_string(),
        config_hash: sha256_hex(config_text.as_bytes()),
        started_unix,
        finished_unix: now_unix(),
        versions: BTreeMap::from([(
            "radnas".to_string(),
            env!("CARGO_PKG_VERSION").to_string(),
        )]),
        artifacts: records,
    };
    let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    write_atomic(&manifest_path(out, command), &json)?;
    Ok(manifest)
}

pub fn load_run_manifest(out: &Path, command: &str) -> Result<Option<RunManifest>> {
    let path = manifest_path(out, command);
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    let manifest: RunManifest = serde_json::from_str(&text)
        .with_context(|| format!("{} is not a run manifest", path.display()))?;
    Ok(Some(manifest))
}

/// True when `command` has a manifest and every artifact it recorded still
/// exists. Used for the no-`--force` fast path.
pub fn stage_complete(out: &Path, command: &str) -> Result<Option<RunManifest>> {
    match load_run_manifest(out, command)? {
        Some(m) if m.artifacts.iter().all(|a| out.join(&a.path).exists()) => Ok(Some(m)),
        _ => Ok(None),
    }
}

/// Require `artifact` to exist, and when one of `producers` recorded it,
/// require the bytes on disk to still match the recorded hash.
pub fn require_artifact(out: &Path, artifact: &Path, producers: &[&str]) -> Result<()> {
    if !artifact.exists() {
        let hint = producers.first().map(|p| format!("; run `radnas {p}` first")).unwrap_or_default();
        bail!("missing artifact {}{hint}", artifact.display());
    }
    let Ok(rel) = rel_path(out, artifact) else {
        // Outside the output root (user-supplied data): nothing recorded it.
        return Ok(());
    };
    for producer in producers {
        let Some(manifest) = load_run_manifest(out, producer)? else { continue };
        let Some(record) = manifest.artifacts.iter().find(|a| a.path == rel) else { continue };
        let actual = sha256_file(artifact)?;
        if actual != record.sha256 {
            bail!(
                "artifact {} does not match the hash `{producer}` recorded; rerun `radnas {producer} --force`",
                artifact.display()
            );
        }
        return Ok(());
    }
    Ok(())
}
