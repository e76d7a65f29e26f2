//! Content-addressed provenance for persisted artifacts: every file in the
//! pipeline embeds the SHA-256 digest of its direct inputs, so the chain
//! dataset -> points -> frontier -> fit -> audit is verifiable offline.

use crate::error::{Error, Result};
use sha2::{Digest, Sha256};
use std::path::Path;

pub fn bytes_digest(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    format!("{:x}", h.finalize())
}

pub fn file_digest(path: &Path) -> Result<String> {
    Ok(bytes_digest(&std::fs::read(path)?))
}

/// Finds `key=value` in an artifact's comment header (`# key=value`) or in a
/// structured-text body (`key=value`).
pub fn embedded_value(path: &Path, key: &str) -> Result<Option<String>> {
    let body = std::fs::read_to_string(path)?;
    let prefix = format!("{key}=");
    for line in body.lines() {
        let line = line.trim().trim_start_matches('#').trim_start();
        if let Some(v) = line.strip_prefix(&prefix) {
            return Ok(Some(v.trim().to_string()));
        }
    }
    Ok(None)
}

/// Checks that `artifact` was produced from the current contents of
/// `upstream`: the digest recorded under `key` must match the recomputed one.
pub fn check_upstream(artifact: &Path, key: &str, upstream: &Path) -> Result<()> {
    let recorded = embedded_value(artifact, key)?.ok_or_else(|| {
        Error::StaleInput(format!(
            "{} records no '{key}' digest; regenerate it or pass --force",
            artifact.display()
        ))
    })?;
    let actual = file_digest(upstream)?;
    if recorded != actual {
        return Err(Error::StaleInput(format!(
            "{} was built from a different version of {} (recorded {}.., found {}..); \
             regenerate downstream artifacts or pass --force",
            artifact.display(),
            upstream.display(),
            &recorded[..12.min(recorded.len())],
            &actual[..12]
        )));
    }
    Ok(())
}
