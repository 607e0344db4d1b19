//! Run directories and the JSON manifest written into each of them.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.ini";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

/// Wall-clock information; the only part of a manifest that varies between
/// identical runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Timings {
    pub started_at: String,
    pub stages: Vec<StageTiming>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FacetRow {
    pub facet: usize,
    pub cluster_size: usize,
    pub seed_activation: f64,
    pub final_activation: f64,
    pub top1_class: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub toolkit_version: String,
    pub command: String,
    pub config_hash: String,
    /// Canonical effective configuration, enough to replay the run.
    pub config: String,
    pub inputs: Vec<FileRecord>,
    /// Every file of the run directory except the manifest, relative paths.
    pub artifacts: Vec<FileRecord>,
    pub timings: Timings,
    pub facets: Vec<FacetRow>,
    pub metrics: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::new(crate::error::Category::Io, format!("cannot read manifest '{}': {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::data(format!("manifest '{}' is malformed: {e}", path.display())))
    }

    pub fn save(&self, dir: &Path) -> CliResult<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| CliError::runtime(e.to_string()))?;
        std::fs::write(dir.join(MANIFEST_FILE), text + "\n")?;
        Ok(())
    }

    pub fn artifact(&self, path: &str) -> Option<&FileRecord> {
        self.artifacts.iter().find(|a| a.path == path)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::new(crate::error::Category::Io, format!("cannot hash '{}': {e}", path.display())))?;
    Ok(sha256_hex(&bytes))
}

/// Creates `<out>/<UTC timestamp>-<first 8 hex of config_hash>`, adding a
/// numeric suffix if that name is taken.
pub fn create_run_dir(out: &Path, config_hash: &str) -> CliResult<(PathBuf, String)> {
    std::fs::create_dir_all(out)?;
    let now = chrono::Utc::now();
    let base = format!("{}-{}", now.format("%Y%m%dT%H%M%S%.3fZ"), &config_hash[..8]);
    let mut name = base.clone();
    for n in 1.. {
        match std::fs::create_dir(out.join(&name)) {
            Ok(()) => break,
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => name = format!("{base}-{n}"),
            Err(e) => return Err(e.into()),
        }
    }
    Ok((out.join(name), now.to_rfc3339_opts(chrono::SecondsFormat::Millis, true)))
}

fn walk(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> CliResult<()> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)?.collect::<Result<_, _>>()?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let p = e.path();
        if p.is_dir() {
            walk(root, &p, out)?;
        } else {
            out.push(p.strip_prefix(root).expect("walked under root").to_path_buf());
        }
    }
    Ok(())
}

/// Hashes every file under `dir` except the manifest, sorted by path.
pub fn collect_artifacts(dir: &Path) -> CliResult<Vec<FileRecord>> {
    let mut files = Vec::new();
    walk(dir, dir, &mut files)?;
    files
        .into_iter()
        .filter(|p| p != Path::new(MANIFEST_FILE))
        .map(|rel| {
            let path = rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect::<Vec<_>>().join("/");
            Ok(FileRecord { sha256: sha256_file(&dir.join(&rel))?, path })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_dirs_never_collide() {
        let tmp = tempfile::tempdir().unwrap();
        let hash = sha256_hex(b"cfg");
        let (a, _) = create_run_dir(tmp.path(), &hash).unwrap();
        let (b, _) = create_run_dir(tmp.path(), &hash).unwrap();
        assert_ne!(a, b);
        assert!(a.file_name().unwrap().to_string_lossy().ends_with(&hash[..8]) || b != a);
    }

    #[test]
    fn artifacts_exclude_manifest_and_recurse() {
        let tmp = tempfile::tempdir().unwrap();
        std::fs::create_dir(tmp.path().join("sub")).unwrap();
        std::fs::write(tmp.path().join("sub/x.flt1"), b"abc").unwrap();
        std::fs::write(tmp.path().join("a.txt"), b"").unwrap();
        std::fs::write(tmp.path().join(MANIFEST_FILE), b"{}").unwrap();
        let recs = collect_artifacts(tmp.path()).unwrap();
        let paths: Vec<&str> = recs.iter().map(|r| r.path.as_str()).collect();
        assert_eq!(paths, ["a.txt", "sub/x.flt1"]);
        assert_eq!(recs[1].sha256, sha256_hex(b"abc"));
    }
}
