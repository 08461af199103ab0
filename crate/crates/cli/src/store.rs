//! Output directory, stage cache and run manifest.
//!
//! A stage's key hashes its name, its configuration subsection and the
//! artifact hashes of the stages it reads. A stage whose key matches the
//! previous manifest and whose artifacts are intact is not rerun.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::sha256_hex;
use crate::error::{CliError, Result};

pub const MANIFEST: &str = "manifest.json";
pub const TIMINGS: &str = "timings.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the output directory, `/`-separated.
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub key: String,
    pub artifacts: Vec<Artifact>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub seed: u64,
    pub stages: Vec<StageRecord>,
}

impl RunManifest {
    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.name == name)
    }

    pub fn load(dir: &Path) -> Result<Option<Self>> {
        let p = dir.join(MANIFEST);
        if !p.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&p)?;
        Ok(Some(serde_json::from_str(&text)?))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub name: String,
    pub seconds: f64,
    pub cached: bool,
}

pub struct Store {
    root: PathBuf,
    force: bool,
    previous: BTreeMap<String, StageRecord>,
    manifest: RunManifest,
    timings: Vec<StageTiming>,
}

fn hash_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

impl Store {
    pub fn open(root: &Path, config_hash: &str, seed: u64, force: bool) -> Result<Self> {
        fs::create_dir_all(root)?;
        let previous = match RunManifest::load(root) {
            Ok(Some(m)) => m.stages.into_iter().map(|s| (s.name.clone(), s)).collect(),
            // an unreadable manifest only disables reuse
            _ => BTreeMap::new(),
        };
        Ok(Self {
            root: root.to_path_buf(),
            force,
            previous,
            manifest: RunManifest {
                config_hash: config_hash.to_string(),
                seed,
                stages: Vec::new(),
            },
            timings: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    pub fn timings(&self) -> &[StageTiming] {
        &self.timings
    }

    fn upstream_hashes(&self, upstream: &[&str]) -> Result<Vec<(String, Vec<String>)>> {
        upstream
            .iter()
            .map(|&u| {
                let rec = self.manifest.stage(u).ok_or_else(|| {
                    CliError::Config(format!("stage '{u}' must run before its consumers"))
                })?;
                Ok((u.to_string(), rec.artifacts.iter().map(|a| a.sha256.clone()).collect()))
            })
            .collect()
    }

    pub fn stage_key(&self, name: &str, settings: &impl Serialize, upstream: &[&str]) -> Result<String> {
        let material = serde_json::json!({
            "stage": name,
            "settings": settings,
            "upstream": self.upstream_hashes(upstream)?,
        });
        Ok(sha256_hex(&serde_json::to_vec(&material)?))
    }

    fn reusable(&self, name: &str, key: &str) -> Option<StageRecord> {
        if self.force {
            return None;
        }
        let rec = self.previous.get(name)?;
        if rec.key != key {
            return None;
        }
        for a in &rec.artifacts {
            match hash_file(&self.path(&a.path)) {
                Ok(h) if h == a.sha256 => {}
                _ => return None,
            }
        }
        Some(rec.clone())
    }

    /// Run `body` unless a cached result is valid. `body` writes its files
    /// under the output directory and returns their relative paths.
    /// Returns whether the stage was served from cache.
    pub fn stage<F>(&mut self, name: &str, settings: &impl Serialize, upstream: &[&str], body: F) -> Result<bool>
    where
        F: FnOnce(&Path) -> Result<Vec<String>>,
    {
        let start = Instant::now();
        let key = self.stage_key(name, settings, upstream).map_err(|e| e.in_stage(name))?;
        let (record, cached) = match self.reusable(name, &key) {
            Some(rec) => (rec, true),
            None => {
                let paths = body(&self.root).map_err(|e| e.in_stage(name))?;
                let mut artifacts = Vec::with_capacity(paths.len());
                for p in paths {
                    let sha256 = hash_file(&self.path(&p)).map_err(|e| e.in_stage(name))?;
                    artifacts.push(Artifact { path: p, sha256 });
                }
                (
                    StageRecord {
                        name: name.to_string(),
                        key,
                        artifacts,
                    },
                    false,
                )
            }
        };
        self.manifest.stages.retain(|s| s.name != name);
        self.manifest.stages.push(record);
        self.timings.push(StageTiming {
            name: name.to_string(),
            seconds: start.elapsed().as_secs_f64(),
            cached,
        });
        self.write()?;
        Ok(cached)
    }

    /// Persist the manifest (deterministic) and the timings (not).
    pub fn write(&self) -> Result<()> {
        let mut m = serde_json::to_string_pretty(&self.manifest)?;
        m.push('\n');
        fs::write(self.path(MANIFEST), m)?;
        let mut t = serde_json::to_string_pretty(&self.timings)?;
        t.push('\n');
        fs::write(self.path(TIMINGS), t)?;
        Ok(())
    }
}

/// Write `bytes` to `root/rel`, creating parent directories; returns `rel`.
pub fn put(root: &Path, rel: &str, bytes: impl AsRef<[u8]>) -> Result<String> {
    let p = root.join(rel);
    if let Some(parent) = p.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(p, bytes)?;
    Ok(rel.to_string())
}

pub fn put_json(root: &Path, rel: &str, value: &impl Serialize) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    put(root, rel, s)
}

pub fn read_json<T: serde::de::DeserializeOwned>(root: &Path, rel: &str) -> Result<T> {
    let p = root.join(rel);
    let text = fs::read_to_string(&p).map_err(|e| CliError::Data(format!("cannot read {}: {e}", p.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))
}
