//! Run directory bookkeeping: the manifest, staleness checks, atomic writes and the lock.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const LOCK_FILE: &str = "run.lock";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Ingest,
    Preprocess,
    Fit,
    Scan,
    Topics,
    Profile,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Ingest,
        Stage::Preprocess,
        Stage::Fit,
        Stage::Scan,
        Stage::Topics,
        Stage::Profile,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Preprocess => "preprocess",
            Stage::Fit => "fit",
            Stage::Scan => "scan",
            Stage::Topics => "topics",
            Stage::Profile => "profile",
        }
    }

    /// Stages whose artifacts this stage reads.
    pub fn upstream(self) -> &'static [Stage] {
        match self {
            Stage::Ingest => &[],
            Stage::Preprocess => &[Stage::Ingest],
            Stage::Fit | Stage::Scan => &[Stage::Preprocess],
            Stage::Topics => &[Stage::Preprocess, Stage::Fit],
            Stage::Profile => &[Stage::Ingest, Stage::Fit],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub completed_unix_ms: u128,
    /// SHA-256 of the stage parameters as JSON.
    pub config_hash: String,
    pub params: serde_json::Value,
    /// Files read, keyed by run-relative path (or absolute path for external inputs).
    pub inputs: BTreeMap<String, String>,
    /// Files written, keyed by run-relative path.
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub seed: u64,
    pub stages: BTreeMap<String, StageRecord>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn now_unix_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis())
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

/// Writes through a temporary sibling file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    let mut f = File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
    f.write_all(bytes).map_err(|e| io_err(&tmp, e))?;
    f.sync_all().map_err(|e| io_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

impl RunManifest {
    pub fn new(seed: u64) -> Self {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            stages: BTreeMap::new(),
        }
    }

    pub fn load(run_dir: &Path) -> CliResult<Option<Self>> {
        let path = run_dir.join(MANIFEST_FILE);
        match fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text)
                .map(Some)
                .map_err(|e| CliError::Data(format!("{}: corrupt manifest: {e}", path.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io_err(&path, e)),
        }
    }

    pub fn save(&self, run_dir: &Path) -> CliResult<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        write_atomic(&run_dir.join(MANIFEST_FILE), text.as_bytes())
    }

    pub fn record(&self, stage: Stage) -> Option<&StageRecord> {
        self.stages.get(stage.name())
    }

    /// Which stage produced a run-relative artifact.
    fn producer(&self, artifact: &str) -> Option<(Stage, &StageRecord)> {
        Stage::ALL.into_iter().find_map(|s| {
            self.record(s)
                .filter(|r| r.outputs.contains_key(artifact))
                .map(|r| (s, r))
        })
    }

    /// Ensures `stage`'s artifacts exist on disk with their recorded digests and
    /// that everything it consumed is itself still current, recursively.
    pub fn check_current(&self, run_dir: &Path, stage: Stage) -> CliResult<()> {
        let rerun = |why: String| {
            CliError::Data(format!(
                "stage `{}` is stale: {why}; re-run `skillscope {}`",
                stage.name(),
                stage.name()
            ))
        };
        let record = self.record(stage).ok_or_else(|| {
            CliError::Data(format!(
                "stage `{}` has not been run in {}; run `skillscope {}` first",
                stage.name(),
                run_dir.display(),
                stage.name()
            ))
        })?;
        for (rel, digest) in &record.outputs {
            let path = run_dir.join(rel);
            let bytes = fs::read(&path).map_err(|_| rerun(format!("{rel} is missing")))?;
            if &sha256_hex(&bytes) != digest {
                return Err(rerun(format!("{rel} changed since it was written")));
            }
        }
        for (rel, digest) in &record.inputs {
            if Path::new(rel).is_absolute() {
                continue;
            }
            let (producer, prod_record) = self
                .producer(rel)
                .ok_or_else(|| rerun(format!("no stage records its input {rel}")))?;
            self.check_current(run_dir, producer)?;
            if prod_record.outputs.get(rel) != Some(digest) {
                return Err(rerun(format!(
                    "its input {rel} was regenerated by `{}`",
                    producer.name()
                )));
            }
        }
        Ok(())
    }

    pub fn require_upstream(&self, run_dir: &Path, stage: Stage) -> CliResult<()> {
        for &up in stage.upstream() {
            self.check_current(run_dir, up).map_err(|e| match e {
                CliError::Data(m) => CliError::Data(format!("cannot run `{}`: {m}", stage.name())),
                other => other,
            })?;
        }
        Ok(())
    }
}

/// Exclusive ownership of a run directory for one writer; released on drop.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(run_dir: &Path) -> CliResult<Self> {
        fs::create_dir_all(run_dir).map_err(|e| io_err(run_dir, e))?;
        let path = run_dir.join(LOCK_FILE);
        let mut f = OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| {
                if e.kind() == std::io::ErrorKind::AlreadyExists {
                    CliError::Data(format!(
                        "{} is in use by another run (delete {} if that run has died)",
                        run_dir.display(),
                        path.display()
                    ))
                } else {
                    io_err(&path, e)
                }
            })?;
        let _ = writeln!(f, "{}", std::process::id());
        Ok(RunLock { path })
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(inputs: &[(&str, &str)], outputs: &[(&str, &str)]) -> StageRecord {
        let map = |xs: &[(&str, &str)]| xs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect();
        StageRecord {
            completed_unix_ms: 1,
            config_hash: String::new(),
            params: serde_json::Value::Null,
            inputs: map(inputs),
            outputs: map(outputs),
        }
    }

    #[test]
    fn staleness_is_transitive() {
        let dir = tempfile::tempdir().unwrap();
        let run = dir.path();
        write_atomic(&run.join("ingest/a.txt"), b"a").unwrap();
        write_atomic(&run.join("preprocess/b.txt"), b"b").unwrap();
        let mut m = RunManifest::new(1);
        m.stages
            .insert("ingest".into(), record(&[], &[("ingest/a.txt", &sha256_hex(b"a"))]));
        m.stages.insert(
            "preprocess".into(),
            record(
                &[("ingest/a.txt", &sha256_hex(b"a"))],
                &[("preprocess/b.txt", &sha256_hex(b"b"))],
            ),
        );
        m.require_upstream(run, Stage::Fit).unwrap();
        assert!(m.require_upstream(run, Stage::Topics).is_err());

        // ingest re-run with different output: preprocess is now stale
        write_atomic(&run.join("ingest/a.txt"), b"a2").unwrap();
        m.stages
            .get_mut("ingest")
            .unwrap()
            .outputs
            .insert("ingest/a.txt".into(), sha256_hex(b"a2"));
        let err = m.require_upstream(run, Stage::Fit).unwrap_err().to_string();
        assert!(err.contains("re-run `skillscope preprocess`"), "{err}");
    }

    #[test]
    fn lock_is_exclusive() {
        let dir = tempfile::tempdir().unwrap();
        let lock = RunLock::acquire(dir.path()).unwrap();
        assert!(RunLock::acquire(dir.path()).is_err());
        drop(lock);
        RunLock::acquire(dir.path()).unwrap();
    }
}
