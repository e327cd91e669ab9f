//! Content-addressed run directories with an append-only manifest.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::config::RunSpec;
use crate::error::CliError;

pub const MANIFEST: &str = "manifest.jsonl";
pub const RUN_RECORD: &str = "run.json";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

impl Artifact {
    pub fn new(name: &str, bytes: impl Into<Vec<u8>>) -> Self {
        Self { name: name.into(), bytes: bytes.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    AssertionFailed,
    SolverFailed,
}

impl RunStatus {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Ok => 0,
            Self::AssertionFailed => 1,
            Self::SolverFailed => 3,
        }
    }
}

/// Contents of `run.json`: everything needed to regenerate the artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub hash: String,
    pub config: RunSpec,
    pub artifacts: Vec<String>,
    pub status: RunStatus,
    pub failures: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub hash: String,
    pub command: String,
    pub config: RunSpec,
    pub started: f64,
    pub finished: f64,
    pub artifacts: Vec<String>,
    pub status: RunStatus,
    pub cache_hit: bool,
}

pub struct ResultStore {
    root: PathBuf,
    manifest: Mutex<()>,
}

pub fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

impl ResultStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, CliError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(CliError::io(&root))?;
        Ok(Self { root, manifest: Mutex::new(()) })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn run_dir(&self, hash: &str) -> PathBuf {
        self.root.join(hash)
    }

    /// The stored record if every artifact it lists is present.
    pub fn lookup(&self, spec: &RunSpec) -> Option<RunRecord> {
        let dir = self.run_dir(&spec.hash());
        let text = fs::read_to_string(dir.join(RUN_RECORD)).ok()?;
        let record: RunRecord = serde_json::from_str(&text).ok()?;
        if serde_json::to_value(&record.config).ok()? != serde_json::to_value(spec).ok()? || !record.artifacts.iter().all(|a| dir.join(a).is_file()) {
            return None;
        }
        Some(record)
    }

    /// Writes the artifacts into a fresh directory and moves it into place.
    pub fn commit(&self, spec: &RunSpec, artifacts: &[Artifact], status: RunStatus, failures: usize) -> Result<RunRecord, CliError> {
        let hash = spec.hash();
        let record = RunRecord {
            hash: hash.clone(),
            config: spec.clone(),
            artifacts: artifacts.iter().map(|a| a.name.clone()).collect(),
            status,
            failures,
        };
        let nonce = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_nanos()).unwrap_or(0);
        let tmp = self.root.join(format!(".{hash}.{}.{nonce}", std::process::id()));
        fs::create_dir_all(&tmp).map_err(CliError::io(&tmp))?;
        for a in artifacts {
            let p = tmp.join(&a.name);
            fs::write(&p, &a.bytes).map_err(CliError::io(&p))?;
        }
        let body = serde_json::to_string_pretty(&record).expect("records serialize");
        fs::write(tmp.join(RUN_RECORD), body).map_err(CliError::io(&tmp))?;
        let dir = self.run_dir(&hash);
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(CliError::io(&dir))?;
        }
        if fs::rename(&tmp, &dir).is_err() {
            // Another worker committed the same run first; its artifacts are identical.
            let _ = fs::remove_dir_all(&tmp);
        }
        Ok(record)
    }

    pub fn read_artifact(&self, hash: &str, name: &str) -> Result<Vec<u8>, CliError> {
        let p = self.run_dir(hash).join(name);
        fs::read(&p).map_err(CliError::io(&p))
    }

    pub fn append(&self, entry: &ManifestEntry) -> Result<(), CliError> {
        let _guard = self.manifest.lock().unwrap_or_else(|e| e.into_inner());
        let path = self.root.join(MANIFEST);
        let mut f = OpenOptions::new().create(true).append(true).open(&path).map_err(CliError::io(&path))?;
        let line = serde_json::to_string(entry).expect("manifest entries serialize");
        writeln!(f, "{line}").map_err(CliError::io(&path))
    }

    pub fn manifest(&self) -> Result<Vec<ManifestEntry>, CliError> {
        let path = self.root.join(MANIFEST);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(CliError::io(&path)(e)),
        };
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| CliError::Config(format!("{}: {e}", path.display()))))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{Command, RunConfig};

    fn spec() -> RunSpec {
        RunConfig::from_toml("[cell]\nb = 0.5\nr = 6").unwrap().resolve(Command::Cell).unwrap()
    }

    #[test]
    fn commit_then_lookup() {
        let dir = tempfile::tempdir().unwrap();
        let store = ResultStore::open(dir.path()).unwrap();
        let s = spec();
        assert!(store.lookup(&s).is_none());
        let arts = [Artifact::new("a.csv", "x\n1\n")];
        store.commit(&s, &arts, RunStatus::Ok, 0).unwrap();
        let rec = store.lookup(&s).unwrap();
        assert_eq!(rec.artifacts, vec!["a.csv".to_string()]);
        assert_eq!(store.read_artifact(&rec.hash, "a.csv").unwrap(), b"x\n1\n");
        fs::remove_file(store.run_dir(&rec.hash).join("a.csv")).unwrap();
        assert!(store.lookup(&s).is_none());
    }

    #[test]
    fn manifest_only_grows() {
        let dir = tempfile::tempdir().unwrap();
        let store = ResultStore::open(dir.path()).unwrap();
        let s = spec();
        for k in 0..3 {
            store
                .append(&ManifestEntry {
                    hash: s.hash(),
                    command: "cell".into(),
                    config: s.clone(),
                    started: k as f64,
                    finished: k as f64 + 1.0,
                    artifacts: vec![],
                    status: RunStatus::Ok,
                    cache_hit: k > 0,
                })
                .unwrap();
        }
        let m = store.manifest().unwrap();
        assert_eq!(m.len(), 3);
        assert!(!m[0].cache_hit && m[2].cache_hit);
    }
}
