//! Output directory layout, the writer lock and run manifests.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use lightfx_core::fsutil::{sha256_file, write_json};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        Self { root: root.to_path_buf() }
    }

    pub fn corpus(&self) -> PathBuf {
        self.root.join("corpus")
    }

    pub fn decouple(&self) -> PathBuf {
        self.root.join("decouple")
    }

    pub fn removal_ckpt(&self) -> PathBuf {
        self.decouple().join("removal.ckpt")
    }

    pub fn extraction_ckpt(&self) -> PathBuf {
        self.decouple().join("extraction.ckpt")
    }

    pub fn embedder_dir(&self) -> PathBuf {
        self.root.join("embedder")
    }

    pub fn embedder_ckpt(&self) -> PathBuf {
        self.embedder_dir().join("embedder.ckpt")
    }

    pub fn triplets(&self) -> PathBuf {
        self.root.join("triplets")
    }

    pub fn sources_file(&self) -> PathBuf {
        self.triplets().join("sources.jsonl")
    }

    pub fn translight(&self) -> PathBuf {
        self.root.join("translight")
    }

    pub fn full_bundle(&self) -> PathBuf {
        self.translight().join("full")
    }

    pub fn ablation_bundle(&self) -> PathBuf {
        self.translight().join("no_adapter")
    }

    pub fn eval(&self) -> PathBuf {
        self.root.join("eval")
    }

    pub fn report(&self) -> PathBuf {
        self.eval().join("report.json")
    }

    pub fn logs(&self) -> PathBuf {
        self.root.join("logs")
    }

    pub fn log(&self, name: &str) -> PathBuf {
        self.logs().join(format!("{name}.jsonl"))
    }

    pub fn manifest(&self, command: &str) -> PathBuf {
        self.root.join("manifests").join(format!("{command}.json"))
    }

    /// Fails with a "missing prerequisite" error naming `what` and the
    /// command that produces it.
    pub fn require(&self, path: &Path, what: &str, producer: &str) -> Result<(), CliError> {
        if path.exists() {
            Ok(())
        } else {
            Err(CliError::Missing(format!("{what} not found at {} (run `lightfx {producer}` first)", path.display())))
        }
    }
}

/// Exclusive writer lock on an output directory, released on drop.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

pub const LOCK_FILE: &str = ".lightfx.lock";

impl RunLock {
    pub fn acquire(root: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(root).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", root.display())))?;
        let path = root.join(LOCK_FILE);
        let mut f = OpenOptions::new().write(true).create_new(true).open(&path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::AlreadyExists {
                CliError::Runtime(format!("{} is locked by another run; remove {} if that run is dead", root.display(), path.display()))
            } else {
                CliError::Runtime(format!("cannot create {}: {e}", path.display()))
            }
        })?;
        let _ = writeln!(f, "{}", std::process::id());
        Ok(Self { path })
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

/// Config snapshot, seeds and output hashes of one subcommand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub config: RunConfig,
    pub seeds: BTreeMap<String, u64>,
    /// Paths relative to the output root.
    pub artifacts: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Self {
            command: command.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            config: config.clone(),
            seeds: BTreeMap::new(),
            artifacts: BTreeMap::new(),
        }
    }

    /// Records the hash of every file under `path` (a file or directory).
    pub fn hash_tree(&mut self, root: &Path, path: &Path) -> Result<(), CliError> {
        for f in list_files(path)? {
            let rel = f.strip_prefix(root).unwrap_or(&f).to_string_lossy().replace('\\', "/");
            self.artifacts.insert(rel, sha256_file(&f)?);
        }
        Ok(())
    }

    pub fn write(&self, layout: &Layout) -> Result<(), CliError> {
        let p = layout.manifest(&self.command);
        std::fs::create_dir_all(p.parent().expect("manifest path has a parent"))
            .map_err(|e| CliError::Runtime(format!("cannot create manifest dir: {e}")))?;
        write_json(&p, self)?;
        Ok(())
    }
}

/// Files under `path`, sorted, recursing into directories.
pub fn list_files(path: &Path) -> Result<Vec<PathBuf>, CliError> {
    let io = |e: std::io::Error| CliError::Runtime(format!("{}: {e}", path.display()));
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut out = Vec::new();
    let mut entries: Vec<PathBuf> = std::fs::read_dir(path).map_err(io)?.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>().map_err(io)?;
    entries.sort();
    for e in entries {
        if e.is_dir() {
            out.extend(list_files(&e)?);
        } else {
            out.push(e);
        }
    }
    Ok(out)
}
