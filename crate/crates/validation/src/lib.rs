//! Runs the pipeline steps in-process and checks the reference run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use lightfx_cli::commands::{self, EvalReport};
use lightfx_cli::layout::{list_files, RunManifest};
use lightfx_cli::{CliError, Layout, RunConfig};
use lightfx_core::fsutil::{read_json, sha256_file};

#[cfg(test)]
mod probes;

#[cfg(test)]
#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

pub const PIPELINE: [&str; 5] = ["gen-data", "train-decouple", "build-triplets", "train-translight", "evaluate"];

pub fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

/// Runs one pipeline step against `cfg`.
pub fn run_step(cfg: &RunConfig, step: &str) -> Result<(), CliError> {
    match step {
        "gen-data" => commands::gen_data(cfg),
        "train-decouple" => commands::train_decouple(cfg),
        "build-triplets" => commands::build_triplets(cfg),
        "train-translight" => commands::train_translight(cfg),
        "evaluate" => commands::evaluate(cfg).map(|_| ()),
        other => Err(CliError::Config(format!("unknown step {other}"))),
    }
}

/// Loads `config` with `overrides` and runs the whole pipeline.
pub fn run_pipeline(config: &Path, overrides: &[String]) -> Result<RunConfig, String> {
    let cfg = RunConfig::load(config, overrides).map_err(|e| e.to_string())?;
    for step in PIPELINE {
        run_step(&cfg, step).map_err(|e| format!("{step}: {e}"))?;
    }
    Ok(cfg)
}

pub fn out_dir_override(dir: &Path) -> String {
    format!("out_dir={:?}", dir.to_string_lossy())
}

/// SHA-256 of every file under `root` except logs and manifests, keyed by
/// relative path.
pub fn tree_hashes(root: &Path) -> BTreeMap<String, String> {
    list_files(root)
        .unwrap()
        .into_iter()
        .filter_map(|f| {
            let rel = f.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/");
            let skip = rel.starts_with("logs/") || rel.starts_with("manifests/");
            (!skip).then(|| (rel, sha256_file(&f).unwrap()))
        })
        .collect()
}

/// True when the run under `cfg.out_dir` finished, was produced by this
/// version from `cfg`, and every recorded artifact hash still verifies.
pub fn reference_is_current(cfg: &RunConfig) -> bool {
    let layout = Layout::new(&cfg.out_dir);
    if !layout.report().exists() || std::env::var_os("LIGHTFX_FRESH").is_some() {
        return false;
    }
    PIPELINE.iter().all(|step| {
        let Ok(mut m) = read_json::<RunManifest>(&layout.manifest(step)) else { return false };
        m.config.out_dir.clone_from(&cfg.out_dir);
        m.config == *cfg
            && m.tool_version == env!("CARGO_PKG_VERSION")
            && m.artifacts.iter().all(|(rel, hash)| sha256_file(&layout.root.join(rel)).is_ok_and(|h| &h == hash))
    })
}

/// The reference run, reused when current and regenerated otherwise.
pub fn reference() -> Result<(RunConfig, EvalReport), String> {
    let path = config_path("reference.toml");
    let cfg = RunConfig::load(&path, &[]).map_err(|e| e.to_string())?;
    if reference_is_current(&cfg) {
        println!("reusing the verified reference run in {}", cfg.out_dir.display());
    } else {
        println!("running the reference pipeline into {} (long)", cfg.out_dir.display());
        let start = Instant::now();
        run_pipeline(&path, &[])?;
        println!("reference pipeline took {:.0} s", start.elapsed().as_secs_f64());
    }
    let report = read_json(&Layout::new(&cfg.out_dir).report()).map_err(|e| e.to_string())?;
    Ok((cfg, report))
}
