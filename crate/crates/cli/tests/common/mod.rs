#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const PIPELINE: [&str; 5] = ["gen-data", "train-decouple", "build-triplets", "train-translight", "evaluate"];

pub fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn config_path(name: &str) -> PathBuf {
    repo_root().join("configs").join(name)
}

pub fn lightfx(config: &Path, args: &[&str], overrides: &[String]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_lightfx"));
    cmd.arg("--config").arg(config);
    for o in overrides {
        cmd.arg("--set").arg(o);
    }
    cmd.args(args).output().expect("running lightfx")
}

pub fn out_dir_override(dir: &Path) -> String {
    format!("out_dir={:?}", dir.to_string_lossy())
}

/// Runs the given subcommands in order, panicking with stderr on failure.
pub fn run_steps(config: &Path, steps: &[&str], overrides: &[String]) {
    for step in steps {
        let out = lightfx(config, &[step], overrides);
        assert!(
            out.status.success(),
            "`lightfx {step}` exited with {:?}\n{}",
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        );
    }
}

/// SHA-256 of every file under `root` except logs and manifests, keyed by
/// relative path.
pub fn tree_hashes(root: &Path) -> BTreeMap<String, String> {
    lightfx_cli::layout::list_files(root)
        .unwrap()
        .into_iter()
        .filter_map(|f| {
            let rel = f.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/");
            let skip = rel.starts_with("logs/") || rel.starts_with("manifests/");
            (!skip).then(|| (rel, lightfx_core::fsutil::sha256_file(&f).unwrap()))
        })
        .collect()
}
