//! Where a command writes its files.
//!
//! `--out DIR` names the run directory outright. Otherwise the run goes to
//! `<root>/<command>-<YYYYmmdd-HHMMSS>`, where `<root>` is `output.dir` from
//! the config, else `$SLIME_OUTPUT_ROOT`, else `runs`. A numeric suffix is
//! appended if that directory already exists.

use std::path::{Path, PathBuf};

pub const OUTPUT_ROOT_ENV: &str = "SLIME_OUTPUT_ROOT";
const DEFAULT_ROOT: &str = "runs";

pub fn output_root(config_dir: Option<&str>) -> PathBuf {
    match config_dir {
        Some(dir) => PathBuf::from(dir),
        None => std::env::var_os(OUTPUT_ROOT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from(DEFAULT_ROOT)),
    }
}

/// Creates and returns the run directory.
pub fn prepare(explicit: Option<&Path>, config_dir: Option<&str>, command: &str) -> std::io::Result<PathBuf> {
    let dir = match explicit {
        Some(dir) => dir.to_path_buf(),
        None => {
            let root = output_root(config_dir);
            let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
            let base = root.join(format!("{command}-{stamp}"));
            let mut dir = base.clone();
            let mut n = 1;
            while dir.exists() {
                dir = PathBuf::from(format!("{}-{n}", base.display()));
                n += 1;
            }
            dir
        }
    };
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}
