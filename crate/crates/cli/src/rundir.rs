use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const RUNS_ENV: &str = "MADM_RUNS_DIR";
pub const RECORD_FILE: &str = "run.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CONFIG_FILE: &str = "config.toml";
pub const EVAL_FILE: &str = "eval.json";
pub const CONFUSION_FILE: &str = "confusion.csv";
pub const MODEL_FILE: &str = "model.ckpt";

/// Root for run directories: `$MADM_RUNS_DIR`, else `./runs`.
pub fn runs_root() -> PathBuf {
    std::env::var_os(RUNS_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

/// Creates `<root>/<UTC timestamp>-<command>`, adding a counter when the
/// name is taken.
pub fn create_run_dir(command: &str) -> Result<PathBuf> {
    let root = runs_root();
    fs::create_dir_all(&root).with_context(|| format!("creating {}", root.display()))?;
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S%.3fZ");
    let base = format!("{stamp}-{command}");
    for n in 0.. {
        let name = if n == 0 {
            base.clone()
        } else {
            format!("{base}-{n}")
        };
        let dir = root.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e).with_context(|| format!("creating {}", dir.display())),
        }
    }
    unreachable!()
}

/// Content hash of the running executable.
pub fn code_hash() -> String {
    std::env::current_exe()
        .and_then(fs::read)
        .map(|b| format!("{:x}", Sha256::digest(b)))
        .unwrap_or_else(|_| "unknown".into())
}

/// What a run did and where its artifacts are, relative to the run dir.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: String,
    pub label: String,
    pub code_hash: String,
    pub config: Option<madm::train::TrainConfig>,
    pub data: Option<PathBuf>,
    pub metrics: Option<String>,
    pub final_eval: Option<serde_json::Value>,
    pub artifacts: Vec<String>,
}

impl RunRecord {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.into(),
            label: command.into(),
            code_hash: code_hash(),
            config: None,
            data: None,
            metrics: None,
            final_eval: None,
            artifacts: Vec::new(),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::write(dir.join(RECORD_FILE), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(RECORD_FILE);
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}
