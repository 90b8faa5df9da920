use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const RUNS_FILE: &str = "runs.jsonl";

/// One line of `runs.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: String,
    /// Effective configuration after flag overrides.
    pub config: serde_json::Value,
    pub config_file: Option<PathBuf>,
    /// Text of `config_file` exactly as read.
    pub config_text: Option<String>,
    /// Seconds since the Unix epoch.
    pub started_at: f64,
    pub finished_at: f64,
    pub checkpoint: Option<PathBuf>,
    pub artifacts: Vec<PathBuf>,
    pub metrics: serde_json::Value,
    pub error: Option<String>,
}

pub(crate) fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

impl RunRecord {
    pub fn start(command: &str) -> Self {
        Self {
            command: command.to_string(),
            config: serde_json::Value::Null,
            config_file: None,
            config_text: None,
            started_at: now(),
            finished_at: 0.0,
            checkpoint: None,
            artifacts: Vec::new(),
            metrics: serde_json::Value::Null,
            error: None,
        }
    }

    /// Append as one JSON line to `dir/runs.jsonl`.
    pub fn append(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(RUNS_FILE);
        let mut line = serde_json::to_string(self).map_err(|e| Error::json(&path, e))?;
        line.push('\n');
        let mut f = std::fs::OpenOptions::new().create(true).append(true).open(&path).map_err(|e| Error::io(&path, e))?;
        f.write_all(line.as_bytes()).map_err(|e| Error::io(&path, e))
    }

    pub fn read_all(dir: &Path) -> Result<Vec<Self>> {
        let path = dir.join(RUNS_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| Error::json(&path, e)))
            .collect()
    }
}
