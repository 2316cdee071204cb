use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::jobs::Job;
use crate::Failure;

/// Record of one run, written next to its primary output.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub git_describe: String,
    pub threads: usize,
    pub deterministic: bool,
    pub started_unix: u64,
    pub wall_clock_secs: f64,
    pub outputs: Vec<PathBuf>,
    pub job: Job,
}

impl Manifest {
    pub fn new(job: Job, threads: usize, deterministic: bool) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            git_describe: env!("PMFCPD_GIT_DESCRIBE").into(),
            threads,
            deterministic,
            started_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            wall_clock_secs: 0.0,
            outputs: job.outputs(),
            job,
        }
    }

    /// `<primary output>.manifest.json`.
    pub fn path_for(job: &Job) -> PathBuf {
        let primary = job.outputs().remove(0);
        let mut name = primary.file_name().unwrap_or_default().to_os_string();
        name.push(".manifest.json");
        primary.with_file_name(name)
    }

    pub fn save(&self, path: &Path) -> Result<(), Failure> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Failure::data(e.to_string()))?;
        std::fs::write(path, text + "\n")
            .map_err(|e| Failure::data(format!("cannot write {}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::data(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Failure::data(format!("{}: {e}", path.display())))
    }
}
