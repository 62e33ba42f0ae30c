use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use serde::Serialize;

#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<PathBuf>,
    pub seed: Option<u64>,
    pub git_describe: String,
    /// Seconds since the Unix epoch.
    pub started: u64,
    pub finished: Option<u64>,
    pub out_dir: PathBuf,
    /// `running`, `ok` or `failed: <message>`.
    pub status: String,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

impl RunManifest {
    /// Creates `out_dir` and writes the manifest with status `running`.
    pub fn start(command: &str, config_path: Option<&Path>, seed: Option<u64>, out_dir: &Path) -> anyhow::Result<Self> {
        std::fs::create_dir_all(out_dir)
            .map_err(|e| exgs::Error::io(out_dir, e))
            .with_context(|| format!("creating output directory {}", out_dir.display()))?;
        let m = RunManifest {
            command: command.into(),
            config_path: config_path.map(Path::to_path_buf),
            seed,
            git_describe: git_describe(),
            started: now(),
            finished: None,
            out_dir: out_dir.to_path_buf(),
            status: "running".into(),
        };
        m.write()?;
        Ok(m)
    }

    fn write(&self) -> anyhow::Result<()> {
        let path = self.out_dir.join("manifest.json");
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text).map_err(|e| exgs::Error::io(&path, e))?;
        Ok(())
    }

    /// Rewrites the manifest with the end status and passes the result through.
    pub fn finish<T>(mut self, result: anyhow::Result<T>) -> anyhow::Result<T> {
        self.finished = Some(now());
        self.status = match &result {
            Ok(_) => "ok".into(),
            Err(e) => format!("failed: {e:#}"),
        };
        self.write()?;
        result
    }
}
