use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::Value;

use crate::resolve::Source;
use crate::Failure;

pub const MANIFEST_FORMAT: &str = "scorelab-manifest-v1";

#[derive(Serialize)]
pub struct Manifest {
    pub format: &'static str,
    pub subcommand: &'static str,
    pub version: &'static str,
    pub seed: Option<u64>,
    pub started_unix_secs: u64,
    pub wall_clock_secs: f64,
    /// Fully resolved configuration; feeding it back through `--config` repeats the run.
    pub config: Value,
    pub provenance: BTreeMap<String, Source>,
    pub outputs: Vec<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub summary: Option<Value>,
}

pub struct Run {
    subcommand: &'static str,
    start: Instant,
    started_unix_secs: u64,
    pub outputs: Vec<PathBuf>,
}

impl Run {
    pub fn start(subcommand: &'static str) -> Self {
        let started_unix_secs = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        Self { subcommand, start: Instant::now(), started_unix_secs, outputs: Vec::new() }
    }

    pub fn output(&mut self, path: PathBuf) -> PathBuf {
        self.outputs.push(path.clone());
        path
    }

    pub fn write(
        self,
        dir: &Path,
        seed: Option<u64>,
        config: Value,
        provenance: BTreeMap<String, Source>,
        summary: Option<Value>,
    ) -> Result<PathBuf, Failure> {
        let m = Manifest {
            format: MANIFEST_FORMAT,
            subcommand: self.subcommand,
            version: env!("CARGO_PKG_VERSION"),
            seed,
            started_unix_secs: self.started_unix_secs,
            wall_clock_secs: self.start.elapsed().as_secs_f64(),
            config,
            provenance,
            outputs: self.outputs,
            summary,
        };
        std::fs::create_dir_all(dir)?;
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&m).map_err(|e| Failure::Lib(e.into()))?;
        std::fs::write(&path, text + "\n")?;
        Ok(path)
    }
}

/// A manifest passed as `--config` contributes its resolved configuration.
pub fn unwrap_config(v: Value) -> Value {
    match v {
        Value::Object(mut m) if m.get("format").and_then(Value::as_str) == Some(MANIFEST_FORMAT) => {
            m.remove("config").unwrap_or(Value::Null)
        }
        v => v,
    }
}
