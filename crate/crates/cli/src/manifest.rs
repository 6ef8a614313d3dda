//! Run manifests written beside every output file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::Value;

use crate::error::CliResult;
use crate::formats::write_json;

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: Option<u64>,
    pub threads: usize,
    pub config: Value,
    /// Wall-clock seconds per phase, in the order the phases ran.
    pub timings: Vec<(String, f64)>,
    pub outputs: Vec<PathBuf>,
    /// Small derived quantities worth keeping next to the data (fitted slopes and the like).
    pub results: BTreeMap<String, Value>,
}

impl RunManifest {
    pub fn new(command: &str, seed: Option<u64>, threads: usize, config: Value) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            threads,
            config,
            timings: Vec::new(),
            outputs: Vec::new(),
            results: BTreeMap::new(),
        }
    }

    /// Runs `f` and records how long it took under `phase`.
    pub fn time<T>(&mut self, phase: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.timings
            .push((phase.to_string(), start.elapsed().as_secs_f64()));
        out
    }

    pub fn record(&mut self, key: &str, value: impl Into<Value>) {
        self.results.insert(key.to_string(), value.into());
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    /// `<output>.manifest.json`
    pub fn path_for(output: &Path) -> PathBuf {
        let mut name = output.as_os_str().to_os_string();
        name.push(".manifest.json");
        PathBuf::from(name)
    }

    /// Writes one copy beside every recorded output, or to stderr when there is none.
    pub fn finish(&self) -> CliResult<()> {
        if self.outputs.is_empty() {
            eprintln!(
                "{}",
                serde_json::to_string(self).expect("manifest serializes")
            );
            return Ok(());
        }
        for out in &self.outputs {
            write_json(&Self::path_for(out), self)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_sits_beside_output() {
        assert_eq!(
            RunManifest::path_for(Path::new("out/metrics.csv")),
            PathBuf::from("out/metrics.csv.manifest.json")
        );
        let mut m = RunManifest::new("x", Some(3), 1, Value::Null);
        let v = m.time("phase", || 7);
        assert_eq!(v, 7);
        assert_eq!(m.timings[0].0, "phase");
    }
}
