use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use ctgp::config::ExperimentConfig;
use serde::Serialize;

/// Record of one command run: what went in, what came out, how long it took.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: &'static str,
    pub seed: Option<u64>,
    pub config: Option<ExperimentConfig>,
    pub inputs: Vec<String>,
    /// File names relative to the output directory.
    pub outputs: Vec<String>,
    pub timings_s: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn new(command: &str, config: Option<&ExperimentConfig>) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION"),
            seed: config.map(|c| c.sim.seed),
            config: config.cloned(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            timings_s: BTreeMap::new(),
        }
    }

    pub fn input(&mut self, p: &Path) {
        self.inputs.push(p.display().to_string());
    }

    pub fn output(&mut self, name: &str) {
        self.outputs.push(name.to_string());
    }

    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.timings_s.insert(stage.to_string(), start.elapsed().as_secs_f64());
        out
    }

    pub fn write(mut self, dir: &Path) -> ctgp::Result<()> {
        self.outputs.push("manifest.json".into());
        let text = serde_json::to_string_pretty(&self).expect("manifest serializes");
        std::fs::write(dir.join("manifest.json"), text + "\n")?;
        Ok(())
    }
}
