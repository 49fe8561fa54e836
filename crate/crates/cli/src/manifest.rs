use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::error::{output_err, CliResult};

/// Provenance record written as `<output>.manifest.json` beside each CSV.
#[derive(Debug, Serialize)]
pub struct RunManifest<'a, F: Serialize> {
    pub command: &'a str,
    pub argv: Vec<String>,
    pub flags: &'a F,
    pub seeds: Vec<u64>,
    pub library_version: &'static str,
    pub threads: usize,
    pub started_unix: u64,
    pub wall_clock_seconds: f64,
    pub outputs: Vec<PathBuf>,
}

pub struct ManifestClock {
    started_unix: u64,
    start: Instant,
}

impl ManifestClock {
    pub fn start() -> Self {
        Self {
            started_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            start: Instant::now(),
        }
    }

    pub fn write<F: Serialize>(
        &self,
        command: &str,
        flags: &F,
        seeds: Vec<u64>,
        outputs: &[PathBuf],
    ) -> CliResult<()> {
        let manifest = RunManifest {
            command,
            argv: std::env::args().collect(),
            flags,
            seeds,
            library_version: env!("CARGO_PKG_VERSION"),
            threads: rayon::current_num_threads(),
            started_unix: self.started_unix,
            wall_clock_seconds: self.start.elapsed().as_secs_f64(),
            outputs: outputs.to_vec(),
        };
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        for out in outputs
            .iter()
            .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        {
            let path = manifest_path(out);
            std::fs::write(&path, &json).map_err(|e| output_err(&path, e))?;
        }
        Ok(())
    }
}

pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    output.with_file_name(name)
}
