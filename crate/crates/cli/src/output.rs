use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

/// Writes `bytes` to a temp file beside `path`, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let io = |e: std::io::Error| CliError::data(format!("cannot write {}: {e}", path.display()));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_vec_pretty(value).map_err(|e| CliError::data(e.to_string()))?;
    text.push(b'\n');
    write_atomic(path, &text)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Serialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

/// One per command invocation.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub schema: &'static str,
    pub version: u32,
    pub command: String,
    pub config: Value,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<PathBuf>,
    pub wall_time_s: f64,
    pub tool_version: &'static str,
    pub threads: usize,
}

pub struct Run {
    command: String,
    started: Instant,
    config: Value,
    inputs: Vec<InputDigest>,
    outputs: Vec<PathBuf>,
}

impl Run {
    pub fn start(command: &str) -> Self {
        Self {
            command: command.to_string(),
            started: Instant::now(),
            config: Value::Null,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn config(&mut self, config: &impl Serialize) {
        self.config = serde_json::to_value(config).unwrap_or(Value::Null);
    }

    /// Reads an input file and records its digest.
    pub fn read(&mut self, path: &Path) -> Result<Vec<u8>, CliError> {
        let bytes = std::fs::read(path).map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
        self.inputs.push(InputDigest { path: path.to_path_buf(), sha256: sha256_hex(&bytes) });
        Ok(bytes)
    }

    pub fn wrote(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    /// Writes the manifest to `explicit` or `<primary>.manifest.json`.
    pub fn finish(self, primary: &Path, explicit: Option<&Path>) -> Result<(), CliError> {
        let path = explicit.map(Path::to_path_buf).unwrap_or_else(|| {
            let mut name = primary.as_os_str().to_owned();
            name.push(".manifest.json");
            PathBuf::from(name)
        });
        let manifest = RunManifest {
            schema: "dope.run-manifest",
            version: SCHEMA_VERSION,
            command: self.command,
            config: self.config,
            inputs: self.inputs,
            outputs: self.outputs,
            wall_time_s: self.started.elapsed().as_secs_f64(),
            tool_version: env!("CARGO_PKG_VERSION"),
            threads: rayon::current_num_threads(),
        };
        write_json(&path, &manifest)
    }
}
