//! Error categories, run manifests and small file helpers shared by the
//! subcommands.

use std::fmt;
use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

/// A failed run, sorted into the category that decides the exit code.
#[derive(Debug)]
pub enum Failure {
    Io(String),
    /// Malformed input files, domain violations, numeric trouble, divergence.
    Validation(String),
    Argument(String),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Io(_) => 1,
            Failure::Validation(_) => 2,
            Failure::Argument(_) => 3,
        }
    }

    pub fn category(&self) -> &'static str {
        match self {
            Failure::Io(_) => "io",
            Failure::Validation(_) => "validation",
            Failure::Argument(_) => "argument",
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Io(m) | Failure::Validation(m) | Failure::Argument(m) => m,
        }
    }

    pub fn arg(msg: impl Into<String>) -> Self {
        Failure::Argument(msg.into())
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Failure::Validation(msg.into())
    }
}

/// `error[<category>] <message>` on one line.
impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let msg = self.message().replace(['\n', '\r'], " ");
        write!(f, "error[{}] {}", self.category(), msg)
    }
}

impl From<temi::Error> for Failure {
    fn from(err: temi::Error) -> Self {
        let msg = err.to_string();
        match err {
            temi::Error::Io(_) => Failure::Io(msg),
            temi::Error::Argument(_) => Failure::Argument(msg),
            temi::Error::Format(_) | temi::Error::Validation(_) | temi::Error::Numeric(_) | temi::Error::Divergence { .. } => {
                Failure::Validation(msg)
            }
        }
    }
}

impl From<io::Error> for Failure {
    fn from(err: io::Error) -> Self {
        Failure::Io(err.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(err: serde_json::Error) -> Self {
        if err.is_io() {
            Failure::Io(err.to_string())
        } else {
            Failure::Validation(format!("malformed JSON: {err}"))
        }
    }
}

pub type CliResult<T = ()> = Result<T, Failure>;

/// Opens `path` for reading, naming the file in the error.
pub fn open(path: &Path) -> CliResult<File> {
    File::open(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

pub fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Failure::Io(format!("{}: {e}", dir.display())))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let mut f = open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

#[derive(Debug, Clone, Serialize)]
pub struct Artifact {
    pub role: String,
    pub path: PathBuf,
    pub sha256: String,
}

/// Record of one successful run, written next to its outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub version: &'static str,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub threads: usize,
    pub inputs: Vec<Artifact>,
    pub outputs: Vec<Artifact>,
    pub wall_time_secs: f64,
}

/// Collects inputs and outputs while a subcommand runs.
pub struct Recorder {
    subcommand: &'static str,
    started: Instant,
    seed: Option<u64>,
    config: serde_json::Value,
    inputs: Vec<Artifact>,
    outputs: Vec<Artifact>,
}

impl Recorder {
    pub fn new(subcommand: &'static str) -> Self {
        Self {
            subcommand,
            started: Instant::now(),
            seed: None,
            config: serde_json::Value::Null,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn seed(&mut self, seed: u64) {
        self.seed = Some(seed);
    }

    pub fn config<T: Serialize>(&mut self, config: &T) -> CliResult {
        self.config = serde_json::to_value(config)?;
        Ok(())
    }

    pub fn input(&mut self, role: &str, path: &Path) -> CliResult {
        self.inputs.push(Artifact { role: role.into(), path: path.to_path_buf(), sha256: sha256_file(path)? });
        Ok(())
    }

    pub fn output(&mut self, role: &str, path: &Path) -> CliResult {
        self.outputs.push(Artifact { role: role.into(), path: path.to_path_buf(), sha256: sha256_file(path)? });
        Ok(())
    }

    /// Writes the manifest to `path` and returns it.
    pub fn finish(self, path: &Path) -> CliResult<RunManifest> {
        let manifest = RunManifest {
            subcommand: self.subcommand.into(),
            version: env!("CARGO_PKG_VERSION"),
            config: self.config,
            seed: self.seed,
            threads: rayon::current_num_threads(),
            inputs: self.inputs,
            outputs: self.outputs,
            wall_time_secs: self.started.elapsed().as_secs_f64(),
        };
        write_json(path, &manifest)?;
        Ok(manifest)
    }
}

/// `<path>.manifest.json`
pub fn manifest_beside(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    path.with_file_name(name)
}
