//! CSV formatting, atomic file writes and the run manifest.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{CommandConfig, SCHEMA_VERSION};
use crate::CliError;

/// One output file, relative to the output directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifact {
    pub path: PathBuf,
    pub contents: Vec<u8>,
}

impl Artifact {
    pub fn new(path: impl Into<PathBuf>, contents: impl Into<Vec<u8>>) -> Self {
        Artifact {
            path: path.into(),
            contents: contents.into(),
        }
    }

    pub fn json<T: Serialize>(path: impl Into<PathBuf>, value: &T) -> Self {
        let mut s = serde_json::to_string_pretty(value).expect("output types serialize");
        s.push('\n');
        Artifact::new(path, s)
    }
}

/// A CSV cell: floats are written with 17 significant digits.
pub enum Cell {
    F(f64),
    U(u64),
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::F(v)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::U(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::U(v as u64)
    }
}

pub struct Csv {
    text: String,
    width: usize,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        Csv {
            text: format!("{}\n", header.join(",")),
            width: header.len(),
        }
    }

    pub fn row(&mut self, cells: impl IntoIterator<Item = Cell>) {
        let mut n = 0;
        for (i, c) in cells.into_iter().enumerate() {
            if i > 0 {
                self.text.push(',');
            }
            match c {
                Cell::F(v) => write!(self.text, "{v:.16e}"),
                Cell::U(v) => write!(self.text, "{v}"),
            }
            .expect("writing to a String");
            n += 1;
        }
        assert_eq!(n, self.width, "CSV row width mismatch");
        self.text.push('\n');
    }

    pub fn into_string(self) -> String {
        self.text
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| CliError::Io(e.error))?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct FileEntry {
    path: String,
    sha256: String,
    bytes: usize,
}

#[derive(Debug, Serialize)]
struct RunManifest {
    tool: &'static str,
    version: &'static str,
    schema_version: u32,
    command: &'static str,
    config_sha256: String,
    seed: Option<u64>,
    started_unix_ms: u128,
    finished_unix_ms: u128,
    inputs: Vec<FileEntry>,
    outputs: Vec<FileEntry>,
}

pub fn unix_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

/// Writes the resolved config, every artifact and finally `manifest.json`,
/// each through a temporary file renamed into place.
pub fn persist(
    out_dir: &Path,
    config: &CommandConfig,
    artifacts: &[Artifact],
    started_unix_ms: u128,
) -> Result<(), CliError> {
    let config_json = config.to_json();
    let mut outputs = Vec::with_capacity(artifacts.len() + 1);
    let all = std::iter::once(Artifact::new("config.json", config_json.clone())).chain(artifacts.iter().cloned());
    for a in all {
        write_atomic(&out_dir.join(&a.path), &a.contents)?;
        outputs.push(FileEntry {
            path: a.path.to_string_lossy().replace('\\', "/"),
            sha256: sha256_hex(&a.contents),
            bytes: a.contents.len(),
        });
    }
    let inputs = config
        .input_files()
        .into_iter()
        .map(|p| {
            let bytes = std::fs::read(&p)?;
            Ok(FileEntry {
                path: p.to_string_lossy().into_owned(),
                sha256: sha256_hex(&bytes),
                bytes: bytes.len(),
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let manifest = RunManifest {
        tool: "qtomo",
        version: env!("CARGO_PKG_VERSION"),
        schema_version: SCHEMA_VERSION,
        command: config.name(),
        config_sha256: sha256_hex(config_json.as_bytes()),
        seed: config.seed(),
        started_unix_ms,
        finished_unix_ms: unix_ms(),
        inputs,
        outputs,
    };
    let m = Artifact::json("manifest.json", &manifest);
    write_atomic(&out_dir.join(m.path), &m.contents)
}
