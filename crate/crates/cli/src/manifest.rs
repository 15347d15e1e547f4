//! Run manifests: what was invoked, with which resolved configuration and inputs, and the
//! digest of every file it wrote.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use dlsm::{DlsmError, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub commands: Vec<CommandRecord>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CommandRecord {
    pub command: String,
    /// Full argument vector; replaying it reproduces the outputs.
    pub argv: Vec<String>,
    pub outdir: PathBuf,
    pub config_path: Option<PathBuf>,
    /// Resolved configuration, every key.
    pub config: BTreeMap<String, String>,
    pub config_hash: Option<String>,
    /// Input path → SHA-256.
    pub inputs: BTreeMap<String, String>,
    pub seeds: Vec<u64>,
    /// Output path relative to `outdir` → SHA-256.
    pub outputs: BTreeMap<String, String>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

pub fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| DlsmError::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

impl CommandRecord {
    pub fn new(command: &str, argv: &[String], outdir: &Path) -> Self {
        CommandRecord {
            command: command.into(),
            argv: argv.to_vec(),
            outdir: outdir.to_path_buf(),
            started_unix: now_unix(),
            ..Default::default()
        }
    }

    pub fn config(&mut self, path: Option<&Path>, cfg: &dlsm::config::ModelConfig) {
        self.config_path = path.map(Path::to_path_buf);
        self.config = dlsm::config::KEYS.iter().map(|k| (k.to_string(), cfg.get(k).unwrap())).collect();
        self.config_hash = Some(cfg.hash());
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    /// Records an output written under `outdir`.
    pub fn output(&mut self, relative: &str) -> Result<()> {
        let digest = sha256_file(&self.outdir.join(relative))?;
        self.outputs.insert(relative.to_string(), digest);
        Ok(())
    }
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| DlsmError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Loads the manifest in `dir`, or starts an empty one.
    pub fn load_or_new(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        if path.exists() {
            Manifest::load(&path)
        } else {
            Ok(Manifest { tool_version: env!("CARGO_PKG_VERSION").into(), commands: vec![] })
        }
    }

    /// Appends `record` (stamping its finish time) and writes `dir/manifest.json`.
    pub fn record(dir: &Path, record: CommandRecord) -> Result<()> {
        let m = Manifest::load_or_new(dir)?;
        m.push_and_write(dir, record)
    }

    /// Replaces any manifest in `dir` with one holding only `record`.
    pub fn start(dir: &Path, record: CommandRecord) -> Result<()> {
        let m = Manifest { tool_version: env!("CARGO_PKG_VERSION").into(), commands: vec![] };
        m.push_and_write(dir, record)
    }

    fn push_and_write(mut self, dir: &Path, mut record: CommandRecord) -> Result<()> {
        record.finished_unix = now_unix();
        self.commands.push(record);
        let path = dir.join(MANIFEST);
        fs::write(&path, serde_json::to_string_pretty(&self)?).map_err(|e| DlsmError::io(&path, e))
    }
}
