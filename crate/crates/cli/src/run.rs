//! Timestamped run directories and their manifests.

use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn code_version() -> String {
    format!("{} ({})", env!("CARGO_PKG_VERSION"), env!("SLEEPFORMER_COMMIT"))
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let mut f = std::fs::File::open(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub argv: Vec<String>,
    pub code_version: String,
    pub created: String,
    pub seed: Option<u64>,
    pub config: Value,
    pub overrides: Vec<(String, Value)>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

/// A freshly created run directory. Existing directories are never reused.
pub struct Run {
    pub dir: PathBuf,
    pub manifest: Manifest,
}

impl Run {
    pub fn create(runs_dir: &Path, command: &str) -> Result<Self, CliError> {
        std::fs::create_dir_all(runs_dir)?;
        let now = chrono::Utc::now();
        let stamp = now.format("%Y%m%dT%H%M%S%.3fZ").to_string();
        let mut n = 0;
        let dir = loop {
            let name = if n == 0 { format!("{stamp}-{command}") } else { format!("{stamp}-{command}-{n}") };
            let dir = runs_dir.join(name);
            match std::fs::create_dir(&dir) {
                Ok(()) => break dir,
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => n += 1,
                Err(e) => return Err(e.into()),
            }
        };
        let manifest = Manifest {
            command: command.into(),
            argv: std::env::args().collect(),
            code_version: code_version(),
            created: now.to_rfc3339(),
            seed: None,
            config: Value::Null,
            overrides: vec![],
            inputs: vec![],
            outputs: vec![],
        };
        let run = Self { dir, manifest };
        run.save()?;
        Ok(run)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn input(&mut self, path: &Path) -> Result<(), CliError> {
        let sha256 = sha256_file(path)?;
        self.manifest.inputs.push(FileDigest { path: path.display().to_string(), sha256 });
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<(), CliError> {
        let sha256 = sha256_file(path)?;
        self.manifest.outputs.push(FileDigest { path: path.display().to_string(), sha256 });
        Ok(())
    }

    pub fn save(&self) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(&self.manifest)?;
        std::fs::write(self.path(MANIFEST_FILE), text + "\n")?;
        Ok(())
    }
}

pub fn read_manifest(path: &Path) -> Result<Manifest, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}
