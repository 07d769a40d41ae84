use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::raster::write_bytes;

pub const MANIFEST_FORMAT: &str = "smallgeo-manifest";
pub const HASH_ALGORITHM: &str = "sha256";
pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: PathBuf,
    pub bytes: u64,
    pub sha256: String,
}

impl FileHash {
    pub fn of(path: &Path) -> Result<FileHash> {
        let mut f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut h = Sha256::new();
        let mut buf = vec![0u8; 1 << 16];
        let mut bytes = 0u64;
        loop {
            let n = f.read(&mut buf).map_err(|e| Error::io(path, e))?;
            if n == 0 {
                break;
            }
            h.update(&buf[..n]);
            bytes += n as u64;
        }
        Ok(FileHash {
            path: path.to_path_buf(),
            bytes,
            sha256: hex(&h.finalize()),
        })
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Record of one command: the resolved configuration, seeds, hashes of
/// every input and output file, and wall-clock time per stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub tool_version: String,
    pub command: String,
    pub hash_algorithm: String,
    pub config: PipelineConfig,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<FileHash>,
    /// Paths relative to the output directory.
    pub artifacts: Vec<FileHash>,
    pub timings_ms: Vec<(String, f64)>,
}

impl Manifest {
    pub fn new(command: &str, config: &PipelineConfig) -> Self {
        Manifest {
            format: MANIFEST_FORMAT.into(),
            version: 1,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            hash_algorithm: HASH_ALGORITHM.into(),
            config: config.clone(),
            seeds: config.seeds(),
            inputs: Vec::new(),
            artifacts: Vec::new(),
            timings_ms: Vec::new(),
        }
    }

    pub fn artifact_names(&self) -> Vec<String> {
        self.artifacts.iter().map(|a| a.path.display().to_string()).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(MANIFEST_NAME);
        write_bytes(&path, self.to_json().as_bytes())?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Manifest> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Manifest> {
        let m: Manifest = serde_json::from_str(text).map_err(|e| Error::Config(format!("manifest: {e}")))?;
        if m.format != MANIFEST_FORMAT || m.hash_algorithm != HASH_ALGORITHM {
            return Err(Error::Config(format!(
                "not a {MANIFEST_FORMAT} with {HASH_ALGORITHM} hashes"
            )));
        }
        Ok(m)
    }

    /// Fails when any recorded input no longer hashes to its recorded value.
    pub fn verify_inputs(&self) -> Result<()> {
        for rec in &self.inputs {
            let now = FileHash::of(&rec.path)?;
            if now.sha256 != rec.sha256 {
                return Err(Error::Validation(format!(
                    "input {} changed since the manifest was written",
                    rec.path.display()
                )));
            }
        }
        Ok(())
    }
}

/// Loads a run configuration from either a TOML config or a manifest. A
/// manifest yields its recorded configuration after its inputs are checked.
pub fn load_config(path: &Path) -> Result<PipelineConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if text.trim_start().starts_with('{') {
        let m = Manifest::parse(&text)?;
        m.verify_inputs()?;
        return Ok(m.config);
    }
    PipelineConfig::load(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_of_known_input() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("abc");
        fs::write(&p, b"abc").unwrap();
        assert_eq!(
            FileHash::of(&p).unwrap().sha256,
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn manifest_round_trip_and_tamper_check() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.txt");
        fs::write(&input, b"one").unwrap();
        let mut m = Manifest::new("run", &PipelineConfig::default());
        m.inputs.push(FileHash::of(&input).unwrap());
        let path = m.write(dir.path()).unwrap();
        assert_eq!(Manifest::read(&path).unwrap(), m);
        assert_eq!(load_config(&path).unwrap(), m.config);
        fs::write(&input, b"two").unwrap();
        assert!(matches!(load_config(&path), Err(Error::Validation(_))));
    }
}
