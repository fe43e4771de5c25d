//! Run manifests and plain-text key=value configs.
//!
//! Every pipeline stage writes a manifest next to its outputs recording
//! the command, the fully resolved configuration, seeds, SHA-256 hashes
//! of the input files, and the tool version. Identical manifests (up to
//! the timestamp provenance line) imply byte-identical artifacts.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::lexical::hex_digest;

pub fn tool_version() -> String {
    format!("densetrans {}", env!("CARGO_PKG_VERSION"))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let mut f = File::open(path).map_err(|e| Error::Format {
        path: path.display().to_string(),
        msg: format!("cannot open: {e}"),
    })?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 65536];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex_digest(hasher))
}

/// Manifest of one pipeline stage.
#[derive(Debug, Clone)]
pub struct RunManifest {
    pub command: String,
    config: BTreeMap<String, String>,
    inputs: Vec<(String, String)>,
}

impl RunManifest {
    pub fn new(command: impl Into<String>) -> Self {
        RunManifest { command: command.into(), config: BTreeMap::new(), inputs: Vec::new() }
    }

    pub fn set(&mut self, key: &str, value: impl std::fmt::Display) -> &mut Self {
        self.config.insert(key.to_string(), value.to_string());
        self
    }

    pub fn add_input(&mut self, path: &Path) -> Result<&mut Self> {
        let hash = file_sha256(path)?;
        self.inputs.push((path.display().to_string(), hash));
        Ok(self)
    }

    /// Write `<name>.manifest.txt`-style files. The timestamp is
    /// provenance only; reproducibility comparisons cover the artifacts,
    /// not the manifest.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "# densetrans run manifest v1")?;
        writeln!(w, "command={}", self.command)?;
        writeln!(w, "tool_version={}", tool_version())?;
        let now = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        writeln!(w, "timestamp={now}")?;
        for (k, v) in &self.config {
            writeln!(w, "config.{k}={v}")?;
        }
        for (path, hash) in &self.inputs {
            writeln!(w, "input.{path}={hash}")?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `key=value` config file; `#` starts a comment line.
#[derive(Debug, Clone, Default)]
pub struct KvConfig {
    map: BTreeMap<String, String>,
    path: String,
}

impl KvConfig {
    pub fn empty() -> Self {
        KvConfig::default()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let fname = path.display().to_string();
        let file = File::open(path).map_err(|e| Error::Format {
            path: fname.clone(),
            msg: format!("cannot open: {e}"),
        })?;
        let mut map = BTreeMap::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let Some((k, v)) = trimmed.split_once('=') else {
                return Err(Error::Parse {
                    path: fname.clone(),
                    line: i + 1,
                    msg: "expected key=value".to_string(),
                });
            };
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(KvConfig { map, path: fname })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(|s| s.as_str())
    }

    /// Typed lookup; a present-but-unparsable value fails fast.
    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.map.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|_| {
                Error::Config(format!("{}: key {key:?} has unparsable value {raw:?}", self.path))
            }),
        }
    }

    /// Reject keys outside the stage's schema.
    pub fn check_known(&self, allowed: &[&str]) -> Result<()> {
        for key in self.map.keys() {
            if !allowed.contains(&key.as_str()) {
                return Err(Error::Config(format!(
                    "{}: unknown config key {key:?} (known: {})",
                    self.path,
                    allowed.join(", ")
                )));
            }
        }
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &String)> {
        self.map.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_config_parses_and_rejects_unknown() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, "# comment\npeak_lr = 0.001\nepochs=4\n").unwrap();
        let cfg = KvConfig::load(&path).unwrap();
        assert_eq!(cfg.parse::<f64>("peak_lr").unwrap(), Some(0.001));
        assert_eq!(cfg.parse::<usize>("epochs").unwrap(), Some(4));
        assert_eq!(cfg.parse::<usize>("missing").unwrap(), None);
        assert!(cfg.check_known(&["peak_lr", "epochs"]).is_ok());
        assert!(cfg.check_known(&["peak_lr"]).is_err());
    }

    #[test]
    fn kv_config_bad_line_reports_position() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, "ok=1\nbroken line\n").unwrap();
        let err = KvConfig::load(&path).unwrap_err().to_string();
        assert!(err.contains(":2:"), "{err}");
    }

    #[test]
    fn manifest_roundtrip_is_readable_kv() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("input.tsv");
        std::fs::write(&input, "q1\thello\n").unwrap();
        let mpath = dir.path().join("out.manifest.txt");
        let mut m = RunManifest::new("train");
        m.set("seed", 7).set("epochs", 3);
        m.add_input(&input).unwrap();
        m.write(&mpath).unwrap();
        let text = std::fs::read_to_string(&mpath).unwrap();
        assert!(text.contains("command=train"));
        assert!(text.contains("config.seed=7"));
        assert!(text.contains(&format!("input.{}", input.display())));
        // Hash matches an independent recomputation.
        let expect = file_sha256(&input).unwrap();
        assert!(text.contains(&expect));
    }
}
