//! Atomic output files and the provenance record written next to them.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

/// Writes through a temporary file in the target directory, renamed into
/// place once complete.
pub fn write_atomic(path: &Path, write: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir)?;
    {
        let mut buf = std::io::BufWriter::new(tmp.as_file_mut());
        write(&mut buf)?;
        buf.flush()?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)?;
        Ok(())
    })
}

/// Tracks the files a run produces and writes a provenance record with the
/// tool version, resolved settings, their hash and the seed.
pub struct Run {
    command: &'static str,
    config: Value,
    seed: Option<u64>,
    outputs: Vec<PathBuf>,
}

impl Run {
    pub fn new(command: &'static str, config: &impl Serialize, seed: Option<u64>) -> Result<Self> {
        Ok(Self {
            command,
            config: serde_json::to_value(config)?,
            seed,
            outputs: Vec::new(),
        })
    }

    /// Hash of the resolved settings other than the seed, which is
    /// recorded separately.
    pub fn config_hash(&self) -> String {
        let mut config = self.config.clone();
        if let Value::Object(m) = &mut config {
            m.remove("seed");
        }
        // serde_json maps are ordered, so the encoding is canonical
        let bytes = serde_json::to_vec(&config).expect("serializable");
        format!("{:x}", Sha256::digest(bytes))
    }

    pub fn record(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    /// Writes `provenance.json` into an output directory.
    pub fn finish_in(self, dir: &Path) -> Result<()> {
        self.finish(&dir.join("provenance.json"))
    }

    /// Writes `<file>.provenance.json` next to a single output file.
    pub fn finish_beside(self, file: &Path) -> Result<()> {
        let mut name = file.file_name().unwrap_or_default().to_os_string();
        name.push(".provenance.json");
        self.finish(&file.with_file_name(name))
    }

    fn finish(self, path: &Path) -> Result<()> {
        let names: Vec<String> = self
            .outputs
            .iter()
            .map(|p| p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned()))
            .collect();
        let doc = json!({
            "tool": "bppm",
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "config_hash": self.config_hash(),
            "seed": self.seed,
            "config": self.config,
            "outputs": names,
        });
        write_json(path, &doc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_contents() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub").join("a.txt");
        write_atomic(&path, |w| Ok(write!(w, "one")?)).unwrap();
        write_atomic(&path, |w| Ok(write!(w, "two")?)).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "two");
        assert_eq!(fs::read_dir(path.parent().unwrap()).unwrap().count(), 1);
    }

    #[test]
    fn hash_depends_on_settings() {
        let a = Run::new("fit", &json!({"k": 2}), Some(1)).unwrap();
        let b = Run::new("fit", &json!({"k": 3}), Some(1)).unwrap();
        let c = Run::new("fit", &json!({"k": 2, "seed": 9}), Some(9)).unwrap();
        assert_ne!(a.config_hash(), b.config_hash());
        assert_eq!(a.config_hash(), c.config_hash());
    }
}
