//! Run manifests written beside every set of outputs.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

pub fn sha256_hex(data: &[u8]) -> String {
    hex::encode(Sha256::digest(data))
}

pub fn digest_file(path: &Path) -> io::Result<FileDigest> {
    let data = fs::read(path)?;
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256: sha256_hex(&data),
        bytes: data.len() as u64,
    })
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: BTreeMap<String, String>,
    pub seed: u64,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub row_counts: BTreeMap<String, usize>,
    /// Example ids singled out during the run, such as empty lines.
    pub flagged: BTreeMap<String, Vec<usize>>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

impl RunManifest {
    pub fn start(command: impl Into<String>, seed: u64, config: BTreeMap<String, String>) -> Self {
        Self {
            tool: "derivscope".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config,
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            row_counts: BTreeMap::new(),
            flagged: BTreeMap::new(),
            started_unix: unix_now(),
            finished_unix: 0,
        }
    }

    pub fn add_input(&mut self, path: &Path) -> io::Result<()> {
        self.inputs.push(digest_file(path)?);
        Ok(())
    }

    pub fn add_output(&mut self, path: &Path) -> io::Result<()> {
        self.outputs.push(digest_file(path)?);
        Ok(())
    }

    pub fn count(&mut self, stage: impl Into<String>, rows: usize) {
        self.row_counts.insert(stage.into(), rows);
    }

    pub fn flag(&mut self, what: impl Into<String>, ids: Vec<usize>) {
        if !ids.is_empty() {
            self.flagged.insert(what.into(), ids);
        }
    }

    /// Output digests keyed by file name, the part of a manifest that must
    /// agree between reruns on the same inputs.
    pub fn output_digests(&self) -> BTreeMap<String, String> {
        self.outputs
            .iter()
            .map(|d| {
                let name = Path::new(&d.path)
                    .file_name()
                    .map_or_else(|| d.path.clone(), |n| n.to_string_lossy().into_owned());
                (name, d.sha256.clone())
            })
            .collect()
    }

    /// Stamps the finish time and writes the manifest as pretty JSON.
    pub fn finish(mut self, path: &Path) -> io::Result<Self> {
        self.finished_unix = unix_now();
        let mut text = serde_json::to_string_pretty(&self).map_err(io::Error::other)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(self)
    }

    pub fn read(path: &Path) -> io::Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_is_content_based() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.txt");
        let b = dir.path().join("b.txt");
        fs::write(&a, "abc").unwrap();
        fs::write(&b, "abc").unwrap();
        let (da, db) = (digest_file(&a).unwrap(), digest_file(&b).unwrap());
        assert_eq!(da.sha256, db.sha256);
        assert_eq!(
            da.sha256,
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert_eq!(da.bytes, 3);
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("x.tsv");
        fs::write(&out, "1\n").unwrap();
        let mut m = RunManifest::start("rules count", 0, BTreeMap::from([("k".into(), "v".into())]));
        m.add_output(&out).unwrap();
        m.count("derivations", 4);
        m.flag("empty_source", vec![]);
        m.flag("empty_reference", vec![2]);
        let path = dir.path().join("m.json");
        let m = m.finish(&path).unwrap();
        assert_eq!(RunManifest::read(&path).unwrap(), m);
        assert_eq!(m.output_digests().keys().collect::<Vec<_>>(), vec!["x.tsv"]);
        assert_eq!(m.flagged.len(), 1);
    }
}
