use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use log::{info, warn};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Schema version stamped on every artifact.
pub const ARTIFACT_VERSION: u32 = 1;

/// Provenance carried by every output file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stamp {
    pub version: u32,
    pub stage: String,
    pub config_hash: String,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Envelope<T> {
    #[serde(flatten)]
    pub stamp: Stamp,
    pub data: T,
}

/// Output directory plus the stamp of the current run.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub root: PathBuf,
    pub config_hash: String,
    pub seed: u64,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>, config_hash: String, seed: u64) -> Self {
        Self {
            root: root.into(),
            config_hash,
            seed,
        }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn stamp(&self, stage: &str) -> Stamp {
        Stamp {
            version: ARTIFACT_VERSION,
            stage: stage.to_string(),
            config_hash: self.config_hash.clone(),
            seed: self.seed,
        }
    }

    fn create(&self, name: &str) -> Result<(PathBuf, BufWriter<File>)> {
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let file = File::create(&path)?;
        Ok((path, BufWriter::new(file)))
    }

    pub fn write_json<T: Serialize>(&self, name: &str, stage: &str, data: &T) -> Result<PathBuf> {
        let (path, mut w) = self.create(name)?;
        let envelope = Envelope {
            stamp: self.stamp(stage),
            data,
        };
        serde_json::to_writer_pretty(&mut w, &envelope)?;
        w.write_all(b"\n")?;
        w.flush()?;
        info!("wrote {}", path.display());
        Ok(path)
    }

    /// Reads an artifact written by `stage`, failing with an actionable
    /// error when it is absent.
    pub fn read_json<T: DeserializeOwned>(&self, name: &str, stage: &'static str) -> Result<T> {
        let path = self.path(name);
        if !path.exists() {
            return Err(Error::MissingArtifact { path, stage });
        }
        let envelope: Envelope<T> = serde_json::from_reader(std::io::BufReader::new(File::open(&path)?))?;
        if envelope.stamp.config_hash != self.config_hash {
            warn!(
                "{} was produced under a different configuration ({}); rerun `{stage}` to refresh it",
                path.display(),
                &envelope.stamp.config_hash[..12.min(envelope.stamp.config_hash.len())]
            );
        }
        Ok(envelope.data)
    }

    /// Opens a CSV whose first lines are `#` comments carrying the stamp.
    pub fn csv_writer(&self, name: &str, stage: &str) -> Result<(PathBuf, csv::Writer<BufWriter<File>>)> {
        let (path, mut w) = self.create(name)?;
        writeln!(w, "# conductsim {stage} v{ARTIFACT_VERSION}")?;
        writeln!(w, "# config_hash={}", self.config_hash)?;
        writeln!(w, "# seed={}", self.seed)?;
        Ok((path, csv::Writer::from_writer(w)))
    }

    pub fn write_csv<T: Serialize>(&self, name: &str, stage: &str, rows: &[T]) -> Result<PathBuf> {
        let (path, mut w) = self.csv_writer(name, stage)?;
        for row in rows {
            w.serialize(row)?;
        }
        w.flush()?;
        info!("wrote {}", path.display());
        Ok(path)
    }

    pub fn require(&self, name: &str, stage: &'static str) -> Result<PathBuf> {
        let path = self.path(name);
        if path.exists() {
            Ok(path)
        } else {
            Err(Error::MissingArtifact { path, stage })
        }
    }
}
