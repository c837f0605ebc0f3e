use std::path::{Path, PathBuf};

use facenas_core::data::SplitDataset;
use facenas_core::engine::{RankedArch, RetrainResult, RunConfig};
use facenas_core::{Error, Result};
use serde::{Deserialize, Serialize};

pub const FILE_NAME: &str = "manifest.json";
pub const FORMAT: u32 = 1;

/// Files of a run, relative to the run directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunFiles {
    pub config: String,
    pub metrics: String,
    pub traces: String,
    pub checkpoint: String,
    pub model_sizes: String,
}

impl Default for RunFiles {
    fn default() -> Self {
        Self {
            config: "config.toml".into(),
            metrics: "metrics.csv".into(),
            traces: "traces.jsonl".into(),
            checkpoint: "search.ckpt".into(),
            model_sizes: "model_sizes.csv".into(),
        }
    }
}

/// Split sizes and normalisation of the data a run saw.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    pub image: [usize; 3],
    pub n_classes: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl DataSummary {
    pub fn of(d: &SplitDataset) -> Self {
        Self {
            train: d.train.len(),
            validation: d.validation.len(),
            test: d.test.len(),
            image: [d.channels, d.height, d.width],
            n_classes: d.n_classes,
            mean: d.mean.clone(),
            std: d.std.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrainRecord {
    pub rank: usize,
    pub metrics: String,
    #[serde(flatten)]
    pub result: RetrainResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: u32,
    pub code_version: String,
    pub seed: u64,
    pub config: RunConfig,
    pub data: DataSummary,
    pub files: RunFiles,
    pub ranked: Vec<RankedArch>,
    pub retrains: Vec<RetrainRecord>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let m: Manifest = serde_json::from_str(&text)
            .map_err(|e| Error::Data(format!("{}: not a run manifest: {e}", path.display())))?;
        if m.format != FORMAT {
            return Err(Error::Data(format!("{}: unsupported manifest format {}", path.display(), m.format)));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        write_atomic(path, text.as_bytes())
    }

    /// Inserts or replaces the retrain of `rec.rank`, keeping rank order.
    pub fn record_retrain(&mut self, rec: RetrainRecord) {
        self.retrains.retain(|r| r.rank != rec.rank);
        self.retrains.push(rec);
        self.retrains.sort_by_key(|r| r.rank);
    }
}

/// Writes through a sibling temporary file so readers never see half a file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp: PathBuf = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}
