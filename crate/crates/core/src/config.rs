//! Run configuration and the metadata document written next to results.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::admm::ClusterConfig;
use crate::data::DataFormat;
use crate::error::{Error, Result};
use crate::graph::GraphConfig;
use crate::nn::PretrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub data: Option<PathBuf>,
    /// Inferred from the data file extension when absent.
    pub format: Option<DataFormat>,
    /// Defaults to the `.labels` sibling of the data file when it exists.
    pub labels: Option<PathBuf>,
    /// `(height, width)` of each row when rows are images.
    pub image_shape: Option<(usize, usize)>,
    pub standardize: bool,
    pub output_dir: PathBuf,
    /// Journal of must-link / cannot-link labels applied before clustering.
    pub constraints: Option<PathBuf>,
    /// Re-rank pairs after every labeling round instead of keeping the
    /// ranking from initialization.
    pub refresh_ranking: bool,
    pub pca_dims: usize,
    pub pretrain: PretrainConfig,
    pub graph: GraphConfig,
    pub cluster: ClusterConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: None,
            format: None,
            labels: None,
            image_shape: None,
            standardize: false,
            output_dir: PathBuf::from("cpac-run"),
            constraints: None,
            refresh_ranking: true,
            pca_dims: 2,
            pretrain: PretrainConfig::default(),
            graph: GraphConfig::default(),
            cluster: ClusterConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse {
            location: "config".into(),
            message: e.to_string(),
        })
    }

    /// Loads a config file, or the config echoed in a run's metadata
    /// document.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let parsed = match toml::from_str::<RunMetadata>(&text) {
            Ok(meta) => Ok(meta.config),
            Err(_) => Self::from_toml_str(&text),
        };
        parsed.map_err(|e| match e {
            Error::Parse { message, .. } => Error::Parse {
                location: path.display().to_string(),
                message,
            },
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.graph.k == 0 {
            return Err(Error::Parameter("k must be at least 1".into()));
        }
        if self.pretrain.hidden.is_empty() {
            return Err(Error::Parameter(
                "at least one hidden layer is required".into(),
            ));
        }
        if self.pretrain.batch_size == 0 || self.cluster.pair_batch_size == 0 {
            return Err(Error::Parameter("batch sizes must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.pretrain.dropout_rate) {
            return Err(Error::Parameter(format!(
                "dropout rate {} outside [0, 1)",
                self.pretrain.dropout_rate
            )));
        }
        if !(2..=3).contains(&self.pca_dims) {
            return Err(Error::Parameter(
                "PCA export needs 2 or 3 dimensions".into(),
            ));
        }
        Ok(())
    }

    pub fn data_format(&self) -> DataFormat {
        match (&self.format, &self.data) {
            (Some(f), _) => *f,
            (None, Some(p)) => DataFormat::from_extension(p),
            (None, None) => DataFormat::Csv,
        }
    }
}

/// Derived quantities recorded after a run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub n: usize,
    pub dim: usize,
    pub edges: usize,
    pub constraints: usize,
    pub lambda: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub mu1_initial: f64,
    pub mu2_initial: f64,
    pub update_interval: usize,
    pub pretrain_initial_mse: Option<f64>,
    pub pretrain_final_mse: Option<f64>,
    pub clustering_epochs: usize,
    pub threshold: f64,
    pub clusters: usize,
    pub nmi: Option<f64>,
    pub acc: Option<f64>,
}

/// Human-readable key-value document: tool version, full config, stats.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub version: String,
    pub stats: RunStats,
    pub config: RunConfig,
}

impl RunMetadata {
    pub fn new(config: RunConfig, stats: RunStats) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            stats,
            config,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Parse {
            location: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::admm::Mode;

    #[test]
    fn defaults_roundtrip_through_toml() {
        let mut c = RunConfig::default();
        c.image_shape = Some((16, 16));
        c.cluster.mode = Mode::SingleRepresentation;
        let text = c.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml_str(&text).unwrap(), c);
    }

    #[test]
    fn partial_document_uses_defaults() {
        let c = RunConfig::from_toml_str("seed = 7\n[graph]\nk = 5\n").unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.graph.k, 5);
        assert_eq!(c.cluster.epochs, 100);
        assert_eq!(c.pretrain.layerwise_epochs, 50);
    }

    #[test]
    fn validation() {
        let mut c = RunConfig::default();
        assert!(c.validate().is_ok());
        c.graph.k = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn metadata_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metadata.toml");
        let m = RunMetadata::new(
            RunConfig::default(),
            RunStats {
                nmi: Some(0.5),
                ..RunStats::default()
            },
        );
        m.save(&path).unwrap();
        assert_eq!(RunMetadata::load(&path).unwrap(), m);
        assert_eq!(RunConfig::load(&path).unwrap(), m.config);
    }
}
