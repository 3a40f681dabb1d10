use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datasets::{load_csv_with_classes, Dataset, SpiralParams, SplitSpec};
use crate::divergence::GridSearchConfig;
use crate::error::{Error, Result};
use crate::evolution::{AblationConfig, Combine, GenerationConfig};
use crate::mutation::{MutationParams, SubspaceMode};
use crate::nn::{NetworkSpec, TrainConfig};

/// Where a dataset comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Spirals(SpiralParams),
    /// CSV file; relative paths resolve against the config file's directory.
    Csv(PathBuf),
    /// Placeholder for data this crate cannot load (ImageNet, CIFAR).
    External {
        name: String,
    },
}

impl DataSource {
    pub fn load(&self, base: &Path, class_count: Option<usize>) -> Result<Dataset> {
        match self {
            DataSource::Spirals(p) => p.generate(),
            DataSource::Csv(path) => load_csv_with_classes(base.join(path), class_count),
            DataSource::External { name } => Err(Error::config(format!(
                "dataset '{name}' requires external model/data and is not runnable here"
            ))),
        }
    }
}

fn default_split() -> SplitSpec {
    SplitSpec {
        fractions: vec![0.5, 0.5],
        seed: 0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    /// Training data. Only needed when the model is trained from scratch.
    #[serde(default)]
    pub train: Option<DataSource>,
    /// Held-out data, split into validation and test.
    pub holdout: DataSource,
    #[serde(default = "default_split")]
    pub split: SplitSpec,
    /// Forces the class count for CSV sources.
    #[serde(default)]
    pub class_count: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default)]
    pub network: Option<NetworkSpec>,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
}

/// How the parent is obtained.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelSource {
    Train { network: NetworkSpec, train: TrainConfig },
    Checkpoint(PathBuf),
}

impl ModelConfig {
    pub fn source(&self) -> Result<ModelSource> {
        match (&self.train, &self.checkpoint) {
            (Some(train), None) => {
                let network = self
                    .network
                    .clone()
                    .ok_or_else(|| Error::config("model.train needs model.network"))?;
                network.validate()?;
                train.validate()?;
                Ok(ModelSource::Train {
                    network,
                    train: train.clone(),
                })
            }
            (None, Some(path)) => Ok(ModelSource::Checkpoint(path.clone())),
            (Some(_), Some(_)) => Err(Error::config("model: give either train or checkpoint, not both")),
            (None, None) => Err(Error::config("model: one of train or checkpoint is required")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MutationConfig {
    #[serde(default)]
    pub explicit: Option<MutationParams>,
    #[serde(default)]
    pub search: Option<GridSearchConfig>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MutationSource {
    Explicit(MutationParams),
    Search(GridSearchConfig),
}

impl MutationConfig {
    pub fn source(&self) -> Result<MutationSource> {
        match (&self.explicit, &self.search) {
            (Some(p), None) => {
                p.validate()?;
                Ok(MutationSource::Explicit(*p))
            }
            (None, Some(s)) => {
                s.validate()?;
                Ok(MutationSource::Search(s.clone()))
            }
            (Some(_), Some(_)) => Err(Error::config("mutation: give either explicit or search, not both")),
            (None, None) => Err(Error::config("mutation: one of explicit or search is required")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolutionConfig {
    pub pop_size: usize,
    pub top_k: usize,
    pub combine: Combine,
    pub generations: usize,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self {
            pop_size: 16,
            top_k: 8,
            combine: Combine::Both,
            generations: 1,
        }
    }
}

impl EvolutionConfig {
    pub fn with_mutation(&self, mutation: MutationParams) -> GenerationConfig {
        GenerationConfig {
            pop_size: self.pop_size,
            top_k: self.top_k,
            combine: self.combine,
            generations: self.generations,
            mutation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryConfig {
    pub sigma_grid: Vec<f64>,
    pub rho_grid: Vec<f64>,
    #[serde(default = "BoundaryConfig::default_resolution")]
    pub resolution: usize,
    /// Fraction of the data bounding box added on every side.
    #[serde(default = "BoundaryConfig::default_padding")]
    pub padding: f64,
    #[serde(default)]
    pub subspace_mode: SubspaceMode,
}

impl BoundaryConfig {
    fn default_resolution() -> usize {
        200
    }
    fn default_padding() -> f64 {
        0.1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
        }
    }
}

/// A complete run description. Every random choice is seeded from here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub task: TaskConfig,
    pub model: ModelConfig,
    #[serde(default)]
    pub mutation: Option<MutationConfig>,
    #[serde(default)]
    pub evolution: EvolutionConfig,
    #[serde(default)]
    pub ablation: Option<AblationConfig>,
    #[serde(default)]
    pub boundary: Option<BoundaryConfig>,
    #[serde(default)]
    pub output: OutputConfig,
    /// Free-form remark; ignored.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    /// Directory of the config file, used to resolve relative paths.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        self.base_dir.join(path)
    }
}
