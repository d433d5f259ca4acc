use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use stressnas_nn::TrainConfig;

use crate::dataset::{load_subjects, synth_dataset, LoadOptions, RawRecording, SynthConfig, TaskMode, WindowConfig};
use crate::error::{Error, Result};
use crate::featbank::FilterBankConfig;
use crate::models::{Branch, ModelFamily, SensorCombination};
use crate::nas::{MacroConfig, ScoreConfig, SearchSpace};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Desk,
    Full,
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Desk => "desk",
            Profile::Full => "full",
        })
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "full" => Ok(Profile::Full),
            _ => Err(Error::Config(format!("unknown profile `{s}` (desk|full)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    /// Cell nodes: 4 for the full space, 3 for the reduced one.
    pub cell_nodes: usize,
    pub n_candidates: usize,
    pub top_k: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            cell_nodes: 3,
            n_candidates: 125,
            top_k: 3,
        }
    }
}

impl SearchConfig {
    pub fn space(&self) -> SearchSpace {
        SearchSpace { nodes: self.cell_nodes }
    }
}

/// Where recordings come from: a directory in the neutral format, or the
/// synthetic generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Dir { path: PathBuf, interp_nan: bool },
    Synth(SynthConfig),
}

impl DataSource {
    pub fn load(&self) -> Result<Vec<RawRecording>> {
        match self {
            DataSource::Dir { path, interp_nan } => Ok(load_subjects(
                path,
                LoadOptions {
                    interp_nan: *interp_nan,
                },
            )?),
            DataSource::Synth(cfg) => Ok(synth_dataset(cfg)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default = "default_task")]
    pub task: TaskMode,
    #[serde(default = "default_combination")]
    pub combination: SensorCombination,
    #[serde(default = "default_family")]
    pub family: ModelFamily,
    #[serde(default = "default_data")]
    pub data: DataSource,
    #[serde(default)]
    pub window: WindowConfig,
    #[serde(default)]
    pub filterbank: FilterBankConfig,
    #[serde(default)]
    pub score: ScoreConfig,
    #[serde(default)]
    pub search: SearchConfig,
    #[serde(default = "desk_train")]
    pub train: TrainConfig,
    #[serde(default, rename = "macro")]
    pub macro_cfg: MacroConfig,
    /// Fraction of training subjects held in for inner validation.
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
}

fn default_task() -> TaskMode {
    TaskMode::ThreeState
}

fn default_combination() -> SensorCombination {
    SensorCombination::new(vec![Branch::Eda, Branch::Bvp, Branch::Temp, Branch::Mixed]).expect("non-empty")
}

fn default_family() -> ModelFamily {
    ModelFamily::Stressnas
}

fn default_data() -> DataSource {
    DataSource::Synth(desk_synth())
}

/// Small batches give enough SGD steps on the few desk windows.
fn desk_train() -> TrainConfig {
    TrainConfig {
        epochs: 3,
        batch_size: 16,
        learning_rate: 0.05,
        ..Default::default()
    }
}

fn default_val_fraction() -> f64 {
    0.1
}

/// Synthetic data sized for a single-core desk run: 5 subjects, three
/// 70 s condition blocks each.
pub fn desk_synth() -> SynthConfig {
    SynthConfig {
        n_subjects: 5,
        duration_s: 210.0,
        block_s: 70.0,
        ..Default::default()
    }
}

impl ExperimentConfig {
    pub fn profile(p: Profile, seed: u64) -> Self {
        match p {
            Profile::Desk => Self {
                seed,
                task: default_task(),
                combination: default_combination(),
                family: default_family(),
                data: default_data(),
                window: WindowConfig::default(),
                filterbank: FilterBankConfig::default(),
                score: ScoreConfig::default(),
                search: SearchConfig::default(),
                train: desk_train(),
                macro_cfg: MacroConfig::desk(),
                val_fraction: 0.1,
            },
            Profile::Full => Self {
                seed,
                data: DataSource::Dir {
                    path: PathBuf::from("data"),
                    interp_nan: false,
                },
                search: SearchConfig {
                    cell_nodes: 4,
                    n_candidates: 10_000,
                    top_k: 10,
                },
                train: TrainConfig {
                    epochs: 50,
                    ..Default::default()
                },
                macro_cfg: MacroConfig::full(),
                ..Self::profile(Profile::Desk, seed)
            },
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.window.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.filterbank.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.score.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.train.validate().map_err(Error::Config)?;
        self.macro_cfg.validate().map_err(|e| Error::Config(e.to_string()))?;
        let space = self.search.space();
        if !(2..=5).contains(&self.search.cell_nodes) {
            return Err(Error::Config("search.cell_nodes must be in 2..=5".into()));
        }
        if self.search.n_candidates == 0 || self.search.n_candidates > space.size() {
            return Err(Error::Config(format!(
                "search.n_candidates must be in 1..={}",
                space.size()
            )));
        }
        if self.search.top_k == 0 || self.search.top_k > self.search.n_candidates {
            return Err(Error::Config("search.top_k must be in 1..=n_candidates".into()));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Config("val_fraction must lie in (0, 1)".into()));
        }
        if self.family == ModelFamily::Stressnas && self.combination.image_branches().next().is_none() {
            return Err(Error::Config("StressNAS needs at least one filter-bank branch".into()));
        }
        Ok(())
    }

    /// sha256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}
