//! Run configuration: one section per pipeline stage, loaded from TOML and
//! overridden by command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use trajrank_core::bank::{ClusterMethod, ClusterOptions};
use trajrank_core::inference::{PredictOptions, Strategy};
use trajrank_core::mips::IndexVariant;
use trajrank_core::synth::{parse_mix, ScenarioSpec, WorldGrid};
use trajrank_core::trainer::TrainConfig;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub gen: GenConfig,
    pub cluster: ClusterConfig,
    pub train: TrainConfig,
    pub index: IndexConfig,
    pub predict: PredictConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    /// Scenario mix, `kind[:weight[:speed[:noise]]]` entries separated by commas.
    pub mix: String,
    pub n: usize,
    pub seed: u64,
    /// Default speed for mix entries without one, m/s.
    pub speed: f64,
    /// Default ground-truth noise for mix entries without one, meters.
    pub noise: f64,
    #[serde(rename = "M")]
    pub m: usize,
    pub dt: f64,
    #[serde(rename = "H")]
    pub h: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        let grid = WorldGrid::default();
        Self {
            mix: "straight".into(),
            n: 1000,
            seed: 0,
            speed: 8.0,
            noise: 0.1,
            m: grid.m,
            dt: grid.dt,
            h: grid.h,
        }
    }
}

impl GenConfig {
    pub fn grid(&self) -> WorldGrid {
        WorldGrid {
            m: self.m,
            dt: self.dt,
            h: self.h,
        }
    }

    pub fn scenarios(&self) -> CliResult<Vec<ScenarioSpec>> {
        parse_mix(&self.mix, self.speed, self.noise).map_err(|e| CliError::Usage(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    pub k: usize,
    pub method: ClusterMethod,
    pub seed: u64,
    pub max_iters: usize,
    pub batch_size: usize,
    pub n_batches: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        let o = ClusterOptions::default();
        Self {
            k: 64,
            method: ClusterMethod::MinibatchKmeans,
            seed: 0,
            max_iters: o.max_iters,
            batch_size: o.batch_size,
            n_batches: o.n_batches,
        }
    }
}

impl ClusterConfig {
    pub fn options(&self) -> ClusterOptions {
        ClusterOptions {
            max_iters: self.max_iters,
            batch_size: self.batch_size,
            n_batches: self.n_batches,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantKind {
    Exact,
    Ivf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IndexConfig {
    pub variant: VariantKind,
    pub n_lists: usize,
    pub n_probe: usize,
    pub seed: u64,
}

impl Default for IndexConfig {
    fn default() -> Self {
        Self {
            variant: VariantKind::Exact,
            n_lists: 256,
            n_probe: 16,
            seed: 0,
        }
    }
}

impl IndexConfig {
    pub fn variant(&self) -> IndexVariant {
        match self.variant {
            VariantKind::Exact => IndexVariant::Exact,
            VariantKind::Ivf => IndexVariant::Ivf {
                n_lists: self.n_lists,
                n_probe: self.n_probe,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictConfig {
    pub strategy: Strategy,
    pub top_k: usize,
    pub h_weighted: bool,
    pub n_samples: usize,
    pub with_noise: bool,
    pub mode_strategy: Strategy,
    pub seed: u64,
}

impl Default for PredictConfig {
    fn default() -> Self {
        let o = PredictOptions::default();
        Self {
            strategy: Strategy::Mean,
            top_k: o.top_k,
            h_weighted: o.h_weighted,
            n_samples: o.n_samples,
            with_noise: o.with_noise,
            mode_strategy: o.mode_strategy,
            seed: 0,
        }
    }
}

impl PredictConfig {
    pub fn options(&self) -> PredictOptions {
        PredictOptions {
            top_k: self.top_k,
            h_weighted: self.h_weighted,
            n_samples: self.n_samples,
            with_noise: self.with_noise,
            mode_strategy: self.mode_strategy,
        }
    }
}

impl RunConfig {
    /// Reads a TOML file; absent sections and keys keep their defaults.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn load_or_default(path: Option<&Path>) -> CliResult<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config always serializes")
    }

    /// Writes the resolved configuration beside `output` as `<output>.config.toml`.
    pub fn write_beside(&self, output: &Path) -> CliResult<PathBuf> {
        let mut name = output.as_os_str().to_owned();
        name.push(".config.toml");
        let path = PathBuf::from(name);
        fs::write(&path, self.to_toml()).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}
