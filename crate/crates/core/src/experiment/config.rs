use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::coldgen::{EncoderConfig, KnnConfig};
use crate::data::{SplitConfig, SyntheticConfig};
use crate::error::{Error, Result};
use crate::mitigate::ScalingConfig;
use crate::warm::BprConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSource {
    Synthetic(SyntheticConfig),
    Files {
        interactions: PathBuf,
        /// One matrix file per content mode, aligned with the item order of
        /// the interactions file.
        features: Vec<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsConfig {
    /// Also rank the union of both cold pools and emit `fig1_pooled.csv`.
    pub pooled: bool,
    /// Also score warm items (warm model and content encoder) and emit
    /// `fig1_warm.csv` / `fig1_warm_as_cold.csv`.
    pub warm_as_cold: bool,
    /// Also report MDG aggregates over per-item MDG averaged across runs.
    pub verbose_mdg: bool,
}

/// Everything one pipeline invocation needs. Serialized verbatim into every
/// sidecar the pipeline writes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub num_runs: usize,
    pub ks: Vec<usize>,
    /// Cutoff used for alpha selection and for the diagnostic tables.
    pub select_k: usize,
    /// Allowed relative NDCG loss on validation when selecting alpha.
    pub user_acc_budget: f64,
    /// `n` for the top-n concentration share.
    pub top_n: usize,
    /// Warm neighbors searched per cold item in the neighbor-popularity table.
    pub neighbors: usize,
    /// Fraction of most-predicted cold items covered by that table.
    pub neighbor_subset_frac: f64,
    pub data: DataSource,
    pub split: SplitConfig,
    pub warm: BprConfig,
    pub encoder: EncoderConfig,
    pub knn: KnnConfig,
    pub scaling: ScalingConfig,
    pub diagnostics: DiagnosticsConfig,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            num_runs: 5,
            ks: vec![20, 50],
            select_k: 20,
            user_acc_budget: 0.1,
            top_n: 50,
            neighbors: 10,
            neighbor_subset_frac: 0.1,
            data: DataSource::Synthetic(SyntheticConfig::default()),
            // 1,400 synthetic items -> 1,000 warm, 200 + 200 cold
            split: SplitConfig {
                warm_frac: 1000.0 / 1400.0,
                ..SplitConfig::default()
            },
            warm: BprConfig::default(),
            encoder: EncoderConfig::default(),
            knn: KnnConfig::default(),
            scaling: ScalingConfig::default(),
            diagnostics: DiagnosticsConfig::default(),
            out_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        // relative data paths are taken relative to the config file
        if let (DataSource::Files { interactions, features }, Some(base)) = (&mut cfg.data, path.parent()) {
            let fix = |p: &mut PathBuf| {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            };
            fix(interactions);
            features.iter_mut().for_each(fix);
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_runs == 0 {
            return Err(Error::Config("num_runs must be >= 1".into()));
        }
        if self.ks.is_empty() || self.ks.contains(&0) {
            return Err(Error::Config("ks must be a nonempty list of positive cutoffs".into()));
        }
        if !self.ks.contains(&self.select_k) {
            return Err(Error::Config(format!(
                "select_k {} must be one of ks {:?}",
                self.select_k, self.ks
            )));
        }
        if !(self.user_acc_budget >= 0.0) {
            return Err(Error::Config("user_acc_budget must be >= 0".into()));
        }
        if self.top_n == 0 || self.neighbors == 0 {
            return Err(Error::Config("top_n and neighbors must be positive".into()));
        }
        if !(self.neighbor_subset_frac > 0.0 && self.neighbor_subset_frac <= 1.0) {
            return Err(Error::Config("neighbor_subset_frac must lie in (0, 1]".into()));
        }
        if let DataSource::Synthetic(s) = &self.data {
            s.validate()?;
        }
        if let DataSource::Files { features, .. } = &self.data {
            if features.is_empty() {
                return Err(Error::Config("at least one feature file is required".into()));
            }
        }
        self.split.validate()?;
        self.warm.validate()?;
        self.encoder.validate()?;
        self.knn.validate()?;
        self.scaling.validate()?;
        Ok(())
    }

    pub fn max_k(&self) -> usize {
        self.ks.iter().copied().max().unwrap_or(1)
    }

    /// Seed of run `run`: the base seed plus the run index.
    pub fn run_seed(&self, run: usize) -> u64 {
        self.seed.wrapping_add(run as u64)
    }

    /// Alpha grid evaluated per run: 0 followed by the sweep.
    pub fn alphas(&self) -> Vec<f64> {
        let mut a = vec![0.0];
        a.extend(self.scaling.sweep.iter().copied().filter(|&v| v != 0.0));
        a
    }
}
