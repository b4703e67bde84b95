//! File layout of the stage-by-stage workflow. Every stage reads its inputs
//! from the working directory and writes its outputs next to them.

use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use coldbias_core::data::{read_matrix, DatasetSplits, FeatureMatrix, InteractionTable};
use coldbias_core::experiment::{load_dataset, DataSource, Dataset, ExperimentConfig};
use coldbias_core::{Error, Result};
use serde_json::Value;

use crate::PoolArg;

pub const INTERACTIONS: &str = "interactions.tsv";
pub const FEATURES: &str = "features.emb";
pub const SPLIT: &str = "split.json";
pub const WARM_USERS: &str = "warm_users.emb";
pub const WARM_ITEMS: &str = "warm_items.emb";
pub const ENCODER: &str = "encoder.json";
pub const ANCHOR: &str = "anchor.json";

pub struct Workdir {
    root: PathBuf,
}

impl Workdir {
    pub fn open(cfg: &ExperimentConfig) -> Result<Self> {
        fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
        Ok(Self { root: cfg.out_dir.clone() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn cold(&self, pool: PoolArg) -> PathBuf {
        self.path(&format!("cold_{}.emb", pool.name()))
    }

    pub fn scaled(&self, pool: PoolArg) -> PathBuf {
        self.path(&format!("cold_{}_scaled.emb", pool.name()))
    }

    pub fn ranking(&self, pool: PoolArg) -> PathBuf {
        self.path(&format!("ranking_{}.csv", pool.name()))
    }

    /// An input another stage should have produced.
    pub fn input(&self, name: &str, producer: &str) -> Result<PathBuf> {
        let path = self.path(name);
        if path.exists() {
            Ok(path)
        } else {
            let hint = format!("not found; run `coldbias {producer}` first");
            Err(Error::io(&path, io::Error::new(io::ErrorKind::NotFound, hint)))
        }
    }

    /// The dataset every stage works on: files named by the config, else the
    /// files written by `generate`, else the synthetic data generated in memory.
    pub fn dataset(&self, cfg: &ExperimentConfig) -> Result<Dataset> {
        let (tsv, features) = (self.path(INTERACTIONS), self.path(FEATURES));
        if matches!(cfg.data, DataSource::Synthetic(_)) && tsv.exists() && features.exists() {
            let files = ExperimentConfig {
                data: DataSource::Files { interactions: tsv, features: vec![features] },
                ..cfg.clone()
            };
            return load_dataset(&files);
        }
        load_dataset(cfg)
    }

    pub fn splits(&self) -> Result<DatasetSplits> {
        read_json(&self.input(SPLIT, "split")?)
    }

    pub fn matrix(&self, name: &str, producer: &str) -> Result<FeatureMatrix> {
        read_matrix(&self.input(name, producer)?)
    }
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))
}

pub fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Serde(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Items and holdout interactions of one cold pool.
pub fn pool_of(splits: &DatasetSplits, pool: PoolArg) -> (&[usize], &InteractionTable) {
    match pool {
        PoolArg::Val => (&splits.cold_val_items, &splits.cold_val),
        PoolArg::Test => (&splits.cold_test_items, &splits.cold_test),
    }
}

/// Places pool-aligned rows at their global item indices; other rows stay zero.
pub fn scatter(pool: &[usize], rows: &FeatureMatrix, num_items: usize) -> Result<FeatureMatrix> {
    if rows.rows() != pool.len() {
        return Err(Error::Dimension(format!(
            "{} embedding rows for a pool of {} items",
            rows.rows(),
            pool.len()
        )));
    }
    let mut out = FeatureMatrix::zeros(num_items, rows.cols());
    for (r, &i) in pool.iter().enumerate() {
        out.row_mut(i).copy_from_slice(rows.row(r));
    }
    Ok(out)
}

pub fn index_of(labels: &[String]) -> HashMap<String, usize> {
    labels.iter().enumerate().map(|(i, l)| (l.clone(), i)).collect()
}

/// The `mu_w` written by `train-cold`.
pub fn anchor(dir: &Workdir) -> Result<f64> {
    let v: Value = read_json(&dir.input(ANCHOR, "train-cold")?)?;
    v.get("mu_w")
        .and_then(Value::as_f64)
        .ok_or_else(|| Error::Serde(format!("{ANCHOR}: missing mu_w")))
}
