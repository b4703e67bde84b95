//! Ingestion, content preparation, dataset splitting and synthetic data.

pub mod emb;
mod features;
mod interactions;
mod split;
mod synthetic;

pub use emb::{read_matrix, write_emb};
pub use features::{build_features, cosine, dot, norm, normalize_row, FeatureMatrix};
pub use interactions::{load_interactions, write_interactions, InteractionTable, LoadedInteractions};
pub use split::{pool_sizes, split_dataset, DatasetSplits, SplitConfig};
pub use synthetic::{generate_synthetic, SyntheticConfig, SyntheticData};
