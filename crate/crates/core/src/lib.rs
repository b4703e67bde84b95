//! Popularity-bias diagnostics and magnitude-scaling mitigation for
//! generative cold-start recommenders.
//!
//! A warm matrix-factorization model is trained with BPR, a content encoder
//! learns to map item features into its embedding space, and the generated
//! cold-item embeddings are post-processed by shrinking their magnitudes
//! toward the warm mean. The crate also provides the ranking engine, accuracy
//! and item-fairness metrics, and the diagnostic tables used to study how the
//! warm model's popularity bias carries over to cold items.

// Validation uses `!(x > 0.0)` on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod coldgen;
pub mod data;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod mitigate;
pub mod ranking;
pub mod warm;

pub use coldgen::{fit_encoder, generate_cold, ColdEncoder, EncoderConfig};
pub use data::{FeatureMatrix, InteractionTable};
pub use error::{Error, ErrorClass, Result};
pub use experiment::{run_pipeline, ExperimentConfig};
pub use metrics::{evaluate, MetricReport, MetricValues};
pub use mitigate::{scale_embeddings, warm_mean_magnitude};
pub use ranking::{rank_topk, RankingLog};
pub use warm::{train_warm, BprConfig, FactorModel};
