//! One-shot federated model fusion.
//!
//! The crate is split into four layers that build on each other:
//!
//! - [`nn`]: a small dense MLP engine (bias folded into an augmented weight
//!   column, ReLU/leaky-ReLU, softmax cross-entropy, Adam with step decay and
//!   L1 regularization, seeded deterministic training).
//! - [`data`]: the synthetic two-region 2D dataset, MNIST IDX ingestion and the
//!   `hetero-label` / `hetero-dir` non-IID partitioners.
//! - [`fusion`]: fusion and selection operators. Coordinate-wise averaging
//!   (FedAvg), uniform probability ensembling, concatenation fusion, and
//!   adaptive model selection (AMS) driven by each local model's largest
//!   pre-softmax logit.
//! - [`harness`]: seeded multi-trial experiment pipelines, the 2D demo, the
//!   heterogeneity sweep and result summaries.
//!
//! All numerics are `f64`.

pub mod data;
pub mod error;
pub mod fusion;
pub mod harness;
pub mod nn;

pub use data::{Dataset, DatasetView, PartitionPlan, Role};
pub use error::{Error, IngestError, Result};
pub use fusion::{DisturbingMatrix, FusionMethod, GlobalBlockModel};
pub use harness::{ExperimentConfig, ResultRecord};
pub use nn::{Activation, LayerWeights, Matrix, ModelWeights, TrainConfig};
