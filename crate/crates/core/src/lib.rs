//! Instance-aware graph convolutional multi-label classification.
//!
//! Label correlations are built per image from region scores and fused with
//! dataset co-occurrence statistics; graph convolution over labels produces
//! image-dependent classifiers, and a second graph over variationally
//! weighted regions contributes a complementary set of scores.
//!
//! Everything runs on the small reverse-mode engine in [`tensor`], in double
//! precision, over synthetic features from [`data`].

pub mod config;
pub mod data;
pub mod error;
pub mod lcm;
pub mod metrics;
pub mod model;
pub mod report;
pub mod tensor;
pub mod variational;

pub use config::{
    Ablation, AblationLevel, ModelConfig, RegionAdjacencyMode, RunConfig, TrainConfig,
};
pub use data::{Dataset, DatasetSpec, Sample};
pub use error::{Error, Result};
pub use lcm::{StatLcm, StatLcmForm};
pub use metrics::{MetricCounts, MetricsReport, PrecisionRecall};
pub use model::{Checkpoint, IaGcn, ModelParams, Scores};
pub use tensor::{Graph, Tensor, Var};
