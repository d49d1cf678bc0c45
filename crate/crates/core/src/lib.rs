//! Real-distribution bias correction for real/fake feature detection.
//!
//! The pipeline estimates a meta-distribution of batch statistics from real
//! features, whitens inputs with transforms drawn from that distribution, and
//! trains a linear detector on the whitened features. Synthetic benchmarks
//! with controlled domain shift and the usual detection metrics are included.

// `!(x > 0.0)` and friends are deliberate: they reject NaN along with the
// out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classifier;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod gaussianity;
pub mod io;
pub mod linalg;
pub mod rng;
pub mod stats;
pub mod synthdata;
pub mod whitening;

pub use classifier::{predict, train, Checkpoint, FeatureMap, LinearModel, SamplingPolicy, TrainConfig};
pub use data::{FeatureMatrix, Label};
pub use error::{Error, Result};
pub use evaluation::{auc, evaluate, evaluate_benchmark, EvaluationReport};
pub use gaussianity::{moment_report, MomentReport};
pub use linalg::SymMatrix;
pub use stats::{estimate_meta, MetaDistribution, Mode, NormalParams};
pub use synthdata::{make_benchmark, Benchmark};
pub use whitening::{fixed_transform, sample_transform, WhiteningTransform};
