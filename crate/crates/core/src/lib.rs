//! Generalized category discovery on long-tailed, precomputed embeddings.
//!
//! The pipeline: build an exact k-NN graph over unit-norm features, compute
//! per-sample densities and density peaks, suppress redundant peaks (NMDS),
//! select reliable unlabelled samples by confidence and density, train a
//! prototype classifier with a prior-matching regularizer, estimate the
//! number of categories, and evaluate with Hungarian-matched accuracy.

pub mod classifier;
pub mod density;
pub mod embedding;
pub mod error;
pub mod estimation;
pub mod evaluation;
pub mod knn;
pub mod selection;
pub mod train;

pub use classifier::{ProbMatrix, PrototypeSet};
pub use density::{DensityMap, DensityMode, NmdsRule, PeakSet};
pub use embedding::{ClassCounts, EmbeddingSet, LabelInfo, SynthConfig, UNLABELLED};
pub use error::{Error, Result};
pub use estimation::{EstimationConfig, EstimationReport};
pub use evaluation::EvalReport;
pub use knn::KnnGraph;
pub use selection::{SelectionConfig, SelectionResult};
pub use train::{Ablation, EpochStats, TrainConfig, TrainOutcome};
