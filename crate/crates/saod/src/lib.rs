//! Toolkit for working with sparsely annotated object detection data:
//! deterministic sparsification splits, proposal partitioning with
//! pseudo-positive mining, merged ground-truth construction, loss kernels,
//! photometric augmentation, detection metrics, and a synthetic simulation
//! harness.

pub mod assign;
pub mod augment;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod loss;
pub mod merge;
pub mod rng;
pub mod sim;
pub mod splits;

pub use assign::{Partition, PpmSchedule, ScoredProposal, Thresholds};
pub use dataset::{Annotation, Category, Dataset, Image};
pub use error::{Error, Result};
pub use eval::{APReport, Detection};
pub use geometry::{BBox, NmsMode, ScoredBox};
pub use merge::{MergeConfig, MergedGT};
pub use sim::{DetectorNoise, RecoveryReport, SceneSpec};
pub use splits::{RemovalManifest, Split4Level, SplitKind, SplitSpec};
