//! Vertically partitioned learning with error-prone entity resolution.
//!
//! Two peers hold disjoint feature blocks of the same records. Records are linked
//! through a few noisy shared features, a linear model is trained on the joined
//! sample, and the run is audited against drift, immunity and loss-gap bounds.

pub mod bounds;
pub mod dataset;
pub mod er;
pub mod error;
pub mod harness;
pub mod losses;
pub mod matching;
pub mod permdiag;

pub use bounds::{audit, AuditOptions, BoundReport, DriftChain};
pub use dataset::{Label, LabeledDataset, NoiseConfig, PartitionSpec, PeerLabels, PeerView, VerticalSplit};
pub use er::{ErStrategy, Linkage, ResolvedSample};
pub use error::{Error, Result};
pub use harness::{ExperimentConfig, Learner, RunReport};
pub use losses::{LinearModel, LossKind, SourceLoss, TaylorLossSpec};
pub use matching::{CandidatePairSet, Matching};
pub use permdiag::{AccuracyProfile, Alpha, KeyParams, RowBlocks, TranspositionSequence};

pub use nalgebra;
