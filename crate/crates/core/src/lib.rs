//! One-shot federated k-means.
//!
//! Every device clusters its own rows with a spectral variant of Lloyd's
//! method ([`local`]), uploads its centers once, and a central server groups
//! the uploaded centers into `k` global clusters with farthest-point
//! initialization and a single Lloyd assignment round ([`federation`]).
//!
//! The remaining modules build synthetic instances ([`datagen`]), score
//! clusterings ([`evaluation`]) and compute the separation quantities and
//! bound audits used to check when exact recovery is expected
//! ([`separation`]).

pub mod datagen;
pub mod error;
pub mod evaluation;
pub mod federation;
pub mod io;
pub mod linalg;
pub mod local;
pub mod separation;
mod rng;

pub use datagen::{MeanPlacement, MixtureSpec, PartitionSpec, Sampling};
pub use error::{KfedError, Result};
pub use evaluation::{EvalResult, Matching};
pub use federation::{
    CenterRef, DeviceCenters, DevicePartition, InducedClustering, KfedOptions, KfedRun,
    OpsAccounting, ServerState,
};
pub use linalg::{DataMatrix, ProjectedMatrix};
pub use local::{Clustering, LloydRun, LocalResult};
pub use separation::{AuditReport, PairStatus, ProximityReport, SeparationReport};
