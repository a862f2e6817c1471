//! Planning and simulation toolkit for modular multilingual
//! encoder-decoder training.
//!
//! The pipeline compiles a compact meta-configuration into an explicit
//! per-task configuration: language-pair discovery from corpus path
//! templates ([`pathtmpl`]), language clustering ([`clusterer`]),
//! module naming from sharing patterns ([`sharing`]), task-to-GPU
//! placement ([`allocator`]) and the compiler itself ([`configgen`]).
//! [`syncsim`] simulates the per-module gradient synchronization of such a
//! configuration on a toy model and accounts for its communication.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the common choices.

pub mod allocator;
pub mod cli;
pub mod clusterer;
pub mod configgen;
pub mod model;
pub mod pathtmpl;
pub mod scalar;
pub mod sharing;
pub mod syncsim;

pub use allocator::{comm_cost, initial_assignment, local_search, Assignment, CostWeights};
pub use clusterer::{cluster_languages, LanguageDistanceMatrix};
pub use configgen::{generate, FullConfig, MetaConfig};
pub use model::{
    validate_config, ClusterTopology, DeviceId, LanguageCode, ModuleKey, Side, TaskId, TaskSpec,
    Violation,
};
pub use scalar::Scalar;
pub use sharing::{ArchSpec, SharingPattern, StackSpec};

pub type ToyModel64 = syncsim::ToyModel<f64>;
pub type ToyModel32 = syncsim::ToyModel<f32>;
pub type Matrix64 = syncsim::Matrix<f64>;
pub type Matrix32 = syncsim::Matrix<f32>;
pub type DeviceState64 = syncsim::DeviceState<f64>;
pub type DeviceState32 = syncsim::DeviceState<f32>;
pub type DistanceMatrix64 = clusterer::LanguageDistanceMatrix<f64>;
pub type DistanceMatrix32 = clusterer::LanguageDistanceMatrix<f32>;
