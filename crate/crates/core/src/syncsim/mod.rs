//! Simulated modular data-parallel training: gradient accumulation and the
//! ready-count/allreduce exchange over a toy model, task multiplexing,
//! reservoir batching and communication accounting.

mod bench;
mod cost;
mod device;
mod multiplex;
mod oracle;
mod reservoir;
mod toy;

use thiserror::Error;

use crate::model::{DeviceId, ModuleKey, TaskId};

pub use bench::{
    preset_arch, run_benchmark, scaling_sweep, synthetic_config, BenchReport, CommLedger,
    ModuleRecord, ScalingPoint, SimSettings, StepRecord, Summary, GPUS_PER_NODE, PRESETS,
};
pub use cost::{allreduce_time, CostModel, BYTES_PER_PARAM};
pub use device::{sync_step, DeviceState, ModuleSync, SyncOutcome};
pub use multiplex::Multiplexer;
pub use oracle::{oracle_reference, Event};
pub use reservoir::{reservoir_batch, Reservoir};
pub use toy::{forward, local_backward, loss, ForwardTrace, Matrix, ToyModel};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("a task must use at least one module")]
    EmptyChain,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("module {0} has no parameters")]
    MissingModule(ModuleKey),
    #[error("device {device} does not host module {module}")]
    ModuleNotHosted { device: DeviceId, module: ModuleKey },
    #[error("device {0} listed twice")]
    DuplicateDevice(DeviceId),
    #[error("module {0} has inconsistent shapes across its group")]
    InconsistentModule(ModuleKey),
    #[error("no active task on device {device} at step {step}")]
    NoActiveTask { device: DeviceId, step: u64 },
    #[error("task {0} is not placed on a device")]
    Unplaced(TaskId),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}
