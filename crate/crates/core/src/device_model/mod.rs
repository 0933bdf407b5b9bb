//! Deterministic virtual device.
//!
//! A [`DeviceProfile`] prices the individual operations (host copies, buffer copies,
//! buffer-to-image transforms, kernels) and [`simulate`] executes a [`ScheduleGraph`] of those
//! operations on three concurrent channels: transfer, transform and compute. Work on one channel
//! runs one node at a time in enqueue order; a node also waits for every node it depends on.

mod graph;
mod profile;
mod sim;

pub use graph::{Channel, GraphError, NodeId, OpKind, OpNode, ScheduleGraph};
pub use profile::{
    ContentionModel, CurveKnot, DeviceProfile, KernelVariant, RatePoint, RateTable, SyntheticTransform,
    TransferCurve, TransformModel, MAX_TRANSFER_BYTES,
};
pub use sim::{channel_busy, simulate, CostModel, Span, Timeline};

use thiserror::Error;

/// Simulated time, in whole microseconds.
pub type Micros = u64;

/// Rounds a non-negative duration to whole microseconds, halves going up.
pub fn round_half_up(us: f64) -> Micros {
    if us <= 0.0 {
        0
    } else {
        (us + 0.5).floor() as Micros
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DeviceError {
    #[error("size outside curve domain: {bytes} bytes")]
    SizeOutsideDomain { bytes: u64 },
    #[error("unsupported image size {width}x{height} (device limit {limit} px)")]
    UnsupportedImageSize { width: u32, height: u32, limit: u32 },
    #[error("unknown kernel variant `{0}`")]
    UnknownKernelVariant(String),
    #[error("profile has no rate for kernel variant {0}")]
    NoKernelRate(KernelVariant),
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error("dependency cycle through nodes {0:?}")]
    DependencyCycle(Vec<NodeId>),
    #[error("node {node} cannot be scheduled: {reason}")]
    Unsatisfiable { node: NodeId, reason: String },
}
