//! Virtual-device model of double-buffered image streaming, the four streaming variants, the
//! benchmark suites that exercise them, and the flood-ensemble overlap analytics.

pub mod bench;
pub mod calibration;
pub mod device_model;
pub mod kernels;
pub mod raster;
pub mod streaming;

pub use device_model::{DeviceError, DeviceProfile, KernelVariant, Micros};
pub use kernels::{AccumulationGrid, CompositeImage, KernelError, OverlapHistogram};
pub use raster::{RasterError, RasterSurface, SurfaceId};
pub use streaming::{AlgorithmVariant, PipelineRunReport, StreamError, StreamJob, StreamPlan};
