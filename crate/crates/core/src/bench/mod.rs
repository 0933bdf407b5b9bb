//! Experiment suites run against a [`DeviceProfile`](crate::device_model::DeviceProfile).
//!
//! Every suite returns a [`BenchReport`] whose rows keep the order the suite was specified in,
//! even when the work runs in parallel.

mod dual;
mod kernels;
mod report;
mod stats;
mod sweep;
mod transfer;

pub use dual::{run_dual_buffer_suite, DualRow, RowStatus};
pub use kernels::{run_kernel_comparison, KernelRow, SPEEDUP_KEY};
pub use report::{BenchReport, CsvRow, Environment};
pub use stats::{welch_t_test, WelchResult};
pub use sweep::{render_rate_map, run_transform_sweep, RateMap, SweepLimits, SweepSpec};
pub use transfer::{run_transfer_baseline, TransferRow};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::device_model::DeviceError;
use crate::streaming::StreamError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BenchError {
    #[error("{0}")]
    Validation(String),
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error(transparent)]
    Stream(#[from] StreamError),
}

impl BenchError {
    pub fn is_validation(&self) -> bool {
        matches!(self, BenchError::Validation(_) | BenchError::Device(DeviceError::UnsupportedImageSize { .. }))
    }
}

/// How big the suites are allowed to get.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    /// Small enough for CI: sweeps up to 4,096 px, streaming runs up to N = 1,000.
    #[default]
    Desk,
    /// The full experiment sizes.
    Paper,
}

impl Scale {
    pub const DESK_SWEEP_MAX_PX: u32 = 4_096;
    pub const DESK_MAX_N: usize = 1_000;

    pub fn max_n(self) -> usize {
        match self {
            Scale::Desk => Self::DESK_MAX_N,
            Scale::Paper => usize::MAX,
        }
    }

    pub fn sweep_limits(self) -> SweepLimits {
        match self {
            Scale::Desk => SweepLimits { max_px: Self::DESK_SWEEP_MAX_PX, max_cells: 16_384 },
            Scale::Paper => SweepLimits { max_px: u32::MAX, max_cells: 30_000 },
        }
    }
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scale::Desk => "desk",
            Scale::Paper => "paper",
        })
    }
}

impl FromStr for Scale {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "desk" => Ok(Scale::Desk),
            "paper" => Ok(Scale::Paper),
            _ => Err(BenchError::Validation(format!("unknown scale `{s}` (expected desk or paper)"))),
        }
    }
}
