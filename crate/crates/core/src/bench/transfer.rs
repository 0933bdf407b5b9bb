use serde::{Deserialize, Serialize};

use super::{BenchError, BenchReport, CsvRow, Environment};
use crate::device_model::DeviceProfile;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferRow {
    pub bytes: u64,
    pub mean_us: f64,
    pub rate_gbps: f64,
}

impl CsvRow for TransferRow {
    fn header() -> Vec<&'static str> {
        vec!["bytes", "mean_us", "rate_gbps"]
    }

    fn record(&self) -> Vec<String> {
        vec![self.bytes.to_string(), format!("{:.3}", self.mean_us), format!("{:.6}", self.rate_gbps)]
    }
}

/// Buffer-to-buffer copy rate for every size `min, min + step, ... <= max`.
///
/// Simulated copies are deterministic, so the mean over `repeats` equals a single run; the
/// argument keeps the interface shared with measured backends.
pub fn run_transfer_baseline(
    profile: &DeviceProfile,
    min: u64,
    max: u64,
    step: u64,
    repeats: u32,
    seed: u64,
) -> Result<BenchReport<TransferRow>, BenchError> {
    if min == 0 || min > max || step == 0 || repeats == 0 {
        return Err(BenchError::Validation(format!(
            "transfer sweep needs 1 <= min <= max, step >= 1 and repeats >= 1 (got min={min} max={max} step={step} repeats={repeats})"
        )));
    }
    let mut rows = Vec::new();
    let mut bytes = min;
    while bytes <= max {
        let us = profile.transfer_time(bytes)?;
        let total: f64 = (0..repeats).map(|_| us as f64).sum();
        let mean_us = total / f64::from(repeats);
        // Rate from the unrounded curve so sub-microsecond copies still report a rate.
        rows.push(TransferRow { bytes, mean_us, rate_gbps: profile.transfer_rate_gbps(bytes)? });
        match bytes.checked_add(step) {
            Some(next) => bytes = next,
            None => break,
        }
    }
    Ok(BenchReport::new("transfer", Environment::simulated(&profile.name, seed), rows))
}
