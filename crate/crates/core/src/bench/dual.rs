use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{BenchError, BenchReport, CsvRow, Environment, Scale};
use crate::device_model::{DeviceError, DeviceProfile, Micros};
use crate::streaming::{simulate_plan, AlgorithmVariant, StreamError, StreamPlan};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowStatus {
    Ok,
    /// The image size exceeds the device's limit.
    Unsupported,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualRow {
    pub variant: AlgorithmVariant,
    pub n: usize,
    pub width: u32,
    pub height: u32,
    pub status: RowStatus,
    pub total_us: Option<Micros>,
    pub rate_gbps: Option<f64>,
    pub efficiency: Option<f64>,
    /// Mean of the per-run samples.
    pub mean_sample_us: Option<f64>,
    /// Start-up latency is a visible share of this run.
    pub warmup: bool,
    /// The fitted resource-contention model slowed this run's transforms.
    pub contention_model: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub samples: Vec<f64>,
}

impl CsvRow for DualRow {
    fn header() -> Vec<&'static str> {
        vec!["variant", "n", "width", "height", "total_us", "rate_gbps", "efficiency", "status"]
    }

    fn record(&self) -> Vec<String> {
        let opt = |v: Option<String>| v.unwrap_or_default();
        vec![
            self.variant.label().to_string(),
            self.n.to_string(),
            self.width.to_string(),
            self.height.to_string(),
            opt(self.total_us.map(|t| t.to_string())),
            opt(self.rate_gbps.map(|r| format!("{r:.4}"))),
            opt(self.efficiency.map(|e| format!("{e:.6}"))),
            match self.status {
                RowStatus::Ok => "ok".into(),
                RowStatus::Unsupported => "unsupported".into(),
            },
        ]
    }
}

/// Runs `n <= this` count as warm-up affected when the profile has a start-up latency.
const WARMUP_N: usize = 10;

/// Every (dims, variant, N) combination, dims outermost, each with `repeats` per-run samples.
///
/// Simulated totals are deterministic; each sample multiplies the total by
/// `1 + run_jitter * z` with `z` standard normal, drawn from a stream keyed by seed and row.
pub fn run_dual_buffer_suite(
    profile: &DeviceProfile,
    variants: &[AlgorithmVariant],
    dims: &[(u32, u32)],
    ns: &[usize],
    repeats: u32,
    seed: u64,
    scale: Scale,
) -> Result<BenchReport<DualRow>, BenchError> {
    if variants.is_empty() || dims.is_empty() || ns.is_empty() {
        return Err(BenchError::Validation("dual-buffer suite needs variants, dims and N values".into()));
    }
    if repeats == 0 {
        return Err(BenchError::Validation("repeats must be >= 1".into()));
    }
    if let Some(&n) = ns.iter().find(|&&n| n == 0 || n > scale.max_n()) {
        return Err(BenchError::Validation(if n == 0 {
            "N must be >= 1".to_string()
        } else {
            format!("N = {n} exceeds the {scale} scale cap of {}; use the paper scale", scale.max_n())
        }));
    }
    let mut plans = Vec::new();
    for &(w, h) in dims {
        for &variant in variants {
            for &n in ns {
                plans.push(StreamPlan::new(variant, n, w, h));
            }
        }
    }
    let rows = plans
        .par_iter()
        .enumerate()
        .map(|(index, plan)| run_row(profile, plan, index as u64, repeats, seed))
        .collect::<Result<Vec<_>, BenchError>>()?;
    Ok(BenchReport::new("dual", Environment::simulated(&profile.name, seed), rows))
}

fn run_row(profile: &DeviceProfile, plan: &StreamPlan, index: u64, repeats: u32, seed: u64) -> Result<DualRow, BenchError> {
    let mut row = DualRow {
        variant: plan.variant,
        n: plan.n,
        width: plan.width,
        height: plan.height,
        status: RowStatus::Ok,
        total_us: None,
        rate_gbps: None,
        efficiency: None,
        mean_sample_us: None,
        warmup: profile.warmup_us > 0 && plan.n <= WARMUP_N,
        contention_model: false,
        samples: Vec::new(),
    };
    let report = match simulate_plan(plan, profile) {
        Ok(r) => r,
        Err(StreamError::Device(DeviceError::UnsupportedImageSize { .. })) => {
            row.status = RowStatus::Unsupported;
            return Ok(row);
        }
        Err(e) => return Err(e.into()),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let total = report.total_time_us as f64;
    let samples: Vec<f64> = (0..repeats)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            total * (1.0 + profile.run_jitter * z)
        })
        .collect();
    row.total_us = Some(report.total_time_us);
    row.rate_gbps = Some(report.transfer_rate_gbps);
    row.efficiency = Some(report.efficiency);
    row.mean_sample_us = Some(samples.iter().sum::<f64>() / samples.len() as f64);
    row.contention_model = report.contention_model_applied;
    row.samples = samples;
    Ok(row)
}
