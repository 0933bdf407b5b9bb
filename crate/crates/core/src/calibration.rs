//! Fitting a [`DeviceProfile`] to published timings.
//!
//! The fit runs in a fixed order, each step using only what the previous steps produced:
//!
//! 1. kernel rates from the kernel runs;
//! 2. transfer-curve knots from the streaming rows' efficiencies (efficiency is measured against
//!    a plain buffer copy of the same size, so `bytes * n / (total * efficiency)` is the copy rate
//!    at that size), plus the ramp start and plateau knots;
//! 3. the isolated transform rate per image size from the one-pair final rows;
//! 4. the overlapped transform rate from the two-pair final rows, and a contention slowdown from
//!    two-pair rows whose resident slots exceed the contention threshold;
//! 5. the hidden host copy rate from the one-pair initial rows.
//!
//! Rows not used by any step (two-pair initial rows, for example) still appear in the residual
//! report as predictions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::device_model::{
    round_half_up, ContentionModel, CurveKnot, DeviceError, DeviceProfile, KernelVariant, Micros, RatePoint,
    RateTable, TransferCurve, TransformModel,
};
use crate::streaming::{closed_form_report, AlgorithmVariant, StreamError, StreamPlan};

/// The targets the shipped paper profile was fitted to.
pub const PAPER_TARGETS_JSON: &str = include_str!("../data/paper_targets.json");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelRun {
    pub variant: KernelVariant,
    pub width: u32,
    pub height: u32,
    pub iterations: u64,
    pub total_us: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamRun {
    #[serde(with = "variant_label")]
    pub variant: AlgorithmVariant,
    pub width: u32,
    pub height: u32,
    pub n: usize,
    pub total_us: f64,
    pub efficiency: f64,
}

mod variant_label {
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::streaming::AlgorithmVariant;

    pub fn serialize<S: Serializer>(v: &AlgorithmVariant, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(v.label())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<AlgorithmVariant, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Calibration table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTargets {
    pub name: String,
    #[serde(default = "one")]
    pub bytes_per_pixel: u32,
    #[serde(default = "default_dim_limit")]
    pub image_dim_limit: u32,
    pub transfer_plateau: Option<CurveKnot>,
    #[serde(default)]
    pub transfer_ramp_start: Option<CurveKnot>,
    #[serde(default)]
    pub kernel_runs: Vec<KernelRun>,
    #[serde(default)]
    pub stream_runs: Vec<StreamRun>,
    /// Resident-slot byte budget above which two-pair transforms are treated as contended.
    #[serde(default)]
    pub contention_slot_bytes: Option<u64>,
    #[serde(default)]
    pub run_jitter: f64,
    #[serde(default)]
    pub warmup_us: Micros,
}

fn one() -> u32 {
    1
}

fn default_dim_limit() -> u32 {
    16_384
}

impl CalibrationTargets {
    pub fn from_json(json: &str) -> Result<Self, CalibrationError> {
        serde_json::from_str(json).map_err(|e| CalibrationError::Parse(e.to_string()))
    }

    pub fn paper() -> Self {
        Self::from_json(PAPER_TARGETS_JSON).expect("shipped targets parse")
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error("insufficient targets: {0}")]
    Insufficient(String),
    #[error("inconsistent targets: {}", .0.join("; "))]
    Inconsistent(Vec<String>),
    #[error("calibration table: {0}")]
    Parse(String),
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error(transparent)]
    Stream(#[from] StreamError),
}

/// How well the fitted profile reproduces one streaming row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamResidual {
    pub row: String,
    pub target_total_us: f64,
    pub predicted_total_us: Micros,
    pub total_rel_error: f64,
    pub target_efficiency: f64,
    pub predicted_efficiency: f64,
    pub fitted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelResidual {
    pub variant: KernelVariant,
    pub target_avg_us: f64,
    pub predicted_avg_us: Micros,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub streams: Vec<StreamResidual>,
    pub kernels: Vec<KernelResidual>,
}

impl ResidualReport {
    pub fn max_total_rel_error(&self) -> f64 {
        self.streams.iter().map(|r| r.total_rel_error.abs()).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub profile: DeviceProfile,
    pub residuals: ResidualReport,
}

fn row_label(r: &StreamRun) -> String {
    format!("{} {}x{} n={}", r.variant, r.width, r.height, r.n)
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Averages values grouped by image dimensions.
fn per_dims(values: impl IntoIterator<Item = ((u32, u32), f64)>) -> BTreeMap<(u32, u32), f64> {
    let mut groups: BTreeMap<(u32, u32), Vec<f64>> = BTreeMap::new();
    for (dims, v) in values {
        groups.entry(dims).or_default().push(v);
    }
    groups.into_iter().map(|(d, vs)| (d, mean(&vs))).collect()
}

fn rate_table(rates: &BTreeMap<(u32, u32), f64>) -> TransformModel {
    TransformModel::Csv(RateTable::new(
        rates.iter().map(|(&(width, height), &rate_gbps)| RatePoint { width, height, rate_gbps }).collect(),
    ))
}

pub fn calibrate_profile(targets: &CalibrationTargets) -> Result<Calibration, CalibrationError> {
    let plateau = targets
        .transfer_plateau
        .ok_or_else(|| CalibrationError::Insufficient("no transfer plateau".into()))?;
    if targets.kernel_runs.is_empty() {
        return Err(CalibrationError::Insufficient("no kernel runs".into()));
    }
    if !targets.stream_runs.iter().any(|r| r.variant == AlgorithmVariant::OneBufferFinal) {
        return Err(CalibrationError::Insufficient("no one-pair final streaming rows".into()));
    }

    let bpp = targets.bytes_per_pixel.max(1);
    let bytes_of = |w: u32, h: u32| u64::from(w) * u64::from(h) * u64::from(bpp);
    let mut problems = Vec::new();

    // 1. Kernels.
    let mut kernel_rates = BTreeMap::new();
    for run in &targets.kernel_runs {
        if run.iterations == 0 || run.total_us.is_nan() || run.total_us <= 0.0 {
            problems.push(format!("kernel {}: needs iterations >= 1 and a positive total", run.variant));
            continue;
        }
        let rate = bytes_of(run.width, run.height) as f64 * run.iterations as f64 / run.total_us * 1e6;
        kernel_rates.insert(run.variant, rate);
    }
    let image1_rate = kernel_rates.get(&KernelVariant::Image1).copied();
    if image1_rate.is_none() && problems.is_empty() {
        return Err(CalibrationError::Insufficient("no image1 kernel run".into()));
    }

    for r in &targets.stream_runs {
        if r.n == 0 || r.total_us.is_nan() || r.total_us <= 0.0 || !(r.efficiency > 0.0 && r.efficiency <= 1.0) {
            problems.push(format!("{}: needs n >= 1, a positive total and efficiency in (0, 1]", row_label(r)));
        }
    }
    if !problems.is_empty() {
        return Err(CalibrationError::Inconsistent(problems));
    }

    // 2. Transfer curve.
    let baselines = per_dims(targets.stream_runs.iter().map(|r| {
        let rate = bytes_of(r.width, r.height) as f64 * r.n as f64 / (r.total_us * r.efficiency) / 1_000.0;
        ((r.width, r.height), rate)
    }));
    let mut knots: BTreeMap<u64, f64> = BTreeMap::new();
    if let Some(start) = targets.transfer_ramp_start {
        knots.insert(start.bytes, start.rate_gbps);
    }
    for (&(w, h), &rate) in &baselines {
        let bytes = bytes_of(w, h);
        if knots.insert(bytes, rate).is_some() {
            problems.push(format!("two baseline knots at {bytes} bytes"));
        }
    }
    if knots.insert(plateau.bytes, plateau.rate_gbps).is_some() {
        problems.push(format!("baseline knot collides with the plateau at {} bytes", plateau.bytes));
    }
    if !problems.is_empty() {
        return Err(CalibrationError::Inconsistent(problems));
    }
    let transfer_curve =
        TransferCurve::new(knots.into_iter().map(|(bytes, rate_gbps)| CurveKnot { bytes, rate_gbps }).collect())?;

    let mut profile = DeviceProfile {
        name: targets.name.clone(),
        bytes_per_pixel: bpp,
        transfer_curve,
        transform: TransformModel::Csv(RateTable::new(Vec::new())),
        overlapped_transform: None,
        kernel_rates,
        hidden_host_copy_rate_gbps: 1.0,
        image_dim_limit: targets.image_dim_limit,
        contention: None,
        allow_transform_compute_overlap: false,
        warmup_us: targets.warmup_us,
        run_jitter: targets.run_jitter,
    };
    let image1_rate = image1_rate.expect("checked above");
    let kernel_us = |w: u32, h: u32| round_half_up(bytes_of(w, h) as f64 / (image1_rate / 1e6)) as f64;
    let copy_us = |p: &DeviceProfile, w: u32, h: u32| p.transfer_time(bytes_of(w, h)).map(|t| t as f64);

    // 3. Isolated transform.
    let mut isolated = Vec::new();
    for r in targets.stream_runs.iter().filter(|r| r.variant == AlgorithmVariant::OneBufferFinal) {
        let m = r.total_us / r.n as f64 - copy_us(&profile, r.width, r.height)? - kernel_us(r.width, r.height);
        if m <= 0.0 {
            problems.push(format!("{}: copy and kernel alone exceed the measured time", row_label(r)));
            continue;
        }
        isolated.push(((r.width, r.height), bytes_of(r.width, r.height) as f64 / m / 1_000.0));
    }
    if !problems.is_empty() {
        return Err(CalibrationError::Inconsistent(problems));
    }
    let isolated = per_dims(isolated);
    profile.transform = rate_table(&isolated);

    // 4. Overlapped transform and contention.
    let contended = |w: u32, h: u32| targets.contention_slot_bytes.is_some_and(|t| 2 * bytes_of(w, h) > t);
    let mut overlapped = Vec::new();
    let mut contended_rates = Vec::new();
    for r in targets.stream_runs.iter().filter(|r| r.variant == AlgorithmVariant::TwoBufferFinal) {
        let c = copy_us(&profile, r.width, r.height)?;
        let p = kernel_us(r.width, r.height);
        // Transform-bound steady state: the first copy, then one transform and kernel per item.
        let m = (r.total_us - c) / r.n as f64 - p;
        let cycle_copy_bound = r.total_us / r.n as f64 <= c * 1.0001;
        if m <= 0.0 || cycle_copy_bound {
            problems.push(format!("{}: copy-bound row cannot determine the transform rate", row_label(r)));
            continue;
        }
        let rate = bytes_of(r.width, r.height) as f64 / m / 1_000.0;
        if contended(r.width, r.height) {
            contended_rates.push(((r.width, r.height), rate));
        } else {
            overlapped.push(((r.width, r.height), rate));
        }
    }
    if !problems.is_empty() {
        return Err(CalibrationError::Inconsistent(problems));
    }
    let overlapped = per_dims(overlapped);
    if !overlapped.is_empty() {
        profile.overlapped_transform = Some(rate_table(&overlapped));
    }
    if let Some(threshold) = targets.contention_slot_bytes {
        if !contended_rates.is_empty() {
            let Some(model) = profile.overlapped_transform.clone() else {
                return Err(CalibrationError::Insufficient(
                    "contended two-pair rows need an uncontended two-pair row".into(),
                ));
            };
            let slowdowns: Vec<f64> = contended_rates
                .iter()
                .map(|&((w, h), rate)| model.rate_gbps(w, h, bpp).map(|free| free / rate))
                .collect::<Result<_, _>>()?;
            let slowdown = mean(&slowdowns);
            if slowdown <= 1.0 {
                problems.push(format!("contended rows are not slower than uncontended ones (factor {slowdown:.3})"));
                return Err(CalibrationError::Inconsistent(problems));
            }
            profile.contention =
                Some(ContentionModel { enabled: true, slot_bytes_threshold: threshold, transform_slowdown: slowdown });
        }
    }

    // 5. Hidden host copy.
    let mut host_rates = Vec::new();
    for r in targets.stream_runs.iter().filter(|r| r.variant == AlgorithmVariant::OneBufferInitial) {
        let m = profile.slotted_transform_time(r.width, r.height, 1)? as f64;
        let h = r.total_us / r.n as f64 - copy_us(&profile, r.width, r.height)? - m - kernel_us(r.width, r.height);
        if h <= 0.0 {
            problems.push(format!("{}: leaves no time for the host copy", row_label(r)));
            continue;
        }
        host_rates.push(bytes_of(r.width, r.height) as f64 / h / 1_000.0);
    }
    if !problems.is_empty() {
        return Err(CalibrationError::Inconsistent(problems));
    }
    if !host_rates.is_empty() {
        profile.hidden_host_copy_rate_gbps = mean(&host_rates);
    } else if targets.stream_runs.iter().any(|r| r.variant.writes_image_directly()) {
        return Err(CalibrationError::Insufficient("initial-variant rows need a one-pair initial row".into()));
    }
    profile.validate()?;

    let residuals = residuals(&profile, targets)?;
    Ok(Calibration { profile, residuals })
}

/// Compares `profile`'s predictions against every target row.
pub fn residuals(profile: &DeviceProfile, targets: &CalibrationTargets) -> Result<ResidualReport, CalibrationError> {
    let mut streams = Vec::new();
    for r in &targets.stream_runs {
        let report = closed_form_report(&StreamPlan::new(r.variant, r.n, r.width, r.height), profile)?;
        streams.push(StreamResidual {
            row: row_label(r),
            target_total_us: r.total_us,
            predicted_total_us: report.total_time_us,
            total_rel_error: report.total_time_us as f64 / r.total_us - 1.0,
            target_efficiency: r.efficiency,
            predicted_efficiency: report.efficiency,
            fitted: r.variant != AlgorithmVariant::TwoBufferInitial,
        });
    }
    let kernels = targets
        .kernel_runs
        .iter()
        .map(|k| {
            Ok(KernelResidual {
                variant: k.variant,
                target_avg_us: k.total_us / k.iterations as f64,
                predicted_avg_us: profile.kernel_time(k.variant, k.width, k.height)?,
            })
        })
        .collect::<Result<_, DeviceError>>()?;
    Ok(ResidualReport { streams, kernels })
}
