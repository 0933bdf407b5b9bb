use serde::{Deserialize, Serialize};

use super::{BenchError, BenchReport, CsvRow, Environment};
use crate::device_model::{round_half_up, DeviceProfile, KernelVariant, Micros};

/// Summary key under which the comparison reports the image-over-buffer speedup, in percent.
pub const SPEEDUP_KEY: &str = "speedup_pct";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelRow {
    pub variant: KernelVariant,
    pub avg_us: Micros,
    pub total_us: Micros,
}

impl CsvRow for KernelRow {
    fn header() -> Vec<&'static str> {
        vec!["variant", "avg_us", "total_us"]
    }

    fn record(&self) -> Vec<String> {
        vec![self.variant.to_string(), self.avg_us.to_string(), self.total_us.to_string()]
    }
}

/// Runs each kernel variant `iterations` times over a `width`x`height` surface.
///
/// The summary holds the speedup of the fastest image kernel over the fastest buffer kernel,
/// `(buffer - image) / buffer`, computed from the per-run averages.
pub fn run_kernel_comparison(
    profile: &DeviceProfile,
    width: u32,
    height: u32,
    iterations: u64,
    seed: u64,
) -> Result<BenchReport<KernelRow>, BenchError> {
    if iterations == 0 {
        return Err(BenchError::Validation("kernel comparison needs iterations >= 1".into()));
    }
    profile.check_dims(width, height)?;
    let mut rows = Vec::new();
    for variant in KernelVariant::ALL {
        if !profile.kernel_rates.contains_key(&variant) {
            continue;
        }
        let exact = profile.kernel_time_exact(variant, width, height)?;
        let avg_us = round_half_up(exact);
        let total_us = if iterations == 1 { avg_us } else { round_half_up(exact * iterations as f64) };
        rows.push(KernelRow { variant, avg_us, total_us });
    }
    let fastest = |image: bool| rows.iter().filter(|r| r.variant.is_image() == image).map(|r| r.avg_us).min();
    let mut report = BenchReport::new("kernels", Environment::simulated(&profile.name, seed), rows.clone());
    if let (Some(img), Some(buf)) = (fastest(true), fastest(false)) {
        report.summary.insert(SPEEDUP_KEY.into(), 100.0 * (buf as f64 - img as f64) / buf as f64);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_profile_kernel_table() {
        let p = DeviceProfile::paper_calibrated();
        let r = run_kernel_comparison(&p, 3712, 4416, 10_000, 0).unwrap();
        let got: Vec<(KernelVariant, Micros, Micros)> = r.rows.iter().map(|k| (k.variant, k.avg_us, k.total_us)).collect();
        assert_eq!(
            got,
            vec![
                (KernelVariant::Image1, 679, 6_791_433),
                (KernelVariant::Buffer1, 960, 9_602_299),
                (KernelVariant::Image2, 686, 6_861_058),
                (KernelVariant::Buffer2, 807, 8_074_998),
            ]
        );
        let speedup = r.summary[SPEEDUP_KEY];
        assert!((speedup - 15.86).abs() < 0.01, "{speedup}");
    }

    #[test]
    fn single_iteration_total_is_the_average() {
        let p = DeviceProfile::paper_calibrated();
        let r = run_kernel_comparison(&p, 3712, 4416, 1, 0).unwrap();
        assert!(r.rows.iter().all(|k| k.total_us == k.avg_us));
        assert!(run_kernel_comparison(&p, 3712, 4416, 0, 0).is_err());
    }
}
