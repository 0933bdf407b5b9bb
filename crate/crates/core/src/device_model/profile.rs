use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{round_half_up, DeviceError, Micros};

/// Largest transfer size the curve must cover (1 GiB).
pub const MAX_TRANSFER_BYTES: u64 = 1 << 30;

/// Bytes per microsecond in one GB/s.
const BYTES_PER_US_PER_GBPS: f64 = 1_000.0;

const PAPER_PROFILE_JSON: &str = include_str!("../../data/paper-hd7950.json");

/// The accumulation kernel flavours. They compute identical results and differ in modeled cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelVariant {
    /// Image input, image pair for intermediates, dimensions queried from the image.
    Image1,
    /// As `Image1` but with the dimensions passed as kernel arguments.
    Image2,
    /// Buffer input and a single read-write accumulation buffer.
    Buffer1,
    /// Buffer input and ping-pong accumulation buffers.
    Buffer2,
}

impl KernelVariant {
    pub const ALL: [KernelVariant; 4] = [
        KernelVariant::Image1,
        KernelVariant::Buffer1,
        KernelVariant::Image2,
        KernelVariant::Buffer2,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            KernelVariant::Image1 => "image1",
            KernelVariant::Image2 => "image2",
            KernelVariant::Buffer1 => "buffer1",
            KernelVariant::Buffer2 => "buffer2",
        }
    }

    pub fn is_image(self) -> bool {
        matches!(self, KernelVariant::Image1 | KernelVariant::Image2)
    }
}

impl fmt::Display for KernelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for KernelVariant {
    type Err = DeviceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "image1" => Ok(KernelVariant::Image1),
            "image2" => Ok(KernelVariant::Image2),
            "buffer1" => Ok(KernelVariant::Buffer1),
            "buffer2" => Ok(KernelVariant::Buffer2),
            _ => Err(DeviceError::UnknownKernelVariant(s.to_string())),
        }
    }
}

/// One point of the host-to-device copy rate curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveKnot {
    pub bytes: u64,
    pub rate_gbps: f64,
}

/// Piecewise-linear copy rate as a function of transfer size, constant outside the knots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TransferCurve {
    knots: Vec<CurveKnot>,
}

impl TransferCurve {
    pub fn new(mut knots: Vec<CurveKnot>) -> Result<Self, DeviceError> {
        knots.sort_by_key(|k| k.bytes);
        let curve = TransferCurve { knots };
        curve.validate()?;
        Ok(curve)
    }

    /// Linear ramp from 0.5 GB/s at 64 KiB up to `plateau_gbps` at 4 MiB.
    pub fn default_ramp(plateau_gbps: f64) -> Self {
        TransferCurve {
            knots: vec![
                CurveKnot { bytes: 64 * 1024, rate_gbps: 0.5 },
                CurveKnot { bytes: 4 * 1024 * 1024, rate_gbps: plateau_gbps },
            ],
        }
    }

    /// A curve with the same rate everywhere.
    pub fn flat(rate_gbps: f64) -> Self {
        TransferCurve { knots: vec![CurveKnot { bytes: 1, rate_gbps }] }
    }

    pub fn knots(&self) -> &[CurveKnot] {
        &self.knots
    }

    fn validate(&self) -> Result<(), DeviceError> {
        if self.knots.is_empty() {
            return Err(DeviceError::InvalidProfile("transfer curve has no knots".into()));
        }
        for pair in self.knots.windows(2) {
            if pair[0].bytes == pair[1].bytes {
                return Err(DeviceError::InvalidProfile(format!(
                    "transfer curve has two knots at {} bytes",
                    pair[0].bytes
                )));
            }
        }
        for k in &self.knots {
            check_rate("transfer curve rate", k.rate_gbps)?;
        }
        Ok(())
    }

    /// Rate in GB/s for a transfer of `bytes`.
    pub fn rate_gbps(&self, bytes: u64) -> Result<f64, DeviceError> {
        if bytes == 0 || bytes > MAX_TRANSFER_BYTES {
            return Err(DeviceError::SizeOutsideDomain { bytes });
        }
        let first = self.knots[0];
        let last = self.knots[self.knots.len() - 1];
        if bytes <= first.bytes {
            return Ok(first.rate_gbps);
        }
        if bytes >= last.bytes {
            return Ok(last.rate_gbps);
        }
        let upper = self.knots.partition_point(|k| k.bytes < bytes);
        let (lo, hi) = (self.knots[upper - 1], self.knots[upper]);
        let t = (bytes - lo.bytes) as f64 / (hi.bytes - lo.bytes) as f64;
        Ok(lo.rate_gbps + t * (hi.rate_gbps - lo.rate_gbps))
    }
}

/// Measured (or fitted) transform rate at one image size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub width: u32,
    pub height: u32,
    pub rate_gbps: f64,
}

/// Parameters of the synthetic banded transform model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTransform {
    pub base_rate_gbps: f64,
    pub band_boost: f64,
    pub alignment_bytes: u32,
    pub small_image_px: f64,
}

impl Default for SyntheticTransform {
    fn default() -> Self {
        SyntheticTransform {
            base_rate_gbps: 6.0,
            band_boost: 4.0,
            alignment_bytes: 256,
            small_image_px: (1u64 << 20) as f64,
        }
    }
}

impl SyntheticTransform {
    /// `R0 * (1 + B * aligned(pitch)) * n / (n + n0)`.
    pub fn rate_gbps(&self, width: u32, height: u32, bpp: u32) -> f64 {
        let pitch = u64::from(width) * u64::from(bpp);
        let aligned = if pitch % u64::from(self.alignment_bytes.max(1)) == 0 { 1.0 } else { 0.0 };
        let pixels = f64::from(width) * f64::from(height);
        let saturation = pixels / (pixels + self.small_image_px);
        self.base_rate_gbps * (1.0 + self.band_boost * aligned) * saturation
    }
}

/// Transform rates looked up from calibration points.
///
/// A complete rectilinear grid is interpolated bilinearly (clamped at the edges); any other
/// point set falls back to the nearest point, which keeps every knot exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "RateTableRepr", into = "RateTableRepr")]
pub struct RateTable {
    points: Vec<RatePoint>,
    grid: Option<Grid>,
}

#[derive(Debug, Clone, PartialEq)]
struct Grid {
    widths: Vec<u32>,
    heights: Vec<u32>,
    /// Row-major by width index: `rates[wi * heights.len() + hi]`.
    rates: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RateTableRepr {
    points: Vec<RatePoint>,
}

impl From<RateTableRepr> for RateTable {
    fn from(repr: RateTableRepr) -> Self {
        RateTable::new(repr.points)
    }
}

impl From<RateTable> for RateTableRepr {
    fn from(table: RateTable) -> Self {
        RateTableRepr { points: table.points }
    }
}

impl RateTable {
    pub fn new(points: Vec<RatePoint>) -> Self {
        let grid = Grid::build(&points);
        RateTable { points, grid }
    }

    /// Parses a `width,height,rate_gbps` CSV document.
    pub fn from_csv<R: std::io::Read>(reader: R) -> Result<Self, DeviceError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| DeviceError::InvalidProfile(format!("calibration csv: {e}")))?
            .clone();
        let expected = ["width", "height", "rate_gbps"];
        if headers.iter().map(str::trim).ne(expected.iter().copied()) {
            return Err(DeviceError::InvalidProfile(format!(
                "calibration csv header must be `width,height,rate_gbps`, got `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut points = Vec::new();
        for (line, record) in rdr.deserialize::<RatePoint>().enumerate() {
            let point = record.map_err(|e| {
                DeviceError::InvalidProfile(format!("calibration csv row {}: {e}", line + 2))
            })?;
            points.push(point);
        }
        Ok(RateTable::new(points))
    }

    pub fn points(&self) -> &[RatePoint] {
        &self.points
    }

    pub fn rate_gbps(&self, width: u32, height: u32) -> Option<f64> {
        if let Some(grid) = &self.grid {
            return Some(grid.bilinear(width, height));
        }
        let (w, h) = (f64::from(width), f64::from(height));
        self.points
            .iter()
            .min_by(|a, b| {
                let da = (f64::from(a.width) - w).powi(2) + (f64::from(a.height) - h).powi(2);
                let db = (f64::from(b.width) - w).powi(2) + (f64::from(b.height) - h).powi(2);
                da.total_cmp(&db)
            })
            .map(|p| p.rate_gbps)
    }
}

impl Grid {
    fn build(points: &[RatePoint]) -> Option<Grid> {
        let mut widths: Vec<u32> = points.iter().map(|p| p.width).collect();
        let mut heights: Vec<u32> = points.iter().map(|p| p.height).collect();
        widths.sort_unstable();
        widths.dedup();
        heights.sort_unstable();
        heights.dedup();
        if widths.len() < 2 || heights.len() < 2 || widths.len() * heights.len() != points.len() {
            return None;
        }
        let mut rates = vec![f64::NAN; points.len()];
        for p in points {
            let wi = widths.binary_search(&p.width).ok()?;
            let hi = heights.binary_search(&p.height).ok()?;
            let slot = &mut rates[wi * heights.len() + hi];
            if !slot.is_nan() {
                return None;
            }
            *slot = p.rate_gbps;
        }
        Some(Grid { widths, heights, rates })
    }

    fn bracket(axis: &[u32], v: u32) -> (usize, usize, f64) {
        if v <= axis[0] {
            return (0, 0, 0.0);
        }
        let last = axis.len() - 1;
        if v >= axis[last] {
            return (last, last, 0.0);
        }
        let hi = axis.partition_point(|&a| a < v);
        if axis[hi] == v {
            return (hi, hi, 0.0);
        }
        let lo = hi - 1;
        let t = f64::from(v - axis[lo]) / f64::from(axis[hi] - axis[lo]);
        (lo, hi, t)
    }

    fn bilinear(&self, width: u32, height: u32) -> f64 {
        let rows = self.heights.len();
        let (w0, w1, tw) = Self::bracket(&self.widths, width);
        let (h0, h1, th) = Self::bracket(&self.heights, height);
        let at = |wi: usize, hi: usize| self.rates[wi * rows + hi];
        let lo = at(w0, h0) + th * (at(w0, h1) - at(w0, h0));
        let hi = at(w1, h0) + th * (at(w1, h1) - at(w1, h0));
        lo + tw * (hi - lo)
    }
}

/// Buffer-to-image transform rate model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum TransformModel {
    Synthetic(SyntheticTransform),
    Csv(RateTable),
}

impl TransformModel {
    pub fn rate_gbps(&self, width: u32, height: u32, bpp: u32) -> Result<f64, DeviceError> {
        match self {
            TransformModel::Synthetic(model) => Ok(model.rate_gbps(width, height, bpp)),
            TransformModel::Csv(table) => table.rate_gbps(width, height).ok_or_else(|| {
                DeviceError::InvalidProfile("csv transform model has no points".into())
            }),
        }
    }

    fn validate(&self, what: &str) -> Result<(), DeviceError> {
        match self {
            TransformModel::Synthetic(m) => {
                check_rate(what, m.base_rate_gbps)?;
                if !(m.band_boost.is_finite() && m.band_boost >= 0.0) {
                    return Err(DeviceError::InvalidProfile(format!("{what}: band_boost must be >= 0")));
                }
                if m.alignment_bytes == 0 {
                    return Err(DeviceError::InvalidProfile(format!("{what}: alignment_bytes must be >= 1")));
                }
                if !(m.small_image_px.is_finite() && m.small_image_px >= 0.0) {
                    return Err(DeviceError::InvalidProfile(format!("{what}: small_image_px must be >= 0")));
                }
            }
            TransformModel::Csv(table) => {
                if table.points.is_empty() {
                    return Err(DeviceError::InvalidProfile(format!("{what}: csv model has no points")));
                }
                for p in &table.points {
                    check_rate(what, p.rate_gbps)?;
                }
            }
        }
        Ok(())
    }
}

/// Resource-contention hypothesis: once the resident image slots of a variant exceed a byte
/// budget, its transforms slow down by a fixed factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContentionModel {
    pub enabled: bool,
    pub slot_bytes_threshold: u64,
    pub transform_slowdown: f64,
}

impl ContentionModel {
    pub fn applies(&self, image_slots: u8, image_bytes: u64) -> bool {
        self.enabled && u64::from(image_slots) * image_bytes > self.slot_bytes_threshold
    }
}

fn default_bpp() -> u32 {
    1
}

/// Cost model of a virtual device with one transfer, one transform and one compute channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub name: String,
    #[serde(default = "default_bpp")]
    pub bytes_per_pixel: u32,
    pub transfer_curve: TransferCurve,
    pub transform: TransformModel,
    /// Transform rate when the other buffer-image pair is streaming at the same time.
    /// Falls back to `transform` when absent.
    #[serde(default)]
    pub overlapped_transform: Option<TransformModel>,
    /// Effective processing rate in bytes per second.
    pub kernel_rates: BTreeMap<KernelVariant, f64>,
    /// Client-side duplicate copy made by the direct image-write path.
    pub hidden_host_copy_rate_gbps: f64,
    pub image_dim_limit: u32,
    #[serde(default)]
    pub contention: Option<ContentionModel>,
    #[serde(default)]
    pub allow_transform_compute_overlap: bool,
    #[serde(default)]
    pub warmup_us: Micros,
    /// Relative standard deviation applied to repeated simulated runs by the benchmark harness.
    #[serde(default)]
    pub run_jitter: f64,
}

impl DeviceProfile {
    /// The uncalibrated default: ramped transfer curve with a 5.07 GB/s plateau and the banded
    /// synthetic transform model.
    pub fn synthetic_default() -> Self {
        DeviceProfile {
            name: "synthetic".into(),
            bytes_per_pixel: 1,
            transfer_curve: TransferCurve::default_ramp(5.07),
            transform: TransformModel::Synthetic(SyntheticTransform::default()),
            overlapped_transform: None,
            kernel_rates: reference_kernel_rates(),
            hidden_host_copy_rate_gbps: 4.35,
            image_dim_limit: 16_384,
            contention: None,
            allow_transform_compute_overlap: false,
            warmup_us: 0,
            run_jitter: 0.0,
        }
    }

    /// The shipped profile fitted to the reference hardware's published timings.
    pub fn paper_calibrated() -> Self {
        Self::from_json(PAPER_PROFILE_JSON).expect("shipped paper profile is valid")
    }

    pub fn from_json(json: &str) -> Result<Self, DeviceError> {
        let profile: DeviceProfile = serde_json::from_str(json)
            .map_err(|e| DeviceError::InvalidProfile(format!("profile json: {e}")))?;
        profile.validate()?;
        Ok(profile)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("profile serializes")
    }

    pub fn validate(&self) -> Result<(), DeviceError> {
        if self.name.trim().is_empty() {
            return Err(DeviceError::InvalidProfile("profile name is empty".into()));
        }
        if self.bytes_per_pixel == 0 {
            return Err(DeviceError::InvalidProfile("bytes_per_pixel must be >= 1".into()));
        }
        if self.image_dim_limit == 0 {
            return Err(DeviceError::InvalidProfile("image_dim_limit must be >= 1".into()));
        }
        self.transfer_curve.validate()?;
        self.transform.validate("transform")?;
        if let Some(t) = &self.overlapped_transform {
            t.validate("overlapped_transform")?;
        }
        if self.kernel_rates.is_empty() {
            return Err(DeviceError::InvalidProfile("kernel_rates is empty".into()));
        }
        for (variant, rate) in &self.kernel_rates {
            check_rate(&format!("kernel rate {variant}"), *rate)?;
        }
        check_rate("hidden_host_copy_rate_gbps", self.hidden_host_copy_rate_gbps)?;
        if let Some(c) = &self.contention {
            check_rate("contention transform_slowdown", c.transform_slowdown)?;
        }
        if !(self.run_jitter.is_finite() && self.run_jitter >= 0.0) {
            return Err(DeviceError::InvalidProfile("run_jitter must be finite and >= 0".into()));
        }
        Ok(())
    }

    pub fn image_bytes(&self, width: u32, height: u32) -> u64 {
        u64::from(width) * u64::from(height) * u64::from(self.bytes_per_pixel)
    }

    pub fn check_dims(&self, width: u32, height: u32) -> Result<(), DeviceError> {
        if width == 0 || height == 0 || width > self.image_dim_limit || height > self.image_dim_limit {
            return Err(DeviceError::UnsupportedImageSize {
                width,
                height,
                limit: self.image_dim_limit,
            });
        }
        Ok(())
    }

    pub fn transfer_rate_gbps(&self, bytes: u64) -> Result<f64, DeviceError> {
        self.transfer_curve.rate_gbps(bytes)
    }

    /// Host-to-device buffer copy time.
    pub fn transfer_time(&self, bytes: u64) -> Result<Micros, DeviceError> {
        let rate = self.transfer_curve.rate_gbps(bytes)?;
        Ok(round_half_up(bytes as f64 / (rate * BYTES_PER_US_PER_GBPS)))
    }

    /// Client-side duplicate copy of the direct image-write path.
    pub fn host_copy_time(&self, bytes: u64) -> Micros {
        round_half_up(bytes as f64 / (self.hidden_host_copy_rate_gbps * BYTES_PER_US_PER_GBPS))
    }

    pub fn transform_rate_gbps(&self, width: u32, height: u32, bpp: u32) -> Result<f64, DeviceError> {
        self.check_dims(width, height)?;
        self.transform.rate_gbps(width, height, bpp)
    }

    /// Buffer-to-image transform time for an image transformed in isolation.
    pub fn transform_time(&self, width: u32, height: u32, bpp: u32) -> Result<Micros, DeviceError> {
        let rate = self.transform_rate_gbps(width, height, bpp)?;
        let bytes = u64::from(width) * u64::from(height) * u64::from(bpp);
        Ok(round_half_up(bytes as f64 / (rate * BYTES_PER_US_PER_GBPS)))
    }

    /// Transform rate for a variant that keeps `image_slots` buffer-image pairs resident.
    /// Returns the rate and whether the contention model kicked in.
    pub fn slotted_transform_rate_gbps(
        &self,
        width: u32,
        height: u32,
        image_slots: u8,
    ) -> Result<(f64, bool), DeviceError> {
        self.check_dims(width, height)?;
        let bpp = self.bytes_per_pixel;
        let model = match (&self.overlapped_transform, image_slots >= 2) {
            (Some(overlapped), true) => overlapped,
            _ => &self.transform,
        };
        let mut rate = model.rate_gbps(width, height, bpp)?;
        let contended = self
            .contention
            .is_some_and(|c| c.applies(image_slots, self.image_bytes(width, height)));
        if contended {
            rate /= self.contention.map_or(1.0, |c| c.transform_slowdown);
        }
        Ok((rate, contended))
    }

    pub fn slotted_transform_time(
        &self,
        width: u32,
        height: u32,
        image_slots: u8,
    ) -> Result<Micros, DeviceError> {
        let (rate, _) = self.slotted_transform_rate_gbps(width, height, image_slots)?;
        let bytes = self.image_bytes(width, height);
        Ok(round_half_up(bytes as f64 / (rate * BYTES_PER_US_PER_GBPS)))
    }

    pub fn kernel_rate(&self, variant: KernelVariant) -> Result<f64, DeviceError> {
        self.kernel_rates
            .get(&variant)
            .copied()
            .ok_or(DeviceError::NoKernelRate(variant))
    }

    /// Unrounded kernel duration in microseconds.
    pub fn kernel_time_exact(&self, variant: KernelVariant, width: u32, height: u32) -> Result<f64, DeviceError> {
        let rate_per_us = self.kernel_rate(variant)? / 1e6;
        Ok(self.image_bytes(width, height) as f64 / rate_per_us)
    }

    pub fn kernel_time(&self, variant: KernelVariant, width: u32, height: u32) -> Result<Micros, DeviceError> {
        Ok(round_half_up(self.kernel_time_exact(variant, width, height)?))
    }

    /// Toggles the contention model, if the profile carries one.
    pub fn with_contention(mut self, enabled: bool) -> Self {
        if let Some(c) = self.contention.as_mut() {
            c.enabled = enabled;
        }
        self
    }
}

/// Kernel rates of the reference accumulation kernels: 10,000 runs over a 3712x4416 surface
/// took 6.79 s (image1), 9.60 s (buffer1), 6.86 s (image2) and 8.07 s (buffer2).
fn reference_kernel_rates() -> BTreeMap<KernelVariant, f64> {
    let bytes = 3712.0 * 4416.0 * 10_000.0;
    [
        (KernelVariant::Image1, 6_791_433.0),
        (KernelVariant::Buffer1, 9_602_299.0),
        (KernelVariant::Image2, 6_861_058.0),
        (KernelVariant::Buffer2, 8_074_998.0),
    ]
    .into_iter()
    .map(|(v, total_us)| (v, bytes / total_us * 1e6))
    .collect()
}

fn check_rate(what: &str, rate: f64) -> Result<(), DeviceError> {
    if rate.is_finite() && rate > 0.0 {
        Ok(())
    } else {
        Err(DeviceError::InvalidProfile(format!("{what} must be positive and finite, got {rate}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_profile(rate: f64) -> DeviceProfile {
        DeviceProfile { transfer_curve: TransferCurve::flat(rate), ..DeviceProfile::synthetic_default() }
    }

    #[test]
    fn transfer_time_at_flat_plateau() {
        let p = flat_profile(5.07);
        // 67108864 / 5070 = 13236.459...
        assert_eq!(p.transfer_time(67_108_864).unwrap(), 13_236);
        // 3712 * 4416 = 16392192; 16392192 / 5070 = 3233.17...
        assert_eq!(p.transfer_time(3712 * 4416).unwrap(), 3_233);
        assert_eq!(p.transfer_time(4096).unwrap(), p.transfer_time(4096).unwrap());
    }

    #[test]
    fn transfer_domain_is_checked() {
        let p = DeviceProfile::synthetic_default();
        assert!(matches!(p.transfer_time(0), Err(DeviceError::SizeOutsideDomain { bytes: 0 })));
        assert!(p.transfer_time(MAX_TRANSFER_BYTES).is_ok());
        let err = p.transfer_time(MAX_TRANSFER_BYTES + 1).unwrap_err();
        assert!(err.to_string().contains("size outside curve domain"));
        assert!(p.transfer_time(1).is_ok());
    }

    #[test]
    fn default_ramp_shape() {
        let c = TransferCurve::default_ramp(5.07);
        assert_eq!(c.rate_gbps(1).unwrap(), 0.5);
        assert_eq!(c.rate_gbps(65_536).unwrap(), 0.5);
        assert_eq!(c.rate_gbps(4 << 20).unwrap(), 5.07);
        assert_eq!(c.rate_gbps(64 << 20).unwrap(), 5.07);
        let mid = (65_536 + (4u64 << 20)) / 2;
        assert!((c.rate_gbps(mid).unwrap() - (0.5 + 5.07) / 2.0).abs() < 1e-9);
    }

    #[test]
    fn synthetic_transform_bands() {
        let p = DeviceProfile::synthetic_default();
        // 256 B pitch is aligned: 6 * (1 + 4) * n / (n + 2^20).
        let n = 256.0 * 128.0;
        let aligned = p.transform_rate_gbps(256, 128, 1).unwrap();
        assert!((aligned - 30.0 * n / (n + 1_048_576.0)).abs() < 1e-12);
        // 32768 B at 0.90909 GB/s = 36.04 us
        assert_eq!(p.transform_time(256, 128, 1).unwrap(), 36);
        // 128 B pitch is not: 16384 B at 0.0923 GB/s = 177.49 us
        let n = 128.0 * 128.0;
        let unaligned = p.transform_rate_gbps(128, 128, 1).unwrap();
        assert!((unaligned - 6.0 * n / (n + 1_048_576.0)).abs() < 1e-12);
        assert_eq!(p.transform_time(128, 128, 1).unwrap(), 177);
        // Two bytes per pixel doubles the pitch into the band.
        assert!(p.transform_rate_gbps(128, 128, 2).unwrap() > 4.0 * unaligned);
    }

    #[test]
    fn transform_rejects_oversized_images() {
        let p = DeviceProfile::synthetic_default();
        let err = p.transform_time(14_848, 17_664, 1).unwrap_err();
        assert!(err.to_string().contains("unsupported image size"));
        assert!(p.transform_time(0, 10, 1).is_err());
        assert!(p.transform_time(16_384, 16_384, 1).is_ok());
    }

    #[test]
    fn csv_model_is_exact_at_knots() {
        let pts = vec![
            RatePoint { width: 100, height: 100, rate_gbps: 2.0 },
            RatePoint { width: 100, height: 200, rate_gbps: 4.0 },
            RatePoint { width: 200, height: 100, rate_gbps: 6.0 },
            RatePoint { width: 200, height: 200, rate_gbps: 8.0 },
        ];
        let grid = RateTable::new(pts.clone());
        for p in &pts {
            assert_eq!(grid.rate_gbps(p.width, p.height), Some(p.rate_gbps));
        }
        assert_eq!(grid.rate_gbps(150, 150), Some(5.0));
        assert_eq!(grid.rate_gbps(50, 500), Some(4.0));

        let scattered = RateTable::new(pts[..3].to_vec());
        for p in &pts[..3] {
            assert_eq!(scattered.rate_gbps(p.width, p.height), Some(p.rate_gbps));
        }
        assert_eq!(scattered.rate_gbps(190, 90), Some(6.0));
    }

    #[test]
    fn csv_parsing() {
        let doc = "width,height,rate_gbps\n128,128,3.5\n256,128,7.25\n";
        let t = RateTable::from_csv(doc.as_bytes()).unwrap();
        assert_eq!(t.points().len(), 2);
        assert_eq!(t.rate_gbps(256, 128), Some(7.25));
        assert!(RateTable::from_csv("w,h,r\n1,1,1\n".as_bytes()).is_err());
        assert!(RateTable::from_csv("width,height,rate_gbps\n1,x,1\n".as_bytes()).is_err());
    }

    #[test]
    fn kernel_time_unit_rate() {
        let mut p = DeviceProfile::synthetic_default();
        p.kernel_rates.insert(KernelVariant::Buffer2, 1e6);
        assert_eq!(p.kernel_time(KernelVariant::Buffer2, 10, 10).unwrap(), 100);
        p.kernel_rates.remove(&KernelVariant::Image2);
        assert!(matches!(p.kernel_time(KernelVariant::Image2, 10, 10), Err(DeviceError::NoKernelRate(_))));
        assert!("image3".parse::<KernelVariant>().is_err());
        assert_eq!("Buffer1".parse::<KernelVariant>().unwrap(), KernelVariant::Buffer1);
    }

    #[test]
    fn validation_rejects_bad_rates() {
        let mut p = DeviceProfile::synthetic_default();
        p.hidden_host_copy_rate_gbps = 0.0;
        assert!(p.validate().is_err());
        let mut p = DeviceProfile::synthetic_default();
        p.kernel_rates.insert(KernelVariant::Image1, f64::INFINITY);
        assert!(p.validate().is_err());
        let mut p = DeviceProfile::synthetic_default();
        p.image_dim_limit = 0;
        assert!(p.validate().is_err());
        assert!(TransferCurve::new(vec![]).is_err());
        assert!(TransferCurve::new(vec![
            CurveKnot { bytes: 10, rate_gbps: 1.0 },
            CurveKnot { bytes: 10, rate_gbps: 2.0 },
        ])
        .is_err());
    }

    #[test]
    fn profile_json_shape() {
        let p = DeviceProfile::synthetic_default();
        let v: serde_json::Value = serde_json::from_str(&p.to_json_pretty()).unwrap();
        assert_eq!(v["transform"]["mode"], "synthetic");
        assert!(v["transfer_curve"].as_array().unwrap()[0].get("rate_gbps").is_some());
        assert!(v["kernel_rates"].get("image1").is_some());
        let back = DeviceProfile::from_json(&p.to_json_pretty()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn contention_threshold() {
        let c = ContentionModel { enabled: true, slot_bytes_threshold: 100, transform_slowdown: 2.0 };
        assert!(!c.applies(1, 100));
        assert!(c.applies(2, 51));
        assert!(!ContentionModel { enabled: false, ..c }.applies(2, 51));
    }
}
