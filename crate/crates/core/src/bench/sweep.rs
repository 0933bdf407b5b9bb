use image::{Rgba, RgbaImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{BenchError, CsvRow};
use crate::device_model::DeviceProfile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub start: u32,
    pub step: u32,
    pub max: u32,
    #[serde(default = "one")]
    pub repeats: u32,
}

fn one() -> u32 {
    1
}

impl SweepSpec {
    pub fn new(start: u32, step: u32, max: u32) -> Self {
        SweepSpec { start, step, max, repeats: 1 }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if self.start == 0 || self.step == 0 || self.max < self.start || self.repeats == 0 {
            return Err(BenchError::Validation(format!(
                "sweep needs start >= 1, step >= 1, max >= start and repeats >= 1 (got {self:?})"
            )));
        }
        Ok(())
    }

    /// Samples per axis.
    pub fn side(&self) -> usize {
        ((self.max - self.start) / self.step + 1) as usize
    }

    pub fn cells(&self) -> usize {
        self.side() * self.side()
    }

    pub fn dim(&self, index: usize) -> u32 {
        self.start + index as u32 * self.step
    }
}

/// Caps that keep a sweep within a time budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepLimits {
    pub max_px: u32,
    pub max_cells: usize,
}

/// Transform rates over a square grid of image sizes.
///
/// Column `c` holds width `start + c * step`, row `r` holds height `start + r * step`; row 0 is
/// the bottom of the rendered map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateMap {
    pub spec: SweepSpec,
    /// Row-major from the bottom row: `rates[r * side + c]`.
    pub rates: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateCell {
    pub width: u32,
    pub height: u32,
    pub rate_gbps: f64,
}

impl CsvRow for RateCell {
    fn header() -> Vec<&'static str> {
        vec!["width", "height", "rate_gbps"]
    }

    fn record(&self) -> Vec<String> {
        vec![self.width.to_string(), self.height.to_string(), self.rate_gbps.to_string()]
    }
}

impl RateMap {
    pub fn from_rates(spec: SweepSpec, rates: Vec<f64>) -> Result<Self, BenchError> {
        spec.validate()?;
        if rates.len() != spec.cells() {
            return Err(BenchError::Validation(format!(
                "rate map needs {} cells, got {}",
                spec.cells(),
                rates.len()
            )));
        }
        Ok(RateMap { spec, rates })
    }

    pub fn side(&self) -> usize {
        self.spec.side()
    }

    pub fn rate(&self, col: usize, row: usize) -> f64 {
        self.rates[row * self.side() + col]
    }

    pub fn cells(&self) -> impl Iterator<Item = RateCell> + '_ {
        let side = self.side();
        self.rates.iter().enumerate().map(move |(i, &rate_gbps)| RateCell {
            width: self.spec.dim(i % side),
            height: self.spec.dim(i / side),
            rate_gbps,
        })
    }

    /// `width,height,rate_gbps` rows, readable back as a calibration table.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> csv::Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(RateCell::header())?;
        for cell in self.cells() {
            wtr.write_record(cell.record())?;
        }
        wtr.flush()?;
        Ok(())
    }
}

pub fn run_transform_sweep(profile: &DeviceProfile, spec: SweepSpec, limits: SweepLimits) -> Result<RateMap, BenchError> {
    spec.validate()?;
    if spec.max > limits.max_px {
        return Err(BenchError::Validation(format!(
            "sweep max {} px exceeds the {} px cap; use a smaller max or the paper scale",
            spec.max, limits.max_px
        )));
    }
    if spec.cells() > limits.max_cells {
        return Err(BenchError::Validation(format!(
            "sweep has {} cells, cap is {}; use a smaller max or a larger step",
            spec.cells(),
            limits.max_cells
        )));
    }
    let side = spec.side();
    let bpp = profile.bytes_per_pixel;
    let rates = (0..spec.cells())
        .into_par_iter()
        .map(|i| {
            let (w, h) = (spec.dim(i % side), spec.dim(i / side));
            let us = profile.transform_time(w, h, bpp)?;
            let bytes = profile.image_bytes(w, h) as f64;
            // Averaging deterministic repeats changes nothing; a zero-length transform falls
            // back to the model rate.
            if us == 0 {
                Ok(profile.transform_rate_gbps(w, h, bpp)?)
            } else {
                Ok(bytes / us as f64 / 1_000.0)
            }
        })
        .collect::<Result<Vec<f64>, BenchError>>()?;
    RateMap::from_rates(spec, rates)
}

/// Colour of one rate: 32 grey steps from white (under 1 GB/s) to black (31 GB/s and up),
/// blue above 32 GB/s.
pub fn ramp_colour(rate_gbps: f64) -> Rgba<u8> {
    if rate_gbps > 32.0 {
        return Rgba([0, 0, 255, 255]);
    }
    let k = rate_gbps.max(0.0).floor().min(31.0);
    let grey = (255.0 * (1.0 - k / 31.0)).round() as u8;
    Rgba([grey, grey, grey, 255])
}

/// One pixel per cell, smallest image size at the bottom left.
pub fn render_rate_map(map: &RateMap) -> RgbaImage {
    let side = map.side() as u32;
    RgbaImage::from_fn(side, side, |x, y| ramp_colour(map.rate(x as usize, (side - 1 - y) as usize)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_grid_sizes() {
        assert_eq!(SweepSpec::new(128, 128, 16_384).cells(), 16_384);
        assert_eq!(SweepSpec::new(100, 100, 16_300).cells(), 26_569);
        assert_eq!(SweepSpec::new(100, 100, 100).cells(), 1);
    }

    #[test]
    fn sweep_layout_and_caps() {
        let p = DeviceProfile::synthetic_default();
        let map = run_transform_sweep(&p, SweepSpec::new(128, 128, 512), super::super::Scale::Desk.sweep_limits()).unwrap();
        assert_eq!(map.rates.len(), 16);
        let expected = p.image_bytes(384, 256) as f64 / p.transform_time(384, 256, 1).unwrap() as f64 / 1e3;
        assert_eq!(map.rate(2, 1), expected);
        let first = map.cells().next().unwrap();
        assert_eq!((first.width, first.height), (128, 128));

        let err = run_transform_sweep(&p, SweepSpec::new(128, 128, 8192), super::super::Scale::Desk.sweep_limits()).unwrap_err();
        assert!(err.to_string().contains("smaller max"));
        assert!(run_transform_sweep(&p, SweepSpec::new(10, 0, 20), super::super::Scale::Paper.sweep_limits()).is_err());
    }

    #[test]
    fn golden_rendering() {
        // Bottom row: 0.5, 31.5; top row: 40, 15.2.
        let map = RateMap::from_rates(SweepSpec::new(1, 1, 2), vec![0.5, 31.5, 40.0, 15.2]).unwrap();
        let img = render_rate_map(&map);
        #[rustfmt::skip]
        let golden: [u8; 16] = [
            0, 0, 255, 255,     132, 132, 132, 255,
            255, 255, 255, 255, 0, 0, 0, 255,
        ];
        assert_eq!(img.as_raw().as_slice(), &golden);
        assert_eq!(ramp_colour(32.0), Rgba([0, 0, 0, 255]));
        assert_eq!(ramp_colour(0.99), Rgba([255, 255, 255, 255]));
    }

    #[test]
    fn csv_feeds_back_as_calibration() {
        let p = DeviceProfile::synthetic_default();
        let map = run_transform_sweep(&p, SweepSpec::new(256, 256, 768), super::super::Scale::Desk.sweep_limits()).unwrap();
        let mut out = Vec::new();
        map.write_csv(&mut out).unwrap();
        let table = crate::device_model::RateTable::from_csv(out.as_slice()).unwrap();
        assert_eq!(table.rate_gbps(512, 768), Some(map.rate(1, 2)));
    }
}
