//! Snapshots of the working set's ensemble analytics.

use std::sync::Arc;

use floodstream_core::kernels::{composite_map, overlap_histogram, Accumulator};
use floodstream_core::streaming::simulate_plan;
use floodstream_core::{
    AccumulationGrid, AlgorithmVariant, DeviceProfile, OverlapHistogram, PipelineRunReport, RasterSurface, StreamPlan,
    SurfaceId,
};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// What a snapshot is computed from.
#[derive(Debug, Clone, Default)]
pub struct SnapshotInput {
    pub version: u64,
    pub surfaces: Vec<Arc<RasterSurface>>,
    /// Store dims; the grid of an empty selection still covers them.
    pub dims: Option<(u32, u32)>,
}

/// Immutable analytics for one working-set version.
#[derive(Debug, Clone, Serialize)]
pub struct Snapshot {
    pub version: u64,
    pub surface_ids: Vec<SurfaceId>,
    pub width: u32,
    pub height: u32,
    pub n_inputs: u32,
    pub max_count: u32,
    /// SHA-256 of the counts as little-endian u32s.
    pub grid_digest: String,
    pub histogram: OverlapHistogram,
    /// Where to fetch the composite; absent when the store is empty.
    pub composite: Option<String>,
    pub report: Option<PipelineRunReport>,
    pub report_error: Option<String>,
    #[serde(skip)]
    pub composite_png: Option<Arc<Vec<u8>>>,
    #[serde(skip)]
    pub surfaces: Vec<Arc<RasterSurface>>,
}

pub fn grid_digest(grid: &AccumulationGrid) -> String {
    let mut h = Sha256::new();
    for c in grid.counts() {
        h.update(c.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Accumulates the selection through the streaming engine's kernel and simulates its timing.
pub fn compute_snapshot(input: &SnapshotInput, profile: &DeviceProfile, variant: AlgorithmVariant) -> Snapshot {
    let (width, height) = input.dims.unwrap_or((0, 0));
    let plan = StreamPlan::new(variant, input.surfaces.len(), width, height);
    let mut acc = Accumulator::new(width, height, plan.kernel);
    for s in &input.surfaces {
        acc.add(s).expect("store keeps surfaces at the same dims");
    }
    let grid = acc.finish();
    let (report, report_error) = if input.surfaces.is_empty() {
        (None, None)
    } else {
        match simulate_plan(&plan, profile) {
            Ok(r) => (Some(r), None),
            Err(e) => (None, Some(e.to_string())),
        }
    };
    let composite_png = input.dims.map(|_| {
        let image = composite_map(&grid, None).expect("no basemap");
        Arc::new(image.to_png())
    });
    Snapshot {
        version: input.version,
        surface_ids: input.surfaces.iter().map(|s| s.id().clone()).collect(),
        width,
        height,
        n_inputs: grid.n_inputs(),
        max_count: grid.max_count(),
        grid_digest: grid_digest(&grid),
        histogram: overlap_histogram(&grid),
        composite: composite_png.as_ref().map(|_| format!("/composite.png?version={}", input.version)),
        report,
        report_error,
        composite_png,
        surfaces: input.surfaces.clone(),
    }
}
