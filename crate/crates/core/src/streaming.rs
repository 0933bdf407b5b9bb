//! The four streaming variants.
//!
//! Every variant moves `n` surfaces to the device and folds each into the accumulation grid
//! with a serial chain of kernels. They differ in how many buffer-image pairs receive data
//! (one or two) and in how data reaches the image:
//!
//! * initial variants write the image directly, which costs a hidden client-side copy and a
//!   device-side linear copy before the transform;
//! * final variants copy into a dedicated device buffer and transform it separately.
//!
//! With one pair every iteration runs to completion before the next upload starts. With two
//! pairs an upload only waits for the data previously held by its own pair to be consumed.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::device_model::{
    simulate, CostModel, DeviceError, DeviceProfile, GraphError, KernelVariant, Micros, NodeId, OpKind, OpNode,
    ScheduleGraph, Timeline,
};
use crate::kernels::{AccumulationGrid, Accumulator, KernelError};
use crate::raster::RasterSurface;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgorithmVariant {
    OneBufferInitial,
    TwoBufferInitial,
    OneBufferFinal,
    TwoBufferFinal,
}

impl AlgorithmVariant {
    pub const ALL: [AlgorithmVariant; 4] = [
        AlgorithmVariant::OneBufferInitial,
        AlgorithmVariant::TwoBufferInitial,
        AlgorithmVariant::OneBufferFinal,
        AlgorithmVariant::TwoBufferFinal,
    ];

    /// Buffer-image pairs receiving data.
    pub fn image_slots(self) -> u8 {
        match self {
            AlgorithmVariant::OneBufferInitial | AlgorithmVariant::OneBufferFinal => 1,
            AlgorithmVariant::TwoBufferInitial | AlgorithmVariant::TwoBufferFinal => 2,
        }
    }

    /// Whether uploads go through the direct image-write path.
    pub fn writes_image_directly(self) -> bool {
        matches!(self, AlgorithmVariant::OneBufferInitial | AlgorithmVariant::TwoBufferInitial)
    }

    pub fn label(self) -> &'static str {
        match self {
            AlgorithmVariant::OneBufferInitial => "1b-initial",
            AlgorithmVariant::TwoBufferInitial => "2b-initial",
            AlgorithmVariant::OneBufferFinal => "1b-final",
            AlgorithmVariant::TwoBufferFinal => "2b-final",
        }
    }
}

impl fmt::Display for AlgorithmVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for AlgorithmVariant {
    type Err = StreamError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .trim()
            .to_ascii_lowercase()
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect();
        match key.as_str() {
            "1binitial" | "1binit" | "onebufferinitial" => Ok(AlgorithmVariant::OneBufferInitial),
            "2binitial" | "2binit" | "twobufferinitial" => Ok(AlgorithmVariant::TwoBufferInitial),
            "1bfinal" | "onebufferfinal" => Ok(AlgorithmVariant::OneBufferFinal),
            "2bfinal" | "twobufferfinal" => Ok(AlgorithmVariant::TwoBufferFinal),
            _ => Err(StreamError::UnknownVariant(s.to_string())),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StreamError {
    #[error("empty job")]
    EmptyJob,
    #[error("unknown algorithm variant `{0}`")]
    UnknownVariant(String),
    #[error("cost lists differ in length: c={c}, m={m}, p={p}")]
    LengthMismatch { c: usize, m: usize, p: usize },
    #[error("surface {index} is {actual_width}x{actual_height}, expected {width}x{height}")]
    SurfaceSizeMismatch { index: usize, width: u32, height: u32, actual_width: u32, actual_height: u32 },
    #[error("total time must be positive")]
    ZeroTotalTime,
    #[error("target frame rate must be at least 1")]
    ZeroFrameRate,
    #[error("cost table has {available} items, schedule needs {needed}")]
    MissingItemCosts { available: usize, needed: usize },
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// What to stream, without the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamPlan {
    pub variant: AlgorithmVariant,
    pub n: usize,
    pub width: u32,
    pub height: u32,
    #[serde(default = "default_kernel")]
    pub kernel: KernelVariant,
}

fn default_kernel() -> KernelVariant {
    KernelVariant::Image1
}

impl StreamPlan {
    pub fn new(variant: AlgorithmVariant, n: usize, width: u32, height: u32) -> Self {
        StreamPlan { variant, n, width, height, kernel: KernelVariant::Image1 }
    }
}

/// A plan plus the surfaces to stream. Surfaces are cycled when `plan.n` exceeds their count.
#[derive(Debug, Clone, Copy)]
pub struct StreamJob<'a> {
    pub plan: StreamPlan,
    pub profile: &'a DeviceProfile,
    pub surfaces: &'a [RasterSurface],
}

/// Durations attributed to one streamed item.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemCost {
    /// Client-side duplicate copy (direct image-write variants only).
    #[serde(default)]
    pub host_copy_us: Micros,
    pub copy_us: Micros,
    pub transform_us: Micros,
    pub process_us: Micros,
}

impl ItemCost {
    pub fn new(copy_us: Micros, transform_us: Micros, process_us: Micros) -> Self {
        ItemCost { host_copy_us: 0, copy_us, transform_us, process_us }
    }

    /// Time the item occupies the transfer channel.
    pub fn transfer_us(&self) -> Micros {
        self.host_copy_us + self.copy_us
    }
}

/// Prices schedule nodes from explicit per-item costs instead of a device profile.
/// Clears are free.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemCostTable(pub Vec<ItemCost>);

impl CostModel for ItemCostTable {
    fn duration(&self, node: &OpNode) -> Result<Micros, DeviceError> {
        if node.kind == OpKind::Clear {
            return Ok(0);
        }
        let item = node
            .item
            .and_then(|i| self.0.get(i))
            .ok_or_else(|| DeviceError::Unsatisfiable { node: node.id, reason: "no cost for item".into() })?;
        Ok(match node.kind {
            OpKind::HostCopy => item.host_copy_us,
            OpKind::BufferCopy => item.copy_us,
            OpKind::BufferToImage => item.transform_us,
            OpKind::Kernel => item.process_us,
            OpKind::Clear => 0,
        })
    }
}

/// Builds the operation graph of `plan` for a device configured like `profile`.
pub fn build_schedule(plan: &StreamPlan, profile: &DeviceProfile) -> Result<ScheduleGraph, StreamError> {
    build_schedule_with(plan, profile.bytes_per_pixel, profile.allow_transform_compute_overlap)
}

fn build_schedule_with(
    plan: &StreamPlan,
    bytes_per_pixel: u32,
    transform_compute_overlap: bool,
) -> Result<ScheduleGraph, StreamError> {
    if plan.n == 0 {
        return Err(StreamError::EmptyJob);
    }
    let variant = plan.variant;
    let slots = usize::from(variant.image_slots());
    let bytes = u64::from(plan.width) * u64::from(plan.height) * u64::from(bytes_per_pixel);
    let (w, h) = (plan.width, plan.height);
    let per_item = if variant.writes_image_directly() { 4 } else { 3 };
    let mut nodes = Vec::with_capacity(2 + plan.n * per_item);
    let mut next_id = 0u32;
    let mut fresh = || {
        let id = NodeId(next_id);
        next_id += 1;
        id
    };

    // Both accumulation images are cleared before timing starts.
    let clears = [fresh(), fresh()];
    for id in clears {
        nodes.push(OpNode::new(id, OpKind::Clear, bytes).with_dims(w, h).with_kernel(plan.kernel));
    }

    let mut transforms: Vec<NodeId> = Vec::with_capacity(plan.n);
    let mut kernels: Vec<NodeId> = Vec::with_capacity(plan.n);
    for i in 0..plan.n {
        let prev = i.checked_sub(1);
        // Item whose pair this item reuses.
        let reused = i.checked_sub(slots);

        let mut upload_deps: Vec<NodeId> = Vec::new();
        if i == 0 {
            upload_deps.extend(clears);
        }
        match variant {
            AlgorithmVariant::OneBufferInitial => upload_deps.extend(prev.map(|p| kernels[p])),
            AlgorithmVariant::OneBufferFinal => {
                upload_deps.extend(prev.map(|p| transforms[p]));
                upload_deps.extend(prev.map(|p| kernels[p]));
            }
            AlgorithmVariant::TwoBufferInitial => upload_deps.extend(reused.map(|r| kernels[r])),
            AlgorithmVariant::TwoBufferFinal => upload_deps.extend(reused.map(|r| transforms[r])),
        }

        let copy_deps = if variant.writes_image_directly() {
            let host = fresh();
            let mut node = OpNode::new(host, OpKind::HostCopy, bytes).for_item(i).with_deps(upload_deps);
            node.warmup = i == 0;
            nodes.push(node);
            vec![host]
        } else {
            upload_deps
        };
        let copy = fresh();
        let mut copy_node = OpNode::new(copy, OpKind::BufferCopy, bytes).for_item(i).with_deps(copy_deps);
        copy_node.warmup = i == 0 && !variant.writes_image_directly();
        nodes.push(copy_node);

        let transform = fresh();
        let mut transform_deps = vec![copy];
        transform_deps.extend(reused.map(|r| kernels[r]));
        if !transform_compute_overlap {
            transform_deps.extend(prev.map(|p| kernels[p]));
        }
        transform_deps.sort_unstable();
        transform_deps.dedup();
        nodes.push(
            OpNode::new(transform, OpKind::BufferToImage, bytes)
                .with_dims(w, h)
                .for_item(i)
                .with_slots(variant.image_slots())
                .with_deps(transform_deps),
        );

        let kernel = fresh();
        let mut kernel_deps = vec![transform];
        kernel_deps.extend(prev.map(|p| kernels[p]));
        if i == 0 {
            kernel_deps.extend(clears);
        }
        nodes.push(
            OpNode::new(kernel, OpKind::Kernel, bytes)
                .with_dims(w, h)
                .for_item(i)
                .with_kernel(plan.kernel)
                .with_slots(variant.image_slots())
                .with_deps(kernel_deps),
        );
        transforms.push(transform);
        kernels.push(kernel);
    }
    Ok(ScheduleGraph::new(nodes)?)
}

/// Closed-form pipeline times.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClosedForm {
    pub t_dual_us: Micros,
    pub t_single_us: Micros,
}

/// `t_dual = max(c1 + Σm + Σp, Σc + m_n + p_n)` and `t_single = Σ(c + m + p)`.
pub fn closed_form_times(c: &[Micros], m: &[Micros], p: &[Micros]) -> Result<ClosedForm, StreamError> {
    if c.len() != m.len() || c.len() != p.len() {
        return Err(StreamError::LengthMismatch { c: c.len(), m: m.len(), p: p.len() });
    }
    let n = c.len();
    if n == 0 {
        return Err(StreamError::EmptyJob);
    }
    let (sc, sm, sp): (Micros, Micros, Micros) = (c.iter().sum(), m.iter().sum(), p.iter().sum());
    let t_dual = (c[0] + sm + sp).max(sc + m[n - 1] + p[n - 1]);
    Ok(ClosedForm { t_dual_us: t_dual, t_single_us: sc + sm + sp })
}

/// Fraction of the total spent on the baseline copies: `Σc / total`.
pub fn efficiency(copy_us: &[Micros], total_us: Micros) -> Result<f64, StreamError> {
    if total_us == 0 {
        return Err(StreamError::ZeroTotalTime);
    }
    Ok(copy_us.iter().sum::<Micros>() as f64 / total_us as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MakespanSource {
    ClosedForm,
    Simulated,
}

/// Timings of one streamed run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineRunReport {
    pub variant: AlgorithmVariant,
    pub n: usize,
    pub width: u32,
    pub height: u32,
    pub total_time_us: Micros,
    pub per_item: Vec<ItemCost>,
    pub transfer_rate_gbps: f64,
    pub efficiency: f64,
    pub makespan_source: MakespanSource,
    /// Closed-form times over the per-item costs; copies include the hidden host copy.
    pub closed_form: ClosedForm,
    /// True when the resource-contention hypothesis model slowed the transforms.
    pub contention_model_applied: bool,
}

impl PipelineRunReport {
    pub fn payload_bytes(&self, bytes_per_pixel: u32) -> u64 {
        self.n as u64 * u64::from(self.width) * u64::from(self.height) * u64::from(bytes_per_pixel)
    }

    pub const CSV_HEADER: [&'static str; 7] =
        ["variant", "n", "width", "height", "total_us", "rate_gbps", "efficiency"];

    pub fn csv_record(&self) -> [String; 7] {
        [
            self.variant.label().to_string(),
            self.n.to_string(),
            self.width.to_string(),
            self.height.to_string(),
            self.total_time_us.to_string(),
            format!("{:.4}", self.transfer_rate_gbps),
            format!("{:.6}", self.efficiency),
        ]
    }
}

/// Writes reports as `variant,n,width,height,total_us,rate_gbps,efficiency` CSV.
pub fn write_reports_csv<W: std::io::Write>(reports: &[PipelineRunReport], out: W) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(PipelineRunReport::CSV_HEADER)?;
    for r in reports {
        wtr.write_record(r.csv_record())?;
    }
    wtr.flush()?;
    Ok(())
}

fn report_from_timeline(
    plan: &StreamPlan,
    bytes_per_pixel: u32,
    graph: &ScheduleGraph,
    timeline: &Timeline,
    contention: bool,
) -> Result<PipelineRunReport, StreamError> {
    let mut per_item = vec![ItemCost::default(); plan.n];
    for node in graph.nodes() {
        let (Some(i), Some(span)) = (node.item, timeline.span(node.id)) else { continue };
        let d = span.duration();
        let cost = &mut per_item[i];
        match node.kind {
            OpKind::HostCopy => cost.host_copy_us += d,
            OpKind::BufferCopy => cost.copy_us += d,
            OpKind::BufferToImage => cost.transform_us += d,
            OpKind::Kernel => cost.process_us += d,
            OpKind::Clear => {}
        }
    }
    let total = timeline.timed_span();
    let copies: Vec<Micros> = per_item.iter().map(|c| c.copy_us).collect();
    let transfers: Vec<Micros> = per_item.iter().map(ItemCost::transfer_us).collect();
    let transforms: Vec<Micros> = per_item.iter().map(|c| c.transform_us).collect();
    let processes: Vec<Micros> = per_item.iter().map(|c| c.process_us).collect();
    let closed_form = closed_form_times(&transfers, &transforms, &processes)?;
    let bytes = plan.n as f64 * f64::from(plan.width) * f64::from(plan.height) * f64::from(bytes_per_pixel);
    let (rate, eff) = if total > 0 {
        (bytes / total as f64 / 1_000.0, efficiency(&copies, total)?)
    } else {
        (0.0, 0.0)
    };
    Ok(PipelineRunReport {
        variant: plan.variant,
        n: plan.n,
        width: plan.width,
        height: plan.height,
        total_time_us: total,
        per_item,
        transfer_rate_gbps: rate,
        efficiency: eff,
        makespan_source: MakespanSource::Simulated,
        closed_form,
        contention_model_applied: contention,
    })
}

fn contention_applies(plan: &StreamPlan, profile: &DeviceProfile) -> bool {
    profile.contention.is_some_and(|c| {
        c.applies(plan.variant.image_slots(), profile.image_bytes(plan.width, plan.height))
    })
}

/// Simulates `plan` on `profile` without touching any data.
pub fn simulate_plan(plan: &StreamPlan, profile: &DeviceProfile) -> Result<PipelineRunReport, StreamError> {
    profile.check_dims(plan.width, plan.height)?;
    let graph = build_schedule(plan, profile)?;
    let timeline = simulate(profile, &graph)?;
    report_from_timeline(plan, profile.bytes_per_pixel, &graph, &timeline, contention_applies(plan, profile))
}

/// Simulates `plan` with explicit per-item costs.
pub fn simulate_costs(plan: &StreamPlan, costs: &ItemCostTable) -> Result<PipelineRunReport, StreamError> {
    if costs.0.len() < plan.n {
        return Err(StreamError::MissingItemCosts { available: costs.0.len(), needed: plan.n });
    }
    let graph = build_schedule_with(plan, 1, false)?;
    let timeline = simulate(costs, &graph)?;
    report_from_timeline(plan, 1, &graph, &timeline, false)
}

/// Streams the job's surfaces through the variant: accumulates them on the host and reports the
/// simulated device timing.
pub fn run_stream(job: &StreamJob<'_>) -> Result<(AccumulationGrid, PipelineRunReport), StreamError> {
    let plan = &job.plan;
    if plan.n == 0 || job.surfaces.is_empty() {
        return Err(StreamError::EmptyJob);
    }
    for (index, s) in job.surfaces.iter().enumerate() {
        if s.width() != plan.width || s.height() != plan.height {
            return Err(StreamError::SurfaceSizeMismatch {
                index,
                width: plan.width,
                height: plan.height,
                actual_width: s.width(),
                actual_height: s.height(),
            });
        }
    }
    let report = simulate_plan(plan, job.profile)?;
    let mut acc = Accumulator::new(plan.width, plan.height, plan.kernel);
    for i in 0..plan.n {
        acc.add(&job.surfaces[i % job.surfaces.len()])?;
    }
    Ok((acc.finish(), report))
}

/// Uniform per-item costs of `variant` at `width`x`height` on `profile`.
pub fn uniform_item_cost(
    profile: &DeviceProfile,
    variant: AlgorithmVariant,
    width: u32,
    height: u32,
    kernel: KernelVariant,
) -> Result<ItemCost, StreamError> {
    let bytes = profile.image_bytes(width, height);
    Ok(ItemCost {
        host_copy_us: if variant.writes_image_directly() { profile.host_copy_time(bytes) } else { 0 },
        copy_us: profile.transfer_time(bytes)?,
        transform_us: profile.slotted_transform_time(width, height, variant.image_slots())?,
        process_us: profile.kernel_time(kernel, width, height)?,
    })
}

/// Largest payload the two-pair pipeline sustains per frame at `target_fps`.
///
/// Streaming runs continuously across frames, so the budget is filled at the steady-state
/// cycle of the closed-form model, `t_dual(k + 1) - t_dual(k)`, rather than paying the
/// pipeline fill every frame.
pub fn max_data_per_frame(profile: &DeviceProfile, width: u32, height: u32, target_fps: u32) -> Result<u64, StreamError> {
    if target_fps == 0 {
        return Err(StreamError::ZeroFrameRate);
    }
    let cost = uniform_item_cost(profile, AlgorithmVariant::TwoBufferFinal, width, height, KernelVariant::Image1)?;
    let one = closed_form_times(&[cost.copy_us], &[cost.transform_us], &[cost.process_us])?;
    let two = closed_form_times(
        &[cost.copy_us; 2],
        &[cost.transform_us; 2],
        &[cost.process_us; 2],
    )?;
    let cycle = two.t_dual_us - one.t_dual_us;
    let budget_us = 1e6 / f64::from(target_fps);
    let bytes_per_item = profile.image_bytes(width, height) as f64;
    if cycle == 0 {
        return Ok(u64::MAX);
    }
    Ok((budget_us / cycle as f64 * bytes_per_item).floor() as u64)
}

/// Closed-form report for uniform per-item costs, for very large `n`.
pub fn closed_form_report(plan: &StreamPlan, profile: &DeviceProfile) -> Result<PipelineRunReport, StreamError> {
    if plan.n == 0 {
        return Err(StreamError::EmptyJob);
    }
    let cost = uniform_item_cost(profile, plan.variant, plan.width, plan.height, plan.kernel)?;
    let n = plan.n as Micros;
    let transfer = cost.transfer_us();
    let cycle = transfer + cost.transform_us + cost.process_us;
    let total = if plan.variant.image_slots() == 1 {
        n * cycle
    } else {
        let tail = cost.transform_us + cost.process_us;
        (transfer + n * tail).max(n * transfer + tail)
    };
    let closed_form = ClosedForm {
        t_dual_us: (transfer + n * (cost.transform_us + cost.process_us))
            .max(n * transfer + cost.transform_us + cost.process_us),
        t_single_us: n * cycle,
    };
    let bytes = n as f64 * profile.image_bytes(plan.width, plan.height) as f64;
    Ok(PipelineRunReport {
        variant: plan.variant,
        n: plan.n,
        width: plan.width,
        height: plan.height,
        total_time_us: total,
        per_item: vec![cost; plan.n],
        transfer_rate_gbps: bytes / total as f64 / 1_000.0,
        efficiency: (n * cost.copy_us) as f64 / total as f64,
        makespan_source: MakespanSource::ClosedForm,
        closed_form,
        contention_model_applied: contention_applies(plan, profile),
    })
}
