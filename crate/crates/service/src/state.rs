//! Shared service state: the store behind a single-writer lock, the published snapshot and the
//! job table.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use floodstream_core::kernels::Accumulator;
use floodstream_core::streaming::simulate_plan;
use floodstream_core::{AlgorithmVariant, DeviceProfile, PipelineRunReport, RasterSurface, StreamPlan, SurfaceId};
use serde::Serialize;
use tokio::sync::{watch, RwLock};

use crate::analytics::{compute_snapshot, grid_digest, Snapshot, SnapshotInput};
use crate::config::Config;
use crate::store::{Store, StoreError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, Serialize)]
pub struct JobRecord {
    pub id: String,
    pub variant: AlgorithmVariant,
    pub n: usize,
    pub profile: String,
    pub surface_ids: Vec<SurfaceId>,
    pub status: JobStatus,
    pub grid_digest: Option<String>,
    pub report: Option<PipelineRunReport>,
    pub error: Option<String>,
}

struct Shared {
    config: Config,
    profile: DeviceProfile,
    store: RwLock<Store>,
    recompute: watch::Sender<SnapshotInput>,
    snapshot: watch::Receiver<Arc<Snapshot>>,
    jobs: Mutex<BTreeMap<String, JobRecord>>,
    next_job: AtomicU64,
}

#[derive(Clone)]
pub struct AppState(Arc<Shared>);

fn input_of(store: &Store) -> SnapshotInput {
    SnapshotInput {
        version: store.working_set().version,
        surfaces: store.selected_surfaces(),
        dims: store.dims(),
    }
}

impl AppState {
    /// Opens the store, computes the snapshot of the persisted working set and starts the
    /// recompute worker. Must run inside a tokio runtime.
    pub async fn open(config: Config) -> anyhow::Result<AppState> {
        let dir = config.data_dir.clone();
        let store = tokio::task::spawn_blocking(move || Store::open(dir)).await??;
        let profile = store.profile(&config.default_profile)?;
        let input = input_of(&store);
        let (p, v) = (profile.clone(), config.variant);
        let (initial, input) = tokio::task::spawn_blocking(move || (compute_snapshot(&input, &p, v), input)).await?;
        let (snap_tx, snap_rx) = watch::channel(Arc::new(initial));
        let (re_tx, re_rx) = watch::channel(input);
        tokio::spawn(recompute_worker(re_rx, snap_tx, profile.clone(), config.variant));
        Ok(AppState(Arc::new(Shared {
            config,
            profile,
            store: RwLock::new(store),
            recompute: re_tx,
            snapshot: snap_rx,
            jobs: Mutex::new(BTreeMap::new()),
            next_job: AtomicU64::new(1),
        })))
    }

    pub fn config(&self) -> &Config {
        &self.0.config
    }

    pub fn store(&self) -> &RwLock<Store> {
        &self.0.store
    }

    /// Runs `f` under the exclusive writer lock and queues a recompute when the working set
    /// version moved.
    pub async fn mutate<T>(&self, f: impl FnOnce(&mut Store) -> Result<T, StoreError>) -> Result<T, StoreError> {
        let mut store = self.0.store.write().await;
        let before = store.working_set().version;
        let dims_before = store.dims();
        let out = f(&mut store)?;
        if store.working_set().version != before || store.dims() != dims_before {
            self.0.recompute.send_replace(input_of(&store));
        }
        Ok(out)
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        Arc::clone(&self.0.snapshot.borrow())
    }

    pub fn subscribe(&self) -> watch::Receiver<Arc<Snapshot>> {
        self.0.snapshot.clone()
    }

    pub fn job(&self, id: &str) -> Option<JobRecord> {
        self.0.jobs.lock().expect("job table").get(id).cloned()
    }

    pub fn jobs(&self) -> Vec<JobRecord> {
        self.0.jobs.lock().expect("job table").values().cloned().collect()
    }

    fn update_job(&self, id: &str, f: impl FnOnce(&mut JobRecord)) {
        if let Some(job) = self.0.jobs.lock().expect("job table").get_mut(id) {
            f(job);
        }
    }

    /// Queues a streaming job over the current selection, cycled to `n` items.
    pub fn submit_job(
        &self,
        variant: AlgorithmVariant,
        n: usize,
        profile_name: String,
        profile: DeviceProfile,
        surfaces: Vec<Arc<RasterSurface>>,
    ) -> JobRecord {
        let id = format!("j{:06}", self.0.next_job.fetch_add(1, Ordering::Relaxed));
        let record = JobRecord {
            id: id.clone(),
            variant,
            n,
            profile: profile_name,
            surface_ids: surfaces.iter().map(|s| s.id().clone()).collect(),
            status: JobStatus::Queued,
            grid_digest: None,
            report: None,
            error: None,
        };
        self.0.jobs.lock().expect("job table").insert(id.clone(), record.clone());
        let state = self.clone();
        tokio::spawn(async move {
            state.update_job(&id, |j| j.status = JobStatus::Running);
            let outcome = tokio::task::spawn_blocking(move || run_job(variant, n, &profile, &surfaces)).await;
            state.update_job(&id, |j| match outcome {
                Ok(Ok((digest, report))) => {
                    j.status = JobStatus::Done;
                    j.grid_digest = Some(digest);
                    j.report = Some(report);
                }
                Ok(Err(e)) => {
                    j.status = JobStatus::Failed;
                    j.error = Some(e);
                }
                Err(e) => {
                    j.status = JobStatus::Failed;
                    j.error = Some(format!("job panicked: {e}"));
                }
            });
        });
        record
    }

    pub fn default_profile(&self) -> &DeviceProfile {
        &self.0.profile
    }
}

fn run_job(
    variant: AlgorithmVariant,
    n: usize,
    profile: &DeviceProfile,
    surfaces: &[Arc<RasterSurface>],
) -> Result<(String, PipelineRunReport), String> {
    let first = surfaces.first().ok_or("working set is empty")?;
    let plan = StreamPlan::new(variant, n, first.width(), first.height());
    let report = simulate_plan(&plan, profile).map_err(|e| e.to_string())?;
    let mut acc = Accumulator::new(plan.width, plan.height, plan.kernel);
    for i in 0..n {
        acc.add(&surfaces[i % surfaces.len()]).map_err(|e| e.to_string())?;
    }
    Ok((grid_digest(&acc.finish()), report))
}

/// Recomputes snapshots off the request path; a newer input supersedes any not yet started.
async fn recompute_worker(
    mut inputs: watch::Receiver<SnapshotInput>,
    out: watch::Sender<Arc<Snapshot>>,
    profile: DeviceProfile,
    variant: AlgorithmVariant,
) {
    while inputs.changed().await.is_ok() {
        let input = inputs.borrow_and_update().clone();
        let p = profile.clone();
        match tokio::task::spawn_blocking(move || compute_snapshot(&input, &p, variant)).await {
            Ok(snapshot) => {
                out.send_replace(Arc::new(snapshot));
            }
            Err(e) => tracing::error!("snapshot recompute failed: {e}"),
        }
    }
}
