//! Asynchronous grasp studies.

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};

use deltahands::grasp::{sample_grasps_cancellable, GraspAggregate, GraspError, ObjectModel, SamplingConfig};
use deltahands::hand::Hand;
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;

use crate::api::ApiError;
use crate::SCHEMA_VERSION;

#[derive(Debug, Clone, Deserialize)]
pub struct JobRequest {
    pub object: ObjectModel,
    #[serde(default)]
    pub sampling: SamplingConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
    Cancelled,
}

impl JobStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobStatus::Done | JobStatus::Failed | JobStatus::Cancelled)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct JobView {
    pub schema_version: u32,
    pub id: u64,
    pub status: JobStatus,
    pub n_reduced: usize,
    pub aggregate: Option<GraspAggregate>,
    pub error: Option<String>,
}

struct Job {
    view: JobView,
    cancel: Arc<AtomicBool>,
}

#[derive(Clone)]
pub struct JobStore {
    jobs: Arc<Mutex<HashMap<u64, Job>>>,
    next: Arc<Mutex<u64>>,
    workers: Arc<Semaphore>,
}

impl JobStore {
    pub fn new(workers: usize) -> Self {
        Self {
            jobs: Arc::default(),
            next: Arc::new(Mutex::new(1)),
            workers: Arc::new(Semaphore::new(workers.max(1))),
        }
    }

    pub fn get(&self, id: u64) -> Option<JobView> {
        self.jobs.lock().unwrap().get(&id).map(|j| j.view.clone())
    }

    /// Terminal states are final; later updates are dropped.
    fn update(&self, id: u64, f: impl FnOnce(&mut JobView)) {
        if let Some(job) = self.jobs.lock().unwrap().get_mut(&id) {
            if !job.view.status.is_terminal() {
                f(&mut job.view);
            }
        }
    }

    pub fn cancel(&self, id: u64) -> Option<JobView> {
        let mut jobs = self.jobs.lock().unwrap();
        let job = jobs.get_mut(&id)?;
        job.cancel.store(true, Ordering::Relaxed);
        if job.view.status == JobStatus::Queued {
            job.view.status = JobStatus::Cancelled;
        }
        Some(job.view.clone())
    }

    pub fn submit(&self, hand: Hand, req: JobRequest) -> Result<JobView, ApiError> {
        let object = req.object.prepare().map_err(ApiError::from_grasp)?;
        if req.sampling.cone_edges < 3 {
            return Err(ApiError::invalid("InvalidSampling", "cone_edges must be at least 3".into()));
        }
        if req.sampling.n_samples == 0 || req.sampling.n_heights == 0 || req.sampling.yaws_deg.is_empty() {
            return Err(ApiError::invalid("InvalidSampling", "samples, heights and yaws must be non-empty".into()));
        }
        let id = {
            let mut next = self.next.lock().unwrap();
            let id = *next;
            *next += 1;
            id
        };
        let view = JobView {
            schema_version: SCHEMA_VERSION,
            id,
            status: JobStatus::Queued,
            n_reduced: hand.n_reduced(),
            aggregate: None,
            error: None,
        };
        let cancel = Arc::new(AtomicBool::new(false));
        self.jobs.lock().unwrap().insert(id, Job { view: view.clone(), cancel: cancel.clone() });

        let store = self.clone();
        tokio::spawn(async move {
            let Ok(_permit) = store.workers.clone().acquire_owned().await else { return };
            if cancel.load(Ordering::Relaxed) {
                return;
            }
            store.update(id, |v| v.status = JobStatus::Running);
            let cfg = req.sampling;
            let flag = cancel.clone();
            let res =
                tokio::task::spawn_blocking(move || sample_grasps_cancellable(&hand, &object, &cfg, &flag)).await;
            store.update(id, |v| match res {
                Ok(Ok(study)) => {
                    v.status = JobStatus::Done;
                    v.aggregate = Some(study.aggregate);
                }
                Ok(Err(GraspError::Cancelled)) => v.status = JobStatus::Cancelled,
                Ok(Err(e)) => {
                    v.status = JobStatus::Failed;
                    v.error = Some(e.to_string());
                }
                Err(e) => {
                    v.status = JobStatus::Failed;
                    v.error = Some(format!("worker panicked: {e}"));
                }
            });
        });
        Ok(view)
    }
}
