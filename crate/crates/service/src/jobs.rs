//! Asynchronous jobs: submitted work waits for one of a bounded number of
//! worker slots, runs on the blocking thread pool and is polled by id.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use overseec_engine::store::ArtifactRef;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokio::sync::Semaphore;

use crate::error::ErrorBody;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    Interpret,
    Segment,
    Compose,
    Plan,
    Evaluate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobState {
    pub fn can_become(self, next: JobState) -> bool {
        matches!(
            (self, next),
            (JobState::Queued, JobState::Running) | (JobState::Running, JobState::Done) | (JobState::Running, JobState::Failed)
        )
    }

    pub fn is_final(self) -> bool {
        matches!(self, JobState::Done | JobState::Failed)
    }
}

/// What a finished job produced: a JSON result plus the artifacts it
/// references.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobOutput {
    pub result: Value,
    pub refs: Vec<ArtifactRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub id: String,
    pub kind: JobKind,
    pub state: JobState,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub session: Option<String>,
    pub inputs: Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outputs: Option<JobOutput>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorBody>,
}

pub struct JobQueue {
    jobs: Mutex<HashMap<String, Job>>,
    slots: Arc<Semaphore>,
}

impl JobQueue {
    pub fn new(workers: usize) -> Arc<Self> {
        Arc::new(Self {
            jobs: Mutex::new(HashMap::new()),
            slots: Arc::new(Semaphore::new(workers.max(1))),
        })
    }

    pub fn get(&self, id: &str) -> Option<Job> {
        self.jobs.lock().expect("job table poisoned").get(id).cloned()
    }

    fn transition(&self, id: &str, next: JobState, outputs: Option<JobOutput>, error: Option<ErrorBody>) {
        let mut jobs = self.jobs.lock().expect("job table poisoned");
        let job = jobs.get_mut(id).expect("jobs are never removed");
        assert!(job.state.can_become(next), "job {id}: {:?} -> {next:?}", job.state);
        job.state = next;
        job.outputs = outputs;
        job.error = error;
    }

    /// Queues `work` and returns the job as submitted. Must be called from
    /// within a Tokio runtime.
    pub fn submit<F>(self: &Arc<Self>, kind: JobKind, session: Option<String>, inputs: Value, work: F) -> Job
    where
        F: FnOnce() -> Result<JobOutput, ErrorBody> + Send + 'static,
    {
        let job = Job {
            id: uuid::Uuid::new_v4().simple().to_string(),
            kind,
            state: JobState::Queued,
            session,
            inputs,
            outputs: None,
            error: None,
        };
        self.jobs
            .lock()
            .expect("job table poisoned")
            .insert(job.id.clone(), job.clone());
        let queue = Arc::clone(self);
        let id = job.id.clone();
        tokio::spawn(async move {
            let _slot = Arc::clone(&queue.slots).acquire_owned().await.expect("semaphore never closes");
            queue.transition(&id, JobState::Running, None, None);
            log::info!("job {id} ({kind:?}) running");
            match tokio::task::spawn_blocking(work).await {
                Ok(Ok(out)) => queue.transition(&id, JobState::Done, Some(out), None),
                Ok(Err(e)) => {
                    log::warn!("job {id} failed: {}", e.message);
                    queue.transition(&id, JobState::Failed, None, Some(e));
                }
                Err(e) => queue.transition(&id, JobState::Failed, None, Some(ErrorBody::new("internal", format!("job aborted: {e}")))),
            }
        });
        job
    }
}
