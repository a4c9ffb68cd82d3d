//! Completion jobs on the bounded worker pool. A job keeps the grid committed
//! after its last finished pass, so a canceled job resumes from there.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use parking_lot::{Condvar, Mutex};
use serde::{Deserialize, Serialize};
use uuid::Uuid;

use artisketch_core::complete::{
    iterative_complete_from, CompletionConfig, ConstantVelocity, GenerativeBackend, IterationReport, MockLinear,
    MockNoisy, TrellisAdapter,
};
use artisketch_core::grid::{cavity, OccupancyGrid};
use artisketch_core::{ArticulationSpec, Error as CoreError};

use crate::engine::{grid_b64, EngineConfig, GEN_CHANNELS, SCHEMA_VERSION};
use crate::error::{ServiceError, ServiceResult};

/// Built-in generative backends. The mocks treat the filled shell as the
/// object to complete.
pub fn generative_backend(
    name: &str,
    shell: &OccupancyGrid,
    seed: u64,
    cfg: &EngineConfig,
) -> ServiceResult<Arc<dyn GenerativeBackend>> {
    let filled = || shell.union(&cavity(shell)).expect("same frame");
    Ok(match name {
        "mock-linear" => Arc::new(MockLinear::new(&filled(), GEN_CHANNELS)),
        "mock-noisy" => Arc::new(MockNoisy {
            inner: MockLinear::new(&filled(), GEN_CHANNELS),
            sigma: 0.05,
            seed,
        }),
        "constant-velocity" => Arc::new(ConstantVelocity::seeded(GEN_CHANNELS, shell.n(), seed, 1.0)),
        "trellis" => {
            let cmd = cfg.completion_cmd.clone().ok_or_else(|| {
                ServiceError::Core(CoreError::Backend(
                    "no completion adapter configured (ARTISKETCH_COMPLETION_CMD)".into(),
                ))
            })?;
            let mut a = TrellisAdapter::new(cmd, GEN_CHANNELS);
            a.timeout = cfg.timeout;
            Arc::new(a)
        }
        other => return Err(ServiceError::BadRequest(format!("unknown completion backend `{other}`"))),
    })
}

pub struct JobInputs {
    pub joint: ArticulationSpec,
    pub shell: OccupancyGrid,
    pub moving: OccupancyGrid,
    pub backend: Arc<dyn GenerativeBackend>,
    pub config: CompletionConfig,
    pub condition: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Queued,
    Running,
    Canceled,
    Done,
    Failed,
}

impl JobStatus {
    pub fn is_active(&self) -> bool {
        matches!(self, JobStatus::Queued | JobStatus::Running)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JobError {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JobView {
    pub schema_version: u32,
    pub job_id: Uuid,
    pub session_id: Uuid,
    pub status: JobStatus,
    pub backend: String,
    /// Per-iteration growth, across resumes.
    pub iterations: Vec<IterationReport>,
    /// First pass index the next run starts from.
    pub next_iteration: usize,
    pub k_max: usize,
    pub converged: bool,
    pub occupied: usize,
    #[serde(default)]
    pub error: Option<JobError>,
    /// Committed grid as a base64 tensor block.
    #[serde(default)]
    pub grid: Option<String>,
}

struct JobState {
    status: JobStatus,
    committed: OccupancyGrid,
    next_k: usize,
    k_max: usize,
    growth: Vec<IterationReport>,
    converged: bool,
    error: Option<JobError>,
}

pub struct Job {
    pub id: Uuid,
    pub session: Uuid,
    inputs: JobInputs,
    state: Mutex<JobState>,
    changed: Condvar,
    cancel: AtomicBool,
}

impl Job {
    pub fn new(session: Uuid, inputs: JobInputs) -> Self {
        let state = JobState {
            status: JobStatus::Queued,
            committed: inputs.shell.clone(),
            next_k: 0,
            k_max: inputs.config.k_max,
            growth: Vec::new(),
            converged: false,
            error: None,
        };
        Self {
            id: Uuid::new_v4(),
            session,
            inputs,
            state: Mutex::new(state),
            changed: Condvar::new(),
            cancel: AtomicBool::new(false),
        }
    }

    pub fn spawn(self: &Arc<Self>, pool: &rayon::ThreadPool) {
        let job = self.clone();
        pool.spawn(move || job.run());
    }

    fn run(&self) {
        let (start, first_k, k_max) = {
            let mut s = self.state.lock();
            if s.status != JobStatus::Queued {
                return;
            }
            if self.cancel.load(Ordering::SeqCst) {
                s.status = JobStatus::Canceled;
                self.changed.notify_all();
                return;
            }
            s.status = JobStatus::Running;
            (s.committed.clone(), s.next_k, s.k_max)
        };
        let inp = &self.inputs;
        let config = CompletionConfig { k_max, ..inp.config };
        let result = iterative_complete_from(
            &start,
            first_k,
            &inp.joint,
            &inp.moving,
            inp.backend.as_ref(),
            &config,
            &inp.condition,
            &mut |r: &IterationReport| {
                self.state.lock().growth.push(r.clone());
                self.changed.notify_all();
                !self.cancel.load(Ordering::SeqCst)
            },
        );
        let mut s = self.state.lock();
        match result {
            Ok(out) => {
                s.next_k = first_k + out.growth.len();
                s.committed = out.grid;
                s.converged = out.converged;
                s.status = if out.canceled { JobStatus::Canceled } else { JobStatus::Done };
            }
            Err(e) => {
                s.error = Some(JobError {
                    code: e.code().into(),
                    message: e.to_string(),
                });
                s.status = JobStatus::Failed;
            }
        }
        self.changed.notify_all();
    }

    pub fn cancel(&self) {
        self.cancel.store(true, Ordering::SeqCst);
        let mut s = self.state.lock();
        if s.status == JobStatus::Queued {
            s.status = JobStatus::Canceled;
            self.changed.notify_all();
        }
    }

    /// Restarts a canceled job from its last committed pass.
    pub fn resume(self: &Arc<Self>, k_max: Option<usize>, pool: &rayon::ThreadPool) -> ServiceResult<()> {
        {
            let mut s = self.state.lock();
            if s.status != JobStatus::Canceled {
                return Err(ServiceError::Unprocessable {
                    code: "job-not-resumable",
                    message: format!("job is {:?}, only canceled jobs resume", s.status).to_lowercase(),
                });
            }
            if let Some(k) = k_max {
                s.k_max = k;
            }
            self.cancel.store(false, Ordering::SeqCst);
            s.status = JobStatus::Queued;
        }
        self.spawn(pool);
        Ok(())
    }

    pub fn wait(&self, timeout: Duration) {
        let mut s = self.state.lock();
        self.changed.wait_while_for(&mut s, |s| s.status.is_active(), timeout);
    }

    pub fn view(&self, with_grid: bool) -> JobView {
        let s = self.state.lock();
        JobView {
            schema_version: SCHEMA_VERSION,
            job_id: self.id,
            session_id: self.session,
            status: s.status,
            backend: self.inputs.backend.name().to_string(),
            iterations: s.growth.clone(),
            next_iteration: s.next_k,
            k_max: s.k_max,
            converged: s.converged,
            occupied: s.committed.count(),
            error: s.error.clone(),
            grid: (with_grid && !s.status.is_active()).then(|| grid_b64(&s.committed)),
        }
    }
}
