//! Bounded in-memory job store.

use std::collections::VecDeque;
use std::sync::Arc;

use geoverlay_core::workflow::ExecutionReport;
use geoverlay_core::{MipPyramid, RegionAABB, RunoutRaster};
use serde::{Deserialize, Serialize};

pub const DEFAULT_MAX_JOBS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobKind {
    #[default]
    Avalanche,
    Snow,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JobStats {
    /// Particles released; absent for snow runs.
    pub particles: Option<u64>,
    /// Graph execution time only, without dataset loading or encoding.
    pub model_runtime_ms: f64,
    pub z_delta_max_global: Option<f64>,
    pub total_steps: Option<u64>,
}

#[derive(Debug)]
pub struct Job {
    pub id: String,
    pub dataset: String,
    pub kind: JobKind,
    pub seed: Option<u64>,
    /// Extent covered by the overlay's level 0.
    pub bounds: RegionAABB,
    pub cellsize: f64,
    pub pyramid: Arc<MipPyramid>,
    pub runout: Option<Arc<RunoutRaster>>,
    pub report: ExecutionReport,
    pub stats: JobStats,
}

pub enum JobLookup {
    Found(Arc<Job>),
    /// Issued by this store but since evicted.
    Evicted,
    Unknown,
}

#[derive(Debug)]
pub struct JobStore {
    capacity: usize,
    issued: u64,
    jobs: VecDeque<Arc<Job>>,
}

const PREFIX: &str = "job-";

impl JobStore {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            issued: 0,
            jobs: VecDeque::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.jobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.jobs.is_empty()
    }

    /// Stores the job built by `make` under a fresh id, evicting the oldest
    /// job past capacity.
    pub fn insert(&mut self, make: impl FnOnce(String) -> Job) -> Arc<Job> {
        self.issued += 1;
        let job = Arc::new(make(format!("{PREFIX}{}", self.issued)));
        self.jobs.push_back(job.clone());
        while self.jobs.len() > self.capacity {
            self.jobs.pop_front();
        }
        job
    }

    pub fn get(&self, id: &str) -> JobLookup {
        if let Some(j) = self.jobs.iter().find(|j| j.id == id) {
            return JobLookup::Found(j.clone());
        }
        match id.strip_prefix(PREFIX).and_then(|n| n.parse::<u64>().ok()) {
            Some(n) if n >= 1 && n <= self.issued && id == format!("{PREFIX}{n}") => JobLookup::Evicted,
            _ => JobLookup::Unknown,
        }
    }
}
