//! Shared mutable state: uploaded fixtures and experiment records.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use modelbandit::{AggregateReport, Dataset, ModelPool, Observer, SelectionReport, TraceTable};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FixtureKind {
    Pool,
    Trace,
}

#[derive(Clone)]
pub enum FixtureData {
    Pool(Arc<ModelPool>),
    Trace(Arc<TraceTable>, Arc<Dataset>),
}

#[derive(Clone)]
pub struct Fixture {
    pub kind: FixtureKind,
    pub digest: String,
    pub data: FixtureData,
}

pub fn content_digest(body: &str) -> String {
    hex::encode(Sha256::digest(body.as_bytes()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pending,
    Running,
    Done,
    Failed,
}

/// Live counters shared between a worker and the pollers.
pub struct Progress {
    pulls: AtomicU64,
    expected: u64,
    winners: Mutex<Vec<usize>>,
}

impl Progress {
    pub fn new(expected: u64) -> Self {
        Self {
            pulls: AtomicU64::new(0),
            expected,
            winners: Mutex::new(Vec::new()),
        }
    }

    pub fn pulls(&self) -> u64 {
        self.pulls.load(Ordering::Relaxed)
    }

    pub fn expected(&self) -> u64 {
        self.expected
    }

    pub fn winners(&self) -> Vec<usize> {
        self.winners.lock().expect("winners lock").clone()
    }
}

impl Observer for Progress {
    fn on_pull(&self) {
        self.pulls.fetch_add(1, Ordering::Relaxed);
    }

    fn on_repetition(&self, _repetition: u32, report: &SelectionReport) {
        self.winners.lock().expect("winners lock").push(report.top().arm);
    }
}

pub struct ExperimentRecord {
    pub status: Status,
    pub pool: Arc<ModelPool>,
    pub progress: Arc<Progress>,
    pub report: Option<AggregateReport>,
    pub report_text: Option<String>,
    pub error: Option<String>,
}

#[derive(Default)]
pub struct Registry {
    pub fixtures: RwLock<HashMap<String, Fixture>>,
    pub experiments: RwLock<HashMap<String, ExperimentRecord>>,
    pub persist_dir: Option<PathBuf>,
}

impl Registry {
    pub fn new(persist_dir: Option<PathBuf>) -> Self {
        Self {
            persist_dir,
            ..Self::default()
        }
    }

    /// Moves a record forward; status never goes backwards.
    pub fn update<F: FnOnce(&mut ExperimentRecord)>(&self, id: &str, f: F) {
        if let Some(rec) = self.experiments.write().expect("registry lock").get_mut(id) {
            f(rec);
        }
    }
}
