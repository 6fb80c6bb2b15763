//! Team annotation backend: dataset import, leased task assignment with
//! redundant votes, majority aggregation, adjudication, agreement and gold
//! export.

mod agreement;
mod service;
mod store;

use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

pub use agreement::{fleiss_kappa, KappaError};
pub use service::{AgreementReport, AnnotationService, DatasetStats, ExcludedItem, ImportSummary, ServiceError};
pub use store::{MemoryStore, SnapshotStore, StoreError, TaskStore, Versioned};

use crate::label::Label;
use crate::textnorm::CleanDocument;

pub const DEFAULT_REQUIRED_VOTES: usize = 3;
pub const DEFAULT_LEASE: Duration = Duration::from_secs(30 * 60);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    #[default]
    Annotator,
    Admin,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Annotator {
    pub id: String,
    pub display_name: String,
    /// Free text only; nothing structured is collected.
    #[serde(default)]
    pub demographics: Option<String>,
    #[serde(default = "default_true")]
    pub active: bool,
    #[serde(default)]
    pub role: Role,
    /// Bearer token the HTTP layer expects from this annotator, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token: Option<String>,
}

fn default_true() -> bool {
    true
}

impl Annotator {
    pub fn new(id: impl Into<String>, role: Role) -> Self {
        let id = id.into();
        Annotator {
            display_name: id.clone(),
            id,
            demographics: None,
            active: true,
            role,
            token: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskStatus {
    Open,
    Complete,
    Adjudication,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vote {
    pub item_id: String,
    pub annotator_id: String,
    /// `None` exactly when `skipped`.
    pub label: Option<Label>,
    pub skipped: bool,
    pub submitted_at: DateTime<Utc>,
    /// Client-chosen token making resubmission of the same vote harmless.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub client_token: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lease {
    pub annotator_id: String,
    pub expires_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Adjudication {
    pub adjudicator_id: String,
    pub label: Label,
    pub at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub id: String,
    /// SHA-256 of the canonical JSON-lines form of the imported records.
    pub content_hash: String,
    pub records: usize,
    pub required_votes: usize,
    pub imported_at: DateTime<Utc>,
}

/// Complete stored state of one item; every change is a compare-and-set of
/// this record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskState {
    pub item_id: String,
    pub dataset_id: String,
    pub document: CleanDocument,
    pub required_votes: usize,
    pub status: TaskStatus,
    pub votes: Vec<Vote>,
    pub leases: Vec<Lease>,
    pub gold: Option<Label>,
    pub adjudication: Option<Adjudication>,
}

impl TaskState {
    pub fn counted_votes(&self) -> impl Iterator<Item = Label> + '_ {
        self.votes.iter().filter_map(|v| v.label)
    }

    pub fn has_voted(&self, annotator_id: &str) -> bool {
        self.votes.iter().any(|v| v.annotator_id == annotator_id)
    }

    /// Status and gold label implied by the votes alone.
    fn aggregate(&self) -> (TaskStatus, Option<Label>) {
        let counted: Vec<Label> = self.counted_votes().collect();
        if counted.len() < self.required_votes {
            return (TaskStatus::Open, None);
        }
        majority(&counted).map_or((TaskStatus::Adjudication, None), |l| (TaskStatus::Complete, Some(l)))
    }

    pub fn view(&self) -> AnnotationTask {
        AnnotationTask {
            item_id: self.item_id.clone(),
            dataset_id: self.dataset_id.clone(),
            document: self.document.clone(),
            required_votes: self.required_votes,
            status: self.status,
        }
    }
}

/// The label holding more than half of `votes`, if any.
pub fn majority(votes: &[Label]) -> Option<Label> {
    Label::ALL
        .into_iter()
        .find(|l| 2 * votes.iter().filter(|v| *v == l).count() > votes.len())
}

/// What an annotator sees: the document and progress, never other votes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationTask {
    pub item_id: String,
    pub dataset_id: String,
    pub document: CleanDocument,
    pub required_votes: usize,
    pub status: TaskStatus,
}

/// Source of the current time, replaceable in tests.
pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// A clock that only moves when told to.
#[derive(Debug)]
pub struct ManualClock(parking_lot::Mutex<DateTime<Utc>>);

impl ManualClock {
    pub fn new(start: DateTime<Utc>) -> Self {
        ManualClock(parking_lot::Mutex::new(start))
    }

    pub fn advance(&self, by: Duration) {
        *self.0.lock() += chrono::Duration::from_std(by).expect("duration in range");
    }
}

impl Clock for ManualClock {
    fn now(&self) -> DateTime<Utc> {
        *self.0.lock()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VoteRequest {
    pub item_id: String,
    pub annotator_id: String,
    #[serde(default)]
    pub label: Option<Label>,
    #[serde(default)]
    pub skipped: bool,
    #[serde(default)]
    pub client_token: Option<String>,
}
