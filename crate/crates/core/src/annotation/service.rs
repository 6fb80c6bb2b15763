use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::agreement::{fleiss_kappa, KappaError};
use super::store::{StoreError, TaskStore, Versioned};
use super::{
    Adjudication, AnnotationTask, Annotator, Clock, Dataset, Lease, Role, SystemClock, TaskState, TaskStatus, Vote,
    VoteRequest, DEFAULT_LEASE, DEFAULT_REQUIRED_VOTES,
};
use crate::ingest::PoolRecord;
use crate::jsonl::to_jsonl;
use crate::label::{Label, LabeledExample, NUM_CLASSES};
use crate::textnorm::{CleanDocument, Normalizer};

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("unknown annotator {0:?}")]
    Unauthorized(String),
    #[error("missing or wrong bearer token for {0:?}")]
    BadToken(String),
    #[error("{0}")]
    Forbidden(String),
    #[error("{0} not found")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Invalid(String),
    #[error("line {line}: {reason}")]
    Import { line: usize, reason: String },
    #[error("no records")]
    NoRecords,
    #[error(transparent)]
    Agreement(#[from] KappaError),
    #[error(transparent)]
    Store(StoreError),
}

impl From<StoreError> for ServiceError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Conflict(m) => ServiceError::Conflict(m),
            other => ServiceError::Store(other),
        }
    }
}

impl ServiceError {
    /// The HTTP status this error maps to.
    pub fn status_code(&self) -> u16 {
        match self {
            ServiceError::Unauthorized(_) | ServiceError::BadToken(_) => 401,
            ServiceError::Forbidden(_) => 403,
            ServiceError::NotFound(_) => 404,
            ServiceError::Conflict(_) => 409,
            ServiceError::Invalid(_)
            | ServiceError::Import { .. }
            | ServiceError::NoRecords
            | ServiceError::Agreement(_) => 422,
            ServiceError::Store(_) => 500,
        }
    }
}

/// Records accepted by import: candidate-pool posts to be annotated, or
/// already-labeled examples (as produced by gold export) that enter
/// complete.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum ImportRecord {
    Pool(PoolRecord),
    Gold(LabeledExample),
}

impl ImportRecord {
    fn id(&self) -> &str {
        match self {
            ImportRecord::Pool(p) => &p.id,
            ImportRecord::Gold(g) => &g.id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImportSummary {
    pub dataset_id: String,
    pub tasks: usize,
    /// Records that arrived already labeled.
    pub complete: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedItem {
    pub item_id: String,
    pub votes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub dataset_id: String,
    pub kappa: f64,
    pub items: usize,
    pub ratings_per_item: usize,
    /// Non-skipped votes per label over the included items.
    pub label_distribution: BTreeMap<Label, usize>,
    /// Items without exactly `ratings_per_item` non-skipped votes.
    pub excluded: Vec<ExcludedItem>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub dataset_id: String,
    pub records: usize,
    pub required_votes: usize,
    pub open: usize,
    pub complete: usize,
    pub adjudication: usize,
    pub votes: usize,
    pub skipped: usize,
    pub votes_by_label: BTreeMap<Label, usize>,
    pub gold_by_label: BTreeMap<Label, usize>,
}

fn by_label() -> BTreeMap<Label, usize> {
    Label::ALL.into_iter().map(|l| (l, 0)).collect()
}

/// Thread-safe annotation backend over a [`TaskStore`].
///
/// Every per-item transition is an optimistic read-modify-compare-and-set
/// loop, so concurrent callers never interleave inside one item.
pub struct AnnotationService {
    store: Arc<dyn TaskStore>,
    clock: Arc<dyn Clock>,
    annotators: RwLock<BTreeMap<String, Annotator>>,
    normalizer: Normalizer,
    required_votes: usize,
    lease: Duration,
}

impl AnnotationService {
    pub fn new(store: Arc<dyn TaskStore>) -> Self {
        AnnotationService {
            store,
            clock: Arc::new(SystemClock),
            annotators: RwLock::new(BTreeMap::new()),
            normalizer: Normalizer::default(),
            required_votes: DEFAULT_REQUIRED_VOTES,
            lease: DEFAULT_LEASE,
        }
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    /// Redundancy for datasets imported from now on.
    pub fn with_required_votes(mut self, n: usize) -> Self {
        assert!(n > 0, "required votes must be positive");
        self.required_votes = n;
        self
    }

    pub fn with_lease(mut self, lease: Duration) -> Self {
        self.lease = lease;
        self
    }

    pub fn with_normalizer(mut self, normalizer: Normalizer) -> Self {
        self.normalizer = normalizer;
        self
    }

    pub fn register_annotator(&self, annotator: Annotator) -> Result<(), ServiceError> {
        let mut all = self.annotators.write();
        if all.contains_key(&annotator.id) {
            return Err(ServiceError::Conflict(format!(
                "annotator {} already exists",
                annotator.id
            )));
        }
        all.insert(annotator.id.clone(), annotator);
        Ok(())
    }

    pub fn annotators(&self) -> Vec<Annotator> {
        self.annotators.read().values().cloned().collect()
    }

    /// The annotator if known and active.
    pub fn authenticate(&self, id: &str) -> Result<Annotator, ServiceError> {
        let a = self
            .annotators
            .read()
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::Unauthorized(id.to_string()))?;
        if !a.active {
            return Err(ServiceError::Forbidden(format!("annotator {id} is inactive")));
        }
        Ok(a)
    }

    /// Like [`Self::authenticate`], and also checks `token` when the
    /// annotator has one configured.
    pub fn authenticate_with_token(&self, id: &str, token: Option<&str>) -> Result<Annotator, ServiceError> {
        let a = self.authenticate(id)?;
        match &a.token {
            Some(expected) if Some(expected.as_str()) != token => Err(ServiceError::BadToken(id.to_string())),
            _ => Ok(a),
        }
    }

    pub fn require_admin(&self, id: &str) -> Result<Annotator, ServiceError> {
        let a = self.authenticate(id)?;
        if a.role != Role::Admin {
            return Err(ServiceError::Forbidden(format!("{id} is not an admin")));
        }
        Ok(a)
    }

    pub fn import_file(&self, path: &Path) -> Result<ImportSummary, ServiceError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| ServiceError::Invalid(format!("{}: {e}", path.display())))?;
        self.import_text(&text)
    }

    /// Imports JSON-lines pool or gold records as a new dataset. The same
    /// content cannot be imported twice.
    pub fn import_text(&self, text: &str) -> Result<ImportSummary, ServiceError> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record = serde_json::from_str::<ImportRecord>(line).map_err(|_| {
                let reason = match serde_json::from_str::<PoolRecord>(line) {
                    Err(e) => format!("not a pool or labeled record ({e})"),
                    Ok(_) => "unreadable record".to_string(),
                };
                ServiceError::Import { line: i + 1, reason }
            })?;
            records.push((i + 1, record));
        }
        self.import_records(records)
    }

    fn import_records(&self, records: Vec<(usize, ImportRecord)>) -> Result<ImportSummary, ServiceError> {
        if records.is_empty() {
            return Err(ServiceError::NoRecords);
        }
        let mut seen = std::collections::HashSet::new();
        for (line, r) in &records {
            if r.id().is_empty() {
                return Err(ServiceError::Import {
                    line: *line,
                    reason: "empty id".into(),
                });
            }
            if !seen.insert(r.id().to_string()) {
                return Err(ServiceError::Import {
                    line: *line,
                    reason: format!("duplicate id {}", r.id()),
                });
            }
        }
        let plain: Vec<&ImportRecord> = records.iter().map(|(_, r)| r).collect();
        let content_hash = hex::encode(Sha256::digest(to_jsonl(&plain).as_bytes()));
        let dataset = Dataset {
            id: format!("ds-{}", &content_hash[..16]),
            content_hash,
            records: records.len(),
            required_votes: self.required_votes,
            imported_at: self.clock.now(),
        };
        let mut complete = 0;
        let tasks: Vec<TaskState> = records
            .into_iter()
            .map(|(_, r)| {
                let (document, gold) = match r {
                    ImportRecord::Pool(p) => (self.normalizer.clean(p.id, p.text), None),
                    ImportRecord::Gold(g) => {
                        let norm_text = g.tokens.join(" ");
                        let doc = CleanDocument {
                            id: g.id,
                            raw_text: g.text,
                            norm_text,
                            tokens: g.tokens,
                        };
                        (doc, Some(g.label))
                    }
                };
                complete += usize::from(gold.is_some());
                TaskState {
                    item_id: document.id.clone(),
                    dataset_id: dataset.id.clone(),
                    document,
                    required_votes: dataset.required_votes,
                    status: if gold.is_some() {
                        TaskStatus::Complete
                    } else {
                        TaskStatus::Open
                    },
                    votes: Vec::new(),
                    leases: Vec::new(),
                    gold,
                    adjudication: None,
                }
            })
            .collect();
        let summary = ImportSummary {
            dataset_id: dataset.id.clone(),
            tasks: tasks.len(),
            complete,
        };
        self.store.create_dataset(dataset, tasks)?;
        Ok(summary)
    }

    pub fn datasets(&self) -> Vec<Dataset> {
        self.store.datasets()
    }

    fn dataset(&self, id: &str) -> Result<Dataset, ServiceError> {
        self.store
            .dataset(id)
            .ok_or_else(|| ServiceError::NotFound(format!("dataset {id}")))
    }

    pub fn task(&self, item_id: &str) -> Option<TaskState> {
        self.store.load(item_id).map(|v| v.value)
    }

    fn dataset_tasks(&self, dataset_id: &str) -> Vec<TaskState> {
        self.store
            .dataset_items(dataset_id)
            .iter()
            .filter_map(|id| self.task(id))
            .collect()
    }

    /// Read-modify-write of one item, retried until the compare-and-set
    /// lands.
    fn update<T>(
        &self,
        item_id: &str,
        mut change: impl FnMut(&mut TaskState) -> Result<T, ServiceError>,
    ) -> Result<T, ServiceError> {
        loop {
            let Versioned { version, mut value } = self
                .store
                .load(item_id)
                .ok_or_else(|| ServiceError::NotFound(format!("item {item_id}")))?;
            let out = change(&mut value)?;
            if self.store.compare_and_set(item_id, version, value)? {
                return Ok(out);
            }
        }
    }

    /// An open task the annotator has not voted on. A task the annotator
    /// already holds a live lease on is returned again; otherwise a new
    /// lease is taken on the first task with a free slot.
    pub fn next_task(&self, annotator_id: &str) -> Result<Option<AnnotationTask>, ServiceError> {
        self.authenticate(annotator_id)?;
        let now = self.clock.now();
        let items = self.store.all_items();
        let eligible = |t: &TaskState| t.status == TaskStatus::Open && !t.has_voted(annotator_id);
        for id in &items {
            if let Some(t) = self.task(id) {
                if eligible(&t)
                    && t.leases
                        .iter()
                        .any(|l| l.annotator_id == annotator_id && l.expires_at > now)
                {
                    return Ok(Some(t.view()));
                }
            }
        }
        let expires_at = now + chrono::Duration::from_std(self.lease).expect("lease in range");
        for id in &items {
            let granted = self.update(id, |t| {
                if !eligible(t) {
                    return Ok(None);
                }
                t.leases
                    .retain(|l| l.expires_at > now && l.annotator_id != annotator_id);
                if t.counted_votes().count() + t.leases.len() >= t.required_votes {
                    return Ok(None);
                }
                t.leases.push(Lease {
                    annotator_id: annotator_id.to_string(),
                    expires_at,
                });
                Ok(Some(t.view()))
            })?;
            if granted.is_some() {
                return Ok(granted);
            }
        }
        Ok(None)
    }

    /// Records a vote and returns the task's resulting status. Resending a
    /// vote with the same client token is a no-op.
    pub fn submit_vote(&self, req: VoteRequest) -> Result<TaskStatus, ServiceError> {
        match (req.skipped, req.label) {
            (true, Some(_)) => return Err(ServiceError::Invalid("a skipped vote carries no label".into())),
            (false, None) => return Err(ServiceError::Invalid("vote needs a label or skipped=true".into())),
            _ => {}
        }
        self.authenticate(&req.annotator_id)?;
        let now = self.clock.now();
        self.update(&req.item_id, |t| {
            if let Some(prev) = t.votes.iter().find(|v| v.annotator_id == req.annotator_id) {
                let replay = req.client_token.is_some()
                    && prev.client_token == req.client_token
                    && prev.label == req.label
                    && prev.skipped == req.skipped;
                if replay {
                    return Ok(t.status);
                }
                return Err(ServiceError::Conflict(format!(
                    "{} already voted on {}",
                    req.annotator_id, req.item_id
                )));
            }
            if t.status != TaskStatus::Open {
                return Err(ServiceError::Conflict(
                    format!("task {} is {:?}", t.item_id, t.status).to_lowercase(),
                ));
            }
            let holds = t.leases.iter().any(|l| l.annotator_id == req.annotator_id);
            t.leases
                .retain(|l| l.annotator_id != req.annotator_id && l.expires_at > now);
            if !holds && !req.skipped && t.counted_votes().count() + t.leases.len() >= t.required_votes {
                return Err(ServiceError::Conflict(format!("task {} is fully assigned", t.item_id)));
            }
            t.votes.push(Vote {
                item_id: req.item_id.clone(),
                annotator_id: req.annotator_id.clone(),
                label: req.label,
                skipped: req.skipped,
                submitted_at: now,
                client_token: req.client_token.clone(),
            });
            let (status, gold) = t.aggregate();
            t.status = status;
            t.gold = gold;
            if status != TaskStatus::Open {
                t.leases.clear();
            }
            Ok(status)
        })
    }

    /// Sets the gold label of a tied task.
    pub fn adjudicate(&self, item_id: &str, label: Label, adjudicator_id: &str) -> Result<TaskStatus, ServiceError> {
        self.require_admin(adjudicator_id)?;
        let at = self.clock.now();
        self.update(item_id, |t| {
            if t.status != TaskStatus::Adjudication {
                return Err(ServiceError::Conflict(format!(
                    "task {item_id} is {}, not awaiting adjudication",
                    format!("{:?}", t.status).to_lowercase()
                )));
            }
            t.status = TaskStatus::Complete;
            t.gold = Some(label);
            t.adjudication = Some(Adjudication {
                adjudicator_id: adjudicator_id.to_string(),
                label,
                at,
            });
            Ok(t.status)
        })
    }

    pub fn adjudication_queue(&self, dataset_id: &str) -> Result<Vec<AnnotationTask>, ServiceError> {
        self.dataset(dataset_id)?;
        Ok(self
            .dataset_tasks(dataset_id)
            .iter()
            .filter(|t| t.status == TaskStatus::Adjudication)
            .map(TaskState::view)
            .collect())
    }

    pub fn stats(&self, dataset_id: &str) -> Result<DatasetStats, ServiceError> {
        let d = self.dataset(dataset_id)?;
        let mut s = DatasetStats {
            dataset_id: d.id,
            records: d.records,
            required_votes: d.required_votes,
            open: 0,
            complete: 0,
            adjudication: 0,
            votes: 0,
            skipped: 0,
            votes_by_label: by_label(),
            gold_by_label: by_label(),
        };
        for t in self.dataset_tasks(dataset_id) {
            match t.status {
                TaskStatus::Open => s.open += 1,
                TaskStatus::Complete => s.complete += 1,
                TaskStatus::Adjudication => s.adjudication += 1,
            }
            for v in &t.votes {
                s.votes += 1;
                match v.label {
                    Some(l) => *s.votes_by_label.entry(l).or_default() += 1,
                    None => s.skipped += 1,
                }
            }
            if let Some(g) = t.gold {
                *s.gold_by_label.entry(g).or_default() += 1;
            }
        }
        Ok(s)
    }

    /// Fleiss' kappa over the items carrying exactly the dataset's
    /// redundancy in non-skipped votes; other items are listed as excluded.
    pub fn agreement_report(&self, dataset_id: &str) -> Result<AgreementReport, ServiceError> {
        let d = self.dataset(dataset_id)?;
        let mut rows = Vec::new();
        let mut excluded = Vec::new();
        let mut label_distribution = by_label();
        for t in self.dataset_tasks(dataset_id) {
            let labels: Vec<Label> = t.counted_votes().collect();
            if labels.len() != d.required_votes {
                excluded.push(ExcludedItem {
                    item_id: t.item_id,
                    votes: labels.len(),
                });
                continue;
            }
            let mut row = [0; NUM_CLASSES];
            for l in labels {
                row[l.index()] += 1;
                *label_distribution.entry(l).or_default() += 1;
            }
            rows.push(row);
        }
        let kappa = fleiss_kappa(&rows)?;
        Ok(AgreementReport {
            dataset_id: d.id,
            kappa,
            items: rows.len(),
            ratings_per_item: d.required_votes,
            label_distribution,
            excluded,
        })
    }

    /// One record per complete task, ordered by item id.
    pub fn export_gold(&self, dataset_id: &str) -> Result<Vec<LabeledExample>, ServiceError> {
        self.dataset(dataset_id)?;
        Ok(self
            .dataset_tasks(dataset_id)
            .into_iter()
            .filter(|t| t.status == TaskStatus::Complete)
            .filter_map(|t| {
                Some(LabeledExample {
                    id: t.item_id,
                    text: t.document.raw_text,
                    tokens: t.document.tokens,
                    label: t.gold?,
                })
            })
            .collect())
    }

    pub fn export_gold_jsonl(&self, dataset_id: &str) -> Result<String, ServiceError> {
        Ok(to_jsonl(&self.export_gold(dataset_id)?))
    }
}
