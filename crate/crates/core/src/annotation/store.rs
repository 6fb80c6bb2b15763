use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use super::{Dataset, TaskState};
use crate::jsonl::write_atomic;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{0}")]
    Conflict(String),
    #[error("snapshot {path}: {reason}")]
    Snapshot { path: String, reason: String },
}

/// A task together with the version its next compare-and-set must quote.
#[derive(Debug, Clone, PartialEq)]
pub struct Versioned<T> {
    pub version: u64,
    pub value: T,
}

/// Repository for datasets and per-item task state.
///
/// Implementations must make [`TaskStore::compare_and_set`] atomic per item;
/// the service builds every state transition on it.
pub trait TaskStore: Send + Sync {
    /// Adds a dataset and all its tasks at once. Fails without changes if the
    /// content hash or any item id is already present.
    fn create_dataset(&self, dataset: Dataset, tasks: Vec<TaskState>) -> Result<(), StoreError>;

    fn dataset(&self, id: &str) -> Option<Dataset>;

    fn datasets(&self) -> Vec<Dataset>;

    /// Item ids of one dataset, ascending.
    fn dataset_items(&self, dataset_id: &str) -> Vec<String>;

    /// Every item id in dataset import order, then ascending.
    fn all_items(&self) -> Vec<String>;

    fn load(&self, item_id: &str) -> Option<Versioned<TaskState>>;

    /// Replaces the task if its version is still `expected`. Returns
    /// `Ok(false)` when another writer got there first.
    fn compare_and_set(&self, item_id: &str, expected: u64, next: TaskState) -> Result<bool, StoreError>;
}

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
struct Tables {
    datasets: Vec<Dataset>,
    tasks: BTreeMap<String, (u64, TaskState)>,
}

impl Tables {
    fn create(&mut self, dataset: Dataset, tasks: Vec<TaskState>) -> Result<(), StoreError> {
        if let Some(d) = self.datasets.iter().find(|d| d.content_hash == dataset.content_hash) {
            return Err(StoreError::Conflict(format!("dataset already imported as {}", d.id)));
        }
        if self.datasets.iter().any(|d| d.id == dataset.id) {
            return Err(StoreError::Conflict(format!("dataset id {} is taken", dataset.id)));
        }
        if let Some(t) = tasks.iter().find(|t| self.tasks.contains_key(&t.item_id)) {
            return Err(StoreError::Conflict(format!("item {} already exists", t.item_id)));
        }
        for t in tasks {
            self.tasks.insert(t.item_id.clone(), (0, t));
        }
        self.datasets.push(dataset);
        Ok(())
    }

    fn items_of(&self, dataset_id: &str) -> Vec<String> {
        self.tasks
            .values()
            .filter(|(_, t)| t.dataset_id == dataset_id)
            .map(|(_, t)| t.item_id.clone())
            .collect()
    }

    fn cas(&mut self, item_id: &str, expected: u64, next: TaskState) -> bool {
        match self.tasks.get_mut(item_id) {
            Some(slot) if slot.0 == expected => {
                *slot = (expected + 1, next);
                true
            }
            _ => false,
        }
    }
}

/// Process-local store; state is lost when dropped.
#[derive(Debug, Default)]
pub struct MemoryStore {
    tables: RwLock<Tables>,
}

impl MemoryStore {
    pub fn new() -> Self {
        MemoryStore::default()
    }
}

impl TaskStore for MemoryStore {
    fn create_dataset(&self, dataset: Dataset, tasks: Vec<TaskState>) -> Result<(), StoreError> {
        self.tables.write().create(dataset, tasks)
    }

    fn dataset(&self, id: &str) -> Option<Dataset> {
        self.tables.read().datasets.iter().find(|d| d.id == id).cloned()
    }

    fn datasets(&self) -> Vec<Dataset> {
        self.tables.read().datasets.clone()
    }

    fn dataset_items(&self, dataset_id: &str) -> Vec<String> {
        self.tables.read().items_of(dataset_id)
    }

    fn all_items(&self) -> Vec<String> {
        let t = self.tables.read();
        t.datasets.iter().flat_map(|d| t.items_of(&d.id)).collect()
    }

    fn load(&self, item_id: &str) -> Option<Versioned<TaskState>> {
        self.tables.read().tasks.get(item_id).map(|(version, value)| Versioned {
            version: *version,
            value: value.clone(),
        })
    }

    fn compare_and_set(&self, item_id: &str, expected: u64, next: TaskState) -> Result<bool, StoreError> {
        Ok(self.tables.write().cas(item_id, expected, next))
    }
}

/// In-memory tables persisted as a JSON snapshot after every successful
/// write. Writes are serialized; the snapshot is replaced atomically.
#[derive(Debug)]
pub struct SnapshotStore {
    path: PathBuf,
    tables: Mutex<Tables>,
}

impl SnapshotStore {
    /// Opens `path`, starting empty if it does not exist yet.
    pub fn open(path: &Path) -> Result<Self, StoreError> {
        let err = |reason: String| StoreError::Snapshot {
            path: path.display().to_string(),
            reason,
        };
        let tables = match std::fs::read_to_string(path) {
            Ok(text) => serde_json::from_str(&text).map_err(|e| err(e.to_string()))?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Tables::default(),
            Err(e) => return Err(err(e.to_string())),
        };
        Ok(SnapshotStore {
            path: path.to_path_buf(),
            tables: Mutex::new(tables),
        })
    }

    fn persist(&self, tables: &Tables) -> Result<(), StoreError> {
        let text = serde_json::to_string(tables).expect("tables serialize");
        write_atomic(&self.path, text.as_bytes()).map_err(|e| StoreError::Snapshot {
            path: self.path.display().to_string(),
            reason: e.to_string(),
        })
    }
}

impl TaskStore for SnapshotStore {
    fn create_dataset(&self, dataset: Dataset, tasks: Vec<TaskState>) -> Result<(), StoreError> {
        let mut t = self.tables.lock();
        let mut next = t.clone();
        next.create(dataset, tasks)?;
        self.persist(&next)?;
        *t = next;
        Ok(())
    }

    fn dataset(&self, id: &str) -> Option<Dataset> {
        self.tables.lock().datasets.iter().find(|d| d.id == id).cloned()
    }

    fn datasets(&self) -> Vec<Dataset> {
        self.tables.lock().datasets.clone()
    }

    fn dataset_items(&self, dataset_id: &str) -> Vec<String> {
        self.tables.lock().items_of(dataset_id)
    }

    fn all_items(&self) -> Vec<String> {
        let t = self.tables.lock();
        t.datasets.iter().flat_map(|d| t.items_of(&d.id)).collect()
    }

    fn load(&self, item_id: &str) -> Option<Versioned<TaskState>> {
        self.tables.lock().tasks.get(item_id).map(|(version, value)| Versioned {
            version: *version,
            value: value.clone(),
        })
    }

    fn compare_and_set(&self, item_id: &str, expected: u64, next: TaskState) -> Result<bool, StoreError> {
        let mut t = self.tables.lock();
        let previous = match t.tasks.get(item_id) {
            Some(slot) if slot.0 == expected => slot.clone(),
            _ => return Ok(false),
        };
        t.cas(item_id, expected, next);
        if let Err(e) = self.persist(&t) {
            t.tasks.insert(item_id.to_string(), previous);
            return Err(e);
        }
        Ok(true)
    }
}
