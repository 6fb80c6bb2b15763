use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use parking_lot::Mutex;

use super::{QueryError, RawPost, Source, SourceQuery};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AdapterError {
    /// Network or source outage. Retrying later may succeed.
    #[error("source {origin} unavailable: {reason}")]
    Unavailable { origin: Source, reason: String },
    #[error("source {origin} rate limited, retry after {retry_after:?}")]
    RateLimited { origin: Source, retry_after: Duration },
    #[error("invalid query: {0}")]
    Query(#[from] QueryError),
}

impl AdapterError {
    pub fn is_retriable(&self) -> bool {
        matches!(
            self,
            AdapterError::Unavailable { .. } | AdapterError::RateLimited { .. }
        )
    }
}

/// A record as returned by a source, before validation.
#[derive(Debug, Clone)]
pub enum RawRecord {
    Post(RawPost),
    Malformed { location: String, reason: String },
}

/// One page of results plus the cursor to resume from.
#[derive(Debug, Clone)]
pub struct Page {
    pub records: Vec<RawRecord>,
    /// `None` once the source is exhausted.
    pub next_cursor: Option<String>,
}

/// A pluggable post source.
///
/// Implementations must be resumable: calling `fetch_page` again with the
/// cursor of the last successful page continues where iteration stopped.
/// Rate limits are reported with [`AdapterError::RateLimited`] rather than
/// handled inside the adapter, so the driver can back off.
pub trait SourceAdapter: Send + Sync {
    fn source(&self) -> Source;

    /// Keyword-driven sources (search APIs) require a non-empty keyword list.
    fn keyword_driven(&self) -> bool {
        false
    }

    fn fetch_page(&self, query: &SourceQuery, cursor: Option<&str>) -> Result<Page, AdapterError>;
}

/// Reads newline-delimited `RawPost` records from a file.
#[derive(Debug)]
pub struct FileAdapter {
    path: PathBuf,
    page_size: usize,
    lines: Mutex<Option<Arc<Vec<String>>>>,
}

impl FileAdapter {
    pub const DEFAULT_PAGE_SIZE: usize = 256;

    pub fn new(path: impl Into<PathBuf>) -> Self {
        FileAdapter::with_page_size(path, Self::DEFAULT_PAGE_SIZE)
    }

    pub fn with_page_size(path: impl Into<PathBuf>, page_size: usize) -> Self {
        FileAdapter {
            path: path.into(),
            page_size: page_size.max(1),
            lines: Mutex::new(None),
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn lines(&self) -> Result<Arc<Vec<String>>, AdapterError> {
        let mut cached = self.lines.lock();
        if let Some(lines) = cached.as_ref() {
            return Ok(Arc::clone(lines));
        }
        let text = fs::read_to_string(&self.path).map_err(|e| AdapterError::Unavailable {
            origin: Source::File,
            reason: format!("{}: {e}", self.path.display()),
        })?;
        let lines = Arc::new(text.lines().map(str::to_string).collect::<Vec<_>>());
        *cached = Some(Arc::clone(&lines));
        Ok(lines)
    }
}

impl SourceAdapter for FileAdapter {
    fn source(&self) -> Source {
        Source::File
    }

    fn fetch_page(&self, _query: &SourceQuery, cursor: Option<&str>) -> Result<Page, AdapterError> {
        let lines = self.lines()?;
        let start = match cursor {
            None => 0,
            Some(c) => c.parse::<usize>().map_err(|_| AdapterError::Unavailable {
                origin: Source::File,
                reason: format!("bad cursor {c:?}"),
            })?,
        };
        let end = (start + self.page_size).min(lines.len());
        let mut records = Vec::with_capacity(end.saturating_sub(start));
        for (offset, line) in lines[start.min(end)..end].iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let location = format!("{}:{}", self.path.display(), start + offset + 1);
            let record = match serde_json::from_str::<RawPost>(line) {
                Ok(post) if post.text.trim().is_empty() => RawRecord::Malformed {
                    location,
                    reason: "empty text".into(),
                },
                Ok(post) if post.id.is_empty() => RawRecord::Malformed {
                    location,
                    reason: "empty id".into(),
                },
                Ok(post) => RawRecord::Post(post),
                Err(e) => RawRecord::Malformed {
                    location,
                    reason: e.to_string(),
                },
            };
            records.push(record);
        }
        let next_cursor = (end < lines.len()).then(|| end.to_string());
        Ok(Page { records, next_cursor })
    }
}

/// Backoff applied to retriable adapter errors.
#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            base_delay: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        RetryPolicy {
            max_retries: 0,
            base_delay: Duration::ZERO,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FetchStats {
    pub pages: usize,
    pub yielded: usize,
    pub out_of_window: usize,
    pub malformed: usize,
    pub retries: usize,
}

/// Iterator over the posts of one adapter for one query.
pub struct Fetch<'a> {
    adapter: &'a dyn SourceAdapter,
    query: SourceQuery,
    retry: RetryPolicy,
    cursor: Option<String>,
    buffer: std::vec::IntoIter<RawRecord>,
    exhausted: bool,
    stats: FetchStats,
}

impl Fetch<'_> {
    /// Cursor of the next page to request; pass to [`fetch_from`] to resume.
    pub fn cursor(&self) -> Option<&str> {
        self.cursor.as_deref()
    }

    pub fn stats(&self) -> &FetchStats {
        &self.stats
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    fn load_page(&mut self) -> Result<(), AdapterError> {
        let mut attempt = 0;
        loop {
            match self.adapter.fetch_page(&self.query, self.cursor.as_deref()) {
                Ok(page) => {
                    self.stats.pages += 1;
                    self.exhausted = page.next_cursor.is_none();
                    self.cursor = page.next_cursor;
                    self.buffer = page.records.into_iter();
                    return Ok(());
                }
                Err(e) if e.is_retriable() && attempt < self.retry.max_retries => {
                    let delay = match &e {
                        AdapterError::RateLimited { retry_after, .. } => *retry_after,
                        _ => self.retry.base_delay * 2u32.saturating_pow(attempt),
                    };
                    log::warn!("{e}; retrying in {delay:?}");
                    thread::sleep(delay);
                    attempt += 1;
                    self.stats.retries += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}

impl Iterator for Fetch<'_> {
    type Item = Result<RawPost, AdapterError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            if self.stats.yielded >= self.query.max_items {
                return None;
            }
            match self.buffer.next() {
                Some(RawRecord::Post(post)) => {
                    if self.query.contains(&post.created_at) {
                        self.stats.yielded += 1;
                        return Some(Ok(post));
                    }
                    self.stats.out_of_window += 1;
                }
                Some(RawRecord::Malformed { location, reason }) => {
                    log::warn!("skipping malformed record at {location}: {reason}");
                    self.stats.malformed += 1;
                }
                None if self.exhausted => return None,
                None => {
                    if let Err(e) = self.load_page() {
                        // The cursor is untouched, so a later `next` resumes.
                        return Some(Err(e));
                    }
                }
            }
        }
    }
}

/// Starts iterating `adapter` for `query` from the beginning.
pub fn fetch<'a>(adapter: &'a dyn SourceAdapter, query: &SourceQuery) -> Result<Fetch<'a>, AdapterError> {
    fetch_from(adapter, query, None)
}

/// Resumes iteration from a cursor previously returned by [`Fetch::cursor`].
pub fn fetch_from<'a>(
    adapter: &'a dyn SourceAdapter,
    query: &SourceQuery,
    cursor: Option<String>,
) -> Result<Fetch<'a>, AdapterError> {
    query.validate(adapter.keyword_driven())?;
    Ok(Fetch {
        adapter,
        query: query.clone(),
        retry: RetryPolicy::default(),
        cursor,
        buffer: Vec::new().into_iter(),
        exhausted: false,
        stats: FetchStats::default(),
    })
}

/// Drives every adapter on its own thread and returns the per-source results
/// in adapter order.
pub fn fetch_all(
    adapters: &[Box<dyn SourceAdapter>],
    query: &SourceQuery,
    retry: RetryPolicy,
) -> Result<Vec<(Vec<RawPost>, FetchStats)>, AdapterError> {
    thread::scope(|scope| {
        let handles: Vec<_> = adapters
            .iter()
            .map(|adapter| {
                scope.spawn(move || {
                    let mut it = fetch(adapter.as_ref(), query)?.with_retry(retry);
                    let posts = it.by_ref().collect::<Result<Vec<_>, _>>()?;
                    Ok((posts, it.stats().clone()))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("adapter worker panicked"))
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;
    use std::io::Write;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn line(id: &str, day: u32) -> String {
        format!(
            r#"{{"id":"{id}","source":"file","author_hash":"h","text":"ሰላም {id}","created_at":"2020-01-{day:02}T12:00:00Z"}}"#
        )
    }

    fn fixture(lines: &[String]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    fn query(from: u32, to: u32, max: usize) -> SourceQuery {
        SourceQuery::new(
            NaiveDate::from_ymd_opt(2020, 1, from).unwrap(),
            NaiveDate::from_ymd_opt(2020, 1, to).unwrap(),
            max,
        )
    }

    fn ids(posts: &[RawPost]) -> Vec<&str> {
        posts.iter().map(|p| p.id.as_str()).collect()
    }

    #[test]
    fn three_record_passthrough() {
        let f = fixture(&[line("a", 1), line("b", 2), line("c", 3)]);
        let adapter = FileAdapter::new(f.path());
        let posts: Vec<_> = fetch(&adapter, &query(1, 31, 100))
            .unwrap()
            .collect::<Result<_, _>>()
            .unwrap();
        assert_eq!(ids(&posts), ["a", "b", "c"]);
    }

    #[test]
    fn window_excluding_everything() {
        let f = fixture(&[line("a", 1), line("b", 2), line("c", 3)]);
        let adapter = FileAdapter::new(f.path());
        let mut it = fetch(&adapter, &query(10, 20, 100)).unwrap();
        assert_eq!(it.by_ref().count(), 0);
        assert_eq!(it.stats().out_of_window, 3);
    }

    #[test]
    fn max_items_takes_file_order_prefix() {
        let lines: Vec<_> = (1..=10).map(|i| line(&format!("p{i:02}"), i)).collect();
        let f = fixture(&lines);
        let adapter = FileAdapter::with_page_size(f.path(), 3);
        let posts: Vec<_> = fetch(&adapter, &query(1, 31, 4))
            .unwrap()
            .collect::<Result<_, _>>()
            .unwrap();
        assert_eq!(ids(&posts), ["p01", "p02", "p03", "p04"]);
    }

    #[test]
    fn malformed_records_are_counted_and_skipped() {
        let f = fixture(&[
            line("a", 1),
            "{not json".to_string(),
            r#"{"id":"e","source":"file","author_hash":"h","text":"  ","created_at":"2020-01-01T00:00:00Z"}"#
                .to_string(),
            r#"{"id":"t","source":"file","author_hash":"h","text":"x","created_at":"yesterday"}"#.to_string(),
            line("b", 2),
        ]);
        let adapter = FileAdapter::new(f.path());
        let mut it = fetch(&adapter, &query(1, 31, 100)).unwrap();
        let posts: Vec<_> = it.by_ref().collect::<Result<_, _>>().unwrap();
        assert_eq!(ids(&posts), ["a", "b"]);
        assert_eq!(it.stats().malformed, 3);
    }

    #[test]
    fn missing_file_is_retriable() {
        let adapter = FileAdapter::new("/nonexistent/fixture.jsonl");
        let err = fetch(&adapter, &query(1, 31, 10))
            .unwrap()
            .with_retry(RetryPolicy::none())
            .next()
            .unwrap()
            .unwrap_err();
        assert!(err.is_retriable());
    }

    /// Fails every other page request; iteration must resume without loss.
    struct Flaky {
        inner: FileAdapter,
        calls: AtomicUsize,
    }

    impl SourceAdapter for Flaky {
        fn source(&self) -> Source {
            Source::Twitter
        }
        fn fetch_page(&self, q: &SourceQuery, cursor: Option<&str>) -> Result<Page, AdapterError> {
            if self.calls.fetch_add(1, Ordering::SeqCst).is_multiple_of(2) {
                return Err(AdapterError::RateLimited {
                    origin: Source::Twitter,
                    retry_after: Duration::from_millis(1),
                });
            }
            self.inner.fetch_page(q, cursor)
        }
    }

    #[test]
    fn rate_limits_are_retried_and_resumable() {
        let lines: Vec<_> = (1..=7).map(|i| line(&format!("p{i}"), i)).collect();
        let f = fixture(&lines);
        let flaky = Flaky {
            inner: FileAdapter::with_page_size(f.path(), 2),
            calls: AtomicUsize::new(0),
        };
        let mut it = fetch(&flaky, &query(1, 31, 100)).unwrap();
        let posts: Vec<_> = it.by_ref().collect::<Result<_, _>>().unwrap();
        assert_eq!(posts.len(), 7);
        assert_eq!(it.stats().retries, 4);

        // Without retries the error surfaces but the next call resumes.
        flaky.calls.store(0, Ordering::SeqCst);
        let mut it = fetch(&flaky, &query(1, 31, 100))
            .unwrap()
            .with_retry(RetryPolicy::none());
        let mut got = Vec::new();
        let mut errors = 0;
        for item in it.by_ref() {
            match item {
                Ok(p) => got.push(p),
                Err(_) => errors += 1,
            }
        }
        assert_eq!(got.len(), 7);
        assert_eq!(errors, 4);
    }

    #[test]
    fn fetch_all_preserves_adapter_order() {
        let f1 = fixture(&[line("a", 1), line("b", 2)]);
        let f2 = fixture(&[line("c", 3)]);
        let adapters: Vec<Box<dyn SourceAdapter>> = vec![
            Box::new(FileAdapter::new(f1.path())),
            Box::new(FileAdapter::new(f2.path())),
        ];
        let results = fetch_all(&adapters, &query(1, 31, 10), RetryPolicy::none()).unwrap();
        assert_eq!(ids(&results[0].0), ["a", "b"]);
        assert_eq!(ids(&results[1].0), ["c"]);
    }
}
