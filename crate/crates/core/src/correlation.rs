//! Article ↔ dataset correlations: ingested from publisher feeds, harvested
//! by data centers.
//!
//! Feed and harvest share one line format, `article_id TAB dataset_id`.
//! Readers work on an immutable snapshot; ingest builds the next snapshot and
//! publishes it in one swap.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use parking_lot::{Mutex, RwLock};
use thiserror::Error;

use crate::clock::{format_timestamp, parse_timestamp, SharedClock};
use crate::dsid::{self, is_valid_facility, normalize_facility, ParseError};
use crate::query::xml_escape;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Correlation {
    pub article_id: String,
    /// Canonical identifier string.
    pub dataset_id: String,
    pub source: String,
    pub recorded_at: DateTime<Utc>,
}

impl Correlation {
    fn facility_key(&self) -> String {
        let id = dsid::parse(&self.dataset_id).expect("stored dataset ids are canonical");
        id.facility_key()
    }

    fn to_log_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}",
            self.article_id,
            self.dataset_id,
            self.source,
            format_timestamp(self.recorded_at)
        )
    }

    fn from_log_line(line: &str) -> Result<Self, String> {
        let fields: Vec<&str> = line.split('\t').collect();
        let [article, dataset, source, at] = fields[..] else {
            return Err(format!("expected 4 fields, found {}", fields.len()));
        };
        validate_article(article).map_err(|r| r.to_string())?;
        let dataset_id = dsid::canonicalize(dataset).map_err(|e| e.to_string())?;
        Ok(Self {
            article_id: article.to_owned(),
            dataset_id,
            source: source.to_owned(),
            recorded_at: parse_timestamp(at).ok_or_else(|| format!("bad timestamp `{at}`"))?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RejectReason {
    #[error("expected 2 tab-separated fields, found {0}")]
    FieldCount(usize),
    #[error("empty article id")]
    EmptyArticle,
    #[error("article id contains whitespace or control characters")]
    BadArticle,
    #[error("{0}")]
    BadIdentifier(ParseError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejection {
    /// 1-based line number in the feed.
    pub line: usize,
    pub reason: RejectReason,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IngestReport {
    pub inserted: usize,
    pub updated: usize,
    pub rejected: Vec<Rejection>,
}

impl IngestReport {
    pub fn to_xml(&self) -> String {
        let mut s = format!(
            "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<ingest inserted=\"{}\" updated=\"{}\" rejected=\"{}\">\n",
            self.inserted,
            self.updated,
            self.rejected.len()
        );
        for r in &self.rejected {
            s.push_str(&format!(
                "  <reject line=\"{}\" reason=\"{}\"/>\n",
                r.line,
                xml_escape(&r.reason.to_string())
            ));
        }
        s.push_str("</ingest>\n");
        s
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("feed is not valid UTF-8 (first bad byte at {0})")]
    FeedUnreadable(usize),
    #[error("invalid source token `{0}`")]
    BadSource(String),
    #[error("correlation log {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn validate_article(article: &str) -> Result<(), RejectReason> {
    if article.is_empty() {
        Err(RejectReason::EmptyArticle)
    } else if article.chars().any(|c| c.is_whitespace() || c.is_control()) {
        Err(RejectReason::BadArticle)
    } else {
        Ok(())
    }
}

/// Parses one feed line into `(article_id, canonical dataset_id)`.
pub fn parse_feed_line(line: &str) -> Result<(String, String), RejectReason> {
    let fields: Vec<&str> = line.split('\t').collect();
    let [article, dataset] = fields[..] else {
        return Err(RejectReason::FieldCount(fields.len()));
    };
    validate_article(article)?;
    let dataset_id = dsid::canonicalize(dataset).map_err(RejectReason::BadIdentifier)?;
    Ok((article.to_owned(), dataset_id))
}

#[derive(Debug, Clone, Default)]
struct Snapshot {
    pairs: BTreeMap<(String, String), Correlation>,
    by_dataset: BTreeMap<String, BTreeSet<String>>,
}

impl Snapshot {
    fn upsert(&mut self, c: Correlation) -> bool {
        let key = (c.article_id.clone(), c.dataset_id.clone());
        self.by_dataset
            .entry(c.dataset_id.clone())
            .or_default()
            .insert(c.article_id.clone());
        match self.pairs.get_mut(&key) {
            Some(existing) => {
                existing.recorded_at = c.recorded_at;
                false
            }
            None => {
                self.pairs.insert(key, c);
                true
            }
        }
    }
}

const SNAPSHOT_FILE: &str = "correlations.tsv";
const LOG_FILE: &str = "correlations.log";
pub const DEFAULT_COMPACT_AFTER: usize = 10_000;

/// On-disk persistence: a sorted snapshot plus an append log of upserts made
/// since the last compaction.
#[derive(Debug)]
pub struct CorrelationLog {
    dir: PathBuf,
    pending: usize,
    compact_after: usize,
}

impl CorrelationLog {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, IngestError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|source| IngestError::Io { path: dir.clone(), source })?;
        Ok(Self {
            dir,
            pending: 0,
            compact_after: DEFAULT_COMPACT_AFTER,
        })
    }

    pub fn with_compact_after(mut self, n: usize) -> Self {
        self.compact_after = n.max(1);
        self
    }

    pub fn snapshot_path(&self) -> PathBuf {
        self.dir.join(SNAPSHOT_FILE)
    }

    pub fn log_path(&self) -> PathBuf {
        self.dir.join(LOG_FILE)
    }

    fn io(path: &Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
        move |source| IngestError::Io { path: path.to_owned(), source }
    }

    fn read_lines(path: &Path, into: &mut Snapshot) -> Result<usize, IngestError> {
        let file = match File::open(path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(0),
            Err(e) => return Err(Self::io(path)(e)),
        };
        let mut n = 0;
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(Self::io(path))?;
            if line.is_empty() {
                continue;
            }
            match Correlation::from_log_line(&line) {
                Ok(c) => {
                    into.upsert(c);
                    n += 1;
                }
                Err(reason) => tracing::warn!(path = %path.display(), line = idx + 1, %reason, "skipping bad log line"),
            }
        }
        Ok(n)
    }

    fn load(&mut self) -> Result<Snapshot, IngestError> {
        let mut snap = Snapshot::default();
        Self::read_lines(&self.snapshot_path(), &mut snap)?;
        self.pending = Self::read_lines(&self.log_path(), &mut snap)?;
        Ok(snap)
    }

    fn append(&mut self, records: &[Correlation]) -> Result<(), IngestError> {
        if records.is_empty() {
            return Ok(());
        }
        let path = self.log_path();
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(Self::io(&path))?;
        let mut buf = String::new();
        for r in records {
            buf.push_str(&r.to_log_line());
            buf.push('\n');
        }
        f.write_all(buf.as_bytes()).map_err(Self::io(&path))?;
        self.pending += records.len();
        Ok(())
    }

    fn compact(&mut self, snap: &Snapshot) -> Result<(), IngestError> {
        let path = self.snapshot_path();
        let tmp = path.with_extension("tmp");
        let mut buf = String::new();
        for c in snap.pairs.values() {
            buf.push_str(&c.to_log_line());
            buf.push('\n');
        }
        fs::write(&tmp, buf).map_err(Self::io(&tmp))?;
        fs::rename(&tmp, &path).map_err(Self::io(&path))?;
        let log = self.log_path();
        match fs::remove_file(&log) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => return Err(Self::io(&log)(e)),
        }
        self.pending = 0;
        Ok(())
    }
}

pub struct CorrelationStore {
    snapshot: RwLock<Arc<Snapshot>>,
    writer: Mutex<Option<CorrelationLog>>,
    clock: SharedClock,
}

impl CorrelationStore {
    pub fn in_memory(clock: SharedClock) -> Self {
        Self {
            snapshot: RwLock::new(Arc::new(Snapshot::default())),
            writer: Mutex::new(None),
            clock,
        }
    }

    /// Opens a persistent store, replaying snapshot and log.
    pub fn open(mut log: CorrelationLog, clock: SharedClock) -> Result<Self, IngestError> {
        let snap = log.load()?;
        Ok(Self {
            snapshot: RwLock::new(Arc::new(snap)),
            writer: Mutex::new(Some(log)),
            clock,
        })
    }

    fn current(&self) -> Arc<Snapshot> {
        self.snapshot.read().clone()
    }

    pub fn len(&self) -> usize {
        self.current().pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Upserts every valid line of a publisher feed. Bad lines are reported
    /// and skipped; only non-UTF-8 input fails the whole feed.
    pub fn ingest_feed(&self, feed: &[u8], source: &str) -> Result<IngestReport, IngestError> {
        let text = std::str::from_utf8(feed).map_err(|e| IngestError::FeedUnreadable(e.valid_up_to()))?;
        if !is_valid_facility(source) {
            return Err(IngestError::BadSource(source.to_owned()));
        }

        let mut writer = self.writer.lock();
        let now = self.clock.now();
        let mut next = (*self.current()).clone();
        let mut report = IngestReport::default();
        let mut accepted = Vec::new();

        for (idx, raw) in text.split('\n').enumerate() {
            let line = raw.strip_suffix('\r').unwrap_or(raw);
            if line.is_empty() {
                continue;
            }
            match parse_feed_line(line) {
                Ok((article_id, dataset_id)) => {
                    let c = Correlation {
                        article_id,
                        dataset_id,
                        source: source.to_owned(),
                        recorded_at: now,
                    };
                    accepted.push(c.clone());
                    if next.upsert(c) {
                        report.inserted += 1;
                    } else {
                        report.updated += 1;
                    }
                }
                Err(reason) => report.rejected.push(Rejection { line: idx + 1, reason }),
            }
        }

        if let Some(log) = writer.as_mut() {
            log.append(&accepted)?;
            if log.pending >= log.compact_after {
                log.compact(&next)?;
            }
        }
        *self.snapshot.write() = Arc::new(next);
        Ok(report)
    }

    /// Folds the append log into the sorted snapshot file.
    pub fn compact(&self) -> Result<(), IngestError> {
        let mut writer = self.writer.lock();
        if let Some(log) = writer.as_mut() {
            log.compact(&self.current())?;
        }
        Ok(())
    }

    /// Correlations whose dataset facility matches (all when `None`) and that
    /// were recorded at or after `since`, ordered by article then dataset.
    pub fn harvest(&self, facility: Option<&str>, since: Option<DateTime<Utc>>) -> String {
        let facility = facility.map(normalize_facility);
        let snap = self.current();
        let mut out = String::new();
        for c in snap.pairs.values() {
            if since.is_some_and(|t| c.recorded_at < t) {
                continue;
            }
            if facility.as_deref().is_some_and(|f| c.facility_key() != f) {
                continue;
            }
            out.push_str(&c.article_id);
            out.push('\t');
            out.push_str(&c.dataset_id);
            out.push('\n');
        }
        out
    }

    pub fn lookup_article(&self, article_id: &str) -> Vec<String> {
        let snap = self.current();
        let lo = (article_id.to_owned(), String::new());
        snap.pairs
            .range(lo..)
            .take_while(|((a, _), _)| a == article_id)
            .map(|((_, d), _)| d.clone())
            .collect()
    }

    pub fn lookup_dataset(&self, dataset_id: &str) -> Result<Vec<String>, ParseError> {
        let canonical = dsid::canonicalize(dataset_id)?;
        Ok(self
            .current()
            .by_dataset
            .get(&canonical)
            .map(|s| s.iter().cloned().collect())
            .unwrap_or_default())
    }

    pub fn correlation(&self, article_id: &str, dataset_id: &str) -> Option<Correlation> {
        self.current()
            .pairs
            .get(&(article_id.to_owned(), dataset_id.to_owned()))
            .cloned()
    }

    /// All `(article, dataset)` pairs in harvest order.
    pub fn pairs(&self) -> Vec<(String, String)> {
        self.current().pairs.keys().cloned().collect()
    }
}

/// Renders `(article, dataset)` pairs in the shared line format.
pub fn render_lines<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> String {
    let mut out = String::new();
    for (a, d) in pairs {
        out.push_str(a);
        out.push('\t');
        out.push_str(d);
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::{Clock, SimClock};
    use crate::dsid::ParseErrorKind;

    const FEED: &str = "2006ApJ...1A\tADS/MAST#hst.1\n2006ApJ...1A\tADS/Sa.CXO#obs/1\n2006AJ....2B\tADS/MAST#hst.2\n";

    fn store() -> (Arc<SimClock>, CorrelationStore) {
        let clock = SimClock::at_epoch();
        (clock.clone(), CorrelationStore::in_memory(clock))
    }

    #[test]
    fn ingest_is_idempotent_upsert() {
        let (clock, s) = store();
        let r = s.ingest_feed(FEED.as_bytes(), "UCP").unwrap();
        assert_eq!((r.inserted, r.updated, r.rejected.len()), (3, 0, 0));
        let before = s.harvest(None, None);
        clock.advance(chrono::Duration::hours(1));
        let r = s.ingest_feed(FEED.as_bytes(), "UCP").unwrap();
        assert_eq!((r.inserted, r.updated, r.rejected.len()), (0, 3, 0));
        assert_eq!(s.harvest(None, None), before);
        let c = s.correlation("2006ApJ...1A", "ADS/MAST#hst.1").unwrap();
        assert_eq!(c.recorded_at, clock.now());
    }

    #[test]
    fn bad_lines_are_rejected_individually() {
        let (_, s) = store();
        let feed = "a1\tADS/MAST#x\na2\tADS/MAST#\nonly-one-field\n\r\n\tADS/MAST#y\na 3\tADS/MAST#y\n";
        let r = s.ingest_feed(feed.as_bytes(), "UCP").unwrap();
        assert_eq!(r.inserted, 1);
        assert_eq!(
            r.rejected,
            [
                Rejection {
                    line: 2,
                    reason: RejectReason::BadIdentifier(ParseError {
                        kind: ParseErrorKind::EmptyPrivateId,
                        position: 9
                    })
                },
                Rejection { line: 3, reason: RejectReason::FieldCount(1) },
                Rejection { line: 5, reason: RejectReason::EmptyArticle },
                Rejection { line: 6, reason: RejectReason::BadArticle },
            ]
        );
        assert!(r.to_xml().contains("<reject line=\"2\" reason=\"EmptyPrivateId at byte 9\"/>"));
    }

    #[test]
    fn non_utf8_and_bad_source() {
        let (_, s) = store();
        assert!(matches!(s.ingest_feed(b"a\tADS/M#\xff", "UCP"), Err(IngestError::FeedUnreadable(8))));
        assert!(matches!(s.ingest_feed(b"", "U P"), Err(IngestError::BadSource(_))));
    }

    #[test]
    fn harvest_filters() {
        let (clock, s) = store();
        s.ingest_feed(FEED.as_bytes(), "UCP").unwrap();
        assert_eq!(s.harvest(Some("MAST"), None), "2006AJ....2B\tADS/MAST#hst.2\n2006ApJ...1A\tADS/MAST#hst.1\n");
        assert_eq!(s.harvest(Some("sa.cxo"), None), "2006ApJ...1A\tADS/Sa.CXO#obs/1\n");
        let later = clock.now() + chrono::Duration::seconds(1);
        assert_eq!(s.harvest(None, Some(later)), "");
        assert_eq!(s.harvest(None, Some(clock.now())).lines().count(), 3);
    }

    #[test]
    fn lookups_both_directions() {
        let (_, s) = store();
        s.ingest_feed(FEED.as_bytes(), "UCP").unwrap();
        s.ingest_feed(b"2007PASP.3C\tADS/MAST#hst.1\n", "UCP").unwrap();
        assert_eq!(s.lookup_article("2006ApJ...1A"), ["ADS/MAST#hst.1", "ADS/Sa.CXO#obs/1"]);
        assert!(s.lookup_article("nope").is_empty());
        assert_eq!(s.lookup_dataset("ADS/MAST#hst.1").unwrap(), ["2006ApJ...1A", "2007PASP.3C"]);
        assert!(s.lookup_dataset("ADS/MAST#uncited").unwrap().is_empty());
        assert!(s.lookup_dataset("MAST#x").is_err());
    }

    #[test]
    fn persistence_replays_and_compacts() {
        let dir = tempfile::tempdir().unwrap();
        let clock = SimClock::at_epoch();
        {
            let s = CorrelationStore::open(CorrelationLog::open(dir.path()).unwrap(), clock.clone()).unwrap();
            s.ingest_feed(FEED.as_bytes(), "UCP").unwrap();
        }
        let log = fs::read_to_string(dir.path().join(LOG_FILE)).unwrap();
        assert_eq!(log.lines().count(), 3);
        assert!(log.starts_with("2006ApJ...1A\tADS/MAST#hst.1\tUCP\t2006-09-01T00:00:00Z\n"));

        let s = CorrelationStore::open(CorrelationLog::open(dir.path()).unwrap(), clock.clone()).unwrap();
        assert_eq!(s.len(), 3);
        s.compact().unwrap();
        assert!(!dir.path().join(LOG_FILE).exists());
        assert_eq!(
            fs::read_to_string(dir.path().join(SNAPSHOT_FILE)).unwrap(),
            "2006AJ....2B\tADS/MAST#hst.2\tUCP\t2006-09-01T00:00:00Z\n\
             2006ApJ...1A\tADS/MAST#hst.1\tUCP\t2006-09-01T00:00:00Z\n\
             2006ApJ...1A\tADS/Sa.CXO#obs/1\tUCP\t2006-09-01T00:00:00Z\n"
        );
        let reopened = CorrelationStore::open(CorrelationLog::open(dir.path()).unwrap(), clock).unwrap();
        assert_eq!(reopened.harvest(None, None), s.harvest(None, None));
    }

    #[test]
    fn automatic_compaction() {
        let dir = tempfile::tempdir().unwrap();
        let log = CorrelationLog::open(dir.path()).unwrap().with_compact_after(2);
        let s = CorrelationStore::open(log, SimClock::at_epoch()).unwrap();
        s.ingest_feed(FEED.as_bytes(), "UCP").unwrap();
        assert!(!dir.path().join(LOG_FILE).exists());
        assert_eq!(fs::read_to_string(dir.path().join(SNAPSHOT_FILE)).unwrap().lines().count(), 3);
    }
}
