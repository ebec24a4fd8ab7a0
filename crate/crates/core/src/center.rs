//! Reference data center: an inventory of datasets, the local verifier, the
//! current-link lookup and the profile document derived from the inventory.
//!
//! Records can be inserted, have their URL updated, or be handed off to
//! another center. There is deliberately no delete: a published identifier
//! must stay recognizable forever.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use parking_lot::RwLock;
use thiserror::Error;
use url::Url;

use crate::clock::{format_timestamp, parse_timestamp, SharedClock};
use crate::dsid::{self, normalize_facility, DatasetIdentifier};
use crate::profile::render_profile;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InventoryRecord {
    /// Normalized facility token.
    pub facility_id: String,
    /// Opaque, compared case-sensitively.
    pub private_id: String,
    pub current_url: Url,
    pub created_at: DateTime<Utc>,
}

impl InventoryRecord {
    pub fn identifier(&self) -> DatasetIdentifier {
        DatasetIdentifier::new(&self.facility_id, &self.private_id).expect("inventory holds valid components")
    }

    /// One line of the inventory table, without the trailing newline.
    pub fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}",
            self.facility_id,
            self.private_id,
            self.current_url,
            format_timestamp(self.created_at)
        )
    }

    pub fn from_line(line: &str) -> Result<Self, String> {
        let fields: Vec<&str> = line.split('\t').collect();
        let [facility, private, url, created] = fields[..] else {
            return Err(format!("expected 4 tab-separated fields, found {}", fields.len()));
        };
        let id = DatasetIdentifier::new(facility, private).map_err(|e| format!("bad identifier: {e}"))?;
        if id.facility_key() != facility {
            return Err(format!("facility `{facility}` is not normalized"));
        }
        let current_url = Url::parse(url).map_err(|e| format!("bad url: {e}"))?;
        let created_at = parse_timestamp(created).ok_or_else(|| format!("bad timestamp `{created}`"))?;
        Ok(Self {
            facility_id: facility.to_owned(),
            private_id: private.to_owned(),
            current_url,
            created_at,
        })
    }
}

/// Answer of the local verifier; the URL is present exactly when valid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LocalVerdict {
    Valid(Url),
    NotFound,
}

impl LocalVerdict {
    pub fn is_valid(&self) -> bool {
        matches!(self, LocalVerdict::Valid(_))
    }

    /// `<verdict status="valid|notfound" url="..."/>`
    pub fn to_xml(&self) -> String {
        match self {
            LocalVerdict::Valid(url) => {
                format!("<verdict status=\"valid\" url=\"{}\"/>\n", crate::query::xml_escape(url.as_str()))
            }
            LocalVerdict::NotFound => "<verdict status=\"notfound\"/>\n".to_owned(),
        }
    }

    pub fn from_xml(body: &[u8]) -> Result<Self, String> {
        use quick_xml::events::Event;
        let mut reader = quick_xml::Reader::from_reader(body);
        let mut buf = Vec::new();
        loop {
            match reader.read_event_into(&mut buf).map_err(|e| e.to_string())? {
                Event::Start(e) | Event::Empty(e) if e.local_name().as_ref() == b"verdict" => {
                    let mut status = None;
                    let mut url = None;
                    for attr in e.attributes() {
                        let attr = attr.map_err(|e| e.to_string())?;
                        let value = attr.unescape_value().map_err(|e| e.to_string())?.into_owned();
                        match attr.key.local_name().as_ref() {
                            b"status" => status = Some(value),
                            b"url" => url = Some(value),
                            _ => {}
                        }
                    }
                    return match (status.as_deref(), url) {
                        (Some("valid"), Some(u)) => Url::parse(&u).map(LocalVerdict::Valid).map_err(|e| e.to_string()),
                        (Some("valid"), None) => Err("valid verdict without url".into()),
                        (Some("notfound"), _) => Ok(LocalVerdict::NotFound),
                        (other, _) => Err(format!("unknown verdict status {other:?}")),
                    };
                }
                Event::Eof => return Err("no <verdict> element".into()),
                _ => {}
            }
            buf.clear();
        }
    }
}

#[derive(Debug, Error)]
pub enum CenterError {
    #[error("facility `{0}` is not served by this center")]
    FacilityNotServed(String),
    #[error("no dataset `{0}`")]
    NotFound(String),
    #[error("dataset `{0}` already exists")]
    Duplicate(String),
    #[error(transparent)]
    InvalidIdentifier(#[from] dsid::ParseError),
    #[error("inventory file {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("inventory file {path} line {line}: {reason}")]
    Malformed { path: PathBuf, line: usize, reason: String },
}

/// Line-oriented on-disk inventory: one record per line, later lines for the
/// same `(facility, private_id)` override earlier ones.
#[derive(Debug, Clone)]
pub struct InventoryFile {
    path: PathBuf,
}

impl InventoryFile {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn io(&self, source: std::io::Error) -> CenterError {
        CenterError::Io { path: self.path.clone(), source }
    }

    /// Loads every record; a missing file is an empty inventory.
    pub fn load(&self) -> Result<Vec<InventoryRecord>, CenterError> {
        let file = match File::open(&self.path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(self.io(e)),
        };
        let mut records: BTreeMap<(String, String), InventoryRecord> = BTreeMap::new();
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| self.io(e))?;
            if line.is_empty() {
                continue;
            }
            let rec = InventoryRecord::from_line(&line).map_err(|reason| CenterError::Malformed {
                path: self.path.clone(),
                line: idx + 1,
                reason,
            })?;
            records.insert((rec.facility_id.clone(), rec.private_id.clone()), rec);
        }
        Ok(records.into_values().collect())
    }

    pub fn append(&self, record: &InventoryRecord) -> Result<(), CenterError> {
        let mut f = OpenOptions::new().create(true).append(true).open(&self.path).map_err(|e| self.io(e))?;
        writeln!(f, "{}", record.to_line()).map_err(|e| self.io(e))
    }

    /// Rewrites the file as a sorted table, replacing it atomically.
    pub fn write_snapshot<'a>(&self, records: impl IntoIterator<Item = &'a InventoryRecord>) -> Result<(), CenterError> {
        let tmp = self.path.with_extension("tmp");
        let mut f = File::create(&tmp).map_err(|e| self.io(e))?;
        for rec in records {
            writeln!(f, "{}", rec.to_line()).map_err(|e| self.io(e))?;
        }
        f.sync_all().map_err(|e| self.io(e))?;
        fs::rename(&tmp, &self.path).map_err(|e| self.io(e))
    }
}

#[derive(Debug, Default)]
struct Inventory {
    records: BTreeMap<(String, String), InventoryRecord>,
    /// Facilities claimed even while they hold no records.
    claimed: BTreeSet<String>,
}

impl Inventory {
    fn facilities(&self) -> BTreeSet<String> {
        let mut set = self.claimed.clone();
        set.extend(self.records.keys().map(|(f, _)| f.clone()));
        set
    }

    fn serves(&self, facility: &str) -> bool {
        self.claimed.contains(facility) || self.records.range(facility_range(facility)).next().is_some()
    }
}

fn facility_range(facility: &str) -> std::ops::RangeInclusive<(String, String)> {
    // Private ids are printable ASCII, so U+10FFFF sorts after all of them.
    (facility.to_owned(), String::new())..=(facility.to_owned(), char::MAX.to_string())
}

pub struct LocalCenter {
    center_id: String,
    display_name: String,
    base_url: Url,
    clock: SharedClock,
    inventory: RwLock<Inventory>,
    store: Option<InventoryFile>,
}

impl LocalCenter {
    pub fn new(center_id: &str, display_name: &str, base_url: Url, clock: SharedClock) -> Self {
        Self {
            center_id: center_id.to_owned(),
            display_name: display_name.to_owned(),
            base_url,
            clock,
            inventory: RwLock::new(Inventory::default()),
            store: None,
        }
    }

    /// Backs the center by an inventory file, loading whatever it holds.
    pub fn with_store(mut self, store: InventoryFile) -> Result<Self, CenterError> {
        let records = store.load()?;
        {
            let inv = self.inventory.get_mut();
            for rec in records {
                inv.records.insert((rec.facility_id.clone(), rec.private_id.clone()), rec);
            }
        }
        self.store = Some(store);
        Ok(self)
    }

    pub fn center_id(&self) -> &str {
        &self.center_id
    }

    pub fn base_url(&self) -> &Url {
        &self.base_url
    }

    pub fn verifier_url(&self) -> Url {
        join(&self.base_url, "verify")
    }

    pub fn resolver_url(&self) -> Url {
        join(&self.base_url, "resolve")
    }

    pub fn facilities(&self) -> BTreeSet<String> {
        self.inventory.read().facilities()
    }

    /// Declares a facility served even before it has records.
    pub fn claim_facility(&self, facility: &str) -> Result<(), CenterError> {
        let key = checked_facility(facility)?;
        self.inventory.write().claimed.insert(key);
        Ok(())
    }

    pub fn insert(&self, facility: &str, private_id: &str, url: Url) -> Result<InventoryRecord, CenterError> {
        let id = DatasetIdentifier::new(facility, private_id)?;
        let key = (id.facility_key(), id.private_id().to_owned());
        let mut inv = self.inventory.write();
        if inv.records.contains_key(&key) {
            return Err(CenterError::Duplicate(id.to_string()));
        }
        let rec = InventoryRecord {
            facility_id: key.0.clone(),
            private_id: key.1.clone(),
            current_url: url,
            created_at: self.clock.now(),
        };
        if let Some(store) = &self.store {
            store.append(&rec)?;
        }
        inv.records.insert(key, rec.clone());
        Ok(rec)
    }

    /// Points an existing record at a new location.
    pub fn update_url(&self, facility: &str, private_id: &str, url: Url) -> Result<(), CenterError> {
        let key = (normalize_facility(facility), private_id.to_owned());
        let mut inv = self.inventory.write();
        if !inv.serves(&key.0) {
            return Err(CenterError::FacilityNotServed(key.0));
        }
        let Some(rec) = inv.records.get_mut(&key) else {
            return Err(CenterError::NotFound(format!("{}#{}", key.0, key.1)));
        };
        let mut updated = rec.clone();
        updated.current_url = url;
        if let Some(store) = &self.store {
            store.append(&updated)?;
        }
        *rec = updated;
        Ok(())
    }

    pub fn verify_local(&self, facility: &str, private_id: &str) -> Result<LocalVerdict, CenterError> {
        match self.current_link(facility, private_id) {
            Ok(url) => Ok(LocalVerdict::Valid(url)),
            Err(CenterError::NotFound(_)) => Ok(LocalVerdict::NotFound),
            Err(e) => Err(e),
        }
    }

    pub fn current_link(&self, facility: &str, private_id: &str) -> Result<Url, CenterError> {
        let key = (normalize_facility(facility), private_id.to_owned());
        let inv = self.inventory.read();
        if !inv.serves(&key.0) {
            return Err(CenterError::FacilityNotServed(key.0));
        }
        inv.records
            .get(&key)
            .map(|r| r.current_url.clone())
            .ok_or_else(|| CenterError::NotFound(format!("{}#{}", key.0, key.1)))
    }

    /// All records of a facility, ordered by private id.
    pub fn export_inventory(&self, facility: &str) -> Result<Vec<InventoryRecord>, CenterError> {
        let key = normalize_facility(facility);
        let inv = self.inventory.read();
        if !inv.serves(&key) {
            return Err(CenterError::FacilityNotServed(key));
        }
        Ok(inv.records.range(facility_range(&key)).map(|(_, r)| r.clone()).collect())
    }

    /// Takes over records exported by another center and claims their
    /// facility. All-or-nothing: one duplicate rejects the whole batch.
    pub fn import_inventory(&self, facility: &str, records: &[InventoryRecord]) -> Result<usize, CenterError> {
        let facility = checked_facility(facility)?;
        let mut inv = self.inventory.write();
        for rec in records {
            DatasetIdentifier::new(&rec.facility_id, &rec.private_id)?;
            if rec.facility_id != facility {
                return Err(CenterError::FacilityNotServed(rec.facility_id.clone()));
            }
            if inv.records.contains_key(&(rec.facility_id.clone(), rec.private_id.clone())) {
                return Err(CenterError::Duplicate(rec.identifier().to_string()));
            }
        }
        if let Some(store) = &self.store {
            for rec in records {
                store.append(rec)?;
            }
        }
        for rec in records {
            inv.records.insert((rec.facility_id.clone(), rec.private_id.clone()), rec.clone());
        }
        inv.claimed.insert(facility);
        Ok(records.len())
    }

    /// Hands a facility off to another center: its records leave this
    /// inventory and the facility disappears from the profile. This is the
    /// only way records ever leave a center.
    pub fn release_facility(&self, facility: &str) -> Result<Vec<InventoryRecord>, CenterError> {
        let key = normalize_facility(facility);
        let mut inv = self.inventory.write();
        if !inv.serves(&key) {
            return Err(CenterError::FacilityNotServed(key));
        }
        let keys: Vec<_> = inv.records.range(facility_range(&key)).map(|(k, _)| k.clone()).collect();
        let released: Vec<_> = keys.iter().filter_map(|k| inv.records.remove(k)).collect();
        inv.claimed.remove(&key);
        if let Some(store) = &self.store {
            store.write_snapshot(inv.records.values())?;
        }
        Ok(released)
    }

    pub fn record_count(&self) -> usize {
        self.inventory.read().records.len()
    }

    pub fn all_records(&self) -> Vec<InventoryRecord> {
        self.inventory.read().records.values().cloned().collect()
    }

    /// Current profile document.
    pub fn serve_profile(&self) -> String {
        render_profile(
            &self.center_id,
            &self.display_name,
            &self.verifier_url(),
            &self.resolver_url(),
            &self.facilities(),
        )
    }
}

impl std::fmt::Debug for LocalCenter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LocalCenter")
            .field("center_id", &self.center_id)
            .field("base_url", &self.base_url.as_str())
            .field("records", &self.record_count())
            .finish()
    }
}

pub type SharedCenter = Arc<LocalCenter>;

fn checked_facility(facility: &str) -> Result<String, CenterError> {
    if !dsid::is_valid_facility(facility) {
        return Err(DatasetIdentifier::new(facility, "x").unwrap_err().into());
    }
    Ok(normalize_facility(facility))
}

fn join(base: &Url, segment: &str) -> Url {
    let mut s = base.as_str().trim_end_matches('/').to_owned();
    s.push('/');
    s.push_str(segment);
    Url::parse(&s).expect("base url stays valid with an appended segment")
}
