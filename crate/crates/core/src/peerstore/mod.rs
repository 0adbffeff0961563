//! Deduplicated peer records with per-torrent membership flags, plus one
//! summary row per ingested crawl snapshot.
//!
//! A store directory holds:
//!
//! * `registry.toml`: the torrent registry (`[[torrent]]` tables)
//! * `journal.jsonl`: append-only log, one line per ingested snapshot
//! * `checkpoint.json`: full state and the journal offset it covers
//!
//! Opening a store loads the checkpoint and replays the journal past it. A
//! torn final journal line (crash mid-append) is discarded.
//!
//! The store has a single writer. Share it as `RwLock<PeerStore>` and take
//! the write lock per ingest batch; readers then always see the state after
//! some completed batch.

mod counts;
mod export;
mod membership;
mod persist;
mod registry;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::crawler::{write_snapshot, CrawlCycleResult, CycleSink, SinkError, Snapshot, SnapshotError};
use crate::geodb::{classify_region, is_bogon, GeoResolver, RegionClass};

pub use counts::{distinct_count, selector, total_distinct, MembershipCounts, RegionCounts, SetMode};
pub use export::{crawl_files_header, peer_header, ExportFormat};
pub use membership::{Membership, ParseMembershipError};
pub use persist::{CHECKPOINT_FILE, JOURNAL_FILE, REGISTRY_FILE};
pub use registry::{EpisodeKey, RegistryError, TorrentEntry, TorrentRegistry};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("torrent id {0} is not registered")]
    UnknownTorrentId(u32),
    #[error("torrent selector is empty")]
    EmptySelector,
    #[error("snapshot infohash {found} does not match torrent {torrent_id}")]
    InfohashMismatch { torrent_id: u32, found: String },
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("registry change rejected: {0}")]
    RegistryConflict(String),
    #[error("{0} is not a peer store (no {REGISTRY_FILE})")]
    NotAStore(PathBuf),
    #[error("{0} already contains a peer store")]
    AlreadyExists(PathBuf),
    #[error("corrupt store: {0}")]
    Corrupt(String),
    #[error("bad counts file: {0}")]
    Counts(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Geolocation of one IP as stored on its record. Strings are empty and
/// coordinates absent when the IP was not in the table.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GeoFields {
    pub country: String,
    pub state: String,
    pub city: String,
    pub isp: String,
    pub longitude: Option<f64>,
    pub latitude: Option<f64>,
}

impl GeoFields {
    pub fn resolve(geo: &dyn GeoResolver, ip: Ipv4Addr) -> Self {
        match geo.resolve(ip) {
            Some(r) => GeoFields {
                country: r.country.clone(),
                state: r.state.clone(),
                city: r.city.clone(),
                isp: r.isp.clone(),
                longitude: Some(r.longitude),
                latitude: Some(r.latitude),
            },
            None => GeoFields::default(),
        }
    }

    pub fn region(&self) -> RegionClass {
        classify_region(&self.country)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeerRecord {
    pub ip: Ipv4Addr,
    #[serde(flatten)]
    pub geo: GeoFields,
    pub membership: Membership,
    pub first_seen: DateTime<Utc>,
    pub last_seen: DateTime<Utc>,
    /// Snapshots this IP appeared in, across all torrents.
    pub hit_count: u64,
}

impl PeerRecord {
    pub fn region(&self) -> RegionClass {
        self.geo.region()
    }
}

/// One row of the `crawl_files` collection. Counts are distinct non-bogon
/// IPs, so they can be lower than the snapshot's per-endpoint header counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotRecord {
    pub time: DateTime<Utc>,
    pub network: String,
    pub peer_count: u64,
    pub torrent_id: u32,
    #[serde(rename = "EuroCount")]
    pub euro_count: u64,
    #[serde(rename = "NACount")]
    pub na_count: u64,
    #[serde(rename = "AUSCount")]
    pub aus_count: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IngestStats {
    pub files: u64,
    pub ingested: u64,
    /// Byte-identical files skipped by the content-hash ledger.
    pub deduped: u64,
    /// Distinct non-bogon IPs upserted, summed over snapshots.
    pub peers_observed: u64,
    pub new_peers: u64,
    pub bogons_skipped: u64,
    /// Files that could not be ingested, with the reason.
    pub errors: Vec<(PathBuf, String)>,
}

impl IngestStats {
    pub fn merge(&mut self, other: IngestStats) {
        self.files += other.files;
        self.ingested += other.ingested;
        self.deduped += other.deduped;
        self.peers_observed += other.peers_observed;
        self.new_peers += other.new_peers;
        self.bogons_skipped += other.bogons_skipped;
        self.errors.extend(other.errors);
    }
}

/// Conjunctive filter over geo fields and membership. `None` matches anything.
#[derive(Debug, Clone, Default)]
pub struct PeerFilter {
    pub country: Option<String>,
    pub state: Option<String>,
    pub city: Option<String>,
    pub isp: Option<String>,
    pub membership: Option<(Membership, SetMode)>,
}

impl PeerFilter {
    pub fn country(mut self, v: impl Into<String>) -> Self {
        self.country = Some(v.into());
        self
    }

    pub fn state(mut self, v: impl Into<String>) -> Self {
        self.state = Some(v.into());
        self
    }

    pub fn city(mut self, v: impl Into<String>) -> Self {
        self.city = Some(v.into());
        self
    }

    pub fn isp(mut self, v: impl Into<String>) -> Self {
        self.isp = Some(v.into());
        self
    }

    pub fn torrents(mut self, ids: &[u32], mode: SetMode) -> Self {
        self.membership = Some((Membership::from_ids(ids.iter().copied()), mode));
        self
    }

    pub fn matches(&self, p: &PeerRecord) -> bool {
        fn eq(want: &Option<String>, have: &str) -> bool {
            want.as_deref().is_none_or(|w| w == have)
        }
        eq(&self.country, &p.geo.country)
            && eq(&self.state, &p.geo.state)
            && eq(&self.city, &p.geo.city)
            && eq(&self.isp, &p.geo.isp)
            && self
                .membership
                .as_ref()
                .is_none_or(|(sel, mode)| mode.matches(&p.membership, sel))
    }
}

/// Everything that a checkpoint captures.
#[derive(Debug, Clone, Default, PartialEq)]
pub(crate) struct StoreState {
    pub peers: BTreeMap<u32, PeerRecord>,
    pub snapshots: Vec<SnapshotRecord>,
    /// Hex SHA-256 of every ingested file.
    pub ledger: BTreeSet<String>,
}

/// What one ingested snapshot does to the store; also the journal line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct JournalEntry {
    pub content_hash: String,
    pub record: SnapshotRecord,
    /// Distinct non-bogon IPs, ascending.
    pub ips: Vec<Ipv4Addr>,
    /// Geolocation for IPs not yet in the store.
    pub new_geo: Vec<(Ipv4Addr, GeoFields)>,
}

pub struct PeerStore {
    registry: TorrentRegistry,
    state: StoreState,
    histogram: HashMap<Membership, u64>,
    total_hits: u64,
    persist: Option<persist::Persistence>,
}

impl PeerStore {
    /// A store that lives only in memory.
    pub fn in_memory(registry: TorrentRegistry) -> Self {
        PeerStore {
            registry,
            state: StoreState::default(),
            histogram: HashMap::new(),
            total_hits: 0,
            persist: None,
        }
    }

    /// Creates a new store directory (which may exist but must not hold a store).
    pub fn create(dir: impl AsRef<Path>, registry: TorrentRegistry) -> Result<Self, StoreError> {
        let persist = persist::Persistence::create(dir.as_ref(), &registry)?;
        let mut store = PeerStore::in_memory(registry);
        store.persist = Some(persist);
        Ok(store)
    }

    pub fn open(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        let (persist, registry, state, pending) = persist::Persistence::open(dir.as_ref())?;
        let mut store = PeerStore::in_memory(registry);
        store.set_state(state);
        for entry in pending {
            store.apply(entry);
        }
        store.persist = Some(persist);
        Ok(store)
    }

    /// Opens the store at `dir`, creating it with `registry` if absent. An
    /// existing store accepts a registry that only appends torrents.
    pub fn open_or_create(dir: impl AsRef<Path>, registry: TorrentRegistry) -> Result<Self, StoreError> {
        let dir = dir.as_ref();
        if persist::Persistence::exists(dir) {
            let mut store = PeerStore::open(dir)?;
            store.extend_registry(registry)?;
            Ok(store)
        } else {
            PeerStore::create(dir, registry)
        }
    }

    pub fn dir(&self) -> Option<&Path> {
        self.persist.as_ref().map(|p| p.dir())
    }

    pub fn registry(&self) -> &TorrentRegistry {
        &self.registry
    }

    /// Replaces the registry with one that keeps every existing entry and
    /// adds new ids after them.
    pub fn extend_registry(&mut self, registry: TorrentRegistry) -> Result<(), StoreError> {
        if registry == self.registry {
            return Ok(());
        }
        let old = self.registry.entries();
        if registry.entries().len() < old.len() || registry.entries()[..old.len()] != *old {
            return Err(StoreError::RegistryConflict(
                "existing torrent entries cannot be changed or removed".into(),
            ));
        }
        if let Some(p) = &self.persist {
            p.save_registry(&registry)?;
        }
        self.registry = registry;
        Ok(())
    }

    fn set_state(&mut self, state: StoreState) {
        self.histogram.clear();
        self.total_hits = 0;
        for p in state.peers.values() {
            *self.histogram.entry(p.membership.clone()).or_default() += 1;
            self.total_hits += p.hit_count;
        }
        self.state = state;
    }

    /// Parses and ingests one snapshot document.
    pub fn ingest_bytes(&mut self, xml: &[u8], geo: &dyn GeoResolver) -> Result<IngestStats, StoreError> {
        let mut stats = IngestStats {
            files: 1,
            ..Default::default()
        };
        let content_hash = hex::encode(Sha256::digest(xml));
        if self.state.ledger.contains(&content_hash) {
            stats.deduped = 1;
            return Ok(stats);
        }
        let snapshot = Snapshot::parse(xml)?;
        let entry = self.registry.get(snapshot.torrent_id).ok_or(StoreError::UnknownTorrentId(snapshot.torrent_id))?;
        if entry.infohash != snapshot.infohash {
            return Err(StoreError::InfohashMismatch {
                torrent_id: snapshot.torrent_id,
                found: snapshot.infohash.to_hex(),
            });
        }

        let mut ips = BTreeSet::new();
        for p in &snapshot.peers {
            if p.bogon || is_bogon(p.ip) {
                stats.bogons_skipped += 1;
            } else {
                ips.insert(p.ip);
            }
        }
        let mut new_geo = Vec::new();
        let (mut euro, mut na, mut aus) = (0, 0, 0);
        for &ip in &ips {
            let region = match self.state.peers.get(&u32::from(ip)) {
                Some(rec) => rec.region(),
                None => {
                    let g = GeoFields::resolve(geo, ip);
                    let region = g.region();
                    new_geo.push((ip, g));
                    region
                }
            };
            match region {
                RegionClass::Europe => euro += 1,
                RegionClass::NorthAmerica => na += 1,
                RegionClass::Australia => aus += 1,
                RegionClass::Other | RegionClass::Unknown => {}
            }
        }
        stats.ingested = 1;
        stats.peers_observed = ips.len() as u64;
        stats.new_peers = new_geo.len() as u64;
        let entry = JournalEntry {
            content_hash,
            record: SnapshotRecord {
                time: snapshot.time,
                network: snapshot.network,
                peer_count: ips.len() as u64,
                torrent_id: snapshot.torrent_id,
                euro_count: euro,
                na_count: na,
                aus_count: aus,
            },
            ips: ips.into_iter().collect(),
            new_geo,
        };
        if let Some(p) = &mut self.persist {
            p.append(&entry)?;
        }
        self.apply(entry);
        if self.persist.as_ref().is_some_and(|p| p.wants_checkpoint()) {
            self.checkpoint()?;
        }
        Ok(stats)
    }

    pub fn ingest_file(&mut self, path: impl AsRef<Path>, geo: &dyn GeoResolver) -> Result<IngestStats, StoreError> {
        let bytes = std::fs::read(path)?;
        self.ingest_bytes(&bytes, geo)
    }

    /// Ingests every `.xml` file under `root` in path order. Files that fail
    /// are reported in the stats and skipped.
    pub fn ingest_dir(&mut self, root: impl AsRef<Path>, geo: &dyn GeoResolver) -> Result<IngestStats, StoreError> {
        let mut files = Vec::new();
        collect_xml(root.as_ref(), &mut files)?;
        files.sort();
        self.ingest_paths(&files, geo)
    }

    pub fn ingest_paths(&mut self, paths: &[PathBuf], geo: &dyn GeoResolver) -> Result<IngestStats, StoreError> {
        let mut stats = IngestStats::default();
        for path in paths {
            let bytes = match std::fs::read(path) {
                Ok(b) => b,
                Err(e) => {
                    stats.files += 1;
                    stats.errors.push((path.clone(), e.to_string()));
                    continue;
                }
            };
            match self.ingest_bytes(&bytes, geo) {
                Ok(s) => stats.merge(s),
                Err(
                    e @ (StoreError::Snapshot(_)
                    | StoreError::UnknownTorrentId(_)
                    | StoreError::InfohashMismatch { .. }),
                ) => {
                    stats.files += 1;
                    stats.errors.push((path.clone(), e.to_string()));
                }
                Err(e) => return Err(e),
            }
        }
        Ok(stats)
    }

    fn apply(&mut self, entry: JournalEntry) {
        let JournalEntry {
            content_hash,
            record,
            ips,
            new_geo,
        } = entry;
        let mut new_geo: HashMap<Ipv4Addr, GeoFields> = new_geo.into_iter().collect();
        let (t, id) = (record.time, record.torrent_id);
        for ip in ips {
            let key = u32::from(ip);
            match self.state.peers.get_mut(&key) {
                Some(rec) => {
                    if !rec.membership.contains(id) {
                        decrement(&mut self.histogram, &rec.membership);
                        rec.membership.insert(id);
                        *self.histogram.entry(rec.membership.clone()).or_default() += 1;
                    }
                    rec.hit_count += 1;
                    rec.first_seen = rec.first_seen.min(t);
                    rec.last_seen = rec.last_seen.max(t);
                }
                None => {
                    let membership = Membership::from_ids([id]);
                    *self.histogram.entry(membership.clone()).or_default() += 1;
                    self.state.peers.insert(
                        key,
                        PeerRecord {
                            ip,
                            geo: new_geo.remove(&ip).unwrap_or_default(),
                            membership,
                            first_seen: t,
                            last_seen: t,
                            hit_count: 1,
                        },
                    );
                }
            }
            self.total_hits += 1;
        }
        self.state.snapshots.push(record);
        self.state.ledger.insert(content_hash);
    }

    /// Writes a checkpoint covering the whole journal. No-op in memory.
    pub fn checkpoint(&mut self) -> Result<(), StoreError> {
        match &mut self.persist {
            Some(p) => p.checkpoint(&self.state),
            None => Ok(()),
        }
    }

    /// Re-resolves every stored peer against `geo`. Returns how many records
    /// changed. Snapshot rows keep the regional counts they were ingested with.
    pub fn regeolocate(&mut self, geo: &dyn GeoResolver) -> Result<u64, StoreError> {
        let mut changed = 0;
        for rec in self.state.peers.values_mut() {
            let g = GeoFields::resolve(geo, rec.ip);
            if g != rec.geo {
                rec.geo = g;
                changed += 1;
            }
        }
        // Journal entries only carry first-sighting geo, so the new values
        // must be pinned by a checkpoint.
        self.checkpoint()?;
        Ok(changed)
    }

    pub fn peer_count(&self) -> u64 {
        self.state.peers.len() as u64
    }

    pub fn total_hits(&self) -> u64 {
        self.total_hits
    }

    pub fn get(&self, ip: Ipv4Addr) -> Option<&PeerRecord> {
        self.state.peers.get(&u32::from(ip))
    }

    /// All peers in ascending IP order.
    pub fn peers(&self) -> impl Iterator<Item = &PeerRecord> {
        self.state.peers.values()
    }

    /// Peers passing `filter`, in ascending IP order.
    pub fn peers_matching<'a>(&'a self, filter: &'a PeerFilter) -> impl Iterator<Item = &'a PeerRecord> + 'a {
        self.state.peers.values().filter(move |p| filter.matches(p))
    }

    pub fn snapshots(&self) -> &[SnapshotRecord] {
        &self.state.snapshots
    }

    pub fn distinct_count(&self, ids: &[u32], mode: SetMode) -> Result<u64, StoreError> {
        distinct_count(self, ids, mode)
    }

    #[cfg(test)]
    pub(crate) fn state(&self) -> &StoreState {
        &self.state
    }
}

impl MembershipCounts for PeerStore {
    fn torrent_count(&self) -> u32 {
        self.registry.len()
    }

    fn membership_histogram(&self) -> Vec<(Membership, u64)> {
        let mut v: Vec<(Membership, u64)> = self.histogram.iter().map(|(m, &n)| (m.clone(), n)).collect();
        v.sort();
        v
    }
}

/// Crawl sink that renders each cycle result to its snapshot document and
/// ingests it, optionally also writing the file under `dir`.
pub struct IngestSink<'a> {
    pub store: &'a mut PeerStore,
    geo: &'a dyn GeoResolver,
    dir: Option<PathBuf>,
    pub stats: IngestStats,
}

impl<'a> IngestSink<'a> {
    pub fn new(store: &'a mut PeerStore, geo: &'a dyn GeoResolver, dir: Option<PathBuf>) -> Self {
        IngestSink {
            store,
            geo,
            dir,
            stats: IngestStats::default(),
        }
    }
}

impl CycleSink for IngestSink<'_> {
    fn persist(&mut self, result: &CrawlCycleResult) -> Result<(), SinkError> {
        let snapshot = write_snapshot(result, self.geo);
        if let Some(dir) = &self.dir {
            snapshot.write_to_dir(dir)?;
        }
        let stats = self.store.ingest_bytes(&snapshot.to_xml(), self.geo)?;
        self.stats.merge(stats);
        Ok(())
    }
}

fn decrement(histogram: &mut HashMap<Membership, u64>, m: &Membership) {
    if let Some(n) = histogram.get_mut(m) {
        *n -= 1;
        if *n == 0 {
            histogram.remove(m);
        }
    }
}

fn collect_xml(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_xml(&path, out)?;
        } else if path.extension().is_some_and(|e| e == "xml") {
            out.push(path);
        }
    }
    Ok(())
}
