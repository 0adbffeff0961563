//! The monitoring loop: enumerate every swarm until no new IPs turn up, write
//! one snapshot per torrent, then start the next cycle once the cycle
//! interval has elapsed.

mod snapshot;

use std::collections::{BTreeSet, HashSet};
use std::net::{Ipv4Addr, SocketAddrV4};
use std::path::{Path, PathBuf};
use std::time::Duration;

use chrono::{DateTime, TimeDelta, Utc};
use log::{debug, warn};

use crate::bencode::{InfoHash, TorrentMeta};
use crate::clock::Clock;
use crate::geodb::GeoResolver;
use crate::tracker::{AnnounceRequest, Announcer, PeerId, DEFAULT_NUMWANT};

pub use snapshot::{
    compact_time, format_time, write_snapshot, Snapshot, SnapshotError, SnapshotPeer,
    NETWORK_TRACKER,
};

/// Default crawl cycle length.
pub const DEFAULT_CYCLE_INTERVAL: Duration = Duration::from_secs(120);

#[derive(Debug, Clone)]
pub struct CrawlJob {
    pub torrent: TorrentMeta,
    /// Stable 1-based id of the torrent for the whole run.
    pub torrent_id: u32,
    pub trackers: Vec<String>,
    pub cycle_interval: Duration,
}

impl CrawlJob {
    /// A job using the torrent's own announce URLs and the default interval.
    pub fn new(torrent: TorrentMeta, torrent_id: u32) -> Self {
        let trackers = torrent.announce_urls.clone();
        CrawlJob {
            torrent,
            torrent_id,
            trackers,
            cycle_interval: DEFAULT_CYCLE_INTERVAL,
        }
    }
}

/// Why an enumeration stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopRule {
    /// `saturation_rounds` consecutive rounds found no new IP.
    Saturated,
    RoundBudget,
    /// A full rotation of trackers failed after at least one success.
    TrackersFailed,
    /// No tracker answered at all; the result is empty and error-marked.
    AllTrackersUnreachable,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrawlCycleResult {
    pub torrent_id: u32,
    pub infohash: InfoHash,
    pub started_at: DateTime<Utc>,
    pub ended_at: DateTime<Utc>,
    pub peers: BTreeSet<SocketAddrV4>,
    pub announce_rounds: u32,
    pub seeders: u32,
    pub leechers: u32,
    pub stop_rule: StopRule,
    pub errors: Vec<String>,
}

impl CrawlCycleResult {
    pub fn is_error(&self) -> bool {
        self.stop_rule == StopRule::AllTrackersUnreachable
    }

    pub fn distinct_ips(&self) -> usize {
        self.peers
            .iter()
            .map(|p| *p.ip())
            .collect::<HashSet<Ipv4Addr>>()
            .len()
    }
}

#[derive(Debug, Clone)]
pub struct EnumerationConfig {
    /// Consecutive no-new-IP rounds (after the first) that end a cycle.
    pub saturation_rounds: u32,
    pub round_budget: u32,
    pub numwant: u32,
    pub peer_id: PeerId,
    pub port: u16,
}

impl Default for EnumerationConfig {
    fn default() -> Self {
        EnumerationConfig {
            saturation_rounds: 3,
            round_budget: 50,
            numwant: DEFAULT_NUMWANT,
            peer_id: PeerId::generate(&mut rand::thread_rng()),
            port: 6881,
        }
    }
}

/// Announces repeatedly, rotating through the job's trackers, until the swarm
/// looks saturated or the round budget runs out.
///
/// Peers accumulate as (IP, port) endpoints, but saturation is judged on IPs.
/// The first round only establishes a baseline, so a static swarm stops after
/// `1 + saturation_rounds` rounds.
pub fn enumerate_swarm(
    job: &CrawlJob,
    announcer: &dyn Announcer,
    clock: &dyn Clock,
    config: &EnumerationConfig,
) -> CrawlCycleResult {
    let started_at = clock.now();
    let mut result = CrawlCycleResult {
        torrent_id: job.torrent_id,
        infohash: job.torrent.infohash,
        started_at,
        ended_at: started_at,
        peers: BTreeSet::new(),
        announce_rounds: 0,
        seeders: 0,
        leechers: 0,
        stop_rule: StopRule::RoundBudget,
        errors: Vec::new(),
    };
    if job.trackers.is_empty() {
        result.announce_rounds = 1;
        result.stop_rule = StopRule::AllTrackersUnreachable;
        result.errors.push("no trackers configured".into());
        return result;
    }

    let mut req = AnnounceRequest::observer(job.torrent.infohash, config.peer_id);
    req.numwant = config.numwant;
    req.port = config.port;

    let mut ips: HashSet<Ipv4Addr> = HashSet::new();
    let mut answered = false;
    let mut successes = 0u32;
    let mut quiet_rounds = 0u32;
    let mut consecutive_failures = 0usize;
    let budget = config.round_budget.max(1);

    while result.announce_rounds < budget {
        let tracker = &job.trackers[result.announce_rounds as usize % job.trackers.len()];
        result.announce_rounds += 1;
        match announcer.announce(tracker, &req) {
            Ok(resp) => {
                consecutive_failures = 0;
                answered = true;
                successes += 1;
                result.seeders = resp.seeders;
                result.leechers = resp.leechers;
                let before = ips.len();
                for peer in resp.peers {
                    ips.insert(*peer.ip());
                    result.peers.insert(peer);
                }
                if successes > 1 {
                    if ips.len() == before {
                        quiet_rounds += 1;
                    } else {
                        quiet_rounds = 0;
                    }
                }
                if quiet_rounds >= config.saturation_rounds {
                    result.stop_rule = StopRule::Saturated;
                    break;
                }
            }
            Err(e) => {
                debug!("announce to {tracker} failed: {e}");
                result.errors.push(format!("{tracker}: {e}"));
                consecutive_failures += 1;
                if consecutive_failures >= job.trackers.len() {
                    result.stop_rule = if answered {
                        StopRule::TrackersFailed
                    } else {
                        StopRule::AllTrackersUnreachable
                    };
                    break;
                }
            }
        }
    }
    result.ended_at = clock.now().max(started_at);
    result
}

/// Receives every finished cycle result before the next cycle begins.
pub trait CycleSink {
    fn persist(&mut self, result: &CrawlCycleResult) -> Result<(), SinkError>;
}

pub type SinkError = Box<dyn std::error::Error + Send + Sync>;

/// Writes each result as `<root>/<infohash-hex>/<time-compact>.xml`.
pub struct SnapshotDir<'a> {
    root: PathBuf,
    geo: &'a dyn GeoResolver,
    pub written: Vec<PathBuf>,
}

impl<'a> SnapshotDir<'a> {
    pub fn new(root: impl AsRef<Path>, geo: &'a dyn GeoResolver) -> Self {
        SnapshotDir {
            root: root.as_ref().to_path_buf(),
            geo,
            written: Vec::new(),
        }
    }
}

impl CycleSink for SnapshotDir<'_> {
    fn persist(&mut self, result: &CrawlCycleResult) -> Result<(), SinkError> {
        let path = write_snapshot(result, self.geo).write_to_dir(&self.root)?;
        self.written.push(path);
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ScheduleSummary {
    pub cycles: usize,
    pub results: usize,
    /// Results marked as errors (no tracker answered).
    pub failed_results: usize,
    pub sink_errors: usize,
}

/// Drives crawl cycles over a set of jobs.
pub struct Scheduler<'a> {
    pub announcer: &'a dyn Announcer,
    pub clock: &'a dyn Clock,
    pub config: EnumerationConfig,
    /// Crawl jobs of one cycle concurrently instead of one after another.
    pub parallel: bool,
}

impl<'a> Scheduler<'a> {
    pub fn new(announcer: &'a dyn Announcer, clock: &'a dyn Clock, config: EnumerationConfig) -> Self {
        Scheduler {
            announcer,
            clock,
            config,
            parallel: false,
        }
    }

    /// Runs cycles until `stop_at`. Within a cycle jobs are crawled one after
    /// another; each result goes to `sink` and then to `on_result`. No job is
    /// started at or after `stop_at`, but finished results are always
    /// flushed. The next cycle begins `interval` after the previous one began
    /// (immediately if the cycle overran), where `interval` is the longest
    /// `cycle_interval` among the jobs.
    pub fn run_schedule(
        &self,
        jobs: &[CrawlJob],
        stop_at: DateTime<Utc>,
        sink: &mut dyn CycleSink,
        mut on_result: impl FnMut(&CrawlCycleResult),
    ) -> ScheduleSummary {
        let mut summary = ScheduleSummary::default();
        if jobs.is_empty() {
            return summary;
        }
        let interval = jobs
            .iter()
            .map(|j| j.cycle_interval)
            .max()
            .unwrap_or(DEFAULT_CYCLE_INTERVAL)
            .max(Duration::from_secs(1));
        let interval = TimeDelta::from_std(interval).unwrap_or(TimeDelta::MAX);

        loop {
            let cycle_start = self.clock.now();
            if cycle_start >= stop_at {
                break;
            }
            summary.cycles += 1;
            let mut emit = |result: CrawlCycleResult, summary: &mut ScheduleSummary| {
                if let Err(e) = sink.persist(&result) {
                    warn!("persisting torrent {} snapshot failed: {e}", result.torrent_id);
                    summary.sink_errors += 1;
                }
                summary.results += 1;
                if result.is_error() {
                    summary.failed_results += 1;
                }
                on_result(&result);
            };

            if self.parallel {
                let results: Vec<CrawlCycleResult> = std::thread::scope(|scope| {
                    let handles: Vec<_> = jobs
                        .iter()
                        .map(|job| {
                            scope.spawn(move || {
                                enumerate_swarm(job, self.announcer, self.clock, &self.config)
                            })
                        })
                        .collect();
                    handles
                        .into_iter()
                        .map(|h| h.join().expect("crawl thread panicked"))
                        .collect()
                });
                for result in results {
                    emit(result, &mut summary);
                }
            } else {
                for job in jobs {
                    if self.clock.now() >= stop_at {
                        break;
                    }
                    let result = enumerate_swarm(job, self.announcer, self.clock, &self.config);
                    emit(result, &mut summary);
                }
            }

            let next = cycle_start + interval;
            if next >= stop_at {
                break;
            }
            self.clock.sleep_until(next);
        }
        summary
    }
}
