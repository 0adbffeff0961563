//! Synthetic ground truth and a mock tracker serving it.
//!
//! [`generate`] builds a population from a [`PopulationSpec`]: peers with
//! addresses from the geo table, cross-swarm membership and on/off slots
//! shaped by a regional diurnal curve. [`TrackerCore`] answers announces
//! from that population at the current (usually virtual) time, either
//! in-process through [`MockTracker`] or over loopback through
//! [`MockServers`]. [`simulate`] crawls the population at one or more cycle
//! intervals and [`score`]s each run.

mod score;
mod server;
mod spec;
mod tracker;
mod truth;

use std::collections::HashSet;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use log::warn;
use serde::Serialize;
use thiserror::Error;

use crate::analytics::ActivityStats;
use crate::clock::VirtualClock;
use crate::crawler::{CrawlCycleResult, EnumerationConfig, Scheduler};
use crate::geodb::GeoTable;
use crate::peerstore::{IngestSink, PeerStore};
use crate::tracker::{Announcer, TrackerClient};

pub use score::{score, RegionError, Score};
pub use server::MockServers;
pub use spec::{region_offset, Diurnal, PopulationSpec, RegionMix, SwarmSpec};
pub use tracker::{Fault, MockTracker, Reply, SwarmCounts, TrackerConfig, TrackerCore};
pub use truth::{expected_curve, generate, generate_with, sim_infohash, GroundTruth, SimPeer};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid population spec: {0}")]
    InvalidSpec(String),
    #[error("infeasible population spec: {0}")]
    InfeasibleSpec(String),
    #[error("window {from}..{to} is outside the simulated span {start}..{end}")]
    WindowMismatch {
        from: DateTime<Utc>,
        to: DateTime<Utc>,
        start: DateTime<Utc>,
        end: DateTime<Utc>,
    },
    #[error("no crawl intervals given")]
    NoIntervals,
    #[error(transparent)]
    Store(#[from] crate::peerstore::StoreError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// How the crawler reaches the mock tracker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Transport {
    /// Client codecs without sockets.
    #[default]
    InProcess,
    /// Real HTTP and UDP servers on 127.0.0.1.
    Loopback,
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    /// Crawl cycle intervals in seconds.
    pub intervals: Vec<u64>,
    pub enumeration: EnumerationConfig,
    pub tracker: TrackerConfig,
    pub transport: Transport,
    /// Recall threshold; defaults to one slot of the population.
    pub min_span: Option<Duration>,
    /// Snapshots go under `<dir>/<interval>s/` when set.
    pub snapshot_dir: Option<PathBuf>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            intervals: vec![120, 600, 3600],
            enumeration: EnumerationConfig::default(),
            tracker: TrackerConfig::default(),
            transport: Transport::InProcess,
            min_span: None,
            snapshot_dir: None,
        }
    }
}

/// Per-cycle recall against the peers online for the whole cycle.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct CycleRecall {
    pub results: u64,
    pub min: f64,
    pub mean: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct IntervalRun {
    pub interval_secs: u64,
    pub cycles: usize,
    pub snapshots: usize,
    pub announces: u64,
    pub score: Score,
    pub cycle_recall: CycleRecall,
    pub activity: Option<ActivityStats>,
    #[serde(skip)]
    pub elapsed: Duration,
}

/// One line of the recall-vs-interval table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecallRow {
    pub interval_secs: u64,
    pub cycles: usize,
    pub active: u64,
    pub observed: u64,
    pub recall: f64,
    pub precision: f64,
    pub cycle_recall_min: f64,
    pub mean_span_error_secs: Option<f64>,
    pub est_activity_secs: Option<f64>,
    pub truth_mean_online_secs: Option<f64>,
}

impl From<&IntervalRun> for RecallRow {
    fn from(r: &IntervalRun) -> Self {
        RecallRow {
            interval_secs: r.interval_secs,
            cycles: r.cycles,
            active: r.score.active,
            observed: r.score.observed,
            recall: r.score.recall,
            precision: r.score.precision,
            cycle_recall_min: r.cycle_recall.min,
            mean_span_error_secs: r.score.mean_span_error_secs,
            est_activity_secs: r.activity.map(|a| a.est_avg_activity_secs),
            truth_mean_online_secs: r.score.truth_mean_online_secs,
        }
    }
}

/// Sorts intervals ascending and drops repeats, returning the repeats too.
pub fn dedup_intervals(intervals: &[u64]) -> (Vec<u64>, Vec<u64>) {
    let mut seen = HashSet::new();
    let mut dups = Vec::new();
    let mut out = Vec::new();
    for &i in intervals {
        if seen.insert(i) {
            out.push(i);
        } else {
            dups.push(i);
        }
    }
    out.sort_unstable();
    (out, dups)
}

/// Crawls the truth once per interval, each time into a fresh in-memory
/// store, and scores every run over the whole simulated span.
pub fn simulate(truth: &Arc<GroundTruth>, config: &SimConfig) -> Result<Vec<IntervalRun>, SimError> {
    let (intervals, dups) = dedup_intervals(&config.intervals);
    if intervals.is_empty() {
        return Err(SimError::NoIntervals);
    }
    if !dups.is_empty() {
        warn!("ignoring duplicate intervals {dups:?}");
    }
    intervals
        .into_iter()
        .map(|i| run_interval(truth, i, config).map(|(run, _)| run))
        .collect()
}

/// One crawl of the whole span at `interval_secs`; returns the run and the
/// store it filled.
pub fn run_interval(
    truth: &Arc<GroundTruth>,
    interval_secs: u64,
    config: &SimConfig,
) -> Result<(IntervalRun, PeerStore), SimError> {
    let began = Instant::now();
    let interval = Duration::from_secs(interval_secs.max(1));
    let clock = VirtualClock::new(truth.start());
    let core = Arc::new(TrackerCore::new(
        truth.clone(),
        Arc::new(clock.clone()),
        config.tracker.clone(),
    ));

    let mock;
    let client;
    let servers;
    let (announcer, trackers): (&dyn Announcer, Vec<String>) = match config.transport {
        Transport::InProcess => {
            mock = MockTracker::new(core.clone());
            (&mock, vec!["http://tracker.sim/announce".into(), "udp://tracker.sim:6969".into()])
        }
        Transport::Loopback => {
            servers = MockServers::start(core.clone())?;
            client = TrackerClient::default();
            (&client, vec![servers.http_announce_url(), servers.udp_announce_url()])
        }
    };

    let geo = GeoTable::bundled_fixture();
    let mut store = PeerStore::in_memory(truth.registry());
    let jobs = truth.jobs(&trackers, interval);
    let dir = config
        .snapshot_dir
        .as_ref()
        .map(|d| d.join(format!("{interval_secs}s")));
    let mut cycle_recalls = Vec::new();
    let summary = {
        let mut sink = IngestSink::new(&mut store, &geo, dir);
        let scheduler = Scheduler::new(announcer, &clock, config.enumeration.clone());
        scheduler.run_schedule(&jobs, truth.end(), &mut sink, |r| {
            if let Some(recall) = cycle_recall(truth, r) {
                cycle_recalls.push(recall);
            }
        })
    };

    let min_span = config
        .min_span
        .unwrap_or(Duration::from_secs(truth.slot_secs()));
    let score = score(truth, &store, truth.start(), truth.end(), min_span)?;
    let cycle_recall = if cycle_recalls.is_empty() {
        CycleRecall::default()
    } else {
        CycleRecall {
            results: cycle_recalls.len() as u64,
            min: cycle_recalls.iter().copied().fold(f64::INFINITY, f64::min),
            mean: cycle_recalls.iter().sum::<f64>() / cycle_recalls.len() as f64,
        }
    };
    let run = IntervalRun {
        interval_secs,
        cycles: summary.cycles,
        snapshots: summary.results,
        announces: core.requests(),
        score,
        cycle_recall,
        activity: ActivityStats::of_store(&store, interval).ok(),
        elapsed: began.elapsed(),
    };
    Ok((run, store))
}

/// Share of the swarm's peers online for the entire cycle that the cycle
/// found; `None` when nobody was.
pub fn cycle_recall(truth: &GroundTruth, result: &CrawlCycleResult) -> Option<f64> {
    let swarm = truth.swarm_of(&result.infohash)?;
    let (Some(a), Some(b)) = (truth.slot_of(result.started_at), truth.slot_of(result.ended_at)) else {
        return None;
    };
    let found: HashSet<_> = result.peers.iter().map(|p| *p.ip()).collect();
    let mut want = 0u64;
    let mut hit = 0u64;
    for &i in truth.online(swarm, result.started_at) {
        let p = &truth.peers[i as usize];
        if p.online.iter().any(|r| r.start <= a && b < r.end) {
            want += 1;
            hit += u64::from(found.contains(&p.ip));
        }
    }
    (want > 0).then(|| hit as f64 / want as f64)
}
