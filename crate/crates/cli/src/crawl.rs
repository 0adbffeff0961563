use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use chrono::{DateTime, TimeDelta, Utc};
use clap::Args;
use swarmscope::bencode::{parse_magnet, parse_torrent, TorrentMeta};
use swarmscope::clock::{Clock, SystemClock, VirtualClock};
use swarmscope::crawler::{CrawlCycleResult, CrawlJob, CycleSink, EnumerationConfig, Scheduler, SnapshotDir, StopRule};
use swarmscope::geodb::GeoTable;
use swarmscope::peerstore::{IngestSink, TorrentEntry, TorrentRegistry};
use swarmscope::simharness::{generate_with, MockTracker, PopulationSpec, TrackerConfig, TrackerCore};
use swarmscope::tracker::{Announcer, HttpTracker, TrackerClient, UdpTracker};

use crate::config::RunConfig;

#[derive(Debug, Args)]
pub struct CrawlArgs {
    /// `.torrent` files or magnet URIs. Without any, registry entries that
    /// name a source are crawled.
    pub targets: Vec<String>,
    /// Wall-clock (or virtual) seconds to keep crawling.
    #[arg(long, conflicts_with = "cycles")]
    pub duration_secs: Option<u64>,
    /// Number of crawl cycles to run.
    #[arg(long)]
    pub cycles: Option<u32>,
    /// Directory for snapshot files; defaults to `<store>/snapshots`.
    #[arg(long)]
    pub snapshots: Option<PathBuf>,
    /// Crawl a simulated population from this spec on a virtual clock
    /// instead of the network.
    #[arg(long, value_name = "SPEC")]
    pub simulate: Option<PathBuf>,
    /// Crawl the torrents of one cycle concurrently.
    #[arg(long)]
    pub parallel: bool,
    /// Per-request tracker timeout in seconds.
    #[arg(long)]
    pub timeout_secs: Option<u64>,
    /// Peers per simulated announce reply, below numwant.
    #[arg(long)]
    pub sample_cap: Option<u32>,
}

fn load_target(arg: &str) -> Result<TorrentMeta> {
    if arg.starts_with("magnet:") {
        parse_magnet(arg).with_context(|| format!("bad magnet URI {arg}"))
    } else {
        let bytes = std::fs::read(arg).with_context(|| format!("reading {arg}"))?;
        parse_torrent(&bytes).with_context(|| format!("bad torrent file {arg}"))
    }
}

/// Best-effort labels from a scene-style release name such as
/// `Breaking.Bad.S05E09.720p.HDTV.x264-IMMERSE`.
pub fn label_from_name(name: &str) -> (String, u32, u32, String) {
    let words: Vec<&str> = name.split(['.', ' ', '_']).filter(|w| !w.is_empty()).collect();
    let tag = name.rsplit_once('-').map(|(_, t)| t.trim().to_string()).unwrap_or_default();
    for (i, w) in words.iter().enumerate() {
        let b = w.as_bytes();
        if b.len() >= 6 && b[0].eq_ignore_ascii_case(&b'S') {
            if let Some(e) = w[1..].find(['E', 'e']) {
                let (s, ep) = (&w[1..1 + e], &w[2 + e..]);
                let ep: String = ep.chars().take_while(char::is_ascii_digit).collect();
                if let (Ok(s), Ok(ep)) = (s.parse(), ep.parse()) {
                    return (words[..i].join(" "), s, ep, tag);
                }
            }
        }
    }
    (name.to_string(), 0, 0, tag)
}

fn entry_for(meta: &TorrentMeta, id: u32, source: &str) -> TorrentEntry {
    let mut name = meta.display_name();
    if name.is_empty() {
        name = meta.infohash.to_hex();
    }
    let (show, season, episode, release_tag) = label_from_name(&name);
    TorrentEntry {
        id,
        infohash: meta.infohash,
        name,
        size: meta.total_size,
        show,
        season,
        episode,
        release_tag,
        source: Some(source.to_string()),
    }
}

fn summary_line(r: &CrawlCycleResult) -> String {
    let rule = match r.stop_rule {
        StopRule::Saturated => "saturated",
        StopRule::RoundBudget => "round budget",
        StopRule::TrackersFailed => "trackers failed",
        StopRule::AllTrackersUnreachable => "unreachable",
    };
    let mut line = format!(
        "{} torrent {}: {} peers, {} ips, {} rounds, {}",
        r.started_at.format("%Y-%m-%dT%H:%M:%SZ"),
        r.torrent_id,
        r.peers.len(),
        r.distinct_ips(),
        r.announce_rounds,
        rule
    );
    if !r.errors.is_empty() {
        line.push_str(&format!(" ({} tracker errors)", r.errors.len()));
    }
    line
}

struct Plan {
    jobs: Vec<CrawlJob>,
    registry: TorrentRegistry,
}

fn live_plan(args: &CrawlArgs, config: &RunConfig) -> Result<Plan> {
    let metas: Vec<(String, TorrentMeta)> = args
        .targets
        .iter()
        .map(|a| load_target(a).map(|m| (a.clone(), m)))
        .collect::<Result<_>>()?;

    let existing = match &config.store {
        Some(dir) if dir.join(swarmscope::peerstore::REGISTRY_FILE).exists() => {
            Some(TorrentRegistry::load(dir.join(swarmscope::peerstore::REGISTRY_FILE))?)
        }
        _ => None,
    };
    let mut entries = existing.map(|r| r.entries().to_vec()).unwrap_or_default();
    if let Some(extra) = config.load_registry()? {
        for e in extra.entries() {
            if !entries.iter().any(|x| x.infohash == e.infohash) {
                let mut e = e.clone();
                e.id = entries.len() as u32 + 1;
                entries.push(e);
            }
        }
    }

    let mut jobs = Vec::new();
    if metas.is_empty() {
        for e in &entries {
            if let Some(src) = &e.source {
                let meta = load_target(src)?;
                jobs.push(CrawlJob::new(meta, e.id));
            }
        }
        if jobs.is_empty() {
            bail!("nothing to crawl: give torrent files or magnet URIs, or registry entries with a source");
        }
    }
    for (src, meta) in metas {
        let id = match entries.iter().find(|e| e.infohash == meta.infohash) {
            Some(e) => e.id,
            None => {
                let id = entries.len() as u32 + 1;
                entries.push(entry_for(&meta, id, &src));
                id
            }
        };
        if meta.announce_urls.is_empty() {
            bail!("{src} names no tracker");
        }
        jobs.push(CrawlJob::new(meta, id));
    }
    for j in &mut jobs {
        j.cycle_interval = config.cycle_interval;
    }
    Ok(Plan {
        jobs,
        registry: TorrentRegistry::new(entries)?,
    })
}

pub fn run(args: &CrawlArgs, config: &RunConfig) -> Result<()> {
    let geo = config.load_geo()?;
    let enumeration = EnumerationConfig {
        saturation_rounds: config.saturation_rounds,
        round_budget: config.round_budget,
        numwant: config.numwant,
        ..Default::default()
    };

    // everything that can fail on bad input happens before the first cycle
    let (plan, clock, announcer, end): (Plan, Arc<dyn Clock>, Box<dyn Announcer>, Option<DateTime<Utc>>) =
        if let Some(spec_path) = &args.simulate {
            if !args.targets.is_empty() {
                bail!("--simulate crawls the simulated swarms; drop the torrent arguments");
            }
            let spec = PopulationSpec::load(spec_path)
                .with_context(|| format!("loading population spec {}", spec_path.display()))?;
            let truth = Arc::new(generate_with(&spec, &GeoTable::bundled_fixture())?);
            let clock = VirtualClock::new(truth.start());
            let tracker = TrackerConfig {
                sample_cap: args.sample_cap,
                seed: spec.seed,
                ..Default::default()
            };
            let core = Arc::new(TrackerCore::new(truth.clone(), Arc::new(clock.clone()), tracker));
            let trackers = vec!["http://tracker.sim/announce".to_string(), "udp://tracker.sim:6969".to_string()];
            let plan = Plan {
                jobs: truth.jobs(&trackers, config.cycle_interval),
                registry: truth.registry(),
            };
            (plan, Arc::new(clock), Box::new(MockTracker::new(core)), Some(truth.end()))
        } else {
            let plan = live_plan(args, config)?;
            let client = match args.timeout_secs {
                Some(t) => TrackerClient {
                    http: HttpTracker::new(Duration::from_secs(t)),
                    udp: UdpTracker::with_timeouts(vec![Duration::from_secs(t)]),
                },
                None => TrackerClient::default(),
            };
            (plan, Arc::new(SystemClock), Box::new(client), None)
        };

    let start = clock.now();
    let stop_at = match (args.cycles, args.duration_secs) {
        (Some(n), _) => {
            start + TimeDelta::from_std(config.cycle_interval)? * i32::try_from(n).context("too many cycles")?
        }
        (None, Some(d)) => start + TimeDelta::seconds(i64::try_from(d)?),
        (None, None) => end.context("give --duration-secs or --cycles")?,
    };

    let mut scheduler = Scheduler::new(announcer.as_ref(), clock.as_ref(), enumeration);
    scheduler.parallel = args.parallel;
    let print = |r: &CrawlCycleResult| println!("{}", summary_line(r));

    let summary = if config.store.is_some() {
        let mut store = config.open_or_create_store(Some(plan.registry))?;
        let dir = args
            .snapshots
            .clone()
            .unwrap_or_else(|| store.dir().expect("on-disk store").join("snapshots"));
        let (summary, stats) = {
            let mut sink = IngestSink::new(&mut store, &geo, Some(dir));
            let summary = scheduler.run_schedule(&plan.jobs, stop_at, &mut sink as &mut dyn CycleSink, print);
            (summary, sink.stats)
        };
        store.checkpoint()?;
        eprintln!(
            "ingested {} snapshots, {} new peers, {} peers in store",
            stats.ingested,
            stats.new_peers,
            store.peer_count()
        );
        summary
    } else {
        let dir = args
            .snapshots
            .as_ref()
            .context("give --store or --snapshots so results have somewhere to go")?;
        let mut sink = SnapshotDir::new(dir, &geo);
        scheduler.run_schedule(&plan.jobs, stop_at, &mut sink, print)
    };

    eprintln!("{} cycles, {} results", summary.cycles, summary.results);
    if summary.failed_results > 0 {
        eprintln!(
            "warning: {} of {} results reached no tracker",
            summary.failed_results, summary.results
        );
    }
    if summary.sink_errors > 0 {
        bail!("{} snapshots could not be stored", summary.sink_errors);
    }
    Ok(())
}
