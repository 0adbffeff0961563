use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use chrono::{DateTime, TimeDelta, Utc};
use clap::{Args, Subcommand};
use serde::Serialize;
use swarmscope::analytics::{
    cross_participation, detect_peaks, episode_table, geo_top, median_span, session_durations_from_snapshots,
    session_durations_from_store, swarm_table, timeseries, ActivityStats, GeoLevel, Pct2, PeakConfig,
};
use swarmscope::crawler::Snapshot;
use swarmscope::geodb::RegionClass;
use swarmscope::peerstore::{MembershipCounts, PeerStore, RegionCounts, TorrentRegistry};

use crate::config::RunConfig;
use crate::Output;

#[derive(Debug, Args)]
pub struct CountsArgs {
    /// Membership-region counts (`membership,count` CSV) to report on
    /// instead of the store's peers; needs a registry.
    #[arg(long)]
    pub counts: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct WindowArgs {
    /// Torrent ids joined by `+`; all torrents when omitted.
    #[arg(long)]
    pub torrents: Option<String>,
    /// Window start (RFC 3339); defaults to the first snapshot, rounded
    /// down to the bucket width.
    #[arg(long)]
    pub from: Option<DateTime<Utc>>,
    /// Window end (RFC 3339, exclusive); defaults to just past the last
    /// snapshot.
    #[arg(long)]
    pub to: Option<DateTime<Utc>>,
    #[arg(long, default_value_t = 3600)]
    pub width_secs: u64,
}

#[derive(Debug, Subcommand)]
pub enum Report {
    /// Distinct IPs per torrent and their share of all distinct IPs.
    Swarms(CountsArgs),
    /// Distinct IPs per episode across its releases.
    Episodes(CountsArgs),
    /// Venn regions and pairwise overlap for 2 or 3 selectors. A selector is
    /// torrent ids like `1+2`, a show name, an episode like
    /// `Breaking Bad S05E09`, or a torrent name.
    Venn {
        #[arg(num_args = 2..=3, required = true)]
        selectors: Vec<String>,
        #[command(flatten)]
        counts: CountsArgs,
    },
    /// Top locations of distinct peers.
    Geo {
        /// country, state, city or isp
        #[arg(long, default_value = "country")]
        level: GeoLevel,
        #[arg(long, default_value_t = 10)]
        n: usize,
        /// Restrict to one country code, e.g. US.
        #[arg(long)]
        scope: Option<String>,
        /// Torrent ids joined by `+`.
        #[arg(long)]
        torrents: Option<String>,
    },
    /// Per-bucket swarm sizes, total and by region.
    Timeseries(WindowArgs),
    /// Daily peaks of a smoothed time series.
    Peaks {
        #[command(flatten)]
        window: WindowArgs,
        #[arg(long, default_value_t = 3)]
        smoothing: usize,
        /// Fraction of the smoothed series range.
        #[arg(long, default_value_t = 0.10)]
        min_prominence: f64,
        /// Region series to scan instead of the total.
        #[arg(long)]
        series: Option<RegionClass>,
        /// Region whose UTC offset labels peak times.
        #[arg(long)]
        lens: Option<RegionClass>,
    },
    /// Hits per IP and the implied average time in the swarms.
    Activity {
        /// Crawl cycle length; defaults to the configured interval.
        #[arg(long)]
        cycle_secs: Option<u64>,
    },
    /// First-to-last sighting spans.
    Sessions {
        /// Per torrent from raw snapshot files under this directory instead
        /// of per IP from the store.
        #[arg(long)]
        snapshots: Option<PathBuf>,
    },
}

impl Report {
    pub fn name(&self) -> &'static str {
        match self {
            Report::Swarms(_) => "swarms",
            Report::Episodes(_) => "episodes",
            Report::Venn { .. } => "venn",
            Report::Geo { .. } => "geo",
            Report::Timeseries(_) => "timeseries",
            Report::Peaks { .. } => "peaks",
            Report::Activity { .. } => "activity",
            Report::Sessions { .. } => "sessions",
        }
    }
}

#[derive(Debug, Serialize)]
struct VennRow {
    kind: &'static str,
    label: String,
    count: u64,
    base: u64,
    pct: Pct2,
}

fn parse_ids(s: &str) -> Result<Vec<u32>> {
    s.split('+')
        .map(|p| p.trim().parse::<u32>().with_context(|| format!("bad torrent id list {s:?}")))
        .collect()
}

/// Resolves a Venn selector to torrent ids.
pub fn resolve_selector(registry: &TorrentRegistry, sel: &str) -> Result<Vec<u32>> {
    if sel.chars().all(|c| c.is_ascii_digit() || c == '+') {
        return parse_ids(sel);
    }
    if let Some((_, ids)) = registry.shows().into_iter().find(|(s, _)| s.eq_ignore_ascii_case(sel)) {
        return Ok(ids);
    }
    if let Some((_, ids)) = registry
        .episodes()
        .into_iter()
        .find(|(k, _)| k.to_string().eq_ignore_ascii_case(sel))
    {
        return Ok(ids);
    }
    if let Some(e) = registry.entries().iter().find(|e| e.name == sel) {
        return Ok(vec![e.id]);
    }
    bail!("selector {sel:?} matches no torrent ids, show, episode or torrent name")
}

struct Source {
    registry: TorrentRegistry,
    counts: Box<dyn MembershipCounts>,
}

fn counts_source(args: &CountsArgs, config: &RunConfig) -> Result<Source> {
    match &args.counts {
        Some(path) => {
            let registry = match config.load_registry()? {
                Some(r) => r,
                None => config.open_store()?.registry().clone(),
            };
            let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
            let counts = RegionCounts::from_csv(file, registry.len())
                .with_context(|| format!("reading counts {}", path.display()))?;
            Ok(Source {
                registry,
                counts: Box::new(counts),
            })
        }
        None => {
            let store = config.open_store()?;
            Ok(Source {
                registry: store.registry().clone(),
                counts: Box::new(store),
            })
        }
    }
}

fn window(store: &PeerStore, w: &WindowArgs) -> Result<(Vec<u32>, DateTime<Utc>, DateTime<Utc>, TimeDelta)> {
    let ids = match &w.torrents {
        Some(s) => parse_ids(s)?,
        None => Vec::new(),
    };
    let width = TimeDelta::seconds(i64::try_from(w.width_secs.max(1))?);
    let snaps = store.snapshots();
    let first = snaps.iter().map(|s| s.time).min().context("the store has no snapshots")?;
    let last = snaps.iter().map(|s| s.time).max().unwrap_or(first);
    let from = w.from.unwrap_or_else(|| {
        let ws = width.num_seconds();
        DateTime::from_timestamp(first.timestamp().div_euclid(ws) * ws, 0).unwrap_or(first)
    });
    let to = w.to.unwrap_or(last + TimeDelta::seconds(1));
    Ok((ids, from, to, width))
}

fn read_snapshots(dir: &Path) -> Result<Vec<Snapshot>> {
    let mut files = Vec::new();
    crate::collect_xml(dir, &mut files)?;
    files.sort();
    files
        .iter()
        .map(|p| Snapshot::read_file(p).with_context(|| format!("reading snapshot {}", p.display())))
        .collect()
}

pub fn run(report: &Report, config: &RunConfig, out: &mut Output) -> Result<()> {
    let format = config.format;
    match report {
        Report::Swarms(args) | Report::Episodes(args) => {
            let src = counts_source(args, config)?;
            let table = if matches!(report, Report::Swarms(_)) {
                swarm_table(&src.registry, src.counts.as_ref())?
            } else {
                episode_table(&src.registry, src.counts.as_ref())?
            };
            eprintln!("{} distinct IPs overall", table.global_distinct);
            out.rows(table.rows, format)
        }
        Report::Venn { selectors, counts } => {
            let src = counts_source(counts, config)?;
            let sels = selectors
                .iter()
                .map(|s| resolve_selector(&src.registry, s).map(|ids| (s.clone(), ids)))
                .collect::<Result<Vec<_>>>()?;
            let venn = cross_participation(src.counts.as_ref(), &sels)?;
            let mut rows: Vec<VennRow> = venn
                .regions
                .iter()
                .map(|r| VennRow {
                    kind: "region",
                    label: r.region.clone(),
                    count: r.count,
                    base: venn.union,
                    pct: r.pct,
                })
                .collect();
            rows.extend(venn.pairs.iter().map(|p| VennRow {
                kind: "pair",
                label: format!("{} & {}", p.a, p.b),
                count: p.intersection,
                base: p.union,
                pct: p.share,
            }));
            out.rows(rows, format)
        }
        Report::Geo {
            level,
            n,
            scope,
            torrents,
        } => {
            let store = config.open_store()?;
            let ids = torrents.as_deref().map(parse_ids).transpose()?;
            let rows = geo_top(&store, *level, *n, scope.as_deref(), ids.as_deref())?;
            out.rows(rows, format)
        }
        Report::Timeseries(w) => {
            let store = config.open_store()?;
            let (ids, from, to, width) = window(&store, w)?;
            let ts = timeseries(store.snapshots(), &ids, from, to, width)?;
            out.rows(ts.buckets, format)
        }
        Report::Peaks {
            window: w,
            smoothing,
            min_prominence,
            series,
            lens,
        } => {
            let store = config.open_store()?;
            let (ids, from, to, width) = window(&store, w)?;
            let ts = timeseries(store.snapshots(), &ids, from, to, width)?;
            let peaks = detect_peaks(&ts, &PeakConfig {
                smoothing: *smoothing,
                min_prominence: *min_prominence,
                series: *series,
                lens: *lens,
            })?;
            out.rows(peaks, format)
        }
        Report::Activity { cycle_secs } => {
            let store = config.open_store()?;
            let cycle = cycle_secs.map(Duration::from_secs).unwrap_or(config.cycle_interval);
            let stats = ActivityStats::of_store(&store, cycle)?;
            eprintln!(
                "{:.2} hits per IP, about {:.2} hours in the swarms",
                stats.avg_hits_per_ip,
                stats.est_avg_activity_hours()
            );
            out.rows([stats], format)
        }
        Report::Sessions { snapshots } => {
            let rows = match snapshots {
                Some(dir) => session_durations_from_snapshots(&read_snapshots(dir)?),
                None => session_durations_from_store(&config.open_store()?),
            };
            if let Some(m) = median_span(&rows) {
                eprintln!("median span {m:.0} s over {} sessions", rows.len());
            }
            out.rows(rows, format)
        }
    }
}
