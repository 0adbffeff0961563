//! Command-line front end: crawl, ingest, report, simulate and export.

pub mod config;
pub mod crawl;
pub mod report;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use swarmscope::analytics::{write_rows, OutputFormat};
use swarmscope::peerstore::ExportFormat;
use swarmscope::simharness::{
    dedup_intervals, generate_with, simulate, PopulationSpec, RecallRow, SimConfig, TrackerConfig, Transport,
};

use config::{FileConfig, Overrides, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "swarmscope", version, about = "Crawl BitTorrent swarms and analyse who is in them")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML file with defaults for the flags below.
    #[arg(long, global = true, env = "SWARMSCOPE_CONFIG")]
    pub config: Option<PathBuf>,
    /// Peer store directory.
    #[arg(long, global = true, env = "SWARMSCOPE_STORE")]
    pub store: Option<PathBuf>,
    /// IP-range geolocation CSV; the bundled table when omitted.
    #[arg(long, global = true)]
    pub geo: Option<PathBuf>,
    /// Torrent registry TOML with show and episode labels.
    #[arg(long, global = true)]
    pub registry: Option<PathBuf>,
    /// Crawl cycle interval in seconds (1 to 86400, default 120).
    #[arg(long, global = true)]
    pub cycle_interval_secs: Option<u64>,
    /// Rounds without a new IP that end an enumeration (1 to 100, default 3).
    #[arg(long, global = true)]
    pub saturation_rounds: Option<u32>,
    /// Announce rounds per torrent per cycle (1 to 100000, default 50).
    #[arg(long, global = true)]
    pub round_budget: Option<u32>,
    /// Peers asked for per announce (1 to 1000, default 200).
    #[arg(long, global = true)]
    pub numwant: Option<u32>,
    /// Write reports to `<dir>/<report>.csv` instead of stdout.
    #[arg(long, global = true)]
    pub report_dir: Option<PathBuf>,
    /// Write output to this file instead of stdout.
    #[arg(long, short, global = true)]
    pub out: Option<PathBuf>,
    /// JSON lines instead of CSV.
    #[arg(long, global = true)]
    pub json: bool,
    /// More log output; repeat for debug.
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Crawl torrents (or a simulated population) and ingest each cycle.
    Crawl(crawl::CrawlArgs),
    /// Ingest snapshot files or directories of them.
    Ingest {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
    },
    /// Tables and series computed from the store.
    #[command(subcommand)]
    Report(report::Report),
    /// Crawl a synthetic population at several intervals and score recall.
    Simulate(SimulateArgs),
    /// Dump store collections.
    Export {
        #[arg(value_parser = ["peers", "crawl-files"])]
        what: String,
    },
    /// Re-resolve every stored peer against the geo table.
    Regeolocate,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Population spec TOML.
    pub spec: PathBuf,
    /// Crawl intervals in seconds.
    #[arg(long, value_delimiter = ',', default_value = "120,600,3600")]
    pub intervals: Vec<u64>,
    /// Most peers per announce reply.
    #[arg(long)]
    pub sample_cap: Option<u32>,
    /// Minimum online stretch in seconds for a peer to count towards recall;
    /// one slot of the population by default.
    #[arg(long)]
    pub min_span_secs: Option<u64>,
    /// Serve the mock tracker over real loopback sockets.
    #[arg(long)]
    pub loopback: bool,
    /// Keep snapshot files under `<dir>/<interval>s/`.
    #[arg(long)]
    pub snapshots: Option<PathBuf>,
    /// Write the generated ground truth to this CSV.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

/// Where command output goes.
pub struct Output {
    path: Option<PathBuf>,
}

impl Output {
    pub fn rows<T: Serialize>(&mut self, rows: impl IntoIterator<Item = T>, format: OutputFormat) -> Result<()> {
        self.with_writer(|w| Ok(write_rows(rows, format, w)?))
    }

    fn with_writer(&mut self, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
        match &self.path {
            Some(p) => {
                if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                    std::fs::create_dir_all(dir)?;
                }
                let mut file = std::fs::File::create(p).with_context(|| format!("creating {}", p.display()))?;
                f(&mut file)?;
                eprintln!("wrote {}", p.display());
                Ok(())
            }
            None => {
                let stdout = std::io::stdout();
                let mut lock = stdout.lock();
                f(&mut lock)
            }
        }
    }
}

pub(crate) fn collect_xml(path: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if path.is_dir() {
        for entry in std::fs::read_dir(path).with_context(|| format!("listing {}", path.display()))? {
            collect_xml(&entry?.path(), out)?;
        }
    } else if path.extension().is_some_and(|e| e == "xml") {
        out.push(path.to_path_buf());
    }
    Ok(())
}

fn extension(format: OutputFormat) -> &'static str {
    match format {
        OutputFormat::Csv => "csv",
        OutputFormat::Jsonl => "jsonl",
    }
}

fn ingest(paths: &[PathBuf], config: &RunConfig) -> Result<bool> {
    let geo = config.load_geo()?;
    let mut store = config.open_or_create_store(None)?;
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            collect_xml(p, &mut files)?;
        } else {
            // missing files are reported per file below
            files.push(p.clone());
        }
    }
    // snapshot names start with their crawl time
    files.sort_by(|a, b| a.file_name().cmp(&b.file_name()).then_with(|| a.cmp(b)));
    let stats = store.ingest_paths(&files, &geo)?;
    store.checkpoint()?;
    println!("files: {}", stats.files);
    println!("ingested: {}", stats.ingested);
    println!("deduped: {}", stats.deduped);
    println!("peers upserted: {}", stats.peers_observed);
    println!("new peers: {}", stats.new_peers);
    println!("bogons skipped: {}", stats.bogons_skipped);
    println!("failed: {}", stats.errors.len());
    for (path, err) in &stats.errors {
        eprintln!("error: {}: {err}", path.display());
    }
    Ok(stats.errors.is_empty())
}

fn run_simulation(args: &SimulateArgs, config: &RunConfig, out: &mut Output) -> Result<()> {
    let spec = PopulationSpec::load(&args.spec).with_context(|| format!("loading spec {}", args.spec.display()))?;
    let (intervals, dups) = dedup_intervals(&args.intervals);
    if !dups.is_empty() {
        eprintln!("warning: ignoring duplicate intervals {dups:?}");
    }
    if intervals.is_empty() {
        bail!("no intervals given");
    }
    let truth = Arc::new(generate_with(&spec, &config.load_geo()?)?);
    if let Some(path) = &args.truth {
        let file = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
        truth.write_csv(file)?;
    }
    let sim = SimConfig {
        intervals,
        enumeration: swarmscope::crawler::EnumerationConfig {
            saturation_rounds: config.saturation_rounds,
            round_budget: config.round_budget,
            numwant: config.numwant,
            ..Default::default()
        },
        tracker: TrackerConfig {
            sample_cap: args.sample_cap,
            seed: spec.seed,
            ..Default::default()
        },
        transport: if args.loopback {
            Transport::Loopback
        } else {
            Transport::InProcess
        },
        min_span: args.min_span_secs.map(Duration::from_secs),
        snapshot_dir: args.snapshots.clone(),
    };
    let runs = simulate(&truth, &sim)?;
    for r in &runs {
        log::info!(
            "{} s: {} cycles, {} announces in {:.1?}",
            r.interval_secs,
            r.cycles,
            r.announces,
            r.elapsed
        );
    }
    out.rows(runs.iter().map(RecallRow::from), config.format)
}

fn export(what: &str, config: &RunConfig, out: &mut Output) -> Result<()> {
    let store = config.open_store()?;
    let format = match config.format {
        OutputFormat::Csv => ExportFormat::Csv,
        OutputFormat::Jsonl => ExportFormat::Jsonl,
    };
    out.with_writer(|w| {
        match what {
            "peers" => store.export_peers(w, format)?,
            _ => store.export_crawl_files(w, format)?,
        }
        Ok(())
    })
}

/// Runs one command. `Ok(false)` means it finished but some input failed.
pub fn run(cli: Cli) -> Result<bool> {
    let g = cli.global;
    let file = match &g.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let config = RunConfig::resolve(file, Overrides {
        store: g.store,
        geo: g.geo,
        registry: g.registry,
        cycle_interval_secs: g.cycle_interval_secs,
        saturation_rounds: g.saturation_rounds,
        round_budget: g.round_budget,
        numwant: g.numwant,
        report_dir: g.report_dir,
        json: g.json,
    })?;
    let out_for = |name: &str| Output {
        path: g.out.clone().or_else(|| {
            config
                .report_dir
                .as_ref()
                .map(|d| d.join(format!("{name}.{}", extension(config.format))))
        }),
    };

    match &cli.command {
        Command::Crawl(args) => crawl::run(args, &config)?,
        Command::Ingest { paths } => return ingest(paths, &config),
        Command::Report(r) => report::run(r, &config, &mut out_for(r.name()))?,
        Command::Simulate(args) => run_simulation(args, &config, &mut out_for("recall"))?,
        Command::Export { what } => export(what, &config, &mut out_for(what))?,
        Command::Regeolocate => {
            let geo = config.load_geo()?;
            let mut store = config.open_store()?;
            let changed = store.regeolocate(&geo)?;
            store.checkpoint()?;
            println!("{changed} peers changed location");
        }
    }
    Ok(true)
}
