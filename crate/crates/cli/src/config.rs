use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use serde::Deserialize;
use swarmscope::analytics::OutputFormat;
use swarmscope::geodb::GeoTable;
use swarmscope::peerstore::{PeerStore, TorrentRegistry};

pub const CYCLE_RANGE: RangeInclusive<u64> = 1..=86_400;
pub const SATURATION_RANGE: RangeInclusive<u32> = 1..=100;
pub const BUDGET_RANGE: RangeInclusive<u32> = 1..=100_000;
pub const NUMWANT_RANGE: RangeInclusive<u32> = 1..=1_000;

/// Contents of a `--config` file. Relative paths are taken from the file's
/// directory.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub store: Option<PathBuf>,
    pub geo: Option<PathBuf>,
    pub registry: Option<PathBuf>,
    pub cycle_interval_secs: Option<u64>,
    pub saturation_rounds: Option<u32>,
    pub round_budget: Option<u32>,
    pub numwant: Option<u32>,
    pub report_dir: Option<PathBuf>,
    pub format: Option<String>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: FileConfig = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.store, &mut cfg.geo, &mut cfg.registry, &mut cfg.report_dir]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}

/// Command-line values that override the config file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub store: Option<PathBuf>,
    pub geo: Option<PathBuf>,
    pub registry: Option<PathBuf>,
    pub cycle_interval_secs: Option<u64>,
    pub saturation_rounds: Option<u32>,
    pub round_budget: Option<u32>,
    pub numwant: Option<u32>,
    pub report_dir: Option<PathBuf>,
    pub json: bool,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub store: Option<PathBuf>,
    pub geo: Option<PathBuf>,
    pub registry: Option<PathBuf>,
    pub cycle_interval: Duration,
    pub saturation_rounds: u32,
    pub round_budget: u32,
    pub numwant: u32,
    pub report_dir: Option<PathBuf>,
    pub format: OutputFormat,
}

fn in_range<T: PartialOrd + std::fmt::Display>(name: &str, v: T, r: RangeInclusive<T>) -> Result<T> {
    if !r.contains(&v) {
        bail!("{name} = {v} is outside {}..={}", r.start(), r.end());
    }
    Ok(v)
}

impl RunConfig {
    pub fn resolve(file: FileConfig, o: Overrides) -> Result<Self> {
        let format = if o.json {
            OutputFormat::Jsonl
        } else {
            match file.format.as_deref() {
                None | Some("csv") => OutputFormat::Csv,
                Some("json") | Some("jsonl") => OutputFormat::Jsonl,
                Some(other) => bail!("format must be csv or json, not {other:?}"),
            }
        };
        let cfg = RunConfig {
            store: o.store.or(file.store),
            geo: o.geo.or(file.geo),
            registry: o.registry.or(file.registry),
            cycle_interval: Duration::from_secs(in_range(
                "cycle_interval_secs",
                o.cycle_interval_secs.or(file.cycle_interval_secs).unwrap_or(120),
                CYCLE_RANGE,
            )?),
            saturation_rounds: in_range(
                "saturation_rounds",
                o.saturation_rounds.or(file.saturation_rounds).unwrap_or(3),
                SATURATION_RANGE,
            )?,
            round_budget: in_range(
                "round_budget",
                o.round_budget.or(file.round_budget).unwrap_or(50),
                BUDGET_RANGE,
            )?,
            numwant: in_range("numwant", o.numwant.or(file.numwant).unwrap_or(200), NUMWANT_RANGE)?,
            report_dir: o.report_dir.or(file.report_dir),
            format,
        };
        for (name, p) in [("geo table", &cfg.geo), ("registry", &cfg.registry)] {
            if let Some(p) = p {
                if !p.is_file() {
                    bail!("{name} {} does not exist", p.display());
                }
            }
        }
        if let Some(s) = &cfg.store {
            if s.exists() && !s.is_dir() {
                bail!("store {} is not a directory", s.display());
            }
        }
        Ok(cfg)
    }

    pub fn load_geo(&self) -> Result<GeoTable> {
        match &self.geo {
            Some(p) => GeoTable::load(p).with_context(|| format!("loading geo table {}", p.display())),
            None => Ok(GeoTable::bundled_fixture()),
        }
    }

    pub fn load_registry(&self) -> Result<Option<TorrentRegistry>> {
        self.registry
            .as_ref()
            .map(|p| TorrentRegistry::load(p).with_context(|| format!("loading registry {}", p.display())))
            .transpose()
    }

    pub fn store_path(&self) -> Result<&Path> {
        self.store
            .as_deref()
            .context("no store given; use --store, SWARMSCOPE_STORE or the config file")
    }

    pub fn open_store(&self) -> Result<PeerStore> {
        let dir = self.store_path()?;
        PeerStore::open(dir).with_context(|| format!("opening store {}", dir.display()))
    }

    /// Opens the store, creating it from `registry` (or the configured
    /// registry) when absent. A given registry is merged into an existing
    /// store.
    pub fn open_or_create_store(&self, registry: Option<TorrentRegistry>) -> Result<PeerStore> {
        let dir = self.store_path()?;
        let registry = match registry {
            Some(r) => Some(r),
            None => self.load_registry()?,
        };
        if dir.join(swarmscope::peerstore::REGISTRY_FILE).exists() {
            let mut store = self.open_store()?;
            if let Some(r) = registry {
                store.extend_registry(r).context("merging registry into store")?;
            }
            Ok(store)
        } else {
            let registry = registry.context("store does not exist yet; give --registry to create it")?;
            PeerStore::create(dir, registry).with_context(|| format!("creating store {}", dir.display()))
        }
    }
}
