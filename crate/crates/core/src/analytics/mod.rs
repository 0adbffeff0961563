//! Read-side aggregates over a peer store: participation tables, Venn
//! regions, geographic rankings, swarm-size time series with peak detection,
//! and activity/session estimates.
//!
//! Every function takes shared references only, so analytics can run while
//! another thread holds the store's read lock.

mod activity;
mod geo;
mod participation;
mod temporal;

use std::fmt;
use std::io::Write;

use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::peerstore::StoreError;

pub use activity::{
    activity_stats, median_span, session_durations_from_snapshots, session_durations_from_store, ActivityStats,
    SessionMode, SessionRow,
};
pub use geo::{geo_top, geo_top_weighted, GeoLevel, GeoRow};
pub use participation::{
    cross_participation, episode_table, swarm_table, PairShare, ParticipationReport, ParticipationRow, VennRegion,
    VennReport,
};
pub use temporal::{
    detect_peaks, find_peaks, smooth, timeseries, Peak, PeakConfig, SeriesBucket, SwarmTimeSeries,
};

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error("no peers to report on")]
    EmptyStore,
    #[error("cross participation needs 2 or 3 selectors, got {0}")]
    SelectorArity(usize),
    #[error("bad scope: {0}")]
    BadScope(String),
    #[error("no snapshots in the requested window")]
    EmptyWindow,
    #[error("series of {len} points is too short for a smoothing window of {window}")]
    SeriesTooShort { len: usize, window: usize },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A percentage held in hundredths, rounded half-up from an exact ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Pct2(pub u64);

impl Pct2 {
    /// `100 * num / den` rounded half-up to two decimals. Zero when `den` is 0.
    pub fn of(num: u64, den: u64) -> Pct2 {
        if den == 0 {
            return Pct2(0);
        }
        let scaled = u128::from(num) * 10_000;
        let den = u128::from(den);
        Pct2(((2 * scaled + den) / (2 * den)) as u64)
    }

    pub fn hundredths(self) -> u64 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / 100.0
    }
}

impl fmt::Display for Pct2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:02}", self.0 / 100, self.0 % 100)
    }
}

impl Serialize for Pct2 {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputFormat {
    #[default]
    Csv,
    Jsonl,
}

/// Writes rows as CSV with a header, or as one JSON object per line.
pub fn write_rows<T: Serialize>(
    rows: impl IntoIterator<Item = T>,
    format: OutputFormat,
    w: impl Write,
) -> Result<(), AnalyticsError> {
    match format {
        OutputFormat::Csv => {
            let mut csv = csv::Writer::from_writer(w);
            for row in rows {
                csv.serialize(row)?;
            }
            csv.flush()?;
        }
        OutputFormat::Jsonl => {
            let mut w = std::io::BufWriter::new(w);
            for row in rows {
                serde_json::to_writer(&mut w, &row)?;
                w.write_all(b"\n")?;
            }
            w.flush()?;
        }
    }
    Ok(())
}
