use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Membership, StoreError};

/// How a torrent selector is matched against a peer's membership.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SetMode {
    /// Any selected bit set.
    Union,
    /// All selected bits set.
    Intersection,
    /// Exactly the selected bits and no others (one Venn region).
    Exact,
}

impl SetMode {
    pub fn matches(self, membership: &Membership, selector: &Membership) -> bool {
        match self {
            SetMode::Union => membership.intersects(selector),
            SetMode::Intersection => membership.is_superset_of(selector),
            SetMode::Exact => membership == selector,
        }
    }
}

impl FromStr for SetMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "union" => Ok(SetMode::Union),
            "intersection" => Ok(SetMode::Intersection),
            "exact" => Ok(SetMode::Exact),
            other => Err(format!("unknown set mode {other:?}")),
        }
    }
}

/// Anything that can report how many distinct peers have each exact
/// membership. Every set query reduces to sums over this histogram.
pub trait MembershipCounts {
    /// Number of registered torrents; valid ids are `1..=torrent_count()`.
    fn torrent_count(&self) -> u32;
    /// `(membership, distinct peers)` pairs with nonzero counts, sorted by
    /// membership.
    fn membership_histogram(&self) -> Vec<(Membership, u64)>;
}

/// Validates a selector of 1-based torrent ids against `counts`.
pub fn selector(counts: &dyn MembershipCounts, ids: &[u32]) -> Result<Membership, StoreError> {
    if ids.is_empty() {
        return Err(StoreError::EmptySelector);
    }
    for &id in ids {
        if id == 0 || id > counts.torrent_count() {
            return Err(StoreError::UnknownTorrentId(id));
        }
    }
    Ok(Membership::from_ids(ids.iter().copied()))
}

pub fn distinct_count(
    counts: &dyn MembershipCounts,
    ids: &[u32],
    mode: SetMode,
) -> Result<u64, StoreError> {
    let sel = selector(counts, ids)?;
    Ok(counts
        .membership_histogram()
        .iter()
        .filter(|(m, _)| mode.matches(m, &sel))
        .map(|(_, n)| n)
        .sum())
}

pub fn total_distinct(counts: &dyn MembershipCounts) -> u64 {
    counts.membership_histogram().iter().map(|(_, n)| n).sum()
}

/// A membership histogram without the peers behind it, read from CSV:
///
/// ```text
/// membership,count
/// 1,707147
/// 1+2,41519
/// ```
///
/// Lets analytics run at full scale on published cardinalities.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RegionCounts {
    torrents: u32,
    regions: BTreeMap<Membership, u64>,
}

#[derive(Serialize, Deserialize)]
struct CountRow {
    membership: String,
    count: u64,
}

impl RegionCounts {
    pub fn new(torrents: u32) -> Self {
        RegionCounts {
            torrents,
            regions: BTreeMap::new(),
        }
    }

    /// Adds `count` peers with exactly `membership`.
    pub fn add(&mut self, membership: Membership, count: u64) -> Result<(), StoreError> {
        match membership.max_id() {
            None => return Err(StoreError::EmptySelector),
            Some(id) if id > self.torrents => return Err(StoreError::UnknownTorrentId(id)),
            _ => {}
        }
        if count > 0 {
            *self.regions.entry(membership).or_default() += count;
        }
        Ok(())
    }

    pub fn from_csv(reader: impl Read, torrents: u32) -> Result<Self, StoreError> {
        let mut out = RegionCounts::new(torrents);
        for row in csv::Reader::from_reader(reader).deserialize() {
            let row: CountRow = row?;
            let m: Membership = row
                .membership
                .parse()
                .map_err(|e: super::ParseMembershipError| StoreError::Counts(e.to_string()))?;
            out.add(m, row.count)?;
        }
        Ok(out)
    }

    pub fn write_csv(&self, writer: impl Write) -> Result<(), StoreError> {
        let mut w = csv::Writer::from_writer(writer);
        for (m, &count) in &self.regions {
            w.serialize(CountRow {
                membership: m.to_string(),
                count,
            })?;
        }
        w.flush()?;
        Ok(())
    }

    /// Snapshot of any other histogram source.
    pub fn of(counts: &dyn MembershipCounts) -> Self {
        RegionCounts {
            torrents: counts.torrent_count(),
            regions: counts.membership_histogram().into_iter().collect(),
        }
    }
}

impl MembershipCounts for RegionCounts {
    fn torrent_count(&self) -> u32 {
        self.torrents
    }

    fn membership_histogram(&self) -> Vec<(Membership, u64)> {
        self.regions.iter().map(|(m, &n)| (m.clone(), n)).collect()
    }
}
