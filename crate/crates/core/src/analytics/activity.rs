use std::collections::BTreeMap;
use std::net::Ipv4Addr;
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Serialize, Serializer};

use super::AnalyticsError;
use crate::crawler::{format_time, Snapshot};
use crate::geodb::is_bogon;
use crate::peerstore::PeerStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ActivityStats {
    pub total_hits: u64,
    pub distinct_ips: u64,
    pub avg_hits_per_ip: f64,
    /// `avg_hits_per_ip` cycles of the crawl interval, in seconds.
    pub est_avg_activity_secs: f64,
}

impl ActivityStats {
    pub fn est_avg_activity_hours(&self) -> f64 {
        self.est_avg_activity_secs / 3600.0
    }

    pub fn of_store(store: &PeerStore, cycle: Duration) -> Result<Self, AnalyticsError> {
        activity_stats(store.total_hits(), store.peer_count(), cycle)
    }
}

/// Each hit is one IP seen in one crawl cycle, so hits per IP times the cycle
/// length estimates how long an average IP stays in the swarms.
pub fn activity_stats(total_hits: u64, distinct_ips: u64, cycle: Duration) -> Result<ActivityStats, AnalyticsError> {
    if distinct_ips == 0 {
        return Err(AnalyticsError::EmptyStore);
    }
    let avg = total_hits as f64 / distinct_ips as f64;
    Ok(ActivityStats {
        total_hits,
        distinct_ips,
        avg_hits_per_ip: avg,
        est_avg_activity_secs: avg * cycle.as_secs_f64(),
    })
}

/// Resolution of a session estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionMode {
    /// First and last sighting in any torrent, from the store.
    Store,
    /// Per (IP, torrent), from a scan of raw snapshots.
    Snapshot,
}

fn ser_time<S: Serializer>(t: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(&format_time(*t))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SessionRow {
    pub mode: SessionMode,
    pub ip: Ipv4Addr,
    /// Set in snapshot mode only.
    pub torrent_id: Option<u32>,
    #[serde(serialize_with = "ser_time")]
    pub first_seen: DateTime<Utc>,
    #[serde(serialize_with = "ser_time")]
    pub last_seen: DateTime<Utc>,
    pub span_secs: i64,
}

pub fn session_durations_from_store(store: &PeerStore) -> Vec<SessionRow> {
    store
        .peers()
        .map(|p| SessionRow {
            mode: SessionMode::Store,
            ip: p.ip,
            torrent_id: None,
            first_seen: p.first_seen,
            last_seen: p.last_seen,
            span_secs: (p.last_seen - p.first_seen).num_seconds(),
        })
        .collect()
}

/// Per (IP, torrent) spans from raw snapshots, ordered by IP then torrent.
/// Bogon peers are skipped.
pub fn session_durations_from_snapshots<'a>(snapshots: impl IntoIterator<Item = &'a Snapshot>) -> Vec<SessionRow> {
    let mut seen: BTreeMap<(u32, u32), (DateTime<Utc>, DateTime<Utc>)> = BTreeMap::new();
    for s in snapshots {
        for p in &s.peers {
            if p.bogon || is_bogon(p.ip) {
                continue;
            }
            seen.entry((u32::from(p.ip), s.torrent_id))
                .and_modify(|(first, last)| {
                    *first = (*first).min(s.time);
                    *last = (*last).max(s.time);
                })
                .or_insert((s.time, s.time));
        }
    }
    seen.into_iter()
        .map(|((ip, torrent), (first, last))| SessionRow {
            mode: SessionMode::Snapshot,
            ip: Ipv4Addr::from(ip),
            torrent_id: Some(torrent),
            first_seen: first,
            last_seen: last,
            span_secs: (last - first).num_seconds(),
        })
        .collect()
}

/// Median span in seconds (mean of the middle two for even counts).
pub fn median_span(rows: &[SessionRow]) -> Option<f64> {
    let mut spans: Vec<i64> = rows.iter().map(|r| r.span_secs).collect();
    if spans.is_empty() {
        return None;
    }
    spans.sort_unstable();
    let m = spans.len() / 2;
    Some(if spans.len() % 2 == 1 {
        spans[m] as f64
    } else {
        (spans[m - 1] + spans[m]) as f64 / 2.0
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bencode::InfoHash;
    use crate::crawler::SnapshotPeer;
    use chrono::TimeDelta;

    #[test]
    fn paper_totals() {
        let s = activity_stats(1_272_194_701, 6_299_695, Duration::from_secs(120)).unwrap();
        assert!((201.9..=202.0).contains(&s.avg_hits_per_ip), "{}", s.avg_hits_per_ip);
        assert!((6.7..=6.8).contains(&s.est_avg_activity_hours()), "{}", s.est_avg_activity_hours());
    }

    #[test]
    fn one_hit_is_one_cycle() {
        let s = activity_stats(1, 1, Duration::from_secs(120)).unwrap();
        assert_eq!(s.est_avg_activity_secs, 120.0);
        assert!(matches!(activity_stats(5, 0, Duration::from_secs(120)), Err(AnalyticsError::EmptyStore)));
    }

    fn snap(id: u32, cycle: i64, ips: &[[u8; 4]]) -> Snapshot {
        let t0 = DateTime::parse_from_rfc3339("2013-08-12T12:00:00Z").unwrap().with_timezone(&Utc);
        Snapshot {
            torrent_id: id,
            infohash: InfoHash([id as u8; 20]),
            network: "tracker".into(),
            time: t0 + TimeDelta::seconds(120 * cycle),
            peer_count: ips.len() as u64,
            seeders: 0,
            leechers: 0,
            euro_count: 0,
            na_count: 0,
            aus_count: 0,
            peers: ips
                .iter()
                .map(|&o| SnapshotPeer {
                    ip: o.into(),
                    port: 1,
                    bogon: is_bogon(o.into()),
                })
                .collect(),
        }
    }

    #[test]
    fn snapshot_spans() {
        let snaps = [
            snap(1, 0, &[[1, 1, 1, 1], [2, 2, 2, 2], [10, 0, 0, 1]]),
            snap(2, 3, &[[1, 1, 1, 1]]),
            snap(1, 6, &[[1, 1, 1, 1]]),
        ];
        let rows = session_durations_from_snapshots(&snaps);
        let spans: Vec<(Ipv4Addr, Option<u32>, i64)> = rows.iter().map(|r| (r.ip, r.torrent_id, r.span_secs)).collect();
        assert_eq!(
            spans,
            [
                ([1, 1, 1, 1].into(), Some(1), 6 * 120),
                ([1, 1, 1, 1].into(), Some(2), 0),
                ([2, 2, 2, 2].into(), Some(1), 0),
            ]
        );
        assert_eq!(median_span(&rows), Some(0.0));
        assert_eq!(median_span(&[]), None);
    }
}
