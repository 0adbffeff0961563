use std::collections::BTreeMap;

use chrono::{DateTime, FixedOffset, TimeDelta, Utc};
use serde::{Serialize, Serializer};

use super::AnalyticsError;
use crate::crawler::format_time;
use crate::geodb::RegionClass;
use crate::peerstore::SnapshotRecord;

fn ser_time<S: Serializer>(t: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(&format_time(*t))
}

/// One fixed-width bucket. Values are `None` when no selected torrent has a
/// snapshot in the bucket.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesBucket {
    #[serde(serialize_with = "ser_time")]
    pub bucket_start: DateTime<Utc>,
    pub total: Option<f64>,
    pub europe: Option<f64>,
    pub north_america: Option<f64>,
    pub australia: Option<f64>,
    #[serde(skip)]
    pub snapshots: u32,
}

impl SeriesBucket {
    pub fn value(&self, region: Option<RegionClass>) -> Option<f64> {
        match region {
            None => self.total,
            Some(RegionClass::Europe) => self.europe,
            Some(RegionClass::NorthAmerica) => self.north_america,
            Some(RegionClass::Australia) => self.australia,
            Some(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwarmTimeSeries {
    pub torrent_ids: Vec<u32>,
    pub width: TimeDelta,
    pub buckets: Vec<SeriesBucket>,
}

impl SwarmTimeSeries {
    pub fn values(&self, region: Option<RegionClass>) -> Vec<Option<f64>> {
        self.buckets.iter().map(|b| b.value(region)).collect()
    }
}

#[derive(Default, Clone, Copy)]
struct Acc {
    n: u32,
    total: u64,
    euro: u64,
    na: u64,
    aus: u64,
}

/// Buckets `[from, to)` into slots of `width`. A torrent with several
/// snapshots in one bucket contributes their mean; selected torrents are then
/// summed. An empty `torrents` selects all.
pub fn timeseries(
    snapshots: &[SnapshotRecord],
    torrents: &[u32],
    from: DateTime<Utc>,
    to: DateTime<Utc>,
    width: TimeDelta,
) -> Result<SwarmTimeSeries, AnalyticsError> {
    if to <= from || width <= TimeDelta::zero() {
        return Err(AnalyticsError::EmptyWindow);
    }
    let width_ms = width.num_milliseconds().max(1);
    let span_ms = (to - from).num_milliseconds();
    let n = ((span_ms + width_ms - 1) / width_ms) as usize;
    let mut acc: Vec<BTreeMap<u32, Acc>> = vec![BTreeMap::new(); n];
    let mut any = false;
    for s in snapshots {
        if s.time < from || s.time >= to || !(torrents.is_empty() || torrents.contains(&s.torrent_id)) {
            continue;
        }
        let i = ((s.time - from).num_milliseconds() / width_ms) as usize;
        let a = acc[i].entry(s.torrent_id).or_default();
        a.n += 1;
        a.total += s.peer_count;
        a.euro += s.euro_count;
        a.na += s.na_count;
        a.aus += s.aus_count;
        any = true;
    }
    if !any {
        return Err(AnalyticsError::EmptyWindow);
    }
    let buckets = acc
        .into_iter()
        .enumerate()
        .map(|(i, per_torrent)| {
            let start = from + TimeDelta::milliseconds(width_ms * i as i64);
            let mean = |f: fn(&Acc) -> u64| -> Option<f64> {
                if per_torrent.is_empty() {
                    None
                } else {
                    Some(per_torrent.values().map(|a| f(a) as f64 / f64::from(a.n)).sum())
                }
            };
            SeriesBucket {
                bucket_start: start,
                total: mean(|a| a.total),
                europe: mean(|a| a.euro),
                north_america: mean(|a| a.na),
                australia: mean(|a| a.aus),
                snapshots: per_torrent.values().map(|a| a.n).sum(),
            }
        })
        .collect();
    let mut ids: Vec<u32> = torrents.to_vec();
    ids.sort_unstable();
    Ok(SwarmTimeSeries {
        torrent_ids: ids,
        width: TimeDelta::milliseconds(width_ms),
        buckets,
    })
}

/// Centered moving average over `window` points. Gaps stay gaps and are
/// skipped, not zero-filled, when averaging their neighbours.
pub fn smooth(series: &[Option<f64>], window: usize) -> Vec<Option<f64>> {
    let half = window.max(1) / 2;
    (0..series.len())
        .map(|i| {
            series[i]?;
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(series.len() - 1);
            let vals: Vec<f64> = series[lo..=hi].iter().flatten().copied().collect();
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        })
        .collect()
}

/// Local maxima of `series` (gaps ignored) whose topographic prominence is at
/// least `min_prominence` times the series range. Flat tops report their
/// left-middle point. Returns `(index, prominence)`.
pub fn find_peaks(series: &[Option<f64>], min_prominence: f64) -> Vec<(usize, f64)> {
    let pts: Vec<(usize, f64)> = series
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|v| (i, v)))
        .collect();
    let (lo, hi) = pts
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, v)| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    if pts.len() < 3 || range.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return Vec::new();
    }
    let threshold = min_prominence * range;
    let mut out = Vec::new();
    let mut i = 1;
    while i + 1 < pts.len() {
        let v = pts[i].1;
        if pts[i - 1].1 < v {
            let mut j = i;
            while j + 1 < pts.len() && pts[j + 1].1 == v {
                j += 1;
            }
            if j + 1 < pts.len() && pts[j + 1].1 < v {
                let p = (i + j) / 2;
                let mut left_min = v;
                for k in (0..i).rev() {
                    if pts[k].1 > v {
                        break;
                    }
                    left_min = left_min.min(pts[k].1);
                }
                let mut right_min = v;
                for &(_, w) in &pts[j + 1..] {
                    if w > v {
                        break;
                    }
                    right_min = right_min.min(w);
                }
                let prominence = v - left_min.max(right_min);
                if prominence > 0.0 && prominence >= threshold {
                    out.push((pts[p].0, prominence));
                }
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakConfig {
    /// Moving-average window in buckets.
    pub smoothing: usize,
    /// Minimum prominence as a fraction of the smoothed series range.
    pub min_prominence: f64,
    /// Which series to scan; `None` for the total.
    pub series: Option<RegionClass>,
    /// Region whose representative offset is used for local-time labels.
    pub lens: Option<RegionClass>,
}

impl Default for PeakConfig {
    fn default() -> Self {
        PeakConfig {
            smoothing: 3,
            min_prominence: 0.10,
            series: None,
            lens: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Peak {
    #[serde(skip)]
    pub index: usize,
    #[serde(serialize_with = "ser_time")]
    pub bucket_start: DateTime<Utc>,
    /// Middle of the bucket, the reported peak instant.
    #[serde(serialize_with = "ser_time")]
    pub bucket_center: DateTime<Utc>,
    /// Smoothed value at the peak.
    pub magnitude: f64,
    pub prominence: f64,
    /// Bucket center in the lens region's representative offset.
    pub local_time: Option<String>,
}

impl Peak {
    pub fn local(&self, region: RegionClass) -> Option<DateTime<FixedOffset>> {
        let off = FixedOffset::east_opt(region.utc_offset_hours()? * 3600)?;
        Some(self.bucket_center.with_timezone(&off))
    }
}

pub fn detect_peaks(ts: &SwarmTimeSeries, config: &PeakConfig) -> Result<Vec<Peak>, AnalyticsError> {
    let raw = ts.values(config.series);
    if raw.len() <= config.smoothing {
        return Err(AnalyticsError::SeriesTooShort {
            len: raw.len(),
            window: config.smoothing,
        });
    }
    let smoothed = smooth(&raw, config.smoothing);
    Ok(find_peaks(&smoothed, config.min_prominence)
        .into_iter()
        .map(|(i, prominence)| {
            let start = ts.buckets[i].bucket_start;
            let mut peak = Peak {
                index: i,
                bucket_start: start,
                bucket_center: start + ts.width / 2,
                magnitude: smoothed[i].unwrap_or_default(),
                prominence,
                local_time: None,
            };
            peak.local_time = config
                .lens
                .and_then(|r| peak.local(r))
                .map(|t| t.format("%Y-%m-%d %H:%M %:z").to_string());
            peak
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn t0() -> DateTime<Utc> {
        DateTime::parse_from_rfc3339("2013-08-12T00:00:00Z").unwrap().with_timezone(&Utc)
    }

    fn rec(id: u32, secs: i64, total: u64, e: u64, n: u64, a: u64) -> SnapshotRecord {
        SnapshotRecord {
            time: t0() + TimeDelta::seconds(secs),
            network: "tracker".into(),
            peer_count: total,
            torrent_id: id,
            euro_count: e,
            na_count: n,
            aus_count: a,
        }
    }

    #[test]
    fn constant_series() {
        let snaps: Vec<_> = (0..30).map(|i| rec(1, i * 120, 10, 5, 3, 1)).collect();
        let ts = timeseries(&snaps, &[1], t0(), t0() + TimeDelta::hours(1), TimeDelta::seconds(120)).unwrap();
        assert_eq!(ts.buckets.len(), 30);
        for b in &ts.buckets {
            assert_eq!((b.total, b.europe, b.north_america, b.australia), (Some(10.0), Some(5.0), Some(3.0), Some(1.0)));
        }
        let peaks = detect_peaks(&ts, &PeakConfig::default()).unwrap();
        assert!(peaks.is_empty());
    }

    #[test]
    fn missing_cycle_is_a_gap() {
        let snaps: Vec<_> = (0..10).filter(|&i| i != 4).map(|i| rec(1, i * 120, 10, 0, 0, 0)).collect();
        let ts = timeseries(&snaps, &[1], t0(), t0() + TimeDelta::seconds(1200), TimeDelta::seconds(120)).unwrap();
        assert_eq!(ts.buckets[4].total, None);
        assert_eq!(ts.buckets[3].total, Some(10.0));
        let mut csv = Vec::new();
        super::super::write_rows(&ts.buckets[3..5], super::super::OutputFormat::Csv, &mut csv).unwrap();
        assert_eq!(
            String::from_utf8(csv).unwrap(),
            "bucket_start,total,europe,north_america,australia\n\
             2013-08-12T00:06:00Z,10.0,0.0,0.0,0.0\n\
             2013-08-12T00:08:00Z,,,,\n"
        );
    }

    #[test]
    fn totals_match_records_and_torrents_sum() {
        let snaps = vec![rec(1, 0, 10, 1, 1, 1), rec(1, 60, 20, 1, 1, 1), rec(2, 30, 7, 0, 0, 0), rec(1, 120, 4, 0, 0, 0)];
        let ts = timeseries(&snaps, &[], t0(), t0() + TimeDelta::seconds(240), TimeDelta::seconds(120)).unwrap();
        assert_eq!(ts.buckets[0].total, Some(15.0 + 7.0));
        assert_eq!(ts.buckets[0].snapshots, 3);
        assert_eq!(ts.buckets[1].total, Some(4.0));
        let only2 = timeseries(&snaps, &[2], t0(), t0() + TimeDelta::seconds(240), TimeDelta::seconds(120)).unwrap();
        assert_eq!(only2.buckets[1].total, None);
        assert!(matches!(
            timeseries(&snaps, &[3], t0(), t0() + TimeDelta::seconds(240), TimeDelta::seconds(120)),
            Err(AnalyticsError::EmptyWindow)
        ));
    }

    fn sinusoid_day(peak_hour_utc: f64, buckets_per_hour: usize, days: usize) -> SwarmTimeSeries {
        let n = 24 * buckets_per_hour * days;
        let width = TimeDelta::seconds(3600 / buckets_per_hour as i64);
        let buckets = (0..n)
            .map(|i| {
                let start = t0() + width * i as i32;
                let center_h = (i as f64 + 0.5) / buckets_per_hour as f64;
                let v = 100.0 + 50.0 * (2.0 * PI * (center_h - peak_hour_utc) / 24.0).cos();
                SeriesBucket {
                    bucket_start: start,
                    total: Some(v),
                    europe: None,
                    north_america: None,
                    australia: None,
                    snapshots: 1,
                }
            })
            .collect();
        SwarmTimeSeries {
            torrent_ids: vec![1],
            width,
            buckets,
        }
    }

    #[test]
    fn sinusoid_peaks_at_local_evening() {
        // 20:30 in Europe (UTC+1) is 19:30 UTC
        let ts = sinusoid_day(19.5, 30, 1);
        let cfg = PeakConfig {
            lens: Some(RegionClass::Europe),
            ..Default::default()
        };
        let peaks = detect_peaks(&ts, &cfg).unwrap();
        assert_eq!(peaks.len(), 1);
        let want = t0() + TimeDelta::minutes(19 * 60 + 30);
        assert!((peaks[0].bucket_center - want).num_seconds().abs() <= 120, "{:?}", peaks[0]);
        assert!(peaks[0].local_time.as_deref().unwrap().contains("20:"), "{:?}", peaks[0].local_time);
    }

    #[test]
    fn plateau_and_edges() {
        let s: Vec<Option<f64>> = [1.0, 3.0, 3.0, 3.0, 1.0, 2.0].iter().map(|&v| Some(v)).collect();
        assert_eq!(find_peaks(&s, 0.1), vec![(2, 2.0)]);
        // rising edge is not a peak
        let s: Vec<Option<f64>> = [1.0, 2.0, 3.0].iter().map(|&v| Some(v)).collect();
        assert!(find_peaks(&s, 0.0).is_empty());
        // gaps are skipped, not treated as zeros
        let s = vec![Some(1.0), Some(5.0), None, Some(4.0), Some(1.0)];
        assert_eq!(find_peaks(&s, 0.1), vec![(1, 4.0)]);
        assert_eq!(smooth(&s, 3), vec![Some(3.0), Some(3.0), None, Some(2.5), Some(2.5)]);
    }

    #[test]
    fn too_short() {
        let ts = sinusoid_day(12.0, 1, 1);
        let cfg = PeakConfig {
            smoothing: 24,
            ..Default::default()
        };
        assert!(matches!(detect_peaks(&ts, &cfg), Err(AnalyticsError::SeriesTooShort { len: 24, window: 24 })));
    }

    proptest! {
        #[test]
        fn scale_invariant(vals in prop::collection::vec(prop::option::weighted(0.9, 0u32..1000), 5..200),
                           exp in -8i32..8, window in 1usize..6) {
            let alpha = 2f64.powi(exp);
            let a: Vec<Option<f64>> = vals.iter().map(|v| v.map(f64::from)).collect();
            let b: Vec<Option<f64>> = a.iter().map(|v| v.map(|x| x * alpha)).collect();
            let pa: Vec<usize> = find_peaks(&smooth(&a, window), 0.1).into_iter().map(|p| p.0).collect();
            let pb: Vec<usize> = find_peaks(&smooth(&b, window), 0.1).into_iter().map(|p| p.0).collect();
            prop_assert_eq!(pa, pb);
        }
    }
}
