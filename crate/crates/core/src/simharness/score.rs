use std::collections::{BTreeMap, HashMap, HashSet};
use std::net::Ipv4Addr;
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::Serialize;

use super::truth::GroundTruth;
use super::SimError;
use crate::geodb::RegionClass;
use crate::peerstore::PeerStore;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegionError {
    pub region: RegionClass,
    /// Peers online at some point in the window.
    pub truth: u64,
    pub observed: u64,
    /// `(observed - truth) / truth`; `None` without truth peers.
    pub relative_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Score {
    /// Peers online for at least the threshold span inside the window.
    pub active: u64,
    pub observed: u64,
    pub recall: f64,
    pub precision: f64,
    pub regions: Vec<RegionError>,
    /// Mean absolute difference between each observed peer's first-to-last
    /// sighting and its true first-to-last online time, in seconds.
    pub mean_span_error_secs: Option<f64>,
    pub median_truth_span_secs: Option<f64>,
    pub median_observed_span_secs: Option<f64>,
    /// Mean true online time of peers online in the window, in seconds.
    pub truth_mean_online_secs: Option<f64>,
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { (v[m - 1] + v[m]) / 2.0 })
}

/// Compares the store's peers against the truth over `[from, to)`.
///
/// Recall counts peers whose longest online stretch inside the window lasts
/// at least `min_span`. Precision is the share of observed peers that were
/// online at some point in the window; with nothing observed it is 1.
pub fn score(
    truth: &GroundTruth,
    store: &PeerStore,
    from: DateTime<Utc>,
    to: DateTime<Utc>,
    min_span: Duration,
) -> Result<Score, SimError> {
    if from >= to || from < truth.start() || to > truth.end() {
        return Err(SimError::WindowMismatch {
            from,
            to,
            start: truth.start(),
            end: truth.end(),
        });
    }
    let min_span = min_span.as_secs_f64();
    let by_ip: HashMap<Ipv4Addr, usize> = truth.peers.iter().enumerate().map(|(i, p)| (p.ip, i)).collect();

    // per truth peer: (longest stretch, first online, last online) in window
    let mut in_window: Vec<Option<(f64, DateTime<Utc>, DateTime<Utc>, f64)>> = Vec::with_capacity(truth.peers.len());
    for p in &truth.peers {
        let mut best = 0.0f64;
        let mut total = 0.0;
        let mut first = None;
        let mut last = None;
        for r in &p.online {
            let (a, b) = truth.span_of(r);
            let (a, b) = (a.max(from), b.min(to));
            if a >= b {
                continue;
            }
            let len = (b - a).num_milliseconds() as f64 / 1000.0;
            best = best.max(len);
            total += len;
            first.get_or_insert(a);
            last = Some(b);
        }
        in_window.push(first.zip(last).map(|(f, l)| (best, f, l, total)));
    }

    let observed: Vec<_> = store
        .peers()
        .filter(|r| r.last_seen >= from && r.first_seen < to)
        .collect();
    let observed_ips: HashSet<Ipv4Addr> = observed.iter().map(|r| r.ip).collect();

    let mut active = 0u64;
    let mut hit = 0u64;
    let mut truth_regions: BTreeMap<RegionClass, u64> = BTreeMap::new();
    let mut online_total = Vec::new();
    for (p, w) in truth.peers.iter().zip(&in_window) {
        let Some((best, _, _, total)) = w else { continue };
        *truth_regions.entry(p.region).or_default() += 1;
        online_total.push(*total);
        if *best >= min_span {
            active += 1;
            if observed_ips.contains(&p.ip) {
                hit += 1;
            }
        }
    }

    let mut precise = 0u64;
    let mut observed_regions: BTreeMap<RegionClass, u64> = BTreeMap::new();
    let mut span_errors = Vec::new();
    let mut truth_spans = Vec::new();
    let mut observed_spans = Vec::new();
    for r in &observed {
        *observed_regions.entry(r.geo.region()).or_default() += 1;
        let obs_span = (r.last_seen - r.first_seen).num_milliseconds() as f64 / 1000.0;
        observed_spans.push(obs_span);
        if let Some((_, first, last, _)) = by_ip.get(&r.ip).and_then(|&i| in_window[i]) {
            precise += 1;
            let true_span = (last - first).num_milliseconds() as f64 / 1000.0;
            truth_spans.push(true_span);
            span_errors.push((obs_span - true_span).abs());
        }
    }

    let mut regions: Vec<RegionError> = truth_regions
        .keys()
        .chain(observed_regions.keys())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .map(|&region| {
            let t = truth_regions.get(&region).copied().unwrap_or(0);
            let o = observed_regions.get(&region).copied().unwrap_or(0);
            RegionError {
                region,
                truth: t,
                observed: o,
                relative_error: (t > 0).then(|| (o as f64 - t as f64) / t as f64),
            }
        })
        .collect();
    regions.sort_by_key(|r| r.region);

    Ok(Score {
        active,
        observed: observed.len() as u64,
        recall: if active == 0 { 0.0 } else { hit as f64 / active as f64 },
        precision: if observed.is_empty() {
            1.0
        } else {
            precise as f64 / observed.len() as f64
        },
        regions,
        mean_span_error_secs: (!span_errors.is_empty())
            .then(|| span_errors.iter().sum::<f64>() / span_errors.len() as f64),
        median_truth_span_secs: median(truth_spans),
        median_observed_span_secs: median(observed_spans),
        truth_mean_online_secs: (!online_total.is_empty())
            .then(|| online_total.iter().sum::<f64>() / online_total.len() as f64),
    })
}
