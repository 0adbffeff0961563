use std::collections::BTreeMap;
use std::io::Write;
use std::net::{Ipv4Addr, SocketAddrV4};
use std::ops::Range;

use chrono::{DateTime, TimeDelta, Utc};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha1::{Digest, Sha1};

use super::spec::PopulationSpec;
use super::SimError;
use crate::bencode::{InfoHash, TorrentMeta};
use crate::crawler::{format_time, CrawlJob};
use crate::geodb::{is_bogon, GeoTable, RegionClass};
use crate::peerstore::{TorrentEntry, TorrentRegistry};

#[derive(Debug, Clone, PartialEq)]
pub struct SimPeer {
    pub ip: Ipv4Addr,
    pub port: u16,
    pub region: RegionClass,
    pub seeder: bool,
    /// Swarm the peer was generated for.
    pub home: usize,
    /// Sorted swarm indexes, home included.
    pub swarms: Vec<usize>,
    /// Online slot ranges, sorted and disjoint. A peer online is online in
    /// all of its swarms.
    pub online: Vec<Range<u32>>,
}

impl SimPeer {
    pub fn addr(&self) -> SocketAddrV4 {
        SocketAddrV4::new(self.ip, self.port)
    }

    pub fn in_swarm(&self, swarm: usize) -> bool {
        self.swarms.binary_search(&swarm).is_ok()
    }
}

/// A generated population: every peer, where it lives, which swarms it
/// joins and when it is online.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub spec: PopulationSpec,
    pub peers: Vec<SimPeer>,
    pub infohashes: Vec<InfoHash>,
    slots: u32,
    /// `online_index[slot][swarm]` lists indexes into `peers`.
    online_index: Vec<Vec<Vec<u32>>>,
}

/// Infohash of simulated swarm `i`.
pub fn sim_infohash(seed: u64, i: usize) -> InfoHash {
    let digest = Sha1::digest(format!("swarmscope-sim/{seed}/{i}").as_bytes());
    InfoHash(digest.into())
}

/// Splits `total` by `shares` with the largest-remainder method.
fn apportion(total: u64, shares: &[f64]) -> Vec<u64> {
    let sum: f64 = shares.iter().sum();
    if sum <= 0.0 {
        return vec![0; shares.len()];
    }
    let exact: Vec<f64> = shares.iter().map(|s| total as f64 * s / sum).collect();
    let mut out: Vec<u64> = exact.iter().map(|x| x.floor() as u64).collect();
    let mut left = total - out.iter().sum::<u64>();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for i in order {
        if left == 0 {
            break;
        }
        if shares[i] > 0.0 {
            out[i] += 1;
            left -= 1;
        }
    }
    out
}

/// Home-swarm sizes `h` such that swarm `j` ends up with
/// `h_j + sum_{i != j} h_i * M_ij` distinct peers.
fn home_sizes(spec: &PopulationSpec) -> Result<Vec<u64>, SimError> {
    let n = spec.swarms.len();
    let target = DVector::from_iterator(n, spec.swarms.iter().map(|s| f64::from(s.size)));
    if spec.membership.is_empty() {
        return Ok(target.iter().map(|&x| x as u64).collect());
    }
    let a = DMatrix::from_fn(n, n, |j, i| {
        if i == j {
            1.0
        } else {
            spec.membership[i][j]
        }
    });
    let h = a
        .lu()
        .solve(&target)
        .ok_or_else(|| SimError::InfeasibleSpec("membership matrix is singular".into()))?;
    h.iter()
        .enumerate()
        .map(|(i, &x)| {
            if x < -0.5 || !x.is_finite() {
                Err(SimError::InfeasibleSpec(format!(
                    "swarm {} would need {x:.1} peers of its own; overlap exceeds its size",
                    i + 1
                )))
            } else {
                Ok(x.round().max(0.0) as u64)
            }
        })
        .collect()
}

/// Addresses for `count` peers of `region`: round-robin over the region's
/// ranges, skipping each range's first address.
fn region_ips(geo: &GeoTable, region: RegionClass, count: u64) -> Result<Vec<Ipv4Addr>, SimError> {
    if count == 0 {
        return Ok(Vec::new());
    }
    if region == RegionClass::Unknown {
        return unresolvable_ips(geo, count);
    }
    let ranges: Vec<(u32, u32)> = geo
        .records()
        .iter()
        .filter(|r| r.region() == region)
        .map(|r| (r.range_start, r.range_end))
        .collect();
    if ranges.is_empty() {
        return Err(SimError::InfeasibleSpec(format!("geo table has no {region} ranges")));
    }
    let r = ranges.len() as u64;
    let mut out = Vec::with_capacity(count as usize);
    for k in 0..count {
        let (start, end) = ranges[(k % r) as usize];
        let ip = u64::from(start) + 1 + k / r;
        if ip > u64::from(end) {
            return Err(SimError::InfeasibleSpec(format!("too many {region} peers for the geo table")));
        }
        out.push(Ipv4Addr::from(ip as u32));
    }
    Ok(out)
}

/// Non-bogon addresses in the gaps between geo ranges.
fn unresolvable_ips(geo: &GeoTable, count: u64) -> Result<Vec<Ipv4Addr>, SimError> {
    let mut out = Vec::with_capacity(count as usize);
    let mut covered = geo.records().iter().map(|r| (r.range_start, r.range_end)).peekable();
    let mut ip: u64 = u64::from(u32::from(Ipv4Addr::new(1, 0, 0, 1)));
    while (out.len() as u64) < count && ip <= u64::from(u32::MAX) {
        while covered.peek().is_some_and(|&(_, end)| u64::from(end) < ip) {
            covered.next();
        }
        if let Some(&(start, end)) = covered.peek() {
            if u64::from(start) <= ip {
                ip = u64::from(end) + 1;
                continue;
            }
        }
        let addr = Ipv4Addr::from(ip as u32);
        if !is_bogon(addr) {
            out.push(addr);
        }
        ip += 1;
    }
    if (out.len() as u64) < count {
        return Err(SimError::InfeasibleSpec("no room for unresolvable peers".into()));
    }
    Ok(out)
}

/// Generates the ground truth using the bundled fixture geo table.
pub fn generate(spec: &PopulationSpec) -> Result<GroundTruth, SimError> {
    generate_with(spec, &GeoTable::bundled_fixture())
}

pub fn generate_with(spec: &PopulationSpec, geo: &GeoTable) -> Result<GroundTruth, SimError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.swarms.len();
    let homes = home_sizes(spec)?;
    let total: u64 = homes.iter().sum();

    // regions, shuffled over the population
    let shares = spec.regions.shares();
    let counts = apportion(total, &shares.map(|(_, s)| s));
    let mut regions: Vec<RegionClass> = Vec::with_capacity(total as usize);
    let mut pools: BTreeMap<RegionClass, std::vec::IntoIter<Ipv4Addr>> = BTreeMap::new();
    for ((region, _), &c) in shares.iter().zip(&counts) {
        regions.extend(std::iter::repeat_n(*region, c as usize));
        pools.insert(*region, region_ips(geo, *region, c)?.into_iter());
    }
    regions.shuffle(&mut rng);

    let mut peers = Vec::with_capacity(total as usize);
    let mut by_home: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (home, &h) in homes.iter().enumerate() {
        for _ in 0..h {
            let region = regions[peers.len()];
            let ip = pools.get_mut(&region).and_then(Iterator::next).expect("pool sized by apportion");
            by_home[home].push(peers.len());
            peers.push(SimPeer {
                ip,
                port: rng.gen_range(1024..=65535),
                region,
                seeder: rng.gen_bool(spec.seeder_share),
                home,
                swarms: vec![home],
                online: Vec::new(),
            });
        }
    }

    // cross-swarm membership: an exact share of each home swarm
    if !spec.membership.is_empty() {
        for i in 0..n {
            for j in 0..n {
                let p = spec.membership[i][j];
                if i == j || p == 0.0 {
                    continue;
                }
                let k = (by_home[i].len() as f64 * p).round() as usize;
                for &idx in by_home[i].choose_multiple(&mut rng, k) {
                    peers[idx].swarms.push(j);
                }
            }
        }
        for p in &mut peers {
            p.swarms.sort_unstable();
        }
    }

    // on/off slots
    let slots = spec.duration_secs.div_ceil(spec.session_secs) as u32;
    let slot_mid = |s: u32| {
        spec.start + TimeDelta::seconds((u64::from(s) * spec.session_secs + spec.session_secs / 2) as i64)
    };
    for p in &mut peers {
        if spec.churn == 0.0 {
            p.online.push(0..slots);
            continue;
        }
        let mut on = false;
        for s in 0..slots {
            if s == 0 || rng.gen_bool(spec.churn) {
                on = rng.gen_bool(spec.diurnal.probability_at(slot_mid(s), p.region).clamp(0.0, 1.0));
            }
            if on {
                match p.online.last_mut() {
                    Some(r) if r.end == s => r.end = s + 1,
                    _ => p.online.push(s..s + 1),
                }
            }
        }
    }

    let mut online_index = vec![vec![Vec::new(); n]; slots as usize];
    for (idx, p) in peers.iter().enumerate() {
        for r in &p.online {
            for s in r.clone() {
                for &sw in &p.swarms {
                    online_index[s as usize][sw].push(idx as u32);
                }
            }
        }
    }

    Ok(GroundTruth {
        infohashes: (0..n).map(|i| sim_infohash(spec.seed, i)).collect(),
        spec: spec.clone(),
        peers,
        slots,
        online_index,
    })
}

#[derive(Debug, Serialize)]
struct TruthCsvRow<'a> {
    ip: Ipv4Addr,
    port: u16,
    region: &'a str,
    seeder: bool,
    torrents: String,
    online_from: String,
    online_to: String,
}

impl GroundTruth {
    pub fn start(&self) -> DateTime<Utc> {
        self.spec.start
    }

    pub fn end(&self) -> DateTime<Utc> {
        self.spec.start + TimeDelta::seconds(self.spec.duration_secs as i64)
    }

    pub fn slot_count(&self) -> u32 {
        self.slots
    }

    pub fn slot_secs(&self) -> u64 {
        self.spec.session_secs
    }

    pub fn slot_of(&self, t: DateTime<Utc>) -> Option<u32> {
        if t < self.start() || t >= self.end() {
            return None;
        }
        Some(((t - self.start()).num_seconds() as u64 / self.spec.session_secs) as u32)
    }

    /// Start of `slot`; the end of the run for the slot after the last.
    pub fn slot_start(&self, slot: u32) -> DateTime<Utc> {
        (self.start() + TimeDelta::seconds((u64::from(slot) * self.spec.session_secs) as i64)).min(self.end())
    }

    /// Time range covered by a run of slots, clipped to the run.
    pub fn span_of(&self, slots: &Range<u32>) -> (DateTime<Utc>, DateTime<Utc>) {
        (self.slot_start(slots.start), self.slot_start(slots.end))
    }

    pub fn swarm_count(&self) -> usize {
        self.infohashes.len()
    }

    pub fn swarm_of(&self, infohash: &InfoHash) -> Option<usize> {
        self.infohashes.iter().position(|h| h == infohash)
    }

    /// Peer indexes of `swarm` online at `t`.
    pub fn online(&self, swarm: usize, t: DateTime<Utc>) -> &[u32] {
        match self.slot_of(t) {
            Some(s) if swarm < self.swarm_count() => &self.online_index[s as usize][swarm],
            _ => &[],
        }
    }

    pub fn is_online(&self, peer: usize, t: DateTime<Utc>) -> bool {
        self.slot_of(t)
            .is_some_and(|s| self.peers[peer].online.iter().any(|r| r.contains(&s)))
    }

    /// Distinct peers of each swarm over the whole run, online or not.
    pub fn swarm_sizes(&self) -> Vec<u64> {
        let mut sizes = vec![0; self.swarm_count()];
        for p in &self.peers {
            for &s in &p.swarms {
                sizes[s] += 1;
            }
        }
        sizes
    }

    /// Expected fraction of a region's peers online during each slot. With
    /// churn `c` a slot keeps the previous state with probability `1 - c`.
    pub fn expected_online_fraction(&self, region: RegionClass) -> Vec<f64> {
        expected_curve(&self.spec, region)
    }

    /// Expected online count of `swarm` per slot, summed over regions.
    pub fn expected_online(&self, swarm: usize) -> Vec<f64> {
        let mut per_region: BTreeMap<RegionClass, f64> = BTreeMap::new();
        for p in self.peers.iter().filter(|p| p.in_swarm(swarm)) {
            *per_region.entry(p.region).or_default() += 1.0;
        }
        let mut out = vec![0.0; self.slots as usize];
        for (region, count) in per_region {
            for (o, f) in out.iter_mut().zip(expected_curve(&self.spec, region)) {
                *o += count * f;
            }
        }
        out
    }

    /// Registry with one entry per swarm, ids starting at 1.
    pub fn registry(&self) -> TorrentRegistry {
        let entries = self
            .infohashes
            .iter()
            .enumerate()
            .map(|(i, h)| TorrentEntry {
                id: i as u32 + 1,
                infohash: *h,
                name: self.swarm_name(i),
                size: 0,
                show: "simulated".into(),
                season: 1,
                episode: i as u32 + 1,
                release_tag: String::new(),
                source: None,
            })
            .collect();
        TorrentRegistry::new(entries).expect("generated registry is valid")
    }

    pub fn swarm_name(&self, i: usize) -> String {
        self.spec.swarms[i].name.clone().unwrap_or_else(|| format!("sim-swarm-{}", i + 1))
    }

    /// Crawl jobs for every swarm against the given tracker URLs.
    pub fn jobs(&self, trackers: &[String], cycle: std::time::Duration) -> Vec<CrawlJob> {
        self.infohashes
            .iter()
            .enumerate()
            .map(|(i, h)| {
                let meta = TorrentMeta {
                    infohash: *h,
                    name: self.swarm_name(i).into_bytes(),
                    total_size: 0,
                    piece_length: 0,
                    piece_hashes: Vec::new(),
                    announce_urls: trackers.to_vec(),
                };
                let mut job = CrawlJob::new(meta, i as u32 + 1);
                job.trackers = trackers.to_vec();
                job.cycle_interval = cycle;
                job
            })
            .collect()
    }

    /// One row per online interval; peers never online get one row with
    /// empty times. Torrent ids start at 1.
    pub fn write_csv(&self, w: impl Write) -> Result<(), SimError> {
        let mut out = csv::Writer::from_writer(w);
        for p in &self.peers {
            let torrents = p.swarms.iter().map(|s| (s + 1).to_string()).collect::<Vec<_>>().join("+");
            let spans: Vec<(String, String)> = if p.online.is_empty() {
                vec![(String::new(), String::new())]
            } else {
                p.online
                    .iter()
                    .map(|r| {
                        let (from, to) = self.span_of(r);
                        (format_time(from), format_time(to))
                    })
                    .collect()
            };
            for (from, to) in spans {
                out.serialize(TruthCsvRow {
                    ip: p.ip,
                    port: p.port,
                    region: p.region.as_str(),
                    seeder: p.seeder,
                    torrents: torrents.clone(),
                    online_from: from,
                    online_to: to,
                })?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Closed-form expected online fraction per slot for peers of `region`.
pub fn expected_curve(spec: &PopulationSpec, region: RegionClass) -> Vec<f64> {
    let slots = spec.duration_secs.div_ceil(spec.session_secs) as usize;
    if spec.churn == 0.0 {
        return vec![1.0; slots];
    }
    let mut out = Vec::with_capacity(slots);
    let mut prev = 0.0;
    for s in 0..slots {
        let mid = spec.start + TimeDelta::seconds((s as u64 * spec.session_secs + spec.session_secs / 2) as i64);
        let p = spec.diurnal.probability_at(mid, region).clamp(0.0, 1.0);
        prev = if s == 0 { p } else { spec.churn * p + (1.0 - spec.churn) * prev };
        out.push(prev);
    }
    out
}
