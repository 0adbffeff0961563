use std::net::Ipv4Addr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use percent_encoding::percent_decode;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::truth::GroundTruth;
use crate::bencode::{encode, BValue, InfoHash};
use crate::clock::Clock;
use crate::tracker::{
    announce_url, parse_announce_body, parse_announce_reply, parse_connect_reply, AnnouncePacket,
    AnnounceRequest, AnnounceResponse, Announcer, ConnectPacket, TrackerError,
};

const UDP_MAGIC: u64 = 0x0417_2710_1980;

/// Protocol misbehavior injected for negative tests.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Fault {
    /// HTTP `failure reason`, UDP error action.
    FailureReason(String),
    /// UDP replies carry a different transaction id. HTTP is unaffected.
    WrongTransactionId,
    /// No reply at all.
    Drop,
    /// A body or datagram that does not parse.
    Malformed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrackerConfig {
    /// Announce interval advertised to clients, in seconds.
    pub interval: u32,
    /// Upper bound on peers per reply regardless of `numwant`.
    pub sample_cap: Option<u32>,
    pub fault: Option<Fault>,
    /// Only the first `fault_limit` requests are faulted.
    pub fault_limit: Option<u64>,
    pub seed: u64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            interval: 1800,
            sample_cap: None,
            fault: None,
            fault_limit: None,
            seed: 0,
        }
    }
}

/// Peers and counters the tracker hands out for one announce.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Reply {
    pub interval: u32,
    pub seeders: u32,
    pub leechers: u32,
    pub peers: Vec<(Ipv4Addr, u16)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SwarmCounts {
    pub seeders: u32,
    pub leechers: u32,
}

/// Answers announces from the ground truth at the clock's current time.
/// Shared by the in-process announcer and the network servers.
pub struct TrackerCore {
    truth: Arc<GroundTruth>,
    clock: Arc<dyn Clock>,
    config: TrackerConfig,
    rng: Mutex<ChaCha8Rng>,
    connection_id: u64,
    requests: AtomicU64,
}

impl TrackerCore {
    pub fn new(truth: Arc<GroundTruth>, clock: Arc<dyn Clock>, config: TrackerConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(truth.spec.seed ^ config.seed ^ 0x7472_6163_6b65_72);
        let connection_id = rng.gen();
        TrackerCore {
            truth,
            clock,
            config,
            rng: Mutex::new(rng),
            connection_id,
            requests: AtomicU64::new(0),
        }
    }

    pub fn truth(&self) -> &GroundTruth {
        &self.truth
    }

    pub fn requests(&self) -> u64 {
        self.requests.load(Ordering::Relaxed)
    }

    /// The fault to apply to the next request, if any.
    fn next_fault(&self) -> Option<&Fault> {
        let n = self.requests.fetch_add(1, Ordering::Relaxed);
        let fault = self.config.fault.as_ref()?;
        match self.config.fault_limit {
            Some(limit) if n >= limit => None,
            _ => Some(fault),
        }
    }

    pub fn counts(&self, infohash: &InfoHash) -> Option<SwarmCounts> {
        let swarm = self.truth.swarm_of(infohash)?;
        let online = self.truth.online(swarm, self.clock.now());
        let seeders = online.iter().filter(|&&i| self.truth.peers[i as usize].seeder).count() as u32;
        Some(SwarmCounts {
            seeders,
            leechers: online.len() as u32 - seeders,
        })
    }

    /// A uniform sample of `min(numwant, cap, online)` online peers.
    pub fn reply(&self, infohash: &InfoHash, numwant: u32) -> Result<Reply, String> {
        let swarm = self
            .truth
            .swarm_of(infohash)
            .ok_or_else(|| "unregistered torrent".to_string())?;
        let online = self.truth.online(swarm, self.clock.now());
        let cap = self.config.sample_cap.unwrap_or(u32::MAX);
        let k = (numwant.min(cap) as usize).min(online.len());
        let picked = {
            let mut rng = self.rng.lock().expect("rng lock");
            sample(&mut *rng, online.len(), k)
        };
        let peers = picked
            .iter()
            .map(|i| {
                let p = &self.truth.peers[online[i] as usize];
                (p.ip, p.port)
            })
            .collect();
        let counts = self.counts(infohash).unwrap_or_default();
        Ok(Reply {
            interval: self.config.interval,
            seeders: counts.seeders,
            leechers: counts.leechers,
            peers,
        })
    }

    /// Handles the query string of an HTTP announce. `None` means drop the
    /// connection without a reply.
    pub fn http_announce(&self, query: &str) -> Option<Vec<u8>> {
        match self.next_fault() {
            Some(Fault::FailureReason(msg)) => return Some(failure_body(msg)),
            Some(Fault::Drop) => return None,
            Some(Fault::Malformed) => return Some(b"d8:intervali1800e5:peers".to_vec()),
            Some(Fault::WrongTransactionId) | None => {}
        }
        let params = parse_query(query);
        let Some(infohash) = params
            .iter()
            .find(|(k, _)| k == b"info_hash")
            .and_then(|(_, v)| <[u8; 20]>::try_from(v.as_slice()).ok())
        else {
            return Some(failure_body("missing or invalid info_hash"));
        };
        let numwant = params
            .iter()
            .find(|(k, _)| k == b"numwant")
            .and_then(|(_, v)| std::str::from_utf8(v).ok()?.parse().ok())
            .unwrap_or(50);
        Some(match self.reply(&InfoHash(infohash), numwant) {
            Ok(r) => announce_body(&r),
            Err(msg) => failure_body(&msg),
        })
    }

    /// Handles the query string of an HTTP scrape.
    pub fn http_scrape(&self, query: &str) -> Vec<u8> {
        let params = parse_query(query);
        let mut hashes: Vec<[u8; 20]> = params
            .iter()
            .filter(|(k, _)| k == b"info_hash")
            .filter_map(|(_, v)| <[u8; 20]>::try_from(v.as_slice()).ok())
            .collect();
        if hashes.is_empty() {
            hashes = self.truth.infohashes.iter().map(|h| h.0).collect();
        }
        hashes.sort_unstable();
        hashes.dedup();
        let files = hashes
            .into_iter()
            .filter_map(|h| {
                let c = self.counts(&InfoHash(h))?;
                let stats = dict([
                    ("complete", BValue::Int(i64::from(c.seeders))),
                    ("downloaded", BValue::Int(0)),
                    ("incomplete", BValue::Int(i64::from(c.leechers))),
                ]);
                Some((h.to_vec(), stats))
            })
            .collect();
        encode(&dict([("files", BValue::Dict(files))]))
    }

    /// Handles one UDP datagram; `None` means no reply.
    pub fn udp_packet(&self, packet: &[u8]) -> Option<Vec<u8>> {
        if packet.len() < 16 {
            return None;
        }
        let tx = be_u32(packet, 12);
        let action = be_u32(packet, 8);
        let fault = self.next_fault();
        let reply_tx = if fault == Some(&Fault::WrongTransactionId) {
            tx.wrapping_add(1)
        } else {
            tx
        };
        match fault {
            Some(Fault::Drop) => return None,
            Some(Fault::FailureReason(msg)) => return Some(udp_error(reply_tx, msg)),
            Some(Fault::Malformed) => return Some(vec![0, 0, 0]),
            _ => {}
        }
        match action {
            0 => {
                if be_u64(packet, 0) != UDP_MAGIC {
                    return None;
                }
                let mut out = Vec::with_capacity(16);
                out.extend_from_slice(&0u32.to_be_bytes());
                out.extend_from_slice(&reply_tx.to_be_bytes());
                out.extend_from_slice(&self.connection_id.to_be_bytes());
                Some(out)
            }
            1 => {
                if packet.len() < 98 {
                    return Some(udp_error(reply_tx, "short announce"));
                }
                if be_u64(packet, 0) != self.connection_id {
                    return Some(udp_error(reply_tx, "unknown connection id"));
                }
                let infohash = InfoHash(packet[16..36].try_into().expect("20 bytes"));
                let numwant = i32::from_be_bytes(packet[92..96].try_into().expect("4 bytes"));
                let numwant = if numwant < 0 { 50 } else { numwant as u32 };
                match self.reply(&infohash, numwant) {
                    Ok(r) => {
                        let mut out = Vec::with_capacity(20 + 6 * r.peers.len());
                        out.extend_from_slice(&1u32.to_be_bytes());
                        out.extend_from_slice(&reply_tx.to_be_bytes());
                        out.extend_from_slice(&r.interval.to_be_bytes());
                        out.extend_from_slice(&r.leechers.to_be_bytes());
                        out.extend_from_slice(&r.seeders.to_be_bytes());
                        for (ip, port) in r.peers {
                            out.extend_from_slice(&ip.octets());
                            out.extend_from_slice(&port.to_be_bytes());
                        }
                        Some(out)
                    }
                    Err(msg) => Some(udp_error(reply_tx, &msg)),
                }
            }
            _ => Some(udp_error(reply_tx, "unsupported action")),
        }
    }
}

fn be_u32(b: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(b[at..at + 4].try_into().expect("4 bytes"))
}

fn be_u64(b: &[u8], at: usize) -> u64 {
    u64::from_be_bytes(b[at..at + 8].try_into().expect("8 bytes"))
}

fn udp_error(tx: u32, msg: &str) -> Vec<u8> {
    let mut out = 3u32.to_be_bytes().to_vec();
    out.extend_from_slice(&tx.to_be_bytes());
    out.extend_from_slice(msg.as_bytes());
    out
}

fn dict(entries: impl IntoIterator<Item = (&'static str, BValue)>) -> BValue {
    BValue::Dict(entries.into_iter().map(|(k, v)| (k.as_bytes().to_vec(), v)).collect())
}

fn failure_body(msg: &str) -> Vec<u8> {
    encode(&dict([("failure reason", BValue::Bytes(msg.as_bytes().to_vec()))]))
}

fn announce_body(r: &Reply) -> Vec<u8> {
    let mut compact = Vec::with_capacity(6 * r.peers.len());
    for (ip, port) in &r.peers {
        compact.extend_from_slice(&ip.octets());
        compact.extend_from_slice(&port.to_be_bytes());
    }
    encode(&dict([
        ("complete", BValue::Int(i64::from(r.seeders))),
        ("incomplete", BValue::Int(i64::from(r.leechers))),
        ("interval", BValue::Int(i64::from(r.interval))),
        ("peers", BValue::Bytes(compact)),
    ]))
}

fn query_decode(s: &[u8]) -> Vec<u8> {
    let spaced: Vec<u8> = s.iter().map(|&b| if b == b'+' { b' ' } else { b }).collect();
    percent_decode(&spaced).collect()
}

/// Raw key/value pairs of a query string, with binary values intact.
fn parse_query(q: &str) -> Vec<(Vec<u8>, Vec<u8>)> {
    q.as_bytes()
        .split(|&b| b == b'&')
        .filter(|p| !p.is_empty())
        .map(|pair| match pair.iter().position(|&b| b == b'=') {
            Some(eq) => (query_decode(&pair[..eq]), query_decode(&pair[eq + 1..])),
            None => (query_decode(pair), Vec::new()),
        })
        .collect()
}

/// In-process tracker: requests still go through the client's URL and
/// packet encoders and its response parsers, but never touch a socket.
/// `http://` URLs use the HTTP codec, `udp://` URLs the UDP one.
#[derive(Clone)]
pub struct MockTracker {
    pub core: Arc<TrackerCore>,
}

impl MockTracker {
    pub fn new(core: Arc<TrackerCore>) -> Self {
        MockTracker { core }
    }

    fn tx(&self) -> u32 {
        self.core.rng.lock().expect("rng lock").gen()
    }
}

impl Announcer for MockTracker {
    fn announce(&self, tracker_url: &str, req: &AnnounceRequest) -> Result<AnnounceResponse, TrackerError> {
        req.validate()?;
        if tracker_url.starts_with("udp://") {
            let tx = self.tx();
            let reply = self
                .core
                .udp_packet(&ConnectPacket { transaction_id: tx }.to_bytes())
                .ok_or(TrackerError::Timeout { attempts: 1 })?;
            let connection_id = parse_connect_reply(&reply, tx)?;
            let tx = self.tx();
            let packet = AnnouncePacket {
                connection_id,
                transaction_id: tx,
                key: 0,
                request: req,
            };
            let reply = self
                .core
                .udp_packet(&packet.to_bytes())
                .ok_or(TrackerError::Timeout { attempts: 1 })?;
            parse_announce_reply(&reply, tx)
        } else if tracker_url.starts_with("http://") || tracker_url.starts_with("https://") {
            let url = announce_url(tracker_url, req);
            let query = url.split_once('?').map_or("", |(_, q)| q);
            let body = self
                .core
                .http_announce(query)
                .ok_or_else(|| TrackerError::Transport("connection closed".into()))?;
            parse_announce_body(&body)
        } else {
            Err(TrackerError::UnsupportedScheme(
                tracker_url.split("://").next().unwrap_or_default().to_string(),
            ))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::VirtualClock;
    use crate::simharness::spec::{PopulationSpec, SwarmSpec};
    use crate::simharness::truth::generate;
    use crate::tracker::{parse_scrape_body, PeerId};
    use chrono::TimeDelta;
    use std::collections::HashSet;

    const URLS: [&str; 2] = ["http://mock/announce", "udp://mock:80"];

    fn setup(size: u32, churn: f64, config: TrackerConfig) -> (MockTracker, VirtualClock, Arc<GroundTruth>) {
        let spec = PopulationSpec {
            churn,
            swarms: vec![SwarmSpec { size, name: None }],
            ..Default::default()
        };
        let truth = Arc::new(generate(&spec).unwrap());
        let clock = VirtualClock::new(truth.start());
        let core = TrackerCore::new(truth.clone(), Arc::new(clock.clone()), config);
        (MockTracker::new(Arc::new(core)), clock, truth)
    }

    fn req(truth: &GroundTruth, numwant: u32) -> AnnounceRequest {
        let mut r = AnnounceRequest::observer(truth.infohashes[0], PeerId([b'o'; 20]));
        r.numwant = numwant;
        r
    }

    #[test]
    fn returns_every_online_peer_when_numwant_covers_them() {
        let (mock, _, truth) = setup(40, 0.0, TrackerConfig::default());
        let all: HashSet<_> = truth.peers.iter().map(|p| p.addr()).collect();
        for url in URLS {
            let resp = mock.announce(url, &req(&truth, 200)).unwrap();
            assert_eq!(resp.peers.len(), 40, "{url}");
            assert_eq!(resp.peers.iter().copied().collect::<HashSet<_>>(), all);
            assert_eq!(resp.seeders + resp.leechers, 40);
            let seeders = truth.peers.iter().filter(|p| p.seeder).count() as u32;
            assert_eq!(resp.seeders, seeders);
        }
    }

    #[test]
    fn sample_respects_numwant_and_cap() {
        let (mock, _, truth) = setup(100, 0.0, TrackerConfig {
            sample_cap: Some(25),
            ..Default::default()
        });
        for url in URLS {
            assert_eq!(mock.announce(url, &req(&truth, 10)).unwrap().peers.len(), 10);
            assert_eq!(mock.announce(url, &req(&truth, 200)).unwrap().peers.len(), 25);
        }
    }

    #[test]
    fn never_returns_offline_peers() {
        let (mock, clock, truth) = setup(300, 0.5, TrackerConfig::default());
        for step in 0..24 {
            clock.set(truth.start() + TimeDelta::minutes(37 * step));
            let now = crate::clock::Clock::now(&clock);
            let online: HashSet<_> = truth.online(0, now).iter().map(|&i| truth.peers[i as usize].addr()).collect();
            let resp = mock.announce(URLS[step as usize % 2], &req(&truth, 1000)).unwrap();
            let got: HashSet<_> = resp.peers.iter().copied().collect();
            assert_eq!(got, online);
        }
    }

    #[test]
    fn nobody_online_gives_empty_reply() {
        let (mock, clock, truth) = setup(50, 0.0, TrackerConfig::default());
        clock.set(truth.end());
        for url in URLS {
            let resp = mock.announce(url, &req(&truth, 200)).unwrap();
            assert!(resp.peers.is_empty());
            assert_eq!((resp.seeders, resp.leechers), (0, 0));
        }
    }

    #[test]
    fn faults_surface_as_client_errors() {
        let fault = |f: Fault| TrackerConfig {
            fault: Some(f),
            ..Default::default()
        };
        let (mock, _, truth) = setup(10, 0.0, fault(Fault::FailureReason("go away".into())));
        assert_eq!(
            mock.announce(URLS[0], &req(&truth, 50)),
            Err(TrackerError::TrackerFailure("go away".into()))
        );
        assert_eq!(
            mock.announce(URLS[1], &req(&truth, 50)),
            Err(TrackerError::ErrorResponse("go away".into()))
        );

        let (mock, _, truth) = setup(10, 0.0, fault(Fault::WrongTransactionId));
        assert!(matches!(
            mock.announce(URLS[1], &req(&truth, 50)),
            Err(TrackerError::TransactionIdMismatch { .. })
        ));

        let (mock, _, truth) = setup(10, 0.0, fault(Fault::Malformed));
        for url in URLS {
            assert!(matches!(mock.announce(url, &req(&truth, 50)), Err(TrackerError::MalformedResponse(_))));
        }

        let (mock, _, truth) = setup(10, 0.0, TrackerConfig {
            fault: Some(Fault::Drop),
            fault_limit: Some(1),
            ..Default::default()
        });
        assert!(mock.announce(URLS[0], &req(&truth, 50)).is_err());
        assert_eq!(mock.announce(URLS[0], &req(&truth, 50)).unwrap().peers.len(), 10);
    }

    #[test]
    fn unknown_infohash_is_a_failure() {
        let (mock, _, truth) = setup(10, 0.0, TrackerConfig::default());
        let mut r = req(&truth, 50);
        r.infohash = InfoHash([9; 20]);
        assert!(matches!(mock.announce(URLS[0], &r), Err(TrackerError::TrackerFailure(_))));
    }

    #[test]
    fn scrape_reports_online_counts() {
        let (mock, _, truth) = setup(30, 0.0, TrackerConfig::default());
        let h = truth.infohashes[0];
        let body = mock.core.http_scrape(&format!(
            "info_hash={}",
            h.0.iter().map(|b| format!("%{b:02X}")).collect::<String>()
        ));
        let parsed = parse_scrape_body(&body).unwrap();
        let stats = parsed[&h];
        assert_eq!(stats.seeders + stats.leechers, 30);
    }

    #[test]
    fn query_decoding_keeps_binary() {
        let q = parse_query("info_hash=%00%FFa%2b&x=1+2&flag");
        assert_eq!(q[0], (b"info_hash".to_vec(), vec![0, 0xff, b'a', b'+']));
        assert_eq!(q[1].1, b"1 2");
        assert_eq!(q[2], (b"flag".to_vec(), vec![]));
    }
}
