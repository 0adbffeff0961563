//! Tracker wire protocols: HTTP(S) announce and scrape, UDP announce.
//!
//! The crawler only ever talks to trackers through the [`Announcer`] trait,
//! so the simulator can stand in for the network while still exercising the
//! same byte-level encoders and decoders.

mod compact;
mod http;
mod udp;

use std::collections::BTreeMap;
use std::fmt;
use std::net::{SocketAddrV4, SocketAddrV6};
use std::time::Duration;

use rand::Rng;
use thiserror::Error;

use crate::bencode::InfoHash;

pub use compact::{parse_compact_v4, parse_compact_v6, write_compact_v4};
pub use http::{
    announce_url, http_announce, parse_announce_body, parse_scrape_body, scrape, scrape_url,
    HttpTracker, MAX_SCRAPE_HASHES,
};
pub use udp::{
    parse_announce_reply, parse_connect_reply, udp_announce, AnnouncePacket, ConnectPacket,
    UdpTracker, ACTION_ANNOUNCE, ACTION_CONNECT, ACTION_ERROR, UDP_PROTOCOL_ID,
};

/// Number of peers requested per announce when not configured otherwise.
pub const DEFAULT_NUMWANT: u32 = 200;

/// Fixed peer-id prefix identifying this client (Azureus style).
pub const PEER_ID_PREFIX: &[u8; 8] = b"-SS0100-";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TrackerError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("tracker failure: {0}")]
    TrackerFailure(String),
    #[error("tracker error response: {0}")]
    ErrorResponse(String),
    #[error("malformed tracker response: {0}")]
    MalformedResponse(String),
    #[error("no response after {attempts} attempts")]
    Timeout { attempts: usize },
    #[error("transaction id mismatch: sent {sent:#010x}, got {got:#010x}")]
    TransactionIdMismatch { sent: u32, got: u32 },
    #[error("unsupported tracker scheme `{0}`")]
    UnsupportedScheme(String),
    #[error("invalid request: {0}")]
    InvalidRequest(&'static str),
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct PeerId(pub [u8; 20]);

impl PeerId {
    /// The fixed client prefix followed by 12 random alphanumerics.
    pub fn generate<R: Rng + ?Sized>(rng: &mut R) -> Self {
        const ALPHABET: &[u8] = b"0123456789abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ";
        let mut id = [0u8; 20];
        id[..8].copy_from_slice(PEER_ID_PREFIX);
        for b in &mut id[8..] {
            *b = ALPHABET[rng.gen_range(0..ALPHABET.len())];
        }
        PeerId(id)
    }
}

impl fmt::Debug for PeerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PeerId({})", String::from_utf8_lossy(&self.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AnnounceEvent {
    #[default]
    None,
    Started,
    Stopped,
    Completed,
}

impl AnnounceEvent {
    /// Query-string value; `None` is omitted from the query entirely.
    pub fn as_query_value(self) -> Option<&'static str> {
        match self {
            AnnounceEvent::None => None,
            AnnounceEvent::Started => Some("started"),
            AnnounceEvent::Stopped => Some("stopped"),
            AnnounceEvent::Completed => Some("completed"),
        }
    }

    /// UDP tracker event code.
    pub fn code(self) -> u32 {
        match self {
            AnnounceEvent::None => 0,
            AnnounceEvent::Completed => 1,
            AnnounceEvent::Started => 2,
            AnnounceEvent::Stopped => 3,
        }
    }
}

/// An announce. The compact flag is always sent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnounceRequest {
    pub infohash: InfoHash,
    pub peer_id: PeerId,
    pub port: u16,
    pub uploaded: u64,
    pub downloaded: u64,
    pub left: u64,
    pub event: AnnounceEvent,
    pub numwant: u32,
}

impl AnnounceRequest {
    /// An observer's announce: nothing uploaded, `left > 0` so the tracker
    /// treats us as a leecher and hands out peers.
    pub fn observer(infohash: InfoHash, peer_id: PeerId) -> Self {
        AnnounceRequest {
            infohash,
            peer_id,
            port: 6881,
            uploaded: 0,
            downloaded: 0,
            left: 1,
            event: AnnounceEvent::None,
            numwant: DEFAULT_NUMWANT,
        }
    }

    pub fn validate(&self) -> Result<(), TrackerError> {
        if self.port == 0 {
            return Err(TrackerError::InvalidRequest("port must be nonzero"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AnnounceResponse {
    pub interval: u32,
    pub seeders: u32,
    pub leechers: u32,
    pub peers: Vec<SocketAddrV4>,
    /// IPv6 peers are parsed but kept apart; analytics ignore them.
    pub peers6: Vec<SocketAddrV6>,
}

impl AnnounceResponse {
    /// Drops zero ports and repeated endpoints, keeping first occurrences.
    pub fn normalize(&mut self) {
        let mut seen = std::collections::HashSet::new();
        self.peers.retain(|p| p.port() != 0 && seen.insert(*p));
        let mut seen6 = std::collections::HashSet::new();
        self.peers6.retain(|p| p.port() != 0 && seen6.insert(*p));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ScrapeStats {
    pub seeders: u64,
    pub leechers: u64,
    pub completed: u64,
}

pub type ScrapeResponse = BTreeMap<InfoHash, ScrapeStats>;

/// Anything that can answer an announce for a tracker URL.
pub trait Announcer: Send + Sync {
    fn announce(&self, tracker_url: &str, req: &AnnounceRequest)
        -> Result<AnnounceResponse, TrackerError>;
}

/// Network-backed announcer dispatching on the URL scheme.
#[derive(Debug, Clone)]
pub struct TrackerClient {
    pub http: HttpTracker,
    pub udp: UdpTracker,
}

impl Default for TrackerClient {
    fn default() -> Self {
        TrackerClient {
            http: HttpTracker::new(Duration::from_secs(30)),
            udp: UdpTracker::default(),
        }
    }
}

impl Announcer for TrackerClient {
    fn announce(
        &self,
        tracker_url: &str,
        req: &AnnounceRequest,
    ) -> Result<AnnounceResponse, TrackerError> {
        let scheme = tracker_url
            .split_once("://")
            .map(|(s, _)| s.to_ascii_lowercase())
            .unwrap_or_default();
        match scheme.as_str() {
            "http" | "https" => self.http.announce(tracker_url, req),
            "udp" => self.udp.announce_url(tracker_url, req),
            _ => Err(TrackerError::UnsupportedScheme(scheme)),
        }
    }
}
