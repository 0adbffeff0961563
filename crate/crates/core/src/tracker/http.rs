use std::io::Read;
use std::net::{IpAddr, SocketAddrV4, SocketAddrV6};
use std::time::Duration;

use percent_encoding::{percent_encode, AsciiSet, NON_ALPHANUMERIC};

use super::compact::{parse_compact_v4, parse_compact_v6};
use super::{AnnounceRequest, AnnounceResponse, ScrapeResponse, ScrapeStats, TrackerError};
use crate::bencode::{decode_with, BValue, DecodeMode, InfoHash};

/// Upper bound on infohashes per scrape request.
pub const MAX_SCRAPE_HASHES: usize = 74;

const MAX_BODY: u64 = 4 << 20;

/// Everything except RFC 3986 unreserved characters gets escaped.
const QUERY_BYTES: &AsciiSet = &NON_ALPHANUMERIC
    .remove(b'-')
    .remove(b'.')
    .remove(b'_')
    .remove(b'~');

fn escape(bytes: &[u8]) -> String {
    percent_encode(bytes, QUERY_BYTES).to_string()
}

fn join_query(base: &str, query: &str) -> String {
    let sep = if base.contains('?') { '&' } else { '?' };
    format!("{base}{sep}{query}")
}

/// Builds the full announce URL for `req` against `base`.
pub fn announce_url(base: &str, req: &AnnounceRequest) -> String {
    let mut query = format!(
        "info_hash={}&peer_id={}&port={}&uploaded={}&downloaded={}&left={}&compact=1&numwant={}",
        escape(req.infohash.as_bytes()),
        escape(&req.peer_id.0),
        req.port,
        req.uploaded,
        req.downloaded,
        req.left,
        req.numwant,
    );
    if let Some(event) = req.event.as_query_value() {
        query.push_str("&event=");
        query.push_str(event);
    }
    join_query(base, &query)
}

/// Derives the scrape URL by the usual convention: the last path segment
/// must start with `announce`, which is replaced by `scrape`.
pub fn scrape_url(announce: &str) -> Option<String> {
    let (path, query) = match announce.split_once('?') {
        Some((p, q)) => (p, Some(q)),
        None => (announce, None),
    };
    let slash = path.rfind('/')?;
    let last = &path[slash + 1..];
    if last.starts_with("scrape") {
        return Some(announce.to_string());
    }
    let rest = last.strip_prefix("announce")?;
    let mut url = format!("{}scrape{rest}", &path[..=slash]);
    if let Some(q) = query {
        url.push('?');
        url.push_str(q);
    }
    Some(url)
}

fn int_field(dict: &BValue, key: &str) -> Result<Option<u64>, TrackerError> {
    match dict.get(key) {
        None => Ok(None),
        Some(v) => v
            .as_int()
            .and_then(|n| u64::try_from(n).ok())
            .map(Some)
            .ok_or_else(|| TrackerError::MalformedResponse(format!("`{key}` is not a count"))),
    }
}

fn clamp_u32(n: u64) -> u32 {
    u32::try_from(n).unwrap_or(u32::MAX)
}

fn decode_body(body: &[u8]) -> Result<BValue, TrackerError> {
    let value = decode_with(body, DecodeMode::Lenient)
        .map_err(|e| TrackerError::MalformedResponse(e.to_string()))?;
    if let Some(reason) = value.get("failure reason") {
        let msg = reason
            .as_bytes()
            .map(|b| String::from_utf8_lossy(b).into_owned())
            .unwrap_or_default();
        return Err(TrackerError::TrackerFailure(msg));
    }
    if value.as_dict().is_none() {
        return Err(TrackerError::MalformedResponse(
            "response is not a dictionary".into(),
        ));
    }
    Ok(value)
}

/// Parses a bencoded announce response body.
pub fn parse_announce_body(body: &[u8]) -> Result<AnnounceResponse, TrackerError> {
    let value = decode_body(body)?;
    let mut resp = AnnounceResponse {
        interval: clamp_u32(int_field(&value, "interval")?.unwrap_or(0)),
        seeders: clamp_u32(int_field(&value, "complete")?.unwrap_or(0)),
        leechers: clamp_u32(int_field(&value, "incomplete")?.unwrap_or(0)),
        ..Default::default()
    };
    match value.get("peers") {
        None => {}
        Some(BValue::Bytes(blob)) => resp.peers = parse_compact_v4(blob)?,
        Some(BValue::List(entries)) => {
            for entry in entries {
                let ip = entry
                    .get("ip")
                    .and_then(BValue::as_str)
                    .and_then(|s| s.parse::<IpAddr>().ok());
                let port = entry
                    .get("port")
                    .and_then(BValue::as_int)
                    .and_then(|p| u16::try_from(p).ok());
                match (ip, port) {
                    (Some(IpAddr::V4(ip)), Some(port)) => {
                        resp.peers.push(SocketAddrV4::new(ip, port))
                    }
                    (Some(IpAddr::V6(ip)), Some(port)) => {
                        resp.peers6.push(SocketAddrV6::new(ip, port, 0, 0))
                    }
                    _ => {
                        return Err(TrackerError::MalformedResponse(
                            "peer entry without usable ip/port".into(),
                        ))
                    }
                }
            }
        }
        Some(_) => {
            return Err(TrackerError::MalformedResponse(
                "`peers` has unexpected type".into(),
            ))
        }
    }
    if let Some(blob) = value.get("peers6").and_then(BValue::as_bytes) {
        resp.peers6.extend(parse_compact_v6(blob)?);
    }
    resp.normalize();
    Ok(resp)
}

/// Parses a bencoded scrape response; hashes the tracker did not report are
/// absent from the result.
pub fn parse_scrape_body(body: &[u8]) -> Result<ScrapeResponse, TrackerError> {
    let value = decode_body(body)?;
    let files = value
        .get("files")
        .and_then(BValue::as_dict)
        .ok_or_else(|| TrackerError::MalformedResponse("missing `files` dictionary".into()))?;
    let mut out = ScrapeResponse::new();
    for (key, stats) in files {
        let hash = InfoHash::from_slice(key).ok_or_else(|| {
            TrackerError::MalformedResponse(format!("scrape key of {} bytes", key.len()))
        })?;
        out.insert(
            hash,
            ScrapeStats {
                seeders: int_field(stats, "complete")?.unwrap_or(0),
                leechers: int_field(stats, "incomplete")?.unwrap_or(0),
                completed: int_field(stats, "downloaded")?.unwrap_or(0),
            },
        );
    }
    Ok(out)
}

/// Blocking HTTP(S) tracker client.
#[derive(Debug, Clone)]
pub struct HttpTracker {
    agent: ureq::Agent,
}

impl HttpTracker {
    pub fn new(timeout: Duration) -> Self {
        HttpTracker {
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
        }
    }

    fn get(&self, url: &str) -> Result<Vec<u8>, TrackerError> {
        let resp = self
            .agent
            .get(url)
            .call()
            .map_err(|e| TrackerError::Transport(e.to_string()))?;
        let mut body = Vec::new();
        resp.into_reader()
            .take(MAX_BODY)
            .read_to_end(&mut body)
            .map_err(|e| TrackerError::Transport(e.to_string()))?;
        Ok(body)
    }

    pub fn announce(
        &self,
        url: &str,
        req: &AnnounceRequest,
    ) -> Result<AnnounceResponse, TrackerError> {
        if !(url.starts_with("http://") || url.starts_with("https://")) {
            return Err(TrackerError::UnsupportedScheme(
                url.split("://").next().unwrap_or_default().to_string(),
            ));
        }
        req.validate()?;
        let body = self.get(&announce_url(url, req))?;
        parse_announce_body(&body)
    }

    pub fn scrape(&self, url: &str, hashes: &[InfoHash]) -> Result<ScrapeResponse, TrackerError> {
        if hashes.is_empty() {
            return Err(TrackerError::InvalidRequest("scrape needs at least one infohash"));
        }
        if hashes.len() > MAX_SCRAPE_HASHES {
            return Err(TrackerError::InvalidRequest("too many infohashes for one scrape"));
        }
        let base = scrape_url(url)
            .ok_or(TrackerError::InvalidRequest("tracker URL does not support scrape"))?;
        let query = hashes
            .iter()
            .map(|h| format!("info_hash={}", escape(h.as_bytes())))
            .collect::<Vec<_>>()
            .join("&");
        let body = self.get(&join_query(&base, &query))?;
        parse_scrape_body(&body)
    }
}

impl Default for HttpTracker {
    fn default() -> Self {
        HttpTracker::new(Duration::from_secs(30))
    }
}

pub fn http_announce(url: &str, req: &AnnounceRequest) -> Result<AnnounceResponse, TrackerError> {
    HttpTracker::default().announce(url, req)
}

pub fn scrape(url: &str, hashes: &[InfoHash]) -> Result<ScrapeResponse, TrackerError> {
    HttpTracker::default().scrape(url, hashes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bencode::encode;
    use crate::tracker::{AnnounceEvent, PeerId};
    use std::net::Ipv4Addr;

    fn request() -> AnnounceRequest {
        let mut hash = [0u8; 20];
        hash[0] = 0x12;
        hash[1] = b' ';
        hash[2] = b'~';
        AnnounceRequest::observer(InfoHash(hash), PeerId(*b"-SS0100-abcdefghijkl"))
    }

    #[test]
    fn query_carries_binary_fields_and_omits_none_event() {
        let url = announce_url("http://t.example/announce", &request());
        assert!(url.starts_with(
            "http://t.example/announce?info_hash=%12%20~%00%00%00%00%00%00%00%00%00%00%00%00%00%00%00%00%00&peer_id=-SS0100-abcdefghijkl&port=6881"
        ));
        assert!(url.contains("&uploaded=0&downloaded=0&left=1&compact=1&numwant=200"));
        assert!(!url.contains("event="));

        let mut req = request();
        req.event = AnnounceEvent::Started;
        let url = announce_url("http://t.example/announce?passkey=k", &req);
        assert!(url.starts_with("http://t.example/announce?passkey=k&info_hash="));
        assert!(url.ends_with("&event=started"));
    }

    #[test]
    fn counters_and_compact_peers() {
        let body = encode(&BValue::dict([
            ("interval", BValue::Int(1800)),
            ("complete", BValue::Int(5)),
            ("incomplete", BValue::Int(7)),
            ("peers", BValue::Bytes(vec![0x7F, 0, 0, 1, 0x1A, 0xE1])),
        ]));
        let resp = parse_announce_body(&body).unwrap();
        assert_eq!((resp.seeders, resp.leechers, resp.interval), (5, 7, 1800));
        assert_eq!(resp.peers, [SocketAddrV4::new(Ipv4Addr::LOCALHOST, 6881)]);
    }

    #[test]
    fn empty_blob_and_dict_model() {
        let body = encode(&BValue::dict([
            ("interval", BValue::Int(60)),
            ("peers", BValue::Bytes(vec![])),
        ]));
        assert!(parse_announce_body(&body).unwrap().peers.is_empty());

        let body = encode(&BValue::dict([(
            "peers",
            BValue::List(vec![
                BValue::dict([("ip", "8.8.8.8".into()), ("port", BValue::Int(1))]),
                BValue::dict([("ip", "::1".into()), ("port", BValue::Int(2))]),
            ]),
        )]));
        let resp = parse_announce_body(&body).unwrap();
        assert_eq!(resp.peers.len(), 1);
        assert_eq!(resp.peers6.len(), 1);
    }

    #[test]
    fn failure_reason_and_ragged_blob() {
        let body = encode(&BValue::dict([("failure reason", "torrent not registered".into())]));
        assert_eq!(
            parse_announce_body(&body),
            Err(TrackerError::TrackerFailure("torrent not registered".into()))
        );
        let body = encode(&BValue::dict([("peers", BValue::Bytes(vec![1; 7]))]));
        assert!(matches!(
            parse_announce_body(&body),
            Err(TrackerError::MalformedResponse(_))
        ));
        assert!(matches!(
            parse_announce_body(b"garbage"),
            Err(TrackerError::MalformedResponse(_))
        ));
    }

    #[test]
    fn scrape_url_convention() {
        assert_eq!(
            scrape_url("http://t.example/announce").as_deref(),
            Some("http://t.example/scrape")
        );
        assert_eq!(
            scrape_url("http://t.example/x/announce.php?k=1").as_deref(),
            Some("http://t.example/x/scrape.php?k=1")
        );
        assert_eq!(
            scrape_url("http://t.example/scrape").as_deref(),
            Some("http://t.example/scrape")
        );
        assert_eq!(scrape_url("http://t.example/a"), None);
    }

    #[test]
    fn scrape_body_absent_entries() {
        let known = InfoHash([1; 20]);
        let body = encode(&BValue::dict([(
            "files",
            BValue::Dict(
                [(
                    known.0.to_vec(),
                    BValue::dict([
                        ("complete", BValue::Int(3)),
                        ("incomplete", BValue::Int(4)),
                        ("downloaded", BValue::Int(9)),
                    ]),
                )]
                .into_iter()
                .collect(),
            ),
        )]));
        let resp = parse_scrape_body(&body).unwrap();
        assert_eq!(
            resp[&known],
            ScrapeStats {
                seeders: 3,
                leechers: 4,
                completed: 9
            }
        );
        assert!(!resp.contains_key(&InfoHash([2; 20])));
    }

    #[test]
    fn scrape_preconditions() {
        let client = HttpTracker::default();
        assert!(matches!(
            client.scrape("http://t.example/announce", &[]),
            Err(TrackerError::InvalidRequest(_))
        ));
        let many = vec![InfoHash([0; 20]); MAX_SCRAPE_HASHES + 1];
        assert!(matches!(
            client.scrape("http://t.example/announce", &many),
            Err(TrackerError::InvalidRequest(_))
        ));
    }
}
