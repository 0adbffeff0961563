//! XML crawl snapshots: one document per torrent per crawl cycle.
//!
//! ```xml
//! <crawl torrent_id="" infohash="" network="" time="" peer_count="" seeders=""
//!        leechers="" euro_count="" na_count="" aus_count="">
//!   <peer ip="" port="" bogon=""/>
//! </crawl>
//! ```

use std::net::{Ipv4Addr, SocketAddrV4};
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use quick_xml::events::{BytesDecl, BytesEnd, BytesStart, Event};
use quick_xml::{Reader, Writer};
use thiserror::Error;

use super::CrawlCycleResult;
use crate::bencode::InfoHash;
use crate::geodb::{classify_region, is_bogon, GeoResolver, RegionClass};

/// Discovery channel recorded in every snapshot written by the crawler.
pub const NETWORK_TRACKER: &str = "tracker";

const CRAWL_ATTRS: [&str; 10] = [
    "torrent_id",
    "infohash",
    "network",
    "time",
    "peer_count",
    "seeders",
    "leechers",
    "euro_count",
    "na_count",
    "aus_count",
];

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn violation(msg: impl Into<String>) -> SnapshotError {
    SnapshotError::SchemaViolation(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct SnapshotPeer {
    pub ip: Ipv4Addr,
    pub port: u16,
    pub bogon: bool,
}

impl SnapshotPeer {
    pub fn endpoint(&self) -> SocketAddrV4 {
        SocketAddrV4::new(self.ip, self.port)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Snapshot {
    pub torrent_id: u32,
    pub infohash: InfoHash,
    pub network: String,
    /// Truncated to whole seconds.
    pub time: DateTime<Utc>,
    pub peer_count: u64,
    pub seeders: u64,
    pub leechers: u64,
    pub euro_count: u64,
    pub na_count: u64,
    pub aus_count: u64,
    pub peers: Vec<SnapshotPeer>,
}

/// Formats an instant as ISO-8601 UTC with whole seconds.
pub fn format_time(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Secs, true)
}

/// Compact form used in snapshot file names, e.g. `20130812T120000Z`.
pub fn compact_time(t: DateTime<Utc>) -> String {
    t.format("%Y%m%dT%H%M%SZ").to_string()
}

fn truncate_secs(t: DateTime<Utc>) -> DateTime<Utc> {
    DateTime::from_timestamp(t.timestamp(), 0).expect("in range")
}

/// Builds the snapshot for a finished cycle. Regional counters are computed
/// here from the resolver: one increment per listed peer whose country falls
/// in Europe, North America or Australia.
pub fn write_snapshot(result: &CrawlCycleResult, geo: &dyn GeoResolver) -> Snapshot {
    let peers: Vec<SnapshotPeer> = result
        .peers
        .iter()
        .map(|p| SnapshotPeer {
            ip: *p.ip(),
            port: p.port(),
            bogon: is_bogon(*p.ip()),
        })
        .collect();
    let (mut euro, mut na, mut aus) = (0, 0, 0);
    for peer in &peers {
        let region = geo
            .resolve(peer.ip)
            .map_or(RegionClass::Unknown, |r| classify_region(&r.country));
        match region {
            RegionClass::Europe => euro += 1,
            RegionClass::NorthAmerica => na += 1,
            RegionClass::Australia => aus += 1,
            RegionClass::Other | RegionClass::Unknown => {}
        }
    }
    Snapshot {
        torrent_id: result.torrent_id,
        infohash: result.infohash,
        network: NETWORK_TRACKER.to_string(),
        time: truncate_secs(result.started_at),
        peer_count: peers.len() as u64,
        seeders: u64::from(result.seeders),
        leechers: u64::from(result.leechers),
        euro_count: euro,
        na_count: na,
        aus_count: aus,
        peers,
    }
}

impl Snapshot {
    /// `<infohash-hex>/<time-compact>.xml`
    pub fn relative_path(&self) -> PathBuf {
        Path::new(&self.infohash.to_hex()).join(format!("{}.xml", compact_time(self.time)))
    }

    pub fn to_xml(&self) -> Vec<u8> {
        let mut w = Writer::new_with_indent(Vec::new(), b' ', 2);
        let values = [
            self.torrent_id.to_string(),
            self.infohash.to_hex(),
            self.network.clone(),
            format_time(self.time),
            self.peer_count.to_string(),
            self.seeders.to_string(),
            self.leechers.to_string(),
            self.euro_count.to_string(),
            self.na_count.to_string(),
            self.aus_count.to_string(),
        ];
        let root = BytesStart::new("crawl")
            .with_attributes(CRAWL_ATTRS.iter().copied().zip(values.iter().map(String::as_str)));
        // writes into a Vec cannot fail
        w.write_event(Event::Decl(BytesDecl::new("1.0", Some("UTF-8"), None)))
            .expect("vec write");
        w.write_event(Event::Start(root)).expect("vec write");
        for p in &self.peers {
            let ip = p.ip.to_string();
            let port = p.port.to_string();
            let elem = BytesStart::new("peer").with_attributes([
                ("ip", ip.as_str()),
                ("port", port.as_str()),
                ("bogon", if p.bogon { "true" } else { "false" }),
            ]);
            w.write_event(Event::Empty(elem)).expect("vec write");
        }
        w.write_event(Event::End(BytesEnd::new("crawl")))
            .expect("vec write");
        let mut out = w.into_inner();
        out.push(b'\n');
        out
    }

    /// Writes under `root`, returning the full path.
    pub fn write_to_dir(&self, root: &Path) -> Result<PathBuf, SnapshotError> {
        let path = root.join(self.relative_path());
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, self.to_xml())?;
        Ok(path)
    }

    /// Parses and validates a snapshot document.
    pub fn parse(xml: &[u8]) -> Result<Snapshot, SnapshotError> {
        let text = std::str::from_utf8(xml).map_err(|_| violation("document is not UTF-8"))?;
        let mut reader = Reader::from_str(text);
        reader.config_mut().trim_text(true);

        let mut snapshot: Option<Snapshot> = None;
        let mut closed = false;
        loop {
            let event = reader
                .read_event()
                .map_err(|e| violation(format!("xml error: {e}")))?;
            match event {
                Event::Decl(_) | Event::Comment(_) => {}
                Event::Start(e) if snapshot.is_none() => {
                    snapshot = Some(parse_root(&e)?);
                }
                Event::Empty(e) if snapshot.is_none() => {
                    snapshot = Some(parse_root(&e)?);
                    closed = true;
                }
                Event::Empty(e) if !closed => {
                    if e.name().as_ref() != b"peer" {
                        return Err(violation(format!(
                            "unexpected element <{}>",
                            String::from_utf8_lossy(e.name().as_ref())
                        )));
                    }
                    let peer = parse_peer_attrs(&e)?;
                    snapshot.as_mut().expect("root seen").peers.push(peer);
                }
                Event::End(e) if !closed && e.name().as_ref() == b"crawl" => closed = true,
                Event::Eof => break,
                Event::Text(t) if t.is_empty() => {}
                other => return Err(violation(format!("unexpected content: {other:?}"))),
            }
        }
        let snapshot = snapshot.ok_or_else(|| violation("missing <crawl> element"))?;
        if !closed {
            return Err(violation("unterminated <crawl> element"));
        }
        if snapshot.peer_count != snapshot.peers.len() as u64 {
            return Err(violation(format!(
                "peer_count={} but {} <peer> elements",
                snapshot.peer_count,
                snapshot.peers.len()
            )));
        }
        if snapshot.euro_count + snapshot.na_count + snapshot.aus_count > snapshot.peer_count {
            return Err(violation("regional counts exceed peer_count"));
        }
        Ok(snapshot)
    }

    pub fn read_file(path: &Path) -> Result<Snapshot, SnapshotError> {
        Self::parse(&std::fs::read(path)?)
    }
}

fn parse_root(e: &BytesStart<'_>) -> Result<Snapshot, SnapshotError> {
    if e.name().as_ref() != b"crawl" {
        return Err(violation("root element must be <crawl>"));
    }
    parse_crawl_attrs(e)
}

fn attrs(e: &BytesStart<'_>, allowed: &[&str]) -> Result<Vec<(String, String)>, SnapshotError> {
    let mut out: Vec<(String, String)> = Vec::new();
    for attr in e.attributes() {
        let attr = attr.map_err(|err| violation(format!("bad attribute: {err}")))?;
        let key = String::from_utf8_lossy(attr.key.as_ref()).into_owned();
        if !allowed.contains(&key.as_str()) {
            return Err(violation(format!("unknown attribute `{key}`")));
        }
        if out.iter().any(|(k, _)| *k == key) {
            return Err(violation(format!("duplicate attribute `{key}`")));
        }
        let value = attr
            .unescape_value()
            .map_err(|err| violation(format!("bad attribute value: {err}")))?
            .into_owned();
        out.push((key, value));
    }
    Ok(out)
}

fn take<'a>(attrs: &'a [(String, String)], key: &str) -> Result<&'a str, SnapshotError> {
    attrs
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
        .ok_or_else(|| violation(format!("missing attribute `{key}`")))
}

fn num<T: std::str::FromStr>(attrs: &[(String, String)], key: &str) -> Result<T, SnapshotError> {
    let raw = take(attrs, key)?;
    raw.parse()
        .map_err(|_| violation(format!("attribute `{key}`=`{raw}` is not a valid number")))
}

fn parse_crawl_attrs(e: &BytesStart<'_>) -> Result<Snapshot, SnapshotError> {
    let a = attrs(e, &CRAWL_ATTRS)?;
    let time_raw = take(&a, "time")?;
    let time = DateTime::parse_from_rfc3339(time_raw)
        .map_err(|_| violation(format!("`time`=`{time_raw}` is not ISO-8601")))?
        .with_timezone(&Utc);
    let infohash_raw = take(&a, "infohash")?;
    Ok(Snapshot {
        torrent_id: num(&a, "torrent_id")?,
        infohash: infohash_raw
            .parse()
            .map_err(|_| violation(format!("`infohash`=`{infohash_raw}` is not 40 hex chars")))?,
        network: take(&a, "network")?.to_string(),
        time,
        peer_count: num(&a, "peer_count")?,
        seeders: num(&a, "seeders")?,
        leechers: num(&a, "leechers")?,
        euro_count: num(&a, "euro_count")?,
        na_count: num(&a, "na_count")?,
        aus_count: num(&a, "aus_count")?,
        peers: Vec::new(),
    })
}

fn parse_peer_attrs(e: &BytesStart<'_>) -> Result<SnapshotPeer, SnapshotError> {
    let a = attrs(e, &["ip", "port", "bogon"])?;
    let bogon = match take(&a, "bogon")? {
        "true" => true,
        "false" => false,
        other => return Err(violation(format!("`bogon`=`{other}` is not a boolean"))),
    };
    Ok(SnapshotPeer {
        ip: num(&a, "ip")?,
        port: num(&a, "port")?,
        bogon,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crawler::StopRule;
    use crate::geodb::GeoTable;
    use std::collections::BTreeSet;

    fn geo() -> GeoTable {
        GeoTable::from_reader(
            "range_start,range_end,country,state,city,isp,longitude,latitude\n\
             5.0.0.0,5.0.0.255,DE,,Berlin,DTAG,13.4,52.5\n\
             6.0.0.0,6.0.0.255,US,NY,New York,Verizon,-74.0,40.7\n\
             7.0.0.0,7.0.0.255,JP,,Tokyo,NTT,139.7,35.7\n\
             8.0.0.0,8.0.0.255,AU,,Perth,iiNet,115.8,-31.9\n"
                .as_bytes(),
        )
        .unwrap()
    }

    fn result(peers: &[&str]) -> CrawlCycleResult {
        let t = DateTime::parse_from_rfc3339("2013-08-12T12:00:00.750Z")
            .unwrap()
            .with_timezone(&Utc);
        CrawlCycleResult {
            torrent_id: 3,
            infohash: InfoHash([0xAB; 20]),
            started_at: t,
            ended_at: t,
            peers: peers.iter().map(|p| p.parse().unwrap()).collect::<BTreeSet<_>>(),
            announce_rounds: 4,
            seeders: 2,
            leechers: 9,
            stop_rule: StopRule::Saturated,
            errors: Vec::new(),
        }
    }

    #[test]
    fn regional_counts_from_resolver() {
        let s = write_snapshot(&result(&["5.0.0.1:1", "6.0.0.1:2", "7.0.0.1:3"]), &geo());
        assert_eq!(
            (s.peer_count, s.euro_count, s.na_count, s.aus_count),
            (3, 1, 1, 0)
        );
    }

    #[test]
    fn empty_and_unresolvable() {
        let s = write_snapshot(&result(&[]), &geo());
        assert_eq!((s.peer_count, s.euro_count, s.na_count, s.aus_count), (0, 0, 0, 0));
        let s = write_snapshot(&result(&["9.9.9.9:1", "10.0.0.1:2", "8.0.0.9:3"]), &geo());
        assert_eq!((s.peer_count, s.euro_count, s.na_count, s.aus_count), (3, 0, 0, 1));
        assert!(s.peers.iter().any(|p| p.bogon && p.ip == Ipv4Addr::new(10, 0, 0, 1)));
    }

    #[test]
    fn document_layout() {
        let s = write_snapshot(&result(&["5.0.0.1:6881"]), &geo());
        let xml = String::from_utf8(s.to_xml()).unwrap();
        assert_eq!(
            xml,
            "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n\
             <crawl torrent_id=\"3\" infohash=\"abababababababababababababababababababab\" network=\"tracker\" \
             time=\"2013-08-12T12:00:00Z\" peer_count=\"1\" seeders=\"2\" leechers=\"9\" euro_count=\"1\" \
             na_count=\"0\" aus_count=\"0\">\n  \
             <peer ip=\"5.0.0.1\" port=\"6881\" bogon=\"false\"/>\n\
             </crawl>\n"
        );
        assert_eq!(
            s.relative_path(),
            Path::new("abababababababababababababababababababab/20130812T120000Z.xml")
        );
    }

    #[test]
    fn parse_round_trip() {
        let s = write_snapshot(&result(&["5.0.0.1:6881", "5.0.0.1:6882", "192.168.0.1:1"]), &geo());
        assert_eq!(Snapshot::parse(&s.to_xml()).unwrap(), s);
        let empty = write_snapshot(&result(&[]), &geo());
        assert_eq!(Snapshot::parse(&empty.to_xml()).unwrap(), empty);
    }

    #[test]
    fn self_closing_root_is_accepted() {
        let xml = br#"<crawl torrent_id="1" infohash="abababababababababababababababababababab" network="tracker" time="2013-08-12T12:00:00Z" peer_count="0" seeders="0" leechers="0" euro_count="0" na_count="0" aus_count="0"/>"#;
        assert_eq!(Snapshot::parse(xml).unwrap().peers.len(), 0);
    }

    #[test]
    fn schema_violations() {
        let good = String::from_utf8(write_snapshot(&result(&["5.0.0.1:1"]), &geo()).to_xml()).unwrap();
        let cases = [
            good.replace("peer_count=\"1\"", "peer_count=\"2\""),
            good.replace(" seeders=\"2\"", ""),
            good.replace("bogon=\"false\"", "bogon=\"maybe\""),
            good.replace("<peer ", "<host "),
            good.replace("time=\"2013-08-12T12:00:00Z\"", "time=\"yesterday\""),
            good.replace("</crawl>", ""),
            good.replace("network=", "colour=\"red\" network="),
            good.replace("euro_count=\"1\"", "euro_count=\"5\""),
            "<other/>".to_string(),
            String::new(),
        ];
        for case in cases {
            assert!(
                matches!(Snapshot::parse(case.as_bytes()), Err(SnapshotError::SchemaViolation(_))),
                "accepted: {case}"
            );
        }
    }
}
