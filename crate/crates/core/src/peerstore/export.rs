use std::io::Write;
use std::str::FromStr;

use serde_json::{Map, Value};

use super::{PeerRecord, PeerStore, StoreError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    /// One JSON object per line.
    Jsonl,
}

impl FromStr for ExportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ExportFormat::Csv),
            "jsonl" | "json" | "ndjson" => Ok(ExportFormat::Jsonl),
            other => Err(format!("unknown export format {other:?}")),
        }
    }
}

/// `IP, country, state, city, ISP, longitude, latitude, t_1 .. t_n`
pub fn peer_header(torrents: u32) -> Vec<String> {
    let mut h: Vec<String> = ["IP", "country", "state", "city", "ISP", "longitude", "latitude"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend((1..=torrents).map(|i| format!("t_{i}")));
    h
}

pub fn crawl_files_header() -> [&'static str; 7] {
    ["time", "network", "peer_count", "torrent_id", "EuroCount", "NACount", "AUSCount"]
}

fn coord(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn peer_fields(p: &PeerRecord, torrents: u32) -> Vec<String> {
    let mut row = vec![
        p.ip.to_string(),
        p.geo.country.clone(),
        p.geo.state.clone(),
        p.geo.city.clone(),
        p.geo.isp.clone(),
        coord(p.geo.longitude),
        coord(p.geo.latitude),
    ];
    row.extend((1..=torrents).map(|i| u8::from(p.membership.contains(i)).to_string()));
    row
}

fn peer_json(p: &PeerRecord, header: &[String], torrents: u32) -> Value {
    let mut obj = Map::new();
    let coord = |v: Option<f64>| v.map_or(Value::Null, Value::from);
    let fixed = [
        Value::from(p.ip.to_string()),
        Value::from(p.geo.country.clone()),
        Value::from(p.geo.state.clone()),
        Value::from(p.geo.city.clone()),
        Value::from(p.geo.isp.clone()),
        coord(p.geo.longitude),
        coord(p.geo.latitude),
    ];
    for (k, v) in header.iter().zip(fixed) {
        obj.insert(k.clone(), v);
    }
    for i in 1..=torrents {
        obj.insert(format!("t_{i}"), Value::from(u8::from(p.membership.contains(i))));
    }
    Value::Object(obj)
}

impl PeerStore {
    /// The `peer` collection in ascending IP order.
    pub fn export_peers(&self, w: impl Write, format: ExportFormat) -> Result<(), StoreError> {
        let n = self.registry.len();
        let header = peer_header(n);
        match format {
            ExportFormat::Csv => {
                let mut csv = csv::Writer::from_writer(w);
                csv.write_record(&header)?;
                for p in self.peers() {
                    csv.write_record(peer_fields(p, n))?;
                }
                csv.flush()?;
            }
            ExportFormat::Jsonl => {
                let mut w = std::io::BufWriter::new(w);
                for p in self.peers() {
                    serde_json::to_writer(&mut w, &peer_json(p, &header, n))?;
                    w.write_all(b"\n")?;
                }
                w.flush()?;
            }
        }
        Ok(())
    }

    /// The `crawl_files` collection in ingest order.
    pub fn export_crawl_files(&self, w: impl Write, format: ExportFormat) -> Result<(), StoreError> {
        match format {
            ExportFormat::Csv => {
                let mut csv = csv::Writer::from_writer(w);
                csv.write_record(crawl_files_header())?;
                for s in self.snapshots() {
                    csv.write_record([
                        crate::crawler::format_time(s.time),
                        s.network.clone(),
                        s.peer_count.to_string(),
                        s.torrent_id.to_string(),
                        s.euro_count.to_string(),
                        s.na_count.to_string(),
                        s.aus_count.to_string(),
                    ])?;
                }
                csv.flush()?;
            }
            ExportFormat::Jsonl => {
                let mut w = std::io::BufWriter::new(w);
                for s in self.snapshots() {
                    serde_json::to_writer(&mut w, s)?;
                    w.write_all(b"\n")?;
                }
                w.flush()?;
            }
        }
        Ok(())
    }
}
