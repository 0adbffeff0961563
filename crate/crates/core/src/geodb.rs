//! IPv4 range geolocation from an open CSV table.
//!
//! CSV schema (header required, in this order):
//!
//! ```text
//! range_start,range_end,country,state,city,isp,longitude,latitude
//! ```
//!
//! Range bounds are dotted quads or unsigned 32-bit integers. `state` is kept
//! only for US and CA rows. Ranges must not overlap.
//!
//! Location data from any IP database is approximate; country-level answers
//! are far more reliable than city-level ones, and nothing here models that.

use std::fmt;
use std::io::Read;
use std::net::Ipv4Addr;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CSV_HEADER: [&str; 8] = [
    "range_start",
    "range_end",
    "country",
    "state",
    "city",
    "isp",
    "longitude",
    "latitude",
];

/// Countries counted as Europe: the EU-27, the other EEA members, the UK,
/// Switzerland, and the remaining states and territories of geographic Europe.
pub const EUROPE: &[&str] = &[
    // EU-27
    "AT", "BE", "BG", "CY", "CZ", "DE", "DK", "EE", "ES", "FI", "FR", "GR", "HR", "HU", "IE",
    "IT", "LT", "LU", "LV", "MT", "NL", "PL", "PT", "RO", "SE", "SI", "SK",
    // EEA, UK, CH
    "IS", "LI", "NO", "GB", "CH",
    // rest of geographic Europe
    "AD", "AL", "AX", "BA", "BY", "FO", "GG", "GI", "IM", "JE", "MC", "MD", "ME", "MK", "RS",
    "RU", "SM", "UA", "VA", "XK",
];

/// Countries counted as North America.
pub const NORTH_AMERICA: &[&str] = &["US", "CA"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoRecord {
    pub range_start: u32,
    pub range_end: u32,
    pub country: String,
    pub state: String,
    pub city: String,
    pub isp: String,
    pub longitude: f64,
    pub latitude: f64,
}

impl GeoRecord {
    pub fn contains(&self, ip: Ipv4Addr) -> bool {
        (self.range_start..=self.range_end).contains(&u32::from(ip))
    }

    pub fn region(&self) -> RegionClass {
        classify_region(&self.country)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RegionClass {
    Europe,
    NorthAmerica,
    Australia,
    Other,
    Unknown,
}

impl RegionClass {
    /// Fixed representative UTC offset in hours for local-time rendering.
    pub fn utc_offset_hours(self) -> Option<i32> {
        match self {
            RegionClass::Europe => Some(1),
            RegionClass::NorthAmerica => Some(-5),
            RegionClass::Australia => Some(10),
            RegionClass::Other | RegionClass::Unknown => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RegionClass::Europe => "europe",
            RegionClass::NorthAmerica => "north_america",
            RegionClass::Australia => "australia",
            RegionClass::Other => "other",
            RegionClass::Unknown => "unknown",
        }
    }
}

impl fmt::Display for RegionClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for RegionClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "europe" | "eu" => Ok(RegionClass::Europe),
            "north_america" | "na" => Ok(RegionClass::NorthAmerica),
            "australia" | "au" | "aus" => Ok(RegionClass::Australia),
            "other" => Ok(RegionClass::Other),
            "unknown" => Ok(RegionClass::Unknown),
            _ => Err(format!("unknown region `{s}`")),
        }
    }
}

pub fn classify_region(country: &str) -> RegionClass {
    let code = country.trim().to_ascii_uppercase();
    if code.is_empty() {
        RegionClass::Unknown
    } else if code == "AU" {
        RegionClass::Australia
    } else if NORTH_AMERICA.contains(&code.as_str()) {
        RegionClass::NorthAmerica
    } else if EUROPE.contains(&code.as_str()) {
        RegionClass::Europe
    } else {
        RegionClass::Other
    }
}

/// Private or reserved IPv4 space that is never geolocated.
pub fn is_bogon(ip: Ipv4Addr) -> bool {
    let [a, b, ..] = ip.octets();
    a == 0
        || a == 10
        || a == 127
        || (a == 172 && (16..=31).contains(&b))
        || (a == 192 && b == 168)
        || (224..=239).contains(&a)
}

/// Short English country names used in report labels.
pub fn country_name(code: &str) -> Option<&'static str> {
    Some(match code {
        "AD" => "Andorra",
        "AL" => "Albania",
        "AR" => "Argentina",
        "AT" => "Austria",
        "AU" => "Australia",
        "AX" => "Aland Islands",
        "BA" => "Bosnia and Herzegovina",
        "BE" => "Belgium",
        "BG" => "Bulgaria",
        "BR" => "Brazil",
        "BY" => "Belarus",
        "CA" => "Canada",
        "CH" => "Switzerland",
        "CN" => "China",
        "CY" => "Cyprus",
        "CZ" => "Czech Republic",
        "DE" => "Germany",
        "DK" => "Denmark",
        "EE" => "Estonia",
        "ES" => "Spain",
        "FI" => "Finland",
        "FO" => "Faroe Islands",
        "FR" => "France",
        "GB" => "United Kingdom",
        "GG" => "Guernsey",
        "GI" => "Gibraltar",
        "GR" => "Greece",
        "HR" => "Croatia",
        "HU" => "Hungary",
        "IE" => "Ireland",
        "IL" => "Israel",
        "IM" => "Isle of Man",
        "IN" => "India",
        "IS" => "Iceland",
        "IT" => "Italy",
        "JE" => "Jersey",
        "JP" => "Japan",
        "LI" => "Liechtenstein",
        "LT" => "Lithuania",
        "LU" => "Luxembourg",
        "LV" => "Latvia",
        "MC" => "Monaco",
        "MD" => "Moldova",
        "ME" => "Montenegro",
        "MK" => "North Macedonia",
        "MT" => "Malta",
        "MX" => "Mexico",
        "NL" => "Netherlands",
        "NO" => "Norway",
        "NZ" => "New Zealand",
        "PH" => "Philippines",
        "PK" => "Pakistan",
        "PL" => "Poland",
        "PT" => "Portugal",
        "RO" => "Romania",
        "RS" => "Serbia",
        "RU" => "Russia",
        "SE" => "Sweden",
        "SI" => "Slovenia",
        "SK" => "Slovakia",
        "SM" => "San Marino",
        "TR" => "Turkey",
        "UA" => "Ukraine",
        "US" => "United States",
        "VA" => "Vatican City",
        "XK" => "Kosovo",
        "ZA" => "South Africa",
        _ => return None,
    })
}

#[derive(Debug, Error)]
pub enum GeoError {
    #[error("line {line}: {reason}")]
    Parse { line: u64, reason: String },
    #[error("ranges on lines {line_a} and {line_b} overlap")]
    Overlap { line_a: u64, line_b: u64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Anything that can geolocate an IPv4 address.
pub trait GeoResolver {
    fn resolve(&self, ip: Ipv4Addr) -> Option<&GeoRecord>;
}

/// Sorted, overlap-free range table. Immutable after loading.
#[derive(Debug, Clone, Default)]
pub struct GeoTable {
    records: Vec<GeoRecord>,
}

const BUNDLED_FIXTURE: &str = include_str!("../fixtures/geo_fixture.csv");

impl GeoTable {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, GeoError> {
        let file = std::fs::File::open(path)?;
        Self::from_reader(file)
    }

    /// The 200-row table shipped with the crate, used by tests and the simulator.
    pub fn bundled_fixture() -> Self {
        Self::from_reader(BUNDLED_FIXTURE.as_bytes()).expect("bundled geo fixture is valid")
    }

    pub fn from_reader(reader: impl Read) -> Result<Self, GeoError> {
        let mut csv = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header = csv.headers().map_err(|e| parse_err(1, e))?.clone();
        if header.iter().ne(CSV_HEADER.iter().copied()) {
            return Err(GeoError::Parse {
                line: 1,
                reason: format!("header must be `{}`", CSV_HEADER.join(",")),
            });
        }

        let mut rows: Vec<(u64, GeoRecord)> = Vec::new();
        for row in csv.records() {
            let row = row.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line());
                parse_err(line, e)
            })?;
            let line = row.position().map_or(0, |p| p.line());
            rows.push((line, parse_row(&row).map_err(|reason| GeoError::Parse { line, reason })?));
        }
        Self::from_lined_records(rows)
    }

    /// Builds a table from records, validating order and overlap.
    pub fn from_records(records: Vec<GeoRecord>) -> Result<Self, GeoError> {
        Self::from_lined_records(
            records
                .into_iter()
                .enumerate()
                .map(|(i, r)| (i as u64 + 1, r))
                .collect(),
        )
    }

    fn from_lined_records(mut rows: Vec<(u64, GeoRecord)>) -> Result<Self, GeoError> {
        for (line, r) in &rows {
            validate(r).map_err(|reason| GeoError::Parse {
                line: *line,
                reason,
            })?;
        }
        rows.sort_by_key(|(_, r)| (r.range_start, r.range_end));
        for pair in rows.windows(2) {
            let ((la, a), (lb, b)) = (&pair[0], &pair[1]);
            if b.range_start <= a.range_end {
                let (line_a, line_b) = if la <= lb { (*la, *lb) } else { (*lb, *la) };
                return Err(GeoError::Overlap { line_a, line_b });
            }
        }
        Ok(GeoTable {
            records: rows.into_iter().map(|(_, r)| r).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[GeoRecord] {
        &self.records
    }

    /// Binary search for the range containing `ip`. Bogons never match.
    pub fn lookup(&self, ip: Ipv4Addr) -> Option<&GeoRecord> {
        if is_bogon(ip) {
            return None;
        }
        let key = u32::from(ip);
        let idx = self.records.partition_point(|r| r.range_start <= key);
        let candidate = self.records.get(idx.checked_sub(1)?)?;
        (key <= candidate.range_end).then_some(candidate)
    }
}

impl GeoResolver for GeoTable {
    fn resolve(&self, ip: Ipv4Addr) -> Option<&GeoRecord> {
        self.lookup(ip)
    }
}

fn parse_err(line: u64, e: impl fmt::Display) -> GeoError {
    GeoError::Parse {
        line,
        reason: e.to_string(),
    }
}

fn parse_bound(s: &str) -> Result<u32, String> {
    if let Ok(ip) = s.parse::<Ipv4Addr>() {
        return Ok(ip.into());
    }
    s.parse::<u32>()
        .map_err(|_| format!("`{s}` is neither a dotted quad nor a 32-bit integer"))
}

fn parse_row(row: &csv::StringRecord) -> Result<GeoRecord, String> {
    if row.len() != CSV_HEADER.len() {
        return Err(format!("expected {} fields, got {}", CSV_HEADER.len(), row.len()));
    }
    let country = row[2].to_ascii_uppercase();
    let state = if NORTH_AMERICA.contains(&country.as_str()) {
        row[3].to_string()
    } else {
        String::new()
    };
    let float = |i: usize| -> Result<f64, String> {
        row[i]
            .parse::<f64>()
            .map_err(|_| format!("`{}` is not a number for {}", &row[i], CSV_HEADER[i]))
    };
    Ok(GeoRecord {
        range_start: parse_bound(&row[0])?,
        range_end: parse_bound(&row[1])?,
        country,
        state,
        city: row[4].to_string(),
        isp: row[5].to_string(),
        longitude: float(6)?,
        latitude: float(7)?,
    })
}

fn validate(r: &GeoRecord) -> Result<(), String> {
    if r.range_start > r.range_end {
        return Err("range_start is greater than range_end".into());
    }
    if r.country.len() != 2 || !r.country.bytes().all(|b| b.is_ascii_uppercase()) {
        return Err(format!("`{}` is not an ISO 3166 alpha-2 code", r.country));
    }
    if !(r.latitude.abs() <= 90.0) {
        return Err(format!("latitude {} out of range", r.latitude));
    }
    if !(r.longitude.abs() <= 180.0) {
        return Err(format!("longitude {} out of range", r.longitude));
    }
    Ok(())
}
