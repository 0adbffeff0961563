use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha1::{Digest, Sha1};
use thiserror::Error;

use super::value::{decode_dict_spans, BValue, DecodeError, DecodeMode};

/// Default piece size (512 KiB).
pub const DEFAULT_PIECE_LENGTH: u64 = 524_288;

/// SHA-1 digest of a torrent's bencoded `info` dictionary; the swarm identity.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct InfoHash(pub [u8; 20]);

impl InfoHash {
    pub fn of_info_bytes(info: &[u8]) -> Self {
        InfoHash(Sha1::digest(info).into())
    }

    pub fn as_bytes(&self) -> &[u8; 20] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_slice(bytes: &[u8]) -> Option<Self> {
        <[u8; 20]>::try_from(bytes).ok().map(InfoHash)
    }
}

impl fmt::Display for InfoHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for InfoHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "InfoHash({})", self.to_hex())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("infohash must be 40 hex characters")]
pub struct InfoHashParseError;

impl FromStr for InfoHash {
    type Err = InfoHashParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut out = [0u8; 20];
        hex::decode_to_slice(s, &mut out).map_err(|_| InfoHashParseError)?;
        Ok(InfoHash(out))
    }
}

impl Serialize for InfoHash {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for InfoHash {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Identity and shape of a torrent, built from a `.torrent` file or a magnet URI.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TorrentMeta {
    pub infohash: InfoHash,
    /// Raw `name` bytes; not guaranteed to be UTF-8.
    pub name: Vec<u8>,
    /// Total payload size in bytes; 0 when unknown (magnet input).
    pub total_size: u64,
    pub piece_length: u64,
    /// Empty when built from a magnet URI.
    pub piece_hashes: Vec<[u8; 20]>,
    pub announce_urls: Vec<String>,
}

impl TorrentMeta {
    pub fn display_name(&self) -> String {
        String::from_utf8_lossy(&self.name).into_owned()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TorrentError {
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error("torrent is not a dictionary")]
    NotADict,
    #[error("missing info dictionary")]
    MissingInfoDict,
    #[error("missing required field `{0}`")]
    MissingRequiredField(&'static str),
    #[error("invalid value for field `{0}`")]
    InvalidField(&'static str),
    #[error("piece hash block of {0} bytes is not a multiple of 20")]
    BadPieceHashBlock(usize),
    #[error("expected {expected} piece hashes, found {actual}")]
    PieceCountMismatch { expected: u64, actual: u64 },
}

/// Parses `.torrent` bytes. Dictionary key order is not enforced, since
/// real-world torrents vary; the infohash is taken over the original bytes.
pub fn parse_torrent(bytes: &[u8]) -> Result<TorrentMeta, TorrentError> {
    parse_torrent_with(bytes, DecodeMode::Lenient)
}

pub fn parse_torrent_with(bytes: &[u8], mode: DecodeMode) -> Result<TorrentMeta, TorrentError> {
    let (root, spans) = match decode_dict_spans(bytes, mode) {
        Ok(ok) => ok,
        Err(DecodeError::Malformed {
            offset: 0,
            kind: super::Malformation::BadPrefix(_),
        }) => return Err(TorrentError::NotADict),
        Err(e) => return Err(e.into()),
    };
    let info = root.get("info").ok_or(TorrentError::MissingInfoDict)?;
    if info.as_dict().is_none() {
        return Err(TorrentError::MissingInfoDict);
    }
    let span = spans[&b"info"[..]].clone();
    let infohash = InfoHash::of_info_bytes(&bytes[span]);

    let name = info
        .get("name")
        .ok_or(TorrentError::MissingRequiredField("name"))?
        .as_bytes()
        .ok_or(TorrentError::InvalidField("name"))?
        .to_vec();
    let piece_length = info
        .get("piece length")
        .ok_or(TorrentError::MissingRequiredField("piece length"))?
        .as_int()
        .filter(|&n| n > 0)
        .ok_or(TorrentError::InvalidField("piece length"))? as u64;

    let total_size = total_size(info)?;
    let piece_hashes = piece_hashes(info)?;
    if !piece_hashes.is_empty() {
        let expected = total_size.div_ceil(piece_length);
        if expected != piece_hashes.len() as u64 {
            return Err(TorrentError::PieceCountMismatch {
                expected,
                actual: piece_hashes.len() as u64,
            });
        }
    }

    Ok(TorrentMeta {
        infohash,
        name,
        total_size,
        piece_length,
        piece_hashes,
        announce_urls: announce_urls(&root),
    })
}

fn total_size(info: &BValue) -> Result<u64, TorrentError> {
    if let Some(length) = info.get("length") {
        return length
            .as_int()
            .and_then(|n| u64::try_from(n).ok())
            .ok_or(TorrentError::InvalidField("length"));
    }
    let files = info
        .get("files")
        .ok_or(TorrentError::MissingRequiredField("length"))?
        .as_list()
        .ok_or(TorrentError::InvalidField("files"))?;
    files.iter().try_fold(0u64, |acc, file| {
        let len = file
            .get("length")
            .and_then(BValue::as_int)
            .and_then(|n| u64::try_from(n).ok())
            .ok_or(TorrentError::InvalidField("files"))?;
        acc.checked_add(len).ok_or(TorrentError::InvalidField("files"))
    })
}

fn piece_hashes(info: &BValue) -> Result<Vec<[u8; 20]>, TorrentError> {
    let Some(pieces) = info.get("pieces") else {
        return Ok(Vec::new());
    };
    let block = pieces
        .as_bytes()
        .ok_or(TorrentError::InvalidField("pieces"))?;
    if block.len() % 20 != 0 {
        return Err(TorrentError::BadPieceHashBlock(block.len()));
    }
    Ok(block
        .chunks_exact(20)
        .map(|c| c.try_into().expect("chunk of 20"))
        .collect())
}

fn announce_urls(root: &BValue) -> Vec<String> {
    let mut urls: Vec<String> = Vec::new();
    let mut push = |v: &BValue| {
        if let Some(b) = v.as_bytes() {
            let url = String::from_utf8_lossy(b).into_owned();
            if !url.is_empty() && !urls.contains(&url) {
                urls.push(url);
            }
        }
    };
    if let Some(a) = root.get("announce") {
        push(a);
    }
    if let Some(tiers) = root.get("announce-list").and_then(BValue::as_list) {
        for tier in tiers {
            match tier {
                BValue::List(inner) => inner.iter().for_each(&mut push),
                other => push(other),
            }
        }
    }
    urls
}
