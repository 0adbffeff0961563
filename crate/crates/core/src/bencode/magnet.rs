use data_encoding::BASE32;
use thiserror::Error;
use url::Url;

use super::torrent::{InfoHash, TorrentMeta, DEFAULT_PIECE_LENGTH};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MagnetError {
    #[error("not a magnet URI")]
    BadScheme,
    #[error("btih infohash has {0} characters, expected 40 (hex) or 32 (base32)")]
    BadInfohashLength(usize),
    #[error("missing or undecodable `xt=urn:btih:` parameter")]
    BadInfohashEncoding,
}

/// Parses a magnet URI. Only `xt=urn:btih:` is required; `dn` sets the name
/// and every `tr` becomes an announce URL, in order.
///
/// Piece data is unknown for a magnet, so `piece_hashes` is empty,
/// `total_size` is 0 and `piece_length` carries the protocol default.
pub fn parse_magnet(uri: &str) -> Result<TorrentMeta, MagnetError> {
    let url = Url::parse(uri.trim()).map_err(|_| MagnetError::BadScheme)?;
    if url.scheme() != "magnet" {
        return Err(MagnetError::BadScheme);
    }

    let mut infohash = None;
    let mut name = Vec::new();
    let mut trackers: Vec<String> = Vec::new();
    for (key, value) in url.query_pairs() {
        match key.as_ref() {
            "xt" if infohash.is_none() => {
                if let Some(encoded) = strip_prefix_ignore_case(&value, "urn:btih:") {
                    infohash = Some(decode_btih(encoded)?);
                }
            }
            "dn" => name = value.as_bytes().to_vec(),
            "tr" => {
                if !trackers.iter().any(|t| t == value.as_ref()) {
                    trackers.push(value.into_owned());
                }
            }
            _ => {}
        }
    }

    Ok(TorrentMeta {
        infohash: infohash.ok_or(MagnetError::BadInfohashEncoding)?,
        name,
        total_size: 0,
        piece_length: DEFAULT_PIECE_LENGTH,
        piece_hashes: Vec::new(),
        announce_urls: trackers,
    })
}

fn strip_prefix_ignore_case<'a>(s: &'a str, prefix: &str) -> Option<&'a str> {
    let head = s.get(..prefix.len())?;
    head.eq_ignore_ascii_case(prefix).then(|| &s[prefix.len()..])
}

fn decode_btih(encoded: &str) -> Result<InfoHash, MagnetError> {
    let bytes = match encoded.len() {
        40 => hex::decode(encoded).map_err(|_| MagnetError::BadInfohashEncoding)?,
        32 => BASE32
            .decode(encoded.to_ascii_uppercase().as_bytes())
            .map_err(|_| MagnetError::BadInfohashEncoding)?,
        n => return Err(MagnetError::BadInfohashLength(n)),
    };
    InfoHash::from_slice(&bytes).ok_or(MagnetError::BadInfohashEncoding)
}

/// Renders a magnet URI carrying the infohash, name and trackers of `meta`.
pub fn to_magnet(meta: &TorrentMeta) -> String {
    let mut uri = format!("magnet:?xt=urn:btih:{}", meta.infohash.to_hex());
    let mut query = url::form_urlencoded::Serializer::new(String::new());
    if !meta.name.is_empty() {
        query.append_pair("dn", &meta.display_name());
    }
    for tr in &meta.announce_urls {
        query.append_pair("tr", tr);
    }
    let rest = query.finish();
    if !rest.is_empty() {
        uri.push('&');
        uri.push_str(&rest);
    }
    uri
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_digest_from_hex() {
        let meta = parse_magnet(&format!("magnet:?xt=urn:btih:{}", "00".repeat(20))).unwrap();
        assert_eq!(meta.infohash, InfoHash([0; 20]));
        assert!(meta.piece_hashes.is_empty());
        assert_eq!(meta.total_size, 0);
    }

    #[test]
    fn trackers_in_order_and_name_decoded() {
        let meta = parse_magnet(
            "magnet:?xt=urn:btih:c12fe1c06bba254a9dc9f519b335aa7c1367a88a\
             &dn=Breaking.Bad.S05E09%20HDTV\
             &tr=http%3A%2F%2Fa.example%2Fannounce&tr=udp%3A%2F%2Fb.example%3A80",
        )
        .unwrap();
        assert_eq!(
            meta.announce_urls,
            ["http://a.example/announce", "udp://b.example:80"]
        );
        assert_eq!(meta.display_name(), "Breaking.Bad.S05E09 HDTV");
    }

    #[test]
    fn base32_infohash() {
        let hash = InfoHash(*b"0123456789abcdefghij");
        let b32 = BASE32.encode(&hash.0);
        assert_eq!(b32.len(), 32);
        let meta = parse_magnet(&format!("magnet:?xt=urn:btih:{}", b32.to_lowercase())).unwrap();
        assert_eq!(meta.infohash, hash);
    }

    #[test]
    fn error_paths() {
        assert_eq!(
            parse_magnet("magnet:?dn=nothing").unwrap_err(),
            MagnetError::BadInfohashEncoding
        );
        assert_eq!(
            parse_magnet("http://example.com/?xt=urn:btih:00").unwrap_err(),
            MagnetError::BadScheme
        );
        assert_eq!(parse_magnet("not a uri").unwrap_err(), MagnetError::BadScheme);
        assert_eq!(
            parse_magnet("magnet:?xt=urn:btih:abcd").unwrap_err(),
            MagnetError::BadInfohashLength(4)
        );
        assert_eq!(
            parse_magnet(&format!("magnet:?xt=urn:btih:{}", "zz".repeat(20))).unwrap_err(),
            MagnetError::BadInfohashEncoding
        );
    }

    #[test]
    fn magnet_round_trip() {
        let meta = parse_magnet(
            "magnet:?xt=urn:btih:c12fe1c06bba254a9dc9f519b335aa7c1367a88a&dn=a%26b&tr=http%3A%2F%2Fx%2Fannounce",
        )
        .unwrap();
        assert_eq!(parse_magnet(&to_magnet(&meta)).unwrap(), meta);
    }
}
