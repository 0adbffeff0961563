//! Bencoding, `.torrent` metadata and magnet URIs.

mod magnet;
mod torrent;
mod value;

pub use magnet::{parse_magnet, to_magnet, MagnetError};
pub use torrent::{
    parse_torrent, parse_torrent_with, InfoHash, InfoHashParseError, TorrentError, TorrentMeta,
    DEFAULT_PIECE_LENGTH,
};
pub use value::{
    decode, decode_dict_spans, decode_with, encode, encode_into, BValue, DecodeError, DecodeMode,
    Malformation,
};
