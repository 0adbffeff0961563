//! Compact peer lists: 6 bytes per IPv4 peer, 18 per IPv6 peer, network order.

use std::net::{Ipv4Addr, Ipv6Addr, SocketAddrV4, SocketAddrV6};

use super::TrackerError;

pub fn parse_compact_v4(blob: &[u8]) -> Result<Vec<SocketAddrV4>, TrackerError> {
    if !blob.len().is_multiple_of(6) {
        return Err(TrackerError::MalformedResponse(format!(
            "compact peer blob of {} bytes is not a multiple of 6",
            blob.len()
        )));
    }
    Ok(blob
        .chunks_exact(6)
        .map(|c| {
            SocketAddrV4::new(
                Ipv4Addr::new(c[0], c[1], c[2], c[3]),
                u16::from_be_bytes([c[4], c[5]]),
            )
        })
        .collect())
}

pub fn write_compact_v4(peers: &[SocketAddrV4]) -> Vec<u8> {
    let mut out = Vec::with_capacity(peers.len() * 6);
    for p in peers {
        out.extend_from_slice(&p.ip().octets());
        out.extend_from_slice(&p.port().to_be_bytes());
    }
    out
}

pub fn parse_compact_v6(blob: &[u8]) -> Result<Vec<SocketAddrV6>, TrackerError> {
    if !blob.len().is_multiple_of(18) {
        return Err(TrackerError::MalformedResponse(format!(
            "compact peers6 blob of {} bytes is not a multiple of 18",
            blob.len()
        )));
    }
    Ok(blob
        .chunks_exact(18)
        .map(|c| {
            let octets: [u8; 16] = c[..16].try_into().expect("16 bytes");
            SocketAddrV6::new(
                Ipv6Addr::from(octets),
                u16::from_be_bytes([c[16], c[17]]),
                0,
                0,
            )
        })
        .collect())
}
