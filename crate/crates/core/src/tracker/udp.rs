use std::io;
use std::net::{SocketAddr, ToSocketAddrs, UdpSocket};
use std::time::{Duration, Instant};

use super::compact::parse_compact_v4;
use super::{AnnounceRequest, AnnounceResponse, TrackerError};

pub const UDP_PROTOCOL_ID: u64 = 0x0417_2710_1980;
pub const ACTION_CONNECT: u32 = 0;
pub const ACTION_ANNOUNCE: u32 = 1;
pub const ACTION_ERROR: u32 = 3;

const MAX_DATAGRAM: usize = 65_536;

/// 16-byte connect request.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConnectPacket {
    pub transaction_id: u32,
}

impl ConnectPacket {
    pub fn to_bytes(self) -> [u8; 16] {
        let mut out = [0u8; 16];
        out[..8].copy_from_slice(&UDP_PROTOCOL_ID.to_be_bytes());
        out[8..12].copy_from_slice(&ACTION_CONNECT.to_be_bytes());
        out[12..].copy_from_slice(&self.transaction_id.to_be_bytes());
        out
    }
}

/// 98-byte announce request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnouncePacket<'a> {
    pub connection_id: u64,
    pub transaction_id: u32,
    pub key: u32,
    pub request: &'a AnnounceRequest,
}

impl AnnouncePacket<'_> {
    pub fn to_bytes(&self) -> [u8; 98] {
        let r = self.request;
        let mut out = [0u8; 98];
        out[0..8].copy_from_slice(&self.connection_id.to_be_bytes());
        out[8..12].copy_from_slice(&ACTION_ANNOUNCE.to_be_bytes());
        out[12..16].copy_from_slice(&self.transaction_id.to_be_bytes());
        out[16..36].copy_from_slice(r.infohash.as_bytes());
        out[36..56].copy_from_slice(&r.peer_id.0);
        out[56..64].copy_from_slice(&r.downloaded.to_be_bytes());
        out[64..72].copy_from_slice(&r.left.to_be_bytes());
        out[72..80].copy_from_slice(&r.uploaded.to_be_bytes());
        out[80..84].copy_from_slice(&r.event.code().to_be_bytes());
        // 84..88: IP address, 0 = use the packet's source
        out[88..92].copy_from_slice(&self.key.to_be_bytes());
        let numwant = i32::try_from(r.numwant).unwrap_or(i32::MAX);
        out[92..96].copy_from_slice(&numwant.to_be_bytes());
        out[96..98].copy_from_slice(&r.port.to_be_bytes());
        out
    }
}

fn be_u32(buf: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(buf[at..at + 4].try_into().expect("4 bytes"))
}

fn check_header(buf: &[u8], sent: u32, expected_action: u32, min_len: usize) -> Result<(), TrackerError> {
    if buf.len() < 8 {
        return Err(TrackerError::MalformedResponse(format!(
            "{}-byte datagram",
            buf.len()
        )));
    }
    let got = be_u32(buf, 4);
    if got != sent {
        return Err(TrackerError::TransactionIdMismatch { sent, got });
    }
    match be_u32(buf, 0) {
        ACTION_ERROR => Err(TrackerError::ErrorResponse(
            String::from_utf8_lossy(&buf[8..]).into_owned(),
        )),
        action if action != expected_action => Err(TrackerError::MalformedResponse(format!(
            "unexpected action {action}"
        ))),
        _ if buf.len() < min_len => Err(TrackerError::MalformedResponse(format!(
            "{}-byte reply, expected at least {min_len}",
            buf.len()
        ))),
        _ => Ok(()),
    }
}

/// Returns the connection id from a connect reply.
pub fn parse_connect_reply(buf: &[u8], sent_tx: u32) -> Result<u64, TrackerError> {
    check_header(buf, sent_tx, ACTION_CONNECT, 16)?;
    Ok(u64::from_be_bytes(buf[8..16].try_into().expect("8 bytes")))
}

pub fn parse_announce_reply(buf: &[u8], sent_tx: u32) -> Result<AnnounceResponse, TrackerError> {
    check_header(buf, sent_tx, ACTION_ANNOUNCE, 20)?;
    let mut resp = AnnounceResponse {
        interval: be_u32(buf, 8),
        leechers: be_u32(buf, 12),
        seeders: be_u32(buf, 16),
        peers: parse_compact_v4(&buf[20..])?,
        peers6: Vec::new(),
    };
    resp.normalize();
    Ok(resp)
}

/// UDP tracker client with a per-attempt timeout schedule.
#[derive(Debug, Clone)]
pub struct UdpTracker {
    /// One entry per attempt; the default is 15 s, 30 s, 60 s.
    pub timeouts: Vec<Duration>,
}

impl Default for UdpTracker {
    fn default() -> Self {
        UdpTracker {
            timeouts: [15, 30, 60].map(Duration::from_secs).to_vec(),
        }
    }
}

impl UdpTracker {
    pub fn with_timeouts(timeouts: Vec<Duration>) -> Self {
        UdpTracker { timeouts }
    }

    /// Announces to a `udp://host:port[/path]` URL.
    pub fn announce_url(
        &self,
        url: &str,
        req: &AnnounceRequest,
    ) -> Result<AnnounceResponse, TrackerError> {
        let parsed = url::Url::parse(url).map_err(|e| TrackerError::Transport(e.to_string()))?;
        if parsed.scheme() != "udp" {
            return Err(TrackerError::UnsupportedScheme(parsed.scheme().to_string()));
        }
        let host = parsed
            .host_str()
            .ok_or_else(|| TrackerError::Transport("udp tracker URL has no host".into()))?;
        let port = parsed
            .port()
            .ok_or_else(|| TrackerError::Transport("udp tracker URL has no port".into()))?;
        self.announce((host.trim_matches(['[', ']']), port), req)
    }

    pub fn announce(
        &self,
        endpoint: impl ToSocketAddrs,
        req: &AnnounceRequest,
    ) -> Result<AnnounceResponse, TrackerError> {
        req.validate()?;
        let target = endpoint
            .to_socket_addrs()
            .map_err(|e| TrackerError::Transport(e.to_string()))?
            .next()
            .ok_or_else(|| TrackerError::Transport("endpoint did not resolve".into()))?;
        let bind: SocketAddr = if target.is_ipv4() {
            "0.0.0.0:0".parse().expect("literal")
        } else {
            "[::]:0".parse().expect("literal")
        };
        let socket = UdpSocket::bind(bind).map_err(|e| TrackerError::Transport(e.to_string()))?;
        let mut buf = vec![0u8; MAX_DATAGRAM];

        for timeout in &self.timeouts {
            let deadline = Instant::now() + *timeout;
            let tx = rand::random::<u32>();
            send(&socket, &ConnectPacket { transaction_id: tx }.to_bytes(), target)?;
            let Some(n) = recv_from_target(&socket, target, deadline, &mut buf)? else {
                continue;
            };
            let connection_id = parse_connect_reply(&buf[..n], tx)?;

            let tx = rand::random::<u32>();
            let packet = AnnouncePacket {
                connection_id,
                transaction_id: tx,
                key: rand::random(),
                request: req,
            };
            send(&socket, &packet.to_bytes(), target)?;
            let Some(n) = recv_from_target(&socket, target, deadline, &mut buf)? else {
                continue;
            };
            return parse_announce_reply(&buf[..n], tx);
        }
        Err(TrackerError::Timeout {
            attempts: self.timeouts.len(),
        })
    }
}

fn send(socket: &UdpSocket, packet: &[u8], target: SocketAddr) -> Result<(), TrackerError> {
    socket
        .send_to(packet, target)
        .map(drop)
        .map_err(|e| TrackerError::Transport(e.to_string()))
}

/// Waits for a datagram from `target` until `deadline`; `None` on timeout.
fn recv_from_target(
    socket: &UdpSocket,
    target: SocketAddr,
    deadline: Instant,
    buf: &mut [u8],
) -> Result<Option<usize>, TrackerError> {
    loop {
        let remaining = deadline.saturating_duration_since(Instant::now());
        if remaining.is_zero() {
            return Ok(None);
        }
        socket
            .set_read_timeout(Some(remaining))
            .map_err(|e| TrackerError::Transport(e.to_string()))?;
        match socket.recv_from(buf) {
            Ok((n, from)) if from == target => return Ok(Some(n)),
            Ok(_) => continue,
            Err(e)
                if matches!(
                    e.kind(),
                    io::ErrorKind::WouldBlock
                        | io::ErrorKind::TimedOut
                        | io::ErrorKind::ConnectionRefused
                ) =>
            {
                if e.kind() == io::ErrorKind::ConnectionRefused {
                    std::thread::sleep(remaining.min(Duration::from_millis(5)));
                    continue;
                }
                return Ok(None);
            }
            Err(e) => return Err(TrackerError::Transport(e.to_string())),
        }
    }
}

pub fn udp_announce(
    endpoint: impl ToSocketAddrs,
    req: &AnnounceRequest,
) -> Result<AnnounceResponse, TrackerError> {
    UdpTracker::default().announce(endpoint, req)
}
