use std::net::{SocketAddr, UdpSocket};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use log::debug;

use super::tracker::TrackerCore;

const HTTP_WORKERS: usize = 4;
const POLL: Duration = Duration::from_millis(50);

/// HTTP and UDP tracker endpoints on loopback, backed by one core. Both
/// stop when dropped.
pub struct MockServers {
    pub http_addr: SocketAddr,
    pub udp_addr: SocketAddr,
    shutdown: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
}

impl MockServers {
    pub fn start(core: Arc<TrackerCore>) -> std::io::Result<Self> {
        let http = Arc::new(
            tiny_http::Server::http("127.0.0.1:0").map_err(|e| std::io::Error::other(e.to_string()))?,
        );
        let http_addr = http
            .server_addr()
            .to_ip()
            .ok_or_else(|| std::io::Error::other("http server has no ip address"))?;
        let udp = UdpSocket::bind("127.0.0.1:0")?;
        udp.set_read_timeout(Some(POLL))?;
        let udp_addr = udp.local_addr()?;
        let shutdown = Arc::new(AtomicBool::new(false));

        let mut threads = Vec::new();
        for _ in 0..HTTP_WORKERS {
            let server = http.clone();
            let core = core.clone();
            let stop = shutdown.clone();
            threads.push(std::thread::spawn(move || {
                while !stop.load(Ordering::Relaxed) {
                    match server.recv_timeout(POLL) {
                        Ok(Some(request)) => serve_http(&core, request),
                        Ok(None) => {}
                        Err(e) => debug!("http accept failed: {e}"),
                    }
                }
            }));
        }
        let stop = shutdown.clone();
        threads.push(std::thread::spawn(move || {
            let mut buf = [0u8; 2048];
            while !stop.load(Ordering::Relaxed) {
                let Ok((n, from)) = udp.recv_from(&mut buf) else { continue };
                if let Some(reply) = core.udp_packet(&buf[..n]) {
                    if let Err(e) = udp.send_to(&reply, from) {
                        debug!("udp reply to {from} failed: {e}");
                    }
                }
            }
        }));

        Ok(MockServers {
            http_addr,
            udp_addr,
            shutdown,
            threads,
        })
    }

    pub fn http_announce_url(&self) -> String {
        format!("http://{}/announce", self.http_addr)
    }

    pub fn udp_announce_url(&self) -> String {
        format!("udp://{}", self.udp_addr)
    }
}

fn serve_http(core: &TrackerCore, request: tiny_http::Request) {
    let url = request.url().to_string();
    let (path, query) = url.split_once('?').unwrap_or((&url, ""));
    let body = if path.ends_with("/scrape") {
        Some(core.http_scrape(query))
    } else if path.ends_with("/announce") {
        core.http_announce(query)
    } else {
        let _ = request.respond(tiny_http::Response::empty(404));
        return;
    };
    let result = match body {
        Some(body) => request.respond(tiny_http::Response::from_data(body)),
        // never answered; the client runs into its timeout
        None => {
            drop(request.into_writer());
            return;
        }
    };
    if let Err(e) = result {
        debug!("http reply failed: {e}");
    }
}

impl Drop for MockServers {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::Relaxed);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}
