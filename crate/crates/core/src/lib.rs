//! Swarm monitoring and cross-swarm analytics for BitTorrent.
//!
//! The pipeline mirrors a measurement study: trackers are announced to at a
//! high frequency until each swarm is enumerated ([`crawler`]), each crawl
//! cycle is written to an XML snapshot, snapshots are ingested into a peer
//! store with per-torrent membership bitfields ([`peerstore`]) enriched with
//! geolocation ([`geodb`]), and [`analytics`] computes distinct-IP tables,
//! Venn participation, geographic rankings and temporal series. The
//! [`simharness`] module provides a mock tracker with a known synthetic
//! population so every stage can be checked against ground truth.

pub mod bencode;
pub mod tracker;
pub mod clock;
pub mod crawler;
pub mod geodb;
pub mod peerstore;
pub mod analytics;
pub mod simharness;
