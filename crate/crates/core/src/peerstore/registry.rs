use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bencode::InfoHash;

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("registry is empty")]
    Empty,
    #[error("torrent ids must be dense 1..N; expected {expected}, found {found}")]
    NonDenseIds { expected: u32, found: u32 },
    #[error("infohash {0} registered twice")]
    DuplicateInfohash(InfoHash),
    #[error("torrent {0} has no show label")]
    MissingShow(u32),
    #[error("invalid registry file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One monitored torrent. Two releases of the same episode share
/// `(show, season, episode)` and differ in `release_tag`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TorrentEntry {
    pub id: u32,
    pub infohash: InfoHash,
    pub name: String,
    pub size: u64,
    pub show: String,
    pub season: u32,
    pub episode: u32,
    pub release_tag: String,
    /// `.torrent` path or magnet URI the entry was built from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

impl TorrentEntry {
    pub fn episode_key(&self) -> EpisodeKey {
        EpisodeKey {
            show: self.show.clone(),
            season: self.season,
            episode: self.episode,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EpisodeKey {
    pub show: String,
    pub season: u32,
    pub episode: u32,
}

impl std::fmt::Display for EpisodeKey {
    /// `Breaking Bad S05E09`
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} S{:02}E{:02}", self.show, self.season, self.episode)
    }
}

#[derive(Serialize, Deserialize)]
struct RegistryFile {
    torrent: Vec<TorrentEntry>,
}

/// Torrent ids and labels. Stored as TOML, one `[[torrent]]` table per entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TorrentRegistry {
    entries: Vec<TorrentEntry>,
}

impl TorrentRegistry {
    /// Entries may arrive in any order; ids must form exactly 1..N.
    pub fn new(mut entries: Vec<TorrentEntry>) -> Result<Self, RegistryError> {
        if entries.is_empty() {
            return Err(RegistryError::Empty);
        }
        entries.sort_by_key(|e| e.id);
        let mut seen = HashSet::new();
        for (i, e) in entries.iter().enumerate() {
            let expected = i as u32 + 1;
            if e.id != expected {
                return Err(RegistryError::NonDenseIds {
                    expected,
                    found: e.id,
                });
            }
            if !seen.insert(e.infohash) {
                return Err(RegistryError::DuplicateInfohash(e.infohash));
            }
            if e.show.trim().is_empty() {
                return Err(RegistryError::MissingShow(e.id));
            }
        }
        Ok(TorrentRegistry { entries })
    }

    pub fn from_toml_str(s: &str) -> Result<Self, RegistryError> {
        let file: RegistryFile = toml::from_str(s)?;
        TorrentRegistry::new(file.torrent)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RegistryError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(&RegistryFile {
            torrent: self.entries.clone(),
        })
        .expect("registry serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), RegistryError> {
        std::fs::write(path, self.to_toml_string())?;
        Ok(())
    }

    pub fn len(&self) -> u32 {
        self.entries.len() as u32
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[TorrentEntry] {
        &self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.entries.iter().map(|e| e.id)
    }

    pub fn get(&self, id: u32) -> Option<&TorrentEntry> {
        id.checked_sub(1).and_then(|i| self.entries.get(i as usize))
    }

    pub fn contains(&self, id: u32) -> bool {
        self.get(id).is_some()
    }

    pub fn by_infohash(&self, infohash: &InfoHash) -> Option<&TorrentEntry> {
        self.entries.iter().find(|e| e.infohash == *infohash)
    }

    /// Episodes in order of their lowest torrent id, with member ids ascending.
    pub fn episodes(&self) -> Vec<(EpisodeKey, Vec<u32>)> {
        let mut out: Vec<(EpisodeKey, Vec<u32>)> = Vec::new();
        for e in &self.entries {
            let key = e.episode_key();
            match out.iter_mut().find(|(k, _)| *k == key) {
                Some((_, ids)) => ids.push(e.id),
                None => out.push((key, vec![e.id])),
            }
        }
        out
    }

    /// Torrent ids per show, in order of first appearance.
    pub fn shows(&self) -> Vec<(String, Vec<u32>)> {
        let mut out: Vec<(String, Vec<u32>)> = Vec::new();
        for e in &self.entries {
            match out.iter_mut().find(|(s, _)| *s == e.show) {
                Some((_, ids)) => ids.push(e.id),
                None => out.push((e.show.clone(), vec![e.id])),
            }
        }
        out
    }
}
