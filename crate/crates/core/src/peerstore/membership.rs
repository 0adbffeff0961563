use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

/// Per-peer torrent membership flags: bit `id - 1` is set when the peer was
/// seen in torrent `id`. One word covers 64 torrents; wider registries spill
/// into more words. Trailing zero words are always trimmed so equal sets
/// compare and hash equal.
#[derive(Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "Vec<u64>", into = "Vec<u64>")]
pub struct Membership {
    words: SmallVec<[u64; 1]>,
}

impl From<Vec<u64>> for Membership {
    fn from(mut words: Vec<u64>) -> Self {
        while words.last() == Some(&0) {
            words.pop();
        }
        Membership {
            words: SmallVec::from_vec(words),
        }
    }
}

impl From<Membership> for Vec<u64> {
    fn from(m: Membership) -> Self {
        m.words.into_vec()
    }
}

impl Membership {
    pub fn new() -> Self {
        Membership::default()
    }

    pub fn from_ids(ids: impl IntoIterator<Item = u32>) -> Self {
        let mut m = Membership::new();
        for id in ids {
            m.insert(id);
        }
        m
    }

    /// Sets the flag for torrent `id` (1-based). Returns true if it was unset.
    pub fn insert(&mut self, id: u32) -> bool {
        assert!(id >= 1, "torrent ids start at 1");
        let (w, b) = split(id);
        if self.words.len() <= w {
            self.words.resize(w + 1, 0);
        }
        let was = self.words[w] & b != 0;
        self.words[w] |= b;
        !was
    }

    pub fn contains(&self, id: u32) -> bool {
        if id == 0 {
            return false;
        }
        let (w, b) = split(id);
        self.words.get(w).is_some_and(|word| word & b != 0)
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn len(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    /// Set ids in ascending order.
    pub fn ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.words.iter().enumerate().flat_map(|(i, &word)| {
            (0..64u32)
                .filter(move |b| word >> b & 1 == 1)
                .map(move |b| i as u32 * 64 + b + 1)
        })
    }

    pub fn intersects(&self, other: &Membership) -> bool {
        self.words.iter().zip(&other.words).any(|(a, b)| a & b != 0)
    }

    pub fn is_superset_of(&self, other: &Membership) -> bool {
        other
            .words
            .iter()
            .enumerate()
            .all(|(i, &b)| self.words.get(i).copied().unwrap_or(0) & b == b)
    }

    /// Highest set id, if any.
    pub fn max_id(&self) -> Option<u32> {
        self.ids().last()
    }
}

fn split(id: u32) -> (usize, u64) {
    let bit = id - 1;
    ((bit / 64) as usize, 1u64 << (bit % 64))
}

impl fmt::Display for Membership {
    /// `1+3` for torrents 1 and 3.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for id in self.ids() {
            if !first {
                f.write_str("+")?;
            }
            write!(f, "{id}")?;
            first = false;
        }
        Ok(())
    }
}

impl fmt::Debug for Membership {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{self}}}")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid membership {0:?}: expected ids joined by '+', e.g. 1+3")]
pub struct ParseMembershipError(pub String);

impl FromStr for Membership {
    type Err = ParseMembershipError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseMembershipError(s.to_string());
        let mut m = Membership::new();
        for part in s.split('+') {
            let id: u32 = part.trim().parse().map_err(|_| err())?;
            if id == 0 || !m.insert(id) {
                return Err(err());
            }
        }
        Ok(m)
    }
}
