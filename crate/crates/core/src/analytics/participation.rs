use serde::Serialize;

use super::{AnalyticsError, Pct2};
use crate::peerstore::{selector, total_distinct, Membership, MembershipCounts, SetMode, TorrentRegistry};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParticipationRow {
    pub label: String,
    #[serde(serialize_with = "ids_str")]
    pub torrent_ids: Vec<u32>,
    pub distinct_ips: u64,
    pub overall_pct: Pct2,
}

fn ids_str<S: serde::Serializer>(ids: &[u32], s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(&Membership::from_ids(ids.iter().copied()))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParticipationReport {
    /// Distinct IPs across every monitored torrent; the percentage base.
    pub global_distinct: u64,
    pub rows: Vec<ParticipationRow>,
}

fn report(
    counts: &dyn MembershipCounts,
    groups: impl IntoIterator<Item = (String, Vec<u32>)>,
) -> Result<ParticipationReport, AnalyticsError> {
    let histogram = counts.membership_histogram();
    let global = total_distinct(counts);
    if global == 0 {
        return Err(AnalyticsError::EmptyStore);
    }
    let mut rows = Vec::new();
    for (label, ids) in groups {
        let sel = selector(counts, &ids)?;
        let distinct = histogram
            .iter()
            .filter(|(m, _)| SetMode::Union.matches(m, &sel))
            .map(|(_, n)| n)
            .sum();
        rows.push(ParticipationRow {
            label,
            torrent_ids: ids,
            distinct_ips: distinct,
            overall_pct: Pct2::of(distinct, global),
        });
    }
    Ok(ParticipationReport {
        global_distinct: global,
        rows,
    })
}

/// One row per registered torrent.
pub fn swarm_table(
    registry: &TorrentRegistry,
    counts: &dyn MembershipCounts,
) -> Result<ParticipationReport, AnalyticsError> {
    report(counts, registry.entries().iter().map(|e| (e.name.clone(), vec![e.id])))
}

/// One row per episode: the union of that episode's releases.
pub fn episode_table(
    registry: &TorrentRegistry,
    counts: &dyn MembershipCounts,
) -> Result<ParticipationReport, AnalyticsError> {
    report(counts, registry.episodes().into_iter().map(|(k, ids)| (k.to_string(), ids)))
}

/// One nonempty Venn region: peers in exactly the listed sets of the family.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VennRegion {
    /// Set labels joined by ` & `.
    pub region: String,
    #[serde(skip)]
    pub sets: Vec<usize>,
    pub count: u64,
    /// Share of the family union.
    pub pct: Pct2,
}

/// `|A ∩ B| / |A ∪ B|` for one pair of sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PairShare {
    pub a: String,
    pub b: String,
    pub intersection: u64,
    pub union: u64,
    pub share: Pct2,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VennReport {
    pub labels: Vec<String>,
    pub union: u64,
    /// All `2^k - 1` regions in mask order (A, B, A&B, C, ...), zeros included.
    pub regions: Vec<VennRegion>,
    pub pairs: Vec<PairShare>,
}

impl VennReport {
    /// Count of the region holding exactly `sets` (indices into `labels`).
    pub fn region(&self, sets: &[usize]) -> u64 {
        self.regions
            .iter()
            .find(|r| r.sets == sets)
            .map_or(0, |r| r.count)
    }
}

/// Venn regions for 2 or 3 labeled selectors. A peer belongs to set `i` when
/// its membership intersects selector `i`, so a selector can be a whole
/// episode or show.
pub fn cross_participation(
    counts: &dyn MembershipCounts,
    selectors: &[(String, Vec<u32>)],
) -> Result<VennReport, AnalyticsError> {
    let k = selectors.len();
    if !(2..=3).contains(&k) {
        return Err(AnalyticsError::SelectorArity(k));
    }
    let sels = selectors
        .iter()
        .map(|(_, ids)| selector(counts, ids))
        .collect::<Result<Vec<_>, _>>()?;
    let mut by_mask = vec![0u64; 1 << k];
    for (m, n) in counts.membership_histogram() {
        let mask = sels
            .iter()
            .enumerate()
            .filter(|(_, s)| m.intersects(s))
            .fold(0usize, |acc, (i, _)| acc | 1 << i);
        by_mask[mask] += n;
    }
    let union: u64 = by_mask[1..].iter().sum();
    let labels: Vec<String> = selectors.iter().map(|(l, _)| l.clone()).collect();
    let regions = (1..1usize << k)
        .map(|mask| {
            let sets: Vec<usize> = (0..k).filter(|i| mask >> i & 1 == 1).collect();
            VennRegion {
                region: sets.iter().map(|&i| labels[i].as_str()).collect::<Vec<_>>().join(" & "),
                sets,
                count: by_mask[mask],
                pct: Pct2::of(by_mask[mask], union),
            }
        })
        .collect();
    let mut pairs = Vec::new();
    for a in 0..k {
        for b in a + 1..k {
            let (mut inter, mut uni) = (0, 0);
            for (mask, &n) in by_mask.iter().enumerate() {
                let (ina, inb) = (mask >> a & 1 == 1, mask >> b & 1 == 1);
                if ina && inb {
                    inter += n;
                }
                if ina || inb {
                    uni += n;
                }
            }
            pairs.push(PairShare {
                a: labels[a].clone(),
                b: labels[b].clone(),
                intersection: inter,
                union: uni,
                share: Pct2::of(inter, uni),
            });
        }
    }
    Ok(VennReport {
        labels,
        union,
        regions,
        pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bencode::InfoHash;
    use crate::peerstore::{RegionCounts, TorrentEntry};
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn entry(id: u32, show: &str, ep: u32) -> TorrentEntry {
        TorrentEntry {
            id,
            infohash: InfoHash([id as u8; 20]),
            name: format!("{show} {ep} #{id}"),
            size: 0,
            show: show.into(),
            season: 1,
            episode: ep,
            release_tag: String::new(),
            source: None,
        }
    }

    fn counts(n: u32, regions: &[(&[u32], u64)]) -> RegionCounts {
        let mut rc = RegionCounts::new(n);
        for (ids, c) in regions {
            rc.add(Membership::from_ids(ids.iter().copied()), *c).unwrap();
        }
        rc
    }

    #[test]
    fn single_torrent_is_everything() {
        let reg = TorrentRegistry::new(vec![entry(1, "S", 1)]).unwrap();
        let r = swarm_table(&reg, &counts(1, &[(&[1], 7)])).unwrap();
        assert_eq!(r.rows[0].overall_pct.to_string(), "100.00");
        assert!(matches!(swarm_table(&reg, &RegionCounts::new(1)), Err(AnalyticsError::EmptyStore)));
    }

    #[test]
    fn disjoint_releases_add_up() {
        let reg = TorrentRegistry::new(vec![entry(1, "S", 1), entry(2, "S", 1), entry(3, "S", 2)]).unwrap();
        let rc = counts(3, &[(&[1], 30), (&[2], 20), (&[3], 50)]);
        let eps = episode_table(&reg, &rc).unwrap();
        assert_eq!(eps.rows[0].label, "S S01E01");
        assert_eq!(eps.rows[0].distinct_ips, 50);
        assert_eq!(eps.rows[0].overall_pct.to_string(), "50.00");
    }

    #[test]
    fn pairwise_share_uses_union_base() {
        let rc = counts(2, &[(&[1], 500), (&[2], 335), (&[1, 2], 165)]);
        let v = cross_participation(&rc, &[("A".into(), vec![1]), ("B".into(), vec![2])]).unwrap();
        assert_eq!(v.union, 1000);
        assert_eq!(v.pairs[0].share.to_string(), "16.50");
        assert_eq!(v.regions.iter().map(|r| r.region.as_str()).collect::<Vec<_>>(), ["A", "B", "A & B"]);

        let disjoint = counts(2, &[(&[1], 5), (&[2], 5)]);
        let v = cross_participation(&disjoint, &[("A".into(), vec![1]), ("B".into(), vec![2])]).unwrap();
        assert_eq!(v.pairs[0].share, Pct2(0));
    }

    #[test]
    fn arity_is_checked() {
        let rc = counts(4, &[(&[1], 1)]);
        let one = [("A".to_string(), vec![1])];
        assert!(matches!(cross_participation(&rc, &one), Err(AnalyticsError::SelectorArity(1))));
        let four: Vec<_> = (1..=4).map(|i| (i.to_string(), vec![i])).collect();
        assert!(matches!(cross_participation(&rc, &four), Err(AnalyticsError::SelectorArity(4))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn venn_matches_brute_force(
            peers in prop::collection::vec(prop::collection::btree_set(1u32..=4, 1..=4), 0..500),
            three in any::<bool>(),
        ) {
            let mut rc = RegionCounts::new(4);
            for p in &peers {
                rc.add(Membership::from_ids(p.iter().copied()), 1).unwrap();
            }
            let mut sels = vec![("A".to_string(), vec![1, 2]), ("B".to_string(), vec![3])];
            if three {
                sels.push(("C".to_string(), vec![2, 4]));
            }
            let v = cross_participation(&rc, &sels).unwrap();
            let set_of = |p: &BTreeSet<u32>| -> Vec<usize> {
                sels.iter().enumerate().filter(|(_, (_, ids))| ids.iter().any(|i| p.contains(i))).map(|(i, _)| i).collect()
            };
            for r in &v.regions {
                let brute = peers.iter().filter(|p| set_of(p) == r.sets).count() as u64;
                prop_assert_eq!(r.count, brute);
            }
            let brute_union = peers.iter().filter(|p| !set_of(p).is_empty()).count() as u64;
            prop_assert_eq!(v.union, brute_union);
            prop_assert_eq!(v.regions.iter().map(|r| r.count).sum::<u64>(), v.union);
            if v.union > 0 {
                let pct: u64 = v.regions.iter().map(|r| r.pct.hundredths()).sum();
                prop_assert!(pct.abs_diff(10_000) <= v.regions.len() as u64);
            }
        }
    }
}
