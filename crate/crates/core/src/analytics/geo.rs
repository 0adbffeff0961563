use std::collections::HashMap;
use std::str::FromStr;

use serde::Serialize;

use super::{AnalyticsError, Pct2};
use crate::geodb::country_name;
use crate::peerstore::{selector, GeoFields, PeerFilter, PeerStore, SetMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeoLevel {
    Country,
    /// US states or Canadian provinces; needs a US or CA scope.
    State,
    City,
    Isp,
}

impl FromStr for GeoLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "country" => Ok(GeoLevel::Country),
            "state" => Ok(GeoLevel::State),
            "city" => Ok(GeoLevel::City),
            "isp" => Ok(GeoLevel::Isp),
            other => Err(format!("unknown geo level {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GeoRow {
    pub rank: u32,
    pub label: String,
    pub count: u64,
    /// Share of all scoped peers with a known value at this level.
    pub pct: Pct2,
    pub cumulative_pct: Pct2,
}

fn label(level: GeoLevel, g: &GeoFields) -> Option<String> {
    let v = match level {
        GeoLevel::Country => &g.country,
        GeoLevel::State => &g.state,
        GeoLevel::City => &g.city,
        GeoLevel::Isp => &g.isp,
    };
    if v.is_empty() {
        return None;
    }
    Some(match level {
        GeoLevel::City => {
            let country = country_name(&g.country).unwrap_or(&g.country);
            if country.is_empty() {
                v.clone()
            } else {
                format!("{v}, {country}")
            }
        }
        _ => v.clone(),
    })
}

/// Ranks values at `level` over `(geo, weight)` items, e.g. one item per peer
/// with weight 1, or pre-aggregated rows. `scope` restricts to one country.
/// Ties are broken by label.
pub fn geo_top_weighted<'a>(
    items: impl IntoIterator<Item = (&'a GeoFields, u64)>,
    level: GeoLevel,
    n: usize,
    scope: Option<&str>,
) -> Result<Vec<GeoRow>, AnalyticsError> {
    if level == GeoLevel::State && !matches!(scope, Some("US") | Some("CA")) {
        return Err(AnalyticsError::BadScope(
            "state level needs scope US or CA".into(),
        ));
    }
    let mut tally: HashMap<String, u64> = HashMap::new();
    let mut total = 0u64;
    for (g, w) in items {
        if scope.is_some_and(|s| s != g.country) {
            continue;
        }
        if let Some(l) = label(level, g) {
            *tally.entry(l).or_default() += w;
            total += w;
        }
    }
    let mut ranked: Vec<(String, u64)> = tally.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let mut cumulative = 0;
    Ok(ranked
        .into_iter()
        .take(n)
        .enumerate()
        .map(|(i, (label, count))| {
            cumulative += count;
            GeoRow {
                rank: i as u32 + 1,
                label,
                count,
                pct: Pct2::of(count, total),
                cumulative_pct: Pct2::of(cumulative, total),
            }
        })
        .collect())
}

/// Top `n` values over the store's distinct peers, optionally only those seen
/// in any of `torrents`.
pub fn geo_top(
    store: &PeerStore,
    level: GeoLevel,
    n: usize,
    scope: Option<&str>,
    torrents: Option<&[u32]>,
) -> Result<Vec<GeoRow>, AnalyticsError> {
    let mut filter = PeerFilter::default();
    if let Some(ids) = torrents {
        filter.membership = Some((selector(store, ids)?, SetMode::Union));
    }
    geo_top_weighted(store.peers_matching(&filter).map(|p| (&p.geo, 1)), level, n, scope)
}
