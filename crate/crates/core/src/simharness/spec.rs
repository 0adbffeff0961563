use std::f64::consts::PI;
use std::path::Path;

use chrono::{DateTime, Timelike, Utc};
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::geodb::RegionClass;

/// Synthetic population description. Loaded from TOML:
///
/// ```toml
/// seed = 7
/// start = "2013-08-12T00:00:00Z"
/// duration_secs = 86400
/// session_secs = 600
/// churn = 1.0
///
/// [diurnal]
/// floor = 0.05
/// amplitude = 0.9
/// peak_local_hour = 20.5
/// half_width_hours = 3.0
///
/// [regions]
/// europe = 0.4
/// north_america = 0.4
/// australia = 0.2
///
/// [[swarm]]
/// size = 500
///
/// [[swarm]]
/// size = 300
///
/// # membership[i][j]: probability that a peer of swarm i also joins swarm j
/// membership = [[1.0, 0.1], [0.0, 1.0]]
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PopulationSpec {
    pub seed: u64,
    /// RFC 3339 string.
    pub start: DateTime<Utc>,
    pub duration_secs: u64,
    /// Length of one on/off slot; the mean session scale.
    pub session_secs: u64,
    /// Probability that a peer re-draws its on/off state at a slot boundary.
    /// Zero keeps every peer online for the whole run.
    pub churn: f64,
    pub seeder_share: f64,
    pub diurnal: Diurnal,
    pub regions: RegionMix,
    #[serde(rename = "swarm")]
    pub swarms: Vec<SwarmSpec>,
    /// Row `i`, column `j`: probability that a peer whose home is swarm `i`
    /// also joins swarm `j`. The diagonal is ignored. Empty means no overlap.
    pub membership: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SwarmSpec {
    /// Target distinct peers over the run.
    pub size: u32,
    pub name: Option<String>,
}

impl Default for SwarmSpec {
    fn default() -> Self {
        SwarmSpec { size: 100, name: None }
    }
}

/// Online probability by local hour `h`:
/// `floor + amplitude * cos(pi * d / (2 * half_width))` where `d` is the
/// distance from the peak hour, and just `floor` once `|d| >= half_width`.
/// A half-width of 6 h gives one 12-hour hump per day.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Diurnal {
    pub floor: f64,
    pub amplitude: f64,
    pub peak_local_hour: f64,
    pub half_width_hours: f64,
}

impl Default for Diurnal {
    fn default() -> Self {
        Diurnal {
            floor: 0.2,
            amplitude: 0.6,
            peak_local_hour: 20.5,
            half_width_hours: 6.0,
        }
    }
}

impl Diurnal {
    pub fn probability(&self, local_hour: f64) -> f64 {
        let d = (local_hour - self.peak_local_hour + 12.0).rem_euclid(24.0) - 12.0;
        if d.abs() >= self.half_width_hours {
            self.floor
        } else {
            self.floor + self.amplitude * (PI * d / (2.0 * self.half_width_hours)).cos()
        }
    }

    pub fn probability_at(&self, t: DateTime<Utc>, region: RegionClass) -> f64 {
        let utc_hour = f64::from(t.num_seconds_from_midnight()) / 3600.0
            + f64::from(t.nanosecond()) / 3.6e12;
        self.probability(utc_hour + f64::from(region_offset(region)))
    }
}

/// Fixed offset used for a region's local time. Peers of unknown or other
/// regions follow UTC.
pub fn region_offset(region: RegionClass) -> i32 {
    region.utc_offset_hours().unwrap_or(0)
}

/// Shares of peers per region; must sum to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegionMix {
    pub europe: f64,
    pub north_america: f64,
    pub australia: f64,
    pub other: f64,
    /// Peers given addresses outside every geo range.
    pub unresolvable: f64,
}

impl Default for RegionMix {
    fn default() -> Self {
        RegionMix {
            europe: 0.45,
            north_america: 0.35,
            australia: 0.05,
            other: 0.15,
            unresolvable: 0.0,
        }
    }
}

impl RegionMix {
    pub fn shares(&self) -> [(RegionClass, f64); 5] {
        [
            (RegionClass::Europe, self.europe),
            (RegionClass::NorthAmerica, self.north_america),
            (RegionClass::Australia, self.australia),
            (RegionClass::Other, self.other),
            (RegionClass::Unknown, self.unresolvable),
        ]
    }
}

impl Default for PopulationSpec {
    fn default() -> Self {
        PopulationSpec {
            seed: 1,
            start: DateTime::parse_from_rfc3339("2013-08-12T00:00:00Z")
                .expect("valid literal")
                .with_timezone(&Utc),
            duration_secs: 86_400,
            session_secs: 600,
            churn: 0.3,
            seeder_share: 0.2,
            diurnal: Diurnal::default(),
            regions: RegionMix::default(),
            swarms: vec![SwarmSpec::default()],
            membership: Vec::new(),
        }
    }
}

fn unit(name: &str, v: f64) -> Result<(), SimError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(SimError::InvalidSpec(format!("{name} must be in [0, 1], got {v}")))
    }
}

impl PopulationSpec {
    pub fn from_toml_str(s: &str) -> Result<Self, SimError> {
        let spec: PopulationSpec = toml::from_str(s).map_err(|e| SimError::InvalidSpec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SimError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidSpec(m));
        if self.swarms.is_empty() {
            return bad("at least one swarm is required".into());
        }
        if self.duration_secs == 0 || self.session_secs == 0 {
            return bad("duration_secs and session_secs must be positive".into());
        }
        unit("churn", self.churn)?;
        unit("seeder_share", self.seeder_share)?;
        unit("diurnal.floor", self.diurnal.floor)?;
        unit("diurnal.amplitude", self.diurnal.amplitude)?;
        if self.diurnal.floor + self.diurnal.amplitude > 1.0 + 1e-12 {
            return bad("diurnal.floor + diurnal.amplitude must not exceed 1".into());
        }
        if !(0.0..24.0).contains(&self.diurnal.peak_local_hour) {
            return bad("diurnal.peak_local_hour must be in [0, 24)".into());
        }
        if !(self.diurnal.half_width_hours > 0.0 && self.diurnal.half_width_hours <= 12.0) {
            return bad("diurnal.half_width_hours must be in (0, 12]".into());
        }
        let mut sum = 0.0;
        for (region, share) in self.regions.shares() {
            unit(&format!("regions.{region}"), share)?;
            sum += share;
        }
        if (sum - 1.0).abs() > 1e-9 {
            return bad(format!("region shares sum to {sum}, not 1"));
        }
        if !self.membership.is_empty() {
            let n = self.swarms.len();
            if self.membership.len() != n || self.membership.iter().any(|row| row.len() != n) {
                return bad(format!("membership must be a {n}x{n} matrix"));
            }
            for (i, row) in self.membership.iter().enumerate() {
                for (j, &p) in row.iter().enumerate() {
                    unit(&format!("membership[{i}][{j}]"), p)?;
                }
            }
        }
        Ok(())
    }

    /// Three regions peaking at 20:30 local, with humps narrow enough that
    /// Europe (UTC+1) and North America (UTC-5), six hours apart, stay
    /// separate maxima. Starts at 14:00 UTC so every 24 h counted from the
    /// start holds all three peaks, none of them next to the series edges.
    pub fn three_region_diurnal(seed: u64, peers_per_region: u32, days: u64) -> Self {
        PopulationSpec {
            seed,
            start: DateTime::parse_from_rfc3339("2013-08-12T14:00:00Z")
                .expect("valid literal")
                .with_timezone(&Utc),
            duration_secs: 86_400 * days,
            session_secs: 600,
            churn: 1.0,
            diurnal: Diurnal {
                floor: 0.05,
                amplitude: 0.9,
                peak_local_hour: 20.5,
                half_width_hours: 3.0,
            },
            regions: RegionMix {
                europe: 1.0 / 3.0,
                north_america: 1.0 / 3.0,
                australia: 1.0 / 3.0,
                other: 0.0,
                unresolvable: 0.0,
            },
            swarms: vec![SwarmSpec {
                size: peers_per_region * 3,
                name: Some("diurnal".into()),
            }],
            ..Default::default()
        }
    }
}
