//! Scenario configuration (TOML).
//!
//! ```toml
//! seed = 42
//! start = "2020-03-02T08:00:00Z"
//! horizon_s = 3600
//! static_dir = "city"          # omit to generate the synthetic city from [city]
//!
//! [fleet]
//! diesel = 50
//! electric = 3
//! hybrid = 7
//!
//! [[faults]]
//! vehicle_id = "d-007"
//! start = "2020-03-02T00:00:00Z"
//! end = "2020-03-03T00:00:00Z"
//! ```

use super::SimError;
use crate::domain::{EnergyModel, FleetKind, TimestampMs, TopicName};
use crate::static_data::synth::SynthCityConfig;
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FleetSizes {
    pub diesel: usize,
    pub electric: usize,
    pub hybrid: usize,
}

impl Default for FleetSizes {
    fn default() -> Self {
        Self { diesel: 50, electric: 3, hybrid: 7 }
    }
}

impl FleetSizes {
    pub fn of(&self, fleet: FleetKind) -> usize {
        match fleet {
            FleetKind::Diesel => self.diesel,
            FleetKind::Electric => self.electric,
            FleetKind::Hybrid => self.hybrid,
        }
    }
}

/// Emission periods in milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Rates {
    pub telemetry_ms: i64,
    pub clever_ms: i64,
    pub weather_ms: i64,
    pub traffic_ms: i64,
}

impl Default for Rates {
    fn default() -> Self {
        Self { telemetry_ms: 1_000, clever_ms: 1_000, weather_ms: 300_000, traffic_ms: 60_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Topics {
    pub telemetry_diesel: TopicName,
    pub telemetry_electric: TopicName,
    pub telemetry_hybrid: TopicName,
    pub clever: TopicName,
    pub weather: TopicName,
    pub traffic: TopicName,
    pub occupancy: TopicName,
}

impl Default for Topics {
    fn default() -> Self {
        let t = |s: &str| TopicName::parse(s).expect("default topic names are valid");
        Self {
            telemetry_diesel: t("carta/telemetry/viriciti-diesel"),
            telemetry_electric: t("carta/telemetry/viriciti-electric"),
            telemetry_hybrid: t("carta/telemetry/viriciti-hybrid"),
            clever: t("carta/telemetry/clever"),
            weather: t("carta/weather/darksky"),
            traffic: t("carta/traffic/here"),
            occupancy: t("carta/occupancy/apc"),
        }
    }
}

impl Topics {
    pub fn telemetry(&self, fleet: FleetKind) -> &TopicName {
        match fleet {
            FleetKind::Diesel => &self.telemetry_diesel,
            FleetKind::Electric => &self.telemetry_electric,
            FleetKind::Hybrid => &self.telemetry_hybrid,
        }
    }

    pub fn all(&self) -> [&TopicName; 7] {
        [&self.telemetry_diesel, &self.telemetry_electric, &self.telemetry_hybrid, &self.clever, &self.weather, &self.traffic, &self.occupancy]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sources {
    pub clever: bool,
    pub weather: bool,
    pub traffic: bool,
    pub occupancy: bool,
}

impl Default for Sources {
    fn default() -> Self {
        Self { clever: true, weather: true, traffic: true, occupancy: true }
    }
}

/// Silences a vehicle's telemetry kit, or drops a fraction of one topic's records, over `[start, end)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fault {
    #[serde(default)]
    pub vehicle_id: Option<String>,
    #[serde(default)]
    pub topic: Option<TopicName>,
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
    #[serde(default = "one")]
    pub drop_fraction: f64,
}

fn one() -> f64 {
    1.0
}

impl Fault {
    pub fn covers(&self, ts_ms: TimestampMs) -> bool {
        self.start.timestamp_millis() <= ts_ms && ts_ms < self.end.timestamp_millis()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    pub start: DateTime<Utc>,
    pub horizon_s: u64,
    /// Simulated seconds per wall second; 0 runs unpaced.
    pub clock_acceleration: f64,
    /// Static bundle directory; when absent the synthetic city is generated from `city`.
    pub static_dir: Option<PathBuf>,
    pub city: SynthCityConfig,
    pub fleet: FleetSizes,
    pub rates: Rates,
    pub topics: Topics,
    pub sources: Sources,
    pub energy: EnergyModel,
    pub max_temp_step_c: f64,
    pub driver_pool: usize,
    pub charge_at_depot: bool,
    /// Trip to vehicle bindings overriding the schedule's `vehicle_id` column.
    pub assignments: BTreeMap<String, String>,
    pub faults: Vec<Fault>,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            seed: 1,
            start: DateTime::from_timestamp(1_583_136_000, 0).expect("valid"),
            horizon_s: 3_600,
            clock_acceleration: 0.0,
            static_dir: None,
            city: SynthCityConfig::default(),
            fleet: FleetSizes::default(),
            rates: Rates::default(),
            topics: Topics::default(),
            sources: Sources::default(),
            energy: EnergyModel::default(),
            max_temp_step_c: super::sources::DEFAULT_MAX_TEMP_STEP_C,
            driver_pool: 90,
            charge_at_depot: true,
            assignments: BTreeMap::new(),
            faults: Vec::new(),
        }
    }
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let s: Scenario = toml::from_str(text).map_err(|e| SimError::Config(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    /// Load from a file; a relative `static_dir` resolves against the file's directory.
    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::Config(format!("{}: {e}", path.display())))?;
        let mut s = Self::from_toml(&text)?;
        if let (Some(dir), Some(parent)) = (s.static_dir.as_mut(), path.parent()) {
            if dir.is_relative() {
                *dir = parent.join(&*dir);
            }
        }
        Ok(s)
    }

    pub fn start_ms(&self) -> TimestampMs {
        self.start.timestamp_millis()
    }

    pub fn end_ms(&self) -> TimestampMs {
        self.start_ms() + self.horizon_s as i64 * 1000
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let r = &self.rates;
        if [r.telemetry_ms, r.clever_ms, r.weather_ms, r.traffic_ms].iter().any(|&p| p <= 0) {
            return Err(SimError::Config("rates must be positive".into()));
        }
        if self.clock_acceleration.is_nan() || self.clock_acceleration < 0.0 {
            return Err(SimError::Config("clock_acceleration must be >= 0".into()));
        }
        if self.energy.pack_kwh <= 0.0 || self.energy.tank_gal <= 0.0 || self.energy.diesel_kwh_per_gal <= 0.0 {
            return Err(SimError::Config("energy capacities must be positive".into()));
        }
        let topics: std::collections::BTreeSet<_> = self.topics.all().into_iter().collect();
        if topics.len() != 7 {
            return Err(SimError::Config("source topics must be distinct".into()));
        }
        for f in &self.faults {
            if f.vehicle_id.is_some() == f.topic.is_some() {
                return Err(SimError::Config("a fault names exactly one of vehicle_id or topic".into()));
            }
            if f.end <= f.start || !(0.0..=1.0).contains(&f.drop_fraction) {
                return Err(SimError::Config("fault needs start < end and drop_fraction in [0, 1]".into()));
            }
            if let Some(t) = &f.topic {
                if !topics.contains(t) {
                    return Err(SimError::Config(format!("fault names unknown topic {t}")));
                }
            }
        }
        Ok(())
    }
}
