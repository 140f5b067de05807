//! Shared vocabulary: topic names, geography, time windows, fleets.

mod geo;
mod topic;
mod window;

pub use geo::{distance_to_polyline_m, haversine_m, polyline_length_m, BoundingBox, GeoPoint, LocalProjection, EARTH_RADIUS_M};
pub use topic::TopicName;
pub use window::{TimeWindowSpec, WindowId};

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// Epoch milliseconds, UTC.
pub type TimestampMs = i64;

pub const MS_PER_DAY: i64 = 86_400_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("malformed topic name {input:?}: {reason}")]
    MalformedTopic { input: String, reason: &'static str },
    #[error("coordinate out of range: lat={lat}, lon={lon}")]
    InvalidCoordinate { lat: f64, lon: f64 },
    #[error("invalid window spec: {0}")]
    InvalidWindow(&'static str),
    #[error("timestamp {ts_ms} is before window origin {origin_ms}")]
    TimestampBeforeOrigin { ts_ms: TimestampMs, origin_ms: TimestampMs },
    #[error("unknown fleet kind {0:?}")]
    UnknownFleet(String),
    #[error("invalid bounding box: {0}")]
    InvalidBoundingBox(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FleetKind {
    Diesel,
    Electric,
    Hybrid,
}

impl FleetKind {
    pub const ALL: [FleetKind; 3] = [FleetKind::Diesel, FleetKind::Electric, FleetKind::Hybrid];

    pub fn as_str(self) -> &'static str {
        match self {
            FleetKind::Diesel => "diesel",
            FleetKind::Electric => "electric",
            FleetKind::Hybrid => "hybrid",
        }
    }

    /// Diesel and hybrid vehicles report fuel; electric vehicles report battery state.
    pub fn burns_fuel(self) -> bool {
        !matches!(self, FleetKind::Electric)
    }
}

impl fmt::Display for FleetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FleetKind {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "diesel" => Ok(FleetKind::Diesel),
            "electric" => Ok(FleetKind::Electric),
            "hybrid" => Ok(FleetKind::Hybrid),
            other => Err(DomainError::UnknownFleet(other.to_string())),
        }
    }
}

/// Capacities and conversion constants shared by the simulator and the energy aggregates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnergyModel {
    pub pack_kwh: f64,
    pub tank_gal: f64,
    pub diesel_kwh_per_gal: f64,
}

impl Default for EnergyModel {
    fn default() -> Self {
        Self {
            pack_kwh: 440.0,
            tank_gal: 100.0,
            diesel_kwh_per_gal: 40.7,
        }
    }
}

/// UTC calendar day containing `ts_ms`, as days since the epoch.
pub fn epoch_day(ts_ms: TimestampMs) -> i64 {
    ts_ms.div_euclid(MS_PER_DAY)
}

pub fn date_start_ms(date: chrono::NaiveDate) -> TimestampMs {
    date.and_hms_opt(0, 0, 0)
        .expect("midnight is valid")
        .and_utc()
        .timestamp_millis()
}

pub fn date_of(ts_ms: TimestampMs) -> chrono::NaiveDate {
    chrono::DateTime::from_timestamp_millis(ts_ms)
        .expect("timestamp in chrono range")
        .date_naive()
}
