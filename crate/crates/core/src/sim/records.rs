//! Payload schemas, one JSON text per record.

use crate::domain::{FleetKind, GeoPoint, TimestampMs};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Labels a telemetry kit reports for a given fleet. Closed set.
pub fn telemetry_labels(fleet: FleetKind) -> &'static [&'static str] {
    match fleet {
        FleetKind::Electric => &[
            labels::GPS,
            labels::ODOMETER,
            labels::SOC,
            labels::BATTERY_CURRENT,
            labels::BATTERY_VOLTAGE,
            labels::CHARGING,
        ],
        FleetKind::Diesel | FleetKind::Hybrid => &[labels::GPS, labels::ODOMETER, labels::FUEL_LEVEL, labels::FUEL_RATE],
    }
}

pub mod labels {
    pub const GPS: &str = "gps";
    pub const ODOMETER: &str = "odometer";
    pub const FUEL_LEVEL: &str = "fuel_level";
    pub const FUEL_RATE: &str = "fuel_rate";
    pub const SOC: &str = "soc";
    pub const BATTERY_CURRENT: &str = "battery_current";
    pub const BATTERY_VOLTAGE: &str = "battery_voltage";
    pub const CHARGING: &str = "charging";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ReadingValue {
    Position { lat: f64, lon: f64 },
    Number(f64),
    Flag(bool),
}

/// One labelled reading as delivered by the telemetry kit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reading {
    pub label: String,
    pub ts_ms: TimestampMs,
    pub vehicle_id: String,
    pub value: ReadingValue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryRecord {
    pub vehicle_id: String,
    pub fleet: FleetKind,
    pub ts_ms: TimestampMs,
    pub readings: BTreeMap<String, Reading>,
}

impl TelemetryRecord {
    pub fn number(&self, label: &str) -> Option<f64> {
        match self.readings.get(label)?.value {
            ReadingValue::Number(v) => Some(v),
            _ => None,
        }
    }

    pub fn flag(&self, label: &str) -> Option<bool> {
        match self.readings.get(label)?.value {
            ReadingValue::Flag(v) => Some(v),
            _ => None,
        }
    }

    pub fn position(&self) -> Option<GeoPoint> {
        match self.readings.get(labels::GPS)?.value {
            ReadingValue::Position { lat, lon } => GeoPoint::new(lat, lon).ok(),
            _ => None,
        }
    }
}

/// Trip context from the on-board computer: which trip, route and driver the vehicle is serving.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleverRecord {
    pub vehicle_id: String,
    pub ts_ms: TimestampMs,
    pub position: GeoPoint,
    pub trip_id: Option<String>,
    pub route_id: Option<String>,
    pub driver_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeatherRecord {
    pub station_id: String,
    pub ts_ms: TimestampMs,
    pub temperature_c: f64,
    pub wind_speed_ms: f64,
    pub wind_direction_deg: f64,
    pub precipitation_mmh: f64,
    pub humidity_pct: f64,
    pub visibility_km: f64,
    pub pressure_hpa: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficRecord {
    pub tmc_id: String,
    pub ts_ms: TimestampMs,
    pub freeflow_speed_kmh: f64,
    pub current_speed_kmh: f64,
    pub jam_factor: f64,
    pub confidence: f64,
    pub geometry: Vec<GeoPoint>,
}

/// Passenger counts at one stop, derived from on-board video.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OccupancyRecord {
    pub vehicle_id: String,
    pub ts_ms: TimestampMs,
    pub stop_id: String,
    pub boarding_count: u32,
    pub alighting_count: u32,
    pub onboard_estimate: u32,
}
