//! Joined stream payloads (`kind` = `sample` or `gap`).

use crate::domain::{FleetKind, GeoPoint, TimestampMs, WindowId};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Presence {
    pub telemetry: bool,
    pub clever: bool,
    pub weather: bool,
    pub traffic: bool,
    pub occupancy: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficFields {
    pub tmc_id: String,
    pub current_speed_kmh: f64,
    pub jam_factor: f64,
}

/// One vehicle in one window: latest value per source plus static road context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JoinedSample {
    pub vehicle_id: String,
    pub window_id: WindowId,
    /// Window end.
    pub ts_ms: TimestampMs,
    pub fleet: FleetKind,
    pub position: GeoPoint,
    pub telemetry_ts_ms: TimestampMs,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trip_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub route_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub driver_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub odometer_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub soc_pct: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub battery_current_a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub battery_voltage_v: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub charging: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fuel_level_pct: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fuel_rate_gph: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub osm_segment_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segment_distance_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elevation_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grade_pct: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub station_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature_c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub humidity_pct: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wind_speed_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub precipitation_mmh: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub traffic: Option<TrafficFields>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub onboard_estimate: Option<u32>,
    pub present: Presence,
    /// Stream route differs from the schedule's route for the trip; the stream value is kept.
    pub route_mismatch: bool,
    /// Static road context was available.
    pub enriched: bool,
}

/// A window with keyed records but no telemetry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GapRecord {
    pub vehicle_id: String,
    pub window_id: WindowId,
    pub ts_ms: TimestampMs,
    pub missing: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
#[allow(clippy::large_enum_variant)]
pub enum JoinOutput {
    Sample(JoinedSample),
    Gap(GapRecord),
}

impl JoinOutput {
    pub fn key(&self) -> (&str, WindowId) {
        match self {
            JoinOutput::Sample(s) => (&s.vehicle_id, s.window_id),
            JoinOutput::Gap(g) => (&g.vehicle_id, g.window_id),
        }
    }

    pub fn ts_ms(&self) -> TimestampMs {
        match self {
            JoinOutput::Sample(s) => s.ts_ms,
            JoinOutput::Gap(g) => g.ts_ms,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("join output serializes")
    }
}
