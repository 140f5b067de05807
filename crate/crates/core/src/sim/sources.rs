//! Weather and traffic generators.

use super::records::{TrafficRecord, WeatherRecord};
use crate::domain::{TimestampMs, MS_PER_DAY};
use crate::static_data::TmcDefinition;
use rand::Rng;

pub const DEFAULT_MAX_TEMP_STEP_C: f64 = 1.5;

/// Bounded-step random walk over weather fields. `prev` is the station's previous record.
pub fn gen_weather<R: Rng>(station_id: &str, ts_ms: TimestampMs, prev: Option<&WeatherRecord>, max_temp_step_c: f64, rng: &mut R) -> WeatherRecord {
    let Some(p) = prev else {
        return WeatherRecord {
            station_id: station_id.to_string(),
            ts_ms,
            temperature_c: rng.gen_range(8.0..24.0),
            wind_speed_ms: rng.gen_range(0.0..6.0),
            wind_direction_deg: rng.gen_range(0.0..360.0),
            precipitation_mmh: 0.0,
            humidity_pct: rng.gen_range(40.0..80.0),
            visibility_km: rng.gen_range(8.0..16.0),
            pressure_hpa: rng.gen_range(1005.0..1022.0),
        };
    };
    let step = max_temp_step_c.max(0.0);
    let temperature_c = (p.temperature_c + if step > 0.0 { rng.gen_range(-step..=step) } else { 0.0 }).clamp(-25.0, 45.0);
    let precipitation_mmh = if p.precipitation_mmh > 0.0 {
        if rng.gen_bool(0.15) { 0.0 } else { (p.precipitation_mmh + rng.gen_range(-0.5..0.5)).clamp(0.0, 40.0) }
    } else if rng.gen_bool(0.03) {
        rng.gen_range(0.1..2.0)
    } else {
        0.0
    };
    WeatherRecord {
        station_id: station_id.to_string(),
        ts_ms,
        temperature_c,
        wind_speed_ms: (p.wind_speed_ms + rng.gen_range(-0.8..0.8)).clamp(0.0, 30.0),
        wind_direction_deg: (p.wind_direction_deg + rng.gen_range(-20.0..20.0)).rem_euclid(360.0),
        precipitation_mmh,
        humidity_pct: (p.humidity_pct + rng.gen_range(-3.0..3.0) + if precipitation_mmh > 0.0 { 2.0 } else { 0.0 }).clamp(0.0, 100.0),
        visibility_km: (p.visibility_km + rng.gen_range(-0.7..0.7) - precipitation_mmh * 0.2).clamp(0.0, 20.0),
        pressure_hpa: (p.pressure_hpa + rng.gen_range(-0.4..0.4)).clamp(950.0, 1060.0),
    }
}

/// 0 at free flow, 10 at standstill: `10·(1 − current/freeflow)` clamped to [0, 10].
pub fn jam_factor(current_kmh: f64, freeflow_kmh: f64) -> f64 {
    (10.0 * (1.0 - current_kmh / freeflow_kmh)).clamp(0.0, 10.0)
}

/// Speed ratio over the day with morning and evening peaks (UTC hours).
pub fn congestion_profile(ts_ms: TimestampMs) -> f64 {
    let h = ts_ms.rem_euclid(MS_PER_DAY) as f64 / 3_600_000.0;
    let peak = |centre: f64, width: f64, depth: f64| depth * (-((h - centre) / width).powi(2)).exp();
    1.0 - peak(8.0, 1.2, 0.35) - peak(17.5, 1.5, 0.4)
}

/// Traffic reading for a given congestion factor and multiplicative noise term.
pub fn traffic_record(tmc: &TmcDefinition, ts_ms: TimestampMs, congestion: f64, noise: f64, confidence: f64) -> TrafficRecord {
    let ff = tmc.freeflow_speed_kmh;
    let current = (ff * congestion * (1.0 + noise)).clamp(0.0, ff * 1.2);
    TrafficRecord {
        tmc_id: tmc.tmc_id.clone(),
        ts_ms,
        freeflow_speed_kmh: ff,
        current_speed_kmh: current,
        jam_factor: jam_factor(current, ff),
        confidence: confidence.clamp(0.0, 1.0),
        geometry: tmc.geometry.clone(),
    }
}

pub fn gen_traffic<R: Rng>(tmc: &TmcDefinition, ts_ms: TimestampMs, rng: &mut R) -> TrafficRecord {
    let noise = rng.gen_range(-0.08..0.08);
    let confidence = rng.gen_range(0.7..=1.0);
    traffic_record(tmc, ts_ms, congestion_profile(ts_ms), noise, confidence)
}
