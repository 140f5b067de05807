use super::{Alert, AlertKind, Severity};
use crate::domain::{date_start_ms, TimestampMs, TopicName};
use crate::ledger::{Broker, Capability, LedgerError};
use crate::static_data::{trips_active_at, GtfsSchedule};
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BindingSource {
    /// Trip context observed on the trip-context stream that day.
    Stream,
    /// Operator-supplied assignment.
    Assignment,
    /// `vehicle_id` column of the schedule.
    Schedule,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripBinding {
    pub trip_id: String,
    pub route_id: String,
    pub vehicle_id: Option<String>,
    pub source: Option<BindingSource>,
    pub start_ms: TimestampMs,
    pub end_ms: TimestampMs,
}

/// Trips scheduled on `date` with their vehicle: stream first, then assignments, then schedule.
pub fn collect_bindings(
    schedule: &GtfsSchedule,
    date: NaiveDate,
    stream: &BTreeMap<String, BTreeMap<String, u64>>,
    assignments: &BTreeMap<String, String>,
) -> Vec<TripBinding> {
    let day = date_start_ms(date);
    trips_active_at(schedule, date)
        .into_iter()
        .map(|t| {
            // Most frequently observed vehicle; ties to the smallest id.
            let observed = stream
                .get(&t.trip_id)
                .and_then(|m| m.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))).map(|(v, _)| v.clone()));
            let (vehicle_id, source) = match (observed, assignments.get(&t.trip_id), t.vehicle_id) {
                (Some(v), _, _) => (Some(v), Some(BindingSource::Stream)),
                (None, Some(v), _) => (Some(v.clone()), Some(BindingSource::Assignment)),
                (None, None, Some(v)) => (Some(v), Some(BindingSource::Schedule)),
                (None, None, None) => (None, None),
            };
            TripBinding {
                trip_id: t.trip_id,
                route_id: t.route_id,
                vehicle_id,
                source,
                start_ms: day + t.start_s as i64 * 1000,
                end_ms: day + t.end_s as i64 * 1000,
            }
        })
        .collect()
}

/// Sorted telemetry timestamps per vehicle over a time range.
#[derive(Debug, Clone, Default)]
pub struct TelemetryIndex {
    by_vehicle: HashMap<String, Vec<TimestampMs>>,
}

#[derive(Deserialize)]
struct VehicleOnly {
    vehicle_id: String,
}

impl TelemetryIndex {
    pub fn build(broker: &Broker, topics: &[TopicName], t0: TimestampMs, t1: TimestampMs, cap: &Capability) -> Result<Self, LedgerError> {
        let mut idx = Self::default();
        for topic in topics {
            broker.scan_range(topic, t0, t1, cap, |env| {
                if let Ok(v) = serde_json::from_slice::<VehicleOnly>(&env.payload) {
                    idx.by_vehicle.entry(v.vehicle_id).or_default().push(env.ts_ms);
                }
            })?;
        }
        for ts in idx.by_vehicle.values_mut() {
            ts.sort_unstable();
        }
        Ok(idx)
    }

    pub fn from_records(records: impl IntoIterator<Item = (String, TimestampMs)>) -> Self {
        let mut idx = Self::default();
        for (v, ts) in records {
            idx.by_vehicle.entry(v).or_default().push(ts);
        }
        for ts in idx.by_vehicle.values_mut() {
            ts.sort_unstable();
        }
        idx
    }

    /// Records of `vehicle_id` with `t0 <= ts < t1`.
    pub fn count(&self, vehicle_id: &str, t0: TimestampMs, t1: TimestampMs) -> u64 {
        self.by_vehicle.get(vehicle_id).map_or(0, |ts| {
            let lo = ts.partition_point(|&t| t < t0);
            let hi = ts.partition_point(|&t| t < t1);
            hi.saturating_sub(lo) as u64
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CoverageOutcome {
    pub trips_checked: u64,
    pub trips_covered: u64,
    /// Trips with no vehicle binding; skipped.
    pub unbindable: Vec<String>,
    pub alerts: Vec<Alert>,
}

/// One `coverage_gap` alert per bound trip whose vehicle has no telemetry inside `[start, end)`.
pub fn check_vehicle_coverage(
    date: NaiveDate,
    bindings: &[TripBinding],
    mut telemetry_count: impl FnMut(&str, TimestampMs, TimestampMs) -> u64,
) -> CoverageOutcome {
    let mut out = CoverageOutcome::default();
    for b in bindings {
        let Some(vehicle) = &b.vehicle_id else {
            out.unbindable.push(b.trip_id.clone());
            continue;
        };
        out.trips_checked += 1;
        if telemetry_count(vehicle, b.start_ms, b.end_ms) > 0 {
            out.trips_covered += 1;
            continue;
        }
        out.alerts.push(Alert {
            kind: AlertKind::CoverageGap,
            subject: format!("{vehicle}/{}", b.trip_id),
            date,
            topic: None,
            vehicle_id: Some(vehicle.clone()),
            trip_id: Some(b.trip_id.clone()),
            observed: 0,
            expected_mean: None,
            expected_std: None,
            window_start_ms: Some(b.start_ms),
            window_end_ms: Some(b.end_ms),
            severity: Severity::Warning,
            message: format!(
                "vehicle {vehicle} serviced trip {} (route {}) on {date} but sent no telemetry between {} and {}",
                b.trip_id,
                b.route_id,
                fmt_ts(b.start_ms),
                fmt_ts(b.end_ms)
            ),
        });
    }
    out.alerts.sort_by(|a, b| a.subject.cmp(&b.subject));
    out
}

fn fmt_ts(ts: TimestampMs) -> String {
    chrono::DateTime::from_timestamp_millis(ts).map_or_else(|| ts.to_string(), |d| d.format("%Y-%m-%dT%H:%M:%SZ").to_string())
}
