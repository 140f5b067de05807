//! Shared fixtures and the offline batch-merge oracle for the join.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::Arc;
use tdm_core::domain::{distance_to_polyline_m, haversine_m, GeoPoint};
use tdm_core::join::{GapRecord, JoinConfig, JoinOutput, JoinedSample, Presence, SourceKind, TrafficFields};
use tdm_core::ledger::{BrokerConfig, FlushPolicy, TenantCredential};
use tdm_core::sim::{labels, BrokerSink, CleverRecord, OccupancyRecord, Scenario, SimSummary, Simulation, TelemetryRecord, TrafficRecord, WeatherRecord};
use tdm_core::static_data::{map_segments_to_tmc, StaticBundle};
use tdm_core::{Broker, Capability, TimeWindowSpec};

pub const TENANT: &str = "carta";
pub const SECRET: &str = "s3cret";

pub fn broker_config(dir: &std::path::Path) -> BrokerConfig {
    BrokerConfig {
        data_dir: dir.to_path_buf(),
        tenants: vec![TenantCredential { name: TENANT.into(), secret: SECRET.into() }],
        flush: FlushPolicy::Os,
        ..BrokerConfig::default()
    }
}

pub fn open_broker(dir: &std::path::Path) -> (Broker, Capability) {
    let broker = Broker::open(broker_config(dir)).expect("broker opens");
    let cap = broker.authenticate(TENANT, SECRET).expect("tenant authenticates");
    (broker, cap)
}

/// Run `scenario` into the broker; returns the summary and the static bundle used.
pub fn simulate(broker: &Broker, cap: &Capability, scenario: Scenario) -> (SimSummary, Arc<StaticBundle>) {
    let mut sim = Simulation::from_scenario(scenario).expect("scenario builds");
    let bundle = sim.bundle().clone();
    let mut sink = BrokerSink::new(broker, cap, sim.scenario()).expect("sink");
    let summary = sim.run(&mut sink).expect("simulation runs");
    (summary, bundle)
}

/// One hour of the 60-vehicle fleet with every source enabled.
pub fn fleet_scenario(seed: u64) -> Scenario {
    Scenario { seed, ..Scenario::default() }
}

#[derive(Clone)]
enum Rec {
    Telemetry(TelemetryRecord),
    Clever(CleverRecord),
    Weather(WeatherRecord),
    Traffic(TrafficRecord),
    Occupancy(OccupancyRecord),
}

#[derive(Clone)]
struct Entry {
    ts: i64,
    offset: u64,
    source: usize,
    rec: Rec,
}

fn windows_containing(spec: &TimeWindowSpec, ts: i64) -> Vec<u64> {
    let mut out = Vec::new();
    let mut w = (ts - spec.origin_ms()) / spec.hop_ms();
    loop {
        let start = spec.origin_ms() + w * spec.hop_ms();
        if start + spec.window_ms() <= ts {
            break;
        }
        if start <= ts {
            out.push(w as u64);
        }
        if w == 0 {
            break;
        }
        w -= 1;
    }
    out.reverse();
    out
}

/// Latest entry; equal timestamps go to the higher offset within a source and the earlier-listed source across sources.
fn latest<'a>(entries: impl Iterator<Item = &'a Entry>) -> Option<&'a Entry> {
    let mut best: Option<&Entry> = None;
    for e in entries {
        best = match best {
            None => Some(e),
            Some(b) if e.source == b.source && (e.ts, e.offset) > (b.ts, b.offset) => Some(e),
            Some(b) if e.source != b.source && (e.ts > b.ts || (e.ts == b.ts && e.source < b.source)) => Some(e),
            Some(b) => Some(b),
        };
    }
    best
}

/// Offline merge of full topic contents: group every record by window, take the latest
/// per source, enrich by exhaustive nearest-segment search.
pub fn batch_join(broker: &Broker, cap: &Capability, config: &JoinConfig, bundle: &StaticBundle) -> Vec<JoinOutput> {
    let spec = config.window;
    let mut keyed: BTreeMap<(u64, String), Vec<Entry>> = BTreeMap::new();
    let mut broadcast: BTreeMap<u64, BTreeMap<String, Vec<Entry>>> = BTreeMap::new();
    for (source, input) in config.inputs.iter().enumerate() {
        let mut max_seen = i64::MIN;
        for env in broker.read_all(&input.topic, cap).expect("input readable") {
            if max_seen != i64::MIN && env.ts_ms < max_seen - config.allowed_lateness_ms {
                continue;
            }
            max_seen = max_seen.max(env.ts_ms);
            let p = &env.payload;
            let (rec, key) = match input.kind {
                SourceKind::Telemetry => {
                    let r: TelemetryRecord = serde_json::from_slice(p).unwrap();
                    let k = r.vehicle_id.clone();
                    (Rec::Telemetry(r), k)
                }
                SourceKind::Clever => {
                    let r: CleverRecord = serde_json::from_slice(p).unwrap();
                    let k = r.vehicle_id.clone();
                    (Rec::Clever(r), k)
                }
                SourceKind::Occupancy => {
                    let r: OccupancyRecord = serde_json::from_slice(p).unwrap();
                    let k = r.vehicle_id.clone();
                    (Rec::Occupancy(r), k)
                }
                SourceKind::Weather => {
                    let r: WeatherRecord = serde_json::from_slice(p).unwrap();
                    let k = r.station_id.clone();
                    (Rec::Weather(r), k)
                }
                SourceKind::Traffic => {
                    let r: TrafficRecord = serde_json::from_slice(p).unwrap();
                    let k = r.tmc_id.clone();
                    (Rec::Traffic(r), k)
                }
            };
            let e = Entry { ts: env.ts_ms, offset: env.offset, source, rec };
            for w in windows_containing(&spec, env.ts_ms) {
                if input.kind.is_broadcast() {
                    broadcast.entry(w).or_default().entry(key.clone()).or_default().push(e.clone());
                } else {
                    keyed.entry((w, key.clone())).or_default().push(e.clone());
                }
            }
        }
    }

    let kind_of = |e: &Entry| config.inputs[e.source].kind;
    let tmc_of_segment = map_segments_to_tmc(&bundle.network, &bundle.tmcs, config.tmc_max_distance_m);
    let configured = |k: SourceKind| config.inputs.iter().any(|i| i.kind == k);
    let mut out = Vec::new();
    for ((w, vehicle), entries) in &keyed {
        let ts_ms = spec.window_start(*w) + spec.window_ms();
        let of_kind = |k: SourceKind| latest(entries.iter().filter(|e| kind_of(e) == k));
        let bslot = broadcast.get(w);
        let tel = of_kind(SourceKind::Telemetry).and_then(|e| match &e.rec {
            Rec::Telemetry(t) => t.position().map(|p| (e.ts, t, p)),
            _ => None,
        });
        let clever = of_kind(SourceKind::Clever).and_then(|e| match &e.rec {
            Rec::Clever(c) => Some(c),
            _ => None,
        });
        let occ = of_kind(SourceKind::Occupancy).and_then(|e| match &e.rec {
            Rec::Occupancy(o) => Some(o),
            _ => None,
        });
        let any_broadcast = |k: SourceKind| bslot.is_some_and(|b| b.values().flatten().any(|e| kind_of(e) == k));
        let Some((tel_ts, tel, pos)) = tel else {
            let mut missing = vec!["telemetry".to_string()];
            for (k, name, present) in [
                (SourceKind::Clever, "clever", clever.is_some()),
                (SourceKind::Weather, "weather", any_broadcast(SourceKind::Weather)),
                (SourceKind::Traffic, "traffic", any_broadcast(SourceKind::Traffic)),
                (SourceKind::Occupancy, "occupancy", occ.is_some()),
            ] {
                if configured(k) && !present {
                    missing.push(name.to_string());
                }
            }
            out.push(JoinOutput::Gap(GapRecord { vehicle_id: vehicle.clone(), window_id: *w, ts_ms, missing }));
            continue;
        };

        let seg = bundle
            .network
            .segments
            .iter()
            .map(|s| (distance_to_polyline_m(pos, &s.polyline), s))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.segment_id.cmp(&b.1.segment_id)));
        let station = bundle
            .stations
            .iter()
            .map(|s| (haversine_m(pos, s.position), s.station_id.clone()))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
            .map(|(_, id)| id);
        let sub = |k: SourceKind, id: &str| bslot.and_then(|b| latest(b.get(id)?.iter().filter(|e| kind_of(e) == k)));
        let weather = station.as_deref().and_then(|s| sub(SourceKind::Weather, s)).and_then(|e| match &e.rec {
            Rec::Weather(w) => Some(w),
            _ => None,
        });
        let traffic = seg
            .and_then(|(_, s)| tmc_of_segment.get(&s.segment_id))
            .and_then(|t| sub(SourceKind::Traffic, t))
            .and_then(|e| match &e.rec {
                Rec::Traffic(t) => Some(t),
                _ => None,
            });
        let mismatch = clever.is_some_and(|c| match (&c.trip_id, &c.route_id) {
            (Some(t), Some(r)) => bundle.gtfs.trips.get(t).is_some_and(|trip| &trip.route_id != r),
            _ => false,
        });
        out.push(JoinOutput::Sample(JoinedSample {
            vehicle_id: vehicle.clone(),
            window_id: *w,
            ts_ms,
            fleet: tel.fleet,
            position: pos,
            telemetry_ts_ms: tel_ts,
            trip_id: clever.and_then(|c| c.trip_id.clone()),
            route_id: clever.and_then(|c| c.route_id.clone()),
            driver_id: clever.and_then(|c| c.driver_id.clone()),
            odometer_m: tel.number(labels::ODOMETER),
            soc_pct: tel.number(labels::SOC),
            battery_current_a: tel.number(labels::BATTERY_CURRENT),
            battery_voltage_v: tel.number(labels::BATTERY_VOLTAGE),
            charging: tel.flag(labels::CHARGING),
            fuel_level_pct: tel.number(labels::FUEL_LEVEL),
            fuel_rate_gph: tel.number(labels::FUEL_RATE),
            osm_segment_id: seg.map(|(_, s)| s.segment_id.clone()),
            segment_distance_m: seg.map(|(d, _)| d),
            elevation_m: seg.and_then(|(_, s)| bundle.network.elevation_along(s, pos)),
            grade_pct: seg.map(|(_, s)| s.grade_pct),
            station_id: weather.map(|w| w.station_id.clone()),
            temperature_c: weather.map(|w| w.temperature_c),
            humidity_pct: weather.map(|w| w.humidity_pct),
            wind_speed_ms: weather.map(|w| w.wind_speed_ms),
            precipitation_mmh: weather.map(|w| w.precipitation_mmh),
            traffic: traffic.map(|t| TrafficFields { tmc_id: t.tmc_id.clone(), current_speed_kmh: t.current_speed_kmh, jam_factor: t.jam_factor }),
            onboard_estimate: occ.map(|o| o.onboard_estimate),
            present: Presence {
                telemetry: true,
                clever: clever.is_some(),
                weather: weather.is_some(),
                traffic: traffic.is_some(),
                occupancy: occ.is_some(),
            },
            route_mismatch: mismatch,
            enriched: seg.is_some(),
        }));
    }
    out
}

pub fn decode_outputs(broker: &Broker, cap: &Capability, topic: &tdm_core::TopicName) -> Vec<JoinOutput> {
    broker
        .read_all(topic, cap)
        .expect("output readable")
        .iter()
        .map(|e| serde_json::from_slice(&e.payload).expect("output decodes"))
        .collect()
}

pub fn point(lat: f64, lon: f64) -> GeoPoint {
    GeoPoint::new(lat, lon).unwrap()
}
