//! Event-time windowed join with per-source watermarks.
//!
//! A source's watermark is its maximum seen timestamp minus the allowed lateness.
//! A record older than its own source's watermark is late and dropped. A window
//! closes once every source's watermark has reached its end, and windows close in
//! `(window_id, vehicle_id)` order.

use super::config::{JoinConfig, SourceKind};
use super::context::StaticContext;
use super::output::{GapRecord, JoinOutput, JoinedSample, Presence, TrafficFields};
use crate::domain::{TimeWindowSpec, TimestampMs, WindowId};
use crate::ledger::RecordEnvelope;
use crate::sim::{labels, CleverRecord, OccupancyRecord, TelemetryRecord, TrafficRecord, WeatherRecord};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::Arc;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "record", rename_all = "lowercase")]
pub enum Payload {
    Telemetry(TelemetryRecord),
    Clever(CleverRecord),
    Weather(WeatherRecord),
    Traffic(TrafficRecord),
    Occupancy(OccupancyRecord),
}

impl Payload {
    pub fn parse(kind: SourceKind, bytes: &[u8]) -> Result<Self, serde_json::Error> {
        Ok(match kind {
            SourceKind::Telemetry => Payload::Telemetry(serde_json::from_slice(bytes)?),
            SourceKind::Clever => Payload::Clever(serde_json::from_slice(bytes)?),
            SourceKind::Weather => Payload::Weather(serde_json::from_slice(bytes)?),
            SourceKind::Traffic => Payload::Traffic(serde_json::from_slice(bytes)?),
            SourceKind::Occupancy => Payload::Occupancy(serde_json::from_slice(bytes)?),
        })
    }

    /// Vehicle id for keyed sources, station or TMC id for broadcast ones.
    pub fn key(&self) -> &str {
        match self {
            Payload::Telemetry(r) => &r.vehicle_id,
            Payload::Clever(r) => &r.vehicle_id,
            Payload::Occupancy(r) => &r.vehicle_id,
            Payload::Weather(r) => &r.station_id,
            Payload::Traffic(r) => &r.tmc_id,
        }
    }
}

/// The latest record of one source within one window.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct Held {
    ts_ms: TimestampMs,
    offset: u64,
    payload: Arc<Payload>,
}

impl Held {
    fn newer_than(&self, other: &Held) -> bool {
        (self.ts_ms, self.offset) > (other.ts_ms, other.offset)
    }
}

fn keep_latest(slot: &mut BTreeMap<usize, Held>, source: usize, held: Held) {
    match slot.get(&source) {
        Some(cur) if !held.newer_than(cur) => {}
        _ => {
            slot.insert(source, held);
        }
    }
}

/// Latest across several sources of the same kind; equal timestamps go to the earlier-configured source.
fn latest_of<'a>(slot: &'a BTreeMap<usize, Held>, sources: &'a [usize]) -> Option<&'a Held> {
    sources
        .iter()
        .filter_map(|s| slot.get(s))
        .fold(None, |best: Option<&Held>, h| match best {
            Some(b) if h.ts_ms <= b.ts_ms => Some(b),
            _ => Some(h),
        })
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct BroadcastSlot {
    /// sub-key (station or TMC id) -> source -> latest.
    by_key: BTreeMap<String, BTreeMap<usize, Held>>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceCounters {
    pub tag: String,
    pub accepted: u64,
    pub late: u64,
    pub rejected: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinCounters {
    pub sources: Vec<SourceCounters>,
    pub samples: u64,
    pub gaps: u64,
}

impl JoinCounters {
    pub fn late_total(&self) -> u64 {
        self.sources.iter().map(|s| s.late).sum()
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct SourceState {
    max_seen: Option<TimestampMs>,
    /// Set by idle advancement.
    forced: Option<TimestampMs>,
    active_since_idle_check: bool,
    quiet_since: Option<TimestampMs>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Ingest {
    Accepted,
    Late,
    Rejected(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct KeyedEntry {
    window_id: WindowId,
    vehicle_id: String,
    slot: BTreeMap<usize, Held>,
}

/// Serializable engine state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EngineSnapshot {
    tags: Vec<String>,
    sources: Vec<SourceState>,
    keyed: Vec<KeyedEntry>,
    broadcast: BTreeMap<WindowId, BroadcastSlot>,
    closed_through: Option<WindowId>,
    counters: JoinCounters,
}

pub struct JoinEngine {
    window: TimeWindowSpec,
    lateness_ms: i64,
    idle_timeout_ms: i64,
    kinds: Vec<SourceKind>,
    tags: Vec<String>,
    by_kind: BTreeMap<SourceKind, Vec<usize>>,
    ctx: Arc<StaticContext>,
    sources: Vec<SourceState>,
    keyed: BTreeMap<(WindowId, String), BTreeMap<usize, Held>>,
    broadcast: BTreeMap<WindowId, BroadcastSlot>,
    closed_through: Option<WindowId>,
    counters: JoinCounters,
}

impl JoinEngine {
    pub fn new(config: &JoinConfig, ctx: Arc<StaticContext>) -> Self {
        let kinds: Vec<SourceKind> = config.inputs.iter().map(|i| i.kind).collect();
        let tags: Vec<String> = config.inputs.iter().map(|i| i.tag.clone()).collect();
        let mut by_kind: BTreeMap<SourceKind, Vec<usize>> = BTreeMap::new();
        for (i, k) in kinds.iter().enumerate() {
            by_kind.entry(*k).or_default().push(i);
        }
        let counters = JoinCounters {
            sources: tags.iter().map(|t| SourceCounters { tag: t.clone(), ..Default::default() }).collect(),
            ..Default::default()
        };
        Self {
            window: config.window,
            lateness_ms: config.allowed_lateness_ms,
            idle_timeout_ms: config.idle_timeout_ms,
            sources: vec![SourceState::default(); kinds.len()],
            kinds,
            tags,
            by_kind,
            ctx,
            keyed: BTreeMap::new(),
            broadcast: BTreeMap::new(),
            closed_through: None,
            counters,
        }
    }

    pub fn window_spec(&self) -> &TimeWindowSpec {
        &self.window
    }

    pub fn source_index(&self, tag: &str) -> Option<usize> {
        self.tags.iter().position(|t| t == tag)
    }

    pub fn counters(&self) -> &JoinCounters {
        &self.counters
    }

    pub fn open_windows(&self) -> usize {
        self.keyed.len()
    }

    pub fn set_context(&mut self, ctx: Arc<StaticContext>) {
        self.ctx = ctx;
    }

    pub fn watermark(&self, source: usize) -> Option<TimestampMs> {
        let s = &self.sources[source];
        let natural = s.max_seen.map(|m| m - self.lateness_ms);
        natural.max(s.forced)
    }

    /// Minimum over all sources; `None` until every source has a watermark.
    pub fn min_watermark(&self) -> Option<TimestampMs> {
        (0..self.sources.len()).map(|i| self.watermark(i)).try_fold(TimestampMs::MAX, |acc, w| w.map(|w| acc.min(w)))
    }

    pub fn ingest(&mut self, source: usize, env: &RecordEnvelope) -> Ingest {
        let kind = self.kinds[source];
        let payload = match Payload::parse(kind, &env.payload) {
            Ok(p) => p,
            Err(e) => {
                self.counters.sources[source].rejected += 1;
                return Ingest::Rejected(e.to_string());
            }
        };
        self.ingest_parsed(source, env.ts_ms, env.offset, payload)
    }

    pub fn ingest_parsed(&mut self, source: usize, ts_ms: TimestampMs, offset: u64, payload: Payload) -> Ingest {
        let ids = match self.window.window_ids_for(ts_ms) {
            Ok(ids) => ids,
            Err(e) => {
                self.counters.sources[source].rejected += 1;
                return Ingest::Rejected(e.to_string());
            }
        };
        if self.watermark(source).is_some_and(|wm| ts_ms < wm) {
            self.counters.sources[source].late += 1;
            return Ingest::Late;
        }
        let first_open = self.closed_through.map_or(0, |c| c + 1);
        let (lo, hi) = ((*ids.start()).max(first_open), *ids.end());
        if lo > hi {
            self.counters.sources[source].late += 1;
            return Ingest::Late;
        }
        let state = &mut self.sources[source];
        state.max_seen = Some(state.max_seen.map_or(ts_ms, |m| m.max(ts_ms)));
        state.active_since_idle_check = true;
        self.counters.sources[source].accepted += 1;

        let key = payload.key().to_string();
        let held = Held { ts_ms, offset, payload: Arc::new(payload) };
        for wid in lo..=hi {
            if self.kinds[source].is_broadcast() {
                let slot = self.broadcast.entry(wid).or_default().by_key.entry(key.clone()).or_default();
                keep_latest(slot, source, held.clone());
            } else {
                let slot = self.keyed.entry((wid, key.clone())).or_default();
                keep_latest(slot, source, held.clone());
            }
        }
        Ingest::Accepted
    }

    /// Highest window id whose end is at or before the minimum watermark.
    fn ready_through(&self) -> Option<WindowId> {
        let wm = self.min_watermark()?;
        let rel = wm - self.window.origin_ms() - self.window.window_ms();
        (rel >= 0).then(|| rel.div_euclid(self.window.hop_ms()) as WindowId)
    }

    /// Open windows that would close now, in emission order.
    pub fn ready_windows(&self) -> Vec<(WindowId, String)> {
        let Some(through) = self.ready_through() else { return Vec::new() };
        self.keyed.keys().take_while(|(w, _)| *w <= through).cloned().collect()
    }

    pub fn close_ready(&mut self) -> Vec<JoinOutput> {
        match self.ready_through() {
            Some(through) => self.close_through(through),
            None => Vec::new(),
        }
    }

    /// Close every open window regardless of watermarks, e.g. at end of input.
    pub fn finish(&mut self) -> Vec<JoinOutput> {
        let last_keyed = self.keyed.keys().next_back().map(|(w, _)| *w);
        let last_bcast = self.broadcast.keys().next_back().copied();
        match last_keyed.max(last_bcast) {
            Some(through) => self.close_through(through),
            None => Vec::new(),
        }
    }

    fn close_through(&mut self, through: WindowId) -> Vec<JoinOutput> {
        let mut out = Vec::new();
        while let Some(entry) = self.keyed.first_entry() {
            if entry.key().0 > through {
                break;
            }
            let ((wid, vehicle), slot) = entry.remove_entry();
            let o = self.build(wid, vehicle, &slot);
            match o {
                JoinOutput::Sample(_) => self.counters.samples += 1,
                JoinOutput::Gap(_) => self.counters.gaps += 1,
            }
            out.push(o);
        }
        while let Some(e) = self.broadcast.first_entry() {
            if *e.key() > through {
                break;
            }
            e.remove();
        }
        self.closed_through = Some(self.closed_through.map_or(through, |c| c.max(through)));
        out
    }

    /// Let sources that have been silent for the idle timeout advance to `now_ms`.
    pub fn advance_idle(&mut self, now_ms: TimestampMs) {
        for s in &mut self.sources {
            if std::mem::take(&mut s.active_since_idle_check) || s.quiet_since.is_none() {
                s.quiet_since = Some(now_ms);
            } else if s.quiet_since.is_some_and(|q| now_ms - q >= self.idle_timeout_ms) {
                let target = now_ms - self.lateness_ms;
                s.forced = Some(s.forced.map_or(target, |f| f.max(target)));
            }
        }
    }

    fn sources_of(&self, kind: SourceKind) -> &[usize] {
        self.by_kind.get(&kind).map(Vec::as_slice).unwrap_or(&[])
    }

    fn build(&self, wid: WindowId, vehicle_id: String, slot: &BTreeMap<usize, Held>) -> JoinOutput {
        let ts_ms = self.window.window_end(wid);
        let bslot = self.broadcast.get(&wid);
        let telemetry = latest_of(slot, self.sources_of(SourceKind::Telemetry)).and_then(|h| match &*h.payload {
            Payload::Telemetry(t) => t.position().map(|p| (h.ts_ms, t, p)),
            _ => None,
        });
        let clever = latest_of(slot, self.sources_of(SourceKind::Clever)).and_then(|h| match &*h.payload {
            Payload::Clever(c) => Some(c),
            _ => None,
        });
        let occupancy = latest_of(slot, self.sources_of(SourceKind::Occupancy)).and_then(|h| match &*h.payload {
            Payload::Occupancy(o) => Some(o),
            _ => None,
        });
        let broadcast_has = |kind: SourceKind| {
            bslot.is_some_and(|b| b.by_key.values().any(|m| self.sources_of(kind).iter().any(|s| m.contains_key(s))))
        };

        let Some((telemetry_ts_ms, tel, position)) = telemetry else {
            let present = [
                (SourceKind::Clever, clever.is_some()),
                (SourceKind::Weather, broadcast_has(SourceKind::Weather)),
                (SourceKind::Traffic, broadcast_has(SourceKind::Traffic)),
                (SourceKind::Occupancy, occupancy.is_some()),
            ];
            let mut missing = vec![SourceKind::Telemetry.as_str().to_string()];
            missing.extend(
                present
                    .iter()
                    .filter(|(k, p)| !p && self.by_kind.contains_key(k))
                    .map(|(k, _)| k.as_str().to_string()),
            );
            return JoinOutput::Gap(GapRecord { vehicle_id, window_id: wid, ts_ms, missing });
        };

        let broadcast_latest = |kind: SourceKind, sub: &str| -> Option<&Held> {
            latest_of(bslot?.by_key.get(sub)?, self.sources_of(kind))
        };
        let road = self.ctx.road_context(position).ok();
        let station = match self.ctx.nearest_station(position) {
            Some(s) => Some(s.to_string()),
            None => bslot.and_then(|b| {
                b.by_key
                    .iter()
                    .find(|(_, m)| self.sources_of(SourceKind::Weather).iter().any(|s| m.contains_key(s)))
                    .map(|(k, _)| k.clone())
            }),
        };
        let weather = station.as_deref().and_then(|s| broadcast_latest(SourceKind::Weather, s)).and_then(|h| match &*h.payload {
            Payload::Weather(w) => Some(w),
            _ => None,
        });
        let traffic = road
            .as_ref()
            .and_then(|r| r.tmc_id.as_deref())
            .and_then(|t| broadcast_latest(SourceKind::Traffic, t))
            .and_then(|h| match &*h.payload {
                Payload::Traffic(t) => Some(t),
                _ => None,
            });
        let route_mismatch = clever.is_some_and(|c| match (&c.trip_id, &c.route_id) {
            (Some(trip), Some(route)) => self.ctx.scheduled_route(trip).is_some_and(|r| r != route),
            _ => false,
        });

        JoinOutput::Sample(JoinedSample {
            vehicle_id,
            window_id: wid,
            ts_ms,
            fleet: tel.fleet,
            position,
            telemetry_ts_ms,
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
            osm_segment_id: road.as_ref().map(|r| r.segment_id.clone()),
            segment_distance_m: road.as_ref().map(|r| r.distance_m),
            elevation_m: road.as_ref().and_then(|r| r.elevation_m),
            grade_pct: road.as_ref().map(|r| r.grade_pct),
            station_id: weather.map(|w| w.station_id.clone()),
            temperature_c: weather.map(|w| w.temperature_c),
            humidity_pct: weather.map(|w| w.humidity_pct),
            wind_speed_ms: weather.map(|w| w.wind_speed_ms),
            precipitation_mmh: weather.map(|w| w.precipitation_mmh),
            traffic: traffic.map(|t| TrafficFields {
                tmc_id: t.tmc_id.clone(),
                current_speed_kmh: t.current_speed_kmh,
                jam_factor: t.jam_factor,
            }),
            onboard_estimate: occupancy.map(|o| o.onboard_estimate),
            present: Presence {
                telemetry: true,
                clever: clever.is_some(),
                weather: weather.is_some(),
                traffic: traffic.is_some(),
                occupancy: occupancy.is_some(),
            },
            route_mismatch,
            enriched: road.is_some(),
        })
    }

    pub fn snapshot(&self) -> EngineSnapshot {
        EngineSnapshot {
            tags: self.tags.clone(),
            sources: self.sources.clone(),
            keyed: self
                .keyed
                .iter()
                .map(|((w, v), slot)| KeyedEntry { window_id: *w, vehicle_id: v.clone(), slot: slot.clone() })
                .collect(),
            broadcast: self.broadcast.clone(),
            closed_through: self.closed_through,
            counters: self.counters.clone(),
        }
    }

    /// Fails if the snapshot was taken with a different set of sources.
    pub fn restore(&mut self, snap: EngineSnapshot) -> Result<(), super::JoinError> {
        if snap.tags != self.tags {
            return Err(super::JoinError::Checkpoint(format!(
                "checkpoint sources {:?} do not match configured sources {:?}",
                snap.tags, self.tags
            )));
        }
        self.sources = snap.sources;
        self.keyed = snap.keyed.into_iter().map(|e| ((e.window_id, e.vehicle_id), e.slot)).collect();
        self.broadcast = snap.broadcast;
        self.closed_through = snap.closed_through;
        self.counters = snap.counters;
        Ok(())
    }
}
