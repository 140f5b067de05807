//! Indexed view of the joined stream: r-tree over positions, ordered time index,
//! and energy aggregates by route, fleet or road segment.
//!
//! The store is a derived view; [`GeoStore::rebuild`] replays the joined topic from
//! the beginning.

use crate::domain::{BoundingBox, EnergyModel, FleetKind, GeoPoint, TimestampMs, TopicName, WindowId};
use crate::join::{JoinOutput, JoinedSample};
use crate::ledger::{Broker, Capability, LedgerError, RecordEnvelope};
use crate::spatial::{AuditError, RTree};
use crate::static_data::RoadNetwork;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};

pub const METERS_PER_MILE: f64 = 1609.344;

#[derive(Debug, thiserror::Error)]
pub enum GeoStoreError {
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("undecodable record at offset {offset}: {message}")]
    Decode { offset: u64, message: String },
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredSample {
    /// Offset of the record in the joined topic.
    pub offset: u64,
    #[serde(flatten)]
    pub sample: JoinedSample,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InsertOutcome {
    Inserted,
    /// Same `(vehicle, window)` already stored; nothing changed.
    Duplicate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupBy {
    Route,
    Fleet,
    Segment,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AggregateFilter {
    pub t0_ms: TimestampMs,
    pub t1_ms: TimestampMs,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fleet: Option<FleetKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub route_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<BoundingBox>,
}

impl AggregateFilter {
    pub fn time(t0_ms: TimestampMs, t1_ms: TimestampMs) -> Self {
        Self { t0_ms, t1_ms, ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), GeoStoreError> {
        if self.t0_ms > self.t1_ms {
            return Err(GeoStoreError::InvalidQuery(format!("t0 {} is after t1 {}", self.t0_ms, self.t1_ms)));
        }
        Ok(())
    }

    fn matches(&self, s: &JoinedSample) -> bool {
        (self.t0_ms..self.t1_ms).contains(&s.ts_ms)
            && self.fleet.is_none_or(|f| f == s.fleet)
            && self.route_id.as_ref().is_none_or(|r| s.route_id.as_ref() == Some(r))
            && self.bbox.as_ref().is_none_or(|b| b.contains_point(s.position))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateResult {
    pub key: String,
    pub energy_kwh: f64,
    pub distance_mi: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kwh_per_mile: Option<f64>,
    pub sample_count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub rows: Vec<AggregateResult>,
    /// Intervals dropped because the odometer went backwards.
    pub skipped_intervals: u64,
    pub charging_intervals: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRow {
    pub segment_id: String,
    pub polyline: Vec<GeoPoint>,
    pub energy_kwh: f64,
    pub distance_mi: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kwh_per_mile: Option<f64>,
    pub sample_count: u64,
}

/// Energy and distance between two consecutive samples of one vehicle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyIncrement {
    pub energy_kwh: f64,
    pub distance_mi: f64,
    /// Battery was charging; no consumption counted.
    pub charging: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("odometer decreased between consecutive samples")]
pub struct NonMonotoneOdometer;

/// Increment from `a` to the vehicle's next sample `b`.
pub fn energy_increment(a: &JoinedSample, b: &JoinedSample, model: &EnergyModel) -> Result<EnergyIncrement, NonMonotoneOdometer> {
    let distance_m = match (a.odometer_m, b.odometer_m) {
        (Some(x), Some(y)) if y < x => return Err(NonMonotoneOdometer),
        (Some(x), Some(y)) => y - x,
        _ => 0.0,
    };
    let mut charging = false;
    let energy_kwh = match a.fleet {
        FleetKind::Electric => {
            charging = a.charging == Some(true) || b.charging == Some(true);
            match (a.soc_pct, b.soc_pct) {
                (Some(x), Some(y)) if !charging && x > y => (x - y) / 100.0 * model.pack_kwh,
                _ => 0.0,
            }
        }
        FleetKind::Diesel | FleetKind::Hybrid => match (a.fuel_level_pct, b.fuel_level_pct) {
            (Some(x), Some(y)) if x > y => (x - y) / 100.0 * model.tank_gal * model.diesel_kwh_per_gal,
            _ => 0.0,
        },
    };
    Ok(EnergyIncrement { energy_kwh, distance_mi: distance_m / METERS_PER_MILE, charging })
}

/// Increments over consecutive pairs of one vehicle's samples, sorted by time.
pub fn compute_energy_increments(
    samples: &[JoinedSample],
    model: &EnergyModel,
) -> Vec<Result<EnergyIncrement, NonMonotoneOdometer>> {
    samples.windows(2).map(|w| energy_increment(&w[0], &w[1], model)).collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ReplayStats {
    pub inserted: u64,
    pub duplicates: u64,
    pub gaps: u64,
}

#[derive(Debug, Clone)]
pub struct GeoStore {
    model: EnergyModel,
    samples: Vec<StoredSample>,
    tree: RTree<usize>,
    by_time: BTreeSet<(TimestampMs, usize)>,
    by_vehicle: HashMap<String, BTreeMap<WindowId, usize>>,
    next_offset: u64,
}

impl GeoStore {
    pub fn new(model: EnergyModel) -> Self {
        Self {
            model,
            samples: Vec::new(),
            tree: RTree::default(),
            by_time: BTreeSet::new(),
            by_vehicle: HashMap::new(),
            next_offset: 0,
        }
    }

    pub fn energy_model(&self) -> &EnergyModel {
        &self.model
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[StoredSample] {
        &self.samples
    }

    /// Next joined-topic offset this store has not consumed.
    pub fn next_offset(&self) -> u64 {
        self.next_offset
    }

    pub fn insert(&mut self, sample: StoredSample) -> InsertOutcome {
        let per_vehicle = self.by_vehicle.entry(sample.sample.vehicle_id.clone()).or_default();
        if per_vehicle.contains_key(&sample.sample.window_id) {
            return InsertOutcome::Duplicate;
        }
        let idx = self.samples.len();
        per_vehicle.insert(sample.sample.window_id, idx);
        self.tree.insert(BoundingBox::of_point(sample.sample.position), idx);
        self.by_time.insert((sample.sample.ts_ms, idx));
        self.samples.push(sample);
        InsertOutcome::Inserted
    }

    /// Full structural check of the spatial index.
    pub fn audit(&self) -> Result<(), AuditError> {
        self.tree.audit()
    }

    /// Samples with position inside `bbox` (inclusive) and `t0 <= ts < t1`, in insertion order.
    pub fn query_bbox(&self, bbox: &BoundingBox, t0_ms: TimestampMs, t1_ms: TimestampMs) -> Vec<&StoredSample> {
        let mut hits = Vec::new();
        self.tree.query(bbox, |_, &i| {
            if (t0_ms..t1_ms).contains(&self.samples[i].sample.ts_ms) {
                hits.push(i);
            }
        });
        hits.sort_unstable();
        hits.into_iter().map(|i| &self.samples[i]).collect()
    }

    /// Indices matching the filter, sorted by `(vehicle, window)` so sums are order-stable.
    fn select(&self, f: &AggregateFilter) -> Vec<usize> {
        let mut idx: Vec<usize> = match &f.bbox {
            Some(b) => {
                let mut v = Vec::new();
                self.tree.query(b, |_, &i| v.push(i));
                v
            }
            None if f.t0_ms >= f.t1_ms => Vec::new(),
            None => self.by_time.range((f.t0_ms, 0)..(f.t1_ms, 0)).map(|&(_, i)| i).collect(),
        };
        idx.retain(|&i| f.matches(&self.samples[i].sample));
        idx.sort_unstable_by(|&a, &b| {
            let (x, y) = (&self.samples[a].sample, &self.samples[b].sample);
            (&x.vehicle_id, x.window_id).cmp(&(&y.vehicle_id, y.window_id))
        });
        idx
    }

    fn successor(&self, s: &JoinedSample) -> Option<&JoinedSample> {
        use std::ops::Bound::{Excluded, Unbounded};
        self.by_vehicle[&s.vehicle_id]
            .range((Excluded(s.window_id), Unbounded))
            .next()
            .map(|(_, &i)| &self.samples[i].sample)
    }

    /// Sums per-interval increments; an interval belongs to the group of its earlier sample.
    pub fn aggregate_energy(&self, group_by: GroupBy, filter: &AggregateFilter) -> Result<Aggregate, GeoStoreError> {
        filter.validate()?;
        let mut groups: BTreeMap<String, (f64, f64, u64)> = BTreeMap::new();
        let (mut skipped, mut charging) = (0, 0);
        for i in self.select(filter) {
            let s = &self.samples[i].sample;
            let key = match group_by {
                GroupBy::Route => s.route_id.clone().unwrap_or_else(|| "unassigned".into()),
                GroupBy::Fleet => s.fleet.as_str().to_string(),
                GroupBy::Segment => s.osm_segment_id.clone().unwrap_or_else(|| "unmatched".into()),
            };
            let g = groups.entry(key).or_default();
            g.2 += 1;
            if let Some(next) = self.successor(s) {
                match energy_increment(s, next, &self.model) {
                    Ok(inc) => {
                        g.0 += inc.energy_kwh;
                        g.1 += inc.distance_mi;
                        charging += inc.charging as u64;
                    }
                    Err(NonMonotoneOdometer) => skipped += 1,
                }
            }
        }
        let rows = groups
            .into_iter()
            .map(|(key, (energy_kwh, distance_mi, sample_count))| AggregateResult {
                key,
                energy_kwh,
                distance_mi,
                kwh_per_mile: (distance_mi > 0.0).then(|| energy_kwh / distance_mi),
                sample_count,
            })
            .collect();
        Ok(Aggregate { rows, skipped_intervals: skipped, charging_intervals: charging })
    }

    /// Travelled segments intersecting `bbox`, with per-segment aggregates under `filter`.
    pub fn segment_rows(
        &self,
        network: &RoadNetwork,
        bbox: &BoundingBox,
        filter: &AggregateFilter,
    ) -> Result<Vec<SegmentRow>, GeoStoreError> {
        let agg = self.aggregate_energy(GroupBy::Segment, &AggregateFilter { bbox: None, ..filter.clone() })?;
        Ok(agg
            .rows
            .into_iter()
            .filter_map(|r| {
                let seg = network.segment(&r.key)?;
                (r.sample_count > 0 && bbox.intersects(&seg.bbox()) && bbox.intersects_polyline(&seg.polyline)).then(|| SegmentRow {
                    segment_id: r.key,
                    polyline: seg.polyline.clone(),
                    energy_kwh: r.energy_kwh,
                    distance_mi: r.distance_mi,
                    kwh_per_mile: r.kwh_per_mile,
                    sample_count: r.sample_count,
                })
            })
            .collect())
    }

    /// Apply one joined-topic record. Gap records carry no position and are skipped.
    pub fn apply(&mut self, env: &RecordEnvelope, stats: &mut ReplayStats) -> Result<(), GeoStoreError> {
        let out: JoinOutput = serde_json::from_slice(&env.payload)
            .map_err(|e| GeoStoreError::Decode { offset: env.offset, message: e.to_string() })?;
        match out {
            JoinOutput::Sample(sample) => match self.insert(StoredSample { offset: env.offset, sample }) {
                InsertOutcome::Inserted => stats.inserted += 1,
                InsertOutcome::Duplicate => stats.duplicates += 1,
            },
            JoinOutput::Gap(_) => stats.gaps += 1,
        }
        self.next_offset = self.next_offset.max(env.offset + 1);
        Ok(())
    }

    /// Consume everything after [`GeoStore::next_offset`].
    pub fn catch_up(&mut self, broker: &Broker, topic: &TopicName, cap: &Capability) -> Result<ReplayStats, GeoStoreError> {
        let mut stats = ReplayStats::default();
        let mut cursor = broker.open_cursor(topic, crate::ledger::StartPosition::Earliest, "geostore", cap)?;
        broker.seek_cursor(&mut cursor, self.next_offset)?;
        loop {
            let batch = broker.read_next(&mut cursor, 8_192)?;
            if batch.is_empty() {
                return Ok(stats);
            }
            for env in &batch {
                self.apply(env, &mut stats)?;
            }
        }
    }

    /// A fresh store replayed from the joined topic's first record.
    pub fn rebuild(broker: &Broker, topic: &TopicName, cap: &Capability, model: EnergyModel) -> Result<(Self, ReplayStats), GeoStoreError> {
        let mut store = Self::new(model);
        let stats = store.catch_up(broker, topic, cap)?;
        Ok((store, stats))
    }
}

#[cfg(test)]
mod tests;
