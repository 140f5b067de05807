//! Vehicle kinematics and energy models.

use super::records::{labels, Reading, ReadingValue, TelemetryRecord};
use super::SimError;
use crate::domain::{haversine_m, EnergyModel, FleetKind, GeoPoint, TimestampMs};
use crate::static_data::{GtfsSchedule, RoadNetwork, RoadSegment};
use std::collections::{BTreeMap, HashMap};

/// Top speed the schedule follower may use to catch up, m/s.
pub const MAX_SPEED_MS: f64 = 15.0;

#[derive(Debug, Clone, PartialEq)]
pub struct PlannedStop {
    pub stop_id: String,
    pub chainage_m: f64,
    pub arrival_ms: TimestampMs,
    pub departure_ms: TimestampMs,
}

/// One scheduled trip resolved onto the road network for a specific service date.
#[derive(Debug, Clone, PartialEq)]
pub struct TripPlan {
    pub trip_id: String,
    pub route_id: String,
    pub driver_id: Option<String>,
    pub path: Vec<GeoPoint>,
    cum_m: Vec<f64>,
    pub stops: Vec<PlannedStop>,
    /// Per leg between consecutive stops: network segment travelled (if any) and its grade in travel direction.
    pub legs: Vec<(Option<String>, f64)>,
}

impl TripPlan {
    pub fn start_ms(&self) -> TimestampMs {
        self.stops[0].arrival_ms
    }

    pub fn end_ms(&self) -> TimestampMs {
        self.stops.last().expect("plans have stops").arrival_ms
    }

    pub fn length_m(&self) -> f64 {
        *self.cum_m.last().unwrap_or(&0.0)
    }

    pub fn point_at(&self, chainage: f64) -> GeoPoint {
        let i = self.cum_m.partition_point(|&c| c <= chainage);
        if i == 0 {
            return self.path[0];
        }
        if i >= self.path.len() {
            return *self.path.last().expect("non-empty path");
        }
        let (c0, c1) = (self.cum_m[i - 1], self.cum_m[i]);
        let t = if c1 > c0 { (chainage - c0) / (c1 - c0) } else { 0.0 };
        self.path[i - 1].lerp(&self.path[i], t)
    }

    /// Grade of the leg containing `chainage`.
    pub fn grade_at(&self, chainage: f64) -> f64 {
        let leg = self.stops.partition_point(|s| s.chainage_m <= chainage).saturating_sub(1);
        self.legs.get(leg.min(self.legs.len().saturating_sub(1))).map(|l| l.1).unwrap_or(0.0)
    }

    /// Resolve a GTFS trip onto the network. Each stop snaps to its nearest node; consecutive
    /// nodes joined by a segment follow its polyline, otherwise a straight leg is used.
    pub fn build(
        schedule: &GtfsSchedule,
        trip_id: &str,
        network: &RoadNetwork,
        snap: &StopSnapper,
        service_day_ms: TimestampMs,
        driver_id: Option<String>,
    ) -> Result<TripPlan, SimError> {
        let trip = schedule.trips.get(trip_id).ok_or_else(|| SimError::Config(format!("unknown trip {trip_id}")))?;
        let times = schedule.stop_times.get(trip_id).filter(|t| t.len() >= 2).ok_or_else(|| SimError::Config(format!("trip {trip_id} has fewer than two stops")))?;
        let mut path = Vec::new();
        let mut legs = Vec::new();
        let mut stop_chain = vec![0.0];
        let mut cum = Vec::new();
        let mut total = 0.0;
        let mut push = |p: GeoPoint, path: &mut Vec<GeoPoint>, cum: &mut Vec<f64>| {
            if let Some(last) = path.last() {
                total += haversine_m(*last, p);
            }
            path.push(p);
            cum.push(total);
        };
        let first_pos = snap.position(schedule, network, &times[0].stop_id)?;
        push(first_pos, &mut path, &mut cum);
        for w in times.windows(2) {
            let (a, b) = (snap.node(schedule, network, &w[0].stop_id)?, snap.node(schedule, network, &w[1].stop_id)?);
            match snap.segment_between(network, &a, &b) {
                Some((seg, forward)) => {
                    let pts: Vec<GeoPoint> = if forward { seg.polyline.clone() } else { seg.polyline.iter().rev().copied().collect() };
                    for p in pts.into_iter().skip(1) {
                        push(p, &mut path, &mut cum);
                    }
                    legs.push((Some(seg.segment_id.clone()), if forward { seg.grade_pct } else { -seg.grade_pct }));
                }
                None => {
                    push(network.nodes[&b].position, &mut path, &mut cum);
                    legs.push((None, 0.0));
                }
            }
            stop_chain.push(*cum.last().expect("pushed"));
        }
        let stops = times
            .iter()
            .zip(stop_chain)
            .map(|(st, chainage_m)| PlannedStop {
                stop_id: st.stop_id.clone(),
                chainage_m,
                arrival_ms: service_day_ms + st.arrival_s as i64 * 1000,
                departure_ms: service_day_ms + st.departure_s as i64 * 1000,
            })
            .collect();
        Ok(TripPlan { trip_id: trip.trip_id.clone(), route_id: trip.route_id.clone(), driver_id, path, cum_m: cum, stops, legs })
    }
}

/// Caches stop-to-node snapping and node-pair adjacency.
#[derive(Debug, Default)]
pub struct StopSnapper {
    nodes: parking_lot::Mutex<HashMap<String, String>>,
    adjacency: HashMap<(String, String), (usize, bool)>,
}

impl StopSnapper {
    pub fn new(network: &RoadNetwork) -> Self {
        let mut adjacency = HashMap::new();
        for (i, s) in network.segments.iter().enumerate() {
            let (a, b) = (s.node_ids[0].clone(), s.node_ids.last().expect("two nodes").clone());
            adjacency.entry((a.clone(), b.clone())).or_insert((i, true));
            adjacency.entry((b, a)).or_insert((i, false));
        }
        Self { nodes: Default::default(), adjacency }
    }

    fn node(&self, schedule: &GtfsSchedule, network: &RoadNetwork, stop_id: &str) -> Result<String, SimError> {
        if let Some(n) = self.nodes.lock().get(stop_id) {
            return Ok(n.clone());
        }
        let stop = schedule.stops.get(stop_id).ok_or_else(|| SimError::Config(format!("unknown stop {stop_id}")))?;
        let node = network
            .nodes
            .values()
            .map(|n| (haversine_m(n.position, stop.position), &n.id))
            .min_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)))
            .map(|(_, id)| id.clone())
            .ok_or_else(|| SimError::Config("road network has no nodes".into()))?;
        self.nodes.lock().insert(stop_id.to_string(), node.clone());
        Ok(node)
    }

    fn position(&self, schedule: &GtfsSchedule, network: &RoadNetwork, stop_id: &str) -> Result<GeoPoint, SimError> {
        let n = self.node(schedule, network, stop_id)?;
        Ok(network.nodes[&n].position)
    }

    fn segment_between<'n>(&self, network: &'n RoadNetwork, a: &str, b: &str) -> Option<(&'n RoadSegment, bool)> {
        self.adjacency.get(&(a.to_string(), b.to_string())).map(|&(i, fwd)| (&network.segments[i], fwd))
    }
}

/// Fleet-specific energy state. Exactly one variant's fields exist per vehicle.
#[derive(Debug, Clone, PartialEq)]
pub enum EnergyState {
    Fuel { fuel_level_pct: f64, fuel_rate_gph: f64 },
    Battery { soc_pct: f64, battery_current_a: f64, battery_voltage_v: f64, charging: bool },
}

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleState {
    pub vehicle_id: String,
    pub fleet: FleetKind,
    pub position: GeoPoint,
    pub odometer_m: f64,
    /// Speed held over the next step.
    pub speed_ms: f64,
    pub energy: EnergyState,
    pub trip_id: Option<String>,
    pub route_id: Option<String>,
    pub driver_id: Option<String>,
    /// Distance travelled along the current trip path.
    pub chainage_m: f64,
    /// Index of the next stop to reach on the current trip.
    pub next_stop: usize,
}

impl VehicleState {
    pub fn new(vehicle_id: &str, fleet: FleetKind, position: GeoPoint, odometer_m: f64, level_pct: f64) -> Self {
        let energy = match fleet {
            FleetKind::Electric => {
                let v = pack_voltage(level_pct);
                EnergyState::Battery { soc_pct: level_pct, battery_current_a: AUX_KW * 1000.0 / v, battery_voltage_v: v, charging: false }
            }
            _ => EnergyState::Fuel { fuel_level_pct: level_pct, fuel_rate_gph: idle_gph(fleet) },
        };
        Self {
            vehicle_id: vehicle_id.to_string(),
            fleet,
            position,
            odometer_m,
            speed_ms: 0.0,
            energy,
            trip_id: None,
            route_id: None,
            driver_id: None,
            chainage_m: 0.0,
            next_stop: 0,
        }
    }
}

pub struct StepContext<'a> {
    /// Time at the end of the step; the emitted record carries it.
    pub now_ms: TimestampMs,
    pub trip: Option<&'a TripPlan>,
    /// Laying over at a terminal or depot between trips.
    pub at_depot: bool,
    /// Grade used when no trip is active.
    pub grade_pct: f64,
    pub energy_model: &'a EnergyModel,
    /// Electric vehicles charge while at the depot.
    pub charge_at_depot: bool,
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub state: VehicleState,
    pub record: TelemetryRecord,
    /// Index into the trip's stops when this step reached a stop.
    pub arrived_at: Option<usize>,
}

const AUX_KW: f64 = 12.0;
const CHARGE_CURRENT_A: f64 = -280.0;
const CHARGE_CEILING_PCT: f64 = 95.0;

fn pack_voltage(soc: f64) -> f64 {
    540.0 + 1.2 * soc
}

fn idle_gph(fleet: FleetKind) -> f64 {
    if fleet == FleetKind::Hybrid { 0.5 } else { 0.8 }
}

/// Advance one step: energy is drawn at the state's current rates over `dt_ms`, position moves
/// at the held speed (never past the next stop), then speed and rates are set for the next step.
pub fn step_vehicle(state: &VehicleState, dt_ms: i64, ctx: &StepContext<'_>) -> Result<StepOutput, SimError> {
    if dt_ms <= 0 {
        return Err(SimError::Config(format!("step dt must be positive, got {dt_ms}")));
    }
    if ctx.trip.is_none() && !ctx.at_depot {
        return Err(SimError::NotInService { vehicle_id: state.vehicle_id.clone(), ts_ms: ctx.now_ms });
    }
    let dt_s = dt_ms as f64 / 1000.0;
    let mut s = state.clone();

    match &mut s.energy {
        EnergyState::Battery { soc_pct, battery_current_a, battery_voltage_v, .. } => {
            let kwh = *battery_current_a * *battery_voltage_v * dt_s / 3.6e6;
            *soc_pct = (*soc_pct - kwh / ctx.energy_model.pack_kwh * 100.0).clamp(0.0, 100.0);
        }
        EnergyState::Fuel { fuel_level_pct, fuel_rate_gph } => {
            let gal = *fuel_rate_gph * dt_s / 3600.0;
            *fuel_level_pct = (*fuel_level_pct - gal / ctx.energy_model.tank_gal * 100.0).max(0.0);
        }
    }

    let mut arrived_at = None;
    let mut grade = ctx.grade_pct;
    match ctx.trip {
        Some(plan) => {
            if s.trip_id.as_deref() != Some(plan.trip_id.as_str()) {
                s.trip_id = Some(plan.trip_id.clone());
                s.route_id = Some(plan.route_id.clone());
                s.driver_id = plan.driver_id.clone();
                s.chainage_m = 0.0;
                s.next_stop = 0;
                s.position = plan.point_at(0.0);
            }
            let mut dist = s.speed_ms * dt_s;
            if let Some(next) = plan.stops.get(s.next_stop) {
                let remaining = next.chainage_m - s.chainage_m;
                if dist >= remaining - 1e-9 {
                    dist = remaining.max(0.0);
                    arrived_at = Some(s.next_stop);
                    s.next_stop += 1;
                }
            } else {
                dist = 0.0;
            }
            s.chainage_m += dist;
            s.odometer_m += dist;
            s.position = plan.point_at(s.chainage_m);
            grade = plan.grade_at(s.chainage_m);
            s.speed_ms = match (s.next_stop.checked_sub(1).map(|i| &plan.stops[i]), plan.stops.get(s.next_stop)) {
                (Some(prev), _) if ctx.now_ms < prev.departure_ms => 0.0,
                (_, Some(next)) => {
                    let remaining = next.chainage_m - s.chainage_m;
                    let left_ms = next.arrival_ms - ctx.now_ms;
                    if remaining <= 0.0 {
                        0.0
                    } else if left_ms > 0 {
                        (remaining * 1000.0 / left_ms as f64).min(MAX_SPEED_MS)
                    } else {
                        MAX_SPEED_MS
                    }
                }
                _ => 0.0,
            };
        }
        None => {
            s.trip_id = None;
            s.route_id = None;
            s.driver_id = None;
            s.speed_ms = 0.0;
        }
    }

    let in_trip = ctx.trip.is_some();
    match &mut s.energy {
        EnergyState::Battery { soc_pct, battery_current_a, battery_voltage_v, charging } => {
            *battery_voltage_v = pack_voltage(*soc_pct);
            if !in_trip && ctx.charge_at_depot && *soc_pct < CHARGE_CEILING_PCT {
                *charging = true;
                *battery_current_a = CHARGE_CURRENT_A;
            } else {
                *charging = false;
                let traction_kw = s.speed_ms * (2.4 + 1.1 * grade).max(0.0);
                *battery_current_a = (AUX_KW + traction_kw) * 1000.0 / *battery_voltage_v;
            }
        }
        EnergyState::Fuel { fuel_rate_gph, .. } => {
            let moving = s.speed_ms * (0.38 + 0.14 * grade).max(0.0);
            let factor = if s.fleet == FleetKind::Hybrid { 0.72 } else { 1.0 };
            *fuel_rate_gph = idle_gph(s.fleet) + moving * factor;
        }
    }

    let record = telemetry_record(&s, ctx.now_ms);
    Ok(StepOutput { state: s, record, arrived_at })
}

pub fn telemetry_record(s: &VehicleState, ts_ms: TimestampMs) -> TelemetryRecord {
    let mut readings = BTreeMap::new();
    let mut put = |label: &str, value: ReadingValue| {
        readings.insert(label.to_string(), Reading { label: label.to_string(), ts_ms, vehicle_id: s.vehicle_id.clone(), value });
    };
    put(labels::GPS, ReadingValue::Position { lat: s.position.lat(), lon: s.position.lon() });
    put(labels::ODOMETER, ReadingValue::Number(s.odometer_m));
    match &s.energy {
        EnergyState::Battery { soc_pct, battery_current_a, battery_voltage_v, charging } => {
            put(labels::SOC, ReadingValue::Number(*soc_pct));
            put(labels::BATTERY_CURRENT, ReadingValue::Number(*battery_current_a));
            put(labels::BATTERY_VOLTAGE, ReadingValue::Number(*battery_voltage_v));
            put(labels::CHARGING, ReadingValue::Flag(*charging));
        }
        EnergyState::Fuel { fuel_level_pct, fuel_rate_gph } => {
            put(labels::FUEL_LEVEL, ReadingValue::Number(*fuel_level_pct));
            put(labels::FUEL_RATE, ReadingValue::Number(*fuel_rate_gph));
        }
    }
    TelemetryRecord { vehicle_id: s.vehicle_id.clone(), fleet: s.fleet, ts_ms, readings }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::static_data::synth::{generate_city, SynthCityConfig};

    fn at_depot(now_ms: i64, model: &EnergyModel) -> StepContext<'_> {
        StepContext { now_ms, trip: None, at_depot: true, grade_pct: 0.0, energy_model: model, charge_at_depot: false }
    }

    #[test]
    fn electric_energy_is_current_times_voltage() {
        let model = EnergyModel { pack_kwh: 440.0, ..Default::default() };
        let mut s = VehicleState::new("e-001", FleetKind::Electric, GeoPoint::new(35.0, -85.0).unwrap(), 0.0, 80.0);
        s.energy = EnergyState::Battery { soc_pct: 80.0, battery_current_a: 100.0, battery_voltage_v: 600.0, charging: false };
        let out = step_vehicle(&s, 1000, &at_depot(1000, &model)).unwrap();
        let EnergyState::Battery { soc_pct, .. } = out.state.energy else { panic!() };
        let kwh: f64 = 100.0 * 600.0 * 1.0 / 3.6e6;
        assert!((kwh - 0.0166667).abs() < 1e-7);
        assert!((80.0 - soc_pct - kwh / 440.0 * 100.0).abs() < 1e-12);
    }

    #[test]
    fn diesel_fuel_is_rate_times_time() {
        let model = EnergyModel::default();
        let mut s = VehicleState::new("d-001", FleetKind::Diesel, GeoPoint::new(35.0, -85.0).unwrap(), 0.0, 50.0);
        s.energy = EnergyState::Fuel { fuel_level_pct: 50.0, fuel_rate_gph: 2.0 };
        let out = step_vehicle(&s, 1000, &at_depot(1000, &model)).unwrap();
        let EnergyState::Fuel { fuel_level_pct, .. } = out.state.energy else { panic!() };
        assert!((50.0 - fuel_level_pct - (2.0 / 3600.0) / model.tank_gal * 100.0).abs() < 1e-12);
        assert_eq!(out.record.readings.len(), 4);
    }

    #[test]
    fn not_in_service_without_trip_or_depot() {
        let model = EnergyModel::default();
        let s = VehicleState::new("d-001", FleetKind::Diesel, GeoPoint::new(35.0, -85.0).unwrap(), 0.0, 50.0);
        let ctx = StepContext { at_depot: false, ..at_depot(1000, &model) };
        assert!(matches!(step_vehicle(&s, 1000, &ctx), Err(SimError::NotInService { .. })));
    }

    #[test]
    fn odometer_advances_by_speed_on_straight_leg() {
        let city = generate_city(&SynthCityConfig { grid_size: 4, diesel: 1, electric: 0, hybrid: 0, ..Default::default() });
        let snap = StopSnapper::new(&city.network);
        let trip_id = city.gtfs.trips.keys().next().unwrap().clone();
        let plan = TripPlan::build(&city.gtfs, &trip_id, &city.network, &snap, 0, None).unwrap();
        let model = EnergyModel::default();
        let ctx = |now| StepContext { now_ms: now, trip: Some(&plan), at_depot: false, grade_pct: 0.0, energy_model: &model, charge_at_depot: false };
        let s = VehicleState::new("d-001", FleetKind::Diesel, plan.path[0], 1000.0, 50.0);
        let t0 = plan.stops[0].departure_ms;
        let mut out = step_vehicle(&s, 1000, &ctx(t0)).unwrap();
        assert_eq!(out.arrived_at, Some(0));
        out.state.speed_ms = 10.0;
        let next = step_vehicle(&out.state, 1000, &ctx(t0 + 1000)).unwrap();
        assert!((next.state.odometer_m - out.state.odometer_m - 10.0).abs() < 1e-9);
        // Segment lengths along the path add up to the path length.
        let seg_sum: f64 = plan.legs.iter().map(|(id, _)| city.network.segment(id.as_deref().unwrap()).unwrap().length_m).sum();
        assert!((seg_sum - plan.length_m()).abs() / plan.length_m() < 1e-3);
    }
}
