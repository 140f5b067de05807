use super::records::{CleverRecord, OccupancyRecord, WeatherRecord};
use super::scenario::Scenario;
use super::sources::{gen_traffic, gen_weather};
use super::vehicle::{step_vehicle, StepContext, StopSnapper, TripPlan, VehicleState, MAX_SPEED_MS};
use super::SimError;
use crate::domain::{date_of, date_start_ms, FleetKind, TimestampMs, TopicName};
use crate::ledger::{Broker, Capability};
use crate::static_data::synth::generate_city;
use crate::static_data::{trips_active_at, StaticBundle};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;

/// Independent, stable RNG seed for a named producer.
pub fn stream_seed(seed: u64, name: &str) -> u64 {
    // FNV-1a, then mixed with the scenario seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h = (h ^ b as u64).wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = h ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Shared simulation time. Only the clock driver writes it.
#[derive(Debug, Clone, Default)]
pub struct SimClock(Arc<AtomicI64>);

impl SimClock {
    pub fn now_ms(&self) -> TimestampMs {
        self.0.load(Ordering::Acquire)
    }

    fn set(&self, t: TimestampMs) {
        self.0.store(t, Ordering::Release);
    }
}

/// Destination for generated records; batches arrive per topic in timestamp order.
pub trait RecordSink {
    fn publish(&mut self, topic: &TopicName, batch: &[(TimestampMs, Vec<u8>)]) -> Result<(), SimError>;
}

pub struct BrokerSink<'a> {
    broker: &'a Broker,
    cap: &'a Capability,
}

impl<'a> BrokerSink<'a> {
    /// Creates every scenario topic (idempotent).
    pub fn new(broker: &'a Broker, cap: &'a Capability, scenario: &Scenario) -> Result<Self, SimError> {
        for t in scenario.topics.all() {
            broker.create_topic(t, cap)?;
        }
        Ok(Self { broker, cap })
    }
}

impl RecordSink for BrokerSink<'_> {
    fn publish(&mut self, topic: &TopicName, batch: &[(TimestampMs, Vec<u8>)]) -> Result<(), SimError> {
        let refs: Vec<(TimestampMs, &[u8])> = batch.iter().map(|(t, p)| (*t, p.as_slice())).collect();
        self.broker.publish_batch(topic, &refs, self.cap)?;
        Ok(())
    }
}

/// Collects records in memory, per topic in publish order.
#[derive(Debug, Default)]
pub struct MemorySink {
    pub topics: BTreeMap<TopicName, Vec<(TimestampMs, Vec<u8>)>>,
}

impl RecordSink for MemorySink {
    fn publish(&mut self, topic: &TopicName, batch: &[(TimestampMs, Vec<u8>)]) -> Result<(), SimError> {
        self.topics.entry(topic.clone()).or_default().extend(batch.iter().cloned());
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, serde::Serialize)]
pub struct SimSummary {
    pub start_ms: TimestampMs,
    pub end_ms: TimestampMs,
    pub published: BTreeMap<String, u64>,
    pub dropped_by_faults: BTreeMap<String, u64>,
}

struct SimVehicle {
    id: String,
    fleet: FleetKind,
    topic: TopicName,
    block: Vec<TripPlan>,
    cur: usize,
    state: Option<VehicleState>,
    rng: ChaCha8Rng,
    onboard: u32,
}

enum Activity {
    Off,
    Driving(usize),
    Layover,
}

type StepPayloads = (Option<Vec<u8>>, Option<Vec<u8>>);

/// One clock driver stepping every producer deterministically.
pub struct Simulation {
    scenario: Scenario,
    bundle: Arc<StaticBundle>,
    vehicles: Vec<SimVehicle>,
    weather: Vec<(String, Option<WeatherRecord>, ChaCha8Rng)>,
    traffic_rng: ChaCha8Rng,
    fault_rngs: HashMap<TopicName, ChaCha8Rng>,
    clock: SimClock,
    next_tick: TimestampMs,
    tick_ms: i64,
    pending: BTreeMap<TopicName, Vec<(TimestampMs, Vec<u8>)>>,
    summary: SimSummary,
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 { a } else { gcd(b, a % b) }
}

impl Simulation {
    /// Load the scenario's static bundle (or generate the synthetic city) and build vehicle blocks.
    pub fn from_scenario(scenario: Scenario) -> Result<Self, SimError> {
        let bundle = match &scenario.static_dir {
            Some(dir) => StaticBundle::load(dir)?,
            None => generate_city(&scenario.city),
        };
        Self::new(scenario, Arc::new(bundle))
    }

    pub fn new(scenario: Scenario, bundle: Arc<StaticBundle>) -> Result<Self, SimError> {
        scenario.validate()?;
        let (start, end) = (scenario.start_ms(), scenario.end_ms());
        let mut chosen: Vec<(String, FleetKind)> = Vec::new();
        for fleet in FleetKind::ALL {
            let ids: Vec<_> = bundle.vehicles.iter().filter(|v| v.fleet == fleet).map(|v| v.vehicle_id.clone()).collect();
            let want = scenario.fleet.of(fleet);
            if ids.len() < want {
                return Err(SimError::Config(format!("scenario wants {want} {fleet} vehicles but the roster has {}", ids.len())));
            }
            chosen.extend(ids.into_iter().take(want).map(|id| (id, fleet)));
        }

        let snap = StopSnapper::new(&bundle.network);
        let mut blocks: BTreeMap<String, Vec<TripPlan>> = chosen.iter().map(|(id, _)| (id.clone(), Vec::new())).collect();
        let mut driver_rng = ChaCha8Rng::seed_from_u64(stream_seed(scenario.seed, "drivers"));
        let pool = scenario.driver_pool.max(1);
        // Service days touching the horizon, including the previous day for after-midnight trips.
        let mut day = date_of(start).pred_opt().expect("date in range");
        let last_day = date_of(end);
        while day <= last_day {
            let day_ms = date_start_ms(day);
            let mut shift_driver: HashMap<(String, bool), String> = HashMap::new();
            for active in trips_active_at(&bundle.gtfs, day) {
                let vehicle = scenario.assignments.get(&active.trip_id).cloned().or(active.vehicle_id.clone());
                let Some(vehicle) = vehicle else { continue };
                let Some(block) = blocks.get_mut(&vehicle) else { continue };
                let trip_start = day_ms + active.start_s as i64 * 1000;
                let trip_end = day_ms + active.end_s as i64 * 1000;
                if trip_end <= start || trip_start >= end {
                    continue;
                }
                let late_shift = active.start_s >= 14 * 3600;
                let driver = shift_driver
                    .entry((vehicle.clone(), late_shift))
                    .or_insert_with(|| format!("drv-{:03}", driver_rng.gen_range(1..=pool)))
                    .clone();
                block.push(TripPlan::build(&bundle.gtfs, &active.trip_id, &bundle.network, &snap, day_ms, Some(driver))?);
            }
            day = day.succ_opt().expect("date in range");
        }

        let mut vehicles = Vec::new();
        for (id, fleet) in chosen {
            let mut block = blocks.remove(&id).unwrap_or_default();
            block.sort_by(|a, b| a.start_ms().cmp(&b.start_ms()).then_with(|| a.trip_id.cmp(&b.trip_id)));
            vehicles.push(SimVehicle {
                topic: scenario.topics.telemetry(fleet).clone(),
                rng: ChaCha8Rng::seed_from_u64(stream_seed(scenario.seed, &format!("vehicle:{id}"))),
                id,
                fleet,
                block,
                cur: 0,
                state: None,
                onboard: 0,
            });
        }
        let weather = bundle
            .stations
            .iter()
            .map(|s| (s.station_id.clone(), None, ChaCha8Rng::seed_from_u64(stream_seed(scenario.seed, &format!("weather:{}", s.station_id)))))
            .collect();
        let fault_rngs = scenario
            .topics
            .all()
            .into_iter()
            .map(|t| (t.clone(), ChaCha8Rng::seed_from_u64(stream_seed(scenario.seed, &format!("fault:{t}")))))
            .collect();
        let r = &scenario.rates;
        let tick_ms = [r.telemetry_ms, r.clever_ms, r.weather_ms, r.traffic_ms].into_iter().fold(0, gcd);
        let clock = SimClock::default();
        clock.set(start);
        Ok(Self {
            traffic_rng: ChaCha8Rng::seed_from_u64(stream_seed(scenario.seed, "traffic")),
            summary: SimSummary { start_ms: start, end_ms: end, ..Default::default() },
            next_tick: start,
            tick_ms,
            vehicles,
            weather,
            fault_rngs,
            clock,
            pending: BTreeMap::new(),
            bundle,
            scenario,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn bundle(&self) -> &Arc<StaticBundle> {
        &self.bundle
    }

    pub fn clock(&self) -> SimClock {
        self.clock.clone()
    }

    /// Trip plans per simulated vehicle.
    pub fn blocks(&self) -> impl Iterator<Item = (&str, FleetKind, &[TripPlan])> {
        self.vehicles.iter().map(|v| (v.id.as_str(), v.fleet, v.block.as_slice()))
    }

    pub fn is_finished(&self) -> bool {
        self.next_tick >= self.scenario.end_ms()
    }

    /// Run to the horizon.
    pub fn run(&mut self, sink: &mut dyn RecordSink) -> Result<SimSummary, SimError> {
        self.run_until(self.scenario.end_ms(), sink)?;
        Ok(self.summary.clone())
    }

    /// Emit every tick with `t < until_ms` (capped at the horizon), pacing by clock acceleration.
    pub fn run_until(&mut self, until_ms: TimestampMs, sink: &mut dyn RecordSink) -> Result<(), SimError> {
        let until = until_ms.min(self.scenario.end_ms());
        let accel = self.scenario.clock_acceleration;
        let wall0 = std::time::Instant::now();
        let sim0 = self.next_tick;
        while self.next_tick < until {
            let t = self.next_tick;
            self.tick(t)?;
            self.next_tick += self.tick_ms;
            let buffered: usize = self.pending.values().map(Vec::len).sum();
            if accel > 0.0 || buffered >= 8_192 {
                self.flush(sink)?;
            }
            self.clock.set(self.next_tick);
            if accel > 0.0 {
                let due = std::time::Duration::from_secs_f64((self.next_tick - sim0) as f64 / 1000.0 / accel);
                if let Some(wait) = due.checked_sub(wall0.elapsed()) {
                    std::thread::sleep(wait);
                }
            }
        }
        self.flush(sink)
    }

    fn flush(&mut self, sink: &mut dyn RecordSink) -> Result<(), SimError> {
        for (topic, batch) in std::mem::take(&mut self.pending) {
            if !batch.is_empty() {
                sink.publish(&topic, &batch)?;
                *self.summary.published.entry(topic.to_string()).or_default() += batch.len() as u64;
            }
        }
        Ok(())
    }

    fn emit(&mut self, topic: &TopicName, ts: TimestampMs, payload: Vec<u8>) {
        for f in &self.scenario.faults {
            if f.topic.as_ref() == Some(topic) && f.covers(ts) {
                let rng = self.fault_rngs.get_mut(topic).expect("rng per topic");
                if rng.gen_bool(f.drop_fraction) {
                    *self.summary.dropped_by_faults.entry(topic.to_string()).or_default() += 1;
                    return;
                }
            }
        }
        self.pending.entry(topic.clone()).or_default().push((ts, payload));
    }

    fn silenced(&self, vehicle_id: &str, ts: TimestampMs) -> bool {
        self.scenario.faults.iter().any(|f| f.vehicle_id.as_deref() == Some(vehicle_id) && f.covers(ts))
    }

    fn tick(&mut self, t: TimestampMs) -> Result<(), SimError> {
        let start = self.scenario.start_ms();
        let rates = self.scenario.rates.clone();
        let due = |period: i64| (t - start) % period == 0;
        let topics = self.scenario.topics.clone();

        if due(rates.telemetry_ms) {
            for i in 0..self.vehicles.len() {
                let (record, occupancy) = self.step_one(i, t, rates.telemetry_ms)?;
                if let Some(rec) = record {
                    let v = &self.vehicles[i];
                    if self.silenced(&v.id, t) {
                        *self.summary.dropped_by_faults.entry(v.topic.to_string()).or_default() += 1;
                    } else {
                        let topic = v.topic.clone();
                        self.emit(&topic, t, rec);
                    }
                }
                if let Some(occ) = occupancy {
                    if self.scenario.sources.occupancy {
                        self.emit(&topics.occupancy, t, occ);
                    }
                }
            }
        }
        if self.scenario.sources.clever && due(rates.clever_ms) {
            for i in 0..self.vehicles.len() {
                let v = &self.vehicles[i];
                let Some(s) = &v.state else { continue };
                if matches!(self.activity(i, t), Activity::Off) {
                    continue;
                }
                let rec = CleverRecord {
                    vehicle_id: v.id.clone(),
                    ts_ms: t,
                    position: s.position,
                    trip_id: s.trip_id.clone(),
                    route_id: s.route_id.clone(),
                    driver_id: s.driver_id.clone(),
                };
                let payload = serde_json::to_vec(&rec).expect("record serializes");
                self.emit(&topics.clever, t, payload);
            }
        }
        if self.scenario.sources.weather && due(rates.weather_ms) {
            let step = self.scenario.max_temp_step_c;
            for k in 0..self.weather.len() {
                let (id, prev, rng) = &mut self.weather[k];
                let rec = gen_weather(id, t, prev.as_ref(), step, rng);
                *prev = Some(rec.clone());
                let payload = serde_json::to_vec(&rec).expect("record serializes");
                self.emit(&topics.weather, t, payload);
            }
        }
        if self.scenario.sources.traffic && due(rates.traffic_ms) {
            for k in 0..self.bundle.tmcs.len() {
                let rec = gen_traffic(&self.bundle.tmcs[k], t, &mut self.traffic_rng);
                let payload = serde_json::to_vec(&rec).expect("record serializes");
                self.emit(&topics.traffic, t, payload);
            }
        }
        Ok(())
    }

    fn activity(&self, i: usize, t: TimestampMs) -> Activity {
        let v = &self.vehicles[i];
        match v.block.get(v.cur) {
            None => Activity::Off,
            Some(plan) if t >= plan.start_ms() => Activity::Driving(v.cur),
            Some(_) if v.state.is_some() => Activity::Layover,
            Some(_) => Activity::Off,
        }
    }

    /// Step vehicle `i` to time `t`; returns its telemetry payload and any occupancy payload.
    fn step_one(&mut self, i: usize, t: TimestampMs, dt: i64) -> Result<StepPayloads, SimError> {
        {
            let v = &mut self.vehicles[i];
            if let (Some(plan), Some(s)) = (v.block.get(v.cur), &v.state) {
                if s.trip_id.as_deref() == Some(plan.trip_id.as_str()) && s.next_stop >= plan.stops.len() {
                    v.cur += 1;
                }
            }
        }
        let activity = self.activity(i, t);
        let charge = self.scenario.charge_at_depot;
        let energy = self.scenario.energy;
        let v = &mut self.vehicles[i];
        let plan = match activity {
            Activity::Off => return Ok((None, None)),
            Activity::Driving(k) => Some(&v.block[k]),
            Activity::Layover => None,
        };
        if v.state.is_none() {
            let origin = plan.expect("a vehicle first appears on a trip");
            let level = match v.fleet {
                FleetKind::Electric => v.rng.gen_range(70.0..95.0),
                _ => v.rng.gen_range(55.0..95.0),
            };
            let odo = v.rng.gen_range(1.0e8..5.0e8_f64).round();
            let mut s = VehicleState::new(&v.id, v.fleet, origin.path[0], odo, level);
            warm_start(&mut s, origin, t - dt);
            v.state = Some(s);
        }
        let state = v.state.as_ref().expect("initialized");
        let ctx = StepContext { now_ms: t, trip: plan, at_depot: plan.is_none(), grade_pct: 0.0, energy_model: &energy, charge_at_depot: charge };
        let out = step_vehicle(state, dt, &ctx)?;
        let occupancy = match (out.arrived_at, plan) {
            (Some(k), Some(p)) => {
                let last = k + 1 == p.stops.len();
                let alight = if last { v.onboard } else { v.rng.gen_range(0..=v.onboard.min(8)) };
                let board = if last { 0 } else { v.rng.gen_range(0..=6) };
                v.onboard = v.onboard - alight + board;
                let rec = OccupancyRecord {
                    vehicle_id: v.id.clone(),
                    ts_ms: t,
                    stop_id: p.stops[k].stop_id.clone(),
                    boarding_count: board,
                    alighting_count: alight,
                    onboard_estimate: v.onboard,
                };
                Some(serde_json::to_vec(&rec).expect("record serializes"))
            }
            _ => None,
        };
        let payload = serde_json::to_vec(&out.record).expect("record serializes");
        v.state = Some(out.state);
        Ok((Some(payload), occupancy))
    }
}

/// Place a vehicle that first appears mid-trip where its schedule says it should be.
fn warm_start(s: &mut VehicleState, plan: &TripPlan, t: TimestampMs) {
    if t < plan.start_ms() {
        return;
    }
    let k = plan.stops.partition_point(|st| st.arrival_ms <= t).max(1) - 1;
    let here = &plan.stops[k];
    let chainage = match plan.stops.get(k + 1) {
        Some(next) if t >= here.departure_ms && next.arrival_ms > here.departure_ms => {
            let f = (t - here.departure_ms) as f64 / (next.arrival_ms - here.departure_ms) as f64;
            here.chainage_m + f * (next.chainage_m - here.chainage_m)
        }
        _ => here.chainage_m,
    };
    s.trip_id = Some(plan.trip_id.clone());
    s.route_id = Some(plan.route_id.clone());
    s.driver_id = plan.driver_id.clone();
    s.chainage_m = chainage;
    s.next_stop = k + 1;
    s.position = plan.point_at(chainage);
    s.speed_ms = match plan.stops.get(k + 1) {
        Some(next) if t >= here.departure_ms && next.arrival_ms > t => {
            ((next.chainage_m - chainage) * 1000.0 / (next.arrival_ms - t) as f64).min(MAX_SPEED_MS)
        }
        _ => 0.0,
    };
}
