//! Schema-faithful synthetic sources: vehicle telemetry, trip context, weather,
//! traffic and passenger counts, driven by one simulation clock.

pub mod records;
mod runner;
mod scenario;
mod sources;
mod vehicle;

pub use records::{labels, 
    telemetry_labels, CleverRecord, OccupancyRecord, Reading, ReadingValue, TelemetryRecord, TrafficRecord, WeatherRecord,
};
pub use runner::{stream_seed, BrokerSink, MemorySink, RecordSink, SimClock, SimSummary, Simulation};
pub use scenario::{Fault, FleetSizes, Rates, Scenario, Sources, Topics};
pub use sources::{congestion_profile, gen_traffic, gen_weather, jam_factor, traffic_record, DEFAULT_MAX_TEMP_STEP_C};
pub use vehicle::{
    step_vehicle, telemetry_record, EnergyState, PlannedStop, StepContext, StepOutput, StopSnapper, TripPlan, VehicleState,
    MAX_SPEED_MS,
};

use crate::domain::TimestampMs;
use crate::ledger::LedgerError;
use crate::static_data::StaticDataError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("vehicle {vehicle_id} stepped at {ts_ms} with no trip and not at a depot")]
    NotInService { vehicle_id: String, ts_ms: TimestampMs },
    #[error(transparent)]
    StaticData(#[from] StaticDataError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}
