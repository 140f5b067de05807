//! Data management and stream processing for transit telemetry.
//!
//! The pipeline is: source simulators publish vendor-shaped records onto a
//! tenant-scoped [`ledger::Broker`]; [`join::JoinRunner`] merges the streams
//! into per-vehicle time windows enriched with static road context and
//! publishes the result on an output topic; [`geostore::GeoStore`] replays that
//! topic into an r-tree indexed view that answers energy aggregates; and
//! [`monitor`] runs the nightly message-count and trip-coverage checks.

pub mod domain;
pub mod geostore;
pub mod join;
pub mod ledger;
pub mod monitor;
pub mod sim;
pub mod spatial;
pub mod static_data;

pub use domain::{
    haversine_m, BoundingBox, DomainError, EnergyModel, FleetKind, GeoPoint, TimeWindowSpec,
    TimestampMs, TopicName, WindowId,
};
pub use ledger::{Broker, BrokerConfig, Capability, Cursor, LedgerError, RecordEnvelope, StartPosition};
