//! Multi-source windowed join and static enrichment.

mod config;
mod context;
mod engine;
mod output;
mod runner;

pub use config::{JoinConfig, JoinInput, SourceKind, WindowPreset};
pub use context::{nearest_segment, RoadContext, SegmentIndex, StaticContext};
pub use engine::{EngineSnapshot, Ingest, JoinCounters, JoinEngine, Payload, SourceCounters};
pub use output::{GapRecord, JoinOutput, JoinedSample, Presence, TrafficFields};
pub use runner::{load_context, JoinRunner, JoinStats, Poll};

use crate::ledger::LedgerError;
use crate::static_data::StaticDataError;

#[derive(Debug, thiserror::Error)]
pub enum JoinError {
    #[error("invalid join config: {0}")]
    Config(String),
    #[error("road network is empty")]
    EmptyNetwork,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    StaticData(#[from] StaticDataError),
}

#[cfg(test)]
mod tests;
