//! Static sources: GTFS schedule subset, road network graph, elevation grid,
//! and traffic-segment (TMC) geometry.

mod bundle;
mod elevation;
mod gtfs;
mod network;
pub mod synth;
mod tmc;

pub use bundle::{FleetVehicle, StaticBundle, WeatherStation};
pub use elevation::{attach_elevation, ElevationGrid};
pub use gtfs::{
    load_gtfs, parse_gtfs_time, trips_active_at, write_gtfs, ActiveTrip, GtfsSchedule, Route,
    ServiceCalendar, Stop, StopTime, Trip,
};
pub use network::{load_road_network, write_road_network, RoadNetwork, RoadNode, RoadSegment};
pub use tmc::{load_tmc_definitions, map_segments_to_tmc, write_tmc_definitions, TmcDefinition};

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StaticDataError {
    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),
    #[error("{file}:{line}: {message}")]
    MalformedCsv { file: String, line: u64, message: String },
    #[error("line {line}: {message}")]
    MalformedInput { line: u64, message: String },
    #[error("dangling {entity} reference(s): {}", ids.join(", "))]
    DanglingReference { entity: &'static str, ids: Vec<String> },
    #[error("nodes outside elevation grid: {}", .0.join(", "))]
    OutOfGridBounds(Vec<String>),
    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
