use super::{
    attach_elevation, load_gtfs, load_road_network, load_tmc_definitions, write_gtfs, write_road_network,
    write_tmc_definitions, ElevationGrid, GtfsSchedule, RoadNetwork, StaticDataError, TmcDefinition,
};
use crate::domain::{FleetKind, GeoPoint};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeatherStation {
    pub station_id: String,
    pub position: GeoPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetVehicle {
    pub vehicle_id: String,
    pub fleet: FleetKind,
}

/// All static inputs of a deployment, stored under one directory:
/// `gtfs/`, `network.jsonl`, `elevation.json`, `tmc.json`, `stations.json`, `vehicles.json`.
#[derive(Debug, Clone)]
pub struct StaticBundle {
    pub gtfs: GtfsSchedule,
    /// Elevation already attached when a grid is present.
    pub network: RoadNetwork,
    pub grid: Option<ElevationGrid>,
    pub tmcs: Vec<TmcDefinition>,
    pub stations: Vec<WeatherStation>,
    /// Fleet roster.
    pub vehicles: Vec<FleetVehicle>,
}

impl StaticBundle {
    pub fn load(dir: &Path) -> Result<Self, StaticDataError> {
        let gtfs = load_gtfs(&dir.join("gtfs"))?;
        let mut network = load_road_network(&dir.join("network.jsonl"))?;
        let grid_path = dir.join("elevation.json");
        let grid = if grid_path.exists() { Some(ElevationGrid::load(&grid_path)?) } else { None };
        if let Some(g) = &grid {
            network = attach_elevation(network, g)?;
        }
        let tmc_path = dir.join("tmc.json");
        let tmcs = if tmc_path.exists() { load_tmc_definitions(&tmc_path)? } else { Vec::new() };
        let stations = read_optional_json(&dir.join("stations.json"))?;
        let vehicles = read_optional_json(&dir.join("vehicles.json"))?;
        Ok(Self { gtfs, network, grid, tmcs, stations, vehicles })
    }

    pub fn save(&self, dir: &Path) -> Result<(), StaticDataError> {
        std::fs::create_dir_all(dir).map_err(|source| StaticDataError::Io { path: dir.to_path_buf(), source })?;
        write_gtfs(&dir.join("gtfs"), &self.gtfs)?;
        write_road_network(&dir.join("network.jsonl"), &self.network)?;
        if let Some(g) = &self.grid {
            g.save(&dir.join("elevation.json"))?;
        }
        write_tmc_definitions(&dir.join("tmc.json"), &self.tmcs)?;
        write_json(&dir.join("stations.json"), &self.stations)?;
        write_json(&dir.join("vehicles.json"), &self.vehicles)
    }

    pub fn fleet_of(&self, vehicle_id: &str) -> Option<FleetKind> {
        self.vehicles.iter().find(|v| v.vehicle_id == vehicle_id).map(|v| v.fleet)
    }
}

fn read_optional_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, StaticDataError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = std::fs::read_to_string(path).map_err(|source| StaticDataError::Io { path: path.to_path_buf(), source })?;
    serde_json::from_str(&text).map_err(|e| StaticDataError::MalformedInput { line: e.line() as u64, message: e.to_string() })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), StaticDataError> {
    let text = serde_json::to_string_pretty(value).expect("static json serializes");
    std::fs::write(path, text).map_err(|source| StaticDataError::Io { path: path.to_path_buf(), source })
}
