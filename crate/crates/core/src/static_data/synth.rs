//! Deterministic synthetic city: a street grid with bus routes along alternate
//! streets, a smooth terrain, TMC segments on east-west streets and a weather station.

use super::{
    attach_elevation, ElevationGrid, FleetVehicle, GtfsSchedule, RoadNetwork, RoadNode, Route, ServiceCalendar, StaticBundle, Stop,
    StopTime, TmcDefinition, Trip, WeatherStation,
};
use crate::domain::{FleetKind, GeoPoint};
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthCityConfig {
    pub center: GeoPoint,
    pub grid_size: usize,
    pub spacing_m: f64,
    pub diesel: usize,
    pub electric: usize,
    pub hybrid: usize,
    /// Scheduled running time between adjacent stops, seconds.
    pub leg_s: u32,
    pub dwell_s: u32,
    pub layover_s: u32,
    pub service_start_s: u32,
    pub service_end_s: u32,
}

impl Default for SynthCityConfig {
    fn default() -> Self {
        Self {
            center: GeoPoint::new(35.0456, -85.3097).expect("valid"),
            grid_size: 12,
            spacing_m: 500.0,
            diesel: 50,
            electric: 3,
            hybrid: 7,
            leg_s: 75,
            dwell_s: 15,
            layover_s: 180,
            service_start_s: 5 * 3600,
            service_end_s: 23 * 3600,
        }
    }
}

pub fn vehicle_ids(cfg: &SynthCityConfig) -> Vec<(String, FleetKind)> {
    let mut out = Vec::new();
    for (fleet, n, prefix) in [(FleetKind::Diesel, cfg.diesel, 'd'), (FleetKind::Electric, cfg.electric, 'e'), (FleetKind::Hybrid, cfg.hybrid, 'h')] {
        out.extend((1..=n).map(|i| (format!("{prefix}-{i:03}"), fleet)));
    }
    out
}

pub fn node_id(row: usize, col: usize) -> String {
    format!("n{row:02}{col:02}")
}

pub fn generate_city(cfg: &SynthCityConfig) -> StaticBundle {
    let n = cfg.grid_size.max(2);
    let dlat = cfg.spacing_m / 111_195.0;
    let dlon = dlat / cfg.center.lat().to_radians().cos();
    let half = (n - 1) as f64 / 2.0;
    let pos = |r: usize, c: usize| {
        GeoPoint::new(cfg.center.lat() + (r as f64 - half) * dlat, cfg.center.lon() + (c as f64 - half) * dlon).expect("city inside globe")
    };

    let mut nodes = Vec::new();
    for r in 0..n {
        for c in 0..n {
            nodes.push(RoadNode { id: node_id(r, c), position: pos(r, c), elevation_m: None });
        }
    }
    let mut segs = Vec::new();
    for r in 0..n {
        for c in 0..n - 1 {
            segs.push((format!("h{r:02}{c:02}"), vec![node_id(r, c), node_id(r, c + 1)], None));
        }
    }
    for r in 0..n - 1 {
        for c in 0..n {
            segs.push((format!("v{r:02}{c:02}"), vec![node_id(r, c), node_id(r + 1, c)], None));
        }
    }
    let network = RoadNetwork::new(nodes, segs).expect("generated network is consistent");

    // Terrain: gentle ridge plus a broad slope, sampled on a grid with a margin around the city.
    let cell = dlat / 5.0;
    let margin = 2.0 * dlat;
    let sw = GeoPoint::new(pos(0, 0).lat() - margin, pos(0, 0).lon() - margin).expect("valid");
    let rows = (((n - 1) as f64 * dlat + 2.0 * margin) / cell).ceil() as usize + 1;
    let cols = (((n - 1) as f64 * dlon + 2.0 * margin) / cell).ceil() as usize + 1;
    let mut values = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let (y, x) = (r as f64 / rows as f64, c as f64 / cols as f64);
            values.push(200.0 + 25.0 * (std::f64::consts::PI * 1.3 * y).sin() * (std::f64::consts::PI * 0.9 * x).cos() + 15.0 * x);
        }
    }
    let grid = ElevationGrid::new(sw, cell, rows, cols, values).expect("valid grid");
    let network = attach_elevation(network, &grid).expect("city inside its terrain grid");

    // East-west streets carry TMC segments, offset a few metres from the centreline.
    let mut tmcs = Vec::new();
    for r in 0..n {
        for c in 0..n - 1 {
            let off = 5.0 / 111_195.0;
            let (a, b) = (pos(r, c), pos(r, c + 1));
            tmcs.push(TmcDefinition {
                tmc_id: format!("tmc-{r:02}{c:02}"),
                freeflow_speed_kmh: if r % 3 == 0 { 60.0 } else { 45.0 },
                geometry: vec![
                    GeoPoint::new(a.lat() + off, a.lon()).expect("valid"),
                    GeoPoint::new(b.lat() + off, b.lon()).expect("valid"),
                ],
            });
        }
    }

    let gtfs = schedule(cfg, n, &network);
    let stations = vec![WeatherStation { station_id: "wx-downtown".into(), position: cfg.center }];
    let vehicles = vehicle_ids(cfg).into_iter().map(|(vehicle_id, fleet)| FleetVehicle { vehicle_id, fleet }).collect();
    StaticBundle { gtfs, network, grid: Some(grid), tmcs, stations, vehicles }
}

/// Route `k` of `2·(n/2)` routes: even k run east-west along row `2·(k/2)+1`,
/// odd k run north-south along column `2·(k/2)`.
fn route_nodes(k: usize, n: usize) -> Vec<(usize, usize)> {
    let line = (2 * (k / 2) + if k.is_multiple_of(2) { 1 } else { 0 }).min(n - 1);
    if k.is_multiple_of(2) {
        (0..n).map(|c| (line, c)).collect()
    } else {
        (0..n).map(|r| (r, line)).collect()
    }
}

fn schedule(cfg: &SynthCityConfig, n: usize, network: &RoadNetwork) -> GtfsSchedule {
    let mut gtfs = GtfsSchedule::default();
    for node in network.nodes.values() {
        gtfs.stops.insert(node.id.clone(), Stop { stop_id: node.id.clone(), name: format!("Stop {}", node.id), position: node.position });
    }
    gtfs.calendar.insert(
        "daily".into(),
        ServiceCalendar {
            service_id: "daily".into(),
            weekdays: [true; 7],
            start_date: NaiveDate::from_ymd_opt(2000, 1, 1).expect("valid"),
            end_date: NaiveDate::from_ymd_opt(2099, 12, 31).expect("valid"),
        },
    );
    let n_routes = 2 * (n / 2);
    for k in 0..n_routes {
        let id = format!("r{:02}", k + 1);
        gtfs.routes.insert(id.clone(), Route { route_id: id.clone(), name: format!("Route {}", k + 1) });
    }
    let vehicles = vehicle_ids(cfg);
    let trip_s = (n as u32 - 1) * (cfg.leg_s + cfg.dwell_s);
    let cycle = trip_s + cfg.layover_s;
    let per_route = vehicles.len().div_ceil(n_routes.max(1)).max(1);
    let mut nodes_cache: Vec<Vec<String>> = (0..n_routes).map(|k| route_nodes(k, n).into_iter().map(|(r, c)| node_id(r, c)).collect()).collect();
    for (i, (vid, _)) in vehicles.iter().enumerate() {
        let k = i % n_routes;
        let slot = i / n_routes;
        let route_id = format!("r{:02}", k + 1);
        let mut t = cfg.service_start_s + (slot as u32 * cycle) / per_route as u32;
        let mut forward = slot.is_multiple_of(2);
        let mut j = 0;
        while t + trip_s <= cfg.service_end_s {
            let trip_id = format!("{vid}-t{j:03}");
            let stops = &mut nodes_cache[k];
            if !forward {
                stops.reverse();
            }
            let times: Vec<StopTime> = stops
                .iter()
                .enumerate()
                .map(|(s, stop)| {
                    let arr = t + s as u32 * (cfg.leg_s + cfg.dwell_s);
                    let dep = if s + 1 == stops.len() { arr } else { arr + cfg.dwell_s };
                    StopTime { trip_id: trip_id.clone(), stop_id: stop.clone(), arrival_s: arr, departure_s: dep, sequence: s as u32 + 1 }
                })
                .collect();
            if !forward {
                stops.reverse();
            }
            gtfs.stop_times.insert(trip_id.clone(), times);
            gtfs.trips.insert(
                trip_id.clone(),
                Trip { trip_id, route_id: route_id.clone(), service_id: "daily".into(), vehicle_id: Some(vid.clone()), block_id: Some(format!("b-{vid}")) },
            );
            forward = !forward;
            t += cycle;
            j += 1;
        }
    }
    gtfs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::static_data::{load_gtfs, trips_active_at};

    #[test]
    fn default_city_shape() {
        let cfg = SynthCityConfig::default();
        let city = generate_city(&cfg);
        assert_eq!(city.network.nodes.len(), 144);
        assert_eq!(city.network.segments.len(), 2 * 12 * 11);
        assert_eq!(city.gtfs.routes.len(), 12);
        let vehicles: std::collections::BTreeSet<_> = city.gtfs.trips.values().filter_map(|t| t.vehicle_id.clone()).collect();
        assert_eq!(vehicles.len(), 60);
        assert!(city.network.nodes.values().all(|n| n.elevation_m.is_some()));
        for seg in &city.network.segments {
            assert!((seg.length_m - 500.0).abs() < 5.0, "{} is {}", seg.segment_id, seg.length_m);
        }
        let date = NaiveDate::from_ymd_opt(2020, 3, 7).unwrap();
        assert!(!trips_active_at(&city.gtfs, date).is_empty());
    }

    #[test]
    fn bundle_round_trips_through_disk() {
        let cfg = SynthCityConfig { grid_size: 4, diesel: 2, electric: 1, hybrid: 1, ..Default::default() };
        let city = generate_city(&cfg);
        let dir = tempfile::tempdir().unwrap();
        city.save(dir.path()).unwrap();
        let back = StaticBundle::load(dir.path()).unwrap();
        assert_eq!(back.gtfs, city.gtfs);
        assert_eq!(back.network.segments, city.network.segments);
        assert_eq!(back.tmcs, city.tmcs);
        assert_eq!(back.stations, city.stations);
        assert_eq!(back.vehicles, city.vehicles);
        assert_eq!(load_gtfs(&dir.path().join("gtfs")).unwrap().trips.len(), city.gtfs.trips.len());
    }

    #[test]
    fn consecutive_stops_are_adjacent_nodes() {
        let city = generate_city(&SynthCityConfig::default());
        let adjacent: std::collections::HashSet<(String, String)> = city
            .network
            .segments
            .iter()
            .flat_map(|s| [(s.node_ids[0].clone(), s.node_ids[1].clone()), (s.node_ids[1].clone(), s.node_ids[0].clone())])
            .collect();
        for times in city.gtfs.stop_times.values() {
            for w in times.windows(2) {
                assert!(adjacent.contains(&(w[0].stop_id.clone(), w[1].stop_id.clone())));
            }
        }
    }
}
