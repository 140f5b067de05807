//! Static road context for enrichment: nearest segment, elevation, grade, TMC, schedule routes.

use super::JoinError;
use crate::domain::{distance_to_polyline_m, haversine_m, GeoPoint, LocalProjection};
use crate::spatial::RTree;
use crate::static_data::{map_segments_to_tmc, GtfsSchedule, RoadNetwork, StaticBundle, WeatherStation};
use std::collections::BTreeMap;

/// R-tree over segment bounding boxes.
#[derive(Debug, Clone)]
pub struct SegmentIndex {
    tree: RTree<usize>,
}

impl SegmentIndex {
    pub fn build(network: &RoadNetwork) -> Self {
        let mut tree = RTree::default();
        for (i, s) in network.segments.iter().enumerate() {
            tree.insert(s.bbox(), i);
        }
        Self { tree }
    }

    pub fn len(&self) -> usize {
        self.tree.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tree.len() == 0
    }
}

/// Nearest segment to `p` and its distance in metres; equal distances resolve to the smallest id.
pub fn nearest_segment<'n>(
    p: GeoPoint,
    network: &'n RoadNetwork,
    index: &SegmentIndex,
) -> Result<(&'n str, f64), JoinError> {
    let proj = LocalProjection::centered_at(p);
    index
        .tree
        .nearest_by(
            |b| proj.distance_to_bbox(b),
            |&i| distance_to_polyline_m(p, &network.segments[i].polyline),
            |&i| network.segments[i].segment_id.as_str(),
            1e-9,
        )
        .map(|(&i, d)| (network.segments[i].segment_id.as_str(), d))
        .ok_or(JoinError::EmptyNetwork)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoadContext {
    pub segment_id: String,
    pub distance_m: f64,
    pub elevation_m: Option<f64>,
    pub grade_pct: f64,
    pub tmc_id: Option<String>,
}

/// Everything the join reads from static data. Read-only once built.
#[derive(Debug, Clone, Default)]
pub struct StaticContext {
    network: Option<(RoadNetwork, SegmentIndex)>,
    segment_tmc: BTreeMap<String, String>,
    gtfs: Option<GtfsSchedule>,
    stations: Vec<WeatherStation>,
}

impl StaticContext {
    /// No road network or schedule: samples are emitted unenriched.
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn from_bundle(bundle: &StaticBundle, tmc_max_distance_m: f64) -> Self {
        let network = (!bundle.network.segments.is_empty())
            .then(|| (bundle.network.clone(), SegmentIndex::build(&bundle.network)));
        let segment_tmc = map_segments_to_tmc(&bundle.network, &bundle.tmcs, tmc_max_distance_m);
        Self { network, segment_tmc, gtfs: Some(bundle.gtfs.clone()), stations: bundle.stations.clone() }
    }

    pub fn has_network(&self) -> bool {
        self.network.is_some()
    }

    pub fn road_context(&self, p: GeoPoint) -> Result<RoadContext, JoinError> {
        let (net, index) = self.network.as_ref().ok_or(JoinError::EmptyNetwork)?;
        let (id, distance_m) = nearest_segment(p, net, index)?;
        let seg = net.segment(id).expect("indexed segment exists");
        Ok(RoadContext {
            segment_id: id.to_string(),
            distance_m,
            elevation_m: net.elevation_along(seg, p),
            grade_pct: seg.grade_pct,
            tmc_id: self.segment_tmc.get(id).cloned(),
        })
    }

    /// Nearest station; ties resolve to the smallest id.
    pub fn nearest_station(&self, p: GeoPoint) -> Option<&str> {
        self.stations
            .iter()
            .map(|s| (haversine_m(p, s.position), s.station_id.as_str()))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(b.1)))
            .map(|(_, id)| id)
    }

    /// Route the schedule assigns to `trip_id`, if the trip is known.
    pub fn scheduled_route(&self, trip_id: &str) -> Option<&str> {
        self.gtfs.as_ref()?.trips.get(trip_id).map(|t| t.route_id.as_str())
    }
}
