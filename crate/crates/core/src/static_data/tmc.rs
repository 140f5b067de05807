//! Traffic message channel (TMC) segment definitions: the static prototype
//! each traffic record is generated from, and the geometry used to map road
//! segments onto traffic readings.

use super::{RoadNetwork, StaticDataError};
use crate::domain::{distance_to_polyline_m, GeoPoint};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TmcDefinition {
    pub tmc_id: String,
    pub freeflow_speed_kmh: f64,
    pub geometry: Vec<GeoPoint>,
}

pub fn load_tmc_definitions(path: &Path) -> Result<Vec<TmcDefinition>, StaticDataError> {
    let text = std::fs::read_to_string(path).map_err(|source| match source.kind() {
        std::io::ErrorKind::NotFound => StaticDataError::MissingFile(path.to_path_buf()),
        _ => StaticDataError::Io { path: path.to_path_buf(), source },
    })?;
    let defs: Vec<TmcDefinition> =
        serde_json::from_str(&text).map_err(|e| StaticDataError::MalformedInput { line: e.line() as u64, message: e.to_string() })?;
    for d in &defs {
        if d.geometry.len() < 2 || d.freeflow_speed_kmh.is_nan() || d.freeflow_speed_kmh <= 0.0 {
            return Err(StaticDataError::MalformedInput {
                line: 0,
                message: format!("tmc {:?} needs >= 2 geometry points and a positive free-flow speed", d.tmc_id),
            });
        }
    }
    Ok(defs)
}

pub fn write_tmc_definitions(path: &Path, defs: &[TmcDefinition]) -> Result<(), StaticDataError> {
    let text = serde_json::to_string_pretty(defs).expect("tmc definitions serialize");
    std::fs::write(path, text).map_err(|source| StaticDataError::Io { path: path.to_path_buf(), source })
}

/// For each road segment, the TMC whose geometry is nearest its midpoint, if within `max_m`.
/// Ties go to the smaller tmc id.
pub fn map_segments_to_tmc(network: &RoadNetwork, defs: &[TmcDefinition], max_m: f64) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for seg in &network.segments {
        let mid: GeoPoint = seg.midpoint();
        let best = defs
            .iter()
            .map(|d| (distance_to_polyline_m(mid, &d.geometry), d.tmc_id.as_str()))
            .filter(|(d, _)| *d <= max_m)
            .min_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
        if let Some((_, id)) = best {
            out.insert(seg.segment_id.clone(), id.to_string());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::static_data::RoadNode;

    #[test]
    fn segments_map_to_nearby_tmc_only() {
        let p = |lat, lon| GeoPoint::new(lat, lon).unwrap();
        let nodes = vec![
            RoadNode { id: "a".into(), position: p(35.0, -85.0), elevation_m: None },
            RoadNode { id: "b".into(), position: p(35.0, -84.995), elevation_m: None },
            RoadNode { id: "c".into(), position: p(35.01, -85.0), elevation_m: None },
        ];
        let net = RoadNetwork::new(
            nodes,
            vec![("east".into(), vec!["a".into(), "b".into()], None), ("north".into(), vec!["a".into(), "c".into()], None)],
        )
        .unwrap();
        let defs = vec![TmcDefinition { tmc_id: "t1".into(), freeflow_speed_kmh: 50.0, geometry: vec![p(35.0001, -85.0), p(35.0001, -84.995)] }];
        let map = map_segments_to_tmc(&net, &defs, 100.0);
        assert_eq!(map.get("east").map(String::as_str), Some("t1"));
        assert!(!map.contains_key("north"));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tmc.json");
        write_tmc_definitions(&path, &defs).unwrap();
        assert_eq!(load_tmc_definitions(&path).unwrap(), defs);
    }
}
