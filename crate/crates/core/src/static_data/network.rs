//! Road network graph in the JSON-lines interchange format.
//!
//! ```text
//! {"node": {"id": "n1", "lat": 35.0456, "lon": -85.3097}}
//! {"segment": {"id": "s1", "nodes": ["n1", "n2"], "polyline": [[35.0456, -85.3097], [35.0556, -85.3097]]}}
//! ```
//!
//! Nodes may carry `elevation_m`. A segment without `polyline` uses its node positions.

use super::StaticDataError;
use crate::domain::{haversine_m, BoundingBox, GeoPoint, LocalProjection};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadNode {
    pub id: String,
    pub position: GeoPoint,
    pub elevation_m: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadSegment {
    pub segment_id: String,
    pub node_ids: Vec<String>,
    pub polyline: Vec<GeoPoint>,
    pub length_m: f64,
    /// Rise from first to last node over length, in percent. Zero until elevation is attached.
    pub grade_pct: f64,
    /// Distance along the polyline of each entry in `node_ids`.
    pub node_chainage_m: Vec<f64>,
}

impl RoadSegment {
    pub fn bbox(&self) -> BoundingBox {
        BoundingBox::of_points(&self.polyline).expect("segment polyline has at least two points")
    }

    /// Point halfway along the polyline.
    pub fn midpoint(&self) -> GeoPoint {
        self.point_at(self.length_m / 2.0)
    }

    /// Point at distance `d` along the polyline, clamped to its ends.
    pub fn point_at(&self, d: f64) -> GeoPoint {
        let mut remaining = d.max(0.0);
        for w in self.polyline.windows(2) {
            let leg = haversine_m(w[0], w[1]);
            if remaining <= leg {
                return if leg > 0.0 { w[0].lerp(&w[1], remaining / leg) } else { w[0] };
            }
            remaining -= leg;
        }
        *self.polyline.last().expect("non-empty polyline")
    }

    /// Distance along the polyline of the closest point to `p`, and the offset from it.
    pub fn locate(&self, p: GeoPoint) -> (f64, f64) {
        let proj = LocalProjection::centered_at(p);
        let mut best = (0.0, f64::INFINITY);
        let mut walked = 0.0;
        for w in self.polyline.windows(2) {
            let leg = haversine_m(w[0], w[1]);
            let (ax, ay) = proj.project(w[0].lat(), w[0].lon());
            let (bx, by) = proj.project(w[1].lat(), w[1].lon());
            let (dx, dy) = (bx - ax, by - ay);
            let len2 = dx * dx + dy * dy;
            let t = if len2 > 0.0 { ((-ax * dx - ay * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
            let (cx, cy) = (ax + t * dx, ay + t * dy);
            let off = (cx * cx + cy * cy).sqrt();
            if off < best.1 {
                best = (walked + t * leg, off);
            }
            walked += leg;
        }
        best
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RoadNetwork {
    pub nodes: BTreeMap<String, RoadNode>,
    pub segments: Vec<RoadSegment>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl RoadNetwork {
    /// Validate references and compute derived segment fields.
    pub fn new(nodes: Vec<RoadNode>, raw_segments: Vec<(String, Vec<String>, Option<Vec<GeoPoint>>)>) -> Result<Self, StaticDataError> {
        let mut node_map = BTreeMap::new();
        for n in nodes {
            if node_map.contains_key(&n.id) {
                return Err(StaticDataError::MalformedInput { line: 0, message: format!("duplicate node id {:?}", n.id) });
            }
            node_map.insert(n.id.clone(), n);
        }
        let mut missing: Vec<String> = raw_segments
            .iter()
            .flat_map(|(_, ids, _)| ids.iter())
            .filter(|id| !node_map.contains_key(*id))
            .cloned()
            .collect();
        if !missing.is_empty() {
            missing.sort();
            missing.dedup();
            return Err(StaticDataError::DanglingReference { entity: "node", ids: missing });
        }
        let mut net = RoadNetwork { nodes: node_map, segments: Vec::with_capacity(raw_segments.len()), index: HashMap::new() };
        for (id, node_ids, polyline) in raw_segments {
            if node_ids.len() < 2 {
                return Err(StaticDataError::MalformedInput { line: 0, message: format!("segment {id:?} needs at least two nodes") });
            }
            let polyline = match polyline {
                Some(p) if p.len() >= 2 => p,
                Some(_) => {
                    return Err(StaticDataError::MalformedInput { line: 0, message: format!("segment {id:?} polyline needs at least two points") })
                }
                None => node_ids.iter().map(|n| net.nodes[n].position).collect(),
            };
            let length_m: f64 = polyline.windows(2).map(|w| haversine_m(w[0], w[1])).sum();
            if length_m <= 0.0 {
                return Err(StaticDataError::MalformedInput { line: 0, message: format!("segment {id:?} has zero length") });
            }
            if net.index.insert(id.clone(), net.segments.len()).is_some() {
                return Err(StaticDataError::MalformedInput { line: 0, message: format!("duplicate segment id {id:?}") });
            }
            let mut seg = RoadSegment { segment_id: id, node_ids, polyline, length_m, grade_pct: 0.0, node_chainage_m: Vec::new() };
            let chain: Vec<f64> = seg.node_ids.iter().map(|n| seg.locate(net.nodes[n].position).0).collect();
            seg.node_chainage_m = chain;
            net.segments.push(seg);
        }
        net.recompute_grades();
        Ok(net)
    }

    pub fn segment(&self, id: &str) -> Option<&RoadSegment> {
        self.index.get(id).map(|&i| &self.segments[i])
    }

    pub(super) fn recompute_grades(&mut self) {
        for seg in &mut self.segments {
            let first = self.nodes[&seg.node_ids[0]].elevation_m;
            let last = self.nodes[seg.node_ids.last().expect("two nodes")].elevation_m;
            seg.grade_pct = match (first, last) {
                (Some(a), Some(b)) => (b - a) / seg.length_m * 100.0,
                _ => 0.0,
            };
        }
    }

    /// Elevation at the point of `segment` closest to `p`, linear between its nodes.
    pub fn elevation_along(&self, segment: &RoadSegment, p: GeoPoint) -> Option<f64> {
        for n in &segment.node_ids {
            let node = &self.nodes[n];
            if crate::domain::haversine_m(node.position, p) < 1e-6 {
                return node.elevation_m;
            }
        }
        let (d, _) = segment.locate(p);
        let profile: Vec<(f64, f64)> = segment
            .node_ids
            .iter()
            .zip(&segment.node_chainage_m)
            .map(|(n, &c)| self.nodes[n].elevation_m.map(|e| (c, e)))
            .collect::<Option<_>>()?;
        let mut profile = profile;
        profile.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (first, last) = (profile[0], profile[profile.len() - 1]);
        if d <= first.0 {
            return Some(first.1);
        }
        if d >= last.0 {
            return Some(last.1);
        }
        profile.windows(2).find(|w| d <= w[1].0).map(|w| {
            let span = w[1].0 - w[0].0;
            if span <= 0.0 { w[1].1 } else { w[0].1 + (w[1].1 - w[0].1) * (d - w[0].0) / span }
        })
    }

    /// Rebuild the id index after deserialization.
    pub fn reindex(&mut self) {
        self.index = self.segments.iter().enumerate().map(|(i, s)| (s.segment_id.clone(), i)).collect();
    }
}

#[derive(Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
enum Line {
    Node(NodeLine),
    Segment(SegmentLine),
}

#[derive(Deserialize, Serialize)]
struct NodeLine {
    id: String,
    lat: f64,
    lon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    elevation_m: Option<f64>,
}

#[derive(Deserialize, Serialize)]
struct SegmentLine {
    id: String,
    nodes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    polyline: Option<Vec<[f64; 2]>>,
}

pub fn load_road_network(path: &Path) -> Result<RoadNetwork, StaticDataError> {
    let file = std::fs::File::open(path).map_err(|source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            StaticDataError::MissingFile(path.to_path_buf())
        } else {
            StaticDataError::Io { path: path.to_path_buf(), source }
        }
    })?;
    let mut nodes = Vec::new();
    let mut segments = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i as u64 + 1;
        let line = line.map_err(|source| StaticDataError::Io { path: path.to_path_buf(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| StaticDataError::MalformedInput { line: line_no, message };
        match serde_json::from_str::<Line>(&line).map_err(|e| bad(e.to_string()))? {
            Line::Node(n) => {
                let position = GeoPoint::new(n.lat, n.lon).map_err(|e| bad(e.to_string()))?;
                nodes.push(RoadNode { id: n.id, position, elevation_m: n.elevation_m });
            }
            Line::Segment(s) => {
                let polyline = s
                    .polyline
                    .map(|pts| pts.into_iter().map(|[lat, lon]| GeoPoint::new(lat, lon)).collect::<Result<Vec<_>, _>>())
                    .transpose()
                    .map_err(|e| bad(e.to_string()))?;
                segments.push((s.id, s.nodes, polyline));
            }
        }
    }
    RoadNetwork::new(nodes, segments)
}

pub fn write_road_network(path: &Path, net: &RoadNetwork) -> Result<(), StaticDataError> {
    let io = |source| StaticDataError::Io { path: path.to_path_buf(), source };
    let mut w = BufWriter::new(std::fs::File::create(path).map_err(io)?);
    let mut emit = |line: &Line| -> Result<(), StaticDataError> {
        serde_json::to_writer(&mut w, line).map_err(|e| io(e.into()))?;
        w.write_all(b"\n").map_err(io)
    };
    for n in net.nodes.values() {
        emit(&Line::Node(NodeLine { id: n.id.clone(), lat: n.position.lat(), lon: n.position.lon(), elevation_m: n.elevation_m }))?;
    }
    for s in &net.segments {
        emit(&Line::Segment(SegmentLine {
            id: s.segment_id.clone(),
            nodes: s.node_ids.clone(),
            polyline: Some(s.polyline.iter().map(|p| [p.lat(), p.lon()]).collect()),
        }))?;
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, body: &str) -> std::path::PathBuf {
        let p = dir.join("net.jsonl");
        std::fs::write(&p, body).unwrap();
        p
    }

    const TWO_NODES: &str = r#"{"node": {"id": "a", "lat": 35.0456, "lon": -85.3097}}
{"node": {"id": "b", "lat": 35.0556, "lon": -85.3097}}
{"segment": {"id": "s1", "nodes": ["a", "b"], "polyline": [[35.0456, -85.3097], [35.0556, -85.3097]]}}
"#;

    #[test]
    fn segment_length_matches_reference_distance() {
        let dir = tempfile::tempdir().unwrap();
        let net = load_road_network(&write(dir.path(), TWO_NODES)).unwrap();
        let len = net.segment("s1").unwrap().length_m;
        // Reference great-circle distance for this pair, computed independently.
        let reference = 1111.95080233526;
        assert!((len - reference).abs() / reference < 1e-3);
        assert!((len - 1112.0).abs() / 1112.0 < 1e-3);
    }

    #[test]
    fn dangling_node_and_empty_network() {
        let dir = tempfile::tempdir().unwrap();
        let body = r#"{"node": {"id": "a", "lat": 35.0, "lon": -85.0}}
{"segment": {"id": "s1", "nodes": ["a", "zz"]}}
"#;
        match load_road_network(&write(dir.path(), body)) {
            Err(StaticDataError::DanglingReference { ids, .. }) => assert_eq!(ids, vec!["zz"]),
            other => panic!("unexpected {other:?}"),
        }
        let net = load_road_network(&write(dir.path(), "")).unwrap();
        assert!(net.segments.is_empty() && net.nodes.is_empty());
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!("{}{{\"node\": {{\"id\": \"c\"}}}}\n", TWO_NODES);
        assert!(matches!(load_road_network(&write(dir.path(), &body)), Err(StaticDataError::MalformedInput { line: 4, .. })));
    }

    #[test]
    fn round_trip_and_polyline_default() {
        let dir = tempfile::tempdir().unwrap();
        let body = r#"{"node": {"id": "a", "lat": 35.0, "lon": -85.0, "elevation_m": 200.0}}
{"node": {"id": "b", "lat": 35.001, "lon": -85.0, "elevation_m": 210.0}}
{"segment": {"id": "s1", "nodes": ["a", "b"]}}
"#;
        let net = load_road_network(&write(dir.path(), body)).unwrap();
        let seg = net.segment("s1").unwrap();
        assert_eq!(seg.polyline.len(), 2);
        assert!((seg.grade_pct - 10.0 / seg.length_m * 100.0).abs() < 1e-12);
        let out = dir.path().join("out.jsonl");
        write_road_network(&out, &net).unwrap();
        let again = load_road_network(&out).unwrap();
        assert_eq!(again.nodes, net.nodes);
        assert_eq!(again.segments, net.segments);
        assert_eq!(net.elevation_along(seg, net.nodes["b"].position), Some(210.0));
        let mid = net.elevation_along(seg, seg.midpoint()).unwrap();
        assert!((mid - 205.0).abs() < 1e-6);
    }
}
