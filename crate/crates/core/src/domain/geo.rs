use super::DomainError;
use serde::{Deserialize, Deserializer, Serialize};

/// Mean Earth radius.
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

/// WGS84 position in degrees. Ranges are enforced at construction and deserialization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GeoPoint {
    lat: f64,
    lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self, DomainError> {
        if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            return Err(DomainError::InvalidCoordinate { lat, lon });
        }
        Ok(Self { lat, lon })
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }

    /// Linear interpolation in degree space; adequate for the sub-kilometre legs used here.
    pub fn lerp(&self, other: &GeoPoint, t: f64) -> GeoPoint {
        GeoPoint {
            lat: self.lat + (other.lat - self.lat) * t,
            lon: self.lon + (other.lon - self.lon) * t,
        }
    }
}

impl<'de> Deserialize<'de> for GeoPoint {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            lat: f64,
            lon: f64,
        }
        let raw = Raw::deserialize(d)?;
        GeoPoint::new(raw.lat, raw.lon).map_err(serde::de::Error::custom)
    }
}

/// Great-circle distance in metres.
pub fn haversine_m(a: GeoPoint, b: GeoPoint) -> f64 {
    let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
    let dp = p2 - p1;
    let dl = (b.lon - a.lon).to_radians();
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Equirectangular projection centred on a reference point, in metres.
///
/// The mapping is affine in (lat, lon), so rectangles project to rectangles and
/// distances to a projected rectangle bound distances to anything inside it.
#[derive(Debug, Clone, Copy)]
pub struct LocalProjection {
    lat0: f64,
    lon0: f64,
    kx: f64,
    ky: f64,
}

impl LocalProjection {
    pub fn centered_at(p: GeoPoint) -> Self {
        let ky = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;
        Self {
            lat0: p.lat,
            lon0: p.lon,
            kx: ky * p.lat.to_radians().cos(),
            ky,
        }
    }

    pub fn project(&self, lat: f64, lon: f64) -> (f64, f64) {
        ((lon - self.lon0) * self.kx, (lat - self.lat0) * self.ky)
    }

    /// Distance from the projection centre to the segment `a`–`b`.
    pub fn distance_to_edge(&self, a: GeoPoint, b: GeoPoint) -> f64 {
        let (ax, ay) = self.project(a.lat, a.lon);
        let (bx, by) = self.project(b.lat, b.lon);
        let (dx, dy) = (bx - ax, by - ay);
        let len2 = dx * dx + dy * dy;
        let t = if len2 > 0.0 {
            (-(ax * dx + ay * dy) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let (px, py) = (ax + t * dx, ay + t * dy);
        (px * px + py * py).sqrt()
    }

    /// Distance from the projection centre to the closest point of `bbox`.
    pub fn distance_to_bbox(&self, bbox: &BoundingBox) -> f64 {
        let (x0, y0) = self.project(bbox.min_lat, bbox.min_lon);
        let (x1, y1) = self.project(bbox.max_lat, bbox.max_lon);
        let dx = if x0 > 0.0 { x0 } else if x1 < 0.0 { -x1 } else { 0.0 };
        let dy = if y0 > 0.0 { y0 } else if y1 < 0.0 { -y1 } else { 0.0 };
        (dx * dx + dy * dy).sqrt()
    }
}

/// Point-to-polyline distance under the local projection centred on `p`.
pub fn distance_to_polyline_m(p: GeoPoint, polyline: &[GeoPoint]) -> f64 {
    let proj = LocalProjection::centered_at(p);
    match polyline {
        [] => f64::INFINITY,
        [only] => proj.distance_to_edge(*only, *only),
        _ => polyline
            .windows(2)
            .map(|w| proj.distance_to_edge(w[0], w[1]))
            .fold(f64::INFINITY, f64::min),
    }
}

/// Summed haversine length of a polyline.
pub fn polyline_length_m(polyline: &[GeoPoint]) -> f64 {
    polyline.windows(2).map(|w| haversine_m(w[0], w[1])).sum()
}

/// Inclusive latitude/longitude rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min_lat: f64,
    pub min_lon: f64,
    pub max_lat: f64,
    pub max_lon: f64,
}

impl BoundingBox {
    pub fn new(min_lat: f64, min_lon: f64, max_lat: f64, max_lon: f64) -> Result<Self, DomainError> {
        if !(min_lat <= max_lat && min_lon <= max_lon) {
            return Err(DomainError::InvalidBoundingBox("min must not exceed max on either axis"));
        }
        Ok(Self { min_lat, min_lon, max_lat, max_lon })
    }

    pub fn of_point(p: GeoPoint) -> Self {
        Self { min_lat: p.lat, min_lon: p.lon, max_lat: p.lat, max_lon: p.lon }
    }

    pub fn of_points(points: &[GeoPoint]) -> Option<Self> {
        let first = points.first()?;
        Some(points[1..].iter().fold(Self::of_point(*first), |b, p| b.union(&Self::of_point(*p))))
    }

    /// Everything on the globe.
    pub fn world() -> Self {
        Self { min_lat: -90.0, min_lon: -180.0, max_lat: 90.0, max_lon: 180.0 }
    }

    pub fn contains_point(&self, p: GeoPoint) -> bool {
        p.lat >= self.min_lat && p.lat <= self.max_lat && p.lon >= self.min_lon && p.lon <= self.max_lon
    }

    pub fn contains(&self, other: &BoundingBox) -> bool {
        other.min_lat >= self.min_lat
            && other.max_lat <= self.max_lat
            && other.min_lon >= self.min_lon
            && other.max_lon <= self.max_lon
    }

    pub fn intersects(&self, other: &BoundingBox) -> bool {
        self.min_lat <= other.max_lat
            && other.min_lat <= self.max_lat
            && self.min_lon <= other.max_lon
            && other.min_lon <= self.max_lon
    }

    pub fn union(&self, other: &BoundingBox) -> BoundingBox {
        BoundingBox {
            min_lat: self.min_lat.min(other.min_lat),
            min_lon: self.min_lon.min(other.min_lon),
            max_lat: self.max_lat.max(other.max_lat),
            max_lon: self.max_lon.max(other.max_lon),
        }
    }

    /// Area in squared degrees; only used to compare candidate enlargements.
    pub fn area(&self) -> f64 {
        (self.max_lat - self.min_lat) * (self.max_lon - self.min_lon)
    }

    /// Whether the straight edge `a`–`b` (in degree space) touches this rectangle.
    pub fn intersects_edge(&self, a: GeoPoint, b: GeoPoint) -> bool {
        if self.contains_point(a) || self.contains_point(b) {
            return true;
        }
        let edge_box = BoundingBox::of_point(a).union(&BoundingBox::of_point(b));
        if !self.intersects(&edge_box) {
            return false;
        }
        // Liang-Barsky clip of the parametric edge against the rectangle.
        let (x0, y0) = (a.lon, a.lat);
        let (dx, dy) = (b.lon - a.lon, b.lat - a.lat);
        let mut t0 = 0.0f64;
        let mut t1 = 1.0f64;
        for (p, q) in [
            (-dx, x0 - self.min_lon),
            (dx, self.max_lon - x0),
            (-dy, y0 - self.min_lat),
            (dy, self.max_lat - y0),
        ] {
            if p == 0.0 {
                if q < 0.0 {
                    return false;
                }
            } else {
                let r = q / p;
                if p < 0.0 {
                    t0 = t0.max(r);
                } else {
                    t1 = t1.min(r);
                }
                if t0 > t1 {
                    return false;
                }
            }
        }
        true
    }

    pub fn intersects_polyline(&self, polyline: &[GeoPoint]) -> bool {
        match polyline {
            [] => false,
            [p] => self.contains_point(*p),
            _ => polyline.windows(2).any(|w| self.intersects_edge(w[0], w[1])),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pt(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    #[test]
    fn haversine_identity_is_zero() {
        let a = pt(35.0456, -85.3097);
        assert_eq!(haversine_m(a, a), 0.0);
    }

    #[test]
    fn haversine_matches_reference_value() {
        // Reference: independent double-precision haversine with R = 6371008.8 m.
        let d = haversine_m(pt(35.0456, -85.3097), pt(35.0556, -85.3097));
        assert!((d - 1_111.950_802_335_26).abs() < 1e-6, "{d}");
    }

    #[test]
    fn coordinates_are_range_checked() {
        assert!(GeoPoint::new(90.5, 0.0).is_err());
        assert!(GeoPoint::new(0.0, -180.5).is_err());
        assert!(GeoPoint::new(f64::NAN, 0.0).is_err());
        assert!(serde_json::from_str::<GeoPoint>(r#"{"lat":91,"lon":0}"#).is_err());
    }

    #[test]
    fn edge_intersection_handles_crossing_without_endpoints_inside() {
        let b = BoundingBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
        assert!(b.intersects_edge(pt(-1.0, 0.5), pt(2.0, 0.5)));
        assert!(!b.intersects_edge(pt(-1.0, 2.0), pt(2.0, 2.0)));
        // Diagonal passing by the corner.
        assert!(!b.intersects_edge(pt(1.5, 0.0), pt(3.0, 1.5)));
    }

    proptest! {
        #[test]
        fn haversine_is_symmetric_and_non_negative(
            a in -89.0f64..89.0, b in -179.0f64..179.0,
            c in -89.0f64..89.0, d in -179.0f64..179.0,
        ) {
            let (p, q) = (pt(a, b), pt(c, d));
            let (pq, qp) = (haversine_m(p, q), haversine_m(q, p));
            prop_assert!(pq >= 0.0);
            prop_assert_eq!(pq, qp);
            if (a, b) != (c, d) {
                prop_assert!(pq > 0.0);
            }
        }

        #[test]
        fn bbox_lower_bound_never_exceeds_edge_distance(
            lat in 34.9f64..35.1, lon in -85.4f64..-85.2,
            a in 34.9f64..35.1, b in -85.4f64..-85.2,
            c in 34.9f64..35.1, d in -85.4f64..-85.2,
        ) {
            let proj = LocalProjection::centered_at(pt(lat, lon));
            let (p, q) = (pt(a, b), pt(c, d));
            let bbox = BoundingBox::of_point(p).union(&BoundingBox::of_point(q));
            prop_assert!(proj.distance_to_bbox(&bbox) <= proj.distance_to_edge(p, q) + 1e-9);
        }
    }
}
