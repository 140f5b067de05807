//! Raster elevation grid sampled bilinearly.
//!
//! File format: one JSON object `{"origin": {"lat", "lon"}, "cell_deg", "rows", "cols", "values"}`
//! with `values` row-major, row 0 at the southern edge. Cell `(r, c)` covers
//! `[origin + r·cell, origin + (r+1)·cell)` in latitude (likewise columns in longitude)
//! and its value applies at the cell centre.

use super::{RoadNetwork, StaticDataError};
use crate::domain::GeoPoint;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGrid")]
pub struct ElevationGrid {
    origin: GeoPoint,
    cell_deg: f64,
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

#[derive(Deserialize)]
struct RawGrid {
    origin: GeoPoint,
    cell_deg: f64,
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl TryFrom<RawGrid> for ElevationGrid {
    type Error = String;
    fn try_from(r: RawGrid) -> Result<Self, String> {
        ElevationGrid::new(r.origin, r.cell_deg, r.rows, r.cols, r.values)
    }
}

impl ElevationGrid {
    pub fn new(origin: GeoPoint, cell_deg: f64, rows: usize, cols: usize, values: Vec<f64>) -> Result<Self, String> {
        if !(cell_deg > 0.0 && cell_deg.is_finite()) {
            return Err(format!("cell_deg must be positive, got {cell_deg}"));
        }
        if rows == 0 || cols == 0 || values.len() != rows * cols {
            return Err(format!("grid is {rows}x{cols} but has {} values", values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err("grid values must be finite".into());
        }
        Ok(Self { origin, cell_deg, rows, cols, values })
    }

    pub fn uniform(origin: GeoPoint, cell_deg: f64, rows: usize, cols: usize, value: f64) -> Self {
        Self::new(origin, cell_deg, rows, cols, vec![value; rows * cols]).expect("valid uniform grid")
    }

    pub fn load(path: &Path) -> Result<Self, StaticDataError> {
        let text = std::fs::read_to_string(path).map_err(|source| match source.kind() {
            std::io::ErrorKind::NotFound => StaticDataError::MissingFile(path.to_path_buf()),
            _ => StaticDataError::Io { path: path.to_path_buf(), source },
        })?;
        serde_json::from_str(&text).map_err(|e| StaticDataError::MalformedInput { line: e.line() as u64, message: e.to_string() })
    }

    pub fn save(&self, path: &Path) -> Result<(), StaticDataError> {
        let text = serde_json::to_string(self).expect("grid serializes");
        std::fs::write(path, text).map_err(|source| StaticDataError::Io { path: path.to_path_buf(), source })
    }

    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn cell_center(&self, row: usize, col: usize) -> GeoPoint {
        GeoPoint::new(
            self.origin.lat() + (row as f64 + 0.5) * self.cell_deg,
            self.origin.lon() + (col as f64 + 0.5) * self.cell_deg,
        )
        .expect("cell centre inside grid")
    }

    fn contains(&self, p: GeoPoint) -> bool {
        let (dlat, dlon) = (p.lat() - self.origin.lat(), p.lon() - self.origin.lon());
        dlat >= 0.0 && dlon >= 0.0 && dlat <= self.rows as f64 * self.cell_deg && dlon <= self.cols as f64 * self.cell_deg
    }

    /// Bilinear sample between the four surrounding cell centres; `None` outside the grid.
    /// Beyond the outermost centres the nearest edge values are held.
    pub fn sample(&self, p: GeoPoint) -> Option<f64> {
        if !self.contains(p) {
            return None;
        }
        let axis = |delta: f64, n: usize| -> (usize, usize, f64) {
            let x = (delta / self.cell_deg - 0.5).clamp(0.0, (n - 1) as f64);
            let i0 = (x.floor() as usize).min(n - 1);
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, x - i0 as f64)
        };
        let (r0, r1, fr) = axis(p.lat() - self.origin.lat(), self.rows);
        let (c0, c1, fc) = axis(p.lon() - self.origin.lon(), self.cols);
        let south = self.value(r0, c0) * (1.0 - fc) + self.value(r0, c1) * fc;
        let north = self.value(r1, c0) * (1.0 - fc) + self.value(r1, c1) * fc;
        Some(south * (1.0 - fr) + north * fr)
    }
}

/// Set every node's elevation from the grid and recompute segment grades.
pub fn attach_elevation(mut network: RoadNetwork, grid: &ElevationGrid) -> Result<RoadNetwork, StaticDataError> {
    let mut outside = Vec::new();
    for node in network.nodes.values_mut() {
        match grid.sample(node.position) {
            Some(e) => node.elevation_m = Some(e),
            None => outside.push(node.id.clone()),
        }
    }
    if !outside.is_empty() {
        return Err(StaticDataError::OutOfGridBounds(outside));
    }
    network.recompute_grades();
    Ok(network)
}
