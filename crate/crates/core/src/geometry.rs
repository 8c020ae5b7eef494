//! Polygon path parameters and the small amount of plane geometry they need.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Smallest vertex count a layout polygon may carry.
pub const MIN_VERTICES: usize = 4;
/// Default largest vertex count a layout polygon may carry.
pub const DEFAULT_MAX_VERTICES: usize = 6;

const AREA_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("degenerate polygon: {0}")]
    DegeneratePolygon(&'static str),
    #[error("polygon needs at least {min} vertices, got {got}")]
    TooFewVertices { min: usize, got: usize },
}

/// A point in canvas pixel coordinates (x to the right, y down).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// Round to the 0.01 px grid used by the canonical text form.
///
/// The result is always the f64 nearest to some `k / 100`, so formatting with
/// two decimals and re-parsing gives back the identical value.
pub fn quantize(v: f64) -> f64 {
    (v * 100.0).round() / 100.0 + 0.0
}

/// Axis-aligned box `[cx, cy, w, h]` around a vertex list.
pub fn bounding_box(points: &[Point]) -> Result<[f64; 4], GeometryError> {
    if points.len() < 3 {
        return Err(GeometryError::TooFewVertices { min: 3, got: points.len() });
    }
    let (mut min_x, mut max_x) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut min_y, mut max_y) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in points {
        min_x = min_x.min(p.x);
        max_x = max_x.max(p.x);
        min_y = min_y.min(p.y);
        max_y = max_y.max(p.y);
    }
    let w = max_x - min_x;
    let h = max_y - min_y;
    if w <= 0.0 || h <= 0.0 {
        return Err(GeometryError::DegeneratePolygon("zero-width or zero-height bounding box"));
    }
    Ok([(min_x + max_x) / 2.0, (min_y + max_y) / 2.0, w, h])
}

/// Vertices reordered by angle around their centroid.
///
/// An angularly sorted vertex list is star-shaped about the centroid and so
/// never self-intersects, whatever order the vertices arrived in.
pub fn normalize_vertices(points: &[Point]) -> Vec<Point> {
    let n = points.len().max(1) as f64;
    let cx = points.iter().map(|p| p.x).sum::<f64>() / n;
    let cy = points.iter().map(|p| p.y).sum::<f64>() / n;
    let mut keyed: Vec<(f64, f64, Point)> = points
        .iter()
        .map(|p| {
            let dx = p.x - cx;
            let dy = p.y - cy;
            (dy.atan2(dx), dx * dx + dy * dy, *p)
        })
        .collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    keyed.into_iter().map(|(_, _, p)| p).collect()
}

/// Signed shoelace area.
pub fn signed_area(points: &[Point]) -> f64 {
    let n = points.len();
    let mut acc = 0.0;
    for i in 0..n {
        let a = points[i];
        let b = points[(i + 1) % n];
        acc += a.x * b.y - b.x * a.y;
    }
    acc / 2.0
}

/// Normalized vertex list, rejecting polygons with no area.
pub fn normalized_polygon(points: &[Point]) -> Result<Vec<Point>, GeometryError> {
    if points.len() < 3 {
        return Err(GeometryError::TooFewVertices { min: 3, got: points.len() });
    }
    let poly = normalize_vertices(points);
    if signed_area(&poly).abs() < AREA_EPS {
        return Err(GeometryError::DegeneratePolygon("zero area after normalization"));
    }
    Ok(poly)
}

/// Polygon path parameters: the derived box plus the clip points.
///
/// Coordinates live on the 0.01 px grid and the box is always recomputed
/// from the clip points, so `[cx, cy, w, h]` never disagrees with them.
#[derive(Debug, Clone, PartialEq)]
pub struct PathParams {
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
    clip_points: Vec<Point>,
}

impl PathParams {
    /// Build from absolute clip points; the bounding box is derived.
    pub fn from_points(points: Vec<Point>) -> Result<Self, GeometryError> {
        let clip_points: Vec<Point> =
            points.into_iter().map(|p| Point::new(quantize(p.x), quantize(p.y))).collect();
        let [cx, cy, w, h] = bounding_box(&clip_points)?;
        Ok(Self { cx: quantize(cx), cy: quantize(cy), w: quantize(w), h: quantize(h), clip_points })
    }

    pub fn cx(&self) -> f64 {
        self.cx
    }

    pub fn cy(&self) -> f64 {
        self.cy
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn clip_points(&self) -> &[Point] {
        &self.clip_points
    }

    pub fn vertex_count(&self) -> usize {
        self.clip_points.len()
    }

    /// The flat parameter vector `[cx, cy, w, h, x_1, y_1, ..., x_k, y_k]`.
    pub fn tau(&self) -> Vec<f64> {
        let mut v = vec![self.cx, self.cy, self.w, self.h];
        for p in &self.clip_points {
            v.push(p.x);
            v.push(p.y);
        }
        v
    }

    /// Fixed-length parameter vector scaled to `[0, 1]` by the canvas size.
    ///
    /// Polygons with fewer than `max_vertices` points are padded by repeating
    /// the final vertex, which leaves the shape unchanged.
    pub fn normalized_tau(&self, canvas_w: f64, canvas_h: f64, max_vertices: usize) -> Vec<f64> {
        let mut v = vec![self.cx / canvas_w, self.cy / canvas_h, self.w / canvas_w, self.h / canvas_h];
        let last = *self.clip_points.last().expect("path has vertices");
        for i in 0..max_vertices.max(self.clip_points.len()) {
            let p = self.clip_points.get(i).copied().unwrap_or(last);
            v.push(p.x / canvas_w);
            v.push(p.y / canvas_h);
        }
        v
    }

    /// Copy with every vertex clamped into `[0, w] x [0, h]`.
    pub fn clamped(&self, canvas_w: f64, canvas_h: f64) -> Result<Self, GeometryError> {
        Self::from_points(
            self.clip_points
                .iter()
                .map(|p| Point::new(p.x.clamp(0.0, canvas_w), p.y.clamp(0.0, canvas_h)))
                .collect(),
        )
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Result<Self, GeometryError> {
        Self::from_points(self.clip_points.iter().map(|p| Point::new(p.x + dx, p.y + dy)).collect())
    }
}
