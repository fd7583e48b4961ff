//! Planar polygon cropping: aerial tiles are cut by their (x, y) footprint,
//! z plays no part in membership.

use thiserror::Error;

use crate::cloud::PointCloud;

#[derive(Debug, Error, PartialEq)]
pub enum PolygonError {
    #[error("polygon needs at least 3 vertices, got {0}")]
    TooFewVertices(usize),
    #[error("vertex {0} has a non-finite coordinate")]
    NonFiniteVertex(usize),
    #[error("vertices {0} and {1} are consecutive duplicates")]
    DuplicateVertex(usize, usize),
}

/// Simple polygon in the xy plane, implicitly closed (the last vertex
/// connects back to the first; do not repeat it).
#[derive(Clone, Debug, PartialEq)]
pub struct Polygon2D {
    vertices: Vec<(f64, f64)>,
}

impl Polygon2D {
    pub fn new(vertices: Vec<(f64, f64)>) -> Result<Self, PolygonError> {
        if vertices.len() < 3 {
            return Err(PolygonError::TooFewVertices(vertices.len()));
        }
        for (i, &(x, y)) in vertices.iter().enumerate() {
            if !(x.is_finite() && y.is_finite()) {
                return Err(PolygonError::NonFiniteVertex(i));
            }
            let j = (i + 1) % vertices.len();
            if vertices[i] == vertices[j] {
                return Err(PolygonError::DuplicateVertex(i, j));
            }
        }
        Ok(Self { vertices })
    }

    pub fn vertices(&self) -> &[(f64, f64)] {
        &self.vertices
    }
}

fn on_segment(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> bool {
    let cross = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
    if cross != 0.0 {
        return false;
    }
    p.0 >= a.0.min(b.0) && p.0 <= a.0.max(b.0) && p.1 >= a.1.min(b.1) && p.1 <= a.1.max(b.1)
}

/// Even-odd (ray casting) membership test. A point exactly on an edge or
/// vertex counts as inside.
pub fn point_in_polygon(p: (f64, f64), poly: &Polygon2D) -> bool {
    let v = &poly.vertices;
    let n = v.len();
    let mut inside = false;
    for i in 0..n {
        let a = v[i];
        let b = v[(i + 1) % n];
        if on_segment(p, a, b) {
            return true;
        }
        // horizontal ray to +x, half-open in y so vertices count once
        if (a.1 > p.1) != (b.1 > p.1) {
            let x_cross = a.0 + (p.1 - a.1) / (b.1 - a.1) * (b.0 - a.0);
            if p.0 < x_cross {
                inside = !inside;
            }
        }
    }
    inside
}

/// Sub-cloud of points whose (x, y) lie inside the polygon, preserving
/// relative order and every attribute column; z is ignored for membership.
pub fn crop(cloud: &PointCloud, poly: &Polygon2D) -> PointCloud {
    let keep: Vec<usize> = (0..cloud.len())
        .filter(|&i| point_in_polygon((cloud.xs()[i], cloud.ys()[i]), poly))
        .collect();
    cloud.select(&keep)
}
