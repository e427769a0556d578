//! Convex polygons and Sutherland-Hodgman clipping. Footprints are
//! restricted to convex outlines, so every clip result is again convex and
//! the construction is exact for straight edges.

use super::CutError;
use crate::geom::{polygon_signed_area, BBox, Vec2, GEOM_EPS};

/// Polygons below this area are treated as empty.
pub const AREA_EPS: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq)]
pub struct ConvexPolygon {
    vertices: Vec<Vec2>,
}

impl ConvexPolygon {
    /// Builds a polygon from CCW vertices, merging duplicates within the
    /// geometric tolerance. Errors when the outline is not convex (reflex
    /// corner beyond tolerance) or has non-positive area.
    pub fn new(vertices: Vec<Vec2>) -> Result<Self, CutError> {
        let vertices = dedup(vertices);
        if vertices.len() < 3 {
            return Err(CutError::NonConvexOutline(
                "fewer than three distinct vertices".into(),
            ));
        }
        let area = polygon_signed_area(&vertices);
        if area <= 0.0 {
            return Err(CutError::NonConvexOutline(
                "outline is not counter-clockwise or degenerate".into(),
            ));
        }
        let n = vertices.len();
        for i in 0..n {
            let a = vertices[i];
            let b = vertices[(i + 1) % n];
            let c = vertices[(i + 2) % n];
            if (b - a).cross(c - b) < -GEOM_EPS {
                return Err(CutError::NonConvexOutline(format!(
                    "reflex corner near ({:.6}, {:.6})",
                    b.x, b.y
                )));
            }
        }
        Ok(ConvexPolygon { vertices })
    }

    pub fn from_triangle(a: Vec2, b: Vec2, c: Vec2) -> Result<Self, CutError> {
        ConvexPolygon::new(vec![a, b, c])
    }

    pub fn vertices(&self) -> &[Vec2] {
        &self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn area(&self) -> f64 {
        polygon_signed_area(&self.vertices)
    }

    pub fn bbox(&self) -> BBox {
        BBox::from_points(&self.vertices)
    }

    /// Closed-polygon membership with slack on the half-plane distances.
    pub fn contains(&self, p: Vec2, slack: f64) -> bool {
        let n = self.vertices.len();
        (0..n).all(|i| {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            (b - a).cross(p - a) >= -slack * (b - a).norm().max(1.0)
        })
    }
}

fn dedup(pts: Vec<Vec2>) -> Vec<Vec2> {
    let mut out: Vec<Vec2> = Vec::with_capacity(pts.len());
    for p in pts {
        if out.last().map_or(true, |q| (*q - p).norm() > GEOM_EPS) {
            out.push(p);
        }
    }
    while out.len() > 1 && (out[0] - *out.last().unwrap()).norm() <= GEOM_EPS {
        out.pop();
    }
    out
}

/// Clips a convex CCW subject polygon against a convex clip polygon.
/// Returns `None` when the intersection is empty (or has negligible area).
pub fn clip_polygon(subject: &[Vec2], clip: &ConvexPolygon) -> Option<ConvexPolygon> {
    let mut current: Vec<Vec2> = subject.to_vec();
    let cv = clip.vertices();
    let n = cv.len();
    for i in 0..n {
        if current.is_empty() {
            return None;
        }
        let a = cv[i];
        let b = cv[(i + 1) % n];
        let dir = b - a;
        let dist = |p: Vec2| dir.cross(p - a);
        let mut next = Vec::with_capacity(current.len() + 1);
        let m = current.len();
        for k in 0..m {
            let p = current[k];
            let q = current[(k + 1) % m];
            let dp = dist(p);
            let dq = dist(q);
            if dp >= 0.0 {
                next.push(p);
            }
            if (dp > 0.0 && dq < 0.0) || (dp < 0.0 && dq > 0.0) {
                let t = dp / (dp - dq);
                next.push(p + (q - p) * t);
            }
        }
        current = next;
    }
    let current = dedup(current);
    if current.len() < 3 {
        return None;
    }
    let area = polygon_signed_area(&current);
    if area < AREA_EPS {
        return None;
    }
    // The result of clipping convex-with-convex is convex up to roundoff.
    Some(ConvexPolygon { vertices: current })
}

/// Intersection of a triangle with a convex polygon; `None` when empty.
pub fn clip_triangle(tri: [Vec2; 3], poly: &ConvexPolygon) -> Option<ConvexPolygon> {
    clip_polygon(&tri, poly)
}
