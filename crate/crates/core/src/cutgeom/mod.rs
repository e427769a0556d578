//! Geometric engine of the overlapping-mesh method: classify background
//! cells against submesh footprints, clip, build cut-cell quadratures, and
//! extract interface segments and overlap pieces.

mod clip;
mod interface;
mod svg;

pub use clip::{clip_polygon, clip_triangle, ConvexPolygon, AREA_EPS};
pub use interface::{interface_segments, overlap_pieces, InterfaceSegment, OverlapPiece};
pub use svg::write_classification_svg;

use crate::geom::{point_in_triangle, BBox, Vec2, GEOM_EPS};
use crate::mesh::{marker, Mesh};
use crate::quadrature::mapped_triangle_rule;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CutError {
    #[error("unsupported geometry: outer loop is not convex: {0}")]
    NonConvexOutline(String),
    #[error("no closed loop of marker-{0} facets")]
    MissingMarkerLoop(i32),
    #[error("unsupported configuration: footprints {0} and {1} overlap")]
    OverlappingFootprints(usize, usize),
    #[error("unsupported configuration: background cell {cell} is cut by footprints {a} and {b}")]
    MultiplyCut { cell: usize, a: usize, b: usize },
    #[error(
        "halo thinner than cut front: background cell {cell} crosses the inner loop of \
         submesh {submesh}; the halo must be at least three cells wide"
    )]
    HaloViolation { cell: usize, submesh: usize },
    #[error("geometric inconsistency: {0}")]
    Inconsistent(String),
    #[error("topology error: {0}")]
    Topology(String),
}

/// Status of one background cell against the submesh footprints.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellStatus {
    /// Fully visible.
    Uncut,
    /// Partially hidden by the given submesh footprint.
    Cut { submesh: usize },
    /// Fully hidden.
    Covered { submesh: usize },
}

/// Per-cell classification of a background mesh, with the hidden part of
/// every cut cell cached for quadrature and overlap construction.
#[derive(Debug, Clone)]
pub struct Classification {
    pub status: Vec<CellStatus>,
    /// `Some` exactly for `Cut` cells: the clipped polygon K ∩ footprint.
    pub hidden: Vec<Option<ConvexPolygon>>,
}

impl Classification {
    pub fn n_cells(&self) -> usize {
        self.status.len()
    }

    pub fn is_covered(&self, cell: usize) -> bool {
        matches!(self.status[cell], CellStatus::Covered { .. })
    }

    pub fn hidden_area(&self, cell: usize) -> f64 {
        self.hidden[cell].as_ref().map_or(0.0, |p| p.area())
    }

    pub fn counts(&self) -> (usize, usize, usize) {
        let mut n = (0, 0, 0);
        for s in &self.status {
            match s {
                CellStatus::Uncut => n.0 += 1,
                CellStatus::Cut { .. } => n.1 += 1,
                CellStatus::Covered { .. } => n.2 += 1,
            }
        }
        n
    }
}

/// Footprint of a submesh: the convex outer outline used for covering
/// tests, plus the optional inner guard loop that the cut front must not
/// reach (hole boundary, or the outermost material interface of a cable).
#[derive(Debug, Clone)]
pub struct Footprint {
    pub outline: ConvexPolygon,
    pub guard: Option<ConvexPolygon>,
}

/// Chains all facets with the given marker into one closed CCW loop.
pub fn chain_marker_loop(mesh: &Mesh, m: i32) -> Result<Vec<Vec2>, CutError> {
    use std::collections::HashMap;
    let facets: Vec<[usize; 2]> = mesh
        .facets_with_marker(m)
        .map(|f| mesh.facets[f])
        .collect();
    if facets.is_empty() {
        return Err(CutError::MissingMarkerLoop(m));
    }
    let mut adj: HashMap<usize, Vec<usize>> = HashMap::new();
    for &[a, b] in &facets {
        adj.entry(a).or_default().push(b);
        adj.entry(b).or_default().push(a);
    }
    if adj.values().any(|n| n.len() != 2) {
        return Err(CutError::Topology(format!(
            "marker-{m} facets do not form closed loops"
        )));
    }
    let start = facets[0][0];
    let mut loop_verts = vec![start];
    let mut prev = start;
    let mut cur = adj[&start][0];
    while cur != start {
        loop_verts.push(cur);
        let nbrs = &adj[&cur];
        let next = if nbrs[0] == prev { nbrs[1] } else { nbrs[0] };
        prev = cur;
        cur = next;
    }
    if loop_verts.len() != adj.len() {
        return Err(CutError::Topology(format!(
            "marker-{m} facets form more than one loop"
        )));
    }
    let mut pts: Vec<Vec2> = loop_verts.iter().map(|&v| mesh.vertices[v]).collect();
    if crate::geom::polygon_signed_area(&pts) < 0.0 {
        pts.reverse();
    }
    Ok(pts)
}

/// Convex polygon of the submesh outer loop (marker 2).
pub fn footprint_polygon(submesh: &Mesh) -> Result<ConvexPolygon, CutError> {
    ConvexPolygon::new(chain_marker_loop(submesh, marker::LAMBDA)?)
}

/// Footprint with its guard loop: marker 1 (hole) when present, otherwise
/// marker 4 (outermost material interface), otherwise no guard.
pub fn footprint_of_submesh(submesh: &Mesh) -> Result<Footprint, CutError> {
    let outline = footprint_polygon(submesh)?;
    let guard = if submesh.has_marker(marker::GAMMA) {
        Some(ConvexPolygon::new(chain_marker_loop(submesh, marker::GAMMA)?)?)
    } else if submesh.has_marker(marker::GAMMA_E) {
        Some(ConvexPolygon::new(chain_marker_loop(
            submesh,
            marker::GAMMA_E,
        )?)?)
    } else {
        None
    };
    Ok(Footprint { outline, guard })
}

/// Classifies every background cell as uncut, cut or covered against the
/// footprints. Footprints must be pairwise disjoint, and cut cells must
/// not reach a footprint's guard loop.
pub fn classify_cells(
    background: &Mesh,
    footprints: &[Footprint],
) -> Result<Classification, CutError> {
    for i in 0..footprints.len() {
        for j in (i + 1)..footprints.len() {
            if clip_polygon(footprints[i].outline.vertices(), &footprints[j].outline).is_some()
            {
                return Err(CutError::OverlappingFootprints(i, j));
            }
        }
    }
    let fp_boxes: Vec<BBox> = footprints.iter().map(|f| f.outline.bbox()).collect();
    let n = background.n_cells();
    let mut status = vec![CellStatus::Uncut; n];
    let mut hidden = vec![None; n];
    for cell in 0..n {
        let tri = background.cell_points(cell);
        let cell_area = background.cell_area(cell);
        let tri_box = BBox::from_points(&tri);
        let mut owner: Option<usize> = None;
        for (s, fp) in footprints.iter().enumerate() {
            if !tri_box.intersects(&fp_boxes[s]) {
                continue;
            }
            let Some(part) = clip_triangle(tri, &fp.outline) else {
                continue;
            };
            if let Some(prev) = owner {
                return Err(CutError::MultiplyCut {
                    cell,
                    a: prev,
                    b: s,
                });
            }
            owner = Some(s);
            if part.area() >= cell_area * (1.0 - 1e-10) {
                status[cell] = CellStatus::Covered { submesh: s };
            } else {
                if let Some(guard) = &fp.guard {
                    if clip_triangle(tri, guard).is_some() {
                        return Err(CutError::HaloViolation { cell, submesh: s });
                    }
                }
                status[cell] = CellStatus::Cut { submesh: s };
                hidden[cell] = Some(part);
            }
        }
    }
    Ok(Classification { status, hidden })
}

/// First cell (lowest index) whose closed triangle contains `p`.
pub fn point_locate(mesh: &Mesh, p: Vec2) -> Option<usize> {
    (0..mesh.n_cells()).find(|&c| {
        let [a, b, c3] = mesh.cell_points(c);
        point_in_triangle(p, a, b, c3, GEOM_EPS)
    })
}

/// Uniform-grid accelerator for repeated point location; candidate cells
/// are tested in index order so ties resolve to the lowest index.
pub struct CellLocator {
    bbox: BBox,
    nx: usize,
    ny: usize,
    bins: Vec<Vec<usize>>,
}

impl CellLocator {
    pub fn new(mesh: &Mesh) -> Self {
        let bbox = BBox::from_points(&mesh.vertices).inflated(GEOM_EPS);
        let n_cells = mesh.n_cells().max(1);
        let target = (n_cells as f64).sqrt().ceil() as usize;
        let nx = target.clamp(1, 256);
        let ny = nx;
        let mut bins = vec![Vec::new(); nx * ny];
        for cell in 0..mesh.n_cells() {
            let cb = BBox::from_points(&mesh.cell_points(cell)).inflated(GEOM_EPS);
            let (i0, j0) = Self::bin_of(&bbox, nx, ny, cb.min);
            let (i1, j1) = Self::bin_of(&bbox, nx, ny, cb.max);
            for j in j0..=j1 {
                for i in i0..=i1 {
                    bins[j * nx + i].push(cell);
                }
            }
        }
        CellLocator { bbox, nx, ny, bins }
    }

    fn bin_of(bbox: &BBox, nx: usize, ny: usize, p: Vec2) -> (usize, usize) {
        let w = (bbox.max.x - bbox.min.x).max(f64::MIN_POSITIVE);
        let h = (bbox.max.y - bbox.min.y).max(f64::MIN_POSITIVE);
        let i = (((p.x - bbox.min.x) / w * nx as f64) as isize).clamp(0, nx as isize - 1);
        let j = (((p.y - bbox.min.y) / h * ny as f64) as isize).clamp(0, ny as isize - 1);
        (i as usize, j as usize)
    }

    pub fn locate(&self, mesh: &Mesh, p: Vec2) -> Option<usize> {
        if !self.bbox.contains(p) {
            return None;
        }
        let (i, j) = Self::bin_of(&self.bbox, self.nx, self.ny, p);
        self.bins[j * self.nx + i]
            .iter()
            .copied()
            .find(|&c| {
                let [a, b, c3] = mesh.cell_points(c);
                point_in_triangle(p, a, b, c3, GEOM_EPS)
            })
    }
}

/// Quadrature over a convex polygon: fan triangulation from vertex 0 with
/// a mapped positive-weight triangle rule of the requested degree.
/// Degenerate polygons yield an empty rule.
pub fn polygon_quadrature(poly: &ConvexPolygon, degree: usize) -> Vec<(Vec2, f64)> {
    assert!((1..=6).contains(&degree), "degree must be in 1..=6");
    if poly.area() < AREA_EPS {
        return Vec::new();
    }
    let v = poly.vertices();
    let mut out = Vec::new();
    for k in 1..v.len() - 1 {
        out.extend(mapped_triangle_rule(v[0], v[k], v[k + 1], degree));
    }
    out
}

/// Visible/hidden/covered area split of a classified background mesh.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartitionReport {
    pub visible: f64,
    pub hidden: f64,
    pub covered: f64,
}

impl PartitionReport {
    pub fn total(&self) -> f64 {
        self.visible + self.hidden + self.covered
    }
}

pub fn partition_report(background: &Mesh, cls: &Classification) -> PartitionReport {
    let mut report = PartitionReport {
        visible: 0.0,
        hidden: 0.0,
        covered: 0.0,
    };
    for cell in 0..background.n_cells() {
        let area = background.cell_area(cell);
        match cls.status[cell] {
            CellStatus::Uncut => report.visible += area,
            CellStatus::Covered { .. } => report.covered += area,
            CellStatus::Cut { .. } => {
                let h = cls.hidden_area(cell);
                report.hidden += h;
                report.visible += area - h;
            }
        }
    }
    report
}
