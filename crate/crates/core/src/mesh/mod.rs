//! Triangle mesh representation, rigid transforms, quality metrics and
//! boundary topology.
//!
//! A [`Mesh`] is an immutable value after construction: vertices, CCW
//! cells with integer region tags, and marked facets. All operations are
//! pure functions returning new meshes.

mod gen;
mod io;

pub use gen::{
    gen_annulus, gen_cable_submesh, gen_disk, gen_ellipse_annulus, gen_rect_grid,
};
pub use io::{read_mesh, write_mesh};

use crate::geom::{polygon_signed_area, triangle_area, Vec2};
use thiserror::Error;

/// Facet-marker vocabulary, fixed globally. Problems refer to markers,
/// not geometry.
pub mod marker {
    /// Physical hole boundary Γ (Dirichlet data, shape gradient).
    pub const GAMMA: i32 = 1;
    /// Submesh outer boundary Λ (Nitsche coupling).
    pub const LAMBDA: i32 = 2;
    /// Metal/insulation material interface Γ_i.
    pub const GAMMA_I: i32 = 3;
    /// Insulation/fill material interface Γ_e.
    pub const GAMMA_E: i32 = 4;
    /// Exterior domain boundary.
    pub const EXTERIOR: i32 = 10;
}

/// Region tags used by the built-in generators.
pub mod region {
    pub const FILL: i32 = 0;
    pub const INSULATION: i32 = 1;
    pub const METAL: i32 = 2;
}

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("cell {0} has non-positive area")]
    NonPositiveCell(usize),
    #[error("non-manifold boundary edge ({0}, {1})")]
    NonManifold(usize, usize),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("unsupported mesh format version: {0}")]
    UnsupportedVersion(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Rigid motion v -> R(angle)(v - center) + center + translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidPose {
    pub angle: f64,
    pub center: Vec2,
    pub translation: Vec2,
}

impl RigidPose {
    pub fn identity(center: Vec2) -> Self {
        RigidPose {
            angle: 0.0,
            center,
            translation: Vec2::ZERO,
        }
    }

    pub fn apply(&self, v: Vec2) -> Vec2 {
        (v - self.center).rotated(self.angle) + self.center + self.translation
    }

    pub fn inverse(&self) -> RigidPose {
        RigidPose {
            angle: -self.angle,
            center: self.center + self.translation,
            translation: -self.translation,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.angle == 0.0 && self.translation == Vec2::ZERO
    }

    pub fn is_finite(&self) -> bool {
        self.angle.is_finite() && self.center.is_finite() && self.translation.is_finite()
    }
}

/// One closed boundary loop in traversal order (interior on the left), so
/// outer loops come out CCW and holes CW.
#[derive(Debug, Clone)]
pub struct BoundaryLoop {
    /// Vertex indices; edge k runs from vertices[k] to vertices[(k+1)%n].
    pub vertices: Vec<usize>,
    /// Facet marker per edge (0 when the edge carries no facet entry).
    pub edge_markers: Vec<i32>,
    pub signed_area: f64,
}

impl BoundaryLoop {
    pub fn points(&self, mesh: &Mesh) -> Vec<Vec2> {
        self.vertices.iter().map(|&v| mesh.vertices[v]).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vec2>,
    /// Vertex-index triples, counter-clockwise.
    pub cells: Vec<[usize; 3]>,
    pub cell_region: Vec<i32>,
    /// Marked edges (boundary or material interfaces).
    pub facets: Vec<[usize; 2]>,
    pub facet_marker: Vec<i32>,
    /// Maximum cell diameter.
    pub h_max: f64,
}

impl Mesh {
    /// Assembles a mesh from parts, repairing cell orientation to CCW and
    /// computing `h_max`. Degenerate cells are rejected.
    pub fn new(
        vertices: Vec<Vec2>,
        mut cells: Vec<[usize; 3]>,
        cell_region: Vec<i32>,
        facets: Vec<[usize; 2]>,
        facet_marker: Vec<i32>,
    ) -> Result<Self, MeshError> {
        assert_eq!(cells.len(), cell_region.len());
        assert_eq!(facets.len(), facet_marker.len());
        for (i, cell) in cells.iter_mut().enumerate() {
            let area = triangle_area(
                vertices[cell[0]],
                vertices[cell[1]],
                vertices[cell[2]],
            );
            if area < 0.0 {
                cell.swap(1, 2);
            } else if area == 0.0 {
                return Err(MeshError::NonPositiveCell(i));
            }
        }
        let mut mesh = Mesh {
            vertices,
            cells,
            cell_region,
            facets,
            facet_marker,
            h_max: 0.0,
        };
        mesh.h_max = mesh.compute_h_max();
        Ok(mesh)
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn cell_points(&self, cell: usize) -> [Vec2; 3] {
        let [a, b, c] = self.cells[cell];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn cell_area(&self, cell: usize) -> f64 {
        let [a, b, c] = self.cell_points(cell);
        triangle_area(a, b, c)
    }

    /// Longest edge of the cell.
    pub fn cell_diameter(&self, cell: usize) -> f64 {
        let [a, b, c] = self.cell_points(cell);
        (a - b).norm().max((b - c).norm()).max((c - a).norm())
    }

    fn compute_h_max(&self) -> f64 {
        (0..self.n_cells())
            .map(|c| self.cell_diameter(c))
            .fold(0.0, f64::max)
    }

    pub fn total_area(&self) -> f64 {
        (0..self.n_cells()).map(|c| self.cell_area(c)).sum()
    }

    pub fn facet_points(&self, facet: usize) -> [Vec2; 2] {
        let [a, b] = self.facets[facet];
        [self.vertices[a], self.vertices[b]]
    }

    pub fn facet_length(&self, facet: usize) -> f64 {
        let [a, b] = self.facet_points(facet);
        (b - a).norm()
    }

    pub fn facet_midpoint(&self, facet: usize) -> Vec2 {
        let [a, b] = self.facet_points(facet);
        (a + b) * 0.5
    }

    pub fn facets_with_marker(&self, m: i32) -> impl Iterator<Item = usize> + '_ {
        (0..self.facets.len()).filter(move |&f| self.facet_marker[f] == m)
    }

    pub fn has_marker(&self, m: i32) -> bool {
        self.facet_marker.iter().any(|&fm| fm == m)
    }

    /// Cells adjacent to each facet, in facet order. Boundary facets get
    /// one entry, interior facets two (sorted by cell index).
    pub fn facet_cells(&self) -> Vec<Vec<usize>> {
        let mut edge_map = std::collections::HashMap::new();
        for (f, &[a, b]) in self.facets.iter().enumerate() {
            edge_map.insert(undirected(a, b), f);
        }
        let mut out = vec![Vec::new(); self.facets.len()];
        for (c, cell) in self.cells.iter().enumerate() {
            for k in 0..3 {
                let key = undirected(cell[k], cell[(k + 1) % 3]);
                if let Some(&f) = edge_map.get(&key) {
                    out[f].push(c);
                }
            }
        }
        out
    }

    /// Unit normal of a facet pointing away from the given adjacent cell.
    pub fn facet_normal_from_cell(&self, facet: usize, cell: usize) -> Vec2 {
        let [a, b] = self.facets[facet];
        let pa = self.vertices[a];
        let pb = self.vertices[b];
        let t = (pb - pa).normalized();
        let n = Vec2::new(t.y, -t.x);
        // orient away from the cell interior
        let third = self.cells[cell]
            .iter()
            .copied()
            .find(|v| *v != a && *v != b)
            .expect("facet must be an edge of the cell");
        let inward = self.vertices[third] - (pa + pb) * 0.5;
        if n.dot(inward) > 0.0 {
            -n
        } else {
            n
        }
    }

    /// Applies a rigid motion to every vertex; connectivity, regions and
    /// markers are unchanged.
    pub fn apply_rigid(&self, pose: &RigidPose) -> Mesh {
        assert!(pose.is_finite(), "rigid pose must be finite");
        let mut out = self.clone();
        for v in &mut out.vertices {
            *v = pose.apply(*v);
        }
        out
    }

    /// Triangle quality 2 r_in / r_circ; 1 for equilateral, 0 for
    /// degenerate (collinear) cells.
    pub fn radius_ratio(&self, cell: usize) -> f64 {
        let [pa, pb, pc] = self.cell_points(cell);
        let a = (pb - pc).norm();
        let b = (pc - pa).norm();
        let c = (pa - pb).norm();
        let area = triangle_area(pa, pb, pc).abs();
        let s = 0.5 * (a + b + c);
        if area <= 0.0 || s == 0.0 {
            return 0.0;
        }
        // 2 * (area/s) / (abc / (4 area)) = 8 area^2 / (s a b c)
        8.0 * area * area / (s * a * b * c)
    }

    /// Rewrites facet markers from midpoint/marker; used to tag generator
    /// output for specific problems.
    pub fn map_facet_markers(&self, f: impl Fn(Vec2, i32) -> i32) -> Mesh {
        let mut out = self.clone();
        for i in 0..out.facets.len() {
            out.facet_marker[i] = f(self.facet_midpoint(i), self.facet_marker[i]);
        }
        out
    }

    /// Closed boundary loops traversed with the interior on the left.
    /// Errors on non-manifold boundary topology.
    pub fn boundary_loops(&self) -> Result<Vec<BoundaryLoop>, MeshError> {
        use std::collections::HashMap;
        let mut counts: HashMap<(usize, usize), u32> = HashMap::new();
        for cell in &self.cells {
            for k in 0..3 {
                let key = undirected(cell[k], cell[(k + 1) % 3]);
                *counts.entry(key).or_insert(0) += 1;
            }
        }
        if let Some((&(a, b), _)) = counts.iter().find(|(_, &c)| c > 2) {
            return Err(MeshError::NonManifold(a, b));
        }
        // Directed boundary edges in cell traversal order (interior left).
        let mut next: HashMap<usize, usize> = HashMap::new();
        for cell in &self.cells {
            for k in 0..3 {
                let (a, b) = (cell[k], cell[(k + 1) % 3]);
                if counts[&undirected(a, b)] == 1 {
                    if next.insert(a, b).is_some() {
                        return Err(MeshError::NonManifold(a, b));
                    }
                }
            }
        }
        let mut facet_of_edge: HashMap<(usize, usize), i32> = HashMap::new();
        for (f, &[a, b]) in self.facets.iter().enumerate() {
            facet_of_edge.insert(undirected(a, b), self.facet_marker[f]);
        }
        let mut loops = Vec::new();
        let mut visited: std::collections::HashSet<usize> = std::collections::HashSet::new();
        let mut starts: Vec<usize> = next.keys().copied().collect();
        starts.sort_unstable();
        for start in starts {
            if visited.contains(&start) {
                continue;
            }
            let mut vertices = Vec::new();
            let mut edge_markers = Vec::new();
            let mut v = start;
            loop {
                vertices.push(v);
                visited.insert(v);
                let w = next[&v];
                edge_markers.push(*facet_of_edge.get(&undirected(v, w)).unwrap_or(&0));
                v = w;
                if v == start {
                    break;
                }
            }
            let pts: Vec<Vec2> = vertices.iter().map(|&i| self.vertices[i]).collect();
            let signed_area = polygon_signed_area(&pts);
            loops.push(BoundaryLoop {
                vertices,
                edge_markers,
                signed_area,
            });
        }
        // Outer loop first for convenience.
        loops.sort_by(|a, b| b.signed_area.partial_cmp(&a.signed_area).unwrap());
        Ok(loops)
    }

    /// Checks the construction invariants: positive cells, facets lying on
    /// cell edges, boundary/interior marker placement.
    pub fn validate(&self) -> Result<(), MeshError> {
        for c in 0..self.n_cells() {
            if self.cell_area(c) <= 0.0 {
                return Err(MeshError::NonPositiveCell(c));
            }
        }
        let adjacency = self.facet_cells();
        for (f, cells) in adjacency.iter().enumerate() {
            let m = self.facet_marker[f];
            match (m, cells.len()) {
                (_, 0) => {
                    return Err(MeshError::InvalidArgument(format!(
                        "facet {f} is not an edge of any cell"
                    )))
                }
                (marker::GAMMA_I | marker::GAMMA_E, 2) => {
                    let [c0, c1] = [cells[0], cells[1]];
                    if self.cell_region[c0] == self.cell_region[c1] {
                        return Err(MeshError::InvalidArgument(format!(
                            "interface facet {f} does not separate regions"
                        )));
                    }
                }
                (marker::GAMMA_I | marker::GAMMA_E, _) => {
                    return Err(MeshError::InvalidArgument(format!(
                        "interface facet {f} must be shared by two cells"
                    )))
                }
                (_, 1) => {}
                (_, n) => {
                    return Err(MeshError::InvalidArgument(format!(
                        "boundary facet {f} shared by {n} cells"
                    )))
                }
            }
        }
        Ok(())
    }
}

fn undirected(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}
