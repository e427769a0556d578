//! The built stack: posed submeshes over one background mesh, with the
//! classification, cut quadratures, interface segments and overlap pieces
//! recomputed atomically after any pose change.

use super::MultiMeshError;
use crate::cutgeom::{
    classify_cells, footprint_of_submesh, interface_segments, overlap_pieces, partition_report,
    polygon_quadrature, Classification, CutError, Footprint, InterfaceSegment, OverlapPiece,
    PartitionReport,
};
use crate::fem::DofMap;
use crate::geom::Vec2;
use crate::mesh::{marker, Mesh, RigidPose};
use crate::quadrature::mapped_triangle_rule;

/// Cut-cell rules: hidden-part and full-cell points and weights per cut
/// background cell, for the subtraction rule on visible integrals.
#[derive(Debug, Clone)]
pub struct CutCellRule {
    pub cell: usize,
    pub hidden: Vec<(Vec2, f64)>,
    pub full: Vec<(Vec2, f64)>,
}

#[derive(Debug, Clone)]
pub struct CutQuadrature {
    pub degree: usize,
    pub rules: Vec<CutCellRule>,
}

impl CutQuadrature {
    pub fn rule_for(&self, cell: usize) -> Option<&CutCellRule> {
        self.rules
            .binary_search_by_key(&cell, |r| r.cell)
            .ok()
            .map(|k| &self.rules[k])
    }
}

pub fn build_cut_quadrature(
    background: &Mesh,
    cls: &Classification,
    degree: usize,
) -> Result<CutQuadrature, CutError> {
    let mut rules = Vec::new();
    for cell in 0..background.n_cells() {
        let Some(hidden_poly) = &cls.hidden[cell] else {
            continue;
        };
        let hidden = polygon_quadrature(hidden_poly, degree);
        let total: f64 = hidden.iter().map(|(_, w)| w).sum();
        if (total - hidden_poly.area()).abs() > 1e-12 * hidden_poly.area().max(1.0) {
            return Err(CutError::Inconsistent(format!(
                "hidden quadrature weights of cell {cell} sum to {total:.3e} instead of {:.3e}",
                hidden_poly.area()
            )));
        }
        let pts = background.cell_points(cell);
        rules.push(CutCellRule {
            cell,
            hidden,
            full: mapped_triangle_rule(pts[0], pts[1], pts[2], degree),
        });
    }
    Ok(CutQuadrature { degree, rules })
}

/// One submesh layer: the untransformed base mesh, its current rigid pose,
/// and the posed mesh actually used for assembly.
#[derive(Debug, Clone)]
pub struct SubmeshEntry {
    pub base: Mesh,
    pub pose: RigidPose,
    pub mesh: Mesh,
}

/// Background mesh plus submesh layers with all derived cut geometry.
#[derive(Debug, Clone)]
pub struct MultiMeshStack {
    pub background: Mesh,
    pub submeshes: Vec<SubmeshEntry>,
    pub footprints: Vec<Footprint>,
    pub classification: Classification,
    pub cut_quadrature: CutQuadrature,
    /// Interface segments per submesh.
    pub segments: Vec<Vec<InterfaceSegment>>,
    /// Overlap pieces per submesh.
    pub overlaps: Vec<Vec<OverlapPiece>>,
    pub dofmap: DofMap,
    pub quad_degree: usize,
}

impl MultiMeshStack {
    /// Builds the stack with the default volume quadrature degree 4.
    pub fn build(
        background: Mesh,
        submeshes: Vec<(Mesh, RigidPose)>,
    ) -> Result<Self, MultiMeshError> {
        Self::build_with_degree(background, submeshes, 4)
    }

    pub fn build_with_degree(
        background: Mesh,
        submeshes: Vec<(Mesh, RigidPose)>,
        quad_degree: usize,
    ) -> Result<Self, MultiMeshError> {
        let entries: Vec<SubmeshEntry> = submeshes
            .into_iter()
            .map(|(base, pose)| {
                let mesh = if pose.is_identity() {
                    base.clone()
                } else {
                    base.apply_rigid(&pose)
                };
                SubmeshEntry { base, pose, mesh }
            })
            .collect();
        let footprints: Vec<Footprint> = entries
            .iter()
            .map(|e| footprint_of_submesh(&e.mesh))
            .collect::<Result<_, _>>()?;
        let classification = classify_cells(&background, &footprints)?;
        let mut segments = Vec::with_capacity(entries.len());
        let mut overlaps = Vec::with_capacity(entries.len());
        for (i, entry) in entries.iter().enumerate() {
            segments.push(interface_segments(&entry.mesh, &background, &classification)?);
            overlaps.push(overlap_pieces(&entry.mesh, &background, &classification, i)?);
        }
        let cut_quadrature = build_cut_quadrature(&background, &classification, quad_degree)?;
        let sub_refs: Vec<&Mesh> = entries.iter().map(|e| &e.mesh).collect();
        let dofmap = DofMap::for_stack(&background, &sub_refs, &classification);
        let stack = MultiMeshStack {
            background,
            submeshes: entries,
            footprints,
            classification,
            cut_quadrature,
            segments,
            overlaps,
            dofmap,
            quad_degree,
        };
        let report = stack.partition();
        let total = stack.background.total_area();
        if (report.total() - total).abs() > 1e-10 * total {
            return Err(MultiMeshError::Cut(CutError::Inconsistent(format!(
                "partition report {:?} does not add up to the background area {total}",
                report
            ))));
        }
        Ok(stack)
    }

    /// Rebuilds with new poses/bases; the background mesh is reused.
    pub fn rebuilt(&self, submeshes: Vec<(Mesh, RigidPose)>) -> Result<Self, MultiMeshError> {
        Self::build_with_degree(self.background.clone(), submeshes, self.quad_degree)
    }

    pub fn n_meshes(&self) -> usize {
        1 + self.submeshes.len()
    }

    /// Mesh by block index: 0 is the background, k >= 1 is submesh k-1.
    pub fn mesh(&self, index: usize) -> &Mesh {
        if index == 0 {
            &self.background
        } else {
            &self.submeshes[index - 1].mesh
        }
    }

    pub fn partition(&self) -> PartitionReport {
        partition_report(&self.background, &self.classification)
    }

    /// Total area over which visible-volume integrals run.
    pub fn visible_area(&self) -> f64 {
        self.partition().visible
            + self
                .submeshes
                .iter()
                .map(|e| e.mesh.total_area())
                .sum::<f64>()
    }

    /// Distinct facet markers that require a boundary condition: every
    /// marker present on some mesh except the coupled outer boundary (2)
    /// and the material interfaces (3, 4).
    pub fn exterior_markers(&self) -> Vec<i32> {
        let mut markers = Vec::new();
        for k in 0..self.n_meshes() {
            for &m in &self.mesh(k).facet_marker {
                if m != marker::LAMBDA
                    && m != marker::GAMMA_I
                    && m != marker::GAMMA_E
                    && !markers.contains(&m)
                {
                    markers.push(m);
                }
            }
        }
        markers.sort_unstable();
        markers
    }

    /// Minimum radius ratio over all meshes of the stack.
    pub fn min_quality(&self) -> f64 {
        let mut q = f64::INFINITY;
        for k in 0..self.n_meshes() {
            let mesh = self.mesh(k);
            for cell in 0..mesh.n_cells() {
                q = q.min(mesh.radius_ratio(cell));
            }
        }
        q
    }
}
