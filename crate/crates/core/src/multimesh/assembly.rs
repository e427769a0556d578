//! Assembly of the coupled weak form
//!
//! ```text
//!   a(T,v) + a_IP(T,v) + a_O(T,v) = l(v)
//! ```
//!
//! with visible-volume integrals via the subtraction rule on cut cells,
//! two-point Gauss interface terms, piecewise-constant gradient jumps on
//! the overlap, and conductivity-weighted fluxes (the constant-coefficient
//! case reduces to the unweighted form).

use super::{
    BoundaryCondition, MultiMeshError, MultiMeshStack, NitscheParams, ProblemSpec,
};
use crate::fem::{
    self, p1_gradients, Field, SparseSystem,
};
use crate::geom::{barycentric, Vec2};
use crate::quadrature::{mapped_triangle_rule, segment_gauss2};

/// Visits every visible-volume quadrature point as
/// `(mesh_index, cell, point, weight)`; hidden parts of cut cells appear
/// with negated weights (subtraction rule).
pub(crate) fn for_visible_quadrature(
    stack: &MultiMeshStack,
    mut f: impl FnMut(usize, usize, Vec2, f64),
) {
    let degree = stack.quad_degree;
    for cell in 0..stack.background.n_cells() {
        match stack.classification.status[cell] {
            crate::cutgeom::CellStatus::Covered { .. } => {}
            crate::cutgeom::CellStatus::Uncut => {
                let p = stack.background.cell_points(cell);
                for (x, w) in mapped_triangle_rule(p[0], p[1], p[2], degree) {
                    f(0, cell, x, w);
                }
            }
            crate::cutgeom::CellStatus::Cut { .. } => {
                let rule = stack
                    .cut_quadrature
                    .rule_for(cell)
                    .expect("cut cell has a quadrature rule");
                for &(x, w) in &rule.full {
                    f(0, cell, x, w);
                }
                for &(x, w) in &rule.hidden {
                    f(0, cell, x, -w);
                }
            }
        }
    }
    for (s, entry) in stack.submeshes.iter().enumerate() {
        for cell in 0..entry.mesh.n_cells() {
            let p = entry.mesh.cell_points(cell);
            for (x, w) in mapped_triangle_rule(p[0], p[1], p[2], degree) {
                f(s + 1, cell, x, w);
            }
        }
    }
}

/// Matrix half of the visible-volume terms: stiffness and reaction on
/// uncut cells and submesh cells in full, on cut cells through
/// full-minus-hidden.
fn assemble_volume_matrix(
    sys: &mut SparseSystem,
    stack: &MultiMeshStack,
    spec: &ProblemSpec,
) -> Result<(), MultiMeshError> {
    let c = spec.reaction;
    let bg = &stack.background;
    for cell in 0..bg.n_cells() {
        if stack.classification.is_covered(cell) {
            continue;
        }
        let lambda = spec.conductivity.get(bg.cell_region[cell]);
        if !(lambda > 0.0) {
            return Err(MultiMeshError::Config(format!(
                "conductivity {lambda} in region {} is not positive",
                bg.cell_region[cell]
            )));
        }
        let pts = bg.cell_points(cell);
        let verts = bg.cells[cell];
        let (grads, area) = p1_gradients(pts);
        let hidden_area = stack.classification.hidden_area(cell);
        let visible_area = area - hidden_area;
        for a in 0..3 {
            for b in 0..3 {
                sys.add(verts[a], verts[b], lambda * visible_area * grads[a].dot(grads[b]));
            }
        }
        if c != 0.0 {
            // full-cell closed form minus the hidden part by quadrature
            for a in 0..3 {
                for b in 0..3 {
                    let m = if a == b { area / 6.0 } else { area / 12.0 };
                    sys.add(verts[a], verts[b], -c * m);
                }
            }
            if let Some(rule) = stack.cut_quadrature.rule_for(cell) {
                for &(x, w) in &rule.hidden {
                    let lam = barycentric(x, pts[0], pts[1], pts[2]);
                    for a in 0..3 {
                        for b in 0..3 {
                            sys.add(verts[a], verts[b], c * w * lam[a] * lam[b]);
                        }
                    }
                }
            }
        }
    }
    for (s, entry) in stack.submeshes.iter().enumerate() {
        let offset = stack.dofmap.offset(s + 1);
        let lambda_of = |region: i32| spec.conductivity.get(region);
        fem::assemble_laplace(sys, &entry.mesh, offset, &lambda_of)?;
        fem::assemble_mass(sys, &entry.mesh, offset, c);
    }
    Ok(())
}

/// Load half of the visible-volume terms: the source integrated against
/// every test function over the visible parts.
fn assemble_volume_source(sys: &mut SparseSystem, stack: &MultiMeshStack, spec: &ProblemSpec) {
    for_visible_quadrature(stack, |mesh_idx, cell, x, w| {
        let mesh = stack.mesh(mesh_idx);
        let offset = stack.dofmap.offset(mesh_idx);
        let pts = mesh.cell_points(cell);
        let lam = barycentric(x, pts[0], pts[1], pts[2]);
        let fx = spec.source.eval(x, mesh.cell_region[cell]);
        let verts = mesh.cells[cell];
        for a in 0..3 {
            sys.add_rhs(offset + verts[a], w * fx * lam[a]);
        }
    });
}

/// Visible-volume terms of the state problem: stiffness, reaction and
/// source, with the subtraction rule on cut background cells.
pub fn assemble_visible_volume(
    sys: &mut SparseSystem,
    stack: &MultiMeshStack,
    spec: &ProblemSpec,
) -> Result<(), MultiMeshError> {
    assemble_volume_matrix(sys, stack, spec)?;
    assemble_volume_source(sys, stack, spec);
    Ok(())
}

/// Symmetric interior-penalty coupling over every interface segment:
///
/// ```text
///   -<n·lambda grad T>[v] - [T]<n·lambda grad v> + (beta0 lambda / h)[T][v]
/// ```
///
/// with the jump `[psi] = psi_sub - psi_bg` and `n` pointing out of the
/// submesh.
pub fn assemble_interface_penalty(
    sys: &mut SparseSystem,
    stack: &MultiMeshStack,
    spec: &ProblemSpec,
    params: &NitscheParams,
) {
    for (s, segs) in stack.segments.iter().enumerate() {
        let sub = &stack.submeshes[s].mesh;
        let sub_off = stack.dofmap.offset(s + 1);
        for seg in segs {
            let sub_pts = sub.cell_points(seg.submesh_cell);
            let sub_verts = sub.cells[seg.submesh_cell];
            let bg_pts = stack.background.cell_points(seg.background_cell);
            let bg_verts = stack.background.cells[seg.background_cell];
            let lam_sub = spec.conductivity.get(sub.cell_region[seg.submesh_cell]);
            let lam_bg = spec
                .conductivity
                .get(stack.background.cell_region[seg.background_cell]);
            let lam_mean = 0.5 * (lam_sub + lam_bg);
            let (g_sub, _) = p1_gradients(sub_pts);
            let (g_bg, _) = p1_gradients(bg_pts);
            let n = seg.normal;
            let penalty = params.beta0 * lam_mean / seg.h;
            // 6 coupled dofs: submesh cell then background cell
            let mut dof = [0usize; 6];
            let mut sign = [0.0f64; 6];
            let mut flux = [0.0f64; 6];
            for a in 0..3 {
                dof[a] = sub_off + sub_verts[a];
                sign[a] = 1.0;
                flux[a] = 0.5 * lam_sub * n.dot(g_sub[a]);
                dof[3 + a] = bg_verts[a];
                sign[3 + a] = -1.0;
                flux[3 + a] = 0.5 * lam_bg * n.dot(g_bg[a]);
            }
            for (x, w) in segment_gauss2(seg.p0, seg.p1) {
                let lam_s = barycentric(x, sub_pts[0], sub_pts[1], sub_pts[2]);
                let lam_b = barycentric(x, bg_pts[0], bg_pts[1], bg_pts[2]);
                let mut value = [0.0f64; 6];
                value[..3].copy_from_slice(&lam_s);
                value[3..].copy_from_slice(&lam_b);
                for a in 0..6 {
                    let jump_a = sign[a] * value[a];
                    for b in 0..6 {
                        let jump_b = sign[b] * value[b];
                        sys.add(
                            dof[a],
                            dof[b],
                            w * (-flux[b] * jump_a - jump_b * flux[a]
                                + penalty * jump_a * jump_b),
                        );
                    }
                }
            }
        }
    }
}

/// Overlap stabilization `beta1 lambda [grad T]·[grad v]` over every
/// overlap piece, with piecewise-constant gradients from the paired cells.
pub fn assemble_overlap_stab(
    sys: &mut SparseSystem,
    stack: &MultiMeshStack,
    spec: &ProblemSpec,
    params: &NitscheParams,
) {
    if params.beta1 == 0.0 {
        return;
    }
    for (s, pieces) in stack.overlaps.iter().enumerate() {
        let sub = &stack.submeshes[s].mesh;
        let sub_off = stack.dofmap.offset(s + 1);
        for piece in pieces {
            let area = piece.polygon.area();
            let sub_pts = sub.cell_points(piece.submesh_cell);
            let sub_verts = sub.cells[piece.submesh_cell];
            let bg_pts = stack.background.cell_points(piece.background_cell);
            let bg_verts = stack.background.cells[piece.background_cell];
            let lam_sub = spec.conductivity.get(sub.cell_region[piece.submesh_cell]);
            let lam_bg = spec
                .conductivity
                .get(stack.background.cell_region[piece.background_cell]);
            let factor = params.beta1 * 0.5 * (lam_sub + lam_bg) * area;
            let (g_sub, _) = p1_gradients(sub_pts);
            let (g_bg, _) = p1_gradients(bg_pts);
            let mut dof = [0usize; 6];
            let mut jump_grad = [Vec2::ZERO; 6];
            for a in 0..3 {
                dof[a] = sub_off + sub_verts[a];
                jump_grad[a] = g_sub[a];
                dof[3 + a] = bg_verts[a];
                jump_grad[3 + a] = -g_bg[a];
            }
            for a in 0..6 {
                for b in 0..6 {
                    sys.add(dof[a], dof[b], factor * jump_grad[a].dot(jump_grad[b]));
                }
            }
        }
    }
}

/// Matrix-side of the full operator: visible volume, interface coupling,
/// overlap stabilization and Robin edge mass. No loads or constraints.
fn assemble_operator(
    stack: &MultiMeshStack,
    spec: &ProblemSpec,
    params: &NitscheParams,
) -> Result<SparseSystem, MultiMeshError> {
    params.validate()?;
    spec.validate(stack)?;
    let mut sys = SparseSystem::new(stack.dofmap.n_dofs());
    assemble_volume_matrix(&mut sys, stack, spec)?;
    assemble_interface_penalty(&mut sys, stack, spec, params);
    assemble_overlap_stab(&mut sys, stack, spec, params);
    for (m, bc) in &spec.bcs {
        if let BoundaryCondition::Robin { .. } = bc {
            for k in 0..stack.n_meshes() {
                fem::assemble_robin(&mut sys, stack.mesh(k), stack.dofmap.offset(k), *m, 0.0);
            }
        }
    }
    Ok(sys)
}

fn apply_constraints(
    sys: &mut SparseSystem,
    stack: &MultiMeshStack,
    spec: &ProblemSpec,
    homogeneous: bool,
) {
    for (m, bc) in &spec.bcs {
        if let BoundaryCondition::Dirichlet(value) = bc {
            for k in 0..stack.n_meshes() {
                let mesh = stack.mesh(k);
                let offset = stack.dofmap.offset(k);
                for facet in mesh.facets_with_marker(*m) {
                    for &v in &mesh.facets[facet] {
                        let g = if homogeneous {
                            0.0
                        } else {
                            value.eval(mesh.vertices[v])
                        };
                        sys.set_dirichlet(offset + v, g);
                    }
                }
            }
        }
    }
    for dof in stack.dofmap.inactive_dofs() {
        sys.set_dirichlet(dof, 0.0);
    }
}

/// The state system: operator, source and Robin loads, Dirichlet data.
pub fn assemble_state(
    stack: &MultiMeshStack,
    spec: &ProblemSpec,
    params: &NitscheParams,
) -> Result<SparseSystem, MultiMeshError> {
    let mut sys = assemble_operator(stack, spec, params)?;
    assemble_volume_source(&mut sys, stack, spec);
    for (m, bc) in &spec.bcs {
        if let BoundaryCondition::Robin { t_ex } = bc {
            if *t_ex != 0.0 {
                for k in 0..stack.n_meshes() {
                    let mesh = stack.mesh(k);
                    let offset = stack.dofmap.offset(k);
                    for facet in mesh.facets_with_marker(*m) {
                        let [v0, v1] = mesh.facets[facet];
                        let half = t_ex * mesh.facet_length(facet) / 2.0;
                        sys.add_rhs(offset + v0, half);
                        sys.add_rhs(offset + v1, half);
                    }
                }
            }
        }
    }
    apply_constraints(&mut sys, stack, spec, false);
    Ok(sys)
}

pub fn solve_state(
    stack: &MultiMeshStack,
    spec: &ProblemSpec,
    params: &NitscheParams,
    rel_tol: Option<f64>,
) -> Result<Field, MultiMeshError> {
    Ok(assemble_state(stack, spec, params)?.solve_spd(rel_tol)?)
}

/// Objective value: quadrature of the functional integrand over all
/// visible parts, summed across meshes.
pub fn eval_functional(stack: &MultiMeshStack, spec: &ProblemSpec, state: &Field) -> f64 {
    let mut j = 0.0;
    for_visible_quadrature(stack, |mesh_idx, cell, x, w| {
        let t = fem::eval_in_cell(
            stack.mesh(mesh_idx),
            stack.dofmap.offset(mesh_idx),
            state,
            cell,
            x,
        );
        j += w * spec.functional.value(t);
    });
    j
}

/// The adjoint system: the same symmetric operator, right-hand side
/// `-(j'(T), v)`, homogeneous Dirichlet and Robin data.
pub fn assemble_adjoint(
    stack: &MultiMeshStack,
    spec: &ProblemSpec,
    params: &NitscheParams,
    state: &Field,
) -> Result<SparseSystem, MultiMeshError> {
    let mut sys = assemble_operator(stack, spec, params)?;
    for_visible_quadrature(stack, |mesh_idx, cell, x, w| {
        let mesh = stack.mesh(mesh_idx);
        let offset = stack.dofmap.offset(mesh_idx);
        let t = fem::eval_in_cell(mesh, offset, state, cell, x);
        let load = spec.functional.derivative(t);
        let pts = mesh.cell_points(cell);
        let lam = barycentric(x, pts[0], pts[1], pts[2]);
        let verts = mesh.cells[cell];
        for a in 0..3 {
            sys.add_rhs(offset + verts[a], -w * load * lam[a]);
        }
    });
    apply_constraints(&mut sys, stack, spec, true);
    Ok(sys)
}

pub fn solve_adjoint(
    stack: &MultiMeshStack,
    spec: &ProblemSpec,
    params: &NitscheParams,
    state: &Field,
    rel_tol: Option<f64>,
) -> Result<Field, MultiMeshError> {
    Ok(assemble_adjoint(stack, spec, params, state)?.solve_spd(rel_tol)?)
}

/// Nodal interpolation of a function on every mesh block of the stack.
pub fn interpolate_on_stack(stack: &MultiMeshStack, f: &impl Fn(Vec2) -> f64) -> Field {
    let mut field = Field::zeros(stack.dofmap.n_dofs());
    for k in 0..stack.n_meshes() {
        let mesh = stack.mesh(k);
        let offset = stack.dofmap.offset(k);
        for (v, p) in mesh.vertices.iter().enumerate() {
            field.0[offset + v] = f(*p);
        }
    }
    field
}

/// L2 error against an exact solution over the visible domain.
pub fn stack_l2_error(stack: &MultiMeshStack, field: &Field, exact: &impl Fn(Vec2) -> f64) -> f64 {
    let mut acc = 0.0;
    for_visible_quadrature(stack, |mesh_idx, cell, x, w| {
        let u = fem::eval_in_cell(
            stack.mesh(mesh_idx),
            stack.dofmap.offset(mesh_idx),
            field,
            cell,
            x,
        );
        let d = u - exact(x);
        acc += w * d * d;
    });
    acc.max(0.0).sqrt()
}
