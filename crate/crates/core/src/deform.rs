//! Turning a boundary gradient density into a design update: rigid
//! translation/rotation Riesz representers, H1-smoothed boundary
//! representers, the Eikonal-advection deformation scheme, and the atomic
//! stack update that rebuilds all cut geometry.
//!
//! Sign convention: densities store the raw gradient integrand g; every
//! representer returns a descent direction (the negation happens here).

use crate::fem::{
    self, cell_gradient, p1_gradients, solve_nonsymmetric, Field, SolveError, SparseSystem,
};
use crate::geom::Vec2;
use crate::mesh::{Mesh, RigidPose};
use crate::multimesh::{MultiMeshError, MultiMeshStack};
use crate::quadrature::mapped_triangle_rule;
use crate::shape::GradientDensity;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DeformError {
    #[error("invalid step: {0}")]
    InvalidStep(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("eikonal iteration did not converge (last residual {0:.3e})")]
    EikonalNonConvergence(f64),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Rebuild(#[from] MultiMeshError),
}

/// Boundary-node deformation scheme.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DeformScheme {
    /// Riesz representer in the scaled H1 inner product with smoothing
    /// parameter alpha.
    H1 { alpha: f64 },
    /// Advect the boundary gradient into the submesh along the smoothed
    /// distance field.
    EikonalAdvect { alpha0: f64, alpha1: f64 },
}

/// Radial constraint on a translated submesh center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadialBound {
    pub origin: Vec2,
    pub r_max: f64,
}

/// The space of allowed shape deformations for one submesh.
#[derive(Debug, Clone, PartialEq)]
pub enum DesignSpace {
    Rotation {
        submesh: usize,
        center: Vec2,
    },
    Translation {
        submesh: usize,
        /// Nominal center of the submesh before any translation.
        base_center: Vec2,
        bound: Option<RadialBound>,
    },
    BoundaryNodes {
        submesh: usize,
        scheme: DeformScheme,
    },
}

impl DesignSpace {
    pub fn submesh(&self) -> usize {
        match self {
            DesignSpace::Rotation { submesh, .. }
            | DesignSpace::Translation { submesh, .. }
            | DesignSpace::BoundaryNodes { submesh, .. } => *submesh,
        }
    }
}

/// A descent direction in the matching design space.
#[derive(Debug, Clone)]
pub enum UpdateDirection {
    /// Angular rate (radians per unit step).
    Angular(f64),
    /// Translation rate.
    Shift(Vec2),
    /// Per-vertex displacement rate on the submesh.
    Boundary(DeformField),
}

/// Displacement per submesh vertex.
#[derive(Debug, Clone)]
pub struct DeformField {
    pub displacements: Vec<Vec2>,
}

impl DeformField {
    pub fn zeros(n: usize) -> Self {
        DeformField {
            displacements: vec![Vec2::ZERO; n],
        }
    }

    pub fn max_norm(&self) -> f64 {
        self.displacements.iter().fold(0.0, |m, d| m.max(d.norm()))
    }
}

/// Minimum radius ratio over the cells of a mesh.
pub fn mesh_quality(mesh: &Mesh) -> f64 {
    (0..mesh.n_cells())
        .map(|c| mesh.radius_ratio(c))
        .fold(f64::INFINITY, f64::min)
}

/// Riesz representer of -dJ in the space of constant translations of the
/// submesh: d = -(1/|submesh|) ∮ n g dS.
pub fn riesz_translation(density: &GradientDensity, submesh: &Mesh) -> Result<Vec2, DeformError> {
    let area = submesh.total_area();
    if !(area > 0.0) {
        return Err(DeformError::InvalidArgument(
            "submesh has no positive area".into(),
        ));
    }
    let mut moment = Vec2::ZERO;
    for f in &density.facets {
        moment += f.normal * (f.length * f.g);
    }
    Ok(-moment / area)
}

/// Riesz representer in the one-dimensional rotation space about `center`:
/// the normalization carries both the alpha-gradient term of the rotation
/// field (constant skew Jacobian, Frobenius norm squared 2) and its L2
/// norm (the polar second moment).
pub fn riesz_rotation(
    density: &GradientDensity,
    submesh: &Mesh,
    center: Vec2,
    alpha: f64,
) -> Result<f64, DeformError> {
    let mut numer = 0.0;
    for f in &density.facets {
        let s = Vec2::new(-(f.midpoint.y - center.y), f.midpoint.x - center.x);
        numer += f.length * s.dot(f.normal) * f.g;
    }
    let mut polar = 0.0;
    for cell in 0..submesh.n_cells() {
        let pts = submesh.cell_points(cell);
        for (x, w) in mapped_triangle_rule(pts[0], pts[1], pts[2], 2) {
            polar += w * (x - center).norm_sq();
        }
    }
    let denom = 2.0 * alpha * submesh.total_area() + polar;
    if !(denom > 0.0) {
        return Err(DeformError::InvalidArgument(
            "rotation normalization vanishes".into(),
        ));
    }
    Ok(-numer / denom)
}

fn gamma_vertices(mesh: &Mesh, m: i32) -> Vec<usize> {
    let mut verts: Vec<usize> = mesh
        .facets_with_marker(m)
        .flat_map(|f| mesh.facets[f])
        .collect();
    verts.sort_unstable();
    verts.dedup();
    verts
}

/// Smoothed Eikonal distance field from the marked boundary:
/// -alpha1 lap(eps) + |grad eps|^2 = 1, eps = 0 on the marker, natural
/// conditions elsewhere. Picard iteration with gradient lagging.
pub fn solve_eikonal(
    submesh: &Mesh,
    gamma_marker: i32,
    alpha1: f64,
) -> Result<Field, DeformError> {
    if !(alpha1 > 0.0) {
        return Err(DeformError::InvalidArgument(
            "eikonal smoothing alpha1 must be positive".into(),
        ));
    }
    let n = submesh.n_vertices();
    let fixed = gamma_vertices(submesh, gamma_marker);
    if fixed.is_empty() {
        return Err(DeformError::InvalidArgument(format!(
            "no facets with marker {gamma_marker} on the submesh"
        )));
    }
    let mut eps = Field::zeros(n);
    let mut residual = f64::INFINITY;
    for _ in 0..100 {
        let mut sys = SparseSystem::new(n);
        fem::assemble_laplace(&mut sys, submesh, 0, &|_| alpha1)
            .map_err(|e| DeformError::InvalidArgument(e.to_string()))?;
        for cell in 0..submesh.n_cells() {
            let pts = submesh.cell_points(cell);
            let verts = submesh.cells[cell];
            let (grads, area) = p1_gradients(pts);
            let grad_old = cell_gradient(submesh, 0, &eps, cell);
            // lag |grad eps|^2 as 2 grad_old · grad eps - |grad_old|^2
            for a in 0..3 {
                let load = (1.0 + grad_old.norm_sq()) * area / 3.0;
                sys.add_rhs(verts[a], load);
                for b in 0..3 {
                    sys.add(verts[a], verts[b], 2.0 * grad_old.dot(grads[b]) * area / 3.0);
                }
            }
        }
        for &v in &fixed {
            sys.set_dirichlet(v, 0.0);
        }
        let (a, b) = sys.finalize();
        let next = Field(solve_nonsymmetric(&a, &b, 1e-10)?);
        residual = eps
            .as_slice()
            .iter()
            .zip(next.as_slice())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        eps = next;
        if residual < 1e-8 {
            return Ok(eps);
        }
    }
    Err(DeformError::EikonalNonConvergence(residual))
}

/// Boundary value -g n at a Gamma vertex: the unweighted average over its
/// adjacent density facets.
fn boundary_values(
    submesh: &Mesh,
    density: &GradientDensity,
) -> std::collections::HashMap<usize, Vec2> {
    let mut acc: std::collections::HashMap<usize, (Vec2, usize)> = Default::default();
    for f in &density.facets {
        let value = -f.normal * f.g;
        for &v in &submesh.facets[f.facet] {
            let e = acc.entry(v).or_insert((Vec2::ZERO, 0));
            e.0 += value;
            e.1 += 1;
        }
    }
    acc.into_iter()
        .map(|(v, (sum, count))| (v, sum / count as f64))
        .collect()
}

/// Advects the boundary descent value -g n from Gamma into the submesh
/// along the distance field: per component,
/// ∫ alpha0 grad d · grad s + d grad(eps) · grad s dx = 0 with d = -g n on
/// Gamma and natural conditions on the other boundaries.
pub fn solve_advection_deform(
    submesh: &Mesh,
    eps: &Field,
    density: &GradientDensity,
    alpha0: f64,
) -> Result<DeformField, DeformError> {
    let n = submesh.n_vertices();
    let bvals = boundary_values(submesh, density);
    let mut components = [vec![0.0; n], vec![0.0; n]];
    for comp in 0..2 {
        let mut sys = SparseSystem::new(n);
        for cell in 0..submesh.n_cells() {
            let pts = submesh.cell_points(cell);
            let verts = submesh.cells[cell];
            let (grads, area) = p1_gradients(pts);
            let grad_eps = cell_gradient(submesh, 0, eps, cell);
            for a in 0..3 {
                for b in 0..3 {
                    let diffusion = alpha0 * grads[a].dot(grads[b]) * area;
                    let advection = grad_eps.dot(grads[a]) * area / 3.0;
                    sys.add(verts[a], verts[b], diffusion + advection);
                }
            }
        }
        for (&v, value) in &bvals {
            sys.set_dirichlet(v, if comp == 0 { value.x } else { value.y });
        }
        let (a, b) = sys.finalize();
        components[comp] = solve_nonsymmetric(&a, &b, 1e-10)?;
    }
    Ok(DeformField {
        displacements: (0..n)
            .map(|v| Vec2::new(components[0][v], components[1][v]))
            .collect(),
    })
}

/// H1 Riesz representer of -dJ over the whole submesh:
/// ∫ alpha grad d · grad s + d·s dx = -dJ[s], natural conditions
/// everywhere. The two components decouple.
pub fn h1_riesz(
    submesh: &Mesh,
    density: &GradientDensity,
    alpha: f64,
) -> Result<DeformField, DeformError> {
    if !(alpha >= 0.0) {
        return Err(DeformError::InvalidArgument(
            "smoothing alpha must be nonnegative".into(),
        ));
    }
    let n = submesh.n_vertices();
    let mut components = [vec![0.0; n], vec![0.0; n]];
    for comp in 0..2 {
        let mut sys = SparseSystem::new(n);
        for cell in 0..submesh.n_cells() {
            let pts = submesh.cell_points(cell);
            let verts = submesh.cells[cell];
            let (grads, area) = p1_gradients(pts);
            for a in 0..3 {
                for b in 0..3 {
                    let mass = if a == b { area / 6.0 } else { area / 12.0 };
                    sys.add(
                        verts[a],
                        verts[b],
                        alpha * grads[a].dot(grads[b]) * area + mass,
                    );
                }
            }
        }
        // -dJ[s]: minus the endpoint rule of g (s·n) over each facet
        for f in &density.facets {
            let load = -(f.g) * (if comp == 0 { f.normal.x } else { f.normal.y });
            for &v in &submesh.facets[f.facet] {
                sys.add_rhs(v, load * f.length / 2.0);
            }
        }
        let field = sys.solve_spd(Some(1e-10))?;
        components[comp] = field.0;
    }
    Ok(DeformField {
        displacements: (0..n)
            .map(|v| Vec2::new(components[0][v], components[1][v]))
            .collect(),
    })
}

/// New submesh (base, pose) list after stepping the designs by xi times
/// their directions; geometry is validated but nothing is rebuilt yet.
pub fn updated_submeshes(
    stack: &MultiMeshStack,
    updates: &[(&DesignSpace, &UpdateDirection)],
    xi: f64,
) -> Result<Vec<(Mesh, RigidPose)>, DeformError> {
    let mut out: Vec<(Mesh, RigidPose)> = stack
        .submeshes
        .iter()
        .map(|e| (e.base.clone(), e.pose))
        .collect();
    for (design, direction) in updates {
        let s = design.submesh();
        if s >= out.len() {
            return Err(DeformError::InvalidArgument(format!(
                "design references submesh {s} of {}",
                out.len()
            )));
        }
        match (design, direction) {
            (DesignSpace::Rotation { center, .. }, UpdateDirection::Angular(rate)) => {
                let pose = &mut out[s].1;
                if (pose.center - *center).norm() > 1e-12 {
                    return Err(DeformError::InvalidArgument(
                        "rotation design center differs from the pose center".into(),
                    ));
                }
                pose.angle += xi * rate;
            }
            (DesignSpace::Translation { .. }, UpdateDirection::Shift(d)) => {
                out[s].1.translation += *d * xi;
            }
            (DesignSpace::BoundaryNodes { .. }, UpdateDirection::Boundary(field)) => {
                let base = &mut out[s].0;
                if field.displacements.len() != base.n_vertices() {
                    return Err(DeformError::InvalidArgument(
                        "deformation field size does not match the submesh".into(),
                    ));
                }
                let mut moved = base.clone();
                for (v, d) in moved.vertices.iter_mut().zip(&field.displacements) {
                    *v += *d * xi;
                }
                for cell in 0..moved.n_cells() {
                    if moved.cell_area(cell) <= 0.0 {
                        return Err(DeformError::InvalidStep(format!(
                            "cell {cell} degenerates at step {xi:.3e}"
                        )));
                    }
                }
                moved.h_max = (0..moved.n_cells())
                    .map(|c| moved.cell_diameter(c))
                    .fold(0.0, f64::max);
                *base = moved;
            }
            _ => {
                return Err(DeformError::InvalidArgument(
                    "update direction does not match the design space".into(),
                ));
            }
        }
    }
    Ok(out)
}

/// Applies one design update and rebuilds the stack atomically; the input
/// stack is never mutated, so a failed step leaves no partial state.
pub fn apply_design_update(
    stack: &MultiMeshStack,
    design: &DesignSpace,
    direction: &UpdateDirection,
    xi: f64,
) -> Result<MultiMeshStack, DeformError> {
    apply_design_updates(stack, &[(design, direction)], xi)
}

/// Applies several design updates (one per submesh) in one atomic rebuild.
pub fn apply_design_updates(
    stack: &MultiMeshStack,
    updates: &[(&DesignSpace, &UpdateDirection)],
    xi: f64,
) -> Result<MultiMeshStack, DeformError> {
    let subs = updated_submeshes(stack, updates, xi)?;
    Ok(stack.rebuilt(subs)?)
}
