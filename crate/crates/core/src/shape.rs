//! Shape-calculus layer: boundary gradient densities from state/adjoint
//! pairs, PDE-free geometric penalty functionals, directional derivatives
//! of the reduced functional, and the Taylor-test harness.
//!
//! A density g on a boundary Gamma represents the reduced derivative
//! `dJ[s] = ∫_Gamma s·n g dS` with n the outward normal of the visible
//! (fluid) domain.

use crate::cutgeom::{chain_marker_loop, CutError};
use crate::fem::{eval_in_cell, Field};
use crate::geom::{polygon_centroid, polygon_signed_area, Vec2};
use crate::mesh::{marker, Mesh};
use crate::multimesh::{MultiMeshStack, ProblemSpec};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ShapeError {
    #[error("topology error: {0}")]
    Topology(String),
    #[error(transparent)]
    Cut(#[from] CutError),
    #[error("precondition violated: {0}")]
    Precondition(String),
}

/// One facet's worth of gradient density.
#[derive(Debug, Clone)]
pub struct DensityFacet {
    pub facet: usize,
    pub marker: i32,
    pub midpoint: Vec2,
    /// Outward normal of the visible domain on this facet.
    pub normal: Vec2,
    pub length: f64,
    pub g: f64,
}

/// Facet-piecewise-constant gradient density on one mesh of a stack.
#[derive(Debug, Clone)]
pub struct GradientDensity {
    /// Stack mesh index carrying the density (0 background, >= 1 submesh).
    pub mesh_index: usize,
    pub facets: Vec<DensityFacet>,
}

impl GradientDensity {
    pub fn zero_like(&self) -> GradientDensity {
        let mut out = self.clone();
        for f in &mut out.facets {
            f.g = 0.0;
        }
        out
    }

    /// Adds another density defined on the same facets.
    pub fn add(&mut self, other: &GradientDensity) {
        assert_eq!(self.mesh_index, other.mesh_index);
        assert_eq!(self.facets.len(), other.facets.len());
        for (a, b) in self.facets.iter_mut().zip(&other.facets) {
            debug_assert_eq!(a.facet, b.facet);
            a.g += b.g;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.facets.iter().fold(0.0, |m, f| m.max(f.g.abs()))
    }
}

/// Velocity fields s used to pair with densities.
pub enum DesignVelocity<'a> {
    /// Constant translation field.
    Translation(Vec2),
    /// Unit-rate rotation about a center: s(p) = (-(p_y-c_y), p_x-c_x).
    Rotation { center: Vec2 },
    /// Arbitrary velocity field.
    Field(&'a dyn Fn(Vec2) -> Vec2),
}

impl DesignVelocity<'_> {
    pub fn eval(&self, p: Vec2) -> Vec2 {
        match self {
            DesignVelocity::Translation(v) => *v,
            DesignVelocity::Rotation { center } => {
                Vec2::new(-(p.y - center.y), p.x - center.x)
            }
            DesignVelocity::Field(f) => f(p),
        }
    }
}

/// Midpoint-rule pairing dJ[s] = Σ len (s·n) g over the density facets.
pub fn directional_derivative(density: &GradientDensity, s: &DesignVelocity) -> f64 {
    density
        .facets
        .iter()
        .map(|f| f.length * s.eval(f.midpoint).dot(f.normal) * f.g)
        .sum()
}

/// Conormal flux lambda du/dn of a P1 field on the facets of a marker,
/// recovered from the Galerkin residual of the cells on one side: for a
/// vertex a on the marked loop,
///
/// ```text
///   r_a = Σ_K [ ∫_K lambda grad(u) · grad(phi_a) - c u phi_a - load phi_a ]
/// ```
///
/// equals the weak flux moment ∮ lambda du/dn phi_a over the marker, with
/// n pointing away from the side cells. Lumping by the dual boundary
/// length and averaging to facet midpoints gives a facet-constant flux
/// that is exact for linear fields and superconvergent for smooth ones.
pub fn recovered_conormal_flux(
    mesh: &Mesh,
    offset: usize,
    field: &Field,
    lambda: &impl Fn(i32) -> f64,
    reaction: f64,
    load: &impl Fn(usize, Vec2) -> f64,
    m: i32,
    side: &impl Fn(i32) -> bool,
) -> Result<std::collections::HashMap<usize, f64>, ShapeError> {
    use crate::fem::p1_gradients;
    use crate::quadrature::mapped_triangle_rule;
    use std::collections::HashMap;
    let mut loop_verts: Vec<usize> = mesh
        .facets_with_marker(m)
        .flat_map(|f| mesh.facets[f])
        .collect();
    loop_verts.sort_unstable();
    loop_verts.dedup();
    if loop_verts.is_empty() {
        return Err(ShapeError::Topology(format!(
            "no facets with marker {m} on the mesh"
        )));
    }
    let mut moments: HashMap<usize, f64> = loop_verts.iter().map(|&v| (v, 0.0)).collect();
    for cell in 0..mesh.n_cells() {
        if !side(mesh.cell_region[cell]) {
            continue;
        }
        let verts = mesh.cells[cell];
        if !verts.iter().any(|v| moments.contains_key(v)) {
            continue;
        }
        let pts = mesh.cell_points(cell);
        let (grads, area) = p1_gradients(pts);
        let lam = lambda(mesh.cell_region[cell]);
        let mut grad_u = Vec2::ZERO;
        for a in 0..3 {
            grad_u += grads[a] * field[offset + verts[a]];
        }
        let rule = mapped_triangle_rule(pts[0], pts[1], pts[2], 4);
        for a in 0..3 {
            let Some(r) = moments.get_mut(&verts[a]) else {
                continue;
            };
            *r += lam * area * grad_u.dot(grads[a]);
            for &(x, w) in &rule {
                let bc = crate::geom::barycentric(x, pts[0], pts[1], pts[2]);
                let u_x: f64 = (0..3).map(|b| bc[b] * field[offset + verts[b]]).sum();
                *r -= w * (reaction * u_x + load(cell, x)) * bc[a];
            }
        }
    }
    let mut dual: HashMap<usize, f64> = loop_verts.iter().map(|&v| (v, 0.0)).collect();
    for f in mesh.facets_with_marker(m) {
        let len = mesh.facet_length(f);
        for &v in &mesh.facets[f] {
            *dual.get_mut(&v).unwrap() += 0.5 * len;
        }
    }
    let q: HashMap<usize, f64> = loop_verts
        .iter()
        .map(|&v| (v, moments[&v] / dual[&v]))
        .collect();
    Ok(mesh
        .facets_with_marker(m)
        .map(|f| {
            let [a, b] = mesh.facets[f];
            (f, 0.5 * (q[&a] + q[&b]))
        })
        .collect())
}

/// Density of the Dirichlet example on the hole boundary Gamma of one
/// mesh: g = T^2 - (n·grad adjoint)(n·grad T), with the trace of T from
/// the adjacent cell, residual-recovered normal fluxes, and constant
/// extension of the boundary data.
pub fn density_dirichlet_on(
    mesh: &Mesh,
    offset: usize,
    state: &Field,
    adjoint: &Field,
    lambda: &impl Fn(i32) -> f64,
    reaction: f64,
    state_load: &impl Fn(usize, Vec2) -> f64,
    adjoint_load: &impl Fn(usize, Vec2) -> f64,
    m: i32,
) -> Result<Vec<DensityFacet>, ShapeError> {
    let adjacency = mesh.facet_cells();
    let everywhere = |_: i32| true;
    let flux_t = recovered_conormal_flux(
        mesh, offset, state, lambda, reaction, state_load, m, &everywhere,
    )?;
    let flux_adj = recovered_conormal_flux(
        mesh, offset, adjoint, lambda, reaction, adjoint_load, m, &everywhere,
    )?;
    let mut out = Vec::new();
    for facet in mesh.facets_with_marker(m) {
        let cells = &adjacency[facet];
        if cells.len() != 1 {
            return Err(ShapeError::Topology(format!(
                "facet {facet} with marker {m} is not a boundary facet"
            )));
        }
        let cell = cells[0];
        let n = mesh.facet_normal_from_cell(facet, cell);
        let mid = mesh.facet_midpoint(facet);
        let t_mid = eval_in_cell(mesh, offset, state, cell, mid);
        let lam = lambda(mesh.cell_region[cell]);
        let dn_t = flux_t[&facet] / lam;
        let dn_adj = flux_adj[&facet] / lam;
        out.push(DensityFacet {
            facet,
            marker: m,
            midpoint: mid,
            normal: n,
            length: mesh.facet_length(facet),
            g: t_mid * t_mid - dn_adj * dn_t,
        });
    }
    Ok(out)
}

/// Stack-level wrapper of [`density_dirichlet_on`] for a submesh's Gamma.
pub fn density_dirichlet_example(
    stack: &MultiMeshStack,
    spec: &ProblemSpec,
    state: &Field,
    adjoint: &Field,
    submesh_index: usize,
) -> Result<GradientDensity, ShapeError> {
    let mesh = &stack.submeshes[submesh_index].mesh;
    let offset = stack.dofmap.offset(submesh_index + 1);
    let lambda = |region: i32| spec.conductivity.get(region);
    let state_load =
        |cell: usize, x: Vec2| spec.source.eval(x, mesh.cell_region[cell]);
    let adjoint_load = |cell: usize, x: Vec2| {
        -spec
            .functional
            .derivative(eval_in_cell(mesh, offset, state, cell, x))
    };
    Ok(GradientDensity {
        mesh_index: submesh_index + 1,
        facets: density_dirichlet_on(
            mesh,
            offset,
            state,
            adjoint,
            &lambda,
            spec.reaction,
            &state_load,
            &adjoint_load,
            marker::GAMMA,
        )?,
    })
}

/// Density of the material-interface objective on the cable interfaces
/// (markers 3 and 4):
///
/// ```text
///   g = [-cTp - fp] - lambda+ dp+/dn [dT/dn] + [lambda] grad_G p+ · grad_G T+
/// ```
///
/// The "+" side is the outer material (fill at the insulation boundary,
/// insulation at the metal boundary), jumps are (+) minus (-), and n
/// points from - to +. Normal derivatives are residual-recovered per
/// side; tangential gradients come from the facet trace.
pub fn density_multicable(
    stack: &MultiMeshStack,
    spec: &ProblemSpec,
    state: &Field,
    adjoint: &Field,
    submesh_index: usize,
) -> Result<GradientDensity, ShapeError> {
    let mesh = &stack.submeshes[submesh_index].mesh;
    let offset = stack.dofmap.offset(submesh_index + 1);
    let adjacency = mesh.facet_cells();
    let lambda = |region: i32| spec.conductivity.get(region);
    let state_load =
        |cell: usize, x: Vec2| spec.source.eval(x, mesh.cell_region[cell]);
    let adjoint_load = |cell: usize, x: Vec2| {
        -spec
            .functional
            .derivative(eval_in_cell(mesh, offset, state, cell, x))
    };
    let mut facets = Vec::new();
    for m in [marker::GAMMA_I, marker::GAMMA_E] {
        if !mesh.has_marker(m) {
            continue;
        }
        // recovered conormal fluxes from each side; the recovered n points
        // away from the side region
        let mut region_pair: Option<(i32, i32)> = None; // (plus, minus)
        for facet in mesh.facets_with_marker(m) {
            let cells = &adjacency[facet];
            if cells.len() != 2
                || mesh.cell_region[cells[0]] == mesh.cell_region[cells[1]]
            {
                return Err(ShapeError::Topology(format!(
                    "interface facet {facet} is not shared by two regions"
                )));
            }
            let (r0, r1) = (mesh.cell_region[cells[0]], mesh.cell_region[cells[1]]);
            // outer material (smaller region tag) is the + side
            let pair = (r0.min(r1), r0.max(r1));
            if let Some(prev) = region_pair {
                if prev != pair {
                    return Err(ShapeError::Topology(format!(
                        "marker {m} separates inconsistent region pairs"
                    )));
                }
            }
            region_pair = Some(pair);
        }
        let (region_plus, region_minus) = region_pair.expect("marker has facets");
        let plus_side = |r: i32| r == region_plus;
        let minus_side = |r: i32| r == region_minus;
        let flux_t_plus = recovered_conormal_flux(
            mesh, offset, state, &lambda, spec.reaction, &state_load, m, &plus_side,
        )?;
        let flux_t_minus = recovered_conormal_flux(
            mesh, offset, state, &lambda, spec.reaction, &state_load, m, &minus_side,
        )?;
        let flux_p_plus = recovered_conormal_flux(
            mesh, offset, adjoint, &lambda, spec.reaction, &adjoint_load, m, &plus_side,
        )?;
        let lam_plus = spec.conductivity.get(region_plus);
        let lam_minus = spec.conductivity.get(region_minus);
        for facet in mesh.facets_with_marker(m) {
            let cells = &adjacency[facet];
            let minus_cell = cells
                .iter()
                .copied()
                .find(|&c| mesh.cell_region[c] == region_minus)
                .expect("one side is the minus region");
            // n from - to +
            let n = mesh.facet_normal_from_cell(facet, minus_cell);
            let mid = mesh.facet_midpoint(facet);
            let p_mid = eval_in_cell(mesh, offset, adjoint, minus_cell, mid);
            let f_plus = spec.source.eval(mid, region_plus);
            let f_minus = spec.source.eval(mid, region_minus);
            // recovered fluxes: the plus-side flux is measured with n
            // pointing out of the plus region, i.e. against our n
            let dn_t_plus = -flux_t_plus[&facet] / lam_plus;
            let dn_t_minus = flux_t_minus[&facet] / lam_minus;
            let dn_p_plus = -flux_p_plus[&facet] / lam_plus;
            // trace-based tangential derivatives (single-valued)
            let [v0, v1] = mesh.facets[facet];
            let len = mesh.facet_length(facet);
            let dtau_t = (state[offset + v1] - state[offset + v0]) / len;
            let dtau_p = (adjoint[offset + v1] - adjoint[offset + v0]) / len;
            // c is a single scalar, so [-cTp] cancels; [fp] = p [f]
            let g = -p_mid * (f_plus - f_minus)
                - lam_plus * dn_p_plus * (dn_t_plus - dn_t_minus)
                + (lam_plus - lam_minus) * dtau_p * dtau_t;
            facets.push(DensityFacet {
                facet,
                marker: m,
                midpoint: mid,
                normal: n,
                length: len,
                g,
            });
        }
    }
    if facets.is_empty() {
        return Err(ShapeError::Topology(
            "submesh has no material interface facets (markers 3/4)".into(),
        ));
    }
    Ok(GradientDensity {
        mesh_index: submesh_index + 1,
        facets,
    })
}

/// Targets and penalty weights of the geometric (PDE-free) functionals.
#[derive(Debug, Clone, Copy)]
pub struct GeometricTargets {
    pub gamma1: f64,
    pub gamma2: f64,
    /// Target fluid area |Omega_0|.
    pub target_fluid_area: f64,
    pub target_centroid: Vec2,
    /// Area of the surrounding domain; fluid = domain - obstacle.
    pub domain_area: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct GeometricReport {
    pub j_v: f64,
    pub j_cx: f64,
    pub j_cy: f64,
    pub fluid_area: f64,
    pub obstacle_area: f64,
    pub centroid: Vec2,
}

impl GeometricReport {
    pub fn total(&self) -> f64 {
        self.j_v + self.j_cx + self.j_cy
    }
}

/// Quadratic area/centroid penalties of an obstacle loop (marker 1 on the
/// given mesh) and their combined gradient density. Normals point outward
/// from the fluid; areas and centroids come from the shoelace formulas.
pub fn geometric_functionals(
    mesh: &Mesh,
    targets: &GeometricTargets,
) -> Result<(GeometricReport, Vec<DensityFacet>), ShapeError> {
    let loop_pts = chain_marker_loop(mesh, marker::GAMMA)?;
    let obstacle_area = polygon_signed_area(&loop_pts).abs();
    let centroid = polygon_centroid(&loop_pts);
    let fluid_area = targets.domain_area - obstacle_area;
    let report = GeometricReport {
        j_v: targets.gamma1 * (fluid_area - targets.target_fluid_area).powi(2),
        j_cx: targets.gamma2 * (centroid.x - targets.target_centroid.x).powi(2),
        j_cy: targets.gamma2 * (centroid.y - targets.target_centroid.y).powi(2),
        fluid_area,
        obstacle_area,
        centroid,
    };
    let adjacency = mesh.facet_cells();
    let g_v = 2.0 * targets.gamma1 * (fluid_area - targets.target_fluid_area);
    let cx_factor = 2.0 * targets.gamma2 * (centroid.x - targets.target_centroid.x)
        / obstacle_area;
    let cy_factor = 2.0 * targets.gamma2 * (centroid.y - targets.target_centroid.y)
        / obstacle_area;
    let mut facets = Vec::new();
    for facet in mesh.facets_with_marker(marker::GAMMA) {
        let cells = &adjacency[facet];
        if cells.len() != 1 {
            return Err(ShapeError::Topology(format!(
                "facet {facet} on the obstacle loop is not a boundary facet"
            )));
        }
        let mid = mesh.facet_midpoint(facet);
        let n = mesh.facet_normal_from_cell(facet, cells[0]);
        let g = g_v
            + cx_factor * (centroid.x - mid.x)
            + cy_factor * (centroid.y - mid.y);
        facets.push(DensityFacet {
            facet,
            marker: marker::GAMMA,
            midpoint: mid,
            normal: n,
            length: mesh.facet_length(facet),
            g,
        });
    }
    Ok((report, facets))
}

/// One row of a Taylor test.
#[derive(Debug, Clone, Copy)]
pub struct TaylorEntry {
    pub eps: f64,
    pub j: f64,
    /// |J(eps) - J(0)|
    pub r0: f64,
    /// |J(eps) - J(0) - eps dJ[s]|
    pub r1: f64,
}

#[derive(Debug, Clone)]
pub struct TaylorReport {
    pub j0: f64,
    pub slope: f64,
    pub entries: Vec<TaylorEntry>,
    pub r0_rates: Vec<f64>,
    pub r1_rates: Vec<f64>,
    /// Failure message when an evaluation aborted the sweep.
    pub error: Option<String>,
}

impl TaylorReport {
    pub fn final_r1_rate(&self) -> Option<f64> {
        self.r1_rates.last().copied()
    }

    /// Mean of the last `n` second-order rates.
    pub fn mean_r1_rate(&self, n: usize) -> Option<f64> {
        if self.r1_rates.is_empty() {
            return None;
        }
        let tail = &self.r1_rates[self.r1_rates.len().saturating_sub(n)..];
        Some(tail.iter().sum::<f64>() / tail.len() as f64)
    }
}

/// The default perturbation magnitudes 0.1 * 2^-k, k = 0..5.
pub fn default_eps_list() -> Vec<f64> {
    (0..6).map(|k| 0.1 * 0.5f64.powi(k)).collect()
}

/// Runs a Taylor test of `J` around the current design: `eval(eps)` must
/// return the functional at the design perturbed by `eps` times the test
/// direction, `j0` the unperturbed value, and `slope` the predicted
/// derivative dJ[s]. A failing evaluation truncates the report.
pub fn taylor_test<E: std::fmt::Display>(
    eval: impl Fn(f64) -> Result<f64, E>,
    j0: f64,
    slope: f64,
    eps_list: &[f64],
) -> TaylorReport {
    assert!(eps_list.len() >= 4, "need at least 4 epsilon values");
    assert!(
        eps_list.windows(2).all(|w| w[0] > w[1] && w[1] > 0.0),
        "epsilon list must be strictly decreasing and positive"
    );
    let mut entries = Vec::new();
    let mut error = None;
    for &eps in eps_list {
        match eval(eps) {
            Ok(j) => entries.push(TaylorEntry {
                eps,
                j,
                r0: (j - j0).abs(),
                r1: (j - j0 - eps * slope).abs(),
            }),
            Err(e) => {
                error = Some(format!("evaluation at eps {eps:.3e} failed: {e}"));
                break;
            }
        }
    }
    let rate = |r: &dyn Fn(&TaylorEntry) -> f64| -> Vec<f64> {
        entries
            .windows(2)
            .map(|w| {
                let (a, b) = (r(&w[0]), r(&w[1]));
                (a / b).ln() / (w[0].eps / w[1].eps).ln()
            })
            .collect()
    };
    TaylorReport {
        j0,
        slope,
        r0_rates: rate(&|e| e.r0),
        r1_rates: rate(&|e| e.r1),
        entries,
        error,
    }
}
