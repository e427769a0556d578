//! Single-mesh P1 Lagrange finite elements: degree-of-freedom management,
//! exact local kernels, Dirichlet elimination and error norms. The
//! multimesh layer reuses these kernels on visible parts of cells.

mod sparse;

pub use sparse::{
    default_cg_max_iters, solve_bicgstab, solve_cg, solve_dense_lu, solve_nonsymmetric,
    CooMatrix, CsrMatrix, SolveError,
};

use crate::cutgeom::Classification;
use crate::geom::{barycentric, point_in_triangle, Vec2, GEOM_EPS};
use crate::mesh::Mesh;
use crate::quadrature::mapped_triangle_rule;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FemError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Solve(#[from] SolveError),
}

/// Coefficient vector over the global dofs of a [`DofMap`].
#[derive(Debug, Clone, PartialEq)]
pub struct Field(pub Vec<f64>);

impl Field {
    pub fn zeros(n: usize) -> Self {
        Field(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl std::ops::Index<usize> for Field {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Vertex-to-global-dof map with one contiguous block per mesh. Dofs whose
/// vertex touches only covered cells are flagged inactive and pinned by
/// the assembly.
#[derive(Debug, Clone)]
pub struct DofMap {
    offsets: Vec<usize>,
    active: Vec<bool>,
}

impl DofMap {
    pub fn single(mesh: &Mesh) -> DofMap {
        DofMap {
            offsets: vec![0, mesh.n_vertices()],
            active: vec![true; mesh.n_vertices()],
        }
    }

    /// Blocks: background first, then each submesh in order.
    pub fn for_stack(background: &Mesh, submeshes: &[&Mesh], cls: &Classification) -> DofMap {
        let mut offsets = vec![0, background.n_vertices()];
        for sub in submeshes {
            offsets.push(offsets.last().unwrap() + sub.n_vertices());
        }
        let mut active = vec![false; *offsets.last().unwrap()];
        for (cell, verts) in background.cells.iter().enumerate() {
            if !cls.is_covered(cell) {
                for &v in verts {
                    active[v] = true;
                }
            }
        }
        for dof in active.iter_mut().skip(background.n_vertices()) {
            *dof = true;
        }
        DofMap { offsets, active }
    }

    pub fn n_meshes(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn n_dofs(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn offset(&self, mesh_index: usize) -> usize {
        self.offsets[mesh_index]
    }

    pub fn global(&self, mesh_index: usize, vertex: usize) -> usize {
        debug_assert!(vertex < self.offsets[mesh_index + 1] - self.offsets[mesh_index]);
        self.offsets[mesh_index] + vertex
    }

    pub fn block(&self, mesh_index: usize) -> std::ops::Range<usize> {
        self.offsets[mesh_index]..self.offsets[mesh_index + 1]
    }

    pub fn is_active(&self, dof: usize) -> bool {
        self.active[dof]
    }

    pub fn inactive_dofs(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_dofs()).filter(move |&d| !self.active[d])
    }
}

/// Square sparse system under assembly: triplet matrix, right-hand side
/// and the Dirichlet constraint set, eliminated symmetrically on
/// finalization.
#[derive(Debug, Clone)]
pub struct SparseSystem {
    coo: CooMatrix,
    pub rhs: Vec<f64>,
    constraints: Vec<Option<f64>>,
}

impl SparseSystem {
    pub fn new(n: usize) -> Self {
        SparseSystem {
            coo: CooMatrix::new(n),
            rhs: vec![0.0; n],
            constraints: vec![None; n],
        }
    }

    pub fn n(&self) -> usize {
        self.coo.n()
    }

    pub fn add(&mut self, row: usize, col: usize, value: f64) {
        self.coo.push(row, col, value);
    }

    pub fn add_rhs(&mut self, row: usize, value: f64) {
        self.rhs[row] += value;
    }

    pub fn set_dirichlet(&mut self, dof: usize, value: f64) {
        self.constraints[dof] = Some(value);
    }

    pub fn is_constrained(&self, dof: usize) -> bool {
        self.constraints[dof].is_some()
    }

    /// Symmetric elimination: constrained columns are folded into the
    /// right-hand side, constrained rows replaced by identity rows.
    pub fn finalize(mut self) -> (CsrMatrix, Vec<f64>) {
        let constraints = std::mem::take(&mut self.constraints);
        let mut rhs = std::mem::take(&mut self.rhs);
        self.coo.retain_map(|r, c, v| {
            let (ri, ci) = (r as usize, c as usize);
            match (constraints[ri], constraints[ci]) {
                (None, None) => Some((r, c, v)),
                (None, Some(g)) => {
                    rhs[ri] -= v * g;
                    None
                }
                (Some(_), _) => None,
            }
        });
        for (dof, g) in constraints.iter().enumerate() {
            if let Some(g) = g {
                self.coo.push(dof, dof, 1.0);
                rhs[dof] = *g;
            }
        }
        (self.coo.to_csr(), rhs)
    }

    /// Finalizes and solves with preconditioned CG at the given relative
    /// residual tolerance (default 1e-10 when `None`).
    pub fn solve_spd(self, rel_tol: Option<f64>) -> Result<Field, SolveError> {
        let (a, b) = self.finalize();
        let x = solve_cg(&a, &b, rel_tol.unwrap_or(1e-10), None)?;
        Ok(Field(x))
    }
}

/// Constant P1 basis gradients and the signed area of a triangle.
pub fn p1_gradients(p: [Vec2; 3]) -> ([Vec2; 3], f64) {
    let area2 = (p[1] - p[0]).cross(p[2] - p[0]);
    let grads = [
        Vec2::new(p[1].y - p[2].y, p[2].x - p[1].x) / area2,
        Vec2::new(p[2].y - p[0].y, p[0].x - p[2].x) / area2,
        Vec2::new(p[0].y - p[1].y, p[1].x - p[0].x) / area2,
    ];
    (grads, 0.5 * area2)
}

/// Stiffness entries lambda_K |K| grad(phi_a) . grad(phi_b), with the
/// conductivity evaluated per cell region. Coefficients must be positive.
pub fn assemble_laplace(
    sys: &mut SparseSystem,
    mesh: &Mesh,
    offset: usize,
    lambda: &impl Fn(i32) -> f64,
) -> Result<(), FemError> {
    for cell in 0..mesh.n_cells() {
        let coeff = lambda(mesh.cell_region[cell]);
        if !(coeff > 0.0) {
            return Err(FemError::InvalidArgument(format!(
                "conductivity {coeff} for region {} is not positive",
                mesh.cell_region[cell]
            )));
        }
        let (grads, area) = p1_gradients(mesh.cell_points(cell));
        let verts = mesh.cells[cell];
        for a in 0..3 {
            for b in 0..3 {
                sys.add(
                    offset + verts[a],
                    offset + verts[b],
                    coeff * area * grads[a].dot(grads[b]),
                );
            }
        }
    }
    Ok(())
}

/// Reaction entries: the bilinear form is a(T,v) - c (T,v), so the mass
/// block enters the matrix with a -c factor.
pub fn assemble_mass(sys: &mut SparseSystem, mesh: &Mesh, offset: usize, c: f64) {
    if c == 0.0 {
        return;
    }
    for cell in 0..mesh.n_cells() {
        let area = mesh.cell_area(cell);
        let verts = mesh.cells[cell];
        for a in 0..3 {
            for b in 0..3 {
                let m = if a == b { area / 6.0 } else { area / 12.0 };
                sys.add(offset + verts[a], offset + verts[b], -c * m);
            }
        }
    }
}

/// Volume source integral against each test function with a quadrature of
/// the given degree: rhs_a += ∫ f phi_a.
pub fn assemble_source(
    sys: &mut SparseSystem,
    mesh: &Mesh,
    offset: usize,
    f: &impl Fn(Vec2, i32) -> f64,
    degree: usize,
) {
    for cell in 0..mesh.n_cells() {
        let pts = mesh.cell_points(cell);
        let region = mesh.cell_region[cell];
        let verts = mesh.cells[cell];
        for (x, w) in mapped_triangle_rule(pts[0], pts[1], pts[2], degree) {
            let lam = barycentric(x, pts[0], pts[1], pts[2]);
            let fx = f(x, region);
            for a in 0..3 {
                sys.add_rhs(offset + verts[a], w * fx * lam[a]);
            }
        }
    }
}

/// Robin boundary condition lambda dT/dn + (T - t_ex) = 0 on the marked
/// facets: edge mass on the matrix, t_ex edge load on the right-hand side
/// (both edge-exact for P1).
pub fn assemble_robin(sys: &mut SparseSystem, mesh: &Mesh, offset: usize, m: i32, t_ex: f64) {
    for facet in mesh.facets_with_marker(m) {
        let len = mesh.facet_length(facet);
        let [v0, v1] = mesh.facets[facet];
        sys.add(offset + v0, offset + v0, len / 3.0);
        sys.add(offset + v1, offset + v1, len / 3.0);
        sys.add(offset + v0, offset + v1, len / 6.0);
        sys.add(offset + v1, offset + v0, len / 6.0);
        sys.add_rhs(offset + v0, t_ex * len / 2.0);
        sys.add_rhs(offset + v1, t_ex * len / 2.0);
    }
}

/// Registers Dirichlet values g(x) at the vertices of the marked facets.
pub fn apply_dirichlet(
    sys: &mut SparseSystem,
    mesh: &Mesh,
    offset: usize,
    m: i32,
    g: &impl Fn(Vec2) -> f64,
) {
    for facet in mesh.facets_with_marker(m) {
        for &v in &mesh.facets[facet] {
            sys.set_dirichlet(offset + v, g(mesh.vertices[v]));
        }
    }
}

/// Barycentric interpolation of the field at a point of the mesh.
pub fn eval_field(mesh: &Mesh, offset: usize, field: &Field, p: Vec2) -> Option<f64> {
    let cell = crate::cutgeom::point_locate(mesh, p)?;
    Some(eval_in_cell(mesh, offset, field, cell, p))
}

pub fn eval_in_cell(mesh: &Mesh, offset: usize, field: &Field, cell: usize, p: Vec2) -> f64 {
    let pts = mesh.cell_points(cell);
    debug_assert!(point_in_triangle(p, pts[0], pts[1], pts[2], 1e-6));
    let lam = barycentric(p, pts[0], pts[1], pts[2]);
    let verts = mesh.cells[cell];
    (0..3).map(|a| lam[a] * field[offset + verts[a]]).sum()
}

/// Constant gradient of the P1 field on one cell.
pub fn cell_gradient(mesh: &Mesh, offset: usize, field: &Field, cell: usize) -> Vec2 {
    let (grads, _) = p1_gradients(mesh.cell_points(cell));
    let verts = mesh.cells[cell];
    (0..3).fold(Vec2::ZERO, |acc, a| {
        acc + grads[a] * field[offset + verts[a]]
    })
}

/// L2 distance between the field and an exact function, by cell-wise
/// quadrature of the given degree (>= 2).
pub fn l2_error(
    mesh: &Mesh,
    offset: usize,
    field: &Field,
    exact: &impl Fn(Vec2) -> f64,
    degree: usize,
) -> f64 {
    assert!(degree >= 2, "l2_error needs quadrature degree >= 2");
    let mut acc = 0.0;
    for cell in 0..mesh.n_cells() {
        let pts = mesh.cell_points(cell);
        for (x, w) in mapped_triangle_rule(pts[0], pts[1], pts[2], degree) {
            let d = eval_in_cell(mesh, offset, field, cell, x) - exact(x);
            acc += w * d * d;
        }
    }
    acc.sqrt()
}

/// Nodal interpolation of a function on one mesh block.
pub fn interpolate(mesh: &Mesh, offset: usize, n_dofs: usize, f: &impl Fn(Vec2) -> f64) -> Field {
    let mut field = Field::zeros(n_dofs);
    for (v, p) in mesh.vertices.iter().enumerate() {
        field.0[offset + v] = f(*p);
    }
    field
}

/// Slack used when checking membership of located points.
pub const LOCATE_SLACK: f64 = GEOM_EPS;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{gen_rect_grid, marker};

    fn poisson_dirichlet(
        mesh: &Mesh,
        f: impl Fn(Vec2, i32) -> f64,
        g: impl Fn(Vec2) -> f64,
    ) -> Field {
        let mut sys = SparseSystem::new(mesh.n_vertices());
        assemble_laplace(&mut sys, mesh, 0, &|_| 1.0).unwrap();
        assemble_source(&mut sys, mesh, 0, &f, 4);
        apply_dirichlet(&mut sys, mesh, 0, marker::EXTERIOR, &g);
        sys.solve_spd(Some(1e-12)).unwrap()
    }

    #[test]
    fn element_stiffness_rows_sum_to_zero() {
        let mesh = Mesh::new(
            vec![Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0)],
            vec![[0, 1, 2]],
            vec![0],
            vec![],
            vec![],
        )
        .unwrap();
        let mut sys = SparseSystem::new(3);
        assemble_laplace(&mut sys, &mesh, 0, &|_| 1.0).unwrap();
        let (a, _) = sys.finalize();
        for row in 0..3 {
            let sum: f64 = (0..3).map(|col| a.get(row, col)).sum();
            assert!(sum.abs() < 1e-15);
        }
    }

    #[test]
    fn linears_are_discrete_harmonic() {
        let mesh = gen_rect_grid(0.0, 0.0, 1.0, 1.0, 4, 4).unwrap();
        let u = interpolate(&mesh, 0, mesh.n_vertices(), &|p| 1.0 + 2.0 * p.x - 0.5 * p.y);
        let mut sys = SparseSystem::new(mesh.n_vertices());
        assemble_laplace(&mut sys, &mesh, 0, &|_| 1.0).unwrap();
        let (a, _) = sys.finalize();
        let mut au = vec![0.0; mesh.n_vertices()];
        a.matvec(&u.0, &mut au);
        // interior vertices: stiffness action on a linear vanishes
        let boundary: std::collections::HashSet<usize> = mesh
            .facets
            .iter()
            .flat_map(|f| f.iter().copied())
            .collect();
        for v in 0..mesh.n_vertices() {
            if !boundary.contains(&v) {
                assert!(au[v].abs() < 1e-13, "interior row {v}: {}", au[v]);
            }
        }
    }

    #[test]
    fn rejects_nonpositive_conductivity() {
        let mesh = gen_rect_grid(0.0, 0.0, 1.0, 1.0, 1, 1).unwrap();
        let mut sys = SparseSystem::new(mesh.n_vertices());
        assert!(assemble_laplace(&mut sys, &mesh, 0, &|_| 0.0).is_err());
    }

    #[test]
    fn mass_matrix_exact_entries() {
        let mesh = Mesh::new(
            vec![Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0)],
            vec![[0, 1, 2]],
            vec![0],
            vec![],
            vec![],
        )
        .unwrap();
        let mut sys = SparseSystem::new(3);
        assemble_mass(&mut sys, &mesh, 0, -1.0); // -c = 1: plain mass
        let (a, _) = sys.finalize();
        let area = 0.5;
        assert!((a.get(0, 0) - area / 6.0).abs() < 1e-15);
        assert!((a.get(0, 1) - area / 12.0).abs() < 1e-15);

        // c = 0 contributes nothing
        let mut sys = SparseSystem::new(3);
        assemble_mass(&mut sys, &mesh, 0, 0.0);
        let (a, _) = sys.finalize();
        assert_eq!(a.max_abs(), 0.0);
    }

    #[test]
    fn mass_row_sums_are_dual_areas() {
        let mesh = gen_rect_grid(0.0, 0.0, 1.0, 1.0, 3, 3).unwrap();
        let c = 0.04;
        let mut sys = SparseSystem::new(mesh.n_vertices());
        assemble_mass(&mut sys, &mesh, 0, c);
        let (a, _) = sys.finalize();
        for v in 0..mesh.n_vertices() {
            let dual: f64 = (0..mesh.n_cells())
                .filter(|&cell| mesh.cells[cell].contains(&v))
                .map(|cell| mesh.cell_area(cell) / 3.0)
                .sum();
            let row_sum: f64 = (0..mesh.n_vertices()).map(|w| a.get(v, w)).sum();
            assert!((row_sum + c * dual).abs() < 1e-14, "vertex {v}");
        }
    }

    #[test]
    fn robin_edge_matrix_and_zero_rhs() {
        let mesh = Mesh::new(
            vec![Vec2::new(0.0, 0.0), Vec2::new(2.0, 0.0), Vec2::new(0.0, 1.0)],
            vec![[0, 1, 2]],
            vec![0],
            vec![[0, 1]],
            vec![marker::EXTERIOR],
        )
        .unwrap();
        let mut sys = SparseSystem::new(3);
        assemble_robin(&mut sys, &mesh, 0, marker::EXTERIOR, 0.0);
        assert!(sys.rhs.iter().all(|&v| v == 0.0));
        let (a, _) = sys.finalize();
        let len = 2.0;
        assert!((a.get(0, 0) - len / 3.0).abs() < 1e-15);
        assert!((a.get(0, 1) - len / 6.0).abs() < 1e-15);
        assert!((a.get(1, 1) - len / 3.0).abs() < 1e-15);
    }

    #[test]
    fn robin_constant_limit() {
        // large conductivity, f = 0: the constant t_ex solves both the PDE
        // and the Robin condition exactly
        let mesh = gen_rect_grid(0.0, 0.0, 1.0, 1.0, 4, 4).unwrap();
        let mut sys = SparseSystem::new(mesh.n_vertices());
        assemble_laplace(&mut sys, &mesh, 0, &|_| 1e3).unwrap();
        assemble_robin(&mut sys, &mesh, 0, marker::EXTERIOR, 3.2);
        let t = sys.solve_spd(Some(1e-12)).unwrap();
        for v in 0..mesh.n_vertices() {
            assert!((t[v] - 3.2).abs() < 1e-6, "vertex {v}: {}", t[v]);
        }
    }

    #[test]
    fn dirichlet_constant_and_linear_exactness() {
        let mesh = gen_rect_grid(0.0, 0.0, 1.0, 1.0, 4, 4).unwrap();
        let t = poisson_dirichlet(&mesh, |_, _| 0.0, |_| 1.0);
        for v in 0..mesh.n_vertices() {
            assert!((t[v] - 1.0).abs() < 1e-10);
        }
        let t = poisson_dirichlet(&mesh, |_, _| 0.0, |p| p.x);
        for (v, p) in mesh.vertices.iter().enumerate() {
            assert!((t[v] - p.x).abs() < 1e-10);
        }
    }

    #[test]
    fn homogeneous_dirichlet_keeps_rhs() {
        let mesh = gen_rect_grid(0.0, 0.0, 1.0, 1.0, 2, 2).unwrap();
        let mut sys = SparseSystem::new(mesh.n_vertices());
        assemble_laplace(&mut sys, &mesh, 0, &|_| 1.0).unwrap();
        assemble_source(&mut sys, &mesh, 0, &|_, _| 1.0, 2);
        let rhs_before = sys.rhs.clone();
        apply_dirichlet(&mut sys, &mesh, 0, marker::EXTERIOR, &|_| 0.0);
        let constrained: Vec<bool> = (0..sys.n()).map(|d| sys.is_constrained(d)).collect();
        let (_, rhs) = sys.finalize();
        for d in 0..rhs.len() {
            if constrained[d] {
                assert_eq!(rhs[d], 0.0);
            } else {
                assert_eq!(rhs[d], rhs_before[d]);
            }
        }
    }

    #[test]
    fn eval_and_gradient() {
        let mesh = gen_rect_grid(0.0, 0.0, 1.0, 1.0, 3, 3).unwrap();
        let u = interpolate(&mesh, 0, mesh.n_vertices(), &|p| p.x + 2.0 * p.y);
        for cell in 0..mesh.n_cells() {
            let g = cell_gradient(&mesh, 0, &u, cell);
            assert!((g - Vec2::new(1.0, 2.0)).norm() < 1e-13);
        }
        // vertex evaluation returns the coefficient
        let p = mesh.vertices[5];
        assert!((eval_field(&mesh, 0, &u, p).unwrap() - u[5]).abs() < 1e-13);
        // centroid value is the mean of the three vertex coefficients
        let cell = 2;
        let pts = mesh.cell_points(cell);
        let centroid = (pts[0] + pts[1] + pts[2]) / 3.0;
        let mean: f64 = mesh.cells[cell].iter().map(|&v| u[v]).sum::<f64>() / 3.0;
        assert!((eval_field(&mesh, 0, &u, centroid).unwrap() - mean).abs() < 1e-13);
    }

    #[test]
    fn l2_error_basics() {
        let mesh = gen_rect_grid(0.0, 0.0, 1.0, 1.0, 3, 3).unwrap();
        let exact = |p: Vec2| 0.5 + p.x - 2.0 * p.y;
        let u = interpolate(&mesh, 0, mesh.n_vertices(), &exact);
        assert!(l2_error(&mesh, 0, &u, &exact, 4) < 1e-12);
        let zero = Field::zeros(mesh.n_vertices());
        let err = l2_error(&mesh, 0, &zero, &|_| 1.0, 2);
        assert!((err - 1.0).abs() < 1e-12);
    }

    #[test]
    fn manufactured_sin_sin_converges_at_rate_two() {
        use std::f64::consts::PI;
        let exact = |p: Vec2| (PI * p.x).sin() * (PI * p.y).sin();
        let f = |p: Vec2, _: i32| 2.0 * PI * PI * (PI * p.x).sin() * (PI * p.y).sin();
        let mut errors = Vec::new();
        for n in [8usize, 16, 32] {
            let mesh = gen_rect_grid(0.0, 0.0, 1.0, 1.0, n, n).unwrap();
            let t = poisson_dirichlet(&mesh, f, |_| 0.0);
            errors.push(l2_error(&mesh, 0, &t, &exact, 4));
        }
        let rate1 = (errors[0] / errors[1]).log2();
        let rate2 = (errors[1] / errors[2]).log2();
        assert!((rate1 - 2.0).abs() < 0.15, "rate {rate1}");
        assert!((rate2 - 2.0).abs() < 0.15, "rate {rate2}");
    }

    #[test]
    fn assembled_matrix_is_symmetric() {
        let mesh = gen_rect_grid(0.0, 0.0, 1.0, 1.0, 4, 4).unwrap();
        let mut sys = SparseSystem::new(mesh.n_vertices());
        assemble_laplace(&mut sys, &mesh, 0, &|_| 2.5).unwrap();
        assemble_mass(&mut sys, &mesh, 0, 0.04);
        assemble_robin(&mut sys, &mesh, 0, marker::EXTERIOR, 3.2);
        let (a, _) = sys.finalize();
        assert!(a.symmetry_defect() <= 1e-12 * a.max_abs());
    }
}
