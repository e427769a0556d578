//! Integration tests of the coupled overlapping-mesh formulation: the
//! degenerate single-mesh limit, linear consistency through the interface
//! coupling, functional/adjoint plumbing, symmetry and positive
//! definiteness at the default penalties.

use mmshape::fem::{self, Field, SparseSystem};
use mmshape::geom::Vec2;
use mmshape::mesh::{gen_cable_submesh, gen_ellipse_annulus, gen_rect_grid, marker, RigidPose};
use mmshape::multimesh::{
    assemble_adjoint, assemble_interface_penalty, assemble_overlap_stab, assemble_state,
    eval_functional, interpolate_on_stack, solve_adjoint, solve_state, stack_l2_error,
    BoundaryCondition, BoundaryValue, Functional, MultiMeshStack, NitscheParams, ProblemSpec,
    RegionTable, SourceTerm,
};
use std::sync::Arc;

fn patch_stack(nx: usize, angle: f64) -> MultiMeshStack {
    let bg = gen_rect_grid(0.0, 0.0, 1.0, 1.0, nx, nx).unwrap();
    let patch = gen_ellipse_annulus(
        Vec2::new(0.5, 0.5),
        0.18,
        0.10,
        0.33,
        (nx / 4).max(2),
        (nx * 3).max(24),
    )
    .unwrap();
    let pose = RigidPose {
        angle,
        center: Vec2::new(0.5, 0.5),
        translation: Vec2::ZERO,
    };
    MultiMeshStack::build(bg, vec![(patch, pose)]).unwrap()
}

fn example_spec() -> ProblemSpec {
    ProblemSpec {
        conductivity: RegionTable::uniform(1.0),
        source: SourceTerm::Function(Arc::new(|p: Vec2| p.x * p.x.sin() * p.y.cos())),
        reaction: 0.0,
        bcs: vec![
            (marker::GAMMA, BoundaryCondition::Dirichlet(BoundaryValue::Constant(1.0))),
            (
                marker::EXTERIOR,
                BoundaryCondition::Dirichlet(BoundaryValue::Constant(0.0)),
            ),
        ],
        functional: Functional::L2Squared,
    }
}

fn dirichlet_fn(f: impl Fn(Vec2) -> f64 + Send + Sync + 'static) -> BoundaryCondition {
    BoundaryCondition::Dirichlet(BoundaryValue::Function(Arc::new(f)))
}

#[test]
fn degenerate_stack_matches_single_mesh_fem() {
    let bg = gen_rect_grid(0.0, 0.0, 1.0, 1.0, 6, 6).unwrap();
    let stack = MultiMeshStack::build(bg.clone(), vec![]).unwrap();
    let spec = ProblemSpec {
        conductivity: RegionTable::uniform(1.0),
        source: SourceTerm::PerRegion(RegionTable::uniform(1.0)),
        reaction: 0.0,
        bcs: vec![(
            marker::EXTERIOR,
            BoundaryCondition::Dirichlet(BoundaryValue::Constant(0.0)),
        )],
        functional: Functional::L2Squared,
    };
    let sys = assemble_state(&stack, &spec, &NitscheParams::default()).unwrap();
    let (a_stack, b_stack) = sys.finalize();

    let mut reference = SparseSystem::new(bg.n_vertices());
    fem::assemble_laplace(&mut reference, &bg, 0, &|_| 1.0).unwrap();
    fem::assemble_source(&mut reference, &bg, 0, &|_, _| 1.0, 4);
    fem::apply_dirichlet(&mut reference, &bg, 0, marker::EXTERIOR, &|_| 0.0);
    let (a_ref, b_ref) = reference.finalize();

    let (da, db) = (a_stack.to_dense(), a_ref.to_dense());
    let scale = a_ref.max_abs();
    for (x, y) in da.iter().zip(&db) {
        assert!((x - y).abs() <= 1e-14 * scale);
    }
    for (x, y) in b_stack.iter().zip(&b_ref) {
        assert!((x - y).abs() <= 1e-14);
    }
}

#[test]
fn patch_stack_builds_and_partition_holds() {
    let stack = patch_stack(16, std::f64::consts::FRAC_PI_4);
    let report = stack.partition();
    assert!((report.total() - 1.0).abs() < 1e-10);
    assert!(report.hidden > 0.0 && report.covered > 0.0);
    let (uncut, cut, covered) = stack.classification.counts();
    assert!(uncut > 0 && cut > 0 && covered > 0);
}

#[test]
fn overlapping_submeshes_rejected() {
    let bg = gen_rect_grid(-1.0, -1.0, 1.0, 1.0, 16, 16).unwrap();
    let c1 = gen_cable_submesh(Vec2::new(-0.15, 0.0), 0.1, 0.13, 0.3, 16).unwrap();
    let c2 = gen_cable_submesh(Vec2::new(0.15, 0.0), 0.1, 0.13, 0.3, 16).unwrap();
    let id = RigidPose::identity(Vec2::ZERO);
    let result = MultiMeshStack::build(bg, vec![(c1, id), (c2, id)]);
    assert!(result.is_err());
}

#[test]
fn global_linear_is_reproduced() {
    let stack = patch_stack(12, 0.3);
    let exact = |p: Vec2| 0.3 + 0.5 * p.x + 0.25 * p.y;
    let spec = ProblemSpec {
        conductivity: RegionTable::uniform(1.0),
        source: SourceTerm::zero(),
        reaction: 0.0,
        bcs: vec![
            (marker::GAMMA, dirichlet_fn(exact)),
            (marker::EXTERIOR, dirichlet_fn(exact)),
        ],
        functional: Functional::L2Squared,
    };
    let t = solve_state(&stack, &spec, &NitscheParams::default(), Some(1e-12)).unwrap();
    let interp = interpolate_on_stack(&stack, &exact);
    let mut max_err = 0.0f64;
    for dof in 0..stack.dofmap.n_dofs() {
        if stack.dofmap.is_active(dof) {
            max_err = max_err.max((t[dof] - interp[dof]).abs());
        }
    }
    assert!(max_err <= 1e-8, "max nodal error {max_err}");
}

#[test]
fn interface_penalty_consistency() {
    let stack = patch_stack(8, 0.1);
    let spec = example_spec();
    let params = NitscheParams::default();
    let n = stack.dofmap.n_dofs();

    let build_ip = |beta0: f64| {
        let mut sys = SparseSystem::new(n);
        assemble_interface_penalty(
            &mut sys,
            &stack,
            &spec,
            &NitscheParams { beta0, beta1: 0.0 },
        );
        sys.finalize().0
    };

    let a_ip = build_ip(params.beta0);
    // constant field: zero jump and zero flux, action vanishes
    let ones = vec![1.0; n];
    let mut action = vec![0.0; n];
    a_ip.matvec(&ones, &mut action);
    assert!(action.iter().all(|v| v.abs() < 1e-12));

    // two global linears: every term carries a vanishing jump factor
    let u = interpolate_on_stack(&stack, &|p| 1.0 + 2.0 * p.x - p.y);
    let v = interpolate_on_stack(&stack, &|p| -0.5 + p.x + 3.0 * p.y);
    let mut au = vec![0.0; n];
    a_ip.matvec(u.as_slice(), &mut au);
    let pairing: f64 = au.iter().zip(v.as_slice()).map(|(x, y)| x * y).sum();
    assert!(pairing.abs() < 1e-10, "a_IP(linear, linear) = {pairing}");

    // doubling beta0 adds exactly one more pure-penalty matrix
    let d1 = build_ip(2.0 * params.beta0).to_dense();
    let d0 = build_ip(params.beta0).to_dense();
    let pen = build_ip(0.0).to_dense();
    let scale = a_ip.max_abs();
    for i in 0..d1.len() {
        let diff = d1[i] - d0[i];
        let pure_penalty = d0[i] - pen[i];
        assert!((diff - pure_penalty).abs() <= 1e-12 * scale);
    }
}

#[test]
fn overlap_stabilization_properties() {
    use rand::{Rng, SeedableRng};
    let stack = patch_stack(8, 0.7);
    let spec = example_spec();
    let n = stack.dofmap.n_dofs();

    // beta1 = 0: no contribution at all
    let mut sys = SparseSystem::new(n);
    assemble_overlap_stab(
        &mut sys,
        &stack,
        &spec,
        &NitscheParams { beta0: 4.0, beta1: 0.0 },
    );
    assert_eq!(sys.finalize().0.max_abs(), 0.0);

    let mut sys = SparseSystem::new(n);
    assemble_overlap_stab(&mut sys, &stack, &spec, &NitscheParams::default());
    let a_o = sys.finalize().0;

    // linear field: gradient jump vanishes
    let u = interpolate_on_stack(&stack, &|p| 2.0 * p.x - 0.7 * p.y + 0.1);
    let mut au = vec![0.0; n];
    a_o.matvec(u.as_slice(), &mut au);
    assert!(au.iter().all(|v| v.abs() < 1e-12));

    // positive semidefinite
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut ax = vec![0.0; n];
        a_o.matvec(&x, &mut ax);
        let quad: f64 = ax.iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!(quad >= -1e-12);
    }
}

#[test]
fn source_total_is_visible_area() {
    let stack = patch_stack(12, 0.5);
    let spec = ProblemSpec {
        conductivity: RegionTable::uniform(1.0),
        source: SourceTerm::PerRegion(RegionTable::uniform(1.0)),
        reaction: 0.0,
        bcs: example_spec().bcs,
        functional: Functional::L2Squared,
    };
    // assemble without constraints to read off the raw load vector
    let mut sys = SparseSystem::new(stack.dofmap.n_dofs());
    mmshape::multimesh::assemble_visible_volume(&mut sys, &stack, &spec).unwrap();
    let total: f64 = sys.rhs.iter().sum();
    let area = stack.visible_area();
    assert!(
        (total - area).abs() <= 1e-10 * area,
        "assembled source {total} vs visible area {area}"
    );
}

#[test]
fn functional_values() {
    let bg = gen_rect_grid(0.0, 0.0, 1.0, 1.0, 8, 8).unwrap();
    let stack = MultiMeshStack::build(bg, vec![]).unwrap();
    let spec = example_spec();

    let zero = Field::zeros(stack.dofmap.n_dofs());
    assert_eq!(eval_functional(&stack, &spec, &zero), 0.0);

    let ones = interpolate_on_stack(&stack, &|_| 1.0);
    let j = eval_functional(&stack, &spec, &ones);
    assert!((j - stack.visible_area()).abs() < 1e-12);

    // interpolant of x on the unit square: integral of x^2 is 1/3
    let x_field = interpolate_on_stack(&stack, &|p| p.x);
    let j = eval_functional(&stack, &spec, &x_field);
    assert!((j - 1.0 / 3.0).abs() < 1e-12);
}

#[test]
fn adjoint_of_zero_state_is_zero_and_operator_is_reused() {
    let stack = patch_stack(8, 0.4);
    let spec = example_spec();
    let params = NitscheParams::default();
    let zero = Field::zeros(stack.dofmap.n_dofs());
    let adj = solve_adjoint(&stack, &spec, &params, &zero, Some(1e-12)).unwrap();
    assert_eq!(adj.max_abs(), 0.0);

    let state = solve_state(&stack, &spec, &params, Some(1e-12)).unwrap();
    let (a_state, _) = assemble_state(&stack, &spec, &params).unwrap().finalize();
    let (a_adj, _) = assemble_adjoint(&stack, &spec, &params, &state)
        .unwrap()
        .finalize();
    let (ds, da) = (a_state.to_dense(), a_adj.to_dense());
    for (x, y) in ds.iter().zip(&da) {
        assert_eq!(x, y, "state and adjoint operators must match entrywise");
    }
}

#[test]
fn example_problem_bounds_and_adjoint_sign() {
    let stack = patch_stack(16, std::f64::consts::FRAC_PI_4);
    let spec = example_spec();
    let params = NitscheParams::default();
    let t = solve_state(&stack, &spec, &params, Some(1e-12)).unwrap();
    // f >= 0 on the unit square: min principle puts the minimum on the
    // boundary (g in {0, 1}), and the solution stays bounded
    let mut min_t = f64::INFINITY;
    let mut max_t = f64::NEG_INFINITY;
    for dof in 0..stack.dofmap.n_dofs() {
        if stack.dofmap.is_active(dof) {
            min_t = min_t.min(t[dof]);
            max_t = max_t.max(t[dof]);
        }
    }
    assert!(min_t >= -1e-8, "discrete minimum principle: {min_t}");
    assert!(max_t <= 1.5, "solution unexpectedly large: {max_t}");

    // adjoint rhs -2T <= 0 where T >= 0: adjoint is nonpositive up to slack
    let adj = solve_adjoint(&stack, &spec, &params, &t, Some(1e-12)).unwrap();
    for dof in 0..stack.dofmap.n_dofs() {
        if stack.dofmap.is_active(dof) {
            assert!(adj[dof] <= 1e-8, "adjoint positive: {}", adj[dof]);
        }
    }
}

#[test]
fn full_matrix_symmetry() {
    let stack = patch_stack(10, 0.9);
    let spec = example_spec();
    let (a, _) = assemble_state(&stack, &spec, &NitscheParams::default())
        .unwrap()
        .finalize();
    assert!(a.symmetry_defect() <= 1e-12 * a.max_abs());
}

/// Smallest Ritz value from 50 Lanczos steps with full
/// reorthogonalization; the tridiagonal eigenvalue comes from bisection on
/// Sturm sequence counts.
fn smallest_ritz(a: &mmshape::fem::CsrMatrix, steps: usize, seed: u64) -> f64 {
    use rand::{Rng, SeedableRng};
    let n = a.n();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut q: Vec<Vec<f64>> = Vec::new();
    let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let norm = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nv = norm(&v);
    v.iter_mut().for_each(|x| *x /= nv);
    let mut alphas = Vec::new();
    let mut betas = Vec::new();
    let mut w = vec![0.0; n];
    for _ in 0..steps.min(n) {
        a.matvec(&v, &mut w);
        let alpha: f64 = w.iter().zip(&v).map(|(a, b)| a * b).sum();
        alphas.push(alpha);
        for (wi, vi) in w.iter_mut().zip(&v) {
            *wi -= alpha * vi;
        }
        if let Some(prev) = q.last() {
            let beta_prev = *betas.last().unwrap();
            for (wi, pi) in w.iter_mut().zip(prev) {
                *wi -= beta_prev * pi;
            }
        }
        // full reorthogonalization
        for qi in &q {
            let proj: f64 = w.iter().zip(qi).map(|(a, b)| a * b).sum();
            for (wi, qv) in w.iter_mut().zip(qi) {
                *wi -= proj * qv;
            }
        }
        q.push(v.clone());
        let beta = norm(&w);
        if beta < 1e-13 {
            break;
        }
        betas.push(beta);
        v = w.iter().map(|x| x / beta).collect();
    }
    // Sturm count: number of eigenvalues of the tridiagonal below x
    let count_below = |x: f64| {
        let mut count = 0;
        let mut d = 1.0f64;
        for i in 0..alphas.len() {
            let beta_sq = if i == 0 { 0.0 } else { betas[i - 1] * betas[i - 1] };
            d = alphas[i] - x - beta_sq / d;
            if d < 0.0 {
                count += 1;
            }
            if d == 0.0 {
                d = 1e-300;
            }
        }
        count
    };
    let mut lo = -1.0;
    let mut hi = alphas
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max)
        .max(1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if count_below(mid) == 0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

#[test]
fn spd_at_default_penalties() {
    let stack = patch_stack(10, std::f64::consts::FRAC_PI_4);
    let spec = example_spec();
    let (a, _) = assemble_state(&stack, &spec, &NitscheParams::default())
        .unwrap()
        .finalize();
    let ritz = smallest_ritz(&a, 50, 11);
    assert!(ritz > 0.0, "smallest Ritz value {ritz}");
}

#[test]
fn manufactured_solution_converges_on_stack() {
    use std::f64::consts::PI;
    let exact = |p: Vec2| (PI * p.x).sin() * (PI * p.y).sin();
    let spec = ProblemSpec {
        conductivity: RegionTable::uniform(1.0),
        source: SourceTerm::Function(Arc::new(move |p: Vec2| {
            2.0 * PI * PI * (PI * p.x).sin() * (PI * p.y).sin()
        })),
        reaction: 0.0,
        bcs: vec![
            (marker::GAMMA, dirichlet_fn(exact)),
            (marker::EXTERIOR, dirichlet_fn(exact)),
        ],
        functional: Functional::L2Squared,
    };
    let mut errors = Vec::new();
    for nx in [8usize, 16, 32] {
        let stack = patch_stack(nx, 0.35);
        let t = solve_state(&stack, &spec, &NitscheParams::default(), Some(1e-12)).unwrap();
        errors.push(stack_l2_error(&stack, &t, &exact));
    }
    let rate = (errors[1] / errors[2]).log2();
    assert!(
        (rate - 2.0).abs() <= 0.2,
        "stack convergence rate {rate}, errors {errors:?}"
    );
}

#[test]
fn missing_bc_is_a_configuration_error() {
    let stack = patch_stack(8, 0.0);
    let mut spec = example_spec();
    spec.bcs.retain(|(m, _)| *m != marker::GAMMA);
    let err = assemble_state(&stack, &spec, &NitscheParams::default());
    assert!(matches!(
        err,
        Err(mmshape::multimesh::MultiMeshError::MissingBc(marker::GAMMA))
    ));
}
