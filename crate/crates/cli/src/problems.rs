//! The built-in experiments: the rotating-obstacle Poisson example, the
//! multi-cable placement problem, and the PDE-free geometric toy. Each
//! builder turns a [`RunConfig`] into a stack, its design spaces and a
//! [`ShapeProblem`] for the optimizer.

use crate::config::{ProblemKind, RunConfig, SchemeKind};
use anyhow::{bail, Context, Result};
use mmshape::deform::{DeformScheme, DesignSpace, RadialBound};
use mmshape::geom::Vec2;
use mmshape::mesh::{
    gen_annulus, gen_cable_submesh, gen_disk, gen_ellipse_annulus, gen_rect_grid, marker, Mesh,
    RigidPose,
};
use mmshape::multimesh::{
    eval_functional, solve_adjoint, solve_state, BoundaryCondition, BoundaryValue, Functional,
    MultiMeshStack, NitscheParams, ProblemSpec, RegionTable, SourceTerm,
};
use mmshape::optim::{DynError, Evaluation, ShapeProblem};
use mmshape::shape::{
    density_dirichlet_example, density_multicable, geometric_functionals, GeometricTargets,
    GradientDensity,
};
use std::sync::Arc;

/// Which reduced-gradient formula feeds the densities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DensityKind {
    /// Dirichlet hole boundary of the rotation example.
    DirichletExample,
    /// Material interfaces of a cable submesh.
    MultiCable,
}

/// A scalar elliptic problem driven through the multimesh solvers.
pub struct PdeProblem {
    pub spec: ProblemSpec,
    pub params: NitscheParams,
    pub density_kind: DensityKind,
    pub rel_tol: f64,
}

impl PdeProblem {
    pub fn solve_adjoint_field(
        &self,
        stack: &MultiMeshStack,
        state: &mmshape::fem::Field,
    ) -> Result<mmshape::fem::Field, DynError> {
        Ok(solve_adjoint(
            stack,
            &self.spec,
            &self.params,
            state,
            Some(self.rel_tol),
        )?)
    }
}

impl ShapeProblem for PdeProblem {
    fn evaluate(&self, stack: &MultiMeshStack) -> Result<Evaluation, DynError> {
        let state = solve_state(stack, &self.spec, &self.params, Some(self.rel_tol))?;
        let j = eval_functional(stack, &self.spec, &state);
        Ok(Evaluation {
            j,
            state: Some(state),
        })
    }

    fn densities(
        &self,
        stack: &MultiMeshStack,
        eval: &Evaluation,
        designs: &[DesignSpace],
    ) -> Result<Vec<GradientDensity>, DynError> {
        let state = eval
            .state
            .as_ref()
            .ok_or("evaluation carries no state field")?;
        let adjoint = self.solve_adjoint_field(stack, state)?;
        let mut out = Vec::with_capacity(designs.len());
        for design in designs {
            let s = design.submesh();
            let density = match self.density_kind {
                DensityKind::DirichletExample => {
                    density_dirichlet_example(stack, &self.spec, state, &adjoint, s)?
                }
                DensityKind::MultiCable => {
                    density_multicable(stack, &self.spec, state, &adjoint, s)?
                }
            };
            out.push(density);
        }
        Ok(out)
    }
}

/// The PDE-free area/centroid penalty problem on one obstacle loop.
pub struct GeometricProblem {
    pub targets: GeometricTargets,
}

impl ShapeProblem for GeometricProblem {
    fn evaluate(&self, stack: &MultiMeshStack) -> Result<Evaluation, DynError> {
        let (report, _) = geometric_functionals(&stack.submeshes[0].mesh, &self.targets)?;
        Ok(Evaluation {
            j: report.total(),
            state: None,
        })
    }

    fn densities(
        &self,
        stack: &MultiMeshStack,
        _eval: &Evaluation,
        designs: &[DesignSpace],
    ) -> Result<Vec<GradientDensity>, DynError> {
        if designs.len() != 1 {
            return Err("the geometric toy drives exactly one design".into());
        }
        let (_, facets) = geometric_functionals(&stack.submeshes[0].mesh, &self.targets)?;
        Ok(vec![GradientDensity {
            mesh_index: 1,
            facets,
        }])
    }
}

/// A built experiment, ready for the drivers.
pub struct Experiment {
    pub stack: MultiMeshStack,
    pub designs: Vec<DesignSpace>,
    pub problem: ExperimentProblem,
    pub params: NitscheParams,
}

pub enum ExperimentProblem {
    Pde(PdeProblem),
    Geometric {
        base: GeometricProblem,
        /// Penalty schedule for the continuation driver.
        stages: Vec<GeometricTargets>,
    },
}

impl ExperimentProblem {
    pub fn as_shape_problem(&self) -> &dyn ShapeProblem {
        match self {
            ExperimentProblem::Pde(p) => p,
            ExperimentProblem::Geometric { base, .. } => base,
        }
    }
}

impl Experiment {
    /// Tightens the linear-solver tolerance; Taylor tests need the
    /// functional noise floor well below the residuals they measure.
    pub fn set_rel_tol(&mut self, rel_tol: f64) {
        if let ExperimentProblem::Pde(p) = &mut self.problem {
            p.rel_tol = rel_tol;
        }
    }
}

fn nitsche(config: &RunConfig) -> NitscheParams {
    NitscheParams {
        beta0: config.beta0,
        beta1: config.beta1,
    }
}

/// Background rectangle plus a rotatable elliptic-hole patch; Dirichlet 1
/// on the hole boundary, 0 outside, J = ∫ T^2.
pub fn build_rotation(config: &RunConfig, angle: f64) -> Result<Experiment> {
    let (x0, y0, x1, y1) = config.rect;
    let background = gen_rect_grid(x0, y0, x1, y1, config.bg_nx, config.bg_ny)?;
    let patch = gen_ellipse_annulus(
        config.patch_center,
        config.ellipse_a,
        config.ellipse_b,
        config.patch_r_out,
        config.patch_n_r,
        config.patch_n_t,
    )?;
    let pose = RigidPose {
        angle,
        center: config.patch_center,
        translation: Vec2::ZERO,
    };
    let stack = MultiMeshStack::build(background, vec![(patch, pose)])
        .context("building the rotation-example stack")?;
    let spec = ProblemSpec {
        conductivity: RegionTable::uniform(1.0),
        source: SourceTerm::Function(Arc::new(|p: Vec2| p.x * p.x.sin() * p.y.cos())),
        reaction: 0.0,
        bcs: vec![
            (
                marker::GAMMA,
                BoundaryCondition::Dirichlet(BoundaryValue::Constant(1.0)),
            ),
            (
                marker::EXTERIOR,
                BoundaryCondition::Dirichlet(BoundaryValue::Constant(0.0)),
            ),
        ],
        functional: Functional::L2Squared,
    };
    Ok(Experiment {
        stack,
        designs: vec![DesignSpace::Rotation {
            submesh: 0,
            center: config.patch_center,
        }],
        problem: ExperimentProblem::Pde(PdeProblem {
            spec,
            params: nitsche(config),
            density_kind: DensityKind::DirichletExample,
            rel_tol: 1e-10,
        }),
        params: nitsche(config),
    })
}

/// Disk of filling material with N translatable cable submeshes; Robin at
/// the exterior, J = ∫ |T|^q / q.
pub fn build_multicable(config: &RunConfig) -> Result<Experiment> {
    let background = gen_disk(Vec2::ZERO, config.cable_radius, config.bg_resolution)?;
    let positions = config.initial_cable_positions();
    if positions.len() != config.n_cables {
        bail!(
            "{} cable positions configured for {} cables",
            positions.len(),
            config.n_cables
        );
    }
    let r_max = config.cable_radius - config.r_halo;
    let mut submeshes = Vec::new();
    let mut designs = Vec::new();
    for (k, &center) in positions.iter().enumerate() {
        if center.norm() > r_max {
            bail!("cable {k} starts outside the admissible disk (|c| > {r_max})");
        }
        let cable = gen_cable_submesh(
            center,
            config.r_met,
            config.r_iso(),
            config.r_halo,
            config.cable_resolution,
        )?;
        submeshes.push((cable, RigidPose::identity(center)));
        designs.push(DesignSpace::Translation {
            submesh: k,
            base_center: center,
            bound: Some(RadialBound {
                origin: Vec2::ZERO,
                r_max,
            }),
        });
    }
    let stack = MultiMeshStack::build(background, submeshes)
        .context("building the multicable stack")?;
    let spec = ProblemSpec {
        conductivity: RegionTable::uniform(config.lambda_fill)
            .with(mmshape::mesh::region::INSULATION, config.lambda_iso)
            .with(mmshape::mesh::region::METAL, config.lambda_metal),
        source: SourceTerm::PerRegion(
            RegionTable::uniform(0.0).with(mmshape::mesh::region::METAL, config.f_metal),
        ),
        reaction: config.reaction_c,
        bcs: vec![(
            marker::EXTERIOR,
            BoundaryCondition::Robin { t_ex: config.t_ex },
        )],
        functional: Functional::LqNorm { q: config.q },
    };
    Ok(Experiment {
        stack,
        designs,
        problem: ExperimentProblem::Pde(PdeProblem {
            spec,
            params: nitsche(config),
            density_kind: DensityKind::MultiCable,
            rel_tol: 1e-10,
        }),
        params: nitsche(config),
    })
}

/// Unit square with one circular obstacle patch; quadratic area/centroid
/// penalties, no PDE, boundary-node deformation.
pub fn build_toy(config: &RunConfig) -> Result<Experiment> {
    let background = gen_rect_grid(0.0, 0.0, 1.0, 1.0, config.bg_nx, config.bg_ny)?;
    let patch = gen_annulus(
        config.obstacle_center,
        config.obstacle_r,
        config.obstacle_patch_r_out,
        config.patch_n_r.max(2),
        (config.patch_n_t / 2).max(32),
    )?;
    let pose = RigidPose::identity(config.obstacle_center);
    let stack = MultiMeshStack::build(background, vec![(patch, pose)])
        .context("building the geometric-toy stack")?;
    let scheme = match config.scheme {
        SchemeKind::H1 => DeformScheme::H1 {
            alpha: config.alpha,
        },
        // the toy moves boundary nodes; default to the advection scheme
        SchemeKind::Rigid | SchemeKind::EikonalAdvect => DeformScheme::EikonalAdvect {
            alpha0: config.alpha0,
            alpha1: config.alpha1,
        },
    };
    let mut stages = Vec::with_capacity(config.stages);
    for k in 0..config.stages {
        let growth = config.gamma_growth.powi(k as i32);
        stages.push(GeometricTargets {
            gamma1: config.gamma1 * growth,
            gamma2: config.gamma2 * growth,
            target_fluid_area: 1.0 - config.target_obstacle_area,
            target_centroid: config.target_centroid,
            domain_area: 1.0,
        });
    }
    Ok(Experiment {
        stack,
        designs: vec![DesignSpace::BoundaryNodes { submesh: 0, scheme }],
        problem: ExperimentProblem::Geometric {
            base: GeometricProblem {
                targets: stages[0],
            },
            stages,
        },
        params: nitsche(config),
    })
}

/// Builds the experiment named in the config; the rotation example starts
/// at the given angle (radians).
pub fn build_experiment(config: &RunConfig, angle: f64) -> Result<Experiment> {
    match config.problem {
        ProblemKind::ExampleRotation => build_rotation(config, angle),
        ProblemKind::MultiCable => build_multicable(config),
        ProblemKind::GeometricToy => build_toy(config),
    }
}

/// Rebuild helper for sweep/Taylor drivers: same experiment at another
/// rotation angle.
pub fn rotation_stack_at(config: &RunConfig, angle: f64) -> Result<MultiMeshStack> {
    Ok(build_rotation(config, angle)?.stack)
}

/// A mesh suitable for eikonal tests: strip with Gamma on the left edge.
pub fn strip_mesh(nx: usize, ny: usize, len: f64, width: f64) -> Result<Mesh> {
    Ok(gen_rect_grid(0.0, 0.0, len, width, nx, ny)?
        .map_facet_markers(|mid, m| if mid.x < 1e-12 { marker::GAMMA } else { m }))
}
