//! Experiment drivers behind the CLI subcommands: solve, optimize,
//! taylor, sweep and convergence. Every driver writes its outputs under a
//! run directory and returns the list of emitted files plus a JSON
//! summary.

use crate::config::{ProblemKind, RunConfig};
use crate::problems::{build_experiment, rotation_stack_at, Experiment, ExperimentProblem};
use anyhow::{bail, Context, Result};
use mmshape::fem::{self, Field, SparseSystem};
use mmshape::geom::Vec2;
use mmshape::io::{write_csv, write_density_csv, write_vtk, CsvCell, VtkData};
use mmshape::mesh::{gen_rect_grid, marker, write_mesh};
use mmshape::multimesh::{
    interpolate_on_stack, solve_state, stack_l2_error, BoundaryCondition, BoundaryValue,
    Functional, MultiMeshStack, ProblemSpec, RegionTable, SourceTerm,
};
use mmshape::optim::{
    penalty_continuation, representer, slope_along, steepest_descent, DesignSnapshot, History,
    OptimizerOptions, ShapeProblem, Termination,
};
use mmshape::shape::{default_eps_list, taylor_test, TaylorReport};
use serde_json::json;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

/// Paths of everything a driver wrote, plus the machine-readable summary.
#[derive(Debug)]
pub struct RunArtifacts {
    pub files: Vec<PathBuf>,
    pub summary_path: PathBuf,
    pub summary: serde_json::Value,
}

fn optimizer_options(config: &RunConfig) -> OptimizerOptions {
    OptimizerOptions {
        c1: config.c1,
        backtrack: config.backtrack,
        xi0: config.xi0,
        max_backtracks: config.max_backtracks,
        max_iterations: config.max_iterations,
        tol: config.tol,
    }
}

fn out_dir(config: &RunConfig, flag: Option<&Path>) -> Result<PathBuf> {
    let dir = flag.map(Path::to_path_buf).unwrap_or_else(|| config.out_dir.clone());
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write_summary(
    dir: &Path,
    files: Vec<PathBuf>,
    summary: serde_json::Value,
) -> Result<RunArtifacts> {
    let summary_path = dir.join("summary.json");
    std::fs::write(&summary_path, serde_json::to_string_pretty(&summary)?)?;
    Ok(RunArtifacts {
        files,
        summary_path,
        summary,
    })
}

fn block_values(stack: &MultiMeshStack, field: &Field, mesh_idx: usize) -> Vec<f64> {
    stack.dofmap.block(mesh_idx).map(|d| field[d]).collect()
}

/// Writes one VTK snapshot per mesh of the stack.
fn write_stack_fields(
    stack: &MultiMeshStack,
    fields: &[(&str, &Field)],
    dir: &Path,
    prefix: &str,
    files: &mut Vec<PathBuf>,
) -> Result<()> {
    for k in 0..stack.n_meshes() {
        let blocks: Vec<(usize, Vec<f64>)> = fields
            .iter()
            .enumerate()
            .map(|(i, (_, f))| (i, block_values(stack, f, k)))
            .collect();
        let data: Vec<VtkData> = blocks
            .iter()
            .map(|(i, values)| VtkData::Scalars {
                name: fields[*i].0,
                values,
            })
            .collect();
        let path = dir.join(format!("{prefix}_mesh{k}.vtk"));
        write_vtk(stack.mesh(k), &data, &path)?;
        files.push(path);
    }
    Ok(())
}

fn termination_name(t: &Termination) -> String {
    match t {
        Termination::Converged { .. } => "converged".into(),
        Termination::StationaryStart => "stationary_start".into(),
        Termination::LinesearchFailure => "linesearch_failure".into(),
        Termination::MaxIterations => "max_iterations".into(),
        Termination::Error(e) => format!("error: {e}"),
    }
}

fn history_rows(history: &History, stage: Option<usize>) -> Vec<Vec<CsvCell>> {
    history
        .iterations
        .iter()
        .map(|rec| {
            let mut row: Vec<CsvCell> = Vec::new();
            if let Some(s) = stage {
                row.push(s.into());
            }
            row.push(rec.iteration.into());
            row.push(rec.j.into());
            row.push(rec.slope.into());
            row.push(rec.xi.into());
            row.push(rec.evals.into());
            row.push(rec.min_quality.into());
            for snap in &rec.design {
                match snap {
                    DesignSnapshot::Angle(a) => {
                        row.push(a.to_degrees().rem_euclid(360.0).into())
                    }
                    DesignSnapshot::Center(c) => {
                        row.push(c.x.into());
                        row.push(c.y.into());
                    }
                    DesignSnapshot::Obstacle { area, centroid } => {
                        row.push((*area).into());
                        row.push(centroid.x.into());
                        row.push(centroid.y.into());
                    }
                }
            }
            row
        })
        .collect()
}

fn history_header(config: &RunConfig, stage: bool) -> Vec<String> {
    let mut header: Vec<String> = Vec::new();
    if stage {
        header.push("stage".into());
    }
    for name in ["iteration", "j", "slope", "xi", "evals", "min_quality"] {
        header.push(name.into());
    }
    match config.problem {
        ProblemKind::ExampleRotation => header.push("angle_deg".into()),
        ProblemKind::MultiCable => {
            for k in 0..config.n_cables {
                header.push(format!("cable{k}_x"));
                header.push(format!("cable{k}_y"));
            }
        }
        ProblemKind::GeometricToy => {
            for name in ["obstacle_area", "centroid_x", "centroid_y"] {
                header.push(name.into());
            }
        }
    }
    header
}

fn design_summary(config: &RunConfig, history: &History) -> serde_json::Value {
    let last = history.iterations.last();
    match config.problem {
        ProblemKind::ExampleRotation => {
            let angle = last.and_then(|r| match r.design.first() {
                Some(DesignSnapshot::Angle(a)) => Some(a.to_degrees().rem_euclid(360.0)),
                _ => None,
            });
            json!({ "angle_deg": angle })
        }
        ProblemKind::MultiCable => {
            let centers: Vec<[f64; 2]> = last
                .map(|r| {
                    r.design
                        .iter()
                        .filter_map(|s| match s {
                            DesignSnapshot::Center(c) => Some([c.x, c.y]),
                            _ => None,
                        })
                        .collect()
                })
                .unwrap_or_default();
            let angles = triangle_angles(&centers);
            json!({ "centers": centers, "triangle_angles_deg": angles })
        }
        ProblemKind::GeometricToy => {
            let obstacle = last.and_then(|r| match r.design.first() {
                Some(DesignSnapshot::Obstacle { area, centroid }) => {
                    Some(json!({ "area": area, "centroid": [centroid.x, centroid.y] }))
                }
                _ => None,
            });
            json!({ "obstacle": obstacle })
        }
    }
}

/// Interior angles (degrees) of the triangle spanned by three centers.
pub fn triangle_angles(centers: &[[f64; 2]]) -> Option<Vec<f64>> {
    if centers.len() != 3 {
        return None;
    }
    let p: Vec<Vec2> = centers.iter().map(|c| Vec2::new(c[0], c[1])).collect();
    let mut angles = Vec::with_capacity(3);
    for i in 0..3 {
        let a = p[i];
        let u = p[(i + 1) % 3] - a;
        let v = p[(i + 2) % 3] - a;
        let cos = u.dot(v) / (u.norm() * v.norm());
        angles.push(cos.clamp(-1.0, 1.0).acos().to_degrees());
    }
    Some(angles)
}

/// Solves the state (and adjoint for PDE problems) at the initial design
/// and writes the fields.
pub fn cmd_solve(config: &RunConfig, out: Option<&Path>) -> Result<RunArtifacts> {
    let dir = out_dir(config, out)?;
    let start = Instant::now();
    let experiment = build_experiment(config, 0.0)?;
    let mut files = Vec::new();
    let summary = match &experiment.problem {
        ExperimentProblem::Pde(p) => {
            let state = solve_state(&experiment.stack, &p.spec, &p.params, Some(p.rel_tol))?;
            let j = mmshape::multimesh::eval_functional(&experiment.stack, &p.spec, &state);
            let adjoint = p
                .solve_adjoint_field(&experiment.stack, &state)
                .map_err(|e| anyhow::anyhow!(e.to_string()))?;
            if config.write_fields {
                write_stack_fields(
                    &experiment.stack,
                    &[("T", &state), ("adjoint", &adjoint)],
                    &dir,
                    "state",
                    &mut files,
                )?;
            }
            let report = experiment.stack.partition();
            json!({
                "problem": format!("{:?}", config.problem),
                "j": j,
                "n_dofs": experiment.stack.dofmap.n_dofs(),
                "partition": {
                    "visible": report.visible,
                    "hidden": report.hidden,
                    "covered": report.covered,
                },
                "wall_time_s": start.elapsed().as_secs_f64(),
            })
        }
        ExperimentProblem::Geometric { base, .. } => {
            let (report, facets) = mmshape::shape::geometric_functionals(
                &experiment.stack.submeshes[0].mesh,
                &base.targets,
            )?;
            let density = mmshape::shape::GradientDensity {
                mesh_index: 1,
                facets,
            };
            let path = dir.join("density.csv");
            write_density_csv(&density, &path)?;
            files.push(path);
            json!({
                "problem": format!("{:?}", config.problem),
                "j": report.total(),
                "fluid_area": report.fluid_area,
                "obstacle_area": report.obstacle_area,
                "centroid": [report.centroid.x, report.centroid.y],
                "wall_time_s": start.elapsed().as_secs_f64(),
            })
        }
    };
    write_summary(&dir, files, summary)
}

/// Runs the optimization loop (penalty continuation for the toy problem)
/// and writes the history, final meshes and final fields.
pub fn cmd_optimize(config: &RunConfig, out: Option<&Path>) -> Result<RunArtifacts> {
    let dir = out_dir(config, out)?;
    let start = Instant::now();
    let experiment = build_experiment(config, 0.0)?;
    let opts = optimizer_options(config);
    let mut files = Vec::new();
    let Experiment {
        stack,
        designs,
        problem,
        ..
    } = experiment;
    let (histories, final_stack, staged): (Vec<History>, MultiMeshStack, bool) = match &problem
    {
        ExperimentProblem::Pde(p) => {
            let (history, final_stack) = steepest_descent(p, stack, &designs, &opts);
            (vec![history], final_stack, false)
        }
        ExperimentProblem::Geometric { stages, .. } => {
            let stage_problems: Vec<crate::problems::GeometricProblem> = stages
                .iter()
                .map(|t| crate::problems::GeometricProblem { targets: *t })
                .collect();
            let refs: Vec<&dyn ShapeProblem> = stage_problems
                .iter()
                .map(|p| p as &dyn ShapeProblem)
                .collect();
            let (histories, final_stack) =
                penalty_continuation(&refs, stack, &designs, &opts);
            (histories, final_stack, true)
        }
    };
    // history CSV (stage column for continuation runs)
    let header_owned = history_header(config, staged);
    let header: Vec<&str> = header_owned.iter().map(String::as_str).collect();
    let mut rows = Vec::new();
    for (s, h) in histories.iter().enumerate() {
        rows.extend(history_rows(h, staged.then_some(s)));
    }
    let history_path = dir.join("history.csv");
    write_csv(&history_path, &header, &rows)?;
    files.push(history_path);
    // final geometry and fields
    for (k, entry) in final_stack.submeshes.iter().enumerate() {
        let path = dir.join(format!("final_submesh{k}.mmesh"));
        write_mesh(&entry.mesh, &path)?;
        files.push(path);
    }
    if let ExperimentProblem::Pde(p) = &problem {
        if config.write_fields {
            let state = solve_state(&final_stack, &p.spec, &p.params, Some(p.rel_tol))?;
            write_stack_fields(&final_stack, &[("T", &state)], &dir, "final", &mut files)?;
        }
    }
    let last = histories.last().context("no optimization stage ran")?;
    let initial_j = histories.first().and_then(History::initial_j);
    let final_j = last.final_j();
    let iterations: usize = histories.iter().map(|h| h.iterations.len() - 1).sum();
    let total_evals: usize = histories.iter().map(|h| h.total_evals).sum();
    let summary = json!({
        "problem": format!("{:?}", config.problem),
        "initial_j": initial_j,
        "final_j": final_j,
        "iterations": iterations,
        "functional_evaluations": total_evals,
        "termination": termination_name(&last.termination),
        "design": design_summary(config, last),
        "min_quality": last.iterations.last().map(|r| r.min_quality),
        "wall_time_s": start.elapsed().as_secs_f64(),
    });
    write_summary(&dir, files, summary)
}

/// Taylor-test driver: perturbs the current design along its steepest
/// descent direction and reports both residual orders.
pub fn cmd_taylor(config: &RunConfig, out: Option<&Path>, eps: Option<Vec<f64>>) -> Result<RunArtifacts> {
    let dir = out_dir(config, out)?;
    let start = Instant::now();
    let mut experiment = build_experiment(config, 0.0)?;
    experiment.set_rel_tol(1e-12);
    let eps_list = eps.unwrap_or_else(default_eps_list);
    let report = taylor_on_experiment(&experiment, &eps_list)
        .map_err(|e| anyhow::anyhow!(e.to_string()))?;
    let mut rows = Vec::new();
    for (k, entry) in report.entries.iter().enumerate() {
        let mut row: Vec<CsvCell> = vec![
            entry.eps.into(),
            entry.j.into(),
            entry.r0.into(),
            entry.r1.into(),
        ];
        if k == 0 {
            row.push("".into());
            row.push("".into());
        } else {
            row.push(report.r0_rates[k - 1].into());
            row.push(report.r1_rates[k - 1].into());
        }
        rows.push(row);
    }
    let path = dir.join("taylor.csv");
    write_csv(
        &path,
        &["eps", "j", "r0", "r1", "r0_rate", "r1_rate"],
        &rows,
    )?;
    let summary = json!({
        "problem": format!("{:?}", config.problem),
        "j0": report.j0,
        "slope": report.slope,
        "r0_rates": report.r0_rates,
        "r1_rates": report.r1_rates,
        "mean_r1_rate": report.mean_r1_rate(3),
        "error": report.error,
        "wall_time_s": start.elapsed().as_secs_f64(),
    });
    write_summary(&dir, vec![path], summary)
}

/// Taylor test of an experiment around its current design, along the
/// steepest-descent direction normalized to unit scale (so the epsilon
/// list probes O(eps) geometry changes rather than the representer's
/// natural magnitude). No projection is applied.
pub fn taylor_on_experiment(
    experiment: &Experiment,
    eps_list: &[f64],
) -> Result<TaylorReport, mmshape::optim::DynError> {
    use mmshape::deform::UpdateDirection;
    let problem = experiment.problem.as_shape_problem();
    let stack = &experiment.stack;
    let eval0 = problem.evaluate(stack)?;
    let densities = problem.densities(stack, &eval0, &experiment.designs)?;
    let mut directions = Vec::new();
    let mut scale: f64 = 0.0;
    for (design, density) in experiment.designs.iter().zip(&densities) {
        let dir = representer(stack, design, density)?;
        scale = scale.max(match &dir {
            UpdateDirection::Angular(rate) => rate.abs(),
            UpdateDirection::Shift(d) => d.norm(),
            UpdateDirection::Boundary(f) => f.max_norm(),
        });
        directions.push(dir);
    }
    if scale == 0.0 {
        return Err("the steepest-descent direction vanishes".into());
    }
    let mut slope = 0.0;
    for ((design, density), dir) in experiment
        .designs
        .iter()
        .zip(&densities)
        .zip(directions.iter_mut())
    {
        match dir {
            UpdateDirection::Angular(rate) => *rate /= scale,
            UpdateDirection::Shift(d) => *d = *d / scale,
            UpdateDirection::Boundary(f) => {
                for d in &mut f.displacements {
                    *d = *d / scale;
                }
            }
        }
        slope += slope_along(stack, design, density, dir);
    }
    let updates: Vec<_> = experiment
        .designs
        .iter()
        .zip(directions.iter())
        .collect();
    let eval_at = |eps: f64| -> Result<f64, String> {
        let moved = mmshape::deform::apply_design_updates(stack, &updates, eps)
            .map_err(|e| e.to_string())?;
        problem
            .evaluate(&moved)
            .map(|e| e.j)
            .map_err(|e| e.to_string())
    };
    Ok(taylor_test(eval_at, eval0.j, slope, eps_list))
}

/// Sweep of the rotation angle: J(theta) over a uniform grid.
pub fn cmd_sweep(
    config: &RunConfig,
    out: Option<&Path>,
    from_deg: f64,
    to_deg: f64,
    steps: usize,
) -> Result<RunArtifacts> {
    if config.problem != ProblemKind::ExampleRotation {
        bail!("the sweep driver applies to the example_rotation problem only");
    }
    if steps == 0 {
        bail!("sweep needs at least one sample");
    }
    let dir = out_dir(config, out)?;
    let start = Instant::now();
    let experiment = build_experiment(config, 0.0)?;
    let ExperimentProblem::Pde(problem) = &experiment.problem else {
        unreachable!("rotation experiment is PDE-driven");
    };
    let mut rows = Vec::new();
    let mut best = (f64::NAN, f64::INFINITY);
    for k in 0..steps {
        let theta_deg = from_deg + (to_deg - from_deg) * k as f64 / steps as f64;
        let stack = rotation_stack_at(config, theta_deg.to_radians())?;
        let state = solve_state(&stack, &problem.spec, &problem.params, Some(problem.rel_tol))?;
        let j = mmshape::multimesh::eval_functional(&stack, &problem.spec, &state);
        if j < best.1 {
            best = (theta_deg, j);
        }
        rows.push(vec![CsvCell::from(theta_deg), CsvCell::from(j)]);
    }
    let path = dir.join("sweep.csv");
    write_csv(&path, &["theta_deg", "j"], &rows)?;
    let summary = json!({
        "problem": format!("{:?}", config.problem),
        "samples": steps,
        "min_theta_deg": best.0,
        "min_j": best.1,
        "wall_time_s": start.elapsed().as_secs_f64(),
    });
    write_summary(&dir, vec![path], summary)
}

/// Manufactured-solution convergence study: sin-sin Poisson on either a
/// plain grid or the square+patch stack.
pub fn cmd_convergence(
    config: &RunConfig,
    out: Option<&Path>,
    levels: usize,
) -> Result<RunArtifacts> {
    if levels < 2 {
        bail!("convergence study needs at least two levels");
    }
    let dir = out_dir(config, out)?;
    let start = Instant::now();
    use std::f64::consts::PI;
    let exact = |p: Vec2| (PI * p.x).sin() * (PI * p.y).sin();
    let rhs = move |p: Vec2| 2.0 * PI * PI * (PI * p.x).sin() * (PI * p.y).sin();
    let mut rows = Vec::new();
    let mut errors: Vec<(f64, f64)> = Vec::new();
    for level in 0..levels {
        let n = 16usize << level;
        let (h, error) = if config.stack_mode {
            let background = gen_rect_grid(0.0, 0.0, 1.0, 1.0, n, n)?;
            let patch = mmshape::mesh::gen_annulus(
                Vec2::new(0.5, 0.5),
                0.15,
                0.35,
                2 << level,
                24 << level,
            )?;
            let pose = mmshape::mesh::RigidPose {
                angle: 0.35,
                center: Vec2::new(0.5, 0.5),
                translation: Vec2::ZERO,
            };
            let stack = MultiMeshStack::build(background, vec![(patch, pose)])?;
            let spec = ProblemSpec {
                conductivity: RegionTable::uniform(1.0),
                source: SourceTerm::Function(Arc::new(rhs)),
                reaction: 0.0,
                bcs: vec![
                    (
                        marker::GAMMA,
                        BoundaryCondition::Dirichlet(BoundaryValue::Function(Arc::new(exact))),
                    ),
                    (
                        marker::EXTERIOR,
                        BoundaryCondition::Dirichlet(BoundaryValue::Function(Arc::new(exact))),
                    ),
                ],
                functional: Functional::L2Squared,
            };
            let state = solve_state(
                &stack,
                &spec,
                &mmshape::multimesh::NitscheParams {
                    beta0: config.beta0,
                    beta1: config.beta1,
                },
                Some(1e-12),
            )?;
            let _ = interpolate_on_stack(&stack, &exact);
            (
                stack.background.h_max.max(stack.submeshes[0].mesh.h_max),
                stack_l2_error(&stack, &state, &exact),
            )
        } else {
            let mesh = gen_rect_grid(0.0, 0.0, 1.0, 1.0, n, n)?;
            let mut sys = SparseSystem::new(mesh.n_vertices());
            fem::assemble_laplace(&mut sys, &mesh, 0, &|_| 1.0)?;
            fem::assemble_source(&mut sys, &mesh, 0, &|p, _| rhs(p), 4);
            fem::apply_dirichlet(&mut sys, &mesh, 0, marker::EXTERIOR, &|_| 0.0);
            let state = sys.solve_spd(Some(1e-12))?;
            (mesh.h_max, fem::l2_error(&mesh, 0, &state, &exact, 4))
        };
        let rate = errors
            .last()
            .map(|(h_prev, e_prev)| (e_prev / error).ln() / (h_prev / h).ln());
        errors.push((h, error));
        let mut row: Vec<CsvCell> = vec![h.into(), error.into()];
        row.push(match rate {
            Some(r) => r.into(),
            None => "".into(),
        });
        rows.push(row);
    }
    let path = dir.join("convergence.csv");
    write_csv(&path, &["h", "l2_error", "rate"], &rows)?;
    let rates: Vec<f64> = errors
        .windows(2)
        .map(|w| (w[0].1 / w[1].1).ln() / (w[0].0 / w[1].0).ln())
        .collect();
    let summary = json!({
        "mode": if config.stack_mode { "stack" } else { "single_mesh" },
        "levels": levels,
        "errors": errors.iter().map(|(_, e)| *e).collect::<Vec<f64>>(),
        "rates": rates,
        "wall_time_s": start.elapsed().as_secs_f64(),
    });
    write_summary(&dir, vec![path], summary)
}
