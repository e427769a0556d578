use mmshape::optim::ShapeProblem;
use mmshape::shape::{directional_derivative, DesignVelocity};
use mmshape_cli::config::RunConfig;
use mmshape_cli::problems::build_rotation;

fn main() {
    for (bg, n_r, n_t) in [(32, 4, 96), (48, 8, 128), (64, 16, 192), (96, 24, 256)] {
        let mut config = RunConfig::default();
        config.bg_nx = bg;
        config.bg_ny = bg;
        config.patch_n_r = n_r;
        config.patch_n_t = n_t;
        let center = config.patch_center;
        let j_at = |angle: f64| -> f64 {
            let e = build_rotation(&config, angle).unwrap();
            e.problem.as_shape_problem().evaluate(&e.stack).unwrap().j
        };
        let eps = 1e-4;
        let fd = (j_at(eps) - j_at(-eps)) / (2.0 * eps);
        let e = build_rotation(&config, 0.0).unwrap();
        let problem = e.problem.as_shape_problem();
        let eval = problem.evaluate(&e.stack).unwrap();
        let densities = problem.densities(&e.stack, &eval, &e.designs).unwrap();
        let dd = directional_derivative(&densities[0], &DesignVelocity::Rotation { center });
        println!("bg {bg:2} n_r {n_r:2} n_t {n_t:3}: FD {fd:+.5e}  density {dd:+.5e}  rel.err {:+.3e}", (dd - fd).abs() / fd.abs());
    }
}
