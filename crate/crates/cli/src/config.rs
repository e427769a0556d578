//! INI-style run configuration: `key = value` lines under the sections
//! [problem] [meshes] [nitsche] [deform] [optimizer] [output]. Unknown
//! keys, duplicate keys and malformed lines are hard errors with the
//! section and line number; missing keys fall back to the built-in
//! defaults.

use mmshape::geom::Vec2;
use std::fmt;
use std::path::{Path, PathBuf};

#[derive(Debug)]
pub struct ConfigError {
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error: {}", self.message)
    }
}

impl std::error::Error for ConfigError {}

fn err(msg: impl Into<String>) -> ConfigError {
    ConfigError {
        message: msg.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemKind {
    ExampleRotation,
    MultiCable,
    GeometricToy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemeKind {
    Rigid,
    H1,
    EikonalAdvect,
}

/// Full run configuration; defaults follow the reference experiments.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub problem: ProblemKind,
    // functional and coefficients
    pub q: f64,
    pub lambda_fill: f64,
    pub lambda_iso: f64,
    pub lambda_metal: f64,
    pub f_metal: f64,
    pub reaction_c: f64,
    pub t_ex: f64,
    // rotation-example geometry
    pub rect: (f64, f64, f64, f64),
    pub bg_nx: usize,
    pub bg_ny: usize,
    pub patch_center: Vec2,
    pub ellipse_a: f64,
    pub ellipse_b: f64,
    pub patch_r_out: f64,
    pub patch_n_r: usize,
    pub patch_n_t: usize,
    // multicable geometry
    pub cable_radius: f64,
    pub r_met: f64,
    pub insulation: f64,
    pub r_halo: f64,
    pub n_cables: usize,
    pub cable_resolution: usize,
    pub bg_resolution: usize,
    pub cable_positions: Option<Vec<Vec2>>,
    // geometric toy
    pub obstacle_r: f64,
    pub obstacle_center: Vec2,
    pub obstacle_patch_r_out: f64,
    pub target_obstacle_area: f64,
    pub target_centroid: Vec2,
    // convergence driver
    pub stack_mode: bool,
    // nitsche
    pub beta0: f64,
    pub beta1: f64,
    // deform
    pub scheme: SchemeKind,
    pub alpha: f64,
    pub alpha0: f64,
    pub alpha1: f64,
    // optimizer
    pub c1: f64,
    pub backtrack: f64,
    pub xi0: f64,
    pub max_backtracks: usize,
    pub max_iterations: usize,
    pub tol: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub stages: usize,
    pub gamma_growth: f64,
    // output
    pub out_dir: PathBuf,
    pub write_fields: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            problem: ProblemKind::ExampleRotation,
            q: 3.0,
            lambda_fill: 0.08,
            lambda_iso: 0.19,
            lambda_metal: 40.0,
            f_metal: 50.0,
            reaction_c: 0.04,
            t_ex: 3.2,
            rect: (0.0, 0.0, 2.0, 2.0),
            bg_nx: 32,
            bg_ny: 32,
            patch_center: Vec2::new(1.0, 1.2),
            ellipse_a: 0.35,
            ellipse_b: 0.14,
            patch_r_out: 0.55,
            patch_n_r: 4,
            patch_n_t: 96,
            cable_radius: 1.2,
            r_met: 0.2,
            insulation: 0.055,
            r_halo: 0.4,
            n_cables: 3,
            cable_resolution: 40,
            bg_resolution: 24,
            cable_positions: None,
            obstacle_r: 0.15,
            obstacle_center: Vec2::new(0.55, 0.52),
            obstacle_patch_r_out: 0.3,
            target_obstacle_area: 0.05,
            target_centroid: Vec2::new(0.5, 0.5),
            stack_mode: false,
            beta0: 4.0,
            beta1: 4.0,
            scheme: SchemeKind::Rigid,
            alpha: 1e-3,
            alpha0: 1e-3,
            alpha1: 25.0,
            c1: 1e-4,
            backtrack: 0.5,
            xi0: 1.0,
            max_backtracks: 30,
            max_iterations: 200,
            tol: 1e-6,
            gamma1: 1e5,
            gamma2: 1e3,
            stages: 5,
            gamma_growth: 2.0,
            out_dir: PathBuf::from("out"),
            write_fields: true,
        }
    }
}

impl RunConfig {
    pub fn r_iso(&self) -> f64 {
        self.r_met + self.insulation
    }

    /// Initial cable centers: configured positions, or a default ring at
    /// radius 0.5 with uneven angles (an asymmetric start).
    pub fn initial_cable_positions(&self) -> Vec<Vec2> {
        if let Some(p) = &self.cable_positions {
            return p.clone();
        }
        if self.n_cables == 1 {
            return vec![Vec2::new(0.03, 0.2)];
        }
        let radius = 0.5;
        (0..self.n_cables)
            .map(|k| {
                let theta = (90.0 + 360.0 * k as f64 / self.n_cables as f64
                    + 15.0 * ((k % 2) as f64))
                    .to_radians();
                Vec2::new(radius * theta.cos(), radius * theta.sin())
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.beta0 > 0.0) {
            return Err(err(format!("beta0 must be positive, got {}", self.beta0)));
        }
        if !(self.beta1 >= 0.0) {
            return Err(err(format!("beta1 must be nonnegative, got {}", self.beta1)));
        }
        if !(self.q > 1.0) {
            return Err(err(format!("q must exceed 1, got {}", self.q)));
        }
        if !(self.tol > 0.0) {
            return Err(err("optimizer tol must be positive"));
        }
        if !(self.c1 > 0.0 && self.c1 < 1.0) {
            return Err(err("c1 must lie in (0, 1)"));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return Err(err("backtrack factor must lie in (0, 1)"));
        }
        if !(self.r_met > 0.0 && self.insulation > 0.0 && self.r_halo > self.r_iso()) {
            return Err(err("cable radii must satisfy 0 < r_met < r_iso < r_halo"));
        }
        if !(self.lambda_fill > 0.0 && self.lambda_iso > 0.0 && self.lambda_metal > 0.0) {
            return Err(err("conductivities must be positive"));
        }
        if !(self.gamma_growth > 1.0) {
            return Err(err("gamma growth factor must exceed 1"));
        }
        if self.stages == 0 {
            return Err(err("need at least one penalty stage"));
        }
        Ok(())
    }
}

struct Entry {
    section: String,
    key: String,
    value: String,
    line: usize,
}

fn tokenize(text: &str) -> Result<Vec<Entry>, ConfigError> {
    let mut entries = Vec::new();
    let mut section = String::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') || trimmed.starts_with(';') {
            continue;
        }
        if let Some(name) = trimmed.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| err(format!("line {line}: unterminated section header")))?;
            section = name.trim().to_string();
            continue;
        }
        let Some((key, value)) = trimmed.split_once('=') else {
            return Err(err(format!(
                "[{section}] line {line}: expected `key = value`, found `{trimmed}`"
            )));
        };
        if section.is_empty() {
            return Err(err(format!("line {line}: key before any [section]")));
        }
        entries.push(Entry {
            section: section.clone(),
            key: key.trim().to_string(),
            value: value.trim().to_string(),
            line,
        });
    }
    Ok(entries)
}

fn parse_value<T: std::str::FromStr>(e: &Entry) -> Result<T, ConfigError> {
    e.value.parse().map_err(|_| {
        err(format!(
            "[{}] line {}: cannot parse `{}` for key `{}`",
            e.section, e.line, e.value, e.key
        ))
    })
}

fn parse_bool(e: &Entry) -> Result<bool, ConfigError> {
    match e.value.as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        other => Err(err(format!(
            "[{}] line {}: expected a boolean, found `{other}`",
            e.section, e.line
        ))),
    }
}

fn parse_positions(e: &Entry) -> Result<Vec<Vec2>, ConfigError> {
    let mut out = Vec::new();
    for part in e.value.split(';') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let coords: Vec<&str> = part.split(',').map(str::trim).collect();
        if coords.len() != 2 {
            return Err(err(format!(
                "[{}] line {}: expected `x,y` pairs separated by `;`",
                e.section, e.line
            )));
        }
        let x: f64 = coords[0]
            .parse()
            .map_err(|_| err(format!("[{}] line {}: bad coordinate", e.section, e.line)))?;
        let y: f64 = coords[1]
            .parse()
            .map_err(|_| err(format!("[{}] line {}: bad coordinate", e.section, e.line)))?;
        out.push(Vec2::new(x, y));
    }
    if out.is_empty() {
        return Err(err(format!(
            "[{}] line {}: empty position list",
            e.section, e.line
        )));
    }
    Ok(out)
}

pub fn parse_config_str(text: &str) -> Result<RunConfig, ConfigError> {
    let entries = tokenize(text)?;
    let mut seen: Vec<(String, String)> = Vec::new();
    let mut config = RunConfig::default();
    for e in &entries {
        let id = (e.section.clone(), e.key.clone());
        if seen.contains(&id) {
            return Err(err(format!(
                "[{}] line {}: conflicting duplicate key `{}`",
                e.section, e.line, e.key
            )));
        }
        seen.push(id);
        match (e.section.as_str(), e.key.as_str()) {
            ("problem", "name") => {
                config.problem = match e.value.as_str() {
                    "example_rotation" => ProblemKind::ExampleRotation,
                    "multicable" => ProblemKind::MultiCable,
                    "geometric_toy" => ProblemKind::GeometricToy,
                    other => {
                        return Err(err(format!(
                            "[problem] line {}: unknown problem `{other}`",
                            e.line
                        )))
                    }
                }
            }
            ("problem", "q") => config.q = parse_value(e)?,
            ("problem", "lambda_fill") => config.lambda_fill = parse_value(e)?,
            ("problem", "lambda_iso") => config.lambda_iso = parse_value(e)?,
            ("problem", "lambda_metal") => config.lambda_metal = parse_value(e)?,
            ("problem", "f_metal") => config.f_metal = parse_value(e)?,
            ("problem", "c") => config.reaction_c = parse_value(e)?,
            ("problem", "t_ex") => config.t_ex = parse_value(e)?,
            ("meshes", "bg_nx") => config.bg_nx = parse_value(e)?,
            ("meshes", "bg_ny") => config.bg_ny = parse_value(e)?,
            ("meshes", "rect_x0") => config.rect.0 = parse_value(e)?,
            ("meshes", "rect_y0") => config.rect.1 = parse_value(e)?,
            ("meshes", "rect_x1") => config.rect.2 = parse_value(e)?,
            ("meshes", "rect_y1") => config.rect.3 = parse_value(e)?,
            ("meshes", "patch_cx") => config.patch_center.x = parse_value(e)?,
            ("meshes", "patch_cy") => config.patch_center.y = parse_value(e)?,
            ("meshes", "ellipse_a") => config.ellipse_a = parse_value(e)?,
            ("meshes", "ellipse_b") => config.ellipse_b = parse_value(e)?,
            ("meshes", "patch_r_out") => config.patch_r_out = parse_value(e)?,
            ("meshes", "patch_n_r") => config.patch_n_r = parse_value(e)?,
            ("meshes", "patch_n_t") => config.patch_n_t = parse_value(e)?,
            ("meshes", "cable_radius") => config.cable_radius = parse_value(e)?,
            ("meshes", "r_met") => config.r_met = parse_value(e)?,
            ("meshes", "insulation") => config.insulation = parse_value(e)?,
            ("meshes", "r_halo") => config.r_halo = parse_value(e)?,
            ("meshes", "n_cables") => config.n_cables = parse_value(e)?,
            ("meshes", "cable_resolution") => config.cable_resolution = parse_value(e)?,
            ("meshes", "bg_resolution") => config.bg_resolution = parse_value(e)?,
            ("meshes", "cable_positions") => {
                config.cable_positions = Some(parse_positions(e)?)
            }
            ("meshes", "obstacle_r") => config.obstacle_r = parse_value(e)?,
            ("meshes", "obstacle_cx") => config.obstacle_center.x = parse_value(e)?,
            ("meshes", "obstacle_cy") => config.obstacle_center.y = parse_value(e)?,
            ("meshes", "obstacle_patch_r_out") => {
                config.obstacle_patch_r_out = parse_value(e)?
            }
            ("meshes", "target_obstacle_area") => {
                config.target_obstacle_area = parse_value(e)?
            }
            ("meshes", "target_cx") => config.target_centroid.x = parse_value(e)?,
            ("meshes", "target_cy") => config.target_centroid.y = parse_value(e)?,
            ("meshes", "stack") => config.stack_mode = parse_bool(e)?,
            ("nitsche", "beta0") => config.beta0 = parse_value(e)?,
            ("nitsche", "beta1") => config.beta1 = parse_value(e)?,
            ("deform", "scheme") => {
                config.scheme = match e.value.as_str() {
                    "rigid" => SchemeKind::Rigid,
                    "h1" => SchemeKind::H1,
                    "eikonal_advect" => SchemeKind::EikonalAdvect,
                    other => {
                        return Err(err(format!(
                            "[deform] line {}: unknown scheme `{other}`",
                            e.line
                        )))
                    }
                }
            }
            ("deform", "alpha") => config.alpha = parse_value(e)?,
            ("deform", "alpha0") => config.alpha0 = parse_value(e)?,
            ("deform", "alpha1") => config.alpha1 = parse_value(e)?,
            ("optimizer", "c1") => config.c1 = parse_value(e)?,
            ("optimizer", "backtrack") => config.backtrack = parse_value(e)?,
            ("optimizer", "xi0") => config.xi0 = parse_value(e)?,
            ("optimizer", "max_backtracks") => config.max_backtracks = parse_value(e)?,
            ("optimizer", "max_iterations") => config.max_iterations = parse_value(e)?,
            ("optimizer", "tol") => config.tol = parse_value(e)?,
            ("optimizer", "gamma1") => config.gamma1 = parse_value(e)?,
            ("optimizer", "gamma2") => config.gamma2 = parse_value(e)?,
            ("optimizer", "stages") => config.stages = parse_value(e)?,
            ("optimizer", "gamma_growth") => config.gamma_growth = parse_value(e)?,
            ("output", "dir") => config.out_dir = PathBuf::from(&e.value),
            ("output", "write_fields") => config.write_fields = parse_bool(e)?,
            (section, key) => {
                return Err(err(format!(
                    "[{section}] line {}: unknown key `{key}`",
                    e.line
                )))
            }
        }
    }
    config.validate()?;
    Ok(config)
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path.as_ref())
        .map_err(|e| err(format!("cannot read {}: {e}", path.as_ref().display())))?;
    parse_config_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_reference_values() {
        let config = parse_config_str("[nitsche]\n").unwrap();
        assert_eq!(config.beta0, 4.0);
        assert_eq!(config.beta1, 4.0);
        assert_eq!(config.alpha0, 1e-3);
        assert_eq!(config.alpha1, 25.0);
        assert_eq!(config.reaction_c, 0.04);
        assert_eq!(config.t_ex, 3.2);
        assert_eq!(config.q, 3.0);
        assert_eq!(config.lambda_fill, 0.08);
        assert_eq!(config.lambda_iso, 0.19);
        assert_eq!(config.lambda_metal, 40.0);
        assert_eq!(config.f_metal, 50.0);
        assert_eq!(config.cable_radius, 1.2);
        assert_eq!(config.r_met, 0.2);
        assert_eq!(config.insulation, 0.055);
        assert_eq!(config.tol, 1e-6);
    }

    #[test]
    fn q_is_honored() {
        let config = parse_config_str("[problem]\nq = 3\n").unwrap();
        assert_eq!(config.q, 3.0);
        let config = parse_config_str("[problem]\nq = 2.5\n").unwrap();
        assert_eq!(config.q, 2.5);
    }

    #[test]
    fn invalid_beta0_is_rejected() {
        let result = parse_config_str("[nitsche]\nbeta0 = -1\n");
        assert!(result.is_err());
    }

    #[test]
    fn unknown_and_duplicate_keys_error() {
        assert!(parse_config_str("[nitsche]\nbeta7 = 1\n").is_err());
        assert!(parse_config_str("[nitsche]\nbeta0 = 1\nbeta0 = 2\n").is_err());
        let msg = parse_config_str("[nitsche]\nbeta0 = 1\nbeta0 = 2\n")
            .unwrap_err()
            .to_string();
        assert!(msg.contains("line 3"), "{msg}");
    }

    #[test]
    fn positions_parse() {
        let config =
            parse_config_str("[meshes]\ncable_positions = 0.1,0.2; -0.3,0.4\n").unwrap();
        let p = config.cable_positions.unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p[1], Vec2::new(-0.3, 0.4));
    }
}
