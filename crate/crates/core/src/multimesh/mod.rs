//! The overlapping-mesh weak formulation: visible-volume terms, symmetric
//! interior-penalty interface coupling, overlap gradient-jump
//! stabilization, boundary conditions, and state/adjoint solves for the
//! scalar elliptic family
//!
//! ```text
//!   -div(lambda grad T) - c T = f    in the composed domain,
//! ```
//!
//! with Dirichlet and Robin boundary conditions per facet marker.

mod assembly;
mod stack;

pub use assembly::{
    assemble_adjoint, assemble_interface_penalty, assemble_overlap_stab, assemble_state,
    assemble_visible_volume, eval_functional, interpolate_on_stack, solve_adjoint, solve_state,
    stack_l2_error,
};
pub use stack::{build_cut_quadrature, CutCellRule, CutQuadrature, MultiMeshStack, SubmeshEntry};

use crate::cutgeom::CutError;
use crate::fem::{FemError, SolveError};
use crate::geom::Vec2;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MultiMeshError {
    #[error(transparent)]
    Cut(#[from] CutError),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Mesh(#[from] crate::mesh::MeshError),
    #[error("configuration error: no boundary condition for marker {0}")]
    MissingBc(i32),
    #[error("configuration error: {0}")]
    Config(String),
}

/// Nitsche penalty and overlap stabilization weights; the defaults follow
/// the method's standard choice beta0 = beta1 = 4.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NitscheParams {
    pub beta0: f64,
    pub beta1: f64,
}

impl Default for NitscheParams {
    fn default() -> Self {
        NitscheParams {
            beta0: 4.0,
            beta1: 4.0,
        }
    }
}

impl NitscheParams {
    pub fn validate(&self) -> Result<(), MultiMeshError> {
        if !(self.beta0 > 0.0) {
            return Err(MultiMeshError::Config(format!(
                "beta0 must be positive, got {}",
                self.beta0
            )));
        }
        if !(self.beta1 >= 0.0) {
            return Err(MultiMeshError::Config(format!(
                "beta1 must be nonnegative, got {}",
                self.beta1
            )));
        }
        Ok(())
    }
}

/// Piecewise-constant coefficient per cell region with a default value.
#[derive(Debug, Clone)]
pub struct RegionTable {
    pub default: f64,
    pub overrides: Vec<(i32, f64)>,
}

impl RegionTable {
    pub fn uniform(value: f64) -> Self {
        RegionTable {
            default: value,
            overrides: Vec::new(),
        }
    }

    pub fn with(mut self, region: i32, value: f64) -> Self {
        self.overrides.retain(|(r, _)| *r != region);
        self.overrides.push((region, value));
        self
    }

    pub fn get(&self, region: i32) -> f64 {
        self.overrides
            .iter()
            .find(|(r, _)| *r == region)
            .map_or(self.default, |(_, v)| *v)
    }
}

pub type SpatialFn = Arc<dyn Fn(Vec2) -> f64 + Send + Sync>;

/// Scalar data on a boundary marker: a constant or a function of position.
#[derive(Clone)]
pub enum BoundaryValue {
    Constant(f64),
    Function(SpatialFn),
}

impl BoundaryValue {
    pub fn eval(&self, p: Vec2) -> f64 {
        match self {
            BoundaryValue::Constant(v) => *v,
            BoundaryValue::Function(f) => f(p),
        }
    }
}

impl std::fmt::Debug for BoundaryValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BoundaryValue::Constant(v) => write!(f, "Constant({v})"),
            BoundaryValue::Function(_) => write!(f, "Function(..)"),
        }
    }
}

#[derive(Debug, Clone)]
pub enum BoundaryCondition {
    Dirichlet(BoundaryValue),
    Robin { t_ex: f64 },
}

/// Volume source: piecewise-constant per region or a spatial function.
#[derive(Clone)]
pub enum SourceTerm {
    PerRegion(RegionTable),
    Function(SpatialFn),
}

impl SourceTerm {
    pub fn eval(&self, p: Vec2, region: i32) -> f64 {
        match self {
            SourceTerm::PerRegion(t) => t.get(region),
            SourceTerm::Function(f) => f(p),
        }
    }

    pub fn zero() -> Self {
        SourceTerm::PerRegion(RegionTable::uniform(0.0))
    }
}

impl std::fmt::Debug for SourceTerm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SourceTerm::PerRegion(t) => write!(f, "PerRegion({t:?})"),
            SourceTerm::Function(_) => write!(f, "Function(..)"),
        }
    }
}

/// Objective integrand over the visible domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Functional {
    /// j(T) = T^2
    L2Squared,
    /// j(T) = |T|^q / q
    LqNorm { q: f64 },
}

impl Functional {
    pub fn value(&self, t: f64) -> f64 {
        match self {
            Functional::L2Squared => t * t,
            Functional::LqNorm { q } => t.abs().powf(*q) / q,
        }
    }

    /// dj/dT, the adjoint load density.
    pub fn derivative(&self, t: f64) -> f64 {
        match self {
            Functional::L2Squared => 2.0 * t,
            Functional::LqNorm { q } => t * t.abs().powf(q - 2.0),
        }
    }
}

/// Coefficients, boundary conditions and objective of one scalar problem.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub conductivity: RegionTable,
    pub source: SourceTerm,
    /// Reaction coefficient c in -div(lambda grad T) - c T = f.
    pub reaction: f64,
    pub bcs: Vec<(i32, BoundaryCondition)>,
    pub functional: Functional,
}

impl ProblemSpec {
    pub fn bc_for(&self, m: i32) -> Option<&BoundaryCondition> {
        self.bcs
            .iter()
            .find(|(marker, _)| *marker == m)
            .map(|(_, bc)| bc)
    }

    pub fn validate(&self, stack: &MultiMeshStack) -> Result<(), MultiMeshError> {
        if !(self.conductivity.default > 0.0)
            || self.conductivity.overrides.iter().any(|(_, v)| !(*v > 0.0))
        {
            return Err(MultiMeshError::Config(
                "conductivity must be positive in every region".into(),
            ));
        }
        // every non-interface marker present in the stack needs exactly one BC
        for m in stack.exterior_markers() {
            if self.bc_for(m).is_none() {
                return Err(MultiMeshError::MissingBc(m));
            }
        }
        let mut seen = Vec::new();
        for (m, _) in &self.bcs {
            if seen.contains(m) {
                return Err(MultiMeshError::Config(format!(
                    "marker {m} has more than one boundary condition"
                )));
            }
            seen.push(*m);
        }
        Ok(())
    }
}
