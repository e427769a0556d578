//! Shape optimization on overlapping, non-matching triangle meshes.
//!
//! The computational domain is one background mesh plus freely movable
//! submesh patches, coupled with a symmetric interior-penalty (Nitsche)
//! method across the non-matching interfaces. Shape gradients come from
//! boundary (Hadamard) densities driven by state/adjoint solves, and
//! designs are improved by steepest descent with an Armijo line search.

pub mod cutgeom;
pub mod deform;
pub mod fem;
pub mod geom;
pub mod io;
pub mod mesh;
pub mod multimesh;
pub mod optim;
pub mod quadrature;
pub mod shape;

pub use geom::Vec2;
pub use mesh::{Mesh, RigidPose};
pub use multimesh::MultiMeshStack;
