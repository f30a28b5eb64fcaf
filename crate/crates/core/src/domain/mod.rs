//! Periodic grids, metrics, nodal fields, region masks and discrete operators.

mod field;
mod grid;
pub mod io;
mod mask;
mod metric;
mod ops;

pub use field::{ScalarField, TensorField, VectorField};
pub use grid::{dot, frob_sq, mat_mul, mat_vec, norm, tangent_projector, Mat3, TorusGrid, Vec3};
pub use mask::{RegionMask, RegionSpec};
pub use metric::{ConformalMode, Metric};
pub use ops::Domain;

use std::sync::Arc;

use crate::error::DomainError;

/// Builds a torus grid after validating dimension, lengths and resolution.
pub fn build_torus_grid(dim: usize, lengths: &[f64], resolution: &[usize]) -> Result<Arc<TorusGrid>, DomainError> {
    Ok(Arc::new(TorusGrid::new(dim, lengths, resolution)?))
}
