use std::sync::Arc;

use rayon::prelude::*;

use super::grid::{Mat3, TorusGrid, Vec3};
use crate::error::DomainError;

/// Nodal scalar function on a periodic grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Arc<TorusGrid>,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Arc<TorusGrid>, values: Vec<f64>) -> Result<Self, DomainError> {
        if values.len() != grid.len() {
            return Err(DomainError::LengthMismatch { expected: grid.len(), got: values.len() });
        }
        if let Some(node) = values.iter().position(|v| !v.is_finite()) {
            return Err(DomainError::NonFinite { node });
        }
        Ok(Self { grid, values })
    }

    pub(crate) fn from_vec_unchecked(grid: Arc<TorusGrid>, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn constant(grid: Arc<TorusGrid>, c: f64) -> Self {
        let n = grid.len();
        Self { grid, values: vec![c; n] }
    }

    pub fn zeros(grid: Arc<TorusGrid>) -> Self {
        Self::constant(grid, 0.0)
    }

    /// Samples `f` at every node position.
    pub fn from_fn(grid: Arc<TorusGrid>, f: impl Fn(&Vec3) -> f64 + Sync) -> Self {
        let values = (0..grid.len()).into_par_iter().map(|i| f(&grid.position(i))).collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> &Arc<TorusGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn check_finite(&self) -> Result<(), DomainError> {
        match self.values.iter().position(|v| !v.is_finite()) {
            Some(node) => Err(DomainError::NonFinite { node }),
            None => Ok(()),
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn l2_norm_discrete(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64 + Sync) -> Self {
        Self { grid: self.grid.clone(), values: self.values.par_iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64 + Sync) -> Result<Self, DomainError> {
        self.require_same_grid(other)?;
        let values = self.values.par_iter().zip(other.values.par_iter()).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self { grid: self.grid.clone(), values })
    }

    pub fn require_same_grid(&self, other: &ScalarField) -> Result<(), DomainError> {
        if Arc::ptr_eq(&self.grid, &other.grid) || self.grid == other.grid {
            Ok(())
        } else {
            Err(DomainError::GridMismatch)
        }
    }

    /// Periodic multilinear interpolation at an arbitrary point.
    pub fn interpolate(&self, x: &Vec3) -> f64 {
        let g = &self.grid;
        let dim = g.dim();
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..dim {
            let n = g.resolution()[a];
            let s = x[a].rem_euclid(g.lengths()[a]) / g.spacing()[a];
            let i = s.floor();
            frac[a] = s - i;
            base[a] = (i as usize) % n;
        }
        let corners = 1usize << dim;
        let mut acc = 0.0;
        for c in 0..corners {
            let mut w = 1.0;
            let mut ijk = [0usize; 3];
            for a in 0..dim {
                let bit = (c >> a) & 1;
                let n = g.resolution()[a];
                ijk[a] = (base[a] + bit) % n;
                w *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
            }
            if w != 0.0 {
                acc += w * self.values[g.ravel(ijk)];
            }
        }
        acc
    }

    /// Resamples onto another grid of the same torus by multilinear interpolation.
    pub fn resample(&self, target: Arc<TorusGrid>) -> Result<Self, DomainError> {
        if target.dim() != self.grid.dim() || target.lengths() != self.grid.lengths() {
            return Err(DomainError::GridMismatch);
        }
        if *target == *self.grid {
            return Ok(Self { grid: target, values: self.values.clone() });
        }
        let values = (0..target.len()).into_par_iter().map(|i| self.interpolate(&target.position(i))).collect();
        Ok(Self { grid: target, values })
    }
}

/// Nodal vector field; components beyond the grid dimension are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    grid: Arc<TorusGrid>,
    values: Vec<Vec3>,
}

impl VectorField {
    pub fn new(grid: Arc<TorusGrid>, values: Vec<Vec3>) -> Result<Self, DomainError> {
        if values.len() != grid.len() {
            return Err(DomainError::LengthMismatch { expected: grid.len(), got: values.len() });
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: Arc<TorusGrid>, f: impl Fn(&Vec3) -> Vec3 + Sync) -> Self {
        let values = (0..grid.len()).into_par_iter().map(|i| f(&grid.position(i))).collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> &Arc<TorusGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[Vec3] {
        &self.values
    }

    pub fn component(&self, axis: usize) -> ScalarField {
        ScalarField::from_vec_unchecked(self.grid.clone(), self.values.iter().map(|v| v[axis]).collect())
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(super::grid::norm(v)))
    }
}

/// Nodal symmetric 2-tensor field.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorField {
    grid: Arc<TorusGrid>,
    values: Vec<Mat3>,
}

impl TensorField {
    pub fn new(grid: Arc<TorusGrid>, values: Vec<Mat3>) -> Result<Self, DomainError> {
        if values.len() != grid.len() {
            return Err(DomainError::LengthMismatch { expected: grid.len(), got: values.len() });
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &Arc<TorusGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[Mat3] {
        &self.values
    }

    pub fn trace(&self) -> ScalarField {
        let d = self.grid.dim();
        ScalarField::from_vec_unchecked(
            self.grid.clone(),
            self.values.iter().map(|m| (0..d).map(|a| m[a][a]).sum()).collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_nonfinite() {
        let g = Arc::new(TorusGrid::new(2, &[1.0, 1.0], &[8, 8]).unwrap());
        let mut v = vec![0.0; 64];
        v[5] = f64::NAN;
        assert!(matches!(ScalarField::new(g, v), Err(DomainError::NonFinite { node: 5 })));
    }

    #[test]
    fn interpolation_reproduces_bilinear() {
        let g = Arc::new(TorusGrid::new(2, &[1.0, 1.0], &[16, 16]).unwrap());
        let u = ScalarField::from_fn(g.clone(), |x| (2.0 * std::f64::consts::PI * x[0]).sin());
        for i in 0..g.len() {
            assert_eq!(u.interpolate(&g.position(i)), u.values()[i]);
        }
        let fine = Arc::new(TorusGrid::new(2, &[1.0, 1.0], &[32, 32]).unwrap());
        let v = u.resample(fine.clone()).unwrap();
        let idx = fine.ravel([1, 0, 0]);
        assert!((v.values()[idx] - 0.5 * u.values()[g.ravel([1, 0, 0])]).abs() < 1e-14);
    }
}
