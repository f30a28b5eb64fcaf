use serde::{Deserialize, Serialize};

use crate::error::DomainError;

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];

/// Uniform periodic grid on a flat torus of dimension 2 or 3.
///
/// Nodes sit at `x_a = i_a * h_a`. Indexing is row-major with the last axis
/// fastest. Unused trailing axes (dim 2) have length 1 and a single node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TorusGrid {
    dim: usize,
    lengths: [f64; 3],
    resolution: [usize; 3],
    spacing: [f64; 3],
    strides: [usize; 3],
}

impl TorusGrid {
    pub const MIN_RESOLUTION: usize = 8;

    pub fn new(dim: usize, lengths: &[f64], resolution: &[usize]) -> Result<Self, DomainError> {
        if !(2..=3).contains(&dim) {
            return Err(DomainError::InvalidDimension(dim));
        }
        if lengths.len() != dim {
            return Err(DomainError::AxisCount { expected: dim, got: lengths.len() });
        }
        if resolution.len() != dim {
            return Err(DomainError::AxisCount { expected: dim, got: resolution.len() });
        }
        let mut l = [1.0; 3];
        let mut n = [1usize; 3];
        for a in 0..dim {
            if !(lengths[a] > 0.0) || !lengths[a].is_finite() {
                return Err(DomainError::InvalidLength { axis: a, value: lengths[a] });
            }
            if resolution[a] < Self::MIN_RESOLUTION {
                return Err(DomainError::ResolutionTooSmall {
                    axis: a,
                    value: resolution[a],
                    min: Self::MIN_RESOLUTION,
                });
            }
            l[a] = lengths[a];
            n[a] = resolution[a];
        }
        let spacing = [l[0] / n[0] as f64, l[1] / n[1] as f64, l[2] / n[2] as f64];
        let strides = [n[1] * n[2], n[2], 1];
        Ok(Self { dim, lengths: l, resolution: n, spacing, strides })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths[..self.dim]
    }

    pub fn resolution(&self) -> &[usize] {
        &self.resolution[..self.dim]
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing[..self.dim]
    }

    pub fn len(&self) -> usize {
        self.resolution[0] * self.resolution[1] * self.resolution[2]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Product of the spacings (coordinate cell volume).
    pub fn cell_volume(&self) -> f64 {
        self.spacing().iter().product()
    }

    pub fn total_volume(&self) -> f64 {
        self.lengths().iter().product()
    }

    pub fn min_spacing(&self) -> f64 {
        self.spacing().iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max_spacing(&self) -> f64 {
        self.spacing().iter().cloned().fold(0.0, f64::max)
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.strides[axis]
    }

    pub fn unravel(&self, idx: usize) -> [usize; 3] {
        let i0 = idx / self.strides[0];
        let r = idx % self.strides[0];
        [i0, r / self.strides[1], r % self.strides[1]]
    }

    pub fn ravel(&self, ijk: [usize; 3]) -> usize {
        ijk[0] * self.strides[0] + ijk[1] * self.strides[1] + ijk[2]
    }

    /// Integer coordinate of `idx` along `axis`.
    #[inline]
    pub fn coord(&self, idx: usize, axis: usize) -> usize {
        (idx / self.strides[axis]) % self.resolution[axis]
    }

    /// Periodic neighbour of `idx` displaced by `delta` nodes along `axis`.
    #[inline]
    pub fn shift(&self, idx: usize, axis: usize, delta: isize) -> usize {
        let n = self.resolution[axis] as isize;
        let i = self.coord(idx, axis) as isize;
        let j = (i + delta).rem_euclid(n);
        (idx as isize + (j - i) * self.strides[axis] as isize) as usize
    }

    pub fn position(&self, idx: usize) -> Vec3 {
        let ijk = self.unravel(idx);
        let mut x = [0.0; 3];
        for a in 0..self.dim {
            x[a] = ijk[a] as f64 * self.spacing[a];
        }
        x
    }

    /// Minimum-image displacement `b - a`.
    pub fn periodic_delta(&self, a: &Vec3, b: &Vec3) -> Vec3 {
        let mut d = [0.0; 3];
        for ax in 0..self.dim {
            let l = self.lengths[ax];
            let mut v = b[ax] - a[ax];
            v -= l * (v / l).round();
            d[ax] = v;
        }
        d
    }

    pub fn periodic_distance(&self, a: &Vec3, b: &Vec3) -> f64 {
        norm(&self.periodic_delta(a, b))
    }

    /// Wraps a point into the fundamental cell `[0, L_a)`.
    pub fn wrap(&self, x: &Vec3) -> Vec3 {
        let mut y = [0.0; 3];
        for a in 0..self.dim {
            y[a] = x[a].rem_euclid(self.lengths[a]);
        }
        y
    }

    /// Largest minimum-image distance between two points.
    pub fn diameter(&self) -> f64 {
        self.lengths().iter().map(|l| (l / 2.0) * (l / 2.0)).sum::<f64>().sqrt()
    }

    pub fn same_shape(&self, other: &TorusGrid) -> bool {
        self == other
    }
}

pub fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn norm(a: &Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub fn frob_sq(m: &Mat3) -> f64 {
    m.iter().flat_map(|r| r.iter()).map(|v| v * v).sum()
}

pub fn mat_vec(m: &Mat3, v: &Vec3) -> Vec3 {
    [dot(&m[0], v), dot(&m[1], v), dot(&m[2], v)]
}

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    c
}

/// Tangential projector `I - nu nu^T` restricted to the first `dim` axes.
pub fn tangent_projector(nu: &Vec3, dim: usize) -> Mat3 {
    let mut s = [[0.0; 3]; 3];
    for i in 0..dim {
        for j in 0..dim {
            s[i][j] = if i == j { 1.0 } else { 0.0 } - nu[i] * nu[j];
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builds_and_rejects() {
        let g = TorusGrid::new(2, &[1.0, 1.0], &[64, 64]).unwrap();
        assert_eq!(g.len(), 4096);
        assert_eq!(g.spacing()[0], 1.0 / 64.0);
        let g3 = TorusGrid::new(3, &[1.0, 1.0, 1.0], &[32, 32, 32]).unwrap();
        assert_eq!(g3.len(), 32768);
        assert!(matches!(
            TorusGrid::new(2, &[1.0, 1.0], &[4, 4]),
            Err(DomainError::ResolutionTooSmall { .. })
        ));
        assert!(TorusGrid::new(4, &[1.0; 4], &[8; 4]).is_err());
        assert!(TorusGrid::new(2, &[0.0, 1.0], &[8, 8]).is_err());
        assert!(TorusGrid::new(2, &[-1.0, 1.0], &[8, 8]).is_err());
    }

    #[test]
    fn shift_wraps() {
        let g = TorusGrid::new(3, &[1.0, 2.0, 3.0], &[8, 10, 12]).unwrap();
        let idx = g.ravel([7, 0, 11]);
        assert_eq!(g.unravel(g.shift(idx, 0, 1)), [0, 0, 11]);
        assert_eq!(g.unravel(g.shift(idx, 1, -1)), [7, 9, 11]);
        assert_eq!(g.unravel(g.shift(idx, 2, 1)), [7, 0, 0]);
        for i in 0..g.len() {
            assert_eq!(g.ravel(g.unravel(i)), i);
        }
    }

    #[test]
    fn minimum_image() {
        let g = TorusGrid::new(2, &[1.0, 1.0], &[8, 8]).unwrap();
        let d = g.periodic_delta(&[0.9, 0.1, 0.0], &[0.1, 0.9, 0.0]);
        assert!((d[0] - 0.2).abs() < 1e-12 && (d[1] + 0.2).abs() < 1e-12);
    }
}
