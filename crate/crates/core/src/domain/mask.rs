use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::grid::{TorusGrid, Vec3};
use crate::error::DomainError;

/// Boolean node selection used to realise Dirichlet subregions.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionMask {
    grid: Arc<TorusGrid>,
    inside: Vec<bool>,
    label: String,
}

/// Declarative region description used by configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegionSpec {
    Full,
    /// Periodic slab `lo <= x_axis <= hi`.
    Band { axis: usize, lo: f64, hi: f64 },
    /// Periodic box, one interval per axis.
    Box { lo: Vec<f64>, hi: Vec<f64> },
    /// Periodic metric ball.
    Ball { center: Vec<f64>, radius: f64 },
}

fn in_interval(x: f64, lo: f64, hi: f64, period: f64) -> bool {
    let width = hi - lo;
    if width >= period {
        return true;
    }
    let t = (x - lo).rem_euclid(period);
    t <= width + 1e-12 * period || t >= period - 1e-12 * period
}

impl RegionSpec {
    /// Membership of an arbitrary point.
    pub fn contains_point(&self, grid: &TorusGrid, x: &Vec3) -> bool {
        let l = grid.lengths();
        match self {
            RegionSpec::Full => true,
            RegionSpec::Band { axis, lo, hi } => in_interval(x[*axis], *lo, *hi, l[*axis]),
            RegionSpec::Box { lo, hi } => (0..grid.dim()).all(|a| in_interval(x[a], lo[a], hi[a], l[a])),
            RegionSpec::Ball { center, radius } => {
                let mut c = [0.0; 3];
                c[..center.len()].copy_from_slice(center);
                grid.periodic_distance(x, &c) < *radius
            }
        }
    }
}

impl RegionMask {
    pub fn new(grid: Arc<TorusGrid>, inside: Vec<bool>, label: impl Into<String>) -> Result<Self, DomainError> {
        if inside.len() != grid.len() {
            return Err(DomainError::LengthMismatch { expected: grid.len(), got: inside.len() });
        }
        Ok(Self { grid, inside, label: label.into() })
    }

    pub fn full(grid: Arc<TorusGrid>) -> Self {
        let n = grid.len();
        Self { grid, inside: vec![true; n], label: "full".into() }
    }

    pub fn from_fn(grid: Arc<TorusGrid>, label: impl Into<String>, f: impl Fn(&Vec3) -> bool) -> Self {
        let inside = (0..grid.len()).map(|i| f(&grid.position(i))).collect();
        Self { grid, inside, label: label.into() }
    }

    pub fn ball(grid: Arc<TorusGrid>, center: &Vec3, radius: f64) -> Self {
        let g = grid.clone();
        Self::from_fn(grid, format!("ball({:.4},{:.4},{:.4};{:.4})", center[0], center[1], center[2], radius), |x| {
            g.periodic_distance(x, center) < radius
        })
    }

    pub fn band(grid: Arc<TorusGrid>, axis: usize, lo: f64, hi: f64) -> Self {
        let period = grid.lengths()[axis];
        Self::from_fn(grid, format!("band{axis}[{lo},{hi}]"), |x| in_interval(x[axis], lo, hi, period))
    }

    pub fn periodic_box(grid: Arc<TorusGrid>, lo: &[f64], hi: &[f64]) -> Self {
        let d = grid.dim();
        let lengths = grid.lengths().to_vec();
        Self::from_fn(grid, "box", |x| (0..d).all(|a| in_interval(x[a], lo[a], hi[a], lengths[a])))
    }

    pub fn from_spec(grid: Arc<TorusGrid>, spec: &RegionSpec, label: &str) -> Result<Self, DomainError> {
        let d = grid.dim();
        let mut m = match spec {
            RegionSpec::Full => Self::full(grid),
            RegionSpec::Band { axis, lo, hi } => {
                if *axis >= d || !(hi > lo) {
                    return Err(DomainError::InvalidRegion(format!("band axis {axis} [{lo},{hi}]")));
                }
                Self::band(grid, *axis, *lo, *hi)
            }
            RegionSpec::Box { lo, hi } => {
                if lo.len() != d || hi.len() != d || lo.iter().zip(hi).any(|(a, b)| !(b > a)) {
                    return Err(DomainError::InvalidRegion("box bounds".into()));
                }
                Self::periodic_box(grid, lo, hi)
            }
            RegionSpec::Ball { center, radius } => {
                if center.len() != d || !(*radius > 0.0) {
                    return Err(DomainError::InvalidRegion("ball center/radius".into()));
                }
                let mut c = [0.0; 3];
                c[..d].copy_from_slice(center);
                Self::ball(grid, &c, *radius)
            }
        };
        m.label = label.to_string();
        Ok(m)
    }

    pub fn grid(&self) -> &Arc<TorusGrid> {
        &self.grid
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn inside(&self) -> &[bool] {
        &self.inside
    }

    #[inline]
    pub fn contains(&self, idx: usize) -> bool {
        self.inside[idx]
    }

    pub fn count(&self) -> usize {
        self.inside.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn is_full(&self) -> bool {
        self.inside.iter().all(|&b| b)
    }

    pub fn indices(&self) -> Vec<usize> {
        (0..self.inside.len()).filter(|&i| self.inside[i]).collect()
    }

    fn combine(&self, other: &RegionMask, label: String, f: impl Fn(bool, bool) -> bool) -> Result<Self, DomainError> {
        if *self.grid != *other.grid {
            return Err(DomainError::GridMismatch);
        }
        let inside = self.inside.iter().zip(&other.inside).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self { grid: self.grid.clone(), inside, label })
    }

    pub fn complement(&self) -> Self {
        Self {
            grid: self.grid.clone(),
            inside: self.inside.iter().map(|b| !b).collect(),
            label: format!("not({})", self.label),
        }
    }

    pub fn union(&self, other: &RegionMask) -> Result<Self, DomainError> {
        self.combine(other, format!("{}|{}", self.label, other.label), |a, b| a || b)
    }

    pub fn intersection(&self, other: &RegionMask) -> Result<Self, DomainError> {
        self.combine(other, format!("{}&{}", self.label, other.label), |a, b| a && b)
    }

    pub fn difference(&self, other: &RegionMask) -> Result<Self, DomainError> {
        self.combine(other, format!("{}-{}", self.label, other.label), |a, b| a && !b)
    }

    pub fn is_subset_of(&self, other: &RegionMask) -> bool {
        self.inside.iter().zip(&other.inside).all(|(&a, &b)| !a || b)
    }

    /// Masked nodes with at least one grid neighbour outside the mask.
    pub fn boundary_layer(&self) -> Vec<usize> {
        let g = &self.grid;
        (0..g.len())
            .filter(|&i| {
                self.inside[i]
                    && (0..g.dim()).any(|a| !self.inside[g.shift(i, a, 1)] || !self.inside[g.shift(i, a, -1)])
            })
            .collect()
    }

    /// Connected components under periodic face adjacency, ordered by smallest node index.
    pub fn components(&self) -> Vec<RegionMask> {
        let g = &self.grid;
        let mut label = vec![usize::MAX; g.len()];
        let mut out = Vec::new();
        for seed in 0..g.len() {
            if !self.inside[seed] || label[seed] != usize::MAX {
                continue;
            }
            let id = out.len();
            let mut members = vec![false; g.len()];
            let mut stack = vec![seed];
            label[seed] = id;
            while let Some(i) = stack.pop() {
                members[i] = true;
                for a in 0..g.dim() {
                    for d in [-1, 1] {
                        let j = g.shift(i, a, d);
                        if self.inside[j] && label[j] == usize::MAX {
                            label[j] = id;
                            stack.push(j);
                        }
                    }
                }
            }
            out.push(RegionMask { grid: g.clone(), inside: members, label: format!("{}#{id}", self.label) });
        }
        out
    }

    /// True when no grid edge joins a node of `self` to a node of `other`.
    pub fn is_separated_from(&self, other: &RegionMask) -> bool {
        let g = &self.grid;
        (0..g.len()).all(|i| {
            if !self.inside[i] {
                return true;
            }
            if other.inside[i] {
                return false;
            }
            (0..g.dim()).all(|a| !other.inside[g.shift(i, a, 1)] && !other.inside[g.shift(i, a, -1)])
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn components_wrap_periodically() {
        let g = Arc::new(TorusGrid::new(2, &[1.0, 1.0], &[16, 16]).unwrap());
        let two = RegionMask::from_fn(g.clone(), "s", |x| (x[0] - 0.25).abs() < 0.1 || (x[0] - 0.75).abs() < 0.1);
        assert_eq!(two.components().len(), 2);
        let wrap = RegionMask::band(g.clone(), 0, 0.9, 1.1);
        let c = wrap.components();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].count(), wrap.count());
    }

    #[test]
    fn complement_partitions() {
        let g = Arc::new(TorusGrid::new(2, &[1.0, 1.0], &[16, 16]).unwrap());
        let m = RegionMask::ball(g.clone(), &[0.9, 0.1, 0.0], 0.3);
        let c = m.complement();
        assert_eq!(m.count() + c.count(), g.len());
        assert!(m.intersection(&c).unwrap().is_empty());
        assert!(RegionMask::full(g).is_full());
    }

    #[test]
    fn band_wraps() {
        let g = Arc::new(TorusGrid::new(2, &[1.0, 1.0], &[10, 10]).unwrap());
        let m = RegionMask::band(g.clone(), 0, 0.85, 1.15);
        let xs: Vec<usize> = m.indices().iter().map(|&i| g.coord(i, 0)).collect();
        assert!(xs.contains(&9) && xs.contains(&0) && xs.contains(&1) && !xs.contains(&2));
    }

    #[test]
    fn separation() {
        let g = Arc::new(TorusGrid::new(2, &[1.0, 1.0], &[16, 16]).unwrap());
        let a = RegionMask::band(g.clone(), 0, 0.0, 0.2);
        let b = RegionMask::band(g.clone(), 0, 0.5, 0.7);
        let c = RegionMask::band(g.clone(), 0, 0.25, 0.4);
        assert!(a.is_separated_from(&b));
        assert!(!a.is_separated_from(&c));
    }
}
