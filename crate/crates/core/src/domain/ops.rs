use std::sync::Arc;

use rayon::prelude::*;

use super::field::{ScalarField, TensorField, VectorField};
use super::grid::{Mat3, TorusGrid, Vec3};
use super::mask::RegionMask;
use super::metric::Metric;
use crate::error::DomainError;

/// A torus grid together with its metric and precomputed metric weights.
///
/// For `g = e^{2f} delta` in dimension `N` the volume density is `e^{Nf}` and the
/// Laplace-Beltrami operator is `e^{-Nf} d_a(e^{(N-2)f} d_a u)`; the edge weights
/// `e^{(N-2)f}` are sampled analytically at edge midpoints.
#[derive(Debug, Clone)]
pub struct Domain {
    grid: Arc<TorusGrid>,
    metric: Metric,
    flat: bool,
    exponent: Vec<f64>,
    exponent_gradient: Vec<Vec3>,
    volume: Vec<f64>,
    inverse_conformal: Vec<f64>,
    edge_weight: Vec<Vec3>,
}

impl Domain {
    pub fn new(grid: Arc<TorusGrid>, metric: Metric) -> Self {
        let dim = grid.dim();
        let n = dim as f64;
        let lengths = grid.lengths().to_vec();
        let flat = metric.is_flat();
        let exponent: Vec<f64> = (0..grid.len())
            .into_par_iter()
            .map(|i| if flat { 0.0 } else { metric.exponent(dim, &lengths, &grid.position(i)) })
            .collect();
        let exponent_gradient: Vec<Vec3> = (0..grid.len())
            .into_par_iter()
            .map(|i| if flat { [0.0; 3] } else { metric.exponent_gradient(dim, &lengths, &grid.position(i)) })
            .collect();
        let volume = exponent.iter().map(|f| (n * f).exp()).collect();
        let inverse_conformal = exponent.iter().map(|f| (-2.0 * f).exp()).collect();
        let edge_weight = (0..grid.len())
            .into_par_iter()
            .map(|i| {
                let mut w = [1.0; 3];
                if !flat && dim != 2 {
                    let x = grid.position(i);
                    for a in 0..dim {
                        let mut m = x;
                        m[a] += 0.5 * grid.spacing()[a];
                        w[a] = ((n - 2.0) * metric.exponent(dim, &lengths, &m)).exp();
                    }
                }
                w
            })
            .collect();
        Self { grid, metric, flat, exponent, exponent_gradient, volume, inverse_conformal, edge_weight }
    }

    pub fn flat(grid: Arc<TorusGrid>) -> Self {
        Self::new(grid, Metric::Flat)
    }

    pub fn grid(&self) -> &Arc<TorusGrid> {
        &self.grid
    }

    pub fn metric(&self) -> &Metric {
        &self.metric
    }

    pub fn is_flat(&self) -> bool {
        self.flat
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Metric volume density `e^{Nf}` per node (coordinate cell volume excluded).
    pub fn volume_density(&self) -> &[f64] {
        &self.volume
    }

    /// `e^{-2f}` per node.
    pub fn inverse_conformal(&self) -> &[f64] {
        &self.inverse_conformal
    }

    pub fn exponent(&self) -> &[f64] {
        &self.exponent
    }

    pub fn exponent_gradient(&self) -> &[Vec3] {
        &self.exponent_gradient
    }

    /// `e^{(N-2)f}` at the midpoint of the edge from node `i` in direction `+e_a`.
    pub fn edge_weights(&self) -> &[Vec3] {
        &self.edge_weight
    }

    pub fn quadrature_weight(&self, i: usize) -> f64 {
        self.volume[i] * self.grid.cell_volume()
    }

    pub fn total_volume(&self) -> f64 {
        self.volume.iter().sum::<f64>() * self.grid.cell_volume()
    }

    fn check(&self, u: &ScalarField) -> Result<(), DomainError> {
        if **u.grid() != *self.grid {
            return Err(DomainError::GridMismatch);
        }
        u.check_finite()
    }

    /// Coordinate differential `d_a u` by central differences.
    pub fn differential(&self, u: &ScalarField) -> Result<VectorField, DomainError> {
        self.check(u)?;
        Ok(VectorField::new(self.grid.clone(), self.differential_slice(u.values()))?)
    }

    pub(crate) fn differential_slice(&self, u: &[f64]) -> Vec<Vec3> {
        let g = &self.grid;
        let d = g.dim();
        (0..g.len())
            .into_par_iter()
            .map(|i| {
                let mut v = [0.0; 3];
                for a in 0..d {
                    v[a] = (u[g.shift(i, a, 1)] - u[g.shift(i, a, -1)]) / (2.0 * g.spacing()[a]);
                }
                v
            })
            .collect()
    }

    /// Metric gradient (contravariant components `e^{-2f} d_a u`).
    pub fn gradient(&self, u: &ScalarField) -> Result<VectorField, DomainError> {
        self.check(u)?;
        let mut du = self.differential_slice(u.values());
        if !self.flat {
            for (v, s) in du.iter_mut().zip(&self.inverse_conformal) {
                for c in v.iter_mut() {
                    *c *= s;
                }
            }
        }
        VectorField::new(self.grid.clone(), du)
    }

    /// `|grad u|_g^2` per node.
    pub fn grad_norm_sq(&self, u: &ScalarField) -> Result<ScalarField, DomainError> {
        self.check(u)?;
        let du = self.differential_slice(u.values());
        let values = du
            .iter()
            .zip(&self.inverse_conformal)
            .map(|(v, s)| s * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]))
            .collect();
        Ok(ScalarField::from_vec_unchecked(self.grid.clone(), values))
    }

    /// Coordinate second differences: diagonal by the standard three-point rule, mixed
    /// entries by nested central differences.
    pub(crate) fn coordinate_hessian_slice(&self, u: &[f64]) -> Vec<Mat3> {
        let g = &self.grid;
        let d = g.dim();
        let h = g.spacing().to_vec();
        (0..g.len())
            .into_par_iter()
            .map(|i| {
                let mut m = [[0.0; 3]; 3];
                for a in 0..d {
                    let p = g.shift(i, a, 1);
                    let q = g.shift(i, a, -1);
                    m[a][a] = (u[p] - 2.0 * u[i] + u[q]) / (h[a] * h[a]);
                    for b in (a + 1)..d {
                        let pp = u[g.shift(p, b, 1)];
                        let pm = u[g.shift(p, b, -1)];
                        let mp = u[g.shift(q, b, 1)];
                        let mm = u[g.shift(q, b, -1)];
                        let v = (pp - pm - mp + mm) / (4.0 * h[a] * h[b]);
                        m[a][b] = v;
                        m[b][a] = v;
                    }
                }
                m
            })
            .collect()
    }

    /// Covariant Hessian `d_ab u - Gamma^c_ab d_c u` in coordinate components.
    pub fn hessian(&self, u: &ScalarField) -> Result<TensorField, DomainError> {
        self.check(u)?;
        let mut hs = self.coordinate_hessian_slice(u.values());
        if !self.flat {
            let du = self.differential_slice(u.values());
            let d = self.dim();
            hs.par_iter_mut().enumerate().for_each(|(i, m)| {
                let f = &self.exponent_gradient[i];
                let v = &du[i];
                let fv: f64 = (0..d).map(|c| f[c] * v[c]).sum();
                for a in 0..d {
                    for b in 0..d {
                        let mut gam = f[b] * v[a] + f[a] * v[b];
                        if a == b {
                            gam -= fv;
                        }
                        m[a][b] -= gam;
                    }
                }
            });
        }
        TensorField::new(self.grid.clone(), hs)
    }

    /// Stiffness action `(K u)_i = -sum_a [w(i)(u_{i+a}-u_i) - w(i-a)(u_i-u_{i-a})]/h_a^2`,
    /// so that the Laplace-Beltrami operator is `-K u / volume_density`.
    pub fn apply_stiffness(&self, u: &[f64], out: &mut [f64]) {
        let g = &self.grid;
        let d = g.dim();
        let last = d - 1;
        let nl = g.resolution()[last];
        let inv_h2: Vec<f64> = g.spacing().iter().map(|h| 1.0 / (h * h)).collect();
        let w = &self.edge_weight;
        let flat = self.flat;
        out.par_chunks_mut(nl).enumerate().for_each(|(line, o)| {
            let base = line * nl;
            let mut up = [0usize; 2];
            let mut down = [0usize; 2];
            for a in 0..last {
                up[a] = g.shift(base, a, 1);
                down[a] = g.shift(base, a, -1);
            }
            for k in 0..nl {
                let i = base + k;
                let kp = base + if k + 1 == nl { 0 } else { k + 1 };
                let km = base + if k == 0 { nl - 1 } else { k - 1 };
                let ui = u[i];
                let mut s;
                if flat {
                    s = (u[kp] + u[km] - 2.0 * ui) * inv_h2[last];
                    for a in 0..last {
                        s += (u[up[a] + k] + u[down[a] + k] - 2.0 * ui) * inv_h2[a];
                    }
                } else {
                    s = (w[i][last] * (u[kp] - ui) - w[km][last] * (ui - u[km])) * inv_h2[last];
                    for a in 0..last {
                        let p = up[a] + k;
                        let q = down[a] + k;
                        s += (w[i][a] * (u[p] - ui) - w[q][a] * (ui - u[q])) * inv_h2[a];
                    }
                }
                o[k] = -s;
            }
        });
    }

    pub(crate) fn laplacian_slice(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; u.len()];
        self.apply_stiffness(u, &mut out);
        for (o, v) in out.iter_mut().zip(&self.volume) {
            *o = -*o / v;
        }
        out
    }

    pub fn laplacian(&self, u: &ScalarField) -> Result<ScalarField, DomainError> {
        self.check(u)?;
        Ok(ScalarField::from_vec_unchecked(self.grid.clone(), self.laplacian_slice(u.values())))
    }

    /// Edge-based Dirichlet form `sum_edges w (du/h)^2 * cell`, i.e. `int |grad u|^2 dV`.
    ///
    /// Equals `-sum u (Lap u) dV` exactly (summation by parts).
    pub fn dirichlet_form(&self, u: &[f64]) -> f64 {
        let g = &self.grid;
        let d = g.dim();
        let mut s = 0.0;
        for i in 0..g.len() {
            for a in 0..d {
                let du = u[g.shift(i, a, 1)] - u[i];
                s += self.edge_weight[i][a] * du * du / (g.spacing()[a] * g.spacing()[a]);
            }
        }
        s * g.cell_volume()
    }

    /// Per-node share of the edge Dirichlet density: half of each incident edge term.
    pub fn dirichlet_density(&self, u: &[f64]) -> Vec<f64> {
        let g = &self.grid;
        let d = g.dim();
        (0..g.len())
            .into_par_iter()
            .map(|i| {
                let mut s = 0.0;
                for a in 0..d {
                    let p = g.shift(i, a, 1);
                    let q = g.shift(i, a, -1);
                    let h2 = g.spacing()[a] * g.spacing()[a];
                    s += 0.5 * self.edge_weight[i][a] * (u[p] - u[i]).powi(2) / h2;
                    s += 0.5 * self.edge_weight[q][a] * (u[i] - u[q]).powi(2) / h2;
                }
                s / self.volume[i]
            })
            .collect()
    }

    /// `sum_i v_i dV_i` over masked nodes (all nodes when `mask` is `None`).
    pub fn integrate_slice(&self, v: &[f64], mask: Option<&RegionMask>) -> f64 {
        let mut s = 0.0;
        match mask {
            Some(m) => {
                for i in 0..v.len() {
                    if m.contains(i) {
                        s += v[i] * self.volume[i];
                    }
                }
            }
            None => {
                for i in 0..v.len() {
                    s += v[i] * self.volume[i];
                }
            }
        }
        s * self.grid.cell_volume()
    }

    pub fn integrate(&self, u: &ScalarField, mask: &RegionMask) -> Result<f64, DomainError> {
        self.check(u)?;
        if **mask.grid() != *self.grid {
            return Err(DomainError::GridMismatch);
        }
        Ok(self.integrate_slice(u.values(), Some(mask)))
    }

    /// `div_g X = e^{-Nf} d_a(e^{Nf} X^a)` for contravariant `X`.
    pub fn divergence(&self, x: &VectorField) -> Result<ScalarField, DomainError> {
        if **x.grid() != *self.grid {
            return Err(DomainError::GridMismatch);
        }
        Ok(ScalarField::from_vec_unchecked(self.grid.clone(), self.divergence_slice(x.values())))
    }

    pub fn divergence_slice(&self, x: &[Vec3]) -> Vec<f64> {
        let g = &self.grid;
        let d = g.dim();
        let vol = &self.volume;
        (0..g.len())
            .into_par_iter()
            .map(|i| {
                let mut s = 0.0;
                for a in 0..d {
                    let p = g.shift(i, a, 1);
                    let q = g.shift(i, a, -1);
                    s += (vol[p] * x[p][a] - vol[q] * x[q][a]) / (2.0 * g.spacing()[a]);
                }
                s / vol[i]
            })
            .collect()
    }

    /// Covariant derivative `(nabla X)^a_b = d_b X^a + Gamma^a_bc X^c`, stored as `m[a][b]`.
    pub fn covariant_derivative_slice(&self, x: &[Vec3]) -> Vec<Mat3> {
        let g = &self.grid;
        let d = g.dim();
        (0..g.len())
            .into_par_iter()
            .map(|i| {
                let mut m = [[0.0; 3]; 3];
                for b in 0..d {
                    let p = g.shift(i, b, 1);
                    let q = g.shift(i, b, -1);
                    for a in 0..d {
                        m[a][b] = (x[p][a] - x[q][a]) / (2.0 * g.spacing()[b]);
                    }
                }
                if !self.flat {
                    let f = &self.exponent_gradient[i];
                    let v = &x[i];
                    let fv: f64 = (0..d).map(|c| f[c] * v[c]).sum();
                    for a in 0..d {
                        for b in 0..d {
                            let mut gam = if a == b { fv } else { 0.0 };
                            gam += v[a] * f[b];
                            gam -= f[a] * v[b];
                            m[a][b] += gam;
                        }
                    }
                }
                m
            })
            .collect()
    }

    /// Ricci tensor (coordinate components) at node `i`.
    pub fn ricci(&self, i: usize) -> Mat3 {
        if self.flat {
            return [[0.0; 3]; 3];
        }
        self.metric.ricci(self.dim(), self.grid.lengths(), &self.grid.position(i))
    }

    /// `Ric(grad u, grad u)` from the coordinate differential `du`.
    pub fn ricci_of_differential(&self, i: usize, du: &Vec3) -> f64 {
        if self.flat {
            return 0.0;
        }
        let r = self.ricci(i);
        let d = self.dim();
        let mut s = 0.0;
        for a in 0..d {
            for b in 0..d {
                s += r[a][b] * du[a] * du[b];
            }
        }
        s * self.inverse_conformal[i] * self.inverse_conformal[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::metric::ConformalMode;
    use std::f64::consts::PI;

    fn grid2(n: usize) -> Arc<TorusGrid> {
        Arc::new(TorusGrid::new(2, &[1.0, 1.0], &[n, n]).unwrap())
    }

    fn conformal() -> Metric {
        Metric::Conformal {
            modes: vec![
                ConformalMode { amplitude: 0.08, wavenumbers: vec![1, 1, 0], phase: 0.2 },
                ConformalMode { amplitude: 0.05, wavenumbers: vec![0, 1, 1], phase: 0.0 },
            ],
        }
    }

    fn pseudo_random(n: usize, seed: u64) -> Vec<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn gradient_of_sine_is_second_order() {
        let mut errs = vec![];
        for n in [32, 64, 128] {
            let d = Domain::flat(grid2(n));
            let u = ScalarField::from_fn(d.grid().clone(), |x| (2.0 * PI * x[0]).sin());
            let g = d.gradient(&u).unwrap();
            let err = (0..d.len())
                .map(|i| (g.values()[i][0] - 2.0 * PI * (2.0 * PI * d.grid().position(i)[0]).cos()).abs())
                .fold(0.0, f64::max);
            assert!(g.values().iter().all(|v| v[1] == 0.0));
            errs.push(err);
        }
        for w in errs.windows(2) {
            let r = w[0] / w[1];
            assert!((3.6..=4.4).contains(&r), "ratio {r}");
        }
    }

    #[test]
    fn constant_gradient_is_exactly_zero() {
        let d = Domain::flat(grid2(16));
        let u = ScalarField::constant(d.grid().clone(), 0.37);
        assert!(d.gradient(&u).unwrap().values().iter().all(|v| *v == [0.0; 3]));
        assert!(d.laplacian(&u).unwrap().values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn summation_by_parts() {
        let d = Domain::flat(grid2(24));
        let u = pseudo_random(d.len(), 1);
        let v = pseudo_random(d.len(), 2);
        let du = d.differential_slice(&u);
        let dv = d.differential_slice(&v);
        let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        for a in 0..2 {
            let total: f64 = du.iter().map(|g| g[a]).sum::<f64>() * d.grid().cell_volume();
            assert!(total.abs() <= 1e-12 * norm);
            let lhs: f64 = (0..d.len()).map(|i| u[i] * dv[i][a]).sum();
            let rhs: f64 = (0..d.len()).map(|i| -du[i][a] * v[i]).sum();
            assert!((lhs - rhs).abs() <= 1e-10 * norm);
        }
    }

    #[test]
    fn hessian_entries_and_trace() {
        let d = Domain::flat(grid2(64));
        let u = ScalarField::from_fn(d.grid().clone(), |x| (2.0 * PI * x[0]).cos() * (2.0 * PI * x[1]).cos());
        let h = d.hessian(&u).unwrap();
        let lap = d.laplacian(&u).unwrap();
        let hh = d.grid().spacing()[0];
        for i in 0..d.len() {
            let x = d.grid().position(i);
            let exact = 4.0 * PI * PI * (2.0 * PI * x[0]).sin() * (2.0 * PI * x[1]).sin();
            assert!((h.values()[i][0][1] - exact).abs() < 40.0 * hh * hh * 4.0 * PI * PI);
            assert_eq!(h.values()[i][0][1], h.values()[i][1][0]);
            assert!((h.trace().values()[i] - lap.values()[i]).abs() <= 1e-12 * (1.0 + lap.values()[i].abs()));
        }
        let v = ScalarField::from_fn(d.grid().clone(), |x| (2.0 * PI * x[0]).sin());
        let hv = d.hessian(&v).unwrap();
        for i in 0..d.len() {
            assert!(hv.values()[i][0][1].abs() < 1e-10);
            assert!(hv.values()[i][1][1].abs() < 1e-10);
        }
    }

    #[test]
    fn laplacian_converges_and_conserves() {
        let mut errs = vec![];
        for n in [32, 64, 128] {
            let d = Domain::flat(grid2(n));
            let u = ScalarField::from_fn(d.grid().clone(), |x| (2.0 * PI * x[0]).sin());
            let l = d.laplacian(&u).unwrap();
            let err = (0..d.len())
                .map(|i| (l.values()[i] + 4.0 * PI * PI * u.values()[i]).abs())
                .fold(0.0, f64::max);
            errs.push(err);
        }
        for w in errs.windows(2) {
            let r = w[0] / w[1];
            assert!((3.6..=4.4).contains(&r), "ratio {r}");
        }
        for metric in [Metric::Flat, conformal()] {
            let g = Arc::new(TorusGrid::new(3, &[1.0, 1.0, 1.0], &[12, 10, 8]).unwrap());
            let d = Domain::new(g, metric);
            let u = pseudo_random(d.len(), 3);
            let lu = d.laplacian_slice(&u);
            let total = d.integrate_slice(&lu, None);
            let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!(total.abs() <= 1e-10 * norm, "{total}");
            let sbp = -d.integrate_slice(&u.iter().zip(&lu).map(|(a, b)| a * b).collect::<Vec<_>>(), None);
            assert!((sbp - d.dirichlet_form(&u)).abs() <= 1e-10 * d.dirichlet_form(&u));
        }
    }

    #[test]
    fn flat_laplacian_dense_spectrum() {
        use nalgebra::DMatrix;
        let g = Arc::new(TorusGrid::new(2, &[1.0, 1.0], &[8, 8]).unwrap());
        let d = Domain::flat(g.clone());
        let n = g.len();
        let mut m = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            let col = d.laplacian_slice(&e);
            for i in 0..n {
                m[(i, j)] = col[i];
            }
        }
        assert!((&m - m.transpose()).amax() < 1e-12);
        let ev = m.symmetric_eigenvalues();
        let kernel = ev.iter().filter(|v| v.abs() < 1e-9).count();
        assert_eq!(kernel, 1);
        assert!(ev.iter().all(|&v| v < 1e-9));
    }

    #[test]
    fn integrals() {
        let d = Domain::flat(grid2(32));
        let one = ScalarField::constant(d.grid().clone(), 1.0);
        let full = RegionMask::full(d.grid().clone());
        assert_eq!(d.integrate(&one, &full).unwrap(), 1.0);
        let s = ScalarField::from_fn(d.grid().clone(), |x| (2.0 * PI * x[0]).sin());
        assert!(d.integrate(&s, &full).unwrap().abs() < 1e-12);
        let half = RegionMask::band(d.grid().clone(), 0, 0.0, 0.5);
        let v = d.integrate(&one, &half).unwrap();
        assert!((v - 0.5).abs() <= 1.0 / 32.0 + 1e-12);
    }

    #[test]
    fn conformal_laplacian_matches_analytic() {
        // Laplace-Beltrami of a smooth function against a closed-form evaluation.
        let metric = conformal();
        let mut errs = vec![];
        for n in [16, 32, 64] {
            let g = Arc::new(TorusGrid::new(3, &[1.0, 1.0, 1.0], &[n, n, n]).unwrap());
            let d = Domain::new(g.clone(), metric.clone());
            let u = ScalarField::from_fn(g.clone(), |x| (2.0 * PI * x[0]).sin() + (2.0 * PI * x[2]).cos());
            let l = d.laplacian(&u).unwrap();
            let mut err: f64 = 0.0;
            for i in 0..g.len() {
                let x = g.position(i);
                let f = metric.exponent(3, g.lengths(), &x);
                let df = metric.exponent_gradient(3, g.lengths(), &x);
                let du = [2.0 * PI * (2.0 * PI * x[0]).cos(), 0.0, -2.0 * PI * (2.0 * PI * x[2]).sin()];
                let lap_e = -4.0 * PI * PI * ((2.0 * PI * x[0]).sin() + (2.0 * PI * x[2]).cos());
                let exact = (-2.0 * f).exp() * (lap_e + (df[0] * du[0] + df[1] * du[1] + df[2] * du[2]));
                err = err.max((l.values()[i] - exact).abs());
            }
            errs.push(err);
        }
        for w in errs.windows(2) {
            let r = w[0] / w[1];
            assert!((3.4..=4.6).contains(&r), "ratio {r}");
        }
    }

    #[test]
    fn trace_of_covariant_hessian_is_laplacian_at_second_order() {
        let metric = conformal();
        let g = Arc::new(TorusGrid::new(2, &[1.0, 1.0], &[64, 64]).unwrap());
        let d = Domain::new(g.clone(), metric);
        let u = ScalarField::from_fn(g.clone(), |x| (2.0 * PI * x[0]).sin() * (2.0 * PI * x[1]).cos());
        let h = d.hessian(&u).unwrap();
        let l = d.laplacian(&u).unwrap();
        for i in 0..g.len() {
            let tr = d.inverse_conformal()[i] * (h.values()[i][0][0] + h.values()[i][1][1]);
            assert!((tr - l.values()[i]).abs() < 0.05, "{} vs {}", tr, l.values()[i]);
        }
    }
}
