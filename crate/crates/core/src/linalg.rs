//! Spectral periodic solves and Krylov methods shared by the solvers and eigensolvers.

use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::{Fft, FftPlanner};

use crate::domain::TorusGrid;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// `y += alpha x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.par_iter_mut().zip(x.par_iter()).for_each(|(yi, xi)| *yi += alpha * xi);
}

/// Diagonalisation of the periodic 5/7-point Laplacian by the discrete Fourier transform.
pub struct PeriodicSpectral {
    grid: Arc<TorusGrid>,
    symbol: Vec<f64>,
    /// Symbol on the half-spectrum layout `(line, k)` with `k <= n_last / 2`.
    half_symbol: Vec<f64>,
    half: usize,
    r2c: Arc<dyn RealToComplex<f64>>,
    c2r: Arc<dyn ComplexToReal<f64>>,
    /// Complex plans and line orders for the leading axes on the half layout.
    leading: Vec<(Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>, Vec<usize>, Vec<usize>)>,
}

impl std::fmt::Debug for PeriodicSpectral {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PeriodicSpectral").field("grid", &self.grid).finish()
    }
}

fn lattice_symbol(grid: &TorusGrid, ijk: [usize; 3]) -> f64 {
    (0..grid.dim())
        .map(|a| {
            let n = grid.resolution()[a] as f64;
            let h = grid.spacing()[a];
            let s = (PI * ijk[a] as f64 / n).sin();
            4.0 * s * s / (h * h)
        })
        .sum()
}

impl PeriodicSpectral {
    pub fn new(grid: Arc<TorusGrid>) -> Self {
        let d = grid.dim();
        let last = d - 1;
        let nl = grid.resolution()[last];
        let half = nl / 2 + 1;
        let lines = grid.len() / nl;
        let mut real_planner = RealFftPlanner::<f64>::new();
        let r2c = real_planner.plan_fft_forward(nl);
        let c2r = real_planner.plan_fft_inverse(nl);
        let symbol = (0..grid.len()).map(|i| lattice_symbol(&grid, grid.unravel(i))).collect();
        let half_symbol = (0..lines * half)
            .map(|j| {
                let mut ijk = grid.unravel((j / half) * nl);
                ijk[last] = j % half;
                lattice_symbol(&grid, ijk)
            })
            .collect();
        let mut planner = FftPlanner::new();
        let mut leading = Vec::new();
        for a in 0..last {
            let n = grid.resolution()[a];
            // stride of axis `a` in the half layout
            let stride = grid.stride(a) / nl * half;
            let total = lines * half;
            let order: Vec<usize> = (0..total)
                .filter(|&j| (j / stride) % n == 0)
                .flat_map(|s0| (0..n).map(move |k| s0 + k * stride))
                .collect();
            let mut inverse = vec![0; total];
            for (pos, &j) in order.iter().enumerate() {
                inverse[j] = pos;
            }
            leading.push((planner.plan_fft_forward(n), planner.plan_fft_inverse(n), order, inverse));
        }
        Self { grid, symbol, half_symbol, half, r2c, c2r, leading }
    }

    pub fn grid(&self) -> &Arc<TorusGrid> {
        &self.grid
    }

    /// Eigenvalues of `-Lap_h` indexed like the grid (wavenumber `k_a` at position `k_a`).
    pub fn symbol(&self) -> &[f64] {
        &self.symbol
    }

    fn leading_pass(&self, data: &mut [Complex64], inverse: bool) {
        for (fwd, inv, order, back) in &self.leading {
            let plan = if inverse { inv } else { fwd };
            let n = plan.len();
            let mut lines: Vec<Complex64> = order.par_iter().map(|&j| data[j]).collect();
            lines.par_chunks_mut(n).for_each(|line| plan.process(line));
            data.par_iter_mut().zip(back.par_iter()).for_each(|(v, &pos)| *v = lines[pos]);
        }
    }

    /// Applies the Fourier multiplier `m(symbol)` to `b`.
    pub fn apply_multiplier(&self, b: &[f64], m: impl Fn(f64) -> f64 + Sync) -> Vec<f64> {
        let nl = self.r2c.len();
        let half = self.half;
        let mut spec = vec![Complex64::new(0.0, 0.0); b.len() / nl * half];
        spec.par_chunks_mut(half).zip(b.par_chunks(nl)).for_each(|(out, inp)| {
            let mut line = inp.to_vec();
            self.r2c.process(&mut line, out).expect("real transform sizes match");
        });
        self.leading_pass(&mut spec, false);
        let scale = 1.0 / self.grid.len() as f64;
        spec.par_iter_mut().zip(self.half_symbol.par_iter()).for_each(|(v, &s)| *v *= m(s) * scale);
        self.leading_pass(&mut spec, true);
        let mut out = vec![0.0; b.len()];
        out.par_chunks_mut(nl).zip(spec.par_chunks_mut(half)).for_each(|(o, line)| {
            line[0].im = 0.0;
            if nl % 2 == 0 {
                line[half - 1].im = 0.0;
            }
            self.c2r.process(line, o).expect("real transform sizes match");
        });
        out
    }

    /// Solves `(c - Lap_h) x = b`; for `c = 0` the mean of `b` is discarded.
    pub fn solve_helmholtz(&self, c: f64, b: &[f64]) -> Vec<f64> {
        self.apply_multiplier(b, |s| {
            let d = c + s;
            if d.abs() < 1e-300 {
                0.0
            } else {
                1.0 / d
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KrylovInfo {
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
    /// Condition estimate from the Lanczos tridiagonal (MINRES only).
    pub condition_estimate: f64,
}

/// Preconditioned conjugate gradients. Returns `Err` on loss of positive definiteness.
pub fn pcg(
    apply: impl Fn(&[f64], &mut [f64]),
    precond: impl Fn(&[f64], &mut [f64]),
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> Result<KrylovInfo, String> {
    let n = b.len();
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(KrylovInfo { iterations: 0, relative_residual: 0.0, converged: true, condition_estimate: 1.0 });
    }
    let mut r = vec![0.0; n];
    apply(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut z = vec![0.0; n];
    precond(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut rel = norm2(&r) / bnorm;
    for it in 0..max_iter {
        if rel <= tol {
            return Ok(KrylovInfo { iterations: it, relative_residual: rel, converged: true, condition_estimate: f64::NAN });
        }
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(format!("non-positive curvature {pap:.3e} at iteration {it}"));
        }
        let alpha = rz / pap;
        axpy(alpha, &p, x);
        axpy(-alpha, &ap, &mut r);
        rel = norm2(&r) / bnorm;
        precond(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        p.par_iter_mut().zip(z.par_iter()).for_each(|(pi, zi)| *pi = zi + beta * *pi);
    }
    Ok(KrylovInfo { iterations: max_iter, relative_residual: rel, converged: rel <= tol, condition_estimate: f64::NAN })
}

/// Preconditioned MINRES for symmetric (possibly indefinite) systems with an SPD
/// preconditioner. Restarts from the current iterate until the true residual
/// reaches `tol * |b|` or `max_iter` total iterations are spent.
pub fn pminres(
    apply: impl Fn(&[f64], &mut [f64]),
    precond: impl Fn(&[f64], &mut [f64]),
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> Result<KrylovInfo, String> {
    let n = b.len();
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(KrylovInfo { iterations: 0, relative_residual: 0.0, converged: true, condition_estimate: 1.0 });
    }
    let mut total = 0;
    let mut cond: f64 = 1.0;
    let mut r1 = vec![0.0; n];
    loop {
        apply(x, &mut r1);
        for i in 0..n {
            r1[i] = b[i] - r1[i];
        }
        let rel = norm2(&r1) / bnorm;
        if rel <= tol || total >= max_iter {
            return Ok(KrylovInfo { iterations: total, relative_residual: rel, converged: rel <= tol, condition_estimate: cond });
        }
        let mut y = vec![0.0; n];
        precond(&r1, &mut y);
        let beta1_sq = dot(&r1, &y);
        if !(beta1_sq > 0.0) {
            return Err(format!("preconditioner not positive definite ({beta1_sq:.3e})"));
        }
        let beta1 = beta1_sq.sqrt();
        let mut r2 = r1.clone();
        let mut oldb = 0.0;
        let mut beta = beta1;
        let mut dbar = 0.0;
        let mut epsln = 0.0;
        let mut phibar = beta1;
        let mut cs = -1.0;
        let mut sn = 0.0;
        let mut gmax: f64 = 0.0;
        let mut gmin = f64::MAX;
        let mut w = vec![0.0; n];
        let mut w2 = vec![0.0; n];
        let mut v = vec![0.0; n];
        // inner target slightly tighter than requested, measured in the preconditioner norm
        let inner_tol = 0.3 * tol * bnorm / norm2(&r1).max(1e-300) * beta1;
        let mut stalled = true;
        let mut k = 0;
        while total < max_iter {
            k += 1;
            total += 1;
            let s = 1.0 / beta;
            for i in 0..n {
                v[i] = s * y[i];
            }
            apply(&v, &mut y);
            if k >= 2 {
                axpy(-beta / oldb, &r1, &mut y);
            }
            let alfa = dot(&v, &y);
            axpy(-alfa / beta, &r2, &mut y);
            std::mem::swap(&mut r1, &mut r2);
            r2.copy_from_slice(&y);
            precond(&r2, &mut y);
            oldb = beta;
            let bb = dot(&r2, &y);
            if bb < 0.0 {
                return Err(format!("preconditioner not positive definite ({bb:.3e})"));
            }
            beta = bb.sqrt();
            let oldeps = epsln;
            let delta = cs * dbar + sn * alfa;
            let gbar = sn * dbar - cs * alfa;
            epsln = sn * beta;
            dbar = -cs * beta;
            let gamma = gbar.hypot(beta).max(f64::EPSILON);
            cs = gbar / gamma;
            sn = beta / gamma;
            let phi = cs * phibar;
            phibar *= sn;
            let denom = 1.0 / gamma;
            for i in 0..n {
                let w1 = w2[i];
                w2[i] = w[i];
                w[i] = (v[i] - oldeps * w1 - delta * w2[i]) * denom;
                x[i] += phi * w[i];
            }
            gmax = gmax.max(gamma);
            gmin = gmin.min(gamma);
            cond = cond.max(gmax / gmin);
            if phibar <= inner_tol || beta == 0.0 {
                stalled = false;
                break;
            }
        }
        if stalled && total >= max_iter {
            apply(x, &mut r1);
            for i in 0..n {
                r1[i] = b[i] - r1[i];
            }
            let rel = norm2(&r1) / bnorm;
            return Ok(KrylovInfo { iterations: total, relative_residual: rel, converged: rel <= tol, condition_estimate: cond });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Domain, TorusGrid};
    use rand::{Rng, SeedableRng};

    fn rvec(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn helmholtz_inverts_stencil() {
        for (dim, res) in [(2usize, vec![16usize, 24]), (3, vec![8, 12, 10])] {
            let lengths = vec![1.0; dim];
            let grid = Arc::new(TorusGrid::new(dim, &lengths[..dim], &res).unwrap());
            let d = Domain::flat(grid.clone());
            let sp = PeriodicSpectral::new(grid.clone());
            let b = rvec(grid.len(), 4);
            let c = 3.5;
            let x = sp.solve_helmholtz(c, &b);
            let mut kx = vec![0.0; grid.len()];
            d.apply_stiffness(&x, &mut kx);
            for i in 0..grid.len() {
                assert!((c * x[i] + kx[i] - b[i]).abs() < 1e-10, "{}", c * x[i] + kx[i] - b[i]);
            }
        }
    }

    #[test]
    fn symbol_matches_plane_wave() {
        let grid = Arc::new(TorusGrid::new(2, &[1.0, 2.0], &[16, 32]).unwrap());
        let d = Domain::flat(grid.clone());
        let sp = PeriodicSpectral::new(grid.clone());
        let k = [3usize, 5usize];
        let u: Vec<f64> = (0..grid.len())
            .map(|i| {
                let x = grid.position(i);
                (2.0 * PI * (k[0] as f64 * x[0] / 1.0 + k[1] as f64 * x[1] / 2.0)).cos()
            })
            .collect();
        let mut ku = vec![0.0; grid.len()];
        d.apply_stiffness(&u, &mut ku);
        let s = sp.symbol()[grid.ravel([k[0], k[1], 0])];
        for i in 0..grid.len() {
            assert!((ku[i] - s * u[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn cg_and_minres_on_shifted_laplacian() {
        let grid = Arc::new(TorusGrid::new(2, &[1.0, 1.0], &[32, 32]).unwrap());
        let d = Domain::flat(grid.clone());
        let sp = PeriodicSpectral::new(grid.clone());
        let n = grid.len();
        let pot: Vec<f64> = (0..n).map(|i| 50.0 * (grid.position(i)[0] * 6.0).sin()).collect();
        let b = rvec(n, 9);
        let apply_spd = |x: &[f64], y: &mut [f64]| {
            d.apply_stiffness(x, y);
            for i in 0..n {
                y[i] += (pot[i] + 60.0) * x[i];
            }
        };
        let pre = |r: &[f64], z: &mut [f64]| z.copy_from_slice(&sp.solve_helmholtz(60.0, r));
        let mut x = vec![0.0; n];
        let info = pcg(apply_spd, pre, &b, &mut x, 1e-12, 500).unwrap();
        assert!(info.converged, "{info:?}");
        // indefinite: shift down so some modes are negative
        let apply_ind = |x: &[f64], y: &mut [f64]| {
            d.apply_stiffness(x, y);
            for i in 0..n {
                y[i] += (pot[i] - 30.0) * x[i];
            }
        };
        let pre2 = |r: &[f64], z: &mut [f64]| z.copy_from_slice(&sp.solve_helmholtz(80.0, r));
        let mut x2 = vec![0.0; n];
        let info2 = pminres(apply_ind, pre2, &b, &mut x2, 1e-11, 2000).unwrap();
        assert!(info2.converged, "{info2:?}");
        let mut r = vec![0.0; n];
        apply_ind(&x2, &mut r);
        let res: f64 = r.iter().zip(&b).map(|(a, c)| (a - c).powi(2)).sum::<f64>().sqrt();
        assert!(res <= 1e-11 * norm2(&b) * 1.01);
    }
}
