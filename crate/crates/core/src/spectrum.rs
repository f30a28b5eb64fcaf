//! Schrodinger operators `L = Lap - eps^{-2} W''(u)` on masked regions, low eigenvalues,
//! Morse indices and Dirichlet-structure checks.
//!
//! Eigenvalues follow the convention `L phi + lambda phi = 0`, so
//! `lambda = (int |grad phi|^2 + eps^{-2} W''(u) phi^2) / int phi^2`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::allen_cahn::Potential;
use crate::domain::{Domain, RegionMask, ScalarField, Vec3};
use crate::error::SpectrumError;
use crate::linalg::{axpy, dot, norm2, pcg, pminres, PeriodicSpectral};

/// A real symmetric matrix `B` (in an orthonormal basis) whose low spectrum is wanted,
/// together with a way to solve `(B - shift) x = b` below the spectrum.
pub trait SymmetricProblem: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
    /// A value not exceeding the smallest eigenvalue.
    fn lower_bound(&self) -> f64;
    /// A value not below the largest eigenvalue.
    fn upper_bound(&self) -> f64;
    /// Solves `(B - shift) x = b` for `shift < lower_bound()`.
    fn solve_shifted(&self, shift: f64, b: &[f64], x: &mut [f64]) -> Result<usize, SpectrumError>;

    /// Distance below `lower_bound()` at which the shift-invert pole is placed.
    fn shift_margin(&self) -> f64 {
        1.0 + 0.5 * self.lower_bound().abs()
    }

    fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let cols: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|j| {
                let mut e = vec![0.0; n];
                e[j] = 1.0;
                let mut y = vec![0.0; n];
                self.apply(&e, &mut y);
                y
            })
            .collect();
        DMatrix::from_fn(n, n, |i, j| 0.5 * (cols[j][i] + cols[i][j]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Lanczos,
    Dense,
}

impl std::fmt::Display for SolverKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SolverKind::Lanczos => "lanczos",
            SolverKind::Dense => "dense",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SolverChoice {
    #[default]
    Auto,
    Lanczos,
    Dense,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigenOptions {
    pub solver: SolverChoice,
    /// Relative Ritz residual for locking.
    pub tol: f64,
    /// Relative residual of the inner shifted solves.
    pub inner_tol: f64,
    pub max_basis: usize,
    pub max_rounds: usize,
    /// `Auto` uses the dense path up to this size.
    pub dense_threshold: usize,
    pub seed: u64,
    pub want_vectors: bool,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self {
            solver: SolverChoice::Auto,
            tol: 1e-11,
            inner_tol: 1e-11,
            max_basis: 90,
            max_rounds: 60,
            dense_threshold: 1200,
            seed: 0x5eed,
            want_vectors: false,
        }
    }
}

/// Ordered low eigenvalues of an operator on a region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumResult {
    pub eigenvalues: Vec<f64>,
    /// Eigenfunctions in the operator's basis, unit norm.
    #[serde(skip)]
    pub eigenvectors: Option<Vec<Vec<f64>>>,
    pub solver: SolverKind,
    /// `|B y - lambda y|` for unit `y`.
    pub residuals: Vec<f64>,
    pub region: String,
}

/// `L = Lap_g - eps^{-2} W''(u)` restricted to a node mask with Dirichlet conditions,
/// represented symmetrically as `B = M^{-1/2} (K + M V) M^{-1/2}` on masked nodes.
pub struct SchrodingerOperator<'a> {
    domain: &'a Domain,
    mask: RegionMask,
    eps: f64,
    potential: Vec<f64>,
    nodes: Vec<usize>,
    position: Vec<usize>,
    inv_sqrt_mass: Vec<f64>,
    spectral: Option<Arc<PeriodicSpectral>>,
    stiffness_ratio: f64,
}

impl std::fmt::Debug for SchrodingerOperator<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SchrodingerOperator")
            .field("region", &self.mask.label())
            .field("eps", &self.eps)
            .field("nodes", &self.nodes.len())
            .finish()
    }
}

const OUTSIDE: usize = usize::MAX;

/// Assembles `L = Lap - eps^{-2} W''(u)` on `mask`.
pub fn assemble<'a>(
    domain: &'a Domain,
    potential: Potential,
    u: &ScalarField,
    eps: f64,
    mask: &RegionMask,
) -> Result<SchrodingerOperator<'a>, SpectrumError> {
    if !(eps > 0.0) {
        return Err(crate::error::AllenCahnError::NonPositiveEpsilon(eps).into());
    }
    u.check_finite()?;
    let inv = 1.0 / (eps * eps);
    let pot: Vec<f64> = u.values().iter().map(|&v| inv * potential.ddw(v)).collect();
    SchrodingerOperator::from_potential(domain, pot, eps, mask)
}

impl<'a> SchrodingerOperator<'a> {
    /// Operator `-Lap + V` with an explicit nodal potential `V`.
    pub fn from_potential(
        domain: &'a Domain,
        potential: Vec<f64>,
        eps: f64,
        mask: &RegionMask,
    ) -> Result<Self, SpectrumError> {
        if **mask.grid() != **domain.grid() {
            return Err(crate::error::DomainError::GridMismatch.into());
        }
        let nodes = mask.indices();
        if nodes.is_empty() {
            return Err(SpectrumError::EmptyRegion(mask.label().to_string()));
        }
        let mut position = vec![OUTSIDE; domain.len()];
        for (k, &i) in nodes.iter().enumerate() {
            position[i] = k;
        }
        let inv_sqrt_mass = nodes.iter().map(|&i| 1.0 / domain.volume_density()[i].sqrt()).collect();
        let stiffness_ratio = if domain.is_flat() {
            1.0
        } else {
            let w: f64 = domain.edge_weights().iter().map(|w| w[0]).sum::<f64>() / domain.len() as f64;
            let v: f64 = domain.volume_density().iter().sum::<f64>() / domain.len() as f64;
            w / v
        };
        Ok(Self {
            domain,
            mask: mask.clone(),
            eps,
            potential,
            nodes,
            position,
            inv_sqrt_mass,
            spectral: None,
            stiffness_ratio,
        })
    }

    pub fn mask(&self) -> &RegionMask {
        &self.mask
    }

    pub fn epsilon(&self) -> f64 {
        self.eps
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    /// Nodal potential `eps^{-2} W''(u)` (full grid).
    pub fn potential(&self) -> &[f64] {
        &self.potential
    }

    fn spectral(&self) -> Arc<PeriodicSpectral> {
        // built lazily; cheap relative to a solve
        match &self.spectral {
            Some(s) => s.clone(),
            None => Arc::new(PeriodicSpectral::new(self.domain.grid().clone())),
        }
    }

    /// Sets up the FFT preconditioner once for repeated shifted solves.
    pub fn with_preconditioner(mut self) -> Self {
        self.spectral = Some(Arc::new(PeriodicSpectral::new(self.domain.grid().clone())));
        self
    }

    /// Maps a masked-basis vector `y` to the nodal function `phi = M^{-1/2} y` on the full grid.
    pub fn to_nodal(&self, y: &[f64]) -> Vec<f64> {
        let mut phi = vec![0.0; self.domain.len()];
        for (k, &i) in self.nodes.iter().enumerate() {
            phi[i] = y[k] * self.inv_sqrt_mass[k];
        }
        phi
    }

    /// Inverse of [`to_nodal`](Self::to_nodal) on masked nodes.
    pub fn from_nodal(&self, phi: &[f64]) -> Vec<f64> {
        self.nodes.iter().enumerate().map(|(k, &i)| phi[i] / self.inv_sqrt_mass[k]).collect()
    }

    /// Basis-independent Rayleigh numerator `int |grad phi|^2 + V phi^2` (cell volume included).
    pub fn quadratic_form(&self, phi: &[f64]) -> f64 {
        let v: Vec<f64> = phi.iter().zip(&self.potential).map(|(p, w)| w * p * p).collect();
        self.domain.dirichlet_form(phi) + self.domain.integrate_slice(&v, None)
    }

    fn scatter(&self, x: &[f64], full: &mut [f64]) {
        full.iter_mut().for_each(|v| *v = 0.0);
        for (k, &i) in self.nodes.iter().enumerate() {
            full[i] = x[k] * self.inv_sqrt_mass[k];
        }
    }

    pub fn dense(&self) -> DMatrix<f64> {
        let n = self.nodes.len();
        let g = self.domain.grid();
        let w = self.domain.edge_weights();
        let mut m = DMatrix::zeros(n, n);
        for (k, &i) in self.nodes.iter().enumerate() {
            let si = self.inv_sqrt_mass[k];
            let mut diag = 0.0;
            for a in 0..g.dim() {
                let h2 = g.spacing()[a] * g.spacing()[a];
                let p = g.shift(i, a, 1);
                let q = g.shift(i, a, -1);
                diag += (w[i][a] + w[q][a]) / h2;
                for (nb, we) in [(p, w[i][a]), (q, w[q][a])] {
                    let kk = self.position[nb];
                    if kk != OUTSIDE {
                        m[(k, kk)] -= we / h2 * si * self.inv_sqrt_mass[kk];
                    }
                }
            }
            m[(k, k)] += diag * si * si + self.potential[i];
        }
        m
    }
}

impl SymmetricProblem for SchrodingerOperator<'_> {
    fn dim(&self) -> usize {
        self.nodes.len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let mut full = vec![0.0; self.domain.len()];
        self.scatter(x, &mut full);
        let mut kf = vec![0.0; self.domain.len()];
        self.domain.apply_stiffness(&full, &mut kf);
        for (k, &i) in self.nodes.iter().enumerate() {
            y[k] = kf[i] * self.inv_sqrt_mass[k] + self.potential[i] * x[k];
        }
    }

    fn lower_bound(&self) -> f64 {
        self.nodes.iter().map(|&i| self.potential[i]).fold(f64::INFINITY, f64::min)
    }

    fn upper_bound(&self) -> f64 {
        let g = self.domain.grid();
        let wmax = self.domain.edge_weights().iter().flat_map(|w| w[..g.dim()].to_vec()).fold(0.0, f64::max);
        let vmin = self.domain.volume_density().iter().cloned().fold(f64::INFINITY, f64::min);
        let lap: f64 = g.spacing().iter().map(|h| 4.0 / (h * h)).sum::<f64>() * wmax / vmin;
        lap + self.nodes.iter().map(|&i| self.potential[i]).fold(f64::NEG_INFINITY, f64::max)
    }

    fn shift_margin(&self) -> f64 {
        let (lo, hi) = self
            .nodes
            .iter()
            .map(|&i| self.potential[i])
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        1.0 + 0.5 * (hi - lo)
    }

    fn solve_shifted(&self, shift: f64, b: &[f64], x: &mut [f64]) -> Result<usize, SpectrumError> {
        let n = self.nodes.len();
        let c = self.nodes.iter().map(|&i| (self.potential[i] - shift).abs()).sum::<f64>() / n as f64;
        let c = c.max(1e-12);
        let sp = self.spectral();
        let ratio = self.stiffness_ratio;
        let full_n = self.domain.len();
        let pre = |r: &[f64], z: &mut [f64]| {
            let mut full = vec![0.0; full_n];
            for (k, &i) in self.nodes.iter().enumerate() {
                full[i] = r[k];
            }
            let s = sp.apply_multiplier(&full, |sym| 1.0 / (c + ratio * sym));
            for (k, &i) in self.nodes.iter().enumerate() {
                z[k] = s[i];
            }
        };
        let apply = |v: &[f64], y: &mut [f64]| {
            self.apply(v, y);
            for k in 0..n {
                y[k] -= shift * v[k];
            }
        };
        x.iter_mut().for_each(|v| *v = 0.0);
        let tol = INNER_TOL.with(|t| t.get());
        let info = match pcg(&apply, &pre, b, x, tol, 5000) {
            Ok(info) => info,
            Err(_) => {
                x.iter_mut().for_each(|v| *v = 0.0);
                pminres(&apply, &pre, b, x, tol, 20000).map_err(SpectrumError::InnerSolve)?
            }
        };
        if !info.converged {
            return Err(SpectrumError::InnerSolve(format!(
                "shifted solve stalled at relative residual {:.3e}",
                info.relative_residual
            )));
        }
        Ok(info.iterations)
    }
}

thread_local! {
    static INNER_TOL: std::cell::Cell<f64> = const { std::cell::Cell::new(1e-13) };
}

fn dense_smallest(b: &DMatrix<f64>, p: usize, want_vectors: bool) -> (Vec<f64>, Vec<Vec<f64>>, Vec<f64>) {
    let eig = SymmetricEigen::new(b.clone());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let mut vals = Vec::with_capacity(p);
    let mut vecs = Vec::new();
    let mut res = Vec::with_capacity(p);
    for &k in order.iter().take(p) {
        let lam = eig.eigenvalues[k];
        let v: DVector<f64> = eig.eigenvectors.column(k).into_owned();
        let r = (b * &v - &v * lam).norm();
        vals.push(lam);
        res.push(r);
        if want_vectors {
            vecs.push(v.iter().cloned().collect());
        }
    }
    (vals, vecs, res)
}

fn orthogonalize(v: &mut [f64], basis: &[Vec<f64>]) {
    for _ in 0..2 {
        for b in basis {
            let c = dot(v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
        }
    }
}

fn tridiagonal_eigen(alpha: &[f64], beta: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
    let m = alpha.len();
    let t = DMatrix::from_fn(m, m, |i, j| {
        if i == j {
            alpha[i]
        } else if i + 1 == j {
            beta[i]
        } else if j + 1 == i {
            beta[j]
        } else {
            0.0
        }
    });
    let e = SymmetricEigen::new(t);
    (e.eigenvalues.iter().cloned().collect(), e.eigenvectors)
}

struct Round {
    /// `(lambda, unit vector)` pairs accepted in this round, nearest to the shift first.
    accepted: Vec<(f64, Vec<f64>)>,
    /// Ritz estimates `lambda` of the wanted pairs whether converged or not.
    estimates: Vec<f64>,
    /// `sigma + 1/(theta + rho)` for the leading Ritz value with residual `rho`.
    leading_lower: f64,
    restart: Option<Vec<f64>>,
}

fn ritz_vector(basis: &[Vec<f64>], s: &DMatrix<f64>, col: usize) -> Vec<f64> {
    let n = basis[0].len();
    let mut y = vec![0.0; n];
    for (c, bv) in basis.iter().enumerate() {
        let coef = s[(c, col)];
        y.iter_mut().zip(bv).for_each(|(yy, vv)| *yy += coef * vv);
    }
    let ny = norm2(&y);
    y.iter_mut().for_each(|x| *x /= ny);
    y
}

/// One Lanczos run on `(B - sigma)^{-1}` deflated against `locked`.
fn lanczos_round<P: SymmetricProblem + ?Sized>(
    prob: &P,
    sigma: f64,
    start: Vec<f64>,
    locked: &[Vec<f64>],
    needed: usize,
    m_cap: usize,
    tol: f64,
) -> Result<Round, SpectrumError> {
    let n = prob.dim();
    let mut basis: Vec<Vec<f64>> = vec![start];
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut ritz: Option<(Vec<usize>, Vec<f64>, DMatrix<f64>, f64)> = None;
    for j in 0..m_cap {
        let mut w = vec![0.0; n];
        prob.solve_shifted(sigma, &basis[j], &mut w)?;
        orthogonalize(&mut w, locked);
        let a = dot(&w, &basis[j]);
        alpha.push(a);
        orthogonalize(&mut w, &basis);
        let b = norm2(&w);
        let k = alpha.len();
        let last = k == m_cap;
        let breakdown = b <= 1e-14 * a.abs().max(1e-300);
        if last || breakdown || (k >= needed && k % 4 == 0) {
            let (theta, s) = tridiagonal_eigen(&alpha, &beta);
            let mut order: Vec<usize> = (0..k).collect();
            order.sort_by(|&x, &y| theta[y].abs().total_cmp(&theta[x].abs()));
            let done = k >= needed
                && order.iter().take(needed).all(|&i| (b * s[(k - 1, i)]).abs() <= tol * theta[i].abs());
            ritz = Some((order, theta, s, b));
            if done || last || breakdown {
                break;
            }
        }
        beta.push(b);
        w.iter_mut().for_each(|x| *x /= b);
        basis.push(w);
    }
    let (order, theta, s, bres) = ritz.expect("ritz values computed on the last step");
    let k = alpha.len();
    basis.truncate(k);
    let mut accepted = Vec::new();
    let mut restart = None;
    for &i in order.iter() {
        if accepted.len() >= needed + 4 {
            break;
        }
        if (bres * s[(k - 1, i)]).abs() > tol * theta[i].abs() {
            restart = Some(ritz_vector(&basis, &s, i));
            break;
        }
        accepted.push((sigma + 1.0 / theta[i], ritz_vector(&basis, &s, i)));
    }
    let estimates = order.iter().take(needed).map(|&i| sigma + 1.0 / theta[i]).collect();
    let top = order[0];
    let rho = (bres * s[(k - 1, top)]).abs();
    let leading_lower = sigma + 1.0 / (theta[top].abs() + rho);
    Ok(Round { accepted, estimates, leading_lower, restart })
}

fn random_unit(rng: &mut ChaCha8Rng, n: usize, locked: &[Vec<f64>]) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        orthogonalize(&mut v, locked);
        let nv = norm2(&v);
        if nv > 1e-8 {
            v.iter_mut().for_each(|x| *x /= nv);
            return v;
        }
    }
}

/// Rayleigh-Ritz of `B` on `span(vs)`; returns the `p` lowest pairs and their residuals.
fn rayleigh_ritz<P: SymmetricProblem + ?Sized>(
    prob: &P,
    mut vs: Vec<Vec<f64>>,
    p: usize,
) -> (Vec<f64>, Vec<Vec<f64>>, Vec<f64>) {
    let n = prob.dim();
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(vs.len());
    for mut v in vs.drain(..) {
        orthogonalize(&mut v, &q);
        let nv = norm2(&v);
        if nv > 1e-10 {
            v.iter_mut().for_each(|x| *x /= nv);
            q.push(v);
        }
    }
    let k = q.len();
    let images: Vec<Vec<f64>> = q
        .par_iter()
        .map(|y| {
            let mut by = vec![0.0; n];
            prob.apply(y, &mut by);
            by
        })
        .collect();
    let g = DMatrix::from_fn(k, k, |i, j| 0.5 * (dot(&q[i], &images[j]) + dot(&q[j], &images[i])));
    let e = SymmetricEigen::new(g);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| e.eigenvalues[i].total_cmp(&e.eigenvalues[j]));
    let mut vals = Vec::with_capacity(p);
    let mut vecs = Vec::with_capacity(p);
    let mut res = Vec::with_capacity(p);
    for &c in order.iter().take(p) {
        let mut y = vec![0.0; n];
        let mut by = vec![0.0; n];
        for r in 0..k {
            let coef = e.eigenvectors[(r, c)];
            axpy(coef, &q[r], &mut y);
            axpy(coef, &images[r], &mut by);
        }
        let lam = e.eigenvalues[c];
        let r: f64 = by.iter().zip(&y).map(|(a, b)| (a - lam * b).powi(2)).sum::<f64>().sqrt();
        vals.push(lam);
        vecs.push(y);
        res.push(r);
    }
    (vals, vecs, res)
}

/// Shift-invert Lanczos with full reorthogonalisation, locking and explicit restarts.
///
/// A short run with a pole safely below the spectrum locates the wanted cluster; the pole is
/// then moved just below it and pairs are locked nearest-first until a verification round
/// finds nothing below the current `p`-th value.
fn lanczos_smallest<P: SymmetricProblem + ?Sized>(
    prob: &P,
    p: usize,
    opts: &EigenOptions,
) -> Result<(Vec<f64>, Vec<Vec<f64>>, Vec<f64>), SpectrumError> {
    let n = prob.dim();
    INNER_TOL.with(|t| t.set(opts.inner_tol));
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let safe = prob.lower_bound() - prob.shift_margin();
    let probe_len = (2 * p + 30).min(n);
    let probe = lanczos_round(prob, safe, random_unit(&mut rng, n, &[]), &[], p, probe_len, 1e-6)?;
    let lo = probe.estimates[0];
    let hi = *probe.estimates.last().unwrap();
    let sigma = (probe.leading_lower.min(lo - 0.1 * (hi - lo)) - 1e-3 * (1.0 + lo.abs())).max(safe);

    let mut locked_vals: Vec<f64> = Vec::new();
    let mut locked: Vec<Vec<f64>> = Vec::new();
    let mut restart: Option<Vec<f64>> = probe.accepted.into_iter().next().map(|(_, v)| v);
    let mut verified = false;
    for _ in 0..opts.max_rounds {
        if locked.len() >= n {
            verified = true;
            break;
        }
        let reuse = if locked.len() >= p { None } else { restart.take() };
        let start = match reuse {
            Some(mut v) => {
                orthogonalize(&mut v, &locked);
                let nv = norm2(&v);
                if nv > 1e-8 {
                    v.iter_mut().for_each(|x| *x /= nv);
                    v
                } else {
                    random_unit(&mut rng, n, &locked)
                }
            }
            None => random_unit(&mut rng, n, &locked),
        };
        let needed = if locked.len() >= p { 1 } else { p - locked.len() };
        let m_cap = opts.max_basis.min(n - locked.len()).max(1);
        let round = lanczos_round(prob, sigma, start, &locked, needed, m_cap, opts.tol)?;
        if locked.len() >= p {
            if let Some((top, _)) = round.accepted.first() {
                let mut sorted = locked_vals.clone();
                sorted.sort_by(f64::total_cmp);
                if *top >= sorted[p - 1] - 1e-10 * (1.0 + sorted[p - 1].abs()) {
                    verified = true;
                    break;
                }
            }
        }
        restart = round.restart;
        for (lam, mut y) in round.accepted {
            orthogonalize(&mut y, &locked);
            let ny = norm2(&y);
            if ny < 0.5 {
                continue;
            }
            y.iter_mut().for_each(|x| *x /= ny);
            locked_vals.push(lam);
            locked.push(y);
        }
    }
    if locked.len() < p || !verified {
        return Err(SpectrumError::NoConvergence { achieved: locked.len().min(p), requested: p });
    }
    INNER_TOL.with(|t| t.set(opts.inner_tol.min(1e-13)));
    let polished: Vec<Vec<f64>> = locked
        .iter()
        .map(|y| {
            let mut z = vec![0.0; n];
            prob.solve_shifted(sigma, y, &mut z).map(|_| z)
        })
        .collect::<Result<_, _>>()?;
    Ok(rayleigh_ritz(prob, polished, p))
}

/// The `p` smallest eigenvalues of a symmetric problem.
pub fn eigen_smallest_problem<P: SymmetricProblem + ?Sized>(
    prob: &P,
    p: usize,
    opts: &EigenOptions,
    region: &str,
) -> Result<SpectrumResult, SpectrumError> {
    let n = prob.dim();
    if p == 0 || p > n {
        return Err(SpectrumError::InvalidRequest(format!("p = {p} with {n} nodes")));
    }
    let use_dense = match opts.solver {
        SolverChoice::Dense => true,
        SolverChoice::Lanczos => false,
        SolverChoice::Auto => n <= opts.dense_threshold,
    };
    let (vals, vecs, res, solver) = if use_dense {
        let (v, w, r) = dense_smallest(&prob.to_dense(), p, opts.want_vectors);
        (v, w, r, SolverKind::Dense)
    } else {
        let (v, w, r) = lanczos_smallest(prob, p, opts)?;
        (v, w, r, SolverKind::Lanczos)
    };
    Ok(SpectrumResult {
        eigenvalues: vals,
        eigenvectors: if opts.want_vectors { Some(vecs) } else { None },
        solver,
        residuals: res,
        region: region.to_string(),
    })
}

/// The `p` smallest eigenvalues of `L` on its region.
pub fn eigen_smallest(op: &SchrodingerOperator<'_>, p: usize, opts: &EigenOptions) -> Result<SpectrumResult, SpectrumError> {
    let use_dense = match opts.solver {
        SolverChoice::Dense => true,
        SolverChoice::Lanczos => false,
        SolverChoice::Auto => op.dim() <= opts.dense_threshold,
    };
    if use_dense {
        let n = op.dim();
        if p == 0 || p > n {
            return Err(SpectrumError::InvalidRequest(format!("p = {p} with {n} nodes")));
        }
        let (vals, vecs, res) = dense_smallest(&op.dense(), p, opts.want_vectors);
        return Ok(SpectrumResult {
            eigenvalues: vals,
            eigenvectors: if opts.want_vectors { Some(vecs) } else { None },
            solver: SolverKind::Dense,
            residuals: res,
            region: op.mask().label().to_string(),
        });
    }
    if op.spectral.is_none() {
        let sp = Arc::new(PeriodicSpectral::new(op.domain.grid().clone()));
        let op2 = SchrodingerOperator { spectral: Some(sp), ..clone_op(op) };
        return eigen_smallest_problem(&op2, p, opts, op.mask().label());
    }
    eigen_smallest_problem(op, p, opts, op.mask().label())
}

fn clone_op<'a>(op: &SchrodingerOperator<'a>) -> SchrodingerOperator<'a> {
    SchrodingerOperator {
        domain: op.domain,
        mask: op.mask.clone(),
        eps: op.eps,
        potential: op.potential.clone(),
        nodes: op.nodes.clone(),
        position: op.position.clone(),
        inv_sqrt_mass: op.inv_sqrt_mass.clone(),
        spectral: op.spectral.clone(),
        stiffness_ratio: op.stiffness_ratio,
    }
}

/// Zero-eigenvalue tolerance `1e-7 (1 + eps^{-2})`.
pub fn tol_zero(eps: f64) -> f64 {
    1e-7 * (1.0 + 1.0 / (eps * eps))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexReport {
    pub index: usize,
    pub near_zero: usize,
    pub tol_zero: f64,
    pub eigenvalues: Vec<f64>,
    pub solver: SolverKind,
    pub region: String,
}

/// Morse index of `u` on `mask`, counting `lambda < -tol_zero`.
pub fn morse_index_report(
    domain: &Domain,
    potential: Potential,
    u: &ScalarField,
    eps: f64,
    mask: &RegionMask,
    opts: &EigenOptions,
) -> Result<IndexReport, SpectrumError> {
    let op = assemble(domain, potential, u, eps, mask)?.with_preconditioner();
    let n = op.dim();
    let tz = tol_zero(eps);
    let mut p = 6.min(n);
    loop {
        let res = eigen_smallest(&op, p, opts)?;
        let top = *res.eigenvalues.last().unwrap();
        if top < tz && p < n {
            p = (2 * p).min(n);
            continue;
        }
        let index = res.eigenvalues.iter().filter(|&&l| l < -tz).count();
        let near_zero = res.eigenvalues.iter().filter(|&&l| l.abs() <= tz).count();
        return Ok(IndexReport {
            index,
            near_zero,
            tol_zero: tz,
            eigenvalues: res.eigenvalues,
            solver: res.solver,
            region: mask.label().to_string(),
        });
    }
}

pub fn morse_index(
    domain: &Domain,
    potential: Potential,
    u: &ScalarField,
    eps: f64,
    mask: &RegionMask,
) -> Result<usize, SpectrumError> {
    Ok(morse_index_report(domain, potential, u, eps, mask, &EigenOptions::default())?.index)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    pub inner: Vec<f64>,
    pub outer: Vec<f64>,
    /// `lambda_q(inner) - lambda_q(outer)` per `q`.
    pub gaps: Vec<f64>,
}

/// Checks `lambda_q(W1) >= lambda_q(W2) - 1e-9` for `W1 ⊆ W2`.
pub fn spectrum_monotonicity_check(
    domain: &Domain,
    potential: Potential,
    u: &ScalarField,
    eps: f64,
    w1: &RegionMask,
    w2: &RegionMask,
    p: usize,
    opts: &EigenOptions,
) -> Result<MonotonicityReport, SpectrumError> {
    if !w1.is_subset_of(w2) {
        return Err(SpectrumError::InvalidRequest("inner region is not contained in outer region".into()));
    }
    let a = eigen_smallest(&assemble(domain, potential, u, eps, w1)?, p, opts)?;
    let b = eigen_smallest(&assemble(domain, potential, u, eps, w2)?, p, opts)?;
    let gaps: Vec<f64> = a.eigenvalues.iter().zip(&b.eigenvalues).map(|(x, y)| x - y).collect();
    for (q, g) in gaps.iter().enumerate() {
        if *g < -1e-9 {
            return Err(SpectrumError::Monotonicity { q: q + 1, small: a.eigenvalues[q], large: b.eigenvalues[q] });
        }
    }
    Ok(MonotonicityReport { inner: a.eigenvalues, outer: b.eigenvalues, gaps })
}

/// Indices on two separated regions and on their union.
pub fn index_additivity(
    domain: &Domain,
    potential: Potential,
    u: &ScalarField,
    eps: f64,
    w1: &RegionMask,
    w2: &RegionMask,
    opts: &EigenOptions,
) -> Result<(usize, usize, usize), SpectrumError> {
    if !w1.is_separated_from(w2) {
        return Err(SpectrumError::InvalidRequest("regions share nodes or grid edges".into()));
    }
    let union = w1.union(w2)?;
    let i1 = morse_index_report(domain, potential, u, eps, w1, opts)?.index;
    let i2 = morse_index_report(domain, potential, u, eps, w2, opts)?.index;
    let iu = morse_index_report(domain, potential, u, eps, &union, opts)?.index;
    Ok((i1, i2, iu))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallStability {
    pub center: Vec3,
    pub radius: f64,
    pub index: usize,
    pub stable: bool,
    pub lambda_1: f64,
}

/// Per-ball Morse indices for balls that must cover the band `{|u| < 0.9}`.
pub fn stability_scan(
    domain: &Domain,
    potential: Potential,
    u: &ScalarField,
    eps: f64,
    centers: &[Vec3],
    radius: f64,
    opts: &EigenOptions,
) -> Result<Vec<BallStability>, SpectrumError> {
    let g = domain.grid().clone();
    let balls: Vec<RegionMask> = centers.iter().map(|c| RegionMask::ball(g.clone(), c, radius)).collect();
    let missed = (0..g.len())
        .filter(|&i| u.values()[i].abs() < 0.9 && !balls.iter().any(|b| b.contains(i)))
        .count();
    if missed > 0 {
        return Err(SpectrumError::CoverageFailure { missed });
    }
    balls
        .par_iter()
        .zip(centers.par_iter())
        .map(|(b, c)| {
            let rep = morse_index_report(domain, potential, u, eps, b, opts)?;
            Ok(BallStability {
                center: *c,
                radius,
                index: rep.index,
                stable: rep.index == 0,
                lambda_1: rep.eigenvalues[0],
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::TorusGrid;
    use std::f64::consts::PI;

    fn unit2(n: usize) -> Domain {
        Domain::flat(Arc::new(TorusGrid::new(2, &[1.0, 1.0], &[n, n]).unwrap()))
    }

    fn lattice_eigs(n: usize, eps: f64, w2: f64, count: usize) -> Vec<f64> {
        let h = 1.0 / n as f64;
        let mut v: Vec<f64> = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| {
                let s = |k: usize| 4.0 / (h * h) * (PI * k as f64 / n as f64).sin().powi(2);
                s(i) + s(j) + w2 / (eps * eps)
            })
            .collect();
        v.sort_by(f64::total_cmp);
        v.truncate(count);
        v
    }

    #[test]
    fn constant_states() {
        let d = unit2(64);
        let p = Potential::Quartic;
        let full = RegionMask::full(d.grid().clone());
        let zero = ScalarField::zeros(d.grid().clone());
        let opts = EigenOptions { solver: SolverChoice::Lanczos, ..Default::default() };
        let op = assemble(&d, p, &zero, 0.5, &full).unwrap();
        let r = eigen_smallest(&op, 5, &opts).unwrap();
        assert_eq!(r.solver, SolverKind::Lanczos);
        assert!((r.eigenvalues[0] + 4.0).abs() < 1e-10, "{:?}", r.eigenvalues);
        let exact = lattice_eigs(64, 0.5, -1.0, 5);
        for (a, b) in r.eigenvalues.iter().zip(&exact) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
        let one = ScalarField::constant(d.grid().clone(), 1.0);
        let op1 = assemble(&d, p, &one, 0.5, &full).unwrap();
        let r1 = eigen_smallest(&op1, 1, &opts).unwrap();
        assert!((r1.eigenvalues[0] - 8.0).abs() < 1e-10);
    }

    #[test]
    fn empty_region_rejected() {
        let d = unit2(16);
        let u = ScalarField::zeros(d.grid().clone());
        let empty = RegionMask::full(d.grid().clone()).complement();
        assert!(matches!(assemble(&d, Potential::Quartic, &u, 0.1, &empty), Err(SpectrumError::EmptyRegion(_))));
    }

    #[test]
    fn lattice_index_counts() {
        let d = unit2(64);
        let p = Potential::Quartic;
        let full = RegionMask::full(d.grid().clone());
        let zero = ScalarField::zeros(d.grid().clone());
        let one = ScalarField::constant(d.grid().clone(), 1.0);
        assert_eq!(morse_index(&d, p, &one, 0.1, &full).unwrap(), 0);
        assert_eq!(morse_index(&d, p, &zero, 0.5, &full).unwrap(), 1);
        assert_eq!(morse_index(&d, p, &zero, 0.1, &full).unwrap(), 9);
    }

    #[test]
    fn dense_operator_is_symmetric() {
        let g = Arc::new(TorusGrid::new(2, &[1.0, 1.0], &[16, 16]).unwrap());
        let metric = crate::domain::Metric::Conformal {
            modes: vec![crate::domain::ConformalMode { amplitude: 0.1, wavenumbers: vec![1, 2], phase: 0.0 }],
        };
        let d = Domain::new(g.clone(), metric);
        let u = ScalarField::from_fn(g.clone(), |x| (2.0 * PI * x[0]).sin());
        let mask = RegionMask::ball(g.clone(), &[0.5, 0.5, 0.0], 0.3);
        let op = assemble(&d, Potential::Quartic, &u, 0.2, &mask).unwrap();
        let m = op.dense();
        assert!((&m - m.transpose()).amax() <= 1e-12 * m.amax());
        let m2 = op.to_dense();
        assert!((&m - &m2).amax() <= 1e-12 * m.amax());
    }

    #[test]
    fn eigenpairs_match_quadratic_form() {
        let g = Arc::new(TorusGrid::new(2, &[1.0, 1.0], &[24, 24]).unwrap());
        let d = Domain::flat(g.clone());
        let u = ScalarField::from_fn(g.clone(), |x| (2.0 * PI * x[0]).sin() * (2.0 * PI * x[1]).cos());
        let eps = 0.15;
        let op = assemble(&d, Potential::Quartic, &u, eps, &RegionMask::full(g.clone())).unwrap();
        let opts = EigenOptions { solver: SolverChoice::Lanczos, want_vectors: true, ..Default::default() };
        let r = eigen_smallest(&op, 6, &opts).unwrap();
        for (k, y) in r.eigenvectors.as_ref().unwrap().iter().enumerate() {
            let phi = op.to_nodal(y);
            let num = op.quadratic_form(&phi);
            let den = d.integrate_slice(&phi.iter().map(|v| v * v).collect::<Vec<_>>(), None);
            let lam = r.eigenvalues[k];
            assert!((num / den - lam).abs() <= 1e-8 * (1.0 + lam.abs()));
            assert!(r.residuals[k] <= 1e-8 * (1.0 + lam.abs()), "{}", r.residuals[k]);
            let phi_f = ScalarField::new(g.clone(), phi).unwrap();
            let sv = crate::allen_cahn::second_variation(&d, Potential::Quartic, &u, eps, &phi_f, None).unwrap();
            assert!((sv / eps - num).abs() <= 1e-10 * num.abs().max(1.0));
        }
        let dense = eigen_smallest(&op, 6, &EigenOptions { solver: SolverChoice::Dense, ..Default::default() }).unwrap();
        for (a, b) in r.eigenvalues.iter().zip(&dense.eigenvalues) {
            assert!((a - b).abs() < 1e-8);
        }
    }
}
