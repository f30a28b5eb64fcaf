//! Critical points of the Allen-Cahn energy: stable states by gradient flow and Newton,
//! index-one saddles by a climbing-image string method, and continuation in `eps`.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::allen_cahn::{energy, total_energy, EnergyBreakdown, Potential};
use crate::domain::{Domain, Metric, RegionMask, ScalarField, TorusGrid};
use crate::error::SolverError;
use crate::linalg::{dot, norm_inf, pcg, pminres, PeriodicSpectral};
use crate::spectrum::{assemble, eigen_smallest, morse_index_report, EigenOptions, IndexReport, SymmetricProblem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    GradientFlow,
    Newton,
    MountainPass,
    Continuation,
}

/// A converged critical point with its certified Morse index.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CriticalPoint {
    #[serde(skip)]
    pub u: Option<ScalarField>,
    pub epsilon: f64,
    pub residual_linf: f64,
    pub energy: EnergyBreakdown,
    pub sup_norm: f64,
    pub morse_index: usize,
    pub near_zero: usize,
    pub method: Method,
    /// Regime warnings such as an interface wider than the domain.
    pub flags: Vec<String>,
    pub flow_steps: usize,
    /// Residual after each Newton iterate, starting with the input residual.
    pub newton_history: Vec<f64>,
}

impl CriticalPoint {
    pub fn field(&self) -> &ScalarField {
        self.u.as_ref().expect("critical point carries its field")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub potential: Potential,
    pub tol_res: f64,
    pub max_steps: usize,
    /// Time step in units of `eps^2`.
    pub dt_factor: f64,
    /// Newton starts once `eps^2 * residual_linf` is below this.
    pub newton_entry: f64,
    pub newton_max_iter: usize,
    pub tol_overshoot: f64,
    pub eigen: EigenOptions,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            potential: Potential::Quartic,
            tol_res: 1e-8,
            max_steps: 20_000,
            dt_factor: 10.0,
            newton_entry: 0.05,
            newton_max_iter: 40,
            tol_overshoot: 1e-8,
            eigen: EigenOptions::default(),
        }
    }
}

/// Result of a gradient flow run before certification.
#[derive(Debug, Clone)]
pub struct FlowRun {
    pub u: ScalarField,
    pub steps: usize,
    pub residual_linf: f64,
    pub energies: Vec<f64>,
}

fn check_eps(eps: f64) -> Result<(), SolverError> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(crate::error::AllenCahnError::NonPositiveEpsilon(eps).into())
    }
}

fn residual_vec(domain: &Domain, potential: Potential, u: &[f64], eps: f64) -> Vec<f64> {
    let inv = 1.0 / (eps * eps);
    let mut r = vec![0.0; u.len()];
    domain.apply_stiffness(u, &mut r);
    r.par_iter_mut()
        .zip(u.par_iter())
        .zip(domain.volume_density().par_iter())
        .for_each(|((ri, &ui), v)| *ri = -*ri / v - inv * potential.dw(ui));
    r
}

/// Solves `(c - Lap_g) x = r` on the torus.
struct Helmholtz<'a> {
    domain: &'a Domain,
    spectral: PeriodicSpectral,
    c: f64,
    vbar: f64,
    wbar: f64,
}

impl<'a> Helmholtz<'a> {
    fn new(domain: &'a Domain, c: f64) -> Self {
        let n = domain.len() as f64;
        let vbar = domain.volume_density().iter().sum::<f64>() / n;
        let wbar = domain.edge_weights().iter().map(|w| w[0]).sum::<f64>() / n;
        Self { domain, spectral: PeriodicSpectral::new(domain.grid().clone()), c, vbar, wbar }
    }

    fn solve(&self, r: &[f64]) -> Vec<f64> {
        if self.domain.is_flat() {
            return self.spectral.solve_helmholtz(self.c, r);
        }
        let v = self.domain.volume_density();
        let b: Vec<f64> = r.iter().zip(v).map(|(a, w)| a * w).collect();
        let apply = |x: &[f64], y: &mut [f64]| {
            self.domain.apply_stiffness(x, y);
            for i in 0..x.len() {
                y[i] += self.c * v[i] * x[i];
            }
        };
        let (c, vb, wb) = (self.c, self.vbar, self.wbar);
        let pre = |x: &[f64], z: &mut [f64]| z.copy_from_slice(&self.spectral.apply_multiplier(x, |s| 1.0 / (c * vb + wb * s)));
        let mut x = self.spectral.apply_multiplier(&b, |s| 1.0 / (c * vb + wb * s));
        // SPD by construction; failure here means non-finite input
        let _ = pcg(apply, pre, &b, &mut x, 1e-12, 2000);
        x
    }
}

/// Semi-implicit stabilised flow `((1/dt + S) - Lap) u' = (1/dt + S) u - eps^{-2} W'(u)`.
pub fn gradient_flow_run(
    domain: &Domain,
    u0: &ScalarField,
    eps: f64,
    tol_res: f64,
    max_steps: usize,
    opts: &SolverOptions,
) -> Result<FlowRun, SolverError> {
    flow(domain, u0, eps, tol_res, max_steps, opts, true)
}

/// At most `steps` flow steps, stopping early at `tol_res`; returns the state either way.
pub fn gradient_flow_steps(
    domain: &Domain,
    u0: &ScalarField,
    eps: f64,
    tol_res: f64,
    steps: usize,
    opts: &SolverOptions,
) -> Result<FlowRun, SolverError> {
    flow(domain, u0, eps, tol_res, steps, opts, false)
}

fn flow(
    domain: &Domain,
    u0: &ScalarField,
    eps: f64,
    tol_res: f64,
    max_steps: usize,
    opts: &SolverOptions,
    strict: bool,
) -> Result<FlowRun, SolverError> {
    check_eps(eps)?;
    u0.check_finite()?;
    if **u0.grid() != **domain.grid() {
        return Err(crate::error::DomainError::GridMismatch.into());
    }
    let pot = opts.potential;
    let inv = 1.0 / (eps * eps);
    let m = u0.sup_norm().max(1.0);
    let dt = opts.dt_factor * eps * eps;
    let c = 1.0 / dt + inv * pot.max_abs_ddw(m);
    let solver = Helmholtz::new(domain, c);
    let mut u = u0.values().to_vec();
    let mut energies = vec![total_energy(domain, pot, &u, eps)];
    let mut res = residual_vec(domain, pot, &u, eps);
    let mut rl = norm_inf(&res);
    let mut steps = 0;
    while rl > tol_res {
        if steps >= max_steps {
            if strict {
                return Err(SolverError::NonConvergence { steps, residual: rl });
            }
            break;
        }
        let delta = solver.solve(&res);
        u.par_iter_mut().zip(delta.par_iter()).for_each(|(a, d)| *a += d);
        steps += 1;
        let sup = norm_inf(&u);
        if !(sup <= 2.0) {
            return Err(SolverError::Divergence { sup_norm: sup });
        }
        energies.push(total_energy(domain, pot, &u, eps));
        res = residual_vec(domain, pot, &u, eps);
        rl = norm_inf(&res);
    }
    Ok(FlowRun { u: ScalarField::new(domain.grid().clone(), u)?, steps, residual_linf: rl, energies })
}

fn certify(
    domain: &Domain,
    u: ScalarField,
    eps: f64,
    method: Method,
    opts: &SolverOptions,
    flow_steps: usize,
    newton_history: Vec<f64>,
) -> Result<CriticalPoint, SolverError> {
    let pot = opts.potential;
    let residual_linf = norm_inf(&residual_vec(domain, pot, u.values(), eps));
    let sup_norm = u.sup_norm();
    let e = energy(domain, pot, &u, eps, None)?;
    let rep = certify_index(domain, pot, &u, eps, &opts.eigen)?;
    let mut flags = Vec::new();
    if sup_norm > 1.0 + opts.tol_overshoot {
        flags.push(format!("sup norm {sup_norm:.12} exceeds 1"));
    }
    Ok(CriticalPoint {
        u: Some(u),
        epsilon: eps,
        residual_linf,
        energy: e,
        sup_norm,
        morse_index: rep.index,
        near_zero: rep.near_zero,
        method,
        flags,
        flow_steps,
        newton_history,
    })
}

/// Morse index of `u` on the whole torus.
pub fn certify_index(
    domain: &Domain,
    potential: Potential,
    u: &ScalarField,
    eps: f64,
    opts: &EigenOptions,
) -> Result<IndexReport, SolverError> {
    Ok(morse_index_report(domain, potential, u, eps, &RegionMask::full(domain.grid().clone()), opts)?)
}

/// Gradient flow to `tol_res`, then index certification.
pub fn gradient_flow(
    domain: &Domain,
    u0: &ScalarField,
    eps: f64,
    tol_res: f64,
    max_steps: usize,
    opts: &SolverOptions,
) -> Result<CriticalPoint, SolverError> {
    let run = gradient_flow_run(domain, u0, eps, tol_res, max_steps, opts)?;
    certify(domain, run.u, eps, Method::GradientFlow, opts, run.steps, Vec::new())
}

/// Threshold below which an eigenvalue of the linearisation counts as zero.
pub fn singular_tolerance(domain: &Domain, potential: Potential, u: &[f64], eps: f64) -> f64 {
    let lap: f64 = domain.grid().spacing().iter().map(|h| 4.0 / (h * h)).sum();
    let vmax = u.iter().map(|&v| potential.ddw(v).abs()).fold(0.0, f64::max) / (eps * eps);
    1e-10 * (lap + vmax)
}

/// Orthonormal span of `chi_C d_a u` over interface components `C` and axes `a`,
/// expressed in the operator's symmetric basis.
fn translation_span(domain: &Domain, u: &ScalarField, op: &crate::spectrum::SchrodingerOperator<'_>) -> Vec<Vec<f64>> {
    let g = domain.grid();
    let inside: Vec<bool> = u.values().iter().map(|v| v.abs() < 0.9).collect();
    let band = RegionMask::new(g.clone(), inside, "band").expect("mask length matches");
    let du = domain.differential_slice(u.values());
    let mut span: Vec<Vec<f64>> = Vec::new();
    for comp in band.components() {
        // widen by one layer so the profile tails are included
        let widened: Vec<bool> = (0..g.len())
            .map(|i| comp.contains(i) || (0..g.dim()).any(|a| comp.contains(g.shift(i, a, 1)) || comp.contains(g.shift(i, a, -1))))
            .collect();
        for a in 0..g.dim() {
            let phi: Vec<f64> = (0..g.len()).map(|i| if widened[i] { du[i][a] } else { 0.0 }).collect();
            let mut y = op.from_nodal(&phi);
            for b in &span {
                let c = dot(&y, b);
                y.iter_mut().zip(b).for_each(|(p, q)| *p -= c * q);
            }
            let n = dot(&y, &y).sqrt();
            let scale = op.from_nodal(&phi).iter().map(|v| v * v).sum::<f64>().sqrt();
            if n > 0.0 && n > 1e-8 * scale {
                y.iter_mut().for_each(|v| *v /= n);
                span.push(y);
            }
        }
    }
    span
}

/// Fails with `SingularJacobian` when the linearisation has a zero eigenvalue that is not
/// an interface translation.
pub fn check_nonsingular(
    domain: &Domain,
    potential: Potential,
    u: &ScalarField,
    eps: f64,
    opts: &EigenOptions,
) -> Result<(), SolverError> {
    let full = RegionMask::full(domain.grid().clone());
    let op = assemble(domain, potential, u, eps, &full)?.with_preconditioner();
    let p = 8.min(op.dim());
    let res = eigen_smallest(&op, p, &EigenOptions { want_vectors: true, ..*opts })?;
    let tol = singular_tolerance(domain, potential, u.values(), eps);
    let vectors = res.eigenvectors.as_ref().expect("vectors requested");
    let mut span: Option<Vec<Vec<f64>>> = None;
    for (lam, y) in res.eigenvalues.iter().zip(vectors) {
        if lam.abs() > tol {
            continue;
        }
        let span = span.get_or_insert_with(|| translation_span(domain, u, &op));
        let overlap: f64 = span.iter().map(|t| dot(t, y).powi(2)).sum();
        if overlap < 0.9 {
            return Err(SolverError::SingularJacobian { eigenvalue: *lam, tol });
        }
    }
    Ok(())
}

/// Damped Newton iteration on `Lap u - eps^{-2} W'(u) = 0` with MINRES inner solves.
fn newton_core(
    domain: &Domain,
    u0: &[f64],
    eps: f64,
    tol_res: f64,
    opts: &SolverOptions,
) -> Result<(Vec<f64>, Vec<f64>), SolverError> {
    let pot = opts.potential;
    let inv = 1.0 / (eps * eps);
    let mut u = u0.to_vec();
    let mut r = residual_vec(domain, pot, &u, eps);
    let mut rl = norm_inf(&r);
    let mut history = vec![rl];
    if rl <= tol_res {
        return Ok((u, history));
    }
    if rl * eps * eps > opts.newton_entry {
        return Err(SolverError::NonConvergence { steps: 0, residual: rl });
    }
    let n = domain.len() as f64;
    let vbar = domain.volume_density().iter().sum::<f64>() / n;
    let wbar = domain.edge_weights().iter().map(|w| w[0]).sum::<f64>() / n;
    let spectral = PeriodicSpectral::new(domain.grid().clone());
    let cpre = 2.0 * inv;
    let v = domain.volume_density();
    for it in 1..=opts.newton_max_iter {
        let jac: Vec<f64> = u.iter().map(|&x| inv * pot.ddw(x)).collect();
        let apply = |x: &[f64], y: &mut [f64]| {
            domain.apply_stiffness(x, y);
            for i in 0..x.len() {
                y[i] += v[i] * jac[i] * x[i];
            }
        };
        let pre = |x: &[f64], z: &mut [f64]| {
            z.copy_from_slice(&spectral.apply_multiplier(x, |s| 1.0 / (cpre * vbar + wbar * s)))
        };
        let b: Vec<f64> = r.iter().zip(v).map(|(a, w)| a * w).collect();
        let mut delta = vec![0.0; u.len()];
        let inner = (1e-2 * tol_res / rl).clamp(1e-13, 1e-6);
        pminres(apply, pre, &b, &mut delta, inner, 4000).map_err(|_| SolverError::NonConvergence { steps: it, residual: rl })?;
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..10 {
            let trial: Vec<f64> = u.iter().zip(&delta).map(|(a, d)| a + alpha * d).collect();
            let rt = residual_vec(domain, pot, &trial, eps);
            let rtl = norm_inf(&rt);
            if rtl.is_finite() && (rtl < rl || rtl <= tol_res) {
                u = trial;
                r = rt;
                rl = rtl;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            return Err(SolverError::NonConvergence { steps: it, residual: rl });
        }
        history.push(rl);
        if rl <= tol_res {
            return Ok((u, history));
        }
    }
    Err(SolverError::NonConvergence { steps: opts.newton_max_iter, residual: rl })
}

/// Newton refinement of an approximate critical point, followed by index certification.
pub fn newton_refine(domain: &Domain, u: &ScalarField, eps: f64, tol_res: f64, opts: &SolverOptions) -> Result<CriticalPoint, SolverError> {
    check_eps(eps)?;
    u.check_finite()?;
    check_nonsingular(domain, opts.potential, u, eps, &opts.eigen)?;
    let (v, history) = newton_core(domain, u.values(), eps, tol_res, opts)?;
    let field = if history.len() == 1 { u.clone() } else { ScalarField::new(domain.grid().clone(), v)? };
    certify(domain, field, eps, Method::Newton, opts, 0, history)
}

/// Gradient flow to the Newton entry threshold, then Newton to `tol_res`.
fn converge(domain: &Domain, u0: &ScalarField, eps: f64, opts: &SolverOptions) -> Result<(ScalarField, usize, Vec<f64>), SolverError> {
    let entry = opts.newton_entry / (eps * eps);
    let target = entry.max(opts.tol_res);
    let run = gradient_flow_run(domain, u0, eps, target, opts.max_steps, opts)?;
    if run.residual_linf <= opts.tol_res {
        return Ok((run.u, run.steps, vec![run.residual_linf]));
    }
    check_nonsingular(domain, opts.potential, &run.u, eps, &opts.eigen)?;
    let (v, history) = newton_core(domain, run.u.values(), eps, opts.tol_res, opts)?;
    Ok((ScalarField::new(domain.grid().clone(), v)?, run.steps, history))
}

/// Periodic band profile: about `+1` on `lo < x_axis < hi` and `-1` elsewhere, built from
/// heteroclinics summed over periodic images so that it is smooth across the seam.
pub fn stripe_profile(grid: &Arc<TorusGrid>, potential: Potential, eps: f64, axis: usize, lo: f64, hi: f64) -> ScalarField {
    let l = grid.lengths()[axis];
    ScalarField::from_fn(grid.clone(), |x| {
        let t = x[axis];
        -1.0 + (-3..=3)
            .map(|k| {
                let s = t + k as f64 * l;
                potential.heteroclinic(s - lo, eps) - potential.heteroclinic(s - hi, eps)
            })
            .sum::<f64>()
    })
}

/// Decreasing `eps` values with the grid used at each step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsSchedule {
    pub epsilons: Vec<f64>,
    pub resolutions: Vec<Vec<usize>>,
    pub min_nodes_per_width: f64,
}

impl EpsSchedule {
    /// Chooses per-axis resolutions with at least `m_min` nodes across width `eps`,
    /// rounded up to a multiple of 8 and capped at `max_resolution`.
    pub fn with_policy(
        epsilons: Vec<f64>,
        lengths: &[f64],
        m_min: f64,
        max_resolution: usize,
    ) -> Result<Self, SolverError> {
        let resolutions = epsilons
            .iter()
            .map(|&e| {
                lengths
                    .iter()
                    .map(|&l| {
                        let n = (m_min * l / e - 1e-9).ceil() as usize;
                        (n.div_ceil(8) * 8).clamp(8, max_resolution.max(8))
                    })
                    .collect()
            })
            .collect();
        Self::new(epsilons, resolutions, lengths, m_min)
    }

    pub fn new(epsilons: Vec<f64>, resolutions: Vec<Vec<usize>>, lengths: &[f64], m_min: f64) -> Result<Self, SolverError> {
        if epsilons.is_empty() || epsilons.len() != resolutions.len() {
            return Err(SolverError::InvalidSchedule("one resolution per epsilon is required".into()));
        }
        for (k, &e) in epsilons.iter().enumerate() {
            if !(e > 0.0 && e.is_finite()) {
                return Err(SolverError::InvalidSchedule(format!("epsilon {e} at step {k}")));
            }
            if k > 0 && e >= epsilons[k - 1] {
                return Err(SolverError::InvalidSchedule(format!("not strictly decreasing at step {k}")));
            }
            if resolutions[k].len() != lengths.len() {
                return Err(SolverError::InvalidSchedule(format!("resolution rank at step {k}")));
            }
            for (a, (&n, &l)) in resolutions[k].iter().zip(lengths).enumerate() {
                let m = e * n as f64 / l;
                if m < m_min - 1e-9 {
                    return Err(SolverError::InvalidSchedule(format!(
                        "step {k}: {m:.2} nodes per interface width on axis {a}, need {m_min}"
                    )));
                }
            }
        }
        Ok(Self { epsilons, resolutions, min_nodes_per_width: m_min })
    }

    pub fn len(&self) -> usize {
        self.epsilons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epsilons.is_empty()
    }
}

/// Output of a continuation run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Continuation {
    pub points: Vec<CriticalPoint>,
    /// `E_0 = max_i E(u_i)`.
    pub energy_bound: f64,
    pub index_nonincreasing: bool,
    pub flags: Vec<String>,
}

/// Follows a critical point along a decreasing `eps` schedule, refining the grid as required.
pub fn continue_in_eps(
    seed: &CriticalPoint,
    metric: &Metric,
    schedule: &EpsSchedule,
    opts: &SolverOptions,
) -> Result<Continuation, SolverError> {
    continue_from_field(seed.field(), metric, schedule, opts)
}

/// Continuation started from an arbitrary field, converged and certified at every step.
pub fn continue_from_field(
    seed_field: &ScalarField,
    metric: &Metric,
    schedule: &EpsSchedule,
    opts: &SolverOptions,
) -> Result<Continuation, SolverError> {
    let dim = seed_field.grid().dim();
    let lengths = seed_field.grid().lengths().to_vec();
    let mut prev = seed_field.clone();
    let mut points: Vec<CriticalPoint> = Vec::with_capacity(schedule.len());
    for (step, (&eps, res)) in schedule.epsilons.iter().zip(&schedule.resolutions).enumerate() {
        let wrap = |e: SolverError| SolverError::Step { step, epsilon: eps, source: Box::new(e) };
        let grid = Arc::new(TorusGrid::new(dim, &lengths, res).map_err(|e| wrap(e.into()))?);
        let domain = Domain::new(grid.clone(), metric.clone());
        let start = if **prev.grid() == *grid { prev.clone() } else { prev.resample(grid.clone()).map_err(|e| wrap(e.into()))? };
        let (u, steps, history) = converge(&domain, &start, eps, opts).map_err(wrap)?;
        let mut cp = certify(&domain, u, eps, Method::Continuation, opts, steps, history).map_err(wrap)?;
        if let Some(last) = points.last() {
            if cp.morse_index > last.morse_index {
                cp.flags.push(format!("index increased from {} to {}", last.morse_index, cp.morse_index));
            }
        }
        prev = cp.field().clone();
        points.push(cp);
    }
    let energy_bound = points.iter().map(|p| p.energy.total).fold(0.0, f64::max);
    let index_nonincreasing = points.windows(2).all(|w| w[1].morse_index <= w[0].morse_index);
    let mut flags = Vec::new();
    if !index_nonincreasing {
        flags.push("morse index increased along the schedule".into());
    }
    Ok(Continuation { points, energy_bound, index_nonincreasing, flags })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MountainPassOptions {
    pub endpoints: (f64, f64),
    pub path_points: usize,
    pub max_iter: usize,
    /// String iterations before the top image starts climbing.
    pub warmup: usize,
    pub e_min: f64,
    pub index_bound: usize,
    pub seed: u64,
    pub noise: f64,
}

impl Default for MountainPassOptions {
    fn default() -> Self {
        Self {
            endpoints: (-1.0, 1.0),
            path_points: 16,
            max_iter: 4000,
            warmup: 30,
            e_min: 1e-3,
            index_bound: 1,
            seed: 0,
            noise: 1e-2,
        }
    }
}

fn mass_dot(domain: &Domain, a: &[f64], b: &[f64]) -> f64 {
    let w: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    domain.integrate_slice(&w, None)
}

/// Redistributes `images[lo..=hi]` to equal `L^2` arc length, keeping both ends.
fn reparametrize(domain: &Domain, images: &mut [Vec<f64>], lo: usize, hi: usize) {
    if hi <= lo + 1 {
        return;
    }
    let mut arc = vec![0.0; hi - lo + 1];
    for k in lo + 1..=hi {
        let d: Vec<f64> = images[k].iter().zip(&images[k - 1]).map(|(a, b)| a - b).collect();
        arc[k - lo] = arc[k - lo - 1] + mass_dot(domain, &d, &d).sqrt();
    }
    let total = arc[hi - lo];
    if !(total > 0.0) {
        return;
    }
    let old: Vec<Vec<f64>> = images[lo..=hi].to_vec();
    for k in lo + 1..hi {
        let target = total * (k - lo) as f64 / (hi - lo) as f64;
        let j = arc.partition_point(|&s| s <= target).clamp(1, hi - lo);
        let t = ((target - arc[j - 1]) / (arc[j] - arc[j - 1]).max(1e-300)).clamp(0.0, 1.0);
        images[k] = old[j - 1].iter().zip(&old[j]).map(|(a, b)| a + t * (b - a)).collect();
    }
}

/// Climbing-image string method between the two wells followed by Newton refinement.
pub fn mountain_pass(
    domain: &Domain,
    eps: f64,
    mp: &MountainPassOptions,
    opts: &SolverOptions,
) -> Result<CriticalPoint, SolverError> {
    check_eps(eps)?;
    let (a, b) = mp.endpoints;
    if a == b {
        return Err(SolverError::DegeneratePath("endpoints coincide".into()));
    }
    if mp.path_points < 16 {
        return Err(SolverError::DegeneratePath(format!("{} path points, need at least 16", mp.path_points)));
    }
    let pot = opts.potential;
    let g = domain.grid().clone();
    let p = mp.path_points;
    let mut rng = ChaCha8Rng::seed_from_u64(mp.seed);
    let l0 = g.lengths()[0];
    let profile: Vec<f64> = (0..g.len()).map(|i| (2.0 * std::f64::consts::PI * g.position(i)[0] / l0).cos()).collect();
    let noise: Vec<f64> = (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut images: Vec<Vec<f64>> = (0..p)
        .map(|k| {
            let s = k as f64 / (p - 1) as f64;
            let bump = (std::f64::consts::PI * s).sin();
            (0..g.len())
                .map(|i| a + (b - a) * s + 0.5 * (b - a) * bump * (profile[i] + mp.noise * noise[i]))
                .collect()
        })
        .collect();
    let m = images.iter().flat_map(|v| v.iter()).fold(1.0_f64, |acc, v| acc.max(v.abs()));
    let c = 1.0 / (opts.dt_factor * eps * eps) + pot.max_abs_ddw(m) / (eps * eps);
    let solver = Helmholtz::new(domain, c);
    let entry = opts.newton_entry / (eps * eps);
    let mut top = p / 2;
    let mut top_res = f64::INFINITY;
    let mut iterations = 0;
    for it in 0..mp.max_iter {
        iterations = it + 1;
        let energies: Vec<f64> = images.iter().map(|u| total_energy(domain, pot, u, eps)).collect();
        top = (1..p - 1).fold(1, |best, k| if energies[k] > energies[best] { k } else { best });
        let climbing = it >= mp.warmup;
        let tangent: Vec<f64> = {
            let d: Vec<f64> = images[top + 1].iter().zip(&images[top - 1]).map(|(x, y)| x - y).collect();
            let n = mass_dot(domain, &d, &d).sqrt().max(1e-300);
            d.into_iter().map(|x| x / n).collect()
        };
        let updates: Vec<(Vec<f64>, f64)> = (1..p - 1)
            .into_par_iter()
            .map(|k| {
                let r = residual_vec(domain, pot, &images[k], eps);
                let rl = norm_inf(&r);
                let mut d = solver.solve(&r);
                if climbing && k == top {
                    let t = mass_dot(domain, &d, &tangent);
                    d.iter_mut().zip(&tangent).for_each(|(x, y)| *x -= 2.0 * t * y);
                }
                (d, rl)
            })
            .collect();
        for (k, (d, rl)) in (1..p - 1).zip(updates) {
            images[k].iter_mut().zip(&d).for_each(|(x, y)| *x += y);
            if k == top {
                top_res = rl;
            }
        }
        let sup = images.iter().map(|v| norm_inf(v)).fold(0.0, f64::max);
        if !(sup <= 2.0) {
            return Err(SolverError::Divergence { sup_norm: sup });
        }
        if climbing {
            reparametrize(domain, &mut images, 0, top);
            reparametrize(domain, &mut images, top, p - 1);
            if top_res <= entry {
                break;
            }
        } else {
            reparametrize(domain, &mut images, 0, p - 1);
        }
    }
    if top_res > entry {
        return Err(SolverError::NonConvergence { steps: iterations, residual: top_res });
    }
    let u_top = ScalarField::new(g.clone(), images[top].clone())?;
    check_nonsingular(domain, pot, &u_top, eps, &opts.eigen)?;
    let (v, history) = newton_core(domain, u_top.values(), eps, opts.tol_res, opts)?;
    let mut cp = certify(domain, ScalarField::new(g.clone(), v)?, eps, Method::MountainPass, opts, iterations, history)?;
    if eps >= g.diameter() {
        cp.flags.push("interface width exceeds domain".into());
    }
    if cp.energy.total < mp.e_min {
        return Err(SolverError::BelowEnergyFloor { energy: cp.energy.total, floor: mp.e_min });
    }
    if cp.morse_index > mp.index_bound {
        return Err(SolverError::IndexViolation { index: cp.morse_index, bound: mp.index_bound });
    }
    Ok(cp)
}

/// Operator used by Newton, exposed for diagnostics: `K + M W''(u)/eps^2` in the symmetric basis.
pub fn linearization<'a>(
    domain: &'a Domain,
    potential: Potential,
    u: &ScalarField,
    eps: f64,
) -> Result<impl SymmetricProblem + 'a, SolverError> {
    Ok(assemble(domain, potential, u, eps, &RegionMask::full(domain.grid().clone()))?.with_preconditioner())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn unit2(n: usize) -> Domain {
        Domain::flat(Arc::new(TorusGrid::new(2, &[1.0, 1.0], &[n, n]).unwrap()))
    }

    fn stripes(g: &Arc<TorusGrid>, eps: f64) -> ScalarField {
        stripe_profile(g, Potential::Quartic, eps, 0, 0.25, 0.75)
    }

    #[test]
    fn stripe_profile_is_smooth_and_symmetric() {
        let d = unit2(80);
        let u = stripes(d.grid(), 0.1);
        let r = crate::allen_cahn::residual_linf(&d, Potential::Quartic, &u, 0.1).unwrap();
        assert!(r < 2.0, "{r}");
        let peak = 2.0 * (0.25 / (0.1 * 2f64.sqrt())).tanh() - 1.0;
        assert!((u.interpolate(&[0.5, 0.0, 0.0]) - peak).abs() < 1e-3);
        for x in [0.0, 0.1, 0.2, 0.3, 0.45] {
            assert!((u.interpolate(&[x, 0.4, 0.0]) + u.interpolate(&[x + 0.5, 0.4, 0.0])).abs() < 1e-12);
        }
        assert!(u.interpolate(&[0.25, 0.3, 0.0]).abs() < 1e-12);
    }

    #[test]
    fn flow_to_the_well() {
        let d = unit2(16);
        let u0 = ScalarField::constant(d.grid().clone(), 0.9);
        let cp = gradient_flow(&d, &u0, 0.1, 1e-10, 10_000, &SolverOptions::default()).unwrap();
        assert!((cp.field().values()[0] - 1.0).abs() < 1e-10);
        assert!(cp.energy.total < 1e-18);
        assert_eq!(cp.morse_index, 0);
    }

    #[test]
    fn flow_energy_monotone_and_stripes() {
        let d = unit2(80);
        let eps = 0.1;
        let u0 = ScalarField::from_fn(d.grid().clone(), |x| (10.0 * (2.0 * PI * x[0]).sin()).tanh());
        let run = gradient_flow_run(&d, &u0, eps, 1e-6, 20_000, &SolverOptions::default()).unwrap();
        for w in run.energies.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
        let sigma = Potential::Quartic.sigma();
        let e = energy(&d, Potential::Quartic, &run.u, eps, None).unwrap().total;
        assert!((e / (4.0 * sigma) - 1.0).abs() < 0.03, "{}", e / (4.0 * sigma));
        assert!(run.u.sup_norm() <= 1.0 + 1e-8);
    }

    #[test]
    fn flow_reports_nonconvergence() {
        let d = unit2(16);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u0 = ScalarField::from_fn(d.grid().clone(), |_| 0.0);
        let vals: Vec<f64> = u0.values().iter().map(|_| rng.gen_range(-0.1..0.1)).collect();
        let u0 = ScalarField::new(d.grid().clone(), vals).unwrap();
        assert!(matches!(
            gradient_flow_run(&d, &u0, 0.1, 1e-12, 1, &SolverOptions::default()),
            Err(SolverError::NonConvergence { .. })
        ));
    }

    #[test]
    fn newton_quadratic_from_flow() {
        let d = unit2(64);
        let eps = 0.1;
        let opts = SolverOptions::default();
        let u0 = stripes(d.grid(), eps).map(|v| 0.98 * v);
        let run = gradient_flow_run(&d, &u0, eps, 1e-4, 20_000, &opts).unwrap();
        let cp = newton_refine(&d, &run.u, eps, 1e-10, &opts).unwrap();
        assert!(cp.residual_linf <= 1e-10);
        let h = &cp.newton_history;
        assert!(h.len() >= 2);
        for w in h.windows(2) {
            assert!(w[1] <= 10.0 * w[0] * w[0] + 1e-9, "{h:?}");
        }
        let again = newton_refine(&d, cp.field(), eps, 1e-10, &opts).unwrap();
        assert_eq!(again.field(), cp.field());
        assert_eq!(again.newton_history.len(), 1);
    }

    #[test]
    fn newton_detects_bifurcation() {
        let n = 32;
        let d = unit2(n);
        let h = 1.0 / n as f64;
        // first nonzero discrete Laplacian eigenvalue
        let mu = 4.0 / (h * h) * (PI / n as f64).sin().powi(2);
        let eps = 1.0 / mu.sqrt();
        let zero = ScalarField::zeros(d.grid().clone());
        assert!(matches!(
            newton_refine(&d, &zero, eps, 1e-10, &SolverOptions::default()),
            Err(SolverError::SingularJacobian { .. })
        ));
        assert!(newton_refine(&d, &zero, 1.1 * eps, 1e-10, &SolverOptions::default()).is_ok());
    }

    #[test]
    fn schedule_policy() {
        let s = EpsSchedule::with_policy(vec![0.1, 0.07, 0.05, 0.035, 0.025], &[1.0, 1.0], 8.0, 512).unwrap();
        let n: Vec<usize> = s.resolutions.iter().map(|r| r[0]).collect();
        assert_eq!(n, vec![80, 120, 160, 232, 320]);
        assert!(matches!(
            EpsSchedule::new(vec![0.1, 0.05], vec![vec![80, 80], vec![80, 80]], &[1.0, 1.0], 8.0),
            Err(SolverError::InvalidSchedule(_))
        ));
        assert!(EpsSchedule::new(vec![0.1, 0.1], vec![vec![80, 80]; 2], &[1.0, 1.0], 8.0).is_err());
        assert!(EpsSchedule::with_policy(vec![0.01], &[1.0, 1.0], 8.0, 512).is_err());
    }

    #[test]
    fn mountain_pass_errors() {
        let d = unit2(16);
        let opts = SolverOptions::default();
        let mp = MountainPassOptions { endpoints: (1.0, 1.0), ..Default::default() };
        assert!(matches!(mountain_pass(&d, 0.1, &mp, &opts), Err(SolverError::DegeneratePath(_))));
        let mp = MountainPassOptions { path_points: 8, ..Default::default() };
        assert!(matches!(mountain_pass(&d, 0.1, &mp, &opts), Err(SolverError::DegeneratePath(_))));
    }
}
