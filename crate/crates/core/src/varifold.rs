//! Diffuse varifolds `V^eps` built from Allen-Cahn fields and their diagnostics.
//!
//! Geometric quantities are expressed in the orthonormal frame `e^{-f} d/dx_a` of the conformal
//! metric (the coordinate frame when flat). The normal derivative is taken through the discrete
//! Hessian, `grad nu = P Hess u / |grad u|`, so that curvature, Hessian and normal are mutually
//! consistent at every node.

use serde::{Deserialize, Serialize};

use crate::allen_cahn::{require_critical, second_variation_rescaled, IdentityCheck, IdentityTolerance, Potential};
use crate::domain::{frob_sq, mat_mul, mat_vec, tangent_projector, Domain, Mat3, RegionMask, ScalarField, Vec3, VectorField};
use crate::error::VarifoldError;
use crate::spectrum::{morse_index_report, EigenOptions};

/// Node-sampled diffuse varifold.
#[derive(Debug, Clone)]
pub struct DiffuseVarifold {
    epsilon: f64,
    dim: usize,
    /// `eps |grad u|^2 / (2 sigma)`
    weight: Vec<f64>,
    /// Unit normal in the orthonormal frame; zero off the validity mask.
    normal: Vec<Vec3>,
    valid: Vec<bool>,
    /// Second fundamental form `A` (tangent-tangent block) in the orthonormal frame.
    curvature: Vec<Mat3>,
    curvature_sq: Vec<f64>,
    grad_norm: Vec<f64>,
    hessian: Vec<Mat3>,
    ricci_normal: Vec<f64>,
    /// Quadrature weight per node (cell volume times volume density).
    quad: Vec<f64>,
    grid: std::sync::Arc<crate::domain::TorusGrid>,
}

fn check_eps(eps: f64) -> Result<(), VarifoldError> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(VarifoldError::NonPositiveEpsilon(eps))
    }
}

/// Default gradient floor `1e-8 max |grad u|`.
pub fn default_grad_floor(domain: &Domain, u: &ScalarField) -> Result<f64, VarifoldError> {
    let du = domain.differential(u)?;
    let m = du
        .values()
        .iter()
        .zip(domain.inverse_conformal())
        .map(|(v, s)| (s * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2])).sqrt())
        .fold(0.0, f64::max);
    Ok(1e-8 * m)
}

/// Builds `V^eps` from `u`; nodes with `|grad u| <= grad_floor` carry no normal or curvature.
pub fn build_diffuse_varifold(
    domain: &Domain,
    potential: Potential,
    u: &ScalarField,
    eps: f64,
    grad_floor: Option<f64>,
) -> Result<DiffuseVarifold, VarifoldError> {
    check_eps(eps)?;
    u.check_finite()?;
    let floor = match grad_floor {
        Some(f) => f,
        None => default_grad_floor(domain, u)?,
    };
    let sigma = potential.sigma();
    let dim = domain.dim();
    let du = domain.differential(u)?;
    let hess = domain.hessian(u)?;
    let inv = domain.inverse_conformal();
    let n = domain.len();
    let mut weight = vec![0.0; n];
    let mut normal = vec![[0.0; 3]; n];
    let mut valid = vec![false; n];
    let mut curvature = vec![[[0.0; 3]; 3]; n];
    let mut curvature_sq = vec![0.0; n];
    let mut grad_norm = vec![0.0; n];
    let mut hessian = vec![[[0.0; 3]; 3]; n];
    let mut ricci_normal = vec![0.0; n];
    for i in 0..n {
        let d = du.values()[i];
        let e = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
        let s = inv[i];
        let g2 = s * e;
        let g = g2.sqrt();
        grad_norm[i] = g;
        weight[i] = eps * g2 / (2.0 * sigma);
        let mut h = hess.values()[i];
        for row in h.iter_mut() {
            for v in row.iter_mut() {
                *v *= s;
            }
        }
        hessian[i] = h;
        if g > floor && g > 0.0 {
            valid[i] = true;
            let en = e.sqrt();
            let nu = [d[0] / en, d[1] / en, d[2] / en];
            normal[i] = nu;
            let p = tangent_projector(&nu, dim);
            let php = mat_mul(&mat_mul(&p, &h), &p);
            let mut a = [[0.0; 3]; 3];
            for r in 0..3 {
                for c in 0..3 {
                    a[r][c] = -php[r][c] / g;
                }
            }
            curvature_sq[i] = frob_sq(&a);
            curvature[i] = a;
            if !domain.is_flat() {
                let ric = domain.ricci(i);
                ricci_normal[i] = s * crate::domain::dot(&nu, &mat_vec(&ric, &nu));
            }
        }
    }
    let cell = domain.grid().cell_volume();
    let quad = domain.volume_density().iter().map(|v| v * cell).collect();
    Ok(DiffuseVarifold {
        epsilon: eps,
        dim,
        weight,
        normal,
        valid,
        curvature,
        curvature_sq,
        grad_norm,
        hessian,
        ricci_normal,
        quad,
        grid: domain.grid().clone(),
    })
}

impl DiffuseVarifold {
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn weight_density(&self) -> &[f64] {
        &self.weight
    }

    pub fn normals(&self) -> &[Vec3] {
        &self.normal
    }

    pub fn validity(&self) -> &[bool] {
        &self.valid
    }

    pub fn curvature(&self) -> &[Mat3] {
        &self.curvature
    }

    /// `|A^eps|^2` per node (zero off the validity mask).
    pub fn curvature_sq(&self) -> &[f64] {
        &self.curvature_sq
    }

    pub fn grad_norm(&self) -> &[f64] {
        &self.grad_norm
    }

    /// `Ric(nu, nu)` per node.
    pub fn ricci_normal(&self) -> &[f64] {
        &self.ricci_normal
    }

    pub fn grid(&self) -> &std::sync::Arc<crate::domain::TorusGrid> {
        &self.grid
    }

    /// `||V^eps||` of each grid cell.
    pub fn node_masses(&self) -> Vec<f64> {
        self.weight.iter().zip(&self.quad).map(|(w, q)| w * q).collect()
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// `int f phi dV^eps` over the nodes where the mask (if any) holds.
    fn pair(&self, f: impl Fn(usize) -> f64, mask: Option<&RegionMask>) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.weight.len() {
            if mask.is_none_or(|m| m.contains(i)) {
                acc += f(i) * self.weight[i] * self.quad[i];
            }
        }
        acc
    }

    /// Tangential projectors `I - nu nu^T` on the validity mask.
    pub fn projector(&self, i: usize) -> Mat3 {
        tangent_projector(&self.normal[i], self.dim)
    }
}

/// `||V^eps||(mask)`.
pub fn mass(v: &DiffuseVarifold, mask: Option<&RegionMask>) -> f64 {
    v.pair(|_| 1.0, mask)
}

/// `int f phi dV^eps` with `f` zeroed off the validity mask.
pub fn measure_function_pairing(v: &DiffuseVarifold, f: &[f64], phi: &[f64]) -> Result<f64, VarifoldError> {
    let n = v.weight.len();
    if f.len() != n || phi.len() != n {
        return Err(VarifoldError::InvalidArgument("pairing arrays must match the grid".into()));
    }
    Ok(v.pair(|i| if v.valid[i] { f[i] * phi[i] } else { 0.0 }, None))
}

/// The three equipartition integrals `int eps|grad u|^2/2 phi`, `int W/eps phi`, `int |grad Psi(u)| phi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Equipartition {
    pub dirichlet: f64,
    pub potential: f64,
    pub psi_gradient: f64,
    /// Largest pairwise difference.
    pub defect: f64,
}

pub fn equipartition_defect(
    domain: &Domain,
    potential: Potential,
    u: &ScalarField,
    eps: f64,
    phi: &ScalarField,
) -> Result<Equipartition, VarifoldError> {
    check_eps(eps)?;
    u.require_same_grid(phi)?;
    let g2 = domain.grad_norm_sq(u)?;
    let w = u.map(|t| potential.psi(t));
    let gw = domain.grad_norm_sq(&w)?;
    let n = domain.len();
    let a: Vec<f64> = (0..n).map(|i| 0.5 * eps * g2.values()[i] * phi.values()[i]).collect();
    let b: Vec<f64> = (0..n).map(|i| potential.w(u.values()[i]) / eps * phi.values()[i]).collect();
    let c: Vec<f64> = (0..n).map(|i| gw.values()[i].sqrt() * phi.values()[i]).collect();
    let (a, b, c) = (domain.integrate_slice(&a, None), domain.integrate_slice(&b, None), domain.integrate_slice(&c, None));
    let defect = (a - b).abs().max((a - c).abs()).max((b - c).abs());
    Ok(Equipartition { dirichlet: a, potential: b, psi_gradient: c, defect })
}

fn identity_scale_h(domain: &Domain) -> f64 {
    domain.grid().max_spacing()
}

/// `int div_S X dV^eps` against `(1/2 sigma) int (eps|grad u|^2/2 - W/eps) div X`.
pub fn first_variation_defect(
    domain: &Domain,
    potential: Potential,
    u: &ScalarField,
    eps: f64,
    x: &VectorField,
    critical_tol: f64,
    tol: IdentityTolerance,
) -> Result<IdentityCheck, VarifoldError> {
    check_eps(eps)?;
    if **x.grid() != **domain.grid() {
        return Err(crate::error::DomainError::GridMismatch.into());
    }
    require_critical(domain, potential, u, eps, critical_tol)?;
    let v = build_diffuse_varifold(domain, potential, u, eps, None)?;
    let sigma = potential.sigma();
    let grad_x = domain.covariant_derivative_slice(x.values());
    let n = domain.len();
    let mut lhs_density = vec![0.0; n];
    let mut rhs_density = vec![0.0; n];
    let mut scale_density = vec![0.0; n];
    for i in 0..n {
        let m = &grad_x[i];
        let div: f64 = (0..v.dim).map(|a| m[a][a]).sum();
        let nu = &v.normal[i];
        let nn: f64 = (0..v.dim).flat_map(|a| (0..v.dim).map(move |b| (a, b))).map(|(a, b)| nu[a] * m[a][b] * nu[b]).sum();
        let wd = v.weight[i];
        lhs_density[i] = (div - nn) * wd;
        let d = 0.5 * eps * v.grad_norm[i].powi(2);
        let wp = potential.w(u.values()[i]) / eps;
        rhs_density[i] = (d - wp) * div / (2.0 * sigma);
        scale_density[i] = (div.abs() + nn.abs()) * wd + (d + wp) * div.abs() / (2.0 * sigma);
    }
    let lhs = domain.integrate_slice(&lhs_density, None);
    let rhs = domain.integrate_slice(&rhs_density, None);
    let scale = domain.integrate_slice(&scale_density, None);
    Ok(IdentityCheck {
        lhs,
        rhs,
        defect: (lhs - rhs).abs(),
        scale,
        tolerance: tol.bound(lhs, rhs, scale, identity_scale_h(domain), eps),
    })
}

/// Both sides of `(eps/2 sigma) d^2 E(|grad u| phi) <= int |grad phi|^2 - (|A|^2 + Ric(nu,nu)) phi^2 dV^eps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub tolerance: f64,
    pub holds: bool,
}

pub fn stability_inequality_check(
    domain: &Domain,
    potential: Potential,
    u: &ScalarField,
    eps: f64,
    phi: &ScalarField,
    mask: Option<&RegionMask>,
    critical_tol: f64,
    tol: IdentityTolerance,
) -> Result<StabilityCheck, VarifoldError> {
    check_eps(eps)?;
    u.require_same_grid(phi)?;
    if let Some(m) = mask {
        if let Some(node) = (0..domain.len()).find(|&i| !m.contains(i) && phi.values()[i] != 0.0) {
            return Err(crate::error::AllenCahnError::SupportViolation { node }.into());
        }
    }
    require_critical(domain, potential, u, eps, critical_tol)?;
    let v = build_diffuse_varifold(domain, potential, u, eps, None)?;
    let sigma = potential.sigma();
    let psi: Vec<f64> = v.grad_norm.iter().zip(phi.values()).map(|(g, p)| g * p).collect();
    let psi = ScalarField::new(u.grid().clone(), psi)?;
    let lhs = eps / (2.0 * sigma) * second_variation_rescaled(domain, potential, u, eps, &psi, None)?;
    let dphi = domain.grad_norm_sq(phi)?;
    let n = domain.len();
    let mut rhs_density = vec![0.0; n];
    let mut scale_density = vec![0.0; n];
    for i in 0..n {
        let p2 = phi.values()[i].powi(2);
        let k = v.curvature_sq[i] + v.ricci_normal[i];
        rhs_density[i] = (dphi.values()[i] - k * p2) * v.weight[i];
        scale_density[i] = (dphi.values()[i] + k.abs() * p2) * v.weight[i];
    }
    let rhs = domain.integrate_slice(&rhs_density, None);
    let scale = domain.integrate_slice(&scale_density, None);
    let tolerance = tol.bound(lhs, rhs, scale, identity_scale_h(domain), eps);
    Ok(StabilityCheck { lhs, rhs, tolerance, holds: lhs <= rhs + tolerance })
}

/// Pointwise `|A|^2 |grad u|^2 <= |Hess u|^2 - |grad |grad u||^2 + tol` on the validity mask,
/// with `grad |grad u| = Hess u . nu`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointwiseReport {
    pub checked: usize,
    pub violations: usize,
    /// Largest `lhs - rhs - tol` seen (negative when all hold).
    pub worst_excess: f64,
}

pub fn pointwise_hessian_bound(v: &DiffuseVarifold) -> PointwiseReport {
    let mut checked = 0;
    let mut violations = 0;
    let mut worst = f64::NEG_INFINITY;
    for i in 0..v.weight.len() {
        if !v.valid[i] {
            continue;
        }
        checked += 1;
        let h = &v.hessian[i];
        let hn = mat_vec(h, &v.normal[i]);
        let h2 = frob_sq(h);
        let lhs = v.curvature_sq[i] * v.grad_norm[i].powi(2);
        let rhs = h2 - crate::domain::dot(&hn, &hn);
        let excess = lhs - rhs - 1e-8 * (1.0 + h2);
        worst = worst.max(excess);
        if excess > 0.0 {
            violations += 1;
        }
    }
    PointwiseReport { checked, violations, worst_excess: if checked == 0 { 0.0 } else { worst } }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BallCurvature {
    /// `int_{B(r/2)} |A|^2 dV^eps`
    pub curvature_l2: f64,
    /// `||V^eps||(B(r))`
    pub mass_r: f64,
    /// `curvature_l2 r^2 / mass_r`
    pub ratio: f64,
}

/// Curvature bound in a ball where `u` is stable.
pub fn ball_curvature_bound(
    domain: &Domain,
    potential: Potential,
    u: &ScalarField,
    eps: f64,
    center: &Vec3,
    r: f64,
    eigen: &EigenOptions,
) -> Result<BallCurvature, VarifoldError> {
    check_eps(eps)?;
    let g = domain.grid();
    let half_period = g.lengths().iter().cloned().fold(f64::INFINITY, f64::min) / 2.0;
    if !(r > 0.0 && r <= half_period) {
        return Err(VarifoldError::InvalidArgument(format!("radius {r} outside (0, {half_period}]")));
    }
    let ball = RegionMask::ball(g.clone(), center, r);
    let rep = morse_index_report(domain, potential, u, eps, &ball, eigen)?;
    if rep.index > 0 {
        return Err(VarifoldError::NotStableInBall { index: rep.index });
    }
    let v = build_diffuse_varifold(domain, potential, u, eps, None)?;
    let inner = RegionMask::ball(g.clone(), center, r / 2.0);
    let curvature_l2 = v.pair(|i| v.curvature_sq[i], Some(&inner));
    let mass_r = mass(&v, Some(&ball));
    let ratio = if mass_r > 0.0 { curvature_l2 * r * r / mass_r } else { 0.0 };
    Ok(BallCurvature { curvature_l2, mass_r, ratio })
}

/// `phi(x, S) = alpha(x) beta(S)` with `beta` a polynomial of degree at most two in the
/// entries of the projection matrix `S`.
#[derive(Debug, Clone)]
pub struct GrassmannTestFunction {
    alpha: ScalarField,
    c0: f64,
    c1: [[f64; 3]; 3],
    /// `c2[k][r][l][s]` multiplies `S_kr S_ls`.
    c2: Vec<f64>,
}

impl GrassmannTestFunction {
    pub fn new(alpha: ScalarField, c0: f64, c1: [[f64; 3]; 3], c2: Vec<f64>) -> Result<Self, VarifoldError> {
        if !c2.is_empty() && c2.len() != 81 {
            return Err(VarifoldError::InvalidArgument("quadratic table must have 81 entries".into()));
        }
        if c2.iter().chain(c1.iter().flatten()).any(|v| !v.is_finite()) || !c0.is_finite() {
            return Err(VarifoldError::InvalidArgument("non-finite coefficient".into()));
        }
        Ok(Self { alpha, c0, c1, c2 })
    }

    pub fn spatial(alpha: ScalarField) -> Self {
        Self { alpha, c0: 1.0, c1: [[0.0; 3]; 3], c2: Vec::new() }
    }

    pub fn alpha(&self) -> &ScalarField {
        &self.alpha
    }

    fn c2(&self, k: usize, r: usize, l: usize, s: usize) -> f64 {
        if self.c2.is_empty() {
            0.0
        } else {
            self.c2[((k * 3 + r) * 3 + l) * 3 + s]
        }
    }

    pub fn beta(&self, s: &Mat3) -> f64 {
        let mut b = self.c0;
        for k in 0..3 {
            for r in 0..3 {
                b += self.c1[k][r] * s[k][r];
                if !self.c2.is_empty() {
                    for l in 0..3 {
                        for q in 0..3 {
                            b += self.c2(k, r, l, q) * s[k][r] * s[l][q];
                        }
                    }
                }
            }
        }
        b
    }

    /// `d beta / d S_kr`.
    pub fn beta_gradient(&self, s: &Mat3) -> Mat3 {
        let mut g = self.c1;
        if !self.c2.is_empty() {
            for k in 0..3 {
                for r in 0..3 {
                    for l in 0..3 {
                        for q in 0..3 {
                            g[k][r] += self.c2(k, r, l, q) * s[l][q];
                            g[l][q] += self.c2(k, r, l, q) * s[k][r];
                        }
                    }
                }
            }
        }
        g
    }
}

/// Per-direction sides of the generalized curvature identity and `|B|^2 <= 8 |A|^2` checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvatureResidual {
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
    pub defect: f64,
    pub tolerance: f64,
    /// Nodes where `|B|^2 > 8 |A|^2 + tol`.
    pub b_bound_violations: usize,
}

impl CurvatureResidual {
    pub fn holds(&self) -> bool {
        self.defect <= self.tolerance
    }
}

pub fn generalized_curvature_residual(
    domain: &Domain,
    potential: Potential,
    u: &ScalarField,
    eps: f64,
    phi: &GrassmannTestFunction,
    critical_tol: f64,
    tol: IdentityTolerance,
) -> Result<CurvatureResidual, VarifoldError> {
    check_eps(eps)?;
    if !domain.is_flat() {
        return Err(VarifoldError::ConformalUnsupported);
    }
    u.require_same_grid(phi.alpha())?;
    require_critical(domain, potential, u, eps, critical_tol)?;
    let v = build_diffuse_varifold(domain, potential, u, eps, None)?;
    let sigma = potential.sigma();
    let d = v.dim;
    let n = domain.len();
    let dalpha = domain.differential(phi.alpha())?;
    // S and its derivatives through the Hessian: d_l nu_j = (P H)_jl / |grad u|
    let mut s_field = vec![[[0.0; 3]; 3]; n];
    let mut ds = vec![[[[0.0; 3]; 3]; 3]; n];
    let mut b_viol = 0;
    for i in 0..n {
        let p = v.projector(i);
        s_field[i] = p;
        if !v.valid[i] {
            continue;
        }
        let nu = v.normal[i];
        let ph = mat_mul(&p, &v.hessian[i]);
        let g = v.grad_norm[i];
        for l in 0..d {
            for j in 0..d {
                for k in 0..d {
                    let dnu_j = ph[j][l] / g;
                    let dnu_k = ph[k][l] / g;
                    ds[i][l][j][k] = -(dnu_j * nu[k] + nu[j] * dnu_k);
                }
            }
        }
        let mut b2 = 0.0;
        for a in 0..d {
            for j in 0..d {
                for k in 0..d {
                    let b: f64 = (0..d).map(|l| p[a][l] * ds[i][l][j][k]).sum();
                    b2 += b * b;
                }
            }
        }
        if b2 > 8.0 * v.curvature_sq[i] + 1e-8 * (1.0 + frob_sq(&v.hessian[i]) / (g * g)) {
            b_viol += 1;
        }
    }
    let alpha = phi.alpha().values();
    let mut lhs = vec![0.0; d];
    let mut rhs = vec![0.0; d];
    let mut scale = vec![0.0; d];
    let energy_gap: Vec<f64> = (0..n)
        .map(|i| (0.5 * eps * v.grad_norm[i].powi(2) - potential.w(u.values()[i]) / eps) / (2.0 * sigma))
        .collect();
    let energy_sum: Vec<f64> = (0..n)
        .map(|i| (0.5 * eps * v.grad_norm[i].powi(2) + potential.w(u.values()[i]) / eps) / (2.0 * sigma))
        .collect();
    for j in 0..d {
        // X^i = phi(x, S(x)) S_ij, differentiated by central differences for the rhs
        let xj: Vec<Vec3> = (0..n)
            .map(|i| {
                let f = alpha[i] * phi.beta(&s_field[i]);
                [f * s_field[i][0][j], f * s_field[i][1][j], f * s_field[i][2][j]]
            })
            .collect();
        let div = domain.divergence_slice(&xj);
        let mut l_dens = vec![0.0; n];
        let mut r_dens = vec![0.0; n];
        let mut s_dens = vec![0.0; n];
        for i in 0..n {
            r_dens[i] = energy_gap[i] * div[i];
            s_dens[i] = energy_sum[i] * div[i].abs();
            if !v.valid[i] {
                continue;
            }
            let s = &s_field[i];
            let beta = phi.beta(s);
            let dbeta = phi.beta_gradient(s);
            let bij = |a: usize, b: usize, c: usize| -> f64 { (0..d).map(|l| s[a][l] * ds[i][l][b][c]).sum() };
            let mut t1 = 0.0;
            for r in 0..d {
                t1 += s[r][j] * dalpha.values()[i][r] * beta;
            }
            let mut t2 = 0.0;
            for r in 0..d {
                t2 += bij(r, j, r);
            }
            t2 *= alpha[i] * beta;
            let mut t3 = 0.0;
            for k in 0..d {
                for r in 0..d {
                    t3 += bij(j, k, r) * alpha[i] * dbeta[k][r];
                }
            }
            l_dens[i] = (t1 + t2 + t3) * v.weight[i];
            s_dens[i] += (t1.abs() + t2.abs() + t3.abs()) * v.weight[i];
        }
        lhs[j] = domain.integrate_slice(&l_dens, None);
        rhs[j] = domain.integrate_slice(&r_dens, None);
        scale[j] = domain.integrate_slice(&s_dens, None);
    }
    let h = identity_scale_h(domain);
    let mut defect: f64 = 0.0;
    let mut tolerance = f64::INFINITY;
    for j in 0..d {
        let dj = (lhs[j] - rhs[j]).abs();
        let tj = tol.bound(lhs[j], rhs[j], scale[j], h, eps);
        if dj - tj > defect - tolerance || j == 0 {
            defect = dj;
            tolerance = tj;
        }
    }
    Ok(CurvatureResidual { lhs, rhs, defect, tolerance, b_bound_violations: b_viol })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::TorusGrid;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn unit2(n: usize) -> Domain {
        Domain::flat(Arc::new(TorusGrid::new(2, &[1.0, 1.0], &[n, n]).unwrap()))
    }

    #[test]
    fn constant_has_no_weight() {
        let d = unit2(16);
        let u = ScalarField::constant(d.grid().clone(), 0.3);
        let v = build_diffuse_varifold(&d, Potential::Quartic, &u, 0.1, None).unwrap();
        assert_eq!(mass(&v, None), 0.0);
        assert_eq!(v.valid_count(), 0);
        assert!(build_diffuse_varifold(&d, Potential::Quartic, &u, 0.0, None).is_err());
    }

    #[test]
    fn circle_curvature() {
        let d = unit2(128);
        let eps = 0.04;
        let r0 = 0.25;
        let c = [0.5, 0.5, 0.0];
        let g = d.grid().clone();
        let u = ScalarField::from_fn(g.clone(), |x| Potential::Quartic.heteroclinic(g.periodic_distance(x, &c) - r0, eps));
        let v = build_diffuse_varifold(&d, Potential::Quartic, &u, eps, None).unwrap();
        let mut checked = 0;
        for i in 0..d.len() {
            if u.values()[i].abs() < 0.5 {
                let r = g.periodic_distance(&g.position(i), &c);
                let k = v.curvature_sq()[i].sqrt();
                assert!((k * r - 1.0).abs() < 0.03, "r={r} k={k}");
                for a in 0..2 {
                    let p = v.projector(i);
                    let pp = mat_mul(&p, &p);
                    for b in 0..2 {
                        assert!((pp[a][b] - p[a][b]).abs() < 1e-12);
                        assert!((p[a][b] - p[b][a]).abs() < 1e-15);
                    }
                }
                checked += 1;
            }
        }
        assert!(checked > 50);
        let nrm: f64 = v.normals().iter().zip(v.validity()).filter(|(_, &ok)| ok).map(|(n, _)| (crate::domain::norm(n) - 1.0).abs()).fold(0.0, f64::max);
        assert!(nrm < 1e-12);
        let rep = pointwise_hessian_bound(&v);
        assert_eq!(rep.violations, 0);
    }

    #[test]
    fn equipartition_of_heteroclinic() {
        let mut prev = f64::INFINITY;
        for n in [64, 128, 256] {
            let d = Domain::flat(Arc::new(TorusGrid::new(2, &[2.0, 0.25], &[n, n / 8]).unwrap()));
            let eps = 0.1;
            let u = crate::critical_points::stripe_profile(d.grid(), Potential::Quartic, eps, 0, 0.5, 1.5);
            let one = ScalarField::constant(d.grid().clone(), 1.0);
            let e = equipartition_defect(&d, Potential::Quartic, &u, eps, &one).unwrap();
            assert!(e.defect < prev / 3.0, "{} vs {prev}", e.defect);
            prev = e.defect;
        }
        let d = unit2(16);
        for c in [-1.0, 1.0] {
            let u = ScalarField::constant(d.grid().clone(), c);
            let one = ScalarField::constant(d.grid().clone(), 1.0);
            assert_eq!(equipartition_defect(&d, Potential::Quartic, &u, 0.1, &one).unwrap().defect, 0.0);
        }
    }

    #[test]
    fn grassmann_polynomial_gradient() {
        let d = unit2(8);
        let alpha = ScalarField::constant(d.grid().clone(), 1.0);
        let c2: Vec<f64> = (0..81).map(|k| ((k * 37 % 11) as f64 - 5.0) / 7.0).collect();
        let c1 = [[0.3, -0.2, 0.0], [0.1, 0.5, 0.0], [0.0, 0.0, 0.0]];
        let f = GrassmannTestFunction::new(alpha, 0.7, c1, c2).unwrap();
        let s = [[0.4, 0.2, 0.0], [0.2, 0.6, 0.0], [0.0, 0.0, 0.0]];
        let g = f.beta_gradient(&s);
        for k in 0..2 {
            for r in 0..2 {
                let mut sp = s;
                let mut sm = s;
                sp[k][r] += 1e-6;
                sm[k][r] -= 1e-6;
                let fd = (f.beta(&sp) - f.beta(&sm)) / 2e-6;
                assert!((fd - g[k][r]).abs() < 1e-8);
            }
        }
    }

    fn stripes() -> (Domain, ScalarField) {
        let g = Arc::new(TorusGrid::new(2, &[2.0, 0.25], &[128, 16]).unwrap());
        let d = Domain::flat(g.clone());
        let u0 = crate::critical_points::stripe_profile(&g, Potential::Quartic, 0.1, 0, 0.5, 1.5);
        let opts = crate::critical_points::SolverOptions::default();
        let cp = crate::critical_points::newton_refine(&d, &u0, 0.1, 1e-10, &opts).unwrap();
        (d, cp.field().clone())
    }

    #[test]
    fn stripe_diagnostics() {
        let (d, u) = stripes();
        let p = Potential::Quartic;
        let v = build_diffuse_varifold(&d, p, &u, 0.1, None).unwrap();
        let e = crate::allen_cahn::total_energy(&d, p, u.values(), 0.1);
        let m = mass(&v, None);
        assert!(m <= e / (2.0 * p.sigma()) + 1e-9);
        // two interfaces of length 0.25
        assert!((m - 0.5).abs() < 0.02, "{m}");
        let left = RegionMask::from_fn(d.grid().clone(), "left", |x| x[0] < 1.0);
        assert!((mass(&v, Some(&left)) - m / 2.0).abs() < 1e-9);
        assert!(v.curvature_sq().iter().all(|&a| a < 1e-12));
        let tol = IdentityTolerance::default();
        let x = VectorField::from_fn(d.grid().clone(), |x| [(PI * x[0] + 0.4).sin(), 0.0, 0.0]);
        let fv = first_variation_defect(&d, p, &u, 0.1, &x, 1e-8, tol).unwrap();
        assert!(fv.holds(), "{fv:?}");
        // fields supported away from the interfaces see nothing
        let far = VectorField::from_fn(d.grid().clone(), |x| {
            let s = (x[0] - 1.0).abs();
            if s < 0.1 { [(1.0 - (s / 0.1).powi(2)).powi(3), 0.0, 0.0] } else { [0.0; 3] }
        });
        let fv = first_variation_defect(&d, p, &u, 0.1, &far, 1e-8, tol).unwrap();
        assert!(fv.defect < 1e-8, "{fv:?}");
        let phi = ScalarField::from_fn(d.grid().clone(), |x| 1.0 + 0.3 * (PI * x[0]).cos());
        let st = stability_inequality_check(&d, p, &u, 0.1, &phi, None, 1e-8, tol).unwrap();
        assert!(st.holds, "{st:?}");
        let gt = GrassmannTestFunction::new(phi, 0.2, [[0.5, 0.1, 0.0], [0.1, -0.4, 0.0], [0.0; 3]], vec![0.01; 81]).unwrap();
        let gc = generalized_curvature_residual(&d, p, &u, 0.1, &gt, 1e-8, tol).unwrap();
        assert!(gc.holds() && gc.b_bound_violations == 0, "{gc:?}");
        assert_eq!(pointwise_hessian_bound(&v).violations, 0);
    }

    #[test]
    fn rejects_non_critical_and_conformal() {
        let d = unit2(32);
        let p = Potential::Quartic;
        let u = ScalarField::from_fn(d.grid().clone(), |x| (2.0 * PI * x[0]).sin());
        let x = VectorField::from_fn(d.grid().clone(), |_| [1.0, 0.0, 0.0]);
        let r = first_variation_defect(&d, p, &u, 0.1, &x, 1e-8, IdentityTolerance::default());
        assert!(matches!(r, Err(VarifoldError::AllenCahn(crate::error::AllenCahnError::NotCritical { .. }))));
        let metric = crate::domain::Metric::Conformal {
            modes: vec![crate::domain::ConformalMode { amplitude: 0.1, wavenumbers: vec![1, 1], phase: 0.0 }],
        };
        let dc = Domain::new(d.grid().clone(), metric);
        let one = ScalarField::constant(d.grid().clone(), 1.0);
        let gt = GrassmannTestFunction::spatial(one.clone());
        let r = generalized_curvature_residual(&dc, p, &one, 0.1, &gt, 1e-8, IdentityTolerance::default());
        assert!(matches!(r, Err(VarifoldError::ConformalUnsupported)));
    }

    #[test]
    fn unstable_ball() {
        let d = unit2(32);
        let u = ScalarField::constant(d.grid().clone(), 0.0);
        let r = ball_curvature_bound(&d, Potential::Quartic, &u, 0.1, &[0.5, 0.5, 0.0], 0.3, &EigenOptions::default());
        assert!(matches!(r, Err(VarifoldError::NotStableInBall { index }) if index > 0));
        let u = ScalarField::constant(d.grid().clone(), 1.0);
        let b = ball_curvature_bound(&d, Potential::Quartic, &u, 0.1, &[0.5, 0.5, 0.0], 0.3, &EigenOptions::default()).unwrap();
        assert_eq!(b.ratio, 0.0);
    }
}
