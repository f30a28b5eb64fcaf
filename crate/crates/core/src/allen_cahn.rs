//! Double-well potential, Allen-Cahn energy, its variations and the weighted
//! second-variation identity.

use serde::{Deserialize, Serialize};

use crate::domain::{frob_sq, Domain, RegionMask, ScalarField};
use crate::error::AllenCahnError;
use crate::linalg::norm_inf;

/// Double-well potential with wells at `+-1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Potential {
    /// `W(u) = (1 - u^2)^2 / 4`
    #[default]
    Quartic,
}

impl Potential {
    /// `(W, W', W'')` at `u`.
    #[inline]
    pub fn eval(&self, u: f64) -> (f64, f64, f64) {
        match self {
            Potential::Quartic => {
                let a = 1.0 - u * u;
                (0.25 * a * a, u * u * u - u, 3.0 * u * u - 1.0)
            }
        }
    }

    #[inline]
    pub fn w(&self, u: f64) -> f64 {
        self.eval(u).0
    }

    #[inline]
    pub fn dw(&self, u: f64) -> f64 {
        self.eval(u).1
    }

    #[inline]
    pub fn ddw(&self, u: f64) -> f64 {
        self.eval(u).2
    }

    /// `sigma = int_{-1}^{1} sqrt(W/2)`.
    pub fn sigma(&self) -> f64 {
        match self {
            Potential::Quartic => 2.0_f64.sqrt() / 3.0,
        }
    }

    /// `Psi(t) = int_0^t sqrt(W(s)/2) ds`.
    pub fn psi(&self, t: f64) -> f64 {
        match self {
            Potential::Quartic => {
                let c = 1.0 / (2.0 * 2.0_f64.sqrt());
                let s = t.abs();
                let v = if s <= 1.0 {
                    s - s * s * s / 3.0
                } else {
                    2.0 / 3.0 + (s * s * s - 1.0) / 3.0 - (s - 1.0)
                };
                c * v * t.signum()
            }
        }
    }

    /// `sup |W''|` over `[-m, m]`.
    pub fn max_abs_ddw(&self, m: f64) -> f64 {
        match self {
            Potential::Quartic => (3.0 * m * m - 1.0).abs().max(1.0),
        }
    }

    /// 1-D heteroclinic profile with `u(0) = 0` connecting `-1` to `+1`.
    pub fn heteroclinic(&self, s: f64, eps: f64) -> f64 {
        match self {
            Potential::Quartic => (s / (2.0_f64.sqrt() * eps)).tanh(),
        }
    }
}

/// `E_eps` split into its two integrands over a region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub dirichlet_part: f64,
    pub potential_part: f64,
    pub total: f64,
    pub region: String,
}

impl EnergyBreakdown {
    /// `|dirichlet - potential| / total`
    pub fn equipartition_ratio(&self) -> f64 {
        if self.total == 0.0 {
            0.0
        } else {
            (self.dirichlet_part - self.potential_part).abs() / self.total
        }
    }
}

fn check_eps(eps: f64) -> Result<(), AllenCahnError> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(AllenCahnError::NonPositiveEpsilon(eps))
    }
}

/// `E_eps(u) = int eps |grad u|^2 / 2 + W(u)/eps` restricted to `mask`.
pub fn energy(
    domain: &Domain,
    potential: Potential,
    u: &ScalarField,
    eps: f64,
    mask: Option<&RegionMask>,
) -> Result<EnergyBreakdown, AllenCahnError> {
    check_eps(eps)?;
    u.check_finite()?;
    let dens = domain.dirichlet_density(u.values());
    let dirichlet_part = 0.5 * eps * domain.integrate_slice(&dens, mask);
    let w: Vec<f64> = u.values().iter().map(|&v| potential.w(v) / eps).collect();
    let potential_part = domain.integrate_slice(&w, mask);
    Ok(EnergyBreakdown {
        dirichlet_part,
        potential_part,
        total: dirichlet_part + potential_part,
        region: mask.map(|m| m.label().to_string()).unwrap_or_else(|| "full".into()),
    })
}

/// Total energy using the edge Dirichlet form (the quantity decreased by the gradient flow).
pub fn total_energy(domain: &Domain, potential: Potential, u: &[f64], eps: f64) -> f64 {
    let w: Vec<f64> = u.iter().map(|&v| potential.w(v)).collect();
    0.5 * eps * domain.dirichlet_form(u) + domain.integrate_slice(&w, None) / eps
}

/// `Lap u - eps^{-2} W'(u)` per node.
pub fn residual(domain: &Domain, potential: Potential, u: &ScalarField, eps: f64) -> Result<ScalarField, AllenCahnError> {
    check_eps(eps)?;
    u.check_finite()?;
    let mut r = domain.laplacian(u)?;
    let inv = 1.0 / (eps * eps);
    for (ri, &ui) in r.values_mut().iter_mut().zip(u.values()) {
        *ri -= inv * potential.dw(ui);
    }
    Ok(r)
}

pub fn residual_linf(domain: &Domain, potential: Potential, u: &ScalarField, eps: f64) -> Result<f64, AllenCahnError> {
    Ok(norm_inf(residual(domain, potential, u, eps)?.values()))
}

fn check_support(phi: &ScalarField, mask: Option<&RegionMask>) -> Result<(), AllenCahnError> {
    if let Some(m) = mask {
        if let Some(node) = (0..phi.values().len()).find(|&i| !m.contains(i) && phi.values()[i] != 0.0) {
            return Err(AllenCahnError::SupportViolation { node });
        }
    }
    Ok(())
}

/// Rescaled second variation `int |grad phi|^2 + eps^{-2} W''(u) phi^2` (of `eps^{-1} E_eps`).
pub fn second_variation_rescaled(
    domain: &Domain,
    potential: Potential,
    u: &ScalarField,
    eps: f64,
    phi: &ScalarField,
    mask: Option<&RegionMask>,
) -> Result<f64, AllenCahnError> {
    check_eps(eps)?;
    phi.check_finite()?;
    u.require_same_grid(phi)?;
    check_support(phi, mask)?;
    let inv = 1.0 / (eps * eps);
    let pot: Vec<f64> = u.values().iter().zip(phi.values()).map(|(&ui, &p)| inv * potential.ddw(ui) * p * p).collect();
    Ok(domain.dirichlet_form(phi.values()) + domain.integrate_slice(&pot, None))
}

/// `delta^2 E_eps(u)(phi, phi) = int eps |grad phi|^2 + W''(u) phi^2 / eps`.
pub fn second_variation(
    domain: &Domain,
    potential: Potential,
    u: &ScalarField,
    eps: f64,
    phi: &ScalarField,
    mask: Option<&RegionMask>,
) -> Result<f64, AllenCahnError> {
    Ok(eps * second_variation_rescaled(domain, potential, u, eps, phi, mask)?)
}

/// Tolerance for comparing two independently discretised sides of an integral identity:
/// `relative * (|lhs| + |rhs| + 1) + discretization * (h/eps)^2 * scale`, where `scale`
/// is the integral of the absolute values of the integrands.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentityTolerance {
    pub relative: f64,
    pub discretization: f64,
}

impl Default for IdentityTolerance {
    fn default() -> Self {
        Self { relative: 1e-3, discretization: 2.0 }
    }
}

impl IdentityTolerance {
    pub fn bound(&self, lhs: f64, rhs: f64, scale: f64, h: f64, eps: f64) -> f64 {
        self.relative * (lhs.abs() + rhs.abs() + 1.0) + self.discretization * (h / eps).powi(2) * scale
    }
}

/// Both sides of an integral identity evaluated independently.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentityCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub defect: f64,
    /// Integral of absolute integrand magnitudes.
    pub scale: f64,
    pub tolerance: f64,
}

impl IdentityCheck {
    pub fn holds(&self) -> bool {
        self.defect <= self.tolerance
    }
}

pub(crate) fn require_critical(
    domain: &Domain,
    potential: Potential,
    u: &ScalarField,
    eps: f64,
    critical_tol: f64,
) -> Result<(), AllenCahnError> {
    let r = residual_linf(domain, potential, u, eps)?;
    if r > critical_tol {
        return Err(AllenCahnError::NotCritical { residual: r, tol: critical_tol });
    }
    Ok(())
}

/// Node-wise geometric quantities of `u` used by several identities.
pub(crate) struct GradientGeometry {
    /// `|grad u|_g`
    pub grad_norm: Vec<f64>,
    /// `|Hess u|_g^2`
    pub hess_sq: Vec<f64>,
    /// `|grad |grad u||_g^2`
    pub grad_grad_norm_sq: Vec<f64>,
    /// `Ric(grad u, grad u)`
    pub ricci_term: Vec<f64>,
}

pub(crate) fn gradient_geometry(domain: &Domain, u: &ScalarField) -> Result<GradientGeometry, AllenCahnError> {
    let du = domain.differential(u)?;
    let inv = domain.inverse_conformal();
    let grad_norm: Vec<f64> = du
        .values()
        .iter()
        .zip(inv)
        .map(|(v, s)| (s * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2])).sqrt())
        .collect();
    let hess = domain.hessian(u)?;
    let hess_sq = hess.values().iter().zip(inv).map(|(h, s)| s * s * frob_sq(h)).collect();
    let gn = ScalarField::from_vec_unchecked(u.grid().clone(), grad_norm.clone());
    let grad_grad_norm_sq = domain.grad_norm_sq(&gn)?.into_values();
    let ricci_term = (0..domain.len()).map(|i| domain.ricci_of_differential(i, &du.values()[i])).collect();
    Ok(GradientGeometry { grad_norm, hess_sq, grad_grad_norm_sq, ricci_term })
}

/// `delta^2 eps^{-1}E(|grad u| phi, |grad u| phi)` against
/// `int |grad u|^2 |grad phi|^2 - (|Hess u|^2 - |grad|grad u||^2 + Ric(grad u, grad u)) phi^2`.
pub fn weighted_second_variation_identity(
    domain: &Domain,
    potential: Potential,
    u: &ScalarField,
    eps: f64,
    phi: &ScalarField,
    mask: Option<&RegionMask>,
    critical_tol: f64,
    tol: IdentityTolerance,
) -> Result<IdentityCheck, AllenCahnError> {
    check_eps(eps)?;
    u.require_same_grid(phi)?;
    check_support(phi, mask)?;
    require_critical(domain, potential, u, eps, critical_tol)?;
    let geo = gradient_geometry(domain, u)?;
    let psi: Vec<f64> = geo.grad_norm.iter().zip(phi.values()).map(|(g, p)| g * p).collect();
    let psi = ScalarField::from_vec_unchecked(u.grid().clone(), psi);
    let lhs = second_variation_rescaled(domain, potential, u, eps, &psi, None)?;
    let dphi = domain.grad_norm_sq(phi)?;
    let n = domain.len();
    let mut rhs_density = vec![0.0; n];
    let mut scale_density = vec![0.0; n];
    for i in 0..n {
        let g2 = geo.grad_norm[i] * geo.grad_norm[i];
        let p2 = phi.values()[i] * phi.values()[i];
        let a = g2 * dphi.values()[i];
        let b = (geo.hess_sq[i] - geo.grad_grad_norm_sq[i] + geo.ricci_term[i]) * p2;
        rhs_density[i] = a - b;
        scale_density[i] = a + (geo.hess_sq[i] + geo.grad_grad_norm_sq[i] + geo.ricci_term[i].abs()) * p2;
    }
    let rhs = domain.integrate_slice(&rhs_density, None);
    let scale = domain.integrate_slice(&scale_density, None);
    let h = domain.grid().max_spacing();
    let defect = (lhs - rhs).abs();
    Ok(IdentityCheck { lhs, rhs, defect, scale, tolerance: tol.bound(lhs, rhs, scale, h, eps) })
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
    fn potential_values() {
        let p = Potential::Quartic;
        assert_eq!(p.eval(1.0), (0.0, 0.0, 2.0));
        assert_eq!(p.eval(-1.0), (0.0, 0.0, 2.0));
        assert_eq!(p.eval(0.0), (0.25, 0.0, -1.0));
        assert!((p.sigma() - 0.47140452079103168).abs() < 1e-15);
    }

    #[test]
    fn sigma_and_psi_by_quadrature() {
        let p = Potential::Quartic;
        // composite Simpson on sqrt(W/2), independent of the closed forms
        let simpson = |a: f64, b: f64, n: usize| {
            let h = (b - a) / n as f64;
            let f = |s: f64| (p.w(s) / 2.0).sqrt();
            let mut acc = f(a) + f(b);
            for k in 1..n {
                acc += f(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
            }
            acc * h / 3.0
        };
        assert!((simpson(-1.0, 1.0, 2000) - p.sigma()).abs() < 1e-10);
        for t in [-1.7, -0.4, 0.3, 0.99, 1.0, 1.3, 2.0] {
            let q = if t >= 0.0 { simpson(0.0, t, 4000) } else { -simpson(t, 0.0, 4000) };
            // integrand has a kink at |s| = 1; split for accuracy
            let q = if t.abs() > 1.0 {
                t.signum() * (simpson(0.0, 1.0, 4000) + simpson(1.0, t.abs(), 4000))
            } else {
                q
            };
            assert!((p.psi(t) - q).abs() < 1e-10, "t={t}");
        }
        assert!((p.psi(1.0) - p.psi(-1.0) - p.sigma()).abs() < 1e-15);
    }

    #[test]
    fn energy_examples() {
        let d = unit2(32);
        let p = Potential::Quartic;
        let one = ScalarField::constant(d.grid().clone(), 1.0);
        assert_eq!(energy(&d, p, &one, 0.1, None).unwrap().total, 0.0);
        for eps in [0.05, 0.3, 1.7] {
            let zero = ScalarField::zeros(d.grid().clone());
            let e = energy(&d, p, &zero, eps, None).unwrap();
            assert!((e.total - 1.0 / (4.0 * eps)).abs() < 1e-12);
        }
        assert!(matches!(energy(&d, p, &one, 0.0, None), Err(AllenCahnError::NonPositiveEpsilon(_))));
        assert!(matches!(residual(&d, p, &one, -1.0), Err(AllenCahnError::NonPositiveEpsilon(_))));
    }

    #[test]
    fn residual_of_wells_is_zero() {
        let d = unit2(16);
        let p = Potential::Quartic;
        for c in [-1.0, 0.0, 1.0] {
            let u = ScalarField::constant(d.grid().clone(), c);
            assert!(residual(&d, p, &u, 0.1).unwrap().values().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn second_variation_examples() {
        let d = unit2(16);
        let p = Potential::Quartic;
        let eps = 0.2;
        let zero = ScalarField::zeros(d.grid().clone());
        let one = ScalarField::constant(d.grid().clone(), 1.0);
        let q = second_variation(&d, p, &zero, eps, &one, None).unwrap();
        assert!((q + 1.0 / eps).abs() < 1e-12);
        let phi = ScalarField::from_fn(d.grid().clone(), |x| (2.0 * PI * x[0]).sin());
        let q1 = second_variation(&d, p, &one, eps, &phi, None).unwrap();
        assert!(q1 > 0.0);
        let half = RegionMask::band(d.grid().clone(), 0, 0.0, 0.4);
        assert!(matches!(
            second_variation(&d, p, &one, eps, &phi, Some(&half)),
            Err(AllenCahnError::SupportViolation { .. })
        ));
    }

    #[test]
    fn identity_trivial_for_constant() {
        let d = unit2(16);
        let p = Potential::Quartic;
        let one = ScalarField::constant(d.grid().clone(), 1.0);
        let phi = ScalarField::from_fn(d.grid().clone(), |x| (2.0 * PI * x[0]).sin());
        let c = weighted_second_variation_identity(&d, p, &one, 0.1, &phi, None, 1e-8, IdentityTolerance::default()).unwrap();
        assert_eq!((c.lhs, c.rhs), (0.0, 0.0));
        let bump = ScalarField::from_fn(d.grid().clone(), |x| (2.0 * PI * x[0]).sin() * 0.5);
        assert!(matches!(
            weighted_second_variation_identity(&d, p, &bump, 0.1, &phi, None, 1e-8, IdentityTolerance::default()),
            Err(AllenCahnError::NotCritical { .. })
        ));
    }
}
