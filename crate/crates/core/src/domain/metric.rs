use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::grid::{Mat3, Vec3};

/// One cosine mode `a cos(2 pi sum_a m_a x_a / L_a + phase)` of the conformal exponent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConformalMode {
    pub amplitude: f64,
    pub wavenumbers: Vec<i32>,
    #[serde(default)]
    pub phase: f64,
}

/// Riemannian metric on the torus: flat, or `e^{2f} delta` with a closed-form exponent `f`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Flat,
    Conformal { modes: Vec<ConformalMode> },
}

impl Metric {
    pub fn is_flat(&self) -> bool {
        match self {
            Metric::Flat => true,
            Metric::Conformal { modes } => modes.iter().all(|m| m.amplitude == 0.0),
        }
    }

    fn for_each_mode(&self, dim: usize, lengths: &[f64], x: &Vec3, mut f: impl FnMut(f64, f64, Vec3)) {
        if let Metric::Conformal { modes } = self {
            for m in modes {
                let mut k = [0.0; 3];
                for a in 0..dim.min(m.wavenumbers.len()) {
                    k[a] = 2.0 * PI * m.wavenumbers[a] as f64 / lengths[a];
                }
                let theta = k[0] * x[0] + k[1] * x[1] + k[2] * x[2] + m.phase;
                f(m.amplitude, theta, k);
            }
        }
    }

    /// The exponent `f(x)`.
    pub fn exponent(&self, dim: usize, lengths: &[f64], x: &Vec3) -> f64 {
        let mut s = 0.0;
        self.for_each_mode(dim, lengths, x, |a, t, _| s += a * t.cos());
        s
    }

    pub fn exponent_gradient(&self, dim: usize, lengths: &[f64], x: &Vec3) -> Vec3 {
        let mut g = [0.0; 3];
        self.for_each_mode(dim, lengths, x, |a, t, k| {
            let s = -a * t.sin();
            for i in 0..3 {
                g[i] += s * k[i];
            }
        });
        g
    }

    pub fn exponent_hessian(&self, dim: usize, lengths: &[f64], x: &Vec3) -> Mat3 {
        let mut h = [[0.0; 3]; 3];
        self.for_each_mode(dim, lengths, x, |a, t, k| {
            let c = -a * t.cos();
            for i in 0..3 {
                for j in 0..3 {
                    h[i][j] += c * k[i] * k[j];
                }
            }
        });
        h
    }

    /// Ricci tensor in coordinate components at `x`.
    pub fn ricci(&self, dim: usize, lengths: &[f64], x: &Vec3) -> Mat3 {
        let mut ric = [[0.0; 3]; 3];
        if self.is_flat() {
            return ric;
        }
        let df = self.exponent_gradient(dim, lengths, x);
        let hf = self.exponent_hessian(dim, lengths, x);
        let n = dim as f64;
        let lap: f64 = (0..dim).map(|a| hf[a][a]).sum();
        let grad_sq: f64 = (0..dim).map(|a| df[a] * df[a]).sum();
        for a in 0..dim {
            for b in 0..dim {
                ric[a][b] = -(n - 2.0) * (hf[a][b] - df[a] * df[b]);
                if a == b {
                    ric[a][b] -= lap + (n - 2.0) * grad_sq;
                }
            }
        }
        ric
    }

    /// `Ric(nu, nu)` for the unit normal along the Euclidean unit direction `n_hat`.
    pub fn ricci_normal(&self, dim: usize, lengths: &[f64], x: &Vec3, n_hat: &Vec3) -> f64 {
        if self.is_flat() {
            return 0.0;
        }
        let ric = self.ricci(dim, lengths, x);
        let f = self.exponent(dim, lengths, x);
        let mut s = 0.0;
        for a in 0..dim {
            for b in 0..dim {
                s += ric[a][b] * n_hat[a] * n_hat[b];
            }
        }
        (-2.0 * f).exp() * s
    }

    /// Scalar curvature at `x`.
    pub fn scalar_curvature(&self, dim: usize, lengths: &[f64], x: &Vec3) -> f64 {
        let ric = self.ricci(dim, lengths, x);
        let f = self.exponent(dim, lengths, x);
        (-2.0 * f).exp() * (0..dim).map(|a| ric[a][a]).sum::<f64>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_metric() -> Metric {
        Metric::Conformal {
            modes: vec![
                ConformalMode { amplitude: 0.1, wavenumbers: vec![1, 0, 1], phase: 0.3 },
                ConformalMode { amplitude: -0.07, wavenumbers: vec![0, 2, 1], phase: 1.1 },
            ],
        }
    }

    // Independent route: Christoffel symbols from finite differences of the metric
    // components, then Ricci by the coordinate contraction formula.
    fn ricci_by_christoffel(m: &Metric, dim: usize, lengths: &[f64], x: &Vec3) -> Mat3 {
        let g = |y: &Vec3| (2.0 * m.exponent(dim, lengths, y)).exp();
        let h = 1e-4;
        let shift = |y: &Vec3, a: usize, d: f64| {
            let mut z = *y;
            z[a] += d;
            z
        };
        let gamma = |y: &Vec3| {
            let mut dg = [0.0; 3];
            for a in 0..dim {
                dg[a] = (g(&shift(y, a, h)) - g(&shift(y, a, -h))) / (2.0 * h);
            }
            let gv = g(y);
            let mut gam = [[[0.0; 3]; 3]; 3];
            for c in 0..dim {
                for a in 0..dim {
                    for b in 0..dim {
                        let mut s = 0.0;
                        if c == a {
                            s += dg[b];
                        }
                        if c == b {
                            s += dg[a];
                        }
                        if a == b {
                            s -= dg[c];
                        }
                        gam[c][a][b] = 0.5 * s / gv;
                    }
                }
            }
            gam
        };
        let g0 = gamma(x);
        let mut dgam = [[[[0.0; 3]; 3]; 3]; 3];
        for e in 0..dim {
            let gp = gamma(&shift(x, e, h));
            let gm = gamma(&shift(x, e, -h));
            for c in 0..3 {
                for a in 0..3 {
                    for b in 0..3 {
                        dgam[e][c][a][b] = (gp[c][a][b] - gm[c][a][b]) / (2.0 * h);
                    }
                }
            }
        }
        let mut ric = [[0.0; 3]; 3];
        for a in 0..dim {
            for b in 0..dim {
                let mut s = 0.0;
                for c in 0..dim {
                    s += dgam[c][c][a][b] - dgam[b][c][a][c];
                    for d in 0..dim {
                        s += g0[c][c][d] * g0[d][a][b] - g0[c][b][d] * g0[d][a][c];
                    }
                }
                ric[a][b] = s;
            }
        }
        ric
    }

    #[test]
    fn flat_has_zero_ricci() {
        let m = Metric::Flat;
        assert_eq!(m.ricci(3, &[1.0, 1.0, 1.0], &[0.2, 0.3, 0.4]), [[0.0; 3]; 3]);
        let z = Metric::Conformal {
            modes: vec![ConformalMode { amplitude: 0.0, wavenumbers: vec![1, 1], phase: 0.0 }],
        };
        assert!(z.is_flat());
        assert_eq!(z.ricci(2, &[1.0, 1.0], &[0.1, 0.2, 0.0]), [[0.0; 3]; 3]);
    }

    #[test]
    fn ricci_matches_christoffel_route() {
        let m = sample_metric();
        for dim in [2usize, 3] {
            let lengths = [1.0, 1.3, 0.8];
            for x in [[0.1, 0.2, 0.3], [0.7, 0.05, 0.55], [0.33, 0.9, 0.1]] {
                let a = m.ricci(dim, &lengths[..dim], &x);
                let b = ricci_by_christoffel(&m, dim, &lengths[..dim], &x);
                for i in 0..dim {
                    for j in 0..dim {
                        assert!((a[i][j] - b[i][j]).abs() < 1e-5, "dim {dim} {i}{j}: {} vs {}", a[i][j], b[i][j]);
                    }
                }
            }
        }
    }

    #[test]
    fn gauss_curvature_in_2d() {
        let m = sample_metric();
        let x = [0.3, 0.6, 0.0];
        let l = [1.0, 1.0];
        let lap = {
            let h = m.exponent_hessian(2, &l, &x);
            h[0][0] + h[1][1]
        };
        let k = -(-2.0 * m.exponent(2, &l, &x)).exp() * lap;
        assert!((m.scalar_curvature(2, &l, &x) - 2.0 * k).abs() < 1e-12);
    }
}
