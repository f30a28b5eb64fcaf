//! Browser front end for a small Allen-Cahn laboratory on the unit square torus.
//!
//! Results cross the boundary as JSON strings; the page parses them.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

use ac_spectra::allen_cahn::{energy, Potential};
use ac_spectra::critical_points::{gradient_flow_steps, stripe_profile, SolverOptions};
use ac_spectra::domain::{Domain, RegionMask, ScalarField, TorusGrid};
use ac_spectra::limit_surface::extract_level_set;
use ac_spectra::spectrum::{assemble, eigen_smallest, tol_zero, EigenOptions};

const POTENTIAL: Potential = Potential::Quartic;

#[wasm_bindgen(start)]
pub fn start() {
    console_error_panic_hook::set_once();
}

#[derive(Serialize)]
struct FlowSummary {
    steps: usize,
    total_steps: usize,
    residual: f64,
    energy: f64,
    energy_over_2sigma: f64,
    converged: bool,
}

#[derive(Serialize)]
struct SpectrumSummary {
    region_nodes: usize,
    eigenvalues: Vec<f64>,
    index: usize,
    tol_zero: f64,
}

#[derive(Serialize)]
struct InterfaceSummary {
    curves: Vec<Vec<[f64; 2]>>,
    lengths: Vec<f64>,
    total_length: f64,
}

fn json<T: Serialize>(v: &T) -> Result<String, String> {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub struct Lab {
    domain: Domain,
    u: ScalarField,
    eps: f64,
    steps: usize,
}

#[wasm_bindgen]
impl Lab {
    /// An `n x n` grid on the unit torus, starting from two stripes.
    #[wasm_bindgen(constructor)]
    pub fn new(n: usize, eps: f64) -> Result<Lab, String> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(format!("epsilon must be positive, got {eps}"));
        }
        let g = Arc::new(TorusGrid::new(2, &[1.0, 1.0], &[n, n]).map_err(|e| e.to_string())?);
        let u = stripe_profile(&g, POTENTIAL, eps, 0, 0.25, 0.75);
        Ok(Lab { domain: Domain::flat(g), u, eps, steps: 0 })
    }

    pub fn n(&self) -> usize {
        self.domain.grid().resolution()[0]
    }

    pub fn epsilon(&self) -> f64 {
        self.eps
    }

    pub fn set_stripes(&mut self, lo: f64, hi: f64) {
        self.u = stripe_profile(self.domain.grid(), POTENTIAL, self.eps, 0, lo, hi);
        self.steps = 0;
    }

    /// `+1` inside a disk, `-1` outside, joined by the 1-D profile.
    pub fn set_bubble(&mut self, cx: f64, cy: f64, radius: f64) {
        let g = self.domain.grid().clone();
        let eps = self.eps;
        self.u = ScalarField::from_fn(g.clone(), |x| POTENTIAL.heteroclinic(radius - g.periodic_distance(x, &[cx, cy, 0.0]), eps));
        self.steps = 0;
    }

    pub fn set_noise(&mut self, amplitude: f64, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = (0..self.domain.len()).map(|_| amplitude * rng.gen_range(-1.0..1.0)).collect();
        self.u = ScalarField::new(self.domain.grid().clone(), v).expect("grid-sized field");
        self.steps = 0;
    }

    /// Up to `steps` stabilised gradient-flow steps.
    pub fn relax(&mut self, steps: usize) -> Result<String, String> {
        let opts = SolverOptions::default();
        let run = gradient_flow_steps(&self.domain, &self.u, self.eps, opts.tol_res, steps, &opts).map_err(|e| e.to_string())?;
        self.u = run.u;
        self.steps += run.steps;
        let e = energy(&self.domain, POTENTIAL, &self.u, self.eps, None).map_err(|e| e.to_string())?;
        json(&FlowSummary {
            steps: run.steps,
            total_steps: self.steps,
            residual: run.residual_linf,
            energy: e.total,
            energy_over_2sigma: e.total / (2.0 * POTENTIAL.sigma()),
            converged: run.residual_linf <= opts.tol_res,
        })
    }

    /// Node values; entry `i * n + j` sits at `(i / n, j / n)`.
    pub fn field(&self) -> Vec<f64> {
        self.u.values().to_vec()
    }

    /// Lowest `p` Dirichlet eigenvalues of the linearisation on a disk; radius `>= 1` means
    /// the whole torus.
    pub fn spectrum(&self, p: usize, cx: f64, cy: f64, radius: f64) -> Result<String, String> {
        let g = self.domain.grid().clone();
        let mask = if radius >= 1.0 { RegionMask::full(g) } else { RegionMask::ball(g, &[cx, cy, 0.0], radius) };
        if mask.count() < p {
            return Err(format!("region has {} nodes, fewer than p = {p}", mask.count()));
        }
        let op = assemble(&self.domain, POTENTIAL, &self.u, self.eps, &mask).map_err(|e| e.to_string())?.with_preconditioner();
        let r = eigen_smallest(&op, p, &EigenOptions::default()).map_err(|e| e.to_string())?;
        let tz = tol_zero(self.eps);
        json(&SpectrumSummary {
            region_nodes: mask.count(),
            index: r.eigenvalues.iter().filter(|&&l| l < -tz).count(),
            eigenvalues: r.eigenvalues,
            tol_zero: tz,
        })
    }

    /// Zero level set as closed polylines with their lengths.
    pub fn interface(&self) -> Result<String, String> {
        let s = extract_level_set(&self.domain, &self.u, 0.0, None).map_err(|e| e.to_string())?;
        let curves = s.components().iter().map(|c| c.vertices.iter().map(|v| [v[0], v[1]]).collect()).collect();
        let lengths: Vec<f64> = s.components().iter().map(|c| c.measure).collect();
        json(&InterfaceSummary { curves, total_length: lengths.iter().sum(), lengths })
    }
}
