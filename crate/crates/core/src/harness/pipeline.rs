use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, InitialCondition, MethodConfig};
use super::output::{emit_plot_data, write_tables};
use super::report::*;
use crate::critical_points::{continue_from_field, mountain_pass, stripe_profile, CriticalPoint, EpsSchedule, MountainPassOptions, SolverOptions};
use crate::domain::io::{read_field, write_field};
use crate::domain::{Domain, Mat3, RegionMask, ScalarField, TorusGrid, Vec3, VectorField};
use crate::error::{HarnessError, VarifoldError};
use crate::limit_surface::{
    estimate_multiplicity, extract_level_set, jacobi_operator, jacobi_spectrum, masked_arc_length, rayleigh_transfer_check,
    spectral_verdict, Cutoff, RunSample, SurfaceMesh,
};
use crate::spectrum::{assemble, eigen_smallest, morse_index_report, tol_zero, EigenOptions};
use crate::varifold::{
    ball_curvature_bound, build_diffuse_varifold, equipartition_defect, first_variation_defect, generalized_curvature_residual,
    mass, measure_function_pairing, pointwise_hessian_bound, DiffuseVarifold, GrassmannTestFunction,
};

/// Deliberate defects used to check that the verification suite notices them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fault {
    /// Reports surface eigenvalues with the opposite sign convention.
    FlipJacobiSign,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    /// Last stage to execute.
    pub until: Stage,
    /// Directory of a previous run whose field dumps replace the solve stage.
    pub resume_from: Option<PathBuf>,
    pub plots: bool,
    pub fault: Option<Fault>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { until: Stage::Limit, resume_from: None, plots: true, fault: None }
    }
}

/// Metadata stored next to each field dump.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FieldSidecar {
    pub run_id: String,
    pub step: usize,
    pub epsilon: f64,
    pub residual: f64,
    pub energy: f64,
    pub index: usize,
    pub seed: u64,
    pub lengths: Vec<f64>,
    pub resolution: Vec<usize>,
    pub point: CriticalPoint,
}

struct Run<'c> {
    config: &'c ExperimentConfig,
    schedule: EpsSchedule,
    opts: SolverOptions,
    points: Vec<CriticalPoint>,
    domains: Vec<Domain>,
    varifolds: Vec<DiffuseVarifold>,
}

/// Full pipeline with plot data.
pub fn run_experiment(config: &ExperimentConfig, out: &Path) -> Result<Report, HarnessError> {
    run_pipeline(config, out, &RunOptions::default())
}

/// Runs the stages up to `opts.until`, writing every artifact into `out`. On a stage failure
/// the partial report is written with `status = FAILED` before the error is returned.
pub fn run_pipeline(config: &ExperimentConfig, out: &Path, opts: &RunOptions) -> Result<Report, HarnessError> {
    let start = Instant::now();
    let schedule = config.validate()?;
    fs::create_dir_all(out)?;
    let mut report = Report::new(config.clone());
    let solver = SolverOptions {
        potential: config.potential,
        tol_res: config.tolerances.tol_res,
        eigen: EigenOptions { seed: config.seed ^ 0x5eed, ..EigenOptions::default() },
        ..SolverOptions::default()
    };
    let mut run = Run { config, schedule, opts: solver, points: Vec::new(), domains: Vec::new(), varifolds: Vec::new() };
    let stages = [Stage::Solve, Stage::Spectrum, Stage::Varifold, Stage::Limit];
    let mut failure = None;
    for stage in stages.into_iter().filter(|s| *s <= opts.until) {
        let r = match stage {
            Stage::Solve => run.solve(&mut report, out, opts.resume_from.as_deref()),
            Stage::Spectrum => run.spectra(&mut report),
            Stage::Varifold => run.varifold(&mut report),
            _ => run.limit(&mut report, opts.fault),
        };
        if let Err(message) = r {
            failure = Some((stage, message));
            break;
        }
    }
    if let Some((stage, message)) = &failure {
        report.status = Status::Failed;
        report.failed_stage = Some(*stage);
        report.message = Some(message.clone());
    }
    report.provenance.wall_time_s = start.elapsed().as_secs_f64();
    if let Err(e) = write_outputs(&report, out, opts.plots && failure.is_none()) {
        if failure.is_none() {
            report.status = Status::Failed;
            report.failed_stage = Some(Stage::Write);
            report.message = Some(e.to_string());
            let _ = write_json(&out.join("report.json"), &report);
        }
        return Err(e);
    }
    match failure {
        Some((stage, message)) => Err(HarnessError::Stage { stage: stage.to_string(), message }),
        None => Ok(report),
    }
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<(), HarnessError> {
    let f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(f, v)?;
    Ok(())
}

fn write_outputs(report: &Report, out: &Path, plots: bool) -> Result<(), HarnessError> {
    write_json(&out.join("report.json"), report)?;
    write_json(&out.join("limit_report.json"), &report.limit_report())?;
    write_tables(report, out)?;
    if plots {
        emit_plot_data(report, &out.join("plots"))?;
    }
    Ok(())
}

fn msg(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// Starting field of the gradient-flow method on `grid`.
pub fn initial_field(config: &ExperimentConfig, initial: &InitialCondition, grid: &Arc<TorusGrid>, eps: f64) -> ScalarField {
    match initial {
        InitialCondition::Stripes { axis, lo, hi } => stripe_profile(grid, config.potential, eps, *axis, *lo, *hi),
        InitialCondition::Cosine { amplitude, wavenumbers } => {
            let l = grid.lengths().to_vec();
            ScalarField::from_fn(grid.clone(), |x| {
                let t: f64 = wavenumbers.iter().enumerate().take(l.len()).map(|(a, &k)| k as f64 * x[a] / l[a]).sum();
                amplitude * (2.0 * std::f64::consts::PI * t).cos()
            })
        }
        InitialCondition::Random { amplitude } => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let v = (0..grid.len()).map(|_| amplitude * rng.gen_range(-1.0..1.0)).collect();
            ScalarField::from_vec_unchecked(grid.clone(), v)
        }
    }
}

/// Three generic divergence-carrying vector fields for the first-variation check.
pub fn standard_vector_fields(grid: &Arc<TorusGrid>) -> Vec<VectorField> {
    use std::f64::consts::PI;
    let d = grid.dim();
    let mut l = [1.0; 3];
    l[..d].copy_from_slice(grid.lengths());
    let s = move |x: &Vec3, a: usize| if a < d { 2.0 * PI * x[a] / l[a] } else { 0.0 };
    let z = move |v: f64| if d == 3 { v } else { 0.0 };
    vec![
        VectorField::from_fn(grid.clone(), move |x| [(s(x, 0) + 0.7).sin(), 0.0, 0.0]),
        VectorField::from_fn(grid.clone(), move |x| {
            [(s(x, 0) + s(x, 1) + 0.3).cos(), (s(x, 0) + 1.1).sin(), z((s(x, 2) + s(x, 1)).sin())]
        }),
        VectorField::from_fn(grid.clone(), move |x| {
            [
                (2.0 * s(x, 0) + 0.5).sin() * s(x, 1).cos(),
                s(x, 0).cos() * (s(x, 1) + 0.2).sin(),
                z((s(x, 2) + 0.4).cos() * s(x, 0).sin()),
            ]
        }),
    ]
}

/// Three Grassmann test functions: purely spatial, linear in `S`, and with a quadratic part.
pub fn standard_grassmann_functions(grid: &Arc<TorusGrid>) -> Result<Vec<GrassmannTestFunction>, VarifoldError> {
    use std::f64::consts::PI;
    let l = grid.lengths().to_vec();
    let a1 = ScalarField::from_fn(grid.clone(), |x| 1.0 + 0.3 * (2.0 * PI * x[0] / l[0]).cos());
    let a2 = ScalarField::from_fn(grid.clone(), |x| (2.0 * PI * x[1] / l[1] + 0.4).sin() + 0.5 * (2.0 * PI * x[0] / l[0]).cos());
    let a3 = ScalarField::from_fn(grid.clone(), |x| (0.8 * (2.0 * PI * (x[0] / l[0] - x[1] / l[1])).cos()).exp());
    let c1: Mat3 = [[0.5, 0.1, 0.0], [0.1, -0.4, 0.2], [0.0, 0.2, 0.3]];
    let c1b: Mat3 = [[-0.2, 0.3, 0.1], [0.3, 0.6, 0.0], [0.1, 0.0, -0.1]];
    let c2: Vec<f64> = (0..81).map(|i| ((i * 7) % 11) as f64 / 50.0 - 0.1).collect();
    Ok(vec![
        GrassmannTestFunction::spatial(a1),
        GrassmannTestFunction::new(a2, 0.2, c1, Vec::new())?,
        GrassmannTestFunction::new(a3, 0.1, c1b, c2)?,
    ])
}

fn fields_dir(out: &Path) -> PathBuf {
    out.join("fields")
}

impl Run<'_> {
    fn domain_for(&self, res: &[usize]) -> Result<Domain, String> {
        let g = TorusGrid::new(self.config.grid.dim, &self.config.grid.lengths, res).map_err(msg)?;
        Ok(Domain::new(Arc::new(g), self.config.metric.clone()))
    }

    fn solve(&mut self, report: &mut Report, out: &Path, resume: Option<&Path>) -> Result<(), String> {
        let cfg = self.config;
        self.points = match resume {
            Some(dir) => self.load_points(dir)?,
            None => {
                let d0 = self.domain_for(&self.schedule.resolutions[0])?;
                let eps0 = self.schedule.epsilons[0];
                let start = match &cfg.method {
                    MethodConfig::GradientFlow { initial } => initial_field(cfg, initial, d0.grid(), eps0),
                    MethodConfig::MountainPass { path_points, max_iter, noise } => {
                        let mp = MountainPassOptions {
                            path_points: *path_points,
                            max_iter: *max_iter,
                            noise: *noise,
                            seed: cfg.seed,
                            index_bound: cfg.k,
                            ..MountainPassOptions::default()
                        };
                        mountain_pass(&d0, eps0, &mp, &self.opts).map_err(msg)?.field().clone()
                    }
                };
                continue_from_field(&start, &cfg.metric, &self.schedule, &self.opts).map_err(msg)?.points
            }
        };
        self.domains = self.points.iter().map(|p| Domain::new(p.field().grid().clone(), cfg.metric.clone())).collect();
        let dir = fields_dir(out);
        fs::create_dir_all(&dir).map_err(msg)?;
        for (step, p) in self.points.iter().enumerate() {
            let g = p.field().grid();
            report.rows.push(EpsRow {
                step,
                epsilon: p.epsilon,
                resolution: g.resolution().to_vec(),
                energy: p.energy.total,
                dirichlet_energy: p.energy.dirichlet_part,
                potential_energy: p.energy.potential_part,
                sup_norm: p.sup_norm,
                residual: p.residual_linf,
                index: p.morse_index,
                near_zero: p.near_zero,
                flags: p.flags.clone(),
                region_index: BTreeMap::new(),
                varifold: None,
            });
            let stem = format!("u_{step:02}");
            write_field(BufWriter::new(File::create(dir.join(format!("{stem}.acfd"))).map_err(msg)?), p.field()).map_err(msg)?;
            let side = FieldSidecar {
                run_id: cfg.name.clone(),
                step,
                epsilon: p.epsilon,
                residual: p.residual_linf,
                energy: p.energy.total,
                index: p.morse_index,
                seed: cfg.seed,
                lengths: g.lengths().to_vec(),
                resolution: g.resolution().to_vec(),
                point: p.clone(),
            };
            write_json(&dir.join(format!("{stem}.json")), &side).map_err(msg)?;
        }
        Ok(())
    }

    fn load_points(&self, dir: &Path) -> Result<Vec<CriticalPoint>, String> {
        let dir = fields_dir(dir);
        let mut points = Vec::with_capacity(self.schedule.len());
        for (step, &eps) in self.schedule.epsilons.iter().enumerate() {
            let stem = format!("u_{step:02}");
            let side: FieldSidecar = serde_json::from_reader(File::open(dir.join(format!("{stem}.json"))).map_err(msg)?).map_err(msg)?;
            if side.epsilon != eps || side.resolution != self.schedule.resolutions[step] {
                return Err(format!("{stem}: dump does not match the configured schedule"));
            }
            let dump = read_field(File::open(dir.join(format!("{stem}.acfd"))).map_err(msg)?).map_err(msg)?;
            let mut p = side.point;
            p.u = Some(dump.into_field(&self.config.grid.lengths).map_err(msg)?);
            points.push(p);
        }
        Ok(points)
    }

    fn spectra(&mut self, report: &mut Report) -> Result<(), String> {
        let cfg = self.config;
        for (step, (p, d)) in self.points.iter().zip(&self.domains).enumerate() {
            let eps = p.epsilon;
            for r in &cfg.regions {
                let mask = RegionMask::from_spec(d.grid().clone(), &r.spec, &r.name).map_err(msg)?;
                if mask.is_empty() {
                    return Err(format!("region '{}' is empty at epsilon {eps}", r.name));
                }
                let op = assemble(d, cfg.potential, p.field(), eps, &mask).map_err(msg)?.with_preconditioner();
                let n = mask.count();
                let sp = eigen_smallest(&op, cfg.spectra.p.min(n), &self.opts.eigen).map_err(msg)?;
                let tz = tol_zero(eps);
                let index = if sp.eigenvalues.iter().all(|&l| l < -tz) && sp.eigenvalues.len() < n {
                    morse_index_report(d, cfg.potential, p.field(), eps, &mask, &self.opts.eigen).map_err(msg)?.index
                } else {
                    sp.eigenvalues.iter().filter(|&&l| l < -tz).count()
                };
                report.rows[step].region_index.insert(r.name.clone(), index);
                for (q, (&lambda, &residual)) in sp.eigenvalues.iter().zip(&sp.residuals).enumerate() {
                    report.spectra.push(SpectrumRow {
                        epsilon: eps,
                        region: r.name.clone(),
                        p: q + 1,
                        lambda,
                        solver: sp.solver.to_string(),
                        residual,
                    });
                }
            }
        }
        Ok(())
    }

    fn varifold(&mut self, report: &mut Report) -> Result<(), String> {
        let cfg = self.config;
        let pot = cfg.potential;
        let tol = cfg.tolerances.identity;
        let crit = 10.0 * cfg.tolerances.tol_res;
        self.varifolds.clear();
        for (step, (p, d)) in self.points.iter().zip(&self.domains).enumerate() {
            let (u, eps) = (p.field(), p.epsilon);
            let g = d.grid();
            let v = build_diffuse_varifold(d, pot, u, eps, None).map_err(msg)?;
            let ones = ScalarField::constant(g.clone(), 1.0);
            let eq = equipartition_defect(d, pot, u, eps, &ones).map_err(msg)?;
            let first_variation = standard_vector_fields(g)
                .iter()
                .map(|x| first_variation_defect(d, pot, u, eps, x, crit, tol))
                .collect::<Result<Vec<_>, _>>()
                .map_err(msg)?;
            let curvature_l2 = measure_function_pairing(&v, v.curvature_sq(), ones.values()).map_err(msg)?;
            let radius = cfg.spectra.ball_radius * g.lengths().iter().cloned().fold(f64::INFINITY, f64::min);
            let mut ratios = Vec::new();
            let mut unstable = 0;
            for c in ball_centers(d, u, cfg.spectra.balls).map_err(msg)? {
                match ball_curvature_bound(d, pot, u, eps, &c, radius, &self.opts.eigen) {
                    Ok(b) => ratios.push(b.ratio),
                    Err(VarifoldError::NotStableInBall { .. }) => unstable += 1,
                    Err(e) => return Err(msg(e)),
                }
            }
            let pw = pointwise_hessian_bound(&v);
            let (excess, bviol) = if d.is_flat() {
                let mut worst = f64::NEG_INFINITY;
                let mut viol = 0;
                for gt in standard_grassmann_functions(g).map_err(msg)? {
                    let r = generalized_curvature_residual(d, pot, u, eps, &gt, crit, tol).map_err(msg)?;
                    worst = worst.max(r.defect - r.tolerance);
                    viol += r.b_bound_violations;
                }
                (Some(worst), Some(viol))
            } else {
                (None, None)
            };
            report.rows[step].varifold = Some(VarifoldRow {
                mass: mass(&v, None),
                energy_mass: p.energy.total / (2.0 * pot.sigma()),
                equipartition: [eq.dirichlet, eq.potential, eq.psi_gradient],
                equipartition_defect: eq.defect,
                first_variation_residual: first_variation.iter().map(|c| c.defect).fold(0.0, f64::max),
                first_variation,
                curvature_l2,
                ball_ratio_max: ratios.iter().cloned().reduce(f64::max),
                unstable_balls: unstable,
                pointwise_checked: pw.checked,
                pointwise_violations: pw.violations,
                curvature_identity_excess: excess,
                b_bound_violations: bviol,
            });
            self.varifolds.push(v);
        }
        Ok(())
    }

    fn limit(&mut self, report: &mut Report, fault: Option<Fault>) -> Result<(), String> {
        let cfg = self.config;
        let tols = cfg.tolerances;
        let (last, d) = match (self.points.last(), self.domains.last()) {
            (Some(p), Some(d)) => (p, d),
            _ => return Err("no schedule points".into()),
        };
        if self.varifolds.len() != self.points.len() {
            return Err("limit stage needs the varifold stage".into());
        }
        let raw = extract_level_set(d, last.field(), 0.0, None).map_err(msg)?;
        if raw.components().is_empty() {
            return Err(format!("no interface at epsilon {}", last.epsilon));
        }
        let (surface, est) = estimate_multiplicity(&self.varifolds, &raw, cfg.limit.merge_factor * last.epsilon).map_err(msg)?;
        let theta = surface.multiplicities();
        let components = surface
            .components()
            .iter()
            .zip(&est)
            .map(|(c, e)| ComponentRow {
                id: c.id,
                intrinsic_dim: c.intrinsic_dim,
                measure: c.measure,
                multiplicity: e.multiplicity.or(Some(c.multiplicity)),
                ratio: Some(e.ratio),
                flagged: c.flagged,
            })
            .collect();
        let runs: Vec<RunSample> =
            self.points.iter().zip(&self.domains).map(|(p, d)| RunSample { domain: d, u: p.field(), epsilon: p.epsilon }).collect();
        let mut spectra = BTreeMap::new();
        let mut gap = 0.0f64;
        let mut negatives = 0;
        let mut verdicts = Verdicts::not_run(cfg);
        for r in &cfg.regions {
            let smask = surface.mask_from_spec(&r.spec, &r.name);
            let count = smask.count();
            if count == 0 {
                spectra.insert(
                    r.name.clone(),
                    RegionSpectrum { surface_nodes: 0, weighted: vec![], unweighted: vec![], arc_length: None, rayleigh: None, rayleigh_error: None },
                );
                continue;
            }
            let op = jacobi_operator(&surface, &smask).map_err(msg)?;
            let p = cfg.spectra.p.min(count);
            let mut weighted = jacobi_spectrum(&op, p, &theta, true, &self.opts.eigen).map_err(msg)?.eigenvalues;
            let eo = EigenOptions { want_vectors: true, ..self.opts.eigen };
            let un = jacobi_spectrum(&op, p, &theta, false, &eo).map_err(msg)?;
            gap = weighted.iter().zip(&un.eigenvalues).fold(gap, |g, (a, b)| g.max((a - b).abs()));
            if fault == Some(Fault::FlipJacobiSign) {
                weighted.iter_mut().for_each(|l| *l = -*l);
            }
            let table = report.region_table(&r.name);
            let v = spectral_verdict(&weighted, &table, cfg.k, tols.tail, tols.slack, tols.tol_zero).map_err(msg)?;
            negatives = negatives.max(v.negatives);
            let mut per_p: Vec<PVerdict> = v
                .per_p
                .iter()
                .map(|e| PVerdict {
                    p: e.p,
                    mark: Mark::from_bool(e.pass),
                    lambda_v: Some(e.lambda_v),
                    tail_max: Some(e.tail_max),
                    slack: Some(e.slack),
                })
                .collect();
            per_p.extend((per_p.len() + 1..=cfg.spectra.p).map(|p| PVerdict { p, mark: Mark::NotRun, lambda_v: None, tail_max: None, slack: None }));
            verdicts.spectral_lower_bound.insert(r.name.clone(), per_p);
            let touched: Vec<usize> = (0..surface.components().len()).filter(|&c| component_masked(&surface, smask.inside(), c)).collect();
            let arc_length = if touched.len() == 1 { masked_arc_length(&surface, &smask, touched[0]) } else { None };
            let (rayleigh, rayleigh_error) = match self.rayleigh(&surface, &op, &un.eigenvectors.unwrap_or_default(), &runs) {
                Ok(t) => (t, None),
                Err(e) => (None, Some(e)),
            };
            spectra.insert(
                r.name.clone(),
                RegionSpectrum { surface_nodes: count, weighted, unweighted: un.eigenvalues, arc_length, rayleigh, rayleigh_error },
            );
        }
        let max_index = self.points.iter().map(|p| p.morse_index).max();
        verdicts.index_bound = IndexVerdict {
            mark: Mark::from_bool(negatives <= cfg.k),
            k: cfg.k,
            negatives: Some(negatives),
            max_certified_index: max_index,
            hypothesis_holds: max_index.map(|m| m <= cfg.k),
        };
        report.verdicts = verdicts;
        report.limit = Some(LimitBlock { epsilon: last.epsilon, components, spectra, weighted_unweighted_gap: gap });
        Ok(())
    }

    fn rayleigh(
        &self,
        surface: &SurfaceMesh,
        op: &crate::limit_surface::JacobiOperator,
        vectors: &[Vec<f64>],
        runs: &[RunSample],
    ) -> Result<Option<crate::limit_surface::RayleighTable>, String> {
        let cfg = self.config;
        let Some(phi) = vectors.first() else { return Ok(None) };
        let sep = surface.min_separation();
        let tau = if sep.is_finite() { cfg.limit.transfer_tau.min(0.5 * sep) } else { cfg.limit.transfer_tau };
        if !(tau > 0.0) {
            return Ok(None);
        }
        rayleigh_transfer_check(runs, cfg.potential, op, phi, tau, Cutoff::Cubic, cfg.tolerances.tail, cfg.tolerances.slack)
            .map(Some)
            .map_err(msg)
    }
}

fn component_masked(surface: &SurfaceMesh, inside: &[bool], c: usize) -> bool {
    let off = surface.offset(c);
    inside[off..off + surface.components()[c].len()].iter().any(|&b| b)
}

/// Up to `per_component` evenly spaced points on each zero-level component of `u`.
pub fn ball_centers(domain: &Domain, u: &ScalarField, per_component: usize) -> Result<Vec<Vec3>, crate::error::SurfaceError> {
    if per_component == 0 {
        return Ok(Vec::new());
    }
    let s = extract_level_set(domain, u, 0.0, None)?;
    Ok(s.components()
        .iter()
        .flat_map(|c| {
            let n = c.vertices.len();
            let k = per_component.min(n);
            (0..k).map(move |j| c.vertices[j * n / k])
        })
        .collect())
}
