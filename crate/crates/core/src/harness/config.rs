use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::allen_cahn::{IdentityTolerance, Potential};
use crate::critical_points::EpsSchedule;
use crate::domain::{build_torus_grid, Metric, RegionMask, RegionSpec};
use crate::error::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub dim: usize,
    pub lengths: Vec<f64>,
}

/// Starting field for the gradient-flow method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialCondition {
    /// `+1` on `lo < x_axis < hi`, `-1` elsewhere, with heteroclinic transitions.
    Stripes { axis: usize, lo: f64, hi: f64 },
    /// `amplitude cos(2 pi k.x / L)`
    Cosine { amplitude: f64, wavenumbers: Vec<i32> },
    /// Uniform noise in `[-amplitude, amplitude]` drawn from the config seed.
    Random { amplitude: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MethodConfig {
    GradientFlow {
        initial: InitialCondition,
    },
    MountainPass {
        #[serde(default = "default_path_points")]
        path_points: usize,
        #[serde(default = "default_mp_iter")]
        max_iter: usize,
        #[serde(default = "default_noise")]
        noise: f64,
    },
}

fn default_path_points() -> usize {
    16
}
fn default_mp_iter() -> usize {
    4000
}
fn default_noise() -> f64 {
    1e-2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub epsilons: Vec<f64>,
    /// Explicit per-step resolutions; otherwise chosen from `min_nodes_per_width`.
    #[serde(default)]
    pub resolutions: Option<Vec<Vec<usize>>>,
    #[serde(default = "default_m_min")]
    pub min_nodes_per_width: f64,
    #[serde(default = "default_max_res")]
    pub max_resolution: usize,
}

fn default_m_min() -> f64 {
    8.0
}
fn default_max_res() -> usize {
    512
}

impl ScheduleConfig {
    pub fn build(&self, lengths: &[f64]) -> Result<EpsSchedule, HarnessError> {
        let s = match &self.resolutions {
            Some(r) => EpsSchedule::new(self.epsilons.clone(), r.clone(), lengths, self.min_nodes_per_width),
            None => EpsSchedule::with_policy(self.epsilons.clone(), lengths, self.min_nodes_per_width, self.max_resolution),
        };
        s.map_err(|e| HarnessError::Validation(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedRegion {
    pub name: String,
    #[serde(flatten)]
    pub spec: RegionSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    pub tol_res: f64,
    pub identity: IdentityTolerance,
    /// Relative slack of the limsup verdicts.
    pub slack: f64,
    /// Schedule points standing in for the limsup.
    pub tail: usize,
    /// Zero threshold for surface eigenvalues.
    pub tol_zero: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { tol_res: 1e-8, identity: IdentityTolerance::default(), slack: 0.05, tail: 3, tol_zero: 1e-8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpectraConfig {
    /// Eigenvalues per region and schedule point.
    pub p: usize,
    /// Radius of the stability balls in units of the domain diameter.
    pub ball_radius: f64,
    /// Balls per interface component used for the curvature ratio.
    pub balls: usize,
}

impl Default for SpectraConfig {
    fn default() -> Self {
        Self { p: 5, ball_radius: 0.15, balls: 4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LimitConfig {
    /// Level-set components closer than `merge_factor * eps` form one sheet.
    pub merge_factor: f64,
    /// Tube width of the transferred test function, `0` to skip the Rayleigh check.
    pub transfer_tau: f64,
}

impl Default for LimitConfig {
    fn default() -> Self {
        Self { merge_factor: 4.0, transfer_tau: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    /// Index budget.
    #[serde(default)]
    pub k: usize,
    #[serde(default)]
    pub potential: Potential,
    pub grid: GridConfig,
    #[serde(default)]
    pub metric: Metric,
    pub method: MethodConfig,
    pub schedule: ScheduleConfig,
    pub regions: Vec<NamedRegion>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub spectra: SpectraConfig,
    #[serde(default)]
    pub limit: LimitConfig,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, HarnessError> {
        toml::from_str(s).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let s = std::fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&s)
    }

    pub fn to_toml_string(&self) -> Result<String, HarnessError> {
        toml::to_string(self).map_err(|e| HarnessError::Config(e.to_string()))
    }

    /// Checks everything that can be checked without solving, returning the schedule.
    pub fn validate(&self) -> Result<EpsSchedule, HarnessError> {
        let bad = |m: String| Err(HarnessError::Validation(m));
        if self.grid.lengths.len() != self.grid.dim {
            return bad(format!("{} lengths for dimension {}", self.grid.lengths.len(), self.grid.dim));
        }
        let schedule = self.schedule.build(&self.grid.lengths)?;
        if self.spectra.p == 0 {
            return bad("spectra.p must be at least 1".into());
        }
        if self.tolerances.tail == 0 || !(self.tolerances.slack >= 0.0) || !(self.tolerances.tol_res > 0.0) {
            return bad("tolerances: tail >= 1, slack >= 0 and tol_res > 0 required".into());
        }
        if self.regions.is_empty() {
            return bad("at least one region is required".into());
        }
        let mut names = BTreeSet::new();
        for r in &self.regions {
            if !names.insert(r.name.as_str()) {
                return bad(format!("duplicate region name '{}'", r.name));
            }
            if r.name.is_empty() || r.name.contains([',', '"', '\n']) {
                return bad(format!("region name '{}' is not CSV-safe", r.name));
            }
        }
        if let MethodConfig::GradientFlow { initial: InitialCondition::Stripes { axis, .. } } = &self.method {
            if *axis >= self.grid.dim {
                return bad(format!("stripe axis {axis} out of range"));
            }
        }
        for res in [schedule.resolutions.first(), schedule.resolutions.last()].into_iter().flatten() {
            let grid = build_torus_grid(self.grid.dim, &self.grid.lengths, res).map_err(|e| HarnessError::Validation(e.to_string()))?;
            for r in &self.regions {
                let m = RegionMask::from_spec(grid.clone(), &r.spec, &r.name)
                    .map_err(|e| HarnessError::Validation(format!("region '{}': {e}", r.name)))?;
                if m.is_empty() {
                    return bad(format!("region '{}' contains no grid nodes at resolution {res:?}", r.name));
                }
            }
        }
        Ok(schedule)
    }

    /// Caps every schedule resolution at `max_resolution` and drops steps that would
    /// then violate the interface-resolution rule.
    pub fn capped(&self, max_resolution: usize) -> Self {
        let mut c = self.clone();
        let m_min = c.schedule.min_nodes_per_width;
        let lengths = c.grid.lengths.clone();
        match &mut c.schedule.resolutions {
            Some(res) => {
                let keep: Vec<(f64, Vec<usize>)> = c
                    .schedule
                    .epsilons
                    .iter()
                    .zip(res.iter())
                    .filter(|(e, r)| r.iter().zip(&lengths).all(|(&n, &l)| n <= max_resolution || **e * max_resolution as f64 / l >= m_min))
                    .map(|(&e, r)| (e, r.iter().map(|&n| n.min(max_resolution)).collect()))
                    .collect();
                c.schedule.epsilons = keep.iter().map(|k| k.0).collect();
                *res = keep.into_iter().map(|k| k.1).collect();
            }
            None => {
                c.schedule.max_resolution = c.schedule.max_resolution.min(max_resolution);
                let cap = c.schedule.max_resolution as f64;
                c.schedule.epsilons.retain(|&e| lengths.iter().all(|&l| e * cap / l >= m_min - 1e-9));
            }
        }
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FLAT: &str = r#"
name = "t"
[grid]
dim = 2
lengths = [1.0, 1.0]
[method]
kind = "gradient_flow"
initial = { kind = "stripes", axis = 0, lo = 0.25, hi = 0.75 }
[schedule]
epsilons = [0.1, 0.07, 0.05]
[[regions]]
name = "full"
kind = "full"
[[regions]]
name = "arc"
kind = "box"
lo = [0.05, 0.2]
hi = [0.45, 0.8]
"#;

    #[test]
    fn parses_and_validates() {
        let c = ExperimentConfig::from_toml_str(FLAT).unwrap();
        assert_eq!(c.regions[1].spec, RegionSpec::Box { lo: vec![0.05, 0.2], hi: vec![0.45, 0.8] });
        assert_eq!(c.metric, Metric::Flat);
        let s = c.validate().unwrap();
        assert_eq!(s.resolutions, vec![vec![80, 80], vec![120, 120], vec![160, 160]]);
        let back = ExperimentConfig::from_toml_str(&c.to_toml_string().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn empty_region_rejected() {
        let mut c = ExperimentConfig::from_toml_str(FLAT).unwrap();
        c.regions.push(NamedRegion { name: "tiny".into(), spec: RegionSpec::Ball { center: vec![0.003, 0.003], radius: 1e-4 } });
        let e = c.validate().unwrap_err();
        assert!(matches!(e, HarnessError::Validation(ref m) if m.contains("tiny")), "{e}");
    }

    #[test]
    fn cap_drops_underresolved_steps() {
        let c = ExperimentConfig::from_toml_str(FLAT).unwrap().capped(128);
        assert_eq!(c.schedule.epsilons, vec![0.1, 0.07]);
        assert_eq!(c.validate().unwrap().resolutions.last().unwrap(), &vec![120, 120]);
    }
}
