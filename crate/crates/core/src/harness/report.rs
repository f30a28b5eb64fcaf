use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::allen_cahn::IdentityCheck;
use crate::limit_surface::RayleighTable;

pub const SCHEMA_VERSION: u32 = 1;
pub const SING_V_NOTE: &str = "empty (desk scale)";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Status {
    Ok,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Mark {
    Pass,
    Fail,
    NotRun,
}

impl Mark {
    pub fn from_bool(ok: bool) -> Self {
        if ok {
            Mark::Pass
        } else {
            Mark::Fail
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Validate,
    Solve,
    Spectrum,
    Varifold,
    Limit,
    Write,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Validate => "validate",
            Stage::Solve => "solve",
            Stage::Spectrum => "spectrum",
            Stage::Varifold => "varifold",
            Stage::Limit => "limit",
            Stage::Write => "write",
        })
    }
}

/// Diagnostics of one schedule point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsRow {
    pub step: usize,
    pub epsilon: f64,
    pub resolution: Vec<usize>,
    pub energy: f64,
    pub dirichlet_energy: f64,
    pub potential_energy: f64,
    pub sup_norm: f64,
    pub residual: f64,
    pub index: usize,
    pub near_zero: usize,
    pub flags: Vec<String>,
    /// Morse index per named region.
    pub region_index: BTreeMap<String, usize>,
    pub varifold: Option<VarifoldRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarifoldRow {
    pub mass: f64,
    /// `E / (2 sigma)`, an upper bound for the mass.
    pub energy_mass: f64,
    pub equipartition: [f64; 3],
    pub equipartition_defect: f64,
    pub first_variation: Vec<IdentityCheck>,
    /// Largest `|lhs - rhs|` over the test fields.
    pub first_variation_residual: f64,
    pub curvature_l2: f64,
    /// `None` when no sampled ball was stable.
    pub ball_ratio_max: Option<f64>,
    pub unstable_balls: usize,
    pub pointwise_checked: usize,
    pub pointwise_violations: usize,
    /// Worst `|lhs - rhs| - tolerance` of the generalized curvature identity, flat charts only.
    pub curvature_identity_excess: Option<f64>,
    pub b_bound_violations: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumRow {
    pub epsilon: f64,
    pub region: String,
    pub p: usize,
    pub lambda: f64,
    pub solver: String,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentRow {
    pub id: usize,
    pub intrinsic_dim: usize,
    pub measure: f64,
    pub multiplicity: Option<u32>,
    pub ratio: Option<f64>,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSpectrum {
    pub surface_nodes: usize,
    pub weighted: Vec<f64>,
    pub unweighted: Vec<f64>,
    /// Length of the masked piece when it is a single open arc.
    pub arc_length: Option<f64>,
    pub rayleigh: Option<RayleighTable>,
    pub rayleigh_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PVerdict {
    pub p: usize,
    pub mark: Mark,
    pub lambda_v: Option<f64>,
    pub tail_max: Option<f64>,
    pub slack: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexVerdict {
    pub mark: Mark,
    pub k: usize,
    /// Largest count of surface eigenvalues below `-tol_zero` over regions.
    pub negatives: Option<usize>,
    /// Largest certified index along the schedule.
    pub max_certified_index: Option<usize>,
    /// Whether the index budget held for every `u_i`.
    pub hypothesis_holds: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdicts {
    pub spectral_lower_bound: BTreeMap<String, Vec<PVerdict>>,
    pub index_bound: IndexVerdict,
    #[serde(rename = "sing_V")]
    pub sing_v: String,
}

impl Verdicts {
    pub fn not_run(config: &ExperimentConfig) -> Self {
        let per_p: Vec<PVerdict> = (1..=config.spectra.p)
            .map(|p| PVerdict { p, mark: Mark::NotRun, lambda_v: None, tail_max: None, slack: None })
            .collect();
        Self {
            spectral_lower_bound: config.regions.iter().map(|r| (r.name.clone(), per_p.clone())).collect(),
            index_bound: IndexVerdict {
                mark: Mark::NotRun,
                k: config.k,
                negatives: None,
                max_certified_index: None,
                hypothesis_holds: None,
            },
            sing_v: SING_V_NOTE.into(),
        }
    }

    pub fn all_pass(&self) -> bool {
        self.index_bound.mark == Mark::Pass
            && self.spectral_lower_bound.values().flatten().all(|v| v.mark == Mark::Pass)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitBlock {
    pub epsilon: f64,
    pub components: Vec<ComponentRow>,
    pub spectra: BTreeMap<String, RegionSpectrum>,
    /// Largest gap between weighted and unweighted eigenvalue lists.
    pub weighted_unweighted_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub package: String,
    pub version: String,
    pub seed: u64,
    pub threads: usize,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema: u32,
    pub status: Status,
    pub failed_stage: Option<Stage>,
    pub message: Option<String>,
    pub config: ExperimentConfig,
    pub rows: Vec<EpsRow>,
    pub spectra: Vec<SpectrumRow>,
    pub limit: Option<LimitBlock>,
    pub verdicts: Verdicts,
    pub provenance: Provenance,
}

impl Report {
    pub fn new(config: ExperimentConfig) -> Self {
        Self {
            schema: SCHEMA_VERSION,
            status: Status::Ok,
            failed_stage: None,
            message: None,
            verdicts: Verdicts::not_run(&config),
            provenance: Provenance {
                package: env!("CARGO_PKG_NAME").into(),
                version: env!("CARGO_PKG_VERSION").into(),
                seed: config.seed,
                threads: rayon::current_num_threads(),
                wall_time_s: 0.0,
            },
            config,
            rows: Vec::new(),
            spectra: Vec::new(),
            limit: None,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == Status::Ok
    }

    /// Eigenvalue table of one region, one row per schedule point.
    pub fn region_table(&self, region: &str) -> Vec<Vec<f64>> {
        let mut out: Vec<(f64, Vec<f64>)> = Vec::new();
        for r in self.spectra.iter().filter(|r| r.region == region) {
            match out.last_mut() {
                Some((e, v)) if *e == r.epsilon => v.push(r.lambda),
                _ => out.push((r.epsilon, vec![r.lambda])),
            }
        }
        out.into_iter().map(|x| x.1).collect()
    }

    /// The `limit_report.json` view.
    pub fn limit_report(&self) -> serde_json::Value {
        let (components, spectra) = match &self.limit {
            Some(l) => (
                serde_json::to_value(&l.components).unwrap_or_default(),
                serde_json::to_value(&l.spectra).unwrap_or_default(),
            ),
            None => (serde_json::Value::Array(vec![]), serde_json::Value::Object(Default::default())),
        };
        serde_json::json!({
            "run_id": self.config.name,
            "status": self.status,
            "epsilon": self.limit.as_ref().map(|l| l.epsilon),
            "components": components,
            "spectra": spectra,
            "verdicts": self.verdicts,
        })
    }
}
