use std::path::PathBuf;

use ac_spectra::domain::RegionSpec;
use ac_spectra::harness::config::NamedRegion;
use ac_spectra::harness::report::{Mark, Stage, Status};
use ac_spectra::harness::verify::{flat_pair_config, mountain_pass_config};
use ac_spectra::harness::*;
use ac_spectra::error::HarnessError;

fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn small_flat(epsilons: Vec<f64>) -> ExperimentConfig {
    let mut c = flat_pair_config(Level::Quick, 3);
    c.schedule.epsilons = epsilons;
    c
}

#[test]
fn shipped_configs_match_the_suite() {
    let flat = ExperimentConfig::load(&configs_dir().join("flat_pair.toml")).unwrap();
    assert_eq!(flat, flat_pair_config(Level::Full, 7));
    let mp = ExperimentConfig::load(&configs_dir().join("mountain_pass_k1.toml")).unwrap();
    assert_eq!(mp, mountain_pass_config(Level::Full, 7));
    assert_eq!(flat.validate().unwrap().resolutions.last().unwrap(), &vec![320, 320]);
}

#[test]
fn empty_region_fails_before_solving() {
    let out = tempfile::tempdir().unwrap();
    let mut c = small_flat(vec![0.1, 0.09, 0.08]);
    c.regions.push(NamedRegion { name: "speck".into(), spec: RegionSpec::Ball { center: vec![0.001, 0.001], radius: 1e-5 } });
    let e = run_experiment(&c, out.path()).unwrap_err();
    assert!(matches!(e, HarnessError::Validation(ref m) if m.contains("speck")), "{e}");
    assert!(!out.path().join("report.json").exists());
    assert!(!out.path().join("fields").exists());
}

#[test]
fn duplicate_region_names_rejected() {
    let mut c = small_flat(vec![0.1, 0.09, 0.08]);
    c.regions[1].name = "full".into();
    assert!(matches!(c.validate(), Err(HarnessError::Validation(_))));
}

#[test]
fn short_schedule_fails_in_the_limit_stage_with_a_complete_report() {
    let out = tempfile::tempdir().unwrap();
    let c = small_flat(vec![0.1, 0.085]);
    let e = run_experiment(&c, out.path()).unwrap_err();
    assert!(matches!(e, HarnessError::Stage { ref stage, .. } if stage == "limit"), "{e}");
    let text = std::fs::read_to_string(out.path().join("report.json")).unwrap();
    let r: Report = serde_json::from_str(&text).unwrap();
    assert_eq!(r.status, Status::Failed);
    assert_eq!(r.failed_stage, Some(Stage::Limit));
    assert!(r.message.is_some());
    assert_eq!(r.rows.len(), 2);
    assert!(r.rows.iter().all(|row| row.varifold.is_some()));
    assert_eq!(r.spectra.len(), 2 * 2 * 5);
    assert!(r.verdicts.spectral_lower_bound.values().flatten().all(|v| v.mark == Mark::NotRun));
    assert_eq!(r.verdicts.index_bound.mark, Mark::NotRun);
    let lr: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.path().join("limit_report.json")).unwrap()).unwrap();
    assert_eq!(lr["status"], "FAILED");
    for f in ["runs.csv", "spectra.csv", "varifold_metrics.csv", "fields/u_00.acfd", "fields/u_01.json"] {
        assert!(out.path().join(f).exists(), "{f}");
    }
    assert!(!out.path().join("plots").exists());
}

#[test]
fn plot_data_and_resume() {
    let out = tempfile::tempdir().unwrap();
    let c = small_flat(vec![0.1, 0.09, 0.08]);
    let first = run_pipeline(&c, out.path(), &RunOptions { until: Stage::Spectrum, plots: false, ..RunOptions::default() }).unwrap();
    assert!(first.rows.iter().all(|r| r.varifold.is_none()));
    assert_eq!(first.verdicts.index_bound.mark, Mark::NotRun);
    let spectra = std::fs::read(out.path().join("spectra.csv")).unwrap();

    let again = tempfile::tempdir().unwrap();
    let opts = RunOptions { resume_from: Some(out.path().to_path_buf()), ..RunOptions::default() };
    let full = run_pipeline(&c, again.path(), &opts).unwrap();
    assert!(full.is_ok());
    assert_eq!(full.rows.len(), 3);
    assert_eq!(std::fs::read(again.path().join("spectra.csv")).unwrap(), spectra);
    let header = String::from_utf8(spectra).unwrap();
    assert!(header.starts_with("run_id,epsilon,region_label,p,lambda,solver,residual\n"));

    let plots = tempfile::tempdir().unwrap();
    let files = emit_plot_data(&full, plots.path()).unwrap();
    assert_eq!(files.len(), 8);
    let names: Vec<String> = files.iter().map(|f| f.file_name().unwrap().to_string_lossy().into_owned()).collect();
    for stem in ["spectra_vs_eps", "energy_vs_eps", "mass_vs_eps", "defects_vs_eps"] {
        assert!(names.contains(&format!("{stem}.csv")) && names.contains(&format!("{stem}.gp")), "{names:?}");
    }
    let mass = std::fs::read_to_string(plots.path().join("mass_vs_eps.csv")).unwrap();
    assert!(mass.starts_with("eps,value,series\n"));

    let empty = Report::new(c);
    assert!(matches!(emit_plot_data(&empty, plots.path()), Err(HarnessError::Validation(_))));
}

#[test]
fn flipped_jacobi_sign_fails_spectral_transfer() {
    let out = tempfile::tempdir().unwrap();
    let mut suite = Suite::new(Level::Quick, 7, out.path()).with_fault(Fault::FlipJacobiSign);
    let o = suite.run(5);
    println!("{o}");
    assert!(!o.pass);
    assert_eq!(o.id, "AC-5");
}
