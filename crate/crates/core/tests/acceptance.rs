//! Acceptance criteria AC-1 to AC-12 at the full level.
//!
//! `AC_SPECTRA_LEVEL=quick` runs the capped variant instead.

use std::io::Write;
use std::path::PathBuf;
use std::process::Command;
use std::sync::{Mutex, OnceLock};
use std::time::Instant;

use ac_spectra::harness::verify::{csv_differences, Outcome};
use ac_spectra::harness::{Level, Suite};

const SEED: u64 = 7;

fn level() -> Level {
    std::env::var("AC_SPECTRA_LEVEL").ok().and_then(|s| s.parse().ok()).unwrap_or(Level::Full)
}

fn scratch() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance")
}

fn suite() -> &'static Mutex<Suite> {
    static SUITE: OnceLock<Mutex<Suite>> = OnceLock::new();
    SUITE.get_or_init(|| {
        let dir = scratch().join("suite");
        let _ = std::fs::remove_dir_all(&dir);
        Mutex::new(Suite::new(level(), SEED, dir))
    })
}

fn report(o: &Outcome, seconds: f64) {
    let _ = writeln!(std::io::stderr(), "{o} [{seconds:.1}s]");
}

fn check(id: usize) {
    let start = Instant::now();
    let o = suite().lock().unwrap_or_else(|e| e.into_inner()).run(id);
    report(&o, start.elapsed().as_secs_f64());
    assert!(o.pass, "{o}");
}

#[test]
fn ac01_heteroclinic_exactness() {
    check(1);
}

#[test]
fn ac02_energy_and_mass_limit() {
    check(2);
}

#[test]
fn ac03_equipartition() {
    check(3);
}

#[test]
fn ac04_stationarity() {
    check(4);
}

#[test]
fn ac05_spectral_transfer() {
    check(5);
}

#[test]
fn ac06_index_bounds() {
    check(6);
}

#[test]
fn ac07_eigensolver_oracle() {
    check(7);
}

#[test]
fn ac08_second_variation_identity_and_stability() {
    check(8);
}

#[test]
fn ac09_pointwise_hessian_bound() {
    check(9);
}

#[test]
fn ac10_generalized_curvature_residual() {
    check(10);
}

#[test]
fn ac11_min_max_structure() {
    check(11);
}

#[test]
fn ac12_determinism_of_quick_verify() {
    let start = Instant::now();
    let root = scratch().join("determinism");
    let _ = std::fs::remove_dir_all(&root);
    let (a, b) = (root.join("a"), root.join("b"));
    let mut codes = Vec::new();
    for (dir, threads) in [(&a, "1"), (&b, "2")] {
        let status = Command::new(env!("CARGO_BIN_EXE_ac-spectra"))
            .args(["verify", "--level", "quick", "--seed", &SEED.to_string(), "--out"])
            .arg(dir)
            .env("AC_SPECTRA_THREADS", threads)
            .output()
            .expect("run the ac-spectra binary");
        codes.push(status.status.code());
    }
    let diff = csv_differences(&a, &b);
    let o = Outcome {
        id: "AC-12".into(),
        title: "determinism".into(),
        pass: diff.is_empty(),
        detail: if diff.is_empty() {
            format!("two `verify --level quick` runs (1 and 2 threads) byte-identical; exit codes {codes:?}")
        } else {
            format!("differing: {diff:?}")
        },
        seconds: None,
    };
    report(&o, start.elapsed().as_secs_f64());
    assert!(o.pass, "{o}");
}
