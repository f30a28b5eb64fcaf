use std::sync::Arc;

use ac_spectra::allen_cahn::Potential;
use ac_spectra::critical_points::stripe_profile;
use ac_spectra::domain::{Domain, RegionMask, ScalarField, TorusGrid};
use ac_spectra::error::SpectrumError;
use ac_spectra::spectrum::*;

fn unit2(n: usize) -> (Arc<TorusGrid>, Domain) {
    let g = Arc::new(TorusGrid::new(2, &[1.0, 1.0], &[n, n]).unwrap());
    (g.clone(), Domain::flat(g))
}

#[test]
fn lanczos_matches_dense_on_degenerate_spectra() {
    let (g, d) = unit2(32);
    let u = stripe_profile(&g, Potential::Quartic, 0.1, 0, 0.25, 0.75);
    let lz = EigenOptions { solver: SolverChoice::Lanczos, ..EigenOptions::default() };
    let de = EigenOptions { solver: SolverChoice::Dense, ..EigenOptions::default() };
    for m in [RegionMask::full(g.clone()), RegionMask::band(g.clone(), 0, 0.1, 0.6)] {
        let op = assemble(&d, Potential::Quartic, &u, 0.1, &m).unwrap().with_preconditioner();
        let a = eigen_smallest(&op, 10, &lz).unwrap();
        let b = eigen_smallest(&op, 10, &de).unwrap();
        assert_eq!(a.solver, SolverKind::Lanczos);
        for (x, y) in a.eigenvalues.iter().zip(&b.eigenvalues) {
            assert!((x - y).abs() < 1e-8, "{:?}\n{:?}", a.eigenvalues, b.eigenvalues);
        }
    }
}

#[test]
fn constant_zero_state_index() {
    let (g, d) = unit2(64);
    let zero = ScalarField::constant(g.clone(), 0.0);
    let full = RegionMask::full(g);
    // modes k with 4 pi^2 |k|^2 < eps^-2, up to the discrete symbol
    assert_eq!(morse_index(&d, Potential::Quartic, &zero, 0.5, &full).unwrap(), 1);
    assert_eq!(morse_index(&d, Potential::Quartic, &zero, 0.1, &full).unwrap(), 9);
}

#[test]
fn dirichlet_monotonicity_on_nested_balls() {
    let (g, d) = unit2(64);
    let u = stripe_profile(&g, Potential::Quartic, 0.04, 0, 0.25, 0.75);
    let inner = RegionMask::ball(g.clone(), &[0.25, 0.5, 0.0], 0.15);
    let outer = RegionMask::ball(g.clone(), &[0.25, 0.5, 0.0], 0.3);
    let r = spectrum_monotonicity_check(&d, Potential::Quartic, &u, 0.08, &inner, &outer, 4, &EigenOptions::default()).unwrap();
    assert!(r.gaps.iter().all(|&x| x >= -1e-9), "{r:?}");
    let e = spectrum_monotonicity_check(&d, Potential::Quartic, &u, 0.08, &outer, &inner, 4, &EigenOptions::default());
    assert!(matches!(e, Err(SpectrumError::InvalidRequest(_))));
}

#[test]
fn index_adds_over_separated_regions() {
    let (g, d) = unit2(48);
    let zero = ScalarField::constant(g.clone(), 0.0);
    let a = RegionMask::ball(g.clone(), &[0.25, 0.25, 0.0], 0.18);
    let b = RegionMask::ball(g.clone(), &[0.75, 0.75, 0.0], 0.18);
    let (i1, i2, iu) = index_additivity(&d, Potential::Quartic, &zero, 0.05, &a, &b, &EigenOptions::default()).unwrap();
    assert!(i1 > 0 && i2 > 0);
    assert_eq!(i1 + i2, iu);
}

#[test]
fn stability_scan_covers_the_band() {
    let (g, d) = unit2(64);
    let u = stripe_profile(&g, Potential::Quartic, 0.04, 0, 0.25, 0.75);
    let centers: Vec<[f64; 3]> = [0.25, 0.75]
        .iter()
        .flat_map(|&x| (0..5).map(move |k| [x, 0.1 + 0.2 * k as f64, 0.0]))
        .collect();
    let balls = stability_scan(&d, Potential::Quartic, &u, 0.04, &centers, 0.16, &EigenOptions::default()).unwrap();
    assert_eq!(balls.len(), 10);
    assert!(balls.iter().all(|b| b.stable && b.lambda_1 > 0.0), "{balls:?}");
    let e = stability_scan(&d, Potential::Quartic, &u, 0.04, &centers[..5], 0.16, &EigenOptions::default());
    assert!(matches!(e, Err(SpectrumError::CoverageFailure { .. })));
}

#[test]
fn tol_zero_scaling() {
    assert!((tol_zero(0.1) - 1e-7 * 101.0).abs() < 1e-18);
    assert!(tol_zero(0.01) > tol_zero(0.1));
}
