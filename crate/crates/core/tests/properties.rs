use std::sync::Arc;

use proptest::prelude::*;

use ac_spectra::allen_cahn::{energy, total_energy, Potential};
use ac_spectra::domain::io::{read_field, write_field};
use ac_spectra::domain::{ConformalMode, Domain, Metric, RegionMask, ScalarField, TorusGrid};
use ac_spectra::harness::verify::flat_pair_config;
use ac_spectra::harness::{ExperimentConfig, Level};
use ac_spectra::limit_surface::round_multiplicity;
use ac_spectra::spectrum::{assemble, eigen_smallest, EigenOptions, SolverChoice};

fn grid(nx: usize, ny: usize, lx: f64, ly: f64) -> Arc<TorusGrid> {
    Arc::new(TorusGrid::new(2, &[lx, ly], &[nx, ny]).unwrap())
}

fn conformal(a: f64, phase: f64) -> Metric {
    Metric::Conformal { modes: vec![ConformalMode { amplitude: a, wavenumbers: vec![1, 2], phase }] }
}

prop_compose! {
    fn field()(nx in 8usize..16, ny in 8usize..16, lx in 0.5f64..2.0, ly in 0.5f64..2.0)
              (vals in prop::collection::vec(-1.5f64..1.5, nx * ny), nx in Just(nx), ny in Just(ny), lx in Just(lx), ly in Just(ly))
              -> ScalarField {
        ScalarField::new(grid(nx, ny, lx, ly), vals).unwrap()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn summation_by_parts(u in field(), a in 0.0f64..0.3, phase in 0.0f64..6.0) {
        for metric in [Metric::Flat, conformal(a, phase)] {
            let d = Domain::new(u.grid().clone(), metric);
            let lap = d.laplacian(&u).unwrap();
            let prod: Vec<f64> = u.values().iter().zip(lap.values()).map(|(x, y)| -x * y).collect();
            let lhs = d.dirichlet_form(u.values());
            let rhs = d.integrate_slice(&prod, None);
            prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()), "{} vs {}", lhs, rhs);
            prop_assert!(lhs >= -1e-12);
        }
    }

    #[test]
    fn energy_is_even_and_shift_free_in_the_gradient(u in field(), eps in 0.02f64..0.5, c in -0.5f64..0.5) {
        let d = Domain::flat(u.grid().clone());
        let p = Potential::Quartic;
        let e = energy(&d, p, &u, eps, None).unwrap();
        let neg = energy(&d, p, &u.map(|x| -x), eps, None).unwrap();
        prop_assert!((e.total - neg.total).abs() <= 1e-12 * (1.0 + e.total));
        prop_assert!(e.dirichlet_part >= 0.0 && e.potential_part >= 0.0);
        let shifted = d.dirichlet_form(u.map(|x| x + c).values());
        prop_assert!((shifted - d.dirichlet_form(u.values())).abs() <= 1e-9 * (1.0 + shifted));
        prop_assert!((e.total - total_energy(&d, p, u.values(), eps)).abs() <= 1e-9 * (1.0 + e.total));
    }

    #[test]
    fn field_dump_round_trip(u in field()) {
        let mut buf = Vec::new();
        write_field(&mut buf, &u).unwrap();
        let back = read_field(&buf[..]).unwrap().into_field(u.grid().lengths()).unwrap();
        prop_assert_eq!(back.values(), u.values());
        prop_assert_eq!(back.grid().resolution(), u.grid().resolution());
        prop_assert!(read_field(&buf[..buf.len() - 1]).is_err());
    }

    #[test]
    fn mask_algebra(cx in 0.0f64..1.0, cy in 0.0f64..1.0, r in 0.05f64..0.6, lo in 0.0f64..1.0, w in 0.05f64..0.9) {
        let g = grid(16, 16, 1.0, 1.0);
        let a = RegionMask::ball(g.clone(), &[cx, cy, 0.0], r);
        let b = RegionMask::band(g.clone(), 0, lo, lo + w);
        let i = a.intersection(&b).unwrap();
        let u = a.union(&b).unwrap();
        prop_assert!(i.is_subset_of(&a) && i.is_subset_of(&b));
        prop_assert!(a.is_subset_of(&u) && b.is_subset_of(&u));
        prop_assert_eq!(i.count() + u.count(), a.count() + b.count());
        prop_assert_eq!(a.count() + a.complement().count(), g.len());
        prop_assert_eq!(a.difference(&b).unwrap().count(), a.count() - i.count());
    }

    #[test]
    fn restriction_raises_eigenvalues(cx in 0.2f64..0.8, cy in 0.2f64..0.8, r in 0.15f64..0.35, amp in 0.0f64..1.0) {
        let g = grid(14, 14, 1.0, 1.0);
        let d = Domain::flat(g.clone());
        let u = ScalarField::from_fn(g.clone(), |x| amp * (6.283185307179586 * x[0]).sin());
        let outer = RegionMask::ball(g.clone(), &[cx, cy, 0.0], r);
        let inner = RegionMask::ball(g.clone(), &[cx, cy, 0.0], 0.6 * r);
        prop_assume!(inner.count() >= 3);
        let eo = EigenOptions { solver: SolverChoice::Dense, ..EigenOptions::default() };
        let a = eigen_smallest(&assemble(&d, Potential::Quartic, &u, 0.2, &inner).unwrap(), 3, &eo).unwrap();
        let b = eigen_smallest(&assemble(&d, Potential::Quartic, &u, 0.2, &outer).unwrap(), 3, &eo).unwrap();
        for (x, y) in a.eigenvalues.iter().zip(&b.eigenvalues) {
            prop_assert!(*x >= y - 1e-9);
        }
    }

    #[test]
    fn multiplicity_rounding(m in 1u32..6, delta in -0.2f64..0.2) {
        prop_assert_eq!(round_multiplicity(0, m as f64 + delta).unwrap(), m);
        prop_assert!(round_multiplicity(0, m as f64 + 0.5).is_err());
    }

    #[test]
    fn config_toml_round_trip(seed in 0..=i64::MAX as u64, k in 0usize..4, slack in 0.0f64..0.2, p in 1usize..8) {
        let mut c = flat_pair_config(Level::Quick, seed);
        c.k = k;
        c.tolerances.slack = slack;
        c.spectra.p = p;
        let back = ExperimentConfig::from_toml_str(&c.to_toml_string().unwrap()).unwrap();
        prop_assert_eq!(back, c);
    }
}
