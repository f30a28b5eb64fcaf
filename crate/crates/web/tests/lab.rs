use ac_spectra_web::Lab;
use serde_json::Value;

fn parse(s: String) -> Value {
    serde_json::from_str(&s).unwrap()
}

fn relax_until_converged(lab: &mut Lab) -> Value {
    let mut last = Value::Null;
    for _ in 0..20 {
        last = parse(lab.relax(250).unwrap());
        if last["converged"].as_bool().unwrap() {
            break;
        }
    }
    last
}

#[test]
fn stripes_relax_to_two_unit_interfaces() {
    let mut lab = Lab::new(64, 0.05).unwrap();
    assert_eq!(lab.n(), 64);
    assert_eq!(lab.field().len(), 64 * 64);
    let f = relax_until_converged(&mut lab);
    assert!(f["converged"].as_bool().unwrap(), "{f}");
    let ratio = f["energy_over_2sigma"].as_f64().unwrap();
    assert!((ratio - 2.0).abs() < 0.03, "E / 2 sigma = {ratio}");

    let iface = parse(lab.interface().unwrap());
    let lengths: Vec<f64> = iface["lengths"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert_eq!(lengths.len(), 2);
    for l in lengths {
        assert!((l - 1.0).abs() < 1e-6, "length {l}");
    }
}

#[test]
fn stripe_field_varies_along_the_first_axis() {
    let lab = Lab::new(32, 0.05).unwrap();
    let u = lab.field();
    let n = 32;
    // x = 0.5 is inside the stripe, x = 0 outside; y is irrelevant.
    for j in 0..n {
        assert!(u[(n / 2) * n + j] > 0.9);
        assert!(u[j] < -0.9);
    }
}

#[test]
fn bubble_interface_is_a_circle() {
    let mut lab = Lab::new(64, 0.04).unwrap();
    lab.set_bubble(0.5, 0.5, 0.25);
    let iface = parse(lab.interface().unwrap());
    assert_eq!(iface["curves"].as_array().unwrap().len(), 1);
    let l = iface["total_length"].as_f64().unwrap();
    let circle = 2.0 * std::f64::consts::PI * 0.25;
    assert!((l - circle).abs() < 0.01 * circle, "length {l} vs {circle}");
}

#[test]
fn full_torus_spectrum_of_relaxed_stripes() {
    let mut lab = Lab::new(48, 0.08).unwrap();
    relax_until_converged(&mut lab);
    let sp = parse(lab.spectrum(4, 0.0, 0.0, 1.0).unwrap());
    assert_eq!(sp["region_nodes"].as_u64().unwrap(), 48 * 48);
    let ev: Vec<f64> = sp["eigenvalues"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert_eq!(ev.len(), 4);
    assert!(ev.windows(2).all(|w| w[0] <= w[1] + 1e-9));
    // translation mode
    let tz = sp["tol_zero"].as_f64().unwrap();
    assert!(ev.iter().any(|l| l.abs() < 1e-3), "{ev:?}");
    assert_eq!(sp["index"].as_u64().unwrap() as usize, ev.iter().filter(|&&l| l < -tz).count());
}

#[test]
fn noise_is_seeded() {
    let mut a = Lab::new(16, 0.1).unwrap();
    let mut b = Lab::new(16, 0.1).unwrap();
    a.set_noise(0.3, 11);
    b.set_noise(0.3, 11);
    assert_eq!(a.field(), b.field());
    assert!(a.field().iter().all(|x| x.abs() <= 0.3));
    b.set_noise(0.3, 12);
    assert_ne!(a.field(), b.field());
}

#[test]
fn bad_inputs_are_reported() {
    assert!(Lab::new(32, 0.0).is_err());
    assert!(Lab::new(32, f64::NAN).is_err());
    let lab = Lab::new(32, 0.05).unwrap();
    let e = lab.spectrum(10, 0.5, 0.5, 0.05).unwrap_err();
    assert!(e.contains("fewer than"), "{e}");
}
