mod common;

use common::quadrature;
use trilemma::privacy::{default_orders, epsilon_for, rdp_subsampled_gaussian};

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

#[test]
fn subsampled_rdp_matches_quadrature_on_the_grid() {
    let orders = default_orders();
    for &q in &[0.001, 0.01, 0.1] {
        for &sigma in &[0.8, 1.0, 2.0] {
            let fast = rdp_subsampled_gaussian(q, sigma, &orders).unwrap();
            for (&alpha, &v) in orders.iter().zip(&fast) {
                let oracle = quadrature::rdp(q, sigma, alpha);
                assert!(
                    rel_err(v, oracle) <= 1e-6,
                    "q={q} sigma={sigma} alpha={alpha}: accountant {v:e} oracle {oracle:e}"
                );
            }
        }
    }
}

#[test]
fn spot_value_small_rate() {
    let v = rdp_subsampled_gaussian(0.01, 1.0, &[4.0]).unwrap()[0];
    let oracle = quadrature::rdp(0.01, 1.0, 4.0);
    assert!(rel_err(v, oracle) <= 1e-6, "{v:e} vs {oracle:e}");
}

#[test]
fn subsampling_never_exceeds_full_batch() {
    let orders = default_orders();
    for &sigma in &[0.7, 1.0, 3.0] {
        let full = rdp_subsampled_gaussian(1.0, sigma, &orders).unwrap();
        for &q in &[0.001, 0.01, 0.1, 0.5] {
            let sub = rdp_subsampled_gaussian(q, sigma, &orders).unwrap();
            for (s, f) in sub.iter().zip(&full) {
                assert!(s <= f, "q={q} sigma={sigma}: {s} > {f}");
            }
        }
    }
}

#[test]
fn accountant_is_pure() {
    let a = epsilon_for(1.3, 0.02, 777, 1e-5).unwrap();
    let b = epsilon_for(1.3, 0.02, 777, 1e-5).unwrap();
    assert_eq!(a.0.to_bits(), b.0.to_bits());
    assert_eq!(a.1, b.1);
}


#[test]
fn calibration_lands_in_the_corridor_at_a_longer_schedule() {
    let q = 4096.0 / 50000.0;
    let c = trilemma::privacy::calibrate_noise(8.0, 1e-5, q, 2468).unwrap();
    assert!((2.0..=4.0).contains(&c.noise_multiplier), "sigma {}", c.noise_multiplier);
    let (eps, order) = epsilon_for(c.noise_multiplier, q, 2468, 1e-5).unwrap();
    assert!(eps <= 8.0);
    assert_eq!((eps, order), (c.epsilon, c.order));
}

#[test]
fn more_noise_never_costs_more() {
    let mut last = f64::INFINITY;
    for i in 0..40 {
        let sigma = 0.6 + 0.1 * i as f64;
        let (eps, _) = epsilon_for(sigma, 0.05, 1000, 1e-5).unwrap();
        assert!(eps <= last, "sigma {sigma}: {eps} > {last}");
        last = eps;
    }
}
