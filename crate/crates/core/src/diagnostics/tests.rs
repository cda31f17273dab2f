use proptest::prelude::*;
use rand::Rng;

use super::*;
use crate::rng::normal;

fn normals(seed: u64, n: usize, shift: f64) -> Vec<f64> {
    let mut rng = RngStream::new(seed, 0).rng();
    (0..n).map(|_| normal::<f64, _>(&mut rng) + shift).collect()
}

#[test]
fn normal_cdf_values() {
    assert!((normal_cdf(0.0) - 0.5).abs() < 1e-16);
    // The library erfc is good to about 1e-12 in this range.
    assert!((normal_cdf(1.959963984540054) - 0.975).abs() < 1e-11);
    assert!((z_p_value(1.959963984540054) - 0.05).abs() < 1e-11);
}

#[test]
fn kolmogorov_tail_values() {
    // Q(λ) at the classical critical points.
    assert!((kolmogorov_tail(1.358098639) - 0.05).abs() < 1e-6);
    assert!((kolmogorov_tail(1.627618735) - 0.01).abs() < 1e-6);
    assert_eq!(kolmogorov_tail(0.0), 1.0);
}

#[test]
fn ks_accepts_the_null_and_rejects_a_shift() {
    let mut ok = 0;
    for seed in 0..50 {
        if ks_normal(&normals(seed, 500, 0.0)).passes() {
            ok += 1;
        }
    }
    assert!(ok >= 47, "{ok}/50");
    let shifted: Vec<f64> = normals(3, 500, 0.5);
    assert!(ks_normal(&shifted).p_value < 1e-6);
}

#[test]
fn ks_null_p_values_look_uniform() {
    let p: Vec<f64> = (0..400).map(|s| ks_normal(&normals(100 + s, 300, 0.0)).p_value).collect();
    let below: usize = p.iter().filter(|&&x| x < 0.5).count();
    // Binomial(400, 1/2): 4 SD band.
    assert!((160..=240).contains(&below), "{below}");
}

#[test]
fn gaussian_test_scales_and_checks_size() {
    let t: f64 = 32.0;
    let s2 = 1.2;
    let x: Vec<f64> = normals(7, 500, 0.0).iter().map(|v| v * (t * s2).sqrt()).collect();
    assert!(gaussian_test(&x, t, s2).unwrap().passes());
    let shifted: Vec<f64> = normals(8, 500, 0.5).iter().map(|v| v * (t * s2).sqrt()).collect();
    assert!(!gaussian_test(&shifted, t, s2).unwrap().passes());
    assert!(gaussian_test(&x[..199], t, s2).is_err());
}

fn cloud(seed: u64, n: usize, shift: f64) -> Vec<Vec<f64>> {
    let mut rng = RngStream::new(seed, 1).rng();
    (0..n)
        .map(|_| (0..3).map(|_| normal::<f64, _>(&mut rng) + shift).collect())
        .collect()
}

#[test]
fn energy_test_identical_samples() {
    let a = cloud(1, 60, 0.0);
    let r = energy_test(&a, &a, 199, 0).unwrap();
    assert!(r.statistic.abs() < 1e-12);
    assert_eq!(r.p_value, 1.0);
}

#[test]
fn energy_test_power_and_size() {
    let a = cloud(1, 200, 0.0);
    let b = cloud(2, 200, 0.0);
    let c = cloud(3, 200, 0.4);
    assert!(energy_test(&a, &b, 199, 5).unwrap().p_value > 0.01);
    assert!(energy_test(&a, &c, 199, 5).unwrap().p_value <= 0.01);
    assert!(energy_test(&a[..1], &b, 99, 5).is_err());
}

#[test]
fn energy_test_is_deterministic_across_threads() {
    let a = cloud(4, 80, 0.0);
    let b = cloud(5, 80, 0.1);
    let run = |threads| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| energy_test(&a, &b, 299, 9).unwrap())
    };
    assert_eq!(run(1), run(3));
}

#[test]
fn fit_recovers_a_clean_exponential() {
    let s: Vec<f64> = (0..10).map(|k| 0.5 * k as f64).collect();
    let v: Vec<f64> = s.iter().map(|t| 3.0 * (-2.5 * t).exp()).collect();
    let f = fit_decay(&s, &v).unwrap();
    assert!((f.rate - 2.5).abs() < 1e-12);
    assert!((f.intercept - 3f64.ln()).abs() < 1e-12);
    assert!((f.r_squared - 1.0).abs() < 1e-12);
    assert!(fit_decay(&s[..2], &v[..2]).is_err());
    assert!(fit_decay(&s, &vec![0.0; 10]).is_err());
}

#[test]
fn majority_rule() {
    assert!(majority(&[true, true, false]));
    assert!(!majority(&[true, false, false]));
    assert!(majority(&[true, true, true]));
}

#[test]
fn heat_flow_mixes_at_the_spectral_gap() {
    let cfg = LatticeConfig::new(128, 0);
    let u = Density::<f64>::uniform(128);
    let fit = mixing_rate(0.0, &Density::delta(128, 0), &u, 4.0, 1, &cfg).unwrap();
    let gap = 2.0 * std::f64::consts::PI.powi(2);
    assert!((fit.rate - gap).abs() < 0.1 * gap, "{fit:?}");
    assert!(fit.r_squared > 0.99);
}

#[test]
fn mixing_degenerate_cases() {
    let cfg = LatticeConfig::new(16, 0);
    let u = Density::<f64>::uniform(16);
    assert!(matches!(mixing_rate(0.5, &u, &u, 4.0, 2, &cfg), Err(Error::DegenerateFit(_))));
    assert!(mixing_rate(0.5, &u, &Density::delta(16, 0), 3.0, 2, &cfg).is_err());
    assert!(mixing_rate(0.5, &Density::uniform(8), &u, 4.0, 2, &cfg).is_err());
}

#[test]
fn disordered_mixing_decays() {
    let cfg = LatticeConfig::new(32, 1);
    let fit = mixing_rate(1.0, &Density::<f64>::delta(32, 0), &Density::delta(32, 16), 4.0, 8, &cfg).unwrap();
    assert!(fit.rate > 0.0 && fit.r_squared > 0.9, "{fit:?}");
}

#[test]
fn winding_differences_decay() {
    let cfg = LatticeConfig::new(32, 2);
    let grid: Vec<usize> = (1..=20).map(|k| 2 * k).collect();
    let (mean, fit) = winding_decay::<f64>(1.0, &grid, 8, 24, 16, &cfg).unwrap();
    assert!(mean[0] > mean[10]);
    assert!(fit.rate > 0.0, "{fit:?}");
    assert!(winding_decay::<f64>(1.0, &[4, 2], 0, 1, 2, &cfg).is_err());
}

#[test]
fn probes_must_be_sites() {
    assert_eq!(probe_sites(&[0.25, 0.5, 0.75], 64).unwrap(), vec![16, 32, 48]);
    assert!(probe_sites(&[0.3], 64).is_err());
    assert!(probe_sites(&[0.0], 64).is_err());
}

#[test]
fn zero_beta_joint_law_is_degenerate() {
    let cfg = LatticeConfig::new(16, 0);
    let r = joint_law_check::<f64>(0.0, 8, 20, &[0.25, 0.5], Start::Stationary, 99, &cfg).unwrap();
    assert!(r.energy.statistic.abs() < 1e-12);
    assert!(r.energy.passes());
    for m in &r.height_second_moments {
        assert!(m.mean.abs() < 1e-20);
    }
}

#[test]
fn flat_start_breaks_reversal() {
    let cfg = LatticeConfig::new(32, 3);
    let r = reversal_statistic::<f64>(0.5, 32, 0, 100, &[0.25, 0.5, 0.75], Start::Flat, 199, &cfg).unwrap();
    assert!(!r.passes(), "{r:?}");
}

#[test]
fn quenched_variance_at_zero_beta_is_time() {
    let cfg = LatticeConfig::new(16, 0);
    let e = quenched_variance_identity::<f64>(0.0, 32, 4, &cfg).unwrap();
    assert!(relative_deviation(&e, 2.0) < 1e-12);
}

proptest! {
    #[test]
    fn ks_p_value_in_unit_interval(seed in 0u64..1000, shift in -1.0f64..1.0) {
        let r = ks_normal(&normals(seed, 50, shift));
        prop_assert!((0.0..=1.0).contains(&r.p_value));
        prop_assert!((0.0..=1.0).contains(&r.statistic));
    }

    #[test]
    fn ks_p_value_decreases_with_the_statistic(a in 0.0f64..0.5, b in 0.0f64..0.5) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(kolmogorov_tail(10.0 * hi) <= kolmogorov_tail(10.0 * lo));
    }

    #[test]
    fn energy_statistic_is_symmetric(seed in 0u64..200) {
        let mut rng = RngStream::new(seed, 0).rng();
        let a: Vec<Vec<f64>> = (0..10).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect();
        let b: Vec<Vec<f64>> = (0..12).map(|_| vec![rng.random::<f64>(), rng.random::<f64>() + 0.2]).collect();
        let x = energy_test(&a, &b, 9, 0).unwrap();
        let y = energy_test(&b, &a, 9, 0).unwrap();
        prop_assert!((x.statistic - y.statistic).abs() < 1e-12);
        prop_assert!(x.statistic >= -1e-12);
    }
}
