use super::*;
use crate::bridge::{negate, sample_bridge};
use crate::rng::RngStream;
use proptest::prelude::*;
use std::f64::consts::PI;

/// Deterministic smooth test paths pinned to zero at both ends.
fn test_path(n: usize, a: f64, b: f64) -> BridgePath<f64> {
    let mut v: Vec<f64> = (0..=n)
        .map(|j| {
            let y = j as f64 / n as f64;
            a * (PI * y).sin() + b * (2.0 * PI * y).sin() * y
        })
        .collect();
    v[0] = 0.0;
    v[n] = 0.0;
    BridgePath::from_values(v).unwrap()
}

fn random_path(n: usize, i: u64) -> BridgePath<f64> {
    sample_bridge(n, &RngStream::new(77, i)).unwrap()
}

fn quick(n_outer: u64, seed: u64) -> McConfig {
    McConfig::new(n_outer, 256, seed)
}

#[test]
fn trivial_values_at_zero_beta() {
    let cfg = quick(500, 1);
    let g = estimate_gamma::<f64>(0.0, &cfg).unwrap();
    assert_eq!(g.value, 0.0);
    assert_eq!(estimate_big_sigma2::<f64>(0.0, &cfg).unwrap().value, 0.0);
    let s = estimate_sigma2::<f64>(0.0, &cfg).unwrap();
    assert_eq!(s.value, 1.0);
    assert_eq!(s.std_error, 0.0);
    assert_eq!(series_reference(0.0), (1.0, 0.0));
}

#[test]
fn rejects_bad_configs() {
    assert!(estimate_gamma::<f64>(1.0, &McConfig::new(0, 256, 0)).is_err());
    assert!(estimate_sigma2::<f64>(1.0, &McConfig::new(10, 100, 0)).is_err());
}

#[test]
fn xi_profile_trivial_cases() {
    let w1 = random_path(128, 1);
    let w2 = random_path(128, 2);
    assert!(xi_profile(0.0, &w1, &w2).unwrap().values.iter().all(|&v| v == 1.0));
    assert!(xi_profile(2.5, &w1, &w1).unwrap().values.iter().all(|&v| v == 1.0));
    let p = xi_profile(3.0, &w1, &w2).unwrap();
    assert!(p.values.iter().all(|&v| v > 0.0));
    assert!(xi_profile(1.0, &w1, &random_path(64, 3)).is_err());
}

#[test]
fn xi_profile_matches_direct_evaluation() {
    let n = 64;
    let w1 = test_path(n, 0.8, -0.3);
    let w2 = test_path(n, -0.2, 1.1);
    let got = xi_profile(1.0, &w1, &w2).unwrap().values;
    // Plain loops, no log shift.
    let d: Vec<f64> = (0..=n).map(|j| w2.values()[j] - w1.values()[j]).collect();
    let mut z = 0.5 * (d[0].exp() + d[n].exp());
    for v in &d[1..n] {
        z += v.exp();
    }
    z /= n as f64;
    for j in 0..=n {
        let want = d[j].exp() / (z * z);
        assert!((got[j] - want).abs() <= 1e-14 * want, "j={j}");
    }
    // Same profile evaluated at 30 digits.
    let golden = [(0usize, 4.1244644816447784), (16, 2.8858786381397417), (40, 0.88191307934941261)];
    for (j, want) in golden {
        assert!((got[j] - want).abs() <= 1e-14 * want, "j={j}: {:.16}", got[j]);
    }
}

#[test]
fn amplitude_trivial_cases() {
    let (w1, w2, w3) = (random_path(128, 4), random_path(128, 5), random_path(128, 6));
    assert_eq!(winding_amplitude_sample(0.0, &w1, &w2, &w3).unwrap(), 0.0);
    let z = BridgePath::<f64>::zero(128);
    assert_eq!(winding_amplitude_sample(1.7, &z, &z, &z).unwrap(), 0.0);
    assert!(amplitude_weights(1.0, &w1, &random_path(64, 0)).is_err());
}

/// Original double integral `∫∫ Ξ(y)(ρ(z) − 1) 1{z ≤ y} dz dy` with a
/// trapezoid in `z` over `[0, y_j]` and a trapezoid in `y`.
fn amplitude_double_integral(beta: f64, w1: &[f64], w2: &[f64], w3: &[f64]) -> f64 {
    let n = w1.len() - 1;
    let h = 1.0 / n as f64;
    let trap = |f: &dyn Fn(usize) -> f64, upto: usize| -> f64 {
        if upto == 0 {
            return 0.0;
        }
        let mut s = 0.5 * (f(0) + f(upto));
        for k in 1..upto {
            s += f(k);
        }
        s * h
    };
    let z13 = trap(&|k| (beta * (w1[k] + w3[k])).exp(), n);
    let z21 = trap(&|k| (beta * (w2[k] - w1[k])).exp(), n);
    let rho_minus_one = |k: usize| (beta * (w1[k] + w3[k])).exp() / z13 - 1.0;
    let xi = |j: usize| (beta * (w2[j] - w1[j])).exp() / (z21 * z21);
    trap(&|j| xi(j) * trap(&rho_minus_one, j), n)
}

#[test]
fn amplitude_reduction_matches_double_integral() {
    for (k, n) in [64usize, 256].into_iter().enumerate() {
        let w1 = test_path(n, 0.5, 0.4);
        let w2 = test_path(n, -0.7, 0.2);
        let w3 = test_path(n, 0.3, -0.9);
        for beta in [0.5, 1.0, 2.0] {
            let fast = winding_amplitude_sample(beta, &w1, &w2, &w3).unwrap();
            let slow = amplitude_double_integral(beta, w1.values(), w2.values(), w3.values());
            assert!((fast - slow).abs() <= 1e-10 * slow.abs(), "case {k} beta {beta}: {fast} vs {slow}");
        }
        let (r1, r2, r3) = (random_path(n, 10), random_path(n, 11), random_path(n, 12));
        let fast = winding_amplitude_sample(1.0, &r1, &r2, &r3).unwrap();
        let slow = amplitude_double_integral(1.0, r1.values(), r2.values(), r3.values());
        assert!((fast - slow).abs() <= 1e-10 * slow.abs());
    }
}

#[test]
fn sign_symmetry_is_exact() {
    for i in 0..20 {
        let w: Vec<BridgePath<f64>> = (0..4).map(|k| random_path(128, 4 * i + k)).collect();
        let m: Vec<BridgePath<f64>> = w.iter().map(negate).collect();
        let beta = 0.3 + 0.2 * i as f64;
        assert_eq!(gamma_integrand(&w[0], beta, true), gamma_integrand(&m[0], -beta, true));
        assert_eq!(gamma_integrand(&w[0], beta, false), gamma_integrand(&m[0], -beta, false));
        assert_eq!(
            big_sigma2_integrand(&w[0], &w[1], &w[2], beta).unwrap(),
            big_sigma2_integrand(&m[0], &m[1], &m[2], -beta).unwrap()
        );
        assert_eq!(
            sigma2_integrand(&w[0], &w[1], &w[2], &w[3], beta).unwrap(),
            sigma2_integrand(&m[0], &m[1], &m[2], &m[3], -beta).unwrap()
        );
        assert_eq!(xi_profile(beta, &w[0], &w[1]).unwrap(), xi_profile(-beta, &m[0], &m[1]).unwrap());
    }
}

#[test]
fn product_estimator_is_the_square_when_inner_draws_coincide() {
    // With W₂ = W₂' the product collapses to β² F².
    let (w1, w2) = (random_path(256, 20), random_path(256, 21));
    let beta = 1.3;
    let f = 1.0 / partition_functional_sum(&w1, &w2, beta);
    let prod = big_sigma2_integrand(&w1, &w2, &w2, beta).unwrap();
    assert!((prod - beta * beta * f * f).abs() <= 1e-15 * prod);
    let w3 = random_path(256, 22);
    let a = winding_amplitude_sample(beta, &w1, &w2, &w3).unwrap();
    let s = sigma2_integrand(&w1, &w2, &w2, &w3, beta).unwrap();
    assert!((s - beta * beta * a * a).abs() <= 1e-15 * s.abs().max(1e-300));
}

fn partition_functional_sum(a: &BridgePath<f64>, b: &BridgePath<f64>, beta: f64) -> f64 {
    let v: Vec<f64> = a.values().iter().zip(b.values()).map(|(x, y)| x + y).collect();
    crate::bridge::partition_functional(&BridgePath::from_values(v).unwrap(), beta)
}

#[test]
fn series_reference_values() {
    let (s, b) = series_reference(0.5);
    assert!((s - 1.00017361).abs() < 5e-9);
    assert!((b - 0.25516493).abs() < 5e-9);
    let (s, b) = series_reference(1.0);
    assert!((s - 1.00277778).abs() < 5e-9);
    assert!((b - 1.08055556).abs() < 5e-9);
}

#[test]
fn gamma_matches_closed_form() {
    for beta in [0.5, 1.0, 2.0] {
        let g = estimate_gamma::<f64>(beta, &McConfig::new(20_000, 256, 3)).unwrap();
        assert!(g.within(gamma_exact(beta), 3.5), "beta {beta}: {} ± {}", g.value, g.std_error);
        let moment = 2.0 / (beta * beta);
        let m = g.value * moment;
        assert!((m - (1.0 + beta * beta / 12.0)).abs() <= 3.5 * g.std_error * moment);
    }
}

#[test]
fn controls_reduce_the_error_without_bias() {
    let mut cfg = McConfig::new(20_000, 256, 9);
    let with = estimate_gamma::<f64>(2.0, &cfg).unwrap();
    cfg.control_variates = false;
    let without = estimate_gamma::<f64>(2.0, &cfg).unwrap();
    assert!(with.std_error < 0.5 * without.std_error);
    assert!((with.value - without.value).abs() <= 3.0 * without.std_error);
}

#[test]
fn gamma_in_single_precision_is_close() {
    let cfg = McConfig::new(5_000, 256, 4);
    let d = estimate_gamma::<f64>(1.0, &cfg).unwrap();
    let s = estimate_gamma::<f32>(1.0, &cfg).unwrap();
    assert!((d.value - s.value).abs() < 1e-4);
}

#[test]
fn big_sigma2_small_beta() {
    let beta = 0.5;
    let e = estimate_big_sigma2::<f64>(beta, &McConfig::new(50_000, 256, 5)).unwrap();
    let (_, series) = series_reference(beta);
    assert!((e.value - series).abs() <= (3.5 * e.std_error).max(10.0 * beta.powi(8)));
}

#[test]
fn sigma2_is_at_least_one_within_noise() {
    for beta in [0.5, 1.0, 2.0] {
        let e = estimate_sigma2::<f64>(beta, &McConfig::new(4_000, 128, 6)).unwrap();
        assert!(e.value >= 1.0 - 3.0 * e.std_error, "beta {beta}");
    }
}

#[test]
fn sigma2_antithetic_flag_keeps_the_mean() {
    let mut cfg = McConfig::new(4_000, 128, 7);
    let plain = estimate_sigma2::<f64>(1.0, &cfg).unwrap();
    cfg.antithetic_sigma2 = true;
    let paired = estimate_sigma2::<f64>(1.0, &cfg).unwrap();
    assert!((plain.value - paired.value).abs() <= 3.0 * plain.std_error.hypot(paired.std_error));
}

#[test]
fn estimators_ignore_thread_count() {
    let cfg = McConfig::new(5_000, 128, 8);
    let run = |threads| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            (
                estimate_gamma::<f64>(1.0, &cfg).unwrap(),
                estimate_sigma2::<f64>(1.0, &cfg).unwrap(),
            )
        })
    };
    let (a, b) = (run(1), run(3));
    assert_eq!(a.0.value.to_bits(), b.0.value.to_bits());
    assert_eq!(a.1.value.to_bits(), b.1.value.to_bits());
    assert_eq!(a.1.std_error.to_bits(), b.1.std_error.to_bits());
}

#[test]
fn refinement_is_consistent() {
    let r = gamma_refinement::<f64>(1.0, &McConfig::new(10_000, 1024, 10)).unwrap();
    assert!(r.consistent(3.0));
    assert!(r.difference.std_error < r.coarse.std_error);
}

#[test]
fn rescale_examples() {
    let r = rescale(1.0, 1.0).unwrap();
    assert_eq!(r.beta_l, 1.0);
    assert_eq!(r.sigma2_relation, "identity");
    assert_eq!(r.big_sigma2_relation, "identity");
    let r = rescale(2.0, 4.0).unwrap();
    assert_eq!(r.beta_l, 1.0);
    assert_eq!(r.big_sigma2_factor(), 16.0);
    assert_eq!(rescale(1.0, 0.25).unwrap().beta_l, 2.0);
    assert!(matches!(rescale(1.0, 0.0), Err(Error::Domain(_))));
    assert!(matches!(rescale(1.0, -2.0), Err(Error::Domain(_))));
}

#[test]
fn brunet_operator_on_truncated_series() {
    for beta in [0.5, 1.0, 1.5] {
        let got = brunet_operator(|b| series_reference(b).1, beta, 1e-3).unwrap();
        let want = 1.0 + beta.powi(4) / 360.0;
        assert!((got - want).abs() < 1e-5, "beta {beta}: {got}");
    }
}

#[test]
fn brunet_rejects_bad_arguments() {
    let cfg = quick(10, 0);
    assert!(matches!(brunet_rhs::<f64>(0.0, 0.01, &cfg), Err(Error::Domain(_))));
    assert!(matches!(brunet_rhs::<f64>(-1.0, 0.01, &cfg), Err(Error::Domain(_))));
    assert!(matches!(brunet_rhs::<f64>(1.0, 0.6, &cfg), Err(Error::Parameter { .. })));
    assert!(matches!(brunet_rhs::<f64>(1.0, 0.0, &cfg), Err(Error::Parameter { .. })));
    assert!(brunet_operator(|b| b, -1.0, 0.1).is_err());
}

#[test]
fn brunet_small_beta_is_near_one() {
    let r = brunet_rhs::<f64>(0.5, 0.025, &McConfig::new(20_000, 256, 11)).unwrap();
    assert!((r.rhs.value - 1.00017).abs() <= 3.5 * r.rhs.std_error + r.truncation.abs());
    assert!(r.rhs.std_error < 0.05);
}

proptest! {
    #[test]
    fn xi_profile_is_positive(seed in 0u64..1000, beta in -5.0f64..5.0) {
        let w1 = random_path(64, 2 * seed);
        let w2 = random_path(64, 2 * seed + 1);
        prop_assert!(xi_profile(beta, &w1, &w2).unwrap().values.iter().all(|&v| v > 0.0 && v.is_finite()));
    }

    #[test]
    fn amplitude_weights_vanish_at_the_ends(seed in 0u64..1000, beta in -4.0f64..4.0) {
        let w = amplitude_weights(beta, &random_path(64, seed), &random_path(64, seed + 5000)).unwrap();
        prop_assert_eq!(w[0], 0.0);
        prop_assert!(w[64].abs() < 1e-13);
    }
}
