mod common;

use common::{c, two_bus, two_bus_magnitude};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ubpf_core::pf::{balanced_v0, flat_profile};
use ubpf_core::{build_admittance, power_residual, solve_nonlinear, Error, Feeder, NonlinearConfig, OperatingPoint};

fn max_norm(v: &[num_complex::Complex64]) -> f64 {
    v.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

#[test]
fn flat_profile_has_zero_residual_without_load() {
    let net = common::without_shunts(&Feeder::four_bus().network);
    let sys = build_admittance(&net).unwrap();
    let op = OperatingPoint::zero(sys.n_phases());
    let flat = flat_profile(&sys.phase_index, &op.v0);
    assert!(max_norm(&power_residual(&sys, &op, &flat).unwrap()) < 1e-12);

    let sol = solve_nonlinear(&sys, &op, &NonlinearConfig::default()).unwrap();
    assert_eq!(sol.iterations, 1);
    assert!(sol.v.iter().zip(&flat).all(|(a, b)| (a - b).norm() < 1e-14));
}

#[test]
fn injection_enters_residual_additively() {
    let feeder = Feeder::four_bus();
    let sys = build_admittance(&feeder.network).unwrap();
    let op = feeder.base_operating_point();
    let v: Vec<_> = (0..sys.n_phases()).map(|k| c(0.97, -0.01 * k as f64)).collect();
    let before = power_residual(&sys, &op, &v).unwrap();
    let mut bumped = op.clone();
    let delta = c(0.013, -0.007);
    bumped.s[2] += delta;
    let after = power_residual(&sys, &bumped, &v).unwrap();
    for k in 0..v.len() {
        let expect = if k == 2 { before[k] + delta } else { before[k] };
        assert!((after[k] - expect).norm() < 1e-15);
    }
}

#[test]
fn residual_rejects_wrong_length() {
    let feeder = Feeder::four_bus();
    let sys = build_admittance(&feeder.network).unwrap();
    let op = feeder.base_operating_point();
    assert!(power_residual(&sys, &op, &[c(1.0, 0.0)]).is_err());
}

#[test]
fn two_bus_matches_biquadratic() {
    let (r, x, p, q) = (0.01, 0.02, 0.1, 0.05);
    let sys = build_admittance(&two_bus("a", c(r, x))).unwrap();
    let op = OperatingPoint::new(vec![c(-p, -q)]);
    let sol = solve_nonlinear(&sys, &op, &NonlinearConfig::default()).unwrap();
    assert!((sol.v[0].norm() - two_bus_magnitude(1.0, r, x, p, q)).abs() < 1e-10);
}

#[test]
fn two_bus_sweep_matches_biquadratic() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let r = rng.random_range(0.001..0.1);
        let x = rng.random_range(0.001..0.1);
        let mag = 0.3 * rng.random::<f64>().sqrt();
        let ang = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let s = num_complex::Complex64::from_polar(mag, ang);
        let sys = build_admittance(&two_bus("a", c(r, x))).unwrap();
        let sol = solve_nonlinear(&sys, &OperatingPoint::new(vec![s]), &NonlinearConfig::default()).unwrap();
        let oracle = two_bus_magnitude(1.0, r, x, -s.re, -s.im);
        assert!((sol.v[0].norm() - oracle).abs() < 1e-10, "r {r} x {x} s {s}");
    }
}

#[test]
fn four_bus_matches_newton_reference() {
    let feeder = Feeder::four_bus();
    let sys = build_admittance(&feeder.network).unwrap();
    let op = feeder.base_operating_point();
    let sol = solve_nonlinear(&sys, &op, &NonlinearConfig::default()).unwrap();
    assert!(max_norm(&power_residual(&sys, &op, &sol.v).unwrap()) < 1e-10);
    let reference = common::newton_reference(&feeder.network, &op.v0, &op.s);
    let gap = sol.v.iter().zip(&reference).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    assert!(gap < 1e-8, "gap {gap}");
}

#[test]
fn ieee13_matches_newton_reference() {
    let feeder = Feeder::ieee13_like();
    let sys = build_admittance(&feeder.network).unwrap();
    let op = feeder.base_operating_point();
    let sol = solve_nonlinear(&sys, &op, &NonlinearConfig::default()).unwrap();
    let reference = common::newton_reference(&feeder.network, &op.v0, &op.s);
    let gap = sol.v.iter().zip(&reference).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    assert!(gap < 1e-8, "gap {gap}");
}

#[test]
fn solves_are_bit_identical() {
    let feeder = Feeder::ieee13_like();
    let sys = build_admittance(&feeder.network).unwrap();
    let op = feeder.base_operating_point();
    let a = solve_nonlinear(&sys, &op, &NonlinearConfig::default()).unwrap();
    let b = solve_nonlinear(&sys, &op, &NonlinearConfig::default()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn heavy_load_reports_collapse_or_nonconvergence() {
    let sys = build_admittance(&two_bus("a", c(0.05, 0.1))).unwrap();
    let op = OperatingPoint::new(vec![c(-5.0, -3.0)]);
    match solve_nonlinear(&sys, &op, &NonlinearConfig::default()) {
        Err(Error::VoltageCollapse { .. }) => {}
        Err(Error::NonConvergence { last_iterate, .. }) => assert_eq!(last_iterate.len(), 1),
        other => panic!("expected failure, got {other:?}"),
    }
}

#[test]
fn iteration_budget_is_respected() {
    let feeder = Feeder::ieee13_like();
    let sys = build_admittance(&feeder.network).unwrap();
    let cfg = NonlinearConfig {
        max_iterations: 1,
        ..Default::default()
    };
    let err = solve_nonlinear(&sys, &feeder.base_operating_point(), &cfg).unwrap_err();
    assert!(matches!(err, Error::NonConvergence { iterations: 1, .. }));
}

#[test]
fn off_nominal_slack_is_honoured() {
    let sys = build_admittance(&two_bus("c", c(0.01, 0.02))).unwrap();
    let op = OperatingPoint::new(vec![c(-0.1, -0.05)]).with_v0(balanced_v0(1.05));
    let sol = solve_nonlinear(&sys, &op, &NonlinearConfig::default()).unwrap();
    assert!((sol.v[0].norm() - two_bus_magnitude(1.05, 0.01, 0.02, 0.1, 0.05)).abs() < 1e-10);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn converged_solutions_satisfy_the_balance(net in common::radial_network(), seed in any::<u64>(), scale in 0.0..0.05f64) {
        let sys = build_admittance(&net).unwrap();
        let op = OperatingPoint::new(common::loads(sys.n_phases(), scale, seed));
        let cfg = NonlinearConfig::default();
        let sol = solve_nonlinear(&sys, &op, &cfg).unwrap();
        prop_assert!(sol.residual < cfg.tolerance);
        prop_assert!(max_norm(&power_residual(&sys, &op, &sol.v).unwrap()) < cfg.tolerance);
    }
}
