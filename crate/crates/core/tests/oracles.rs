//! Library results against independently computed references.

mod common;

use common::dd::{cube_root_identity, Dd};
use sdelab_core::conditions::{moment_margin, monotonicity_margin, Sampler};
use sdelab_core::control::{ControlFunction, ControlKind};
use sdelab_core::estimators::{eval_test_function, explosion_stats, MonteCarlo, TestFunctionKind};
use sdelab_core::euler::{euler_path, EulerConfig};
use sdelab_core::model::{make_cube_root, make_rotation, DeterministicBlowup, GeometricBrownian, SdeSystem};
use sdelab_core::noise::BrownianTree;
use sdelab_core::scalar::ScalarFn;

#[test]
fn double_double_cbrt_is_tight() {
    for x in [2.0, 3.0, -7.5, 1e-20, 123456.789] {
        let u = Dd::cbrt(x);
        let cube = u * u * u;
        assert!(((cube - Dd::from_f64(x)).to_f64() / x).abs() < 1e-28, "{x}");
    }
}

#[test]
fn cube_root_monotonicity_identity() {
    let eta = ControlFunction::zero(ControlKind::Eta);
    let g = ScalarFn::constant(1.0);
    for d in [1, 3] {
        let sys = make_cube_root(d).unwrap();
        let pairs = Sampler::new(20_000, 10.0, 11).pairs(d).unwrap();
        for (x, y, t) in pairs {
            let m = monotonicity_margin(&sys, &eta, &g, t, &x, &y).unwrap().value;
            let exact = cube_root_identity(&x, &y);
            assert!(m <= 1e-9);
            if exact == 0.0 {
                assert_eq!(m, 0.0);
            } else {
                assert!(((m - exact) / exact).abs() <= 1e-10, "x={x:?} y={y:?}: {m} vs {exact}");
            }
        }
    }
}

#[test]
fn rotation_moment_terms_vanish() {
    let sys = make_rotation(1.0).unwrap();
    let zero = ScalarFn::constant(0.0);
    for (x, t) in Sampler::new(20_000, 10.0, 5).points(2).unwrap() {
        assert!(moment_margin(&sys, &zero, t, &x).unwrap().value <= 1e-10);
    }
}

#[test]
fn blowup_exit_near_tangent_pole() {
    // dX = (1 + X²)dt from 0 reaches ∞ at π/2; Euler lags slightly.
    let cfg = EulerConfig::new(14, 3.0, 1e6, vec![0.0]);
    let s = explosion_stats(&DeterministicBlowup, &cfg, &MonteCarlo::new(4, 1)).unwrap();
    assert_eq!(s.frequency, 1.0);
    for t in s.exit_times {
        assert!((t - std::f64::consts::FRAC_PI_2).abs() < 0.01, "{t}");
    }
}

#[test]
fn gbm_closed_form_uses_tree_endpoint() {
    let sys = GeometricBrownian { mu: 0.3, vol: 0.7 };
    for stream in 0..5 {
        let tree = BrownianTree::sample(1, 2.0, 12, 3, stream).unwrap();
        let b: f64 = tree.finest_increments().iter().sum();
        let exact = 1.5 * ((0.3 - 0.5 * 0.49) * 2.0 + 0.7 * b).exp();
        let got = sys.exact_solution(2.0, &[1.5], &tree).unwrap()[0];
        assert!((got - exact).abs() <= 1e-12 * exact);
    }
}

#[test]
fn deterministic_euler_matches_recursion() {
    // X_{k+1} = X_k + h(1 + X_k²), computed by hand
    let cfg = EulerConfig::new(6, 1.0, 1e6, vec![0.25]);
    let tree = BrownianTree::sample(1, 1.0, 6, 0, 0).unwrap();
    let rec = euler_path(&DeterministicBlowup, &cfg, &tree).unwrap();
    let h = 1.0 / 64.0;
    let mut x: f64 = 0.25;
    for k in 0..64 {
        assert_eq!(rec.state(k)[0], x);
        x += h * (1.0 + x * x);
    }
    assert_eq!(rec.last_state()[0], x);
}

#[test]
fn test_function_closed_forms() {
    // ∫₀¹ ds/(s+1) = ln 2 and exp(∫₀^{1/2} ds/(s+1/2)) = 2
    let eta = ControlFunction::linear(ControlKind::Eta, 1.0).unwrap();
    let v = eval_test_function(TestFunctionKind::PhiDelta, &eta, 1.0, 1.0, 0.5)
        .unwrap()
        .value;
    assert!((v / std::f64::consts::LN_2 - 1.0).abs() < 1e-8);
    let gr = ControlFunction::linear(ControlKind::GammaR, 1.0).unwrap();
    let v = eval_test_function(TestFunctionKind::ExpPhiDelta, &gr, 0.5, 0.0, 0.5)
        .unwrap()
        .value;
    assert!((v / 2.0 - 1.0).abs() < 1e-8);
    // x ln(1/x) control: ∫₀^x ds/(R s ln(1/s) + δ) against a log-substituted
    // midpoint sum
    let r = 2.0;
    let eta = ControlFunction::new(
        ControlKind::Eta,
        sdelab_core::control::ControlShape::XLogInv { scale: r },
        Default::default(),
    )
    .unwrap();
    let (x, delta) = (0.3f64, 1e-3);
    let n = 400_000;
    let (lo, hi) = ((1e-14f64).ln(), x.ln());
    let w = (hi - lo) / n as f64;
    let mut sum = 1e-14 / delta;
    for i in 0..n {
        let s = (lo + (i as f64 + 0.5) * w).exp();
        sum += s * w / (r * s * (1.0 / s).ln() + delta);
    }
    let v = eval_test_function(TestFunctionKind::PhiDelta, &eta, delta, x, 0.5)
        .unwrap()
        .value;
    assert!((v / sum - 1.0).abs() < 1e-7, "{v} vs {sum}");
}
