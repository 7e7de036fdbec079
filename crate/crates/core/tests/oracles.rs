use diffna::boundary::{classify_boundary, Accessibility};
use diffna::characteristics::{
    builtin, catalog, scale_from_coefficients, speed_from_coefficients, BuiltinParams, Coefficient, Side, StateInterval,
};
use diffna::regularity::{companion_speed, dc_check, image_window, DcTarget, DcVerdict, DEFAULT_DC_LEVELS};
use diffna::simulate::{build_chain, default_truncation, hitting_stats, simulate_paths, PathEnd};
use diffna::verdict::{na_verdict_with, Horizon, ModelAnalysis, NaStatus};

fn cat(name: &str) -> diffna::characteristics::DiffusionModel {
    builtin(name, &BuiltinParams::default()).unwrap()
}

#[test]
fn constant_drift_scale_closed_form() {
    for mu in [-0.7, 0.3, 1.5] {
        let s = scale_from_coefficients(Coefficient::constant(mu), Coefficient::constant(1.0), StateInterval::real_line(), 0.0)
            .unwrap();
        for x in [-2.0, -0.5, 0.25, 1.0, 3.0] {
            let exact = (1.0 - (-2.0 * mu * x).exp()) / (2.0 * mu);
            assert!((s.value(x) - exact).abs() <= 1e-9 * (1.0 + exact.abs()), "mu={mu} x={x}");
        }
    }
}

#[test]
fn absorbed_ito_scale_derivative() {
    let m = cat("absorbed_ito");
    for y in [0.3f64, 0.8, 1.0, 2.5, 6.0] {
        let exact = (2.0 - 2.0 / y).exp();
        let d = m.scale().derivative_right(y).unwrap();
        assert!((d - exact).abs() <= 1e-8 * exact, "y={y}: {d} vs {exact}");
    }
}

#[test]
fn driftless_linear_vol_speed_density() {
    let iv = StateInterval::half_line(false);
    let (mu, sigma) = (Coefficient::constant(0.0), Coefficient::linear(0.0, 1.0));
    let s = scale_from_coefficients(mu, sigma, iv, 1.0).unwrap();
    let m = speed_from_coefficients(mu, sigma, &s).unwrap();
    for x in [0.01, 0.5, 1.0, 4.0] {
        let exact = 1.0 / (x * x);
        assert!((m.density_at(x) - exact).abs() <= 1e-9 * exact, "x={x}");
    }
}

#[test]
fn brownian_exit_time_under_refinement() {
    let bm = cat("brownian");
    let mut errors = Vec::new();
    for (i, cells) in [32, 64, 128, 256].into_iter().enumerate() {
        let chain = build_chain(&bm, cells, (-1.0, 1.0)).unwrap();
        let ens = simulate_paths(&chain, 0.0, f64::INFINITY, 20_000, 40 + i as u64).unwrap();
        let h = hitting_stats(&ens, -1.0, 1.0).unwrap();
        assert!(h.mean_exit_time.within(1.0, 3.5), "cells={cells}: {:?}", h.mean_exit_time);
        errors.push((h.mean_exit_time.mean - 1.0).abs());
    }
    // The deterministic-holding walk has no discretization bias here, so
    // every error is Monte Carlo noise of order 1e-2.
    assert!(errors.iter().all(|&e| e < 0.03), "{errors:?}");
}

#[test]
fn inverse_scale_dc_for_catalog() {
    for m in catalog() {
        let (w, levels) = match m.label() {
            "absorbed_ito" => ((0.5, 2.0), DEFAULT_DC_LEVELS),
            "counterexample_reflecting" => ((0.25, 4.0), DEFAULT_DC_LEVELS + 2),
            _ => ((-0.5, 0.5), DEFAULT_DC_LEVELS),
        };
        let r = dc_check(m.scale(), DcTarget::InverseScale, image_window(m.scale(), w), levels);
        assert_eq!(r.verdict, DcVerdict::Dc, "{}: ratios {:?}", m.label(), r.ratios);
    }
}

#[test]
fn companion_speed_is_a_speed_measure() {
    for name in ["brownian", "sticky_bm", "skew_bm", "absorbed_ito"] {
        let c = companion_speed(&cat(name)).unwrap();
        for (a, b) in [(0.25, 0.75), (0.5, 2.0)] {
            let mass = c.mass(a, b);
            assert!(mass > 0.0 && mass.is_finite(), "{name} on [{a}, {b}]: {mass}");
        }
    }
    let c = companion_speed(&cat("counterexample_nondc")).unwrap();
    for (a, b) in [(0.01, 0.1), (0.25, 0.75), (1.0, 5.0)] {
        let mass = c.mass(a, b);
        assert!(mass > 0.0 && mass.is_finite(), "counterexample on [{a}, {b}]: {mass}");
    }
    assert!(c.mass(0.0, 0.5).is_infinite());
}

#[test]
fn counterexample_summability() {
    let mut s = 0.0;
    for n in 1..200 {
        let next = s + (n * n) as f64 * (-(n as f64)).exp2();
        assert!(next >= s && next <= 6.0);
        s = next;
    }
    assert!((s - 6.0).abs() < 1e-12);
    let h: f64 = (1..=100_000).map(|n| 1.0 / n as f64).sum();
    assert!(h > 12.0);
}

#[test]
fn counterexample_infinite_ends_symmetric() {
    let m = cat("counterexample_nondc");
    let lo = classify_boundary(&m, Side::Lower).unwrap();
    let hi = classify_boundary(&m, Side::Upper).unwrap();
    assert_eq!(lo.accessibility, hi.accessibility);
    assert_eq!(lo.behavior, hi.behavior);
    assert_eq!(lo.scale_limit, -hi.scale_limit);
}

#[test]
fn accessible_boundary_is_hit_in_simulation() {
    let m = cat("absorbed_ito");
    assert_eq!(classify_boundary(&m, Side::Lower).unwrap().accessibility, Accessibility::Accessible);
    let tr = default_truncation(&m, 1.0).unwrap();
    let chain = build_chain(&m, 128, tr).unwrap();
    let ens = simulate_paths(&chain, 1.0, 10.0, 2_000, 9).unwrap();
    assert!(ens.paths_visiting(0.0) > 0);
    assert!(ens.end_counts().absorbed > 0);
    let diffna::simulate::PathStore::Chain { paths, .. } = &ens.store else { unreachable!() };
    assert!(paths.iter().all(|p| p.end != PathEnd::StepCap));
}

fn starts(name: &str) -> Vec<f64> {
    match name {
        "absorbed_ito" | "counterexample_reflecting" => vec![0.5, 1.0, 2.0, 4.0],
        _ => vec![-1.0, -0.5, 0.0, 0.5, 1.0],
    }
}

#[test]
fn verdicts_monotone_in_horizon_and_start_invariant() {
    for m in catalog() {
        let a = ModelAnalysis::new(&m).unwrap();
        for h in [Horizon::Finite(0.5), Horizon::Finite(1.0), Horizon::Finite(4.0), Horizon::Infinite] {
            let decided: Vec<NaStatus> = starts(m.label())
                .into_iter()
                .map(|x0| na_verdict_with(&a, x0, h).unwrap().na)
                .filter(|na| *na != NaStatus::Unknown)
                .collect();
            assert!(decided.windows(2).all(|w| w[0] == w[1]), "{} T={h}: {decided:?}", m.label());
        }
        for x0 in starts(m.label()) {
            let na = |h| na_verdict_with(&a, x0, h).unwrap().na;
            if na(Horizon::Finite(1.0)) == NaStatus::Fails {
                assert_eq!(na(Horizon::Finite(4.0)), NaStatus::Fails, "{} x0={x0}", m.label());
                assert_eq!(na(Horizon::Infinite), NaStatus::Fails, "{} x0={x0}", m.label());
            }
        }
    }
}
