use nearpoints::asymptotics::{ledger_build, lower_bound_audit};
use nearpoints::cli::with_workers;
use nearpoints::counting::{
    exact_count, freq_localized_count, knapp_predictor, localized_count, poisson_side_eval, poisson_side_truncated,
    smoothed_count, zero_mode, CountRequest, SmoothSpec,
};
use nearpoints::homfun::{Ball, HomogeneousSurface, Surface};
use nearpoints::weights::{detector, omega_lower, omega_upper, BallBump, BumpMode, Profile, Weight};

fn circle() -> HomogeneousSurface {
    HomogeneousSurface::radial(3, 2.0).unwrap()
}

fn sharp(f: &dyn Surface, delta: f64, q: f64) -> u64 {
    exact_count(f, &CountRequest::new(delta, q)).unwrap().value.as_f64() as u64
}

#[test]
fn levels_sum_to_smoothed() {
    let f = circle();
    let omega = omega_upper();
    let b = detector(BumpMode::Upper);
    let rho = BallBump::new(vec![0.3, 0.0], 0.1, 0.25);
    let spec = SmoothSpec { omega: &omega, rho: &rho, b: &b, p: 1.0 };
    let total = smoothed_count(&f, &CountRequest::new(0.15, 32.0), &spec).unwrap().value.as_f64();
    let parts: f64 = (0..8).map(|l| localized_count(&f, 0.15, 32.0, l, &spec, 1e10).unwrap()).sum();
    assert!(total > 0.0);
    assert!((total - parts).abs() <= 1e-9 * total, "{total} vs {parts}");
    assert_eq!(localized_count(&f, 0.15, 32.0, 12, &spec, 1e10).unwrap(), 0.0);
}

#[derive(Debug)]
struct Zero;

impl Weight for Zero {
    fn dim(&self) -> usize {
        2
    }

    fn eval(&self, _: &[f64]) -> f64 {
        0.0
    }

    fn support(&self) -> Ball {
        Ball { center: vec![0.0, 0.0], radius: 1.0 }
    }
}

#[test]
fn zero_rho_gives_zero() {
    let f = circle();
    let omega = omega_upper();
    let b = detector(BumpMode::Upper);
    let spec = SmoothSpec { omega: &omega, rho: &Zero, b: &b, p: 1.0 };
    let v = smoothed_count(&f, &CountRequest::new(0.2, 16.0), &spec).unwrap();
    assert_eq!(v.value.as_f64(), 0.0);
}

#[test]
fn frequency_pieces_rebuild_level_count() {
    let f = circle();
    let (delta, q) = (0.1, 256.0);
    let omega = omega_upper();
    let b = detector(BumpMode::Upper);
    let rho = BallBump::new(vec![0.5, 0.2], 0.02, 0.05);
    let spec = SmoothSpec { omega: &omega, rho: &rho, b: &b, p: 1.0 };
    let direct = localized_count(&f, delta, q, 0, &spec, 1e10).unwrap();
    let ledger = ledger_build(delta, q, 0.1, 2.0, 3, 0).unwrap();
    let top = ledger.r.ceil() as u32 + 6;
    let mut rebuilt = zero_mode(&f, delta, q, 0, &spec, 1e10).unwrap();
    for r in 0..=top {
        rebuilt += freq_localized_count(&f, delta, q, 0, r, &spec, 1e12).unwrap().re;
    }
    assert!((rebuilt - direct).abs() <= 1e-6 * direct, "{rebuilt} vs {direct}");
}

#[test]
fn poisson_side_examples() {
    let b = detector(BumpMode::Upper);
    for x in [0.0, 3.0, -2.0] {
        let v = poisson_side_truncated(x, 0.1, 4000, &b);
        assert!((v - 1.0).abs() <= 1e-6, "x={x}: {v}");
    }
    let v = poisson_side_truncated(0.5, 0.1, 4000, &b);
    assert!(v.abs() <= 1e-6, "{v}");
    assert!(poisson_side_eval(0.5, 0.1, 0.1, 256.0, &b).is_finite());
}

#[test]
fn poisson_truncation_error_shrinks_with_length() {
    let b = detector(BumpMode::Upper);
    let worst = |jmax: u64| {
        (0..50)
            .map(|i| {
                let x = i as f64 / 50.0 + 0.0037;
                let exact = b.value(nearpoints::counting::nearest_int_dist(x) / 0.1);
                (poisson_side_truncated(x, 0.1, jmax, &b) - exact).abs()
            })
            .fold(0.0, f64::max)
    };
    let errs: Vec<f64> = [20, 40, 80, 160, 320].iter().map(|&j| worst(j)).collect();
    for w in errs.windows(2) {
        assert!(w[1] < w[0], "{errs:?}");
    }
}

#[test]
fn sandwich_on_small_grid() {
    let f = circle();
    let omega = omega_lower();
    let b = detector(BumpMode::Lower);
    let rho = BallBump::new(vec![0.5, 0.0], 0.1, 0.3);
    let spec = SmoothSpec { omega: &omega, rho: &rho, b: &b, p: 1.0 };
    for (delta, q) in [(0.1, 16.0), (0.25, 24.0), (0.4, 40.0)] {
        let lower = smoothed_count(&f, &CountRequest::new(delta, q).at_level(0), &spec).unwrap().value.as_f64();
        assert!(lower <= sharp(&f, delta, q) as f64);
    }
}

#[test]
fn counts_monotone_in_delta() {
    let f = circle();
    let counts: Vec<u64> = [0.01, 0.05, 0.1, 0.2, 0.3, 0.5].iter().map(|&d| sharp(&f, d, 48.0)).collect();
    assert!(counts.windows(2).all(|w| w[0] <= w[1]), "{counts:?}");
}

#[test]
fn radial_count_matches_generic_orthant_reconstruction() {
    // count one closed orthant by brute force, then unfold by the sign symmetries
    let (delta, q_scale) = (0.23, 12u64);
    let mut full = 0u64;
    for q in q_scale..2 * q_scale {
        let qi = q as i64;
        for a1 in 0..qi {
            for a2 in 0..qi {
                if a1 * a1 + a2 * a2 >= qi * qi {
                    continue;
                }
                let v = (a1 * a1 + a2 * a2) as f64 / q as f64;
                if nearpoints::counting::nearest_int_dist(v) <= delta {
                    let mult = if a1 == 0 { 1 } else { 2 } * if a2 == 0 { 1 } else { 2 };
                    full += mult;
                }
            }
        }
    }
    assert_eq!(sharp(&circle(), delta, q_scale as f64), full);
}

#[test]
fn counts_independent_of_worker_count() {
    let f = HomogeneousSurface::radial(3, 4.0).unwrap();
    let run = |w: usize| with_workers(w, || sharp(&f, 0.07, 96.0)).unwrap();
    let one = run(1);
    assert_eq!(run(4), one);
    assert_eq!(run(16), one);
}

#[test]
fn lower_bound_audit_small_case() {
    let f = circle();
    let audit = lower_bound_audit(&[&f], 0.25, 2.0, 1e9).unwrap();
    assert_eq!(audit.holds, Some(true));
    assert!(audit.count_lb <= 6);
    assert!(knapp_predictor(1e-9, 8.0, 2.0, 3) == 8);
}
