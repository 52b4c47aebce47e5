use std::sync::Arc;

use approx::assert_relative_eq;
use proptest::prelude::*;

use nearpoints::homfun::{norm, Ball, DualSurface, HomogeneousSurface, Surface};
use nearpoints::oscint::{classify_frequency, critical_point, duality_probe, DualityInput, FrequencyClass, RescaledPhase};
use nearpoints::weights::{dualize_weight, BallBump, Weight};

fn pair(d: f64) -> (Arc<dyn Surface>, Arc<DualSurface>) {
    let f: Arc<dyn Surface> = Arc::new(HomogeneousSurface::radial(3, d).unwrap());
    let dual = Arc::new(DualSurface::new(f.clone()));
    (f, dual)
}

fn probe_input(weight: Arc<dyn Weight>, dual_weight: Arc<dyn Weight>) -> DualityInput {
    let (f, dual) = pair(2.0);
    DualityInput {
        f_p: f,
        f_dual: dual,
        d: 2.0,
        p: 1.0,
        domain: Ball::new(vec![0.75, 0.0], 0.125),
        weight,
        dual_weight,
        eps: 0.1,
        budget: 1e10,
    }
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
        Ball::new(vec![0.75, 0.0], 0.1)
    }
}

#[test]
fn duality_probe_tiny_instance() {
    let (_, dual) = pair(2.0);
    let w: Arc<dyn Weight> = Arc::new(BallBump::new(vec![0.75, 0.0], 0.05, 0.1));
    let dw: Arc<dyn Weight> = Arc::new(dualize_weight(w.clone(), dual));
    let rec = duality_probe(&probe_input(w, dw), 0.25, 64.0, 0, 1).unwrap();
    assert!(rec.lhs.is_finite() && rec.lhs >= 0.0);
    assert!(rec.rhs.is_finite() && rec.rhs >= 0.0);
    assert!(!rec.dual_scales.is_empty());
    // dual counts run at δ' of order 1/Q and Q' a power of two below Q^ε/δ
    for &(dd, qd) in &rec.dual_scales {
        assert!(dd * 64.0 >= 2.0 - 1e-12 && dd <= 0.5);
        assert!(qd >= 1.0 && qd <= 64f64.powf(0.1) / 0.25);
    }
}

#[test]
fn duality_probe_zero_weight() {
    let zero: Arc<dyn Weight> = Arc::new(Zero);
    let rec = duality_probe(&probe_input(zero.clone(), zero), 0.25, 64.0, 0, 1).unwrap();
    assert_eq!(rec.lhs, 0.0);
    assert_eq!(rec.rhs, 0.0);
}

fn wide(f: Arc<dyn Surface>, dual: Arc<DualSurface>, d: f64, j: i64, k: Vec<i64>, ell: u32) -> RescaledPhase {
    RescaledPhase { f_p: f, f_dual: dual, d, p: 1.0, domain: Ball::new(vec![0.0, 0.0], 1e3), j, q: 29, k, ell }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn critical_point_homogeneity(
        d in prop::sample::select(vec![2.0, 3.0, 4.0]),
        j in 1i64..40,
        k1 in -30i64..30,
        k2 in 1i64..30,
        ell in 0u32..3,
    ) {
        let (f, dual) = pair(d);
        let rp = wide(f, dual.clone(), d, j, vec![k1, k2], ell);
        let x = critical_point(&rp).unwrap().unwrap();
        let base = dual.invert_gradient(&rp.frequency()).unwrap();
        let s = 2f64.powi(ell as i32);
        for i in 0..2 {
            prop_assert!((x[i] - s * base[i]).abs() <= 1e-9 * s * norm(&base).max(1.0));
        }
    }

    #[test]
    fn phase_at_critical_point(
        d in prop::sample::select(vec![2.0, 3.0, 4.0]),
        j in 1i64..40,
        k1 in -30i64..30,
        k2 in 1i64..30,
        ell in 0u32..3,
    ) {
        let (f, dual) = pair(d);
        let rp = wide(f, dual.clone(), d, j, vec![k1, k2], ell);
        let x = critical_point(&rp).unwrap().unwrap();
        let lhs = rp.lambda() * rp.phase().value(&x);
        let rhs = -(rp.q * rp.j) as f64 * dual.value(&rp.frequency());
        assert_relative_eq!(lhs, rhs, max_relative = 1e-8);
    }

    #[test]
    fn classification_consistent_with_distance(k1 in -80i64..80, k2 in -80i64..80, j in 1i64..32) {
        let (f, dual) = pair(2.0);
        let rp = RescaledPhase {
            f_p: f,
            f_dual: dual,
            d: 2.0,
            p: 1.0,
            domain: Ball::new(vec![0.75, 0.0], 0.125),
            j,
            q: 64,
            k: vec![k1, k2],
            ell: 0,
        };
        let dist = rp.distance_to_image();
        let expected = if dist <= 1e-12 {
            FrequencyClass::K1
        } else if dist < rp.gamma() {
            FrequencyClass::K2
        } else {
            FrequencyClass::K3
        };
        prop_assert_eq!(classify_frequency(&rp), expected);
    }
}
