//! Randomised invariants of the interpolants, the target inverse and W2.

use bridgelab::diagnostics::w2_exact_1d;
use bridgelab::interpolant::{make_bridge_sample, pow_time, predict_x0, BridgeKind, ScheduleSpec};
use bridgelab::rng;
use proptest::prelude::*;

fn spec(kind: BridgeKind, alpha: f64) -> ScheduleSpec {
    match kind {
        BridgeKind::Nadb => ScheduleSpec::nadb(alpha, 0.75).unwrap(),
        BridgeKind::I2sb => ScheduleSpec::i2sb(1.0).unwrap(),
    }
}

fn vec3() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, 3)
}

fn kind() -> impl Strategy<Value = BridgeKind> {
    prop_oneof![Just(BridgeKind::Nadb), Just(BridgeKind::I2sb)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    /// The noise that forms X_t is the noise inside Y_t: scale·Y_t + x0 = X_t.
    #[test]
    fn target_reconstructs_state(k in kind(), alpha in 0.1f64..0.9, t in 1e-4f64..=1.0,
                                 x0 in vec3(), x1 in vec3(), z in vec3()) {
        let s = spec(k, alpha);
        let b = make_bridge_sample(&s, t, &x0, &x1, &x1, &z).unwrap();
        let scale = s.target_scale(t).unwrap();
        for i in 0..3 {
            let back = scale * b.yt[i] + x0[i];
            prop_assert!((back - b.xt[i]).abs() <= 1e-10 * (1.0 + b.xt[i].abs()));
        }
    }

    /// Feeding the exact target back recovers x0.
    #[test]
    fn predict_x0_inverts_target(k in kind(), t in 1e-4f64..=1.0,
                                 x0 in vec3(), x1 in vec3(), z in vec3()) {
        let s = spec(k, 0.4);
        let b = make_bridge_sample(&s, t, &x0, &x1, &x1, &z).unwrap();
        let rec = predict_x0(&s, t, &b.xt, &b.yt).unwrap();
        for i in 0..3 {
            prop_assert!((rec[i] - x0[i]).abs() <= 1e-9 * (1.0 + x0[i].abs()));
        }
        prop_assert_eq!(predict_x0(&s, t, &b.xt, &[0.0; 3]).unwrap(), b.xt.clone());
    }

    /// Direct construction of the aligned interpolant.
    #[test]
    fn nadb_state_matches_direct_formula(alpha in 0.1f64..0.9, t in 0.0f64..=1.0,
                                         x0 in vec3(), xh in vec3(), z in vec3()) {
        let s = spec(BridgeKind::Nadb, alpha);
        let b = make_bridge_sample(&s, t, &x0, &xh, &xh, &z).unwrap();
        let ta = pow_time(t, alpha);
        for i in 0..3 {
            let want = (1.0 - ta) * x0[i] + ta * xh[i] + 0.75 * t * (1.0 - t) * z[i];
            prop_assert!((b.xt[i] - want).abs() <= 1e-12 * (1.0 + want.abs()));
        }
    }

    #[test]
    fn nadb_target_to_input_ratio(alpha in 0.1f64..0.9, t in 1e-3f64..0.999) {
        let s = spec(BridgeKind::Nadb, alpha);
        let r = s.target_noise_coefficient(t).unwrap() / s.input_noise_coefficient(t).unwrap();
        let want = pow_time(t, -alpha);
        prop_assert!((r - want).abs() <= 1e-9 * want);
    }

    #[test]
    fn w2_permutation_shift_and_scale(seed in 0u64..1000, shift in -5.0f64..5.0, c in -3.0f64..3.0) {
        let mut r = rng::stream(seed, 0);
        let a = rng::normal_vec(&mut r, 64);
        let b = rng::normal_vec(&mut r, 64);
        let base = w2_exact_1d(&a, &b).unwrap();
        let mut rev = b.clone();
        rev.reverse();
        prop_assert!((w2_exact_1d(&a, &rev).unwrap() - base).abs() < 1e-12);
        let scaled_a: Vec<f64> = a.iter().map(|v| c * v).collect();
        let scaled_b: Vec<f64> = b.iter().map(|v| c * v).collect();
        prop_assert!((w2_exact_1d(&scaled_a, &scaled_b).unwrap() - c.abs() * base).abs() < 1e-9);
        let shifted: Vec<f64> = a.iter().map(|v| v + shift).collect();
        prop_assert!((w2_exact_1d(&a, &shifted).unwrap() - shift.abs()).abs() < 1e-9);
        prop_assert_eq!(w2_exact_1d(&a, &a).unwrap(), 0.0);
    }
}

#[test]
fn w2_of_unit_gaussians_one_apart() {
    let mut r = rng::stream(3, 0);
    let n = 100_000;
    let a = rng::normal_vec(&mut r, n);
    let b: Vec<f64> = rng::normal_vec(&mut r, n).into_iter().map(|v| v + 1.0).collect();
    let w = w2_exact_1d(&a, &b).unwrap();
    assert!((w - 1.0).abs() < 0.02, "{w}");
}
