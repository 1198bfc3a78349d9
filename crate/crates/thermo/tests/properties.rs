use gibbsnet_thermo::{
    detect_gaps, refine_common_tangent, stability_scan, BinaryModel, DGmixCurve, Margules,
    NrtlParams,
};
use proptest::prelude::*;

fn symmetric_binodal(a: f64) -> f64 {
    let f = |x: f64| (x / (1.0 - x)).ln() + a * (1.0 - 2.0 * x);
    let (mut lo, mut hi) = (1e-300, 0.5 - 1e-9 / a);
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn nrtl() -> impl Strategy<Value = (NrtlParams, f64)> {
    (
        -1.0f64..2.5,
        -300.0f64..500.0,
        -1.0f64..2.5,
        -300.0f64..500.0,
        0.2f64..0.47,
        270.0f64..420.0,
    )
        .prop_map(|(a12, b12, a21, b21, al, t)| (NrtlParams::binary((a12, b12), (a21, b21), al), t))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn margules_refinement_matches_bisection(a in 2.1f64..=4.0) {
        let m = Margules::constant(a);
        let curve = DGmixCurve::from_model(&m, 300.0).unwrap();
        let gaps = detect_gaps(&curve);
        prop_assert_eq!(gaps.len(), 1);
        let r = refine_common_tangent(&m, 300.0, gaps[0]).unwrap();
        let oracle = symmetric_binodal(a);
        prop_assert!((r.x1_lo - oracle).abs() < 1e-8);
        prop_assert!((r.x1_lo + r.x1_hi - 1.0).abs() < 1e-12);
    }

    #[test]
    fn margules_gap_iff_unstable(a in 0.0f64..4.0) {
        let curve = DGmixCurve::from_model(&Margules::constant(a), 300.0).unwrap();
        let scan = stability_scan(&Margules::constant(a), 300.0).unwrap();
        if !detect_gaps(&curve).is_empty() {
            prop_assert!(scan.min < 0.0);
        }
        prop_assert_eq!(scan.min < 0.0, a > 2.0);
    }

    #[test]
    fn nrtl_curve_endpoints_vanish((p, t) in nrtl()) {
        let c = DGmixCurve::from_model(&p, t).unwrap();
        prop_assert_eq!(c.values[0], 0.0);
        prop_assert_eq!(c.values[100], 0.0);
    }

    #[test]
    fn nrtl_pure_limits((p, t) in nrtl()) {
        let lg0 = BinaryModel::ln_gamma(&p, 1.0, t).unwrap();
        let lg1 = BinaryModel::ln_gamma(&p, 0.0, t).unwrap();
        prop_assert!(lg0[0].abs() < 1e-12);
        prop_assert!(lg1[1].abs() < 1e-12);
    }

    #[test]
    fn nrtl_gaps_mirror((p, t) in nrtl()) {
        let c = DGmixCurve::from_model(&p, t).unwrap();
        let fwd = detect_gaps(&c);
        let rev = detect_gaps(&c.reversed());
        prop_assert_eq!(fwd.len(), rev.len());
        for (f, r) in fwd.iter().zip(rev.iter().rev()) {
            prop_assert!((r.x1_lo - (1.0 - f.x1_hi)).abs() < 1e-15);
            prop_assert!((r.x1_hi - (1.0 - f.x1_lo)).abs() < 1e-15);
        }
    }
}
