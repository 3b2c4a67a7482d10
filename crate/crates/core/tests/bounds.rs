use csmf::bounds::{self, ProfileSegment, SupportData};
use proptest::prelude::*;

fn support() -> impl Strategy<Value = SupportData> {
    (0.0f64..3.0, 0.0f64..1.0, 0.0f64..1.0, 0.0f64..5.0).prop_map(|(v_sup, l1, frac, size)| SupportData {
        v_sup,
        v_l1: l1 * v_sup,
        vbar: vec![frac * v_sup],
        supp_size: size,
        flock: None,
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn cs_bound_monotone_in_time(s in support(), psi in 0.0f64..2.0, t in 0.0f64..3.0, dt in 0.0f64..1.0) {
        let a = bounds::cs_bound(psi, &s, t).unwrap();
        let b = bounds::cs_bound(psi, &s, t + dt).unwrap();
        prop_assert!(a.c_t <= b.c_t);
        prop_assert!(a.bound(10) >= a.bound(1000));
    }

    #[test]
    fn lipschitz_bound_monotone_in_constants(g in 0.0f64..2.0, lip in 0.0f64..2.0, t in 0.0f64..3.0) {
        let a = bounds::lipschitz_bound(g, lip, t).unwrap();
        let b = bounds::lipschitz_bound(g * 1.5, lip * 1.5, t).unwrap();
        prop_assert!(a.c_t <= b.c_t);
        prop_assert!(a.dual_disagreement() <= 1e-12);
    }

    #[test]
    fn profile_matches_constant_segment(g in 0.01f64..2.0, lip in 0.01f64..2.0, t in 0.0f64..2.0) {
        let one = bounds::main_sublinear_bound(&[ProfileSegment { t_end: 2.0, gamma_sup: g, lip }], t).unwrap();
        let split = bounds::main_sublinear_bound(
            &[ProfileSegment { t_end: 1.0, gamma_sup: g, lip }, ProfileSegment { t_end: 2.0, gamma_sup: g, lip }],
            t,
        )
        .unwrap();
        prop_assert!(bounds::rel_diff(one.c_t, split.c_t) <= 1e-12, "{} vs {}", one.c_t, split.c_t);
    }
}

#[test]
fn threshold_inverts_the_bound() {
    let c = 3.0;
    let n = bounds::n_threshold(c, 0.1).unwrap();
    assert!((c / n.sqrt() - 0.1).abs() < 1e-12);
    assert!(bounds::n_threshold(c, 0.0).is_err());
}
