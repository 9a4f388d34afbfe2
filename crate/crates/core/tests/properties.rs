mod common;

use proptest::collection::vec;
use proptest::prelude::*;

use common::{alternating_minimization, f_ref, golden_section, kappa_by_counting};
use secure_fusion::analysis::{c_of_u, certified_bound, kappa_hi, kappa_lo, kappa_rank, robustness_condition, Verdict};
use secure_fusion::attack::{apply_attack, drive_attack, CompromisedSet};
use secure_fusion::fusion::{
    big_f, coordinate_minimize, huber_f, huber_grad, objective, phi, robust_fuse, soft_threshold, FusionConfig,
};
use secure_fusion::linalg::Vector;

fn lambda() -> impl Strategy<Value = f64> {
    (-2.0f64..2.0).prop_map(|e| 10f64.powf(e))
}

fn locals(max_m: usize, n: usize) -> impl Strategy<Value = Vec<Vector>> {
    vec(vec(-50.0f64..50.0, n), 1..=max_m).prop_map(|rows| rows.into_iter().map(Vector::from_vec).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn f_matches_prox_value(t in -100.0f64..100.0, l in lambda()) {
        let f = huber_f(t, l);
        prop_assert!((f - f_ref(t, l)).abs() <= 1e-12 * (1.0 + f.abs()));
        let s = soft_threshold(t, l);
        prop_assert!(((t - s).powi(2) + l * s.abs() - f).abs() <= 1e-12 * (1.0 + f.abs()));
    }

    #[test]
    fn f_is_even_nonnegative_and_below_square(t in -100.0f64..100.0, l in lambda()) {
        prop_assert_eq!(huber_f(t, l), huber_f(-t, l));
        prop_assert!(huber_f(t, l) >= 0.0);
        prop_assert!(huber_f(t, l) <= t * t + 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences(t in -100.0f64..100.0, l in lambda()) {
        prop_assume!((t.abs() - l / 2.0).abs() > 1e-3);
        let h = 1e-6;
        let fd = (huber_f(t + h, l) - huber_f(t - h, l)) / (2.0 * h);
        prop_assert!((fd - huber_grad(t, l)).abs() <= 1e-4 * (1.0 + l), "fd {} grad {}", fd, huber_grad(t, l));
    }

    #[test]
    fn gradient_is_bounded_by_lambda(t in -1e6f64..1e6, l in lambda()) {
        prop_assert!(huber_grad(t, l).abs() <= l);
    }

    #[test]
    fn phi_inner_product_is_bounded(v in vec(-50.0f64..50.0, 1..6), seed in vec(-50.0f64..50.0, 6), l in lambda()) {
        let v = Vector::from_vec(v);
        let u = Vector::from_iterator(v.len(), seed.into_iter().take(v.len()));
        prop_assert!(phi(&(&v + &u), l).dot(&u) <= c_of_u(&u, l) * (1.0 + 1e-12));
    }

    #[test]
    fn big_f_grows_with_slope_c(v in vec(-50.0f64..50.0, 1..6), u in vec(-2.0f64..2.0, 6), l in lambda()) {
        let v = Vector::from_vec(v);
        let u = Vector::from_iterator(v.len(), u.into_iter().take(v.len()).map(|x| if x.abs() < 0.1 { 0.0 } else { x }));
        let t = 1e6;
        let slope = (big_f(&(&v + &u * (2.0 * t)), l) - big_f(&(&v + &u * t), l)) / t;
        let c = c_of_u(&u, l);
        prop_assert!((slope - c).abs() <= 1e-9 * (1.0 + c), "slope {} c {}", slope, c);
        // |F(v + tu) - t C(u)| <= lambda |v|_1 + n lambda^2 / 4
        let slack = (l * v.lp_norm(1) + v.len() as f64 * l * l / 4.0) / 1e9;
        prop_assert!((big_f(&(&v + &u * 1e9), l) / 1e9 - c).abs() <= slack + 1e-12 * (1.0 + c));
    }

    #[test]
    fn coordinate_minimizer_is_optimal(values in vec(-100.0f64..100.0, 1..10), l in lambda()) {
        let got = coordinate_minimize(&values, l);
        let oracle = golden_section(&values, l);
        prop_assert!(got.lo <= got.hi);
        prop_assert!(got.lo - 1e-9 <= oracle && oracle <= got.hi + 1e-9, "{:?} vs {}", got, oracle);
        prop_assert!(got.lo <= got.xstar && got.xstar <= got.hi);
    }

    #[test]
    fn robust_fusion_is_translation_invariant(z in locals(9, 3), u in vec(-1e3f64..1e3, 3), l in lambda()) {
        let cfg = FusionConfig::new(l).unwrap();
        let u = Vector::from_vec(u);
        let shifted: Vec<Vector> = z.iter().map(|zi| zi + &u).collect();
        let diff = robust_fuse(&shifted, &cfg).xhat - robust_fuse(&z, &cfg).xhat - &u;
        prop_assert!(diff.amax() <= 1e-9 * (1.0 + u.amax()));
    }

    #[test]
    fn robust_fusion_matches_joint_minimization(z in locals(7, 2), l in lambda()) {
        let cfg = FusionConfig::new(l).unwrap();
        let xhat = robust_fuse(&z, &cfg).xhat;
        let (_, joint) = alternating_minimization(&z, l);
        let ours = objective(&z, &xhat, l);
        prop_assert!(ours <= joint + 1e-6 * (1.0 + joint.abs()), "ours {} joint {}", ours, joint);
        prop_assert!((ours - joint).abs() <= 1e-6 * (1.0 + joint.abs()));
    }

    #[test]
    fn kappa_maps_are_antisymmetric(u in vec(-10.0f64..10.0, 3..10), p_frac in 0.0f64..1.0) {
        let m = u.len();
        let p = ((m - 1) / 2) * (p_frac * 100.0) as usize / 100;
        let neg: Vec<f64> = u.iter().map(|x| -x).collect();
        let lo = kappa_lo(&u, p, m).unwrap();
        prop_assert_eq!(kappa_hi(&neg, p, m).unwrap(), -lo);
        prop_assert_eq!(kappa_lo(&neg, p, m).unwrap(), -kappa_hi(&u, p, m).unwrap());
        let mut sorted = u.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).all(|w| w[0] < w[1]) {
            let rank = kappa_rank(p, m).unwrap();
            prop_assert_eq!(kappa_by_counting(&u, rank - 1), vec![lo]);
        }
    }

    #[test]
    fn verdict_follows_majority(m in 1usize..20, p in 0usize..20) {
        prop_assume!(p <= m);
        let v = robustness_condition(p, m).unwrap().verdict;
        let expected = if 2 * p < m { Verdict::RobustSufficient } else if 2 * p > m { Verdict::NotRobust } else { Verdict::Boundary };
        prop_assert_eq!(v, expected);
    }

    #[test]
    fn certified_bound_holds_for_any_minority_attack(
        x in locals(9, 2),
        dir in vec(-1.0f64..1.0, 2),
        t in -6.0f64..6.0,
        l in lambda(),
        pick in any::<u64>(),
    ) {
        let m = x.len();
        prop_assume!(m >= 3);
        let p = (m - 1) / 2;
        let supports = CompromisedSet::all_of_size(p, m);
        let set = &supports[(pick % supports.len() as u64) as usize];
        let u = Vector::from_vec(dir);
        prop_assume!(u.norm() > 1e-3);
        let cfg = FusionConfig::new(l).unwrap();
        let baseline = robust_fuse(&x, &cfg).xhat;
        let z = apply_attack(&x, &drive_attack(&u, 10f64.powf(t), &x, set)).unwrap();
        let dev = (robust_fuse(&z, &cfg).xhat - &baseline).lp_norm(1);
        let bound = certified_bound(&x, &baseline, p, l).unwrap().mu;
        prop_assert!(dev <= bound * (1.0 + 1e-12) + 1e-9, "dev {} bound {}", dev, bound);
    }
}
