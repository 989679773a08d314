use cfsec::poweropt::quadratic_over_linear_bound;
use cfsec::precoding::{build_grouping, GroupingPlan};
use cfsec::rng::{derive_seed, Stream};
use cfsec::scenario::{wrap_distance, LargeScaleState, Training};
use cfsec::secrecy::{secrecy_rate, sinr_eav_mrc, sinr_user_closed, PowerMatrix};
use cfsec::selection::{greedy_select, EqualPowerPolicy};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

const SIDE: f64 = 1000.0;

fn point() -> impl Strategy<Value = [f64; 2]> {
    (0.0..SIDE, 0.0..SIDE).prop_map(|(x, y)| [x, y])
}

fn state(l: usize, k: usize, m: usize, n_e: usize) -> impl Strategy<Value = LargeScaleState> {
    (prop::collection::vec(-12.0f64..-1.0, l * k), prop::collection::vec(-12.0f64..-1.0, l)).prop_map(move |(b, be)| {
        let beta = DMatrix::from_row_slice(l, k, &b.iter().map(|x| 10f64.powf(*x)).collect::<Vec<_>>());
        let beta_e = DVector::from_iterator(l, be.iter().map(|x| 10f64.powf(*x)));
        let training = Training { tau_p: k as f64, rho_u: 1e9, rho_e: 1e9, eav_antennas: n_e };
        LargeScaleState::from_gains(beta, beta_e, m, training)
    })
}

proptest! {
    #[test]
    fn wrap_distance_is_a_metric(a in point(), b in point(), c in point()) {
        let ab = wrap_distance(a, b, SIDE);
        prop_assert!(ab >= 0.0 && ab <= SIDE / 2f64.sqrt() + 1e-9);
        prop_assert!((ab - wrap_distance(b, a, SIDE)).abs() < 1e-12);
        prop_assert!(ab <= wrap_distance(a, c, SIDE) + wrap_distance(c, b, SIDE) + 1e-9);
        prop_assert_eq!(wrap_distance(a, a, SIDE), 0.0);
    }

    #[test]
    fn quadratic_over_linear_bound_is_tight_and_global(
        x in -5.0f64..5.0, y in 0.01f64..5.0, xb in -5.0f64..5.0, yb in 0.01f64..5.0,
    ) {
        prop_assert!(quadratic_over_linear_bound(x, y, xb, yb) <= x * x / y + 1e-9 * (1.0 + x * x / y));
        prop_assert!((quadratic_over_linear_bound(xb, yb, xb, yb) - xb * xb / yb).abs() <= 1e-9 * (1.0 + xb * xb / yb));
    }

    #[test]
    fn grouping_respects_antenna_budget(ls in state(5, 7, 4, 1), q in 0.0f64..1.0) {
        let g = build_grouping(&ls, q);
        for l in 0..5 {
            prop_assert!(g.strong[l].len() <= 3);
            prop_assert_eq!(g.strong[l].len() + g.weak[l].len(), 7);
            // every strong user is at least as strong as every weak user
            let min_strong = g.strong[l].iter().map(|&k| ls.beta[(l, k)]).fold(f64::INFINITY, f64::min);
            prop_assert!(g.weak[l].iter().all(|&k| ls.beta[(l, k)] <= min_strong));
            for k in 0..7 {
                prop_assert_eq!(g.delta[l][k], g.zf_servers[k].contains(&l));
                prop_assert_eq!(!g.delta[l][k], g.mrt_servers[k].contains(&l));
            }
        }
    }

    #[test]
    fn estimation_variance_never_exceeds_gain(ls in state(4, 3, 4, 2)) {
        for l in 0..4 {
            for k in 0..3 {
                prop_assert!(ls.gamma[(l, k)] > 0.0 && ls.gamma[(l, k)] <= ls.beta[(l, k)]);
            }
            prop_assert!(ls.gamma_e[l] >= 0.0 && ls.gamma_e[l] <= ls.beta_e[l]);
        }
        let clean = ls.without_attack();
        prop_assert!(clean.gamma[(0, 0)] >= ls.gamma[(0, 0)]);
        prop_assert!(clean.gamma_e.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn sinrs_scale_sensibly(ls in state(4, 3, 4, 2), scale in 0.01f64..1.0) {
        let g = build_grouping(&ls, 0.5);
        let full = PowerMatrix::equal(4, 3, 1.0);
        let mut part = full.clone();
        part.rho *= scale;
        let (a, b) = (sinr_user_closed(&ls, &g, &full), sinr_user_closed(&ls, &g, &part));
        for k in 0..3 {
            prop_assert!(a[k] >= 0.0);
            // uniform scaling cannot raise any SINR
            prop_assert!(b[k] <= a[k] * (1.0 + 1e-12));
        }
        let per = sinr_eav_mrc(&ls, &g, &full, 1);
        prop_assert!((sinr_eav_mrc(&ls, &g, &full, 3) - 3.0 * per).abs() <= 1e-12 * (1.0 + per));
    }

    #[test]
    fn secrecy_rate_is_clamped(s in 0.0f64..1e4, e in 0.0f64..1e4) {
        let r = secrecy_rate(s, e);
        prop_assert!(r >= 0.0);
        prop_assert_eq!(r == 0.0, s <= e);
    }

    #[test]
    fn greedy_selection_is_strictly_improving(ls in state(6, 3, 4, 1)) {
        let g = build_grouping(&ls, 0.5);
        let policy = EqualPowerPolicy { rho_max: 1.0, users: 3 };
        let res = greedy_select(&ls, &g, &policy).unwrap();
        prop_assert!(res.sse_trace.windows(2).all(|w| w[1] > w[0]));
        let mut seen = res.chosen.clone();
        seen.sort_unstable();
        seen.dedup();
        prop_assert_eq!(seen.len(), res.chosen.len());
    }

    #[test]
    fn substreams_differ(root in any::<u64>(), i in 0u64..1000) {
        prop_assert_ne!(derive_seed(root, Stream::Geometry, i), derive_seed(root, Stream::Shadowing, i));
        prop_assert_ne!(derive_seed(root, Stream::Geometry, i), derive_seed(root, Stream::Geometry, i + 1));
        prop_assert_eq!(derive_seed(root, Stream::Drop, i), derive_seed(root, Stream::Drop, i));
    }
}

#[test]
fn full_zf_grouping_needs_more_antennas_than_users() {
    assert!(GroupingPlan::all_strong(3, 4, 4).is_err());
    assert!(GroupingPlan::all_strong(3, 4, 5).is_ok());
}
