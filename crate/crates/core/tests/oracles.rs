//! Statistical oracles: estimator moments, estimation-path equivalence,
//! pilot-power concentration and a negative control for the closed forms.

use cfsec::channel::{draw_small_scale, estimate_direct, mmse_estimate, uplink_training, ChannelRealization, PilotBook};
use cfsec::detection::simulate_pilot_power;
use cfsec::experiment::{validate_closed_forms, ValidationSpec};
use cfsec::rng::{substream, Stream};
use cfsec::scenario::{LargeScaleState, Training, ATTACKED_USER};
use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, Gamma};

const SEED: u64 = 97;

fn small_state(n_e: usize) -> LargeScaleState {
    let training = Training { tau_p: 3.0, rho_u: 20.0, rho_e: 10.0, eav_antennas: n_e };
    let beta = DMatrix::from_row_slice(2, 3, &[0.8, 0.05, 0.3, 0.02, 0.6, 0.1]);
    let beta_e = DVector::from_vec(vec![0.4, 0.07]);
    LargeScaleState::from_gains(beta, beta_e, 3, training)
}

struct Moments {
    hat: DMatrix<f64>,
    err: DMatrix<f64>,
    cross: DMatrix<f64>,
}

fn moments(ls: &LargeScaleState, n: usize, mut draw: impl FnMut() -> ChannelRealization) -> Moments {
    let (l_n, k_n, m) = (ls.aps(), ls.users(), ls.antennas as f64);
    let mut hat = DMatrix::zeros(l_n, k_n);
    let mut err = DMatrix::zeros(l_n, k_n);
    let mut cross = DMatrix::zeros(l_n, k_n);
    for _ in 0..n {
        let r = draw();
        for l in 0..l_n {
            for k in 0..k_n {
                let h = r.h_hat[l].column(k);
                let e = r.h_err[l].column(k);
                hat[(l, k)] += h.norm_squared() / m;
                err[(l, k)] += e.norm_squared() / m;
                cross[(l, k)] += h.dotc(&e).re / m;
            }
        }
    }
    let s = 1.0 / n as f64;
    Moments { hat: hat * s, err: err * s, cross: cross * s }
}

fn check_moments(ls: &LargeScaleState, mo: &Moments, label: &str) {
    for l in 0..ls.aps() {
        for k in 0..ls.users() {
            let (b, g) = (ls.beta[(l, k)], ls.gamma[(l, k)]);
            assert!((mo.hat[(l, k)] / g - 1.0).abs() < 0.04, "{label}: E|h_hat|^2 at ({l},{k}) = {} vs {g}", mo.hat[(l, k)]);
            assert!((mo.err[(l, k)] / (b - g) - 1.0).abs() < 0.04, "{label}: E|err|^2 at ({l},{k})");
            assert!(mo.cross[(l, k)].abs() < 0.03 * b, "{label}: estimate and error correlate at ({l},{k})");
        }
    }
}

#[test]
fn mmse_moments_hold_for_both_estimation_paths() {
    let ls = small_state(2);
    let n = 20_000;
    let mut rng = substream(SEED, Stream::SmallScale, 0);
    let direct = moments(&ls, n, || estimate_direct(&ls, &mut rng).unwrap());
    check_moments(&ls, &direct, "direct");

    let pilots = PilotBook::new(3, 3, ATTACKED_USER).unwrap();
    let mut rng = substream(SEED, Stream::SmallScale, 1);
    let explicit = moments(&ls, n, || {
        let mut r = draw_small_scale(&ls, &mut rng);
        let y = uplink_training(&r, &pilots, &ls, &mut rng);
        mmse_estimate(&y, &pilots, &ls, &mut r).unwrap();
        r
    });
    check_moments(&ls, &explicit, "explicit");
}

#[test]
fn spoofed_estimate_correlates_with_eavesdropper_channel() {
    let ls = small_state(1);
    let n = 20_000;
    let mut rng = substream(SEED, Stream::SmallScale, 2);
    let mut acc = vec![0.0; ls.aps()];
    for _ in 0..n {
        let r = estimate_direct(&ls, &mut rng).unwrap();
        for (l, a) in acc.iter_mut().enumerate() {
            let c = r.h_hat[l].column(ATTACKED_USER).dotc(&r.h_e[l].column(0)).norm_sqr();
            *a += c / (ls.antennas as f64 * r.h_hat[l].column(ATTACKED_USER).norm_squared());
        }
    }
    // the eavesdropper's channel leaks into user 1's estimate with variance gamma_e per antenna
    for (l, a) in acc.iter().enumerate() {
        let m = ls.antennas as f64;
        let want = ls.gamma_e[l] + (ls.beta_e[l] - ls.gamma_e[l]) / m;
        assert!((a / n as f64 / want - 1.0).abs() < 0.05, "AP {l}: {} vs {want}", a / n as f64);
    }
}

#[test]
fn pilot_power_follows_the_gamma_law() {
    let ls = small_state(1);
    let (m, n_cb) = (ls.antennas, 277);
    let shape = (m * n_cb) as f64;
    let gamma = Gamma::new(shape, shape).unwrap();
    let within = gamma.cdf(1.1) - gamma.cdf(0.9);
    let trials = 1500;
    let mut hits = vec![0usize; ls.users()];
    for t in 0..trials {
        let xi = simulate_pilot_power(&ls, n_cb, &mut substream(SEED, Stream::Detection, t)).unwrap();
        for (k, h) in hits.iter_mut().enumerate() {
            let p = ls.training.projection_power(k, ls.beta[(0, k)], ls.beta_e[0]);
            if (xi[(0, k)] / p - 1.0).abs() <= 0.1 {
                *h += 1;
            }
        }
    }
    let sd = (within * (1.0 - within) / trials as f64).sqrt();
    for (k, h) in hits.iter().enumerate() {
        let frac = *h as f64 / trials as f64;
        assert!((frac - within).abs() < 4.0 * sd + 1e-3, "user {k}: {frac} vs {within}");
    }
}

#[test]
fn closed_forms_pass_the_oracle_and_corrupted_ones_do_not() {
    let base = ValidationSpec { instances: 4, n_trials: 20_000, seed: SEED, tol_users: 0.05, tol_eav: 0.08, ..Default::default() };
    let good = validate_closed_forms(&base).unwrap();
    assert!(good.passed, "users {} eav {}", good.max_dev_users, good.max_dev_eav);

    let bad = validate_closed_forms(&ValidationSpec { corrupt_gamma: 0.3, ..base.clone() }).unwrap();
    assert!(!bad.passed, "a 30% error in the estimation variances went unnoticed");

    let zero = validate_closed_forms(&ValidationSpec { zero_power: true, ..base }).unwrap();
    assert!(zero.passed && zero.max_dev_users == 0.0);
}
