//! Small-scale fading, spoofed uplink training and MMSE channel estimation.
//!
//! Every eavesdropper antenna transmits user 1's pilot at the same power, so
//! the per-antenna statistics of the eavesdropper channels are identical.
//! Two estimation paths exist: the explicit one simulates the received pilot
//! matrix, the direct one draws the per-user pilot projections, which have
//! the same joint law and cost far less.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::complex_normal;
use crate::scenario::{LargeScaleState, ATTACKED_USER};
use crate::C64;

/// One small-scale realization. Matrices are stored per AP with one column per node.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelRealization {
    /// True channels, M×K per AP.
    pub h: Vec<DMatrix<C64>>,
    /// Eavesdropper channels, M×N_E per AP.
    pub h_e: Vec<DMatrix<C64>>,
    /// MMSE estimates, M×K per AP.
    pub h_hat: Vec<DMatrix<C64>>,
    /// Estimation errors `h - h_hat`.
    pub h_err: Vec<DMatrix<C64>>,
}

/// Orthonormal pilot assignment.
#[derive(Clone, Debug, PartialEq)]
pub struct PilotBook {
    /// τ_p×K matrix whose columns are the user pilots.
    pub phi: DMatrix<C64>,
    pub attacked_user: usize,
    /// Pilot sent by the eavesdropper.
    pub phi_e: DVector<C64>,
}

impl PilotBook {
    /// First K columns of the τ_p×τ_p identity.
    pub fn new(tau_p: usize, users: usize, attacked_user: usize) -> Result<Self> {
        if tau_p < users || attacked_user >= users {
            return Err(Error::InvalidScenario(format!(
                "pilot book needs tau_p >= K and a valid attacked user (tau_p = {tau_p}, K = {users})"
            )));
        }
        let phi = DMatrix::from_fn(tau_p, users, |i, j| if i == j { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) });
        let phi_e = phi.column(attacked_user).into_owned();
        Ok(Self { phi, attacked_user, phi_e })
    }
}

fn gaussian_matrix<R: Rng + ?Sized>(rows: usize, scales: &[f64], rng: &mut R) -> DMatrix<C64> {
    let mut m = DMatrix::zeros(rows, scales.len());
    for (j, &s) in scales.iter().enumerate() {
        for i in 0..rows {
            m[(i, j)] = complex_normal(rng) * s;
        }
    }
    m
}

/// Draws true channels; estimates are left at zero so that `h = h_hat + h_err` holds.
pub fn draw_small_scale<R: Rng + ?Sized>(ls: &LargeScaleState, rng: &mut R) -> ChannelRealization {
    let (l_n, k_n, m) = (ls.aps(), ls.users(), ls.antennas);
    let n_e = ls.eav_antennas();
    let mut out = ChannelRealization { h: Vec::with_capacity(l_n), h_e: Vec::with_capacity(l_n), h_hat: Vec::new(), h_err: Vec::new() };
    for l in 0..l_n {
        let sb: Vec<f64> = (0..k_n).map(|k| ls.beta[(l, k)].sqrt()).collect();
        out.h.push(gaussian_matrix(m, &sb, rng));
        out.h_e.push(gaussian_matrix(m, &vec![ls.beta_e[l].sqrt(); n_e], rng));
    }
    out.h_hat = vec![DMatrix::zeros(m, k_n); l_n];
    out.h_err = out.h.clone();
    out
}

/// Received pilot matrices for given noise matrices (M×τ_p per AP).
pub fn received_pilots(real: &ChannelRealization, pilots: &PilotBook, ls: &LargeScaleState, noise: &[DMatrix<C64>]) -> Vec<DMatrix<C64>> {
    let t = ls.training;
    let su = C64::from((t.tau_p * t.rho_u).sqrt());
    let se = C64::from((t.tau_p * t.rho_e).sqrt());
    let phi_h = pilots.phi.adjoint();
    let phi_e_h = pilots.phi_e.adjoint();
    (0..ls.aps())
        .map(|l| {
            let spoof: DVector<C64> = real.h_e[l].column_sum();
            &real.h[l] * &phi_h * su + spoof * &phi_e_h * se + &noise[l]
        })
        .collect()
}

/// Simulates uplink training with fresh unit-variance noise.
pub fn uplink_training<R: Rng + ?Sized>(real: &ChannelRealization, pilots: &PilotBook, ls: &LargeScaleState, rng: &mut R) -> Vec<DMatrix<C64>> {
    let tau_p = pilots.phi.nrows();
    let noise: Vec<DMatrix<C64>> = (0..ls.aps()).map(|_| gaussian_matrix(ls.antennas, &vec![1.0; tau_p], rng)).collect();
    received_pilots(real, pilots, ls, &noise)
}

/// Per-AP pilot projections `y_{l,k} = Y_l φ_k`, one column per user.
pub fn project_pilots(y_p: &[DMatrix<C64>], pilots: &PilotBook) -> Vec<DMatrix<C64>> {
    y_p.iter().map(|y| y * &pilots.phi).collect()
}

fn estimator_coefficient(ls: &LargeScaleState, l: usize, k: usize) -> Result<f64> {
    let t = ls.training;
    let b = ls.beta[(l, k)];
    let den = t.projection_power(k, b, ls.beta_e[l]);
    if !(den > 0.0) || !den.is_finite() {
        return Err(Error::DegenerateEstimator { ap: l, user: k });
    }
    Ok((t.tau_p * t.rho_u).sqrt() * b / den)
}

/// Fills `h_hat` and `h_err` from received pilot matrices.
pub fn mmse_estimate(y_p: &[DMatrix<C64>], pilots: &PilotBook, ls: &LargeScaleState, real: &mut ChannelRealization) -> Result<()> {
    let proj = project_pilots(y_p, pilots);
    for l in 0..ls.aps() {
        let mut hat = proj[l].clone();
        for k in 0..ls.users() {
            let c = estimator_coefficient(ls, l, k)?;
            hat.column_mut(k).scale_mut(c);
        }
        real.h_err[l] = &real.h[l] - &hat;
        real.h_hat[l] = hat;
    }
    Ok(())
}

/// Draws channels and estimates through the per-user pilot projections.
pub fn estimate_direct<R: Rng + ?Sized>(ls: &LargeScaleState, rng: &mut R) -> Result<ChannelRealization> {
    let (l_n, k_n, m) = (ls.aps(), ls.users(), ls.antennas);
    let n_e = ls.eav_antennas();
    let t = ls.training;
    let su = (t.tau_p * t.rho_u).sqrt();
    let se = (t.tau_p * t.rho_e).sqrt();
    let mut out = ChannelRealization {
        h: Vec::with_capacity(l_n),
        h_e: Vec::with_capacity(l_n),
        h_hat: Vec::with_capacity(l_n),
        h_err: Vec::with_capacity(l_n),
    };
    for l in 0..l_n {
        let sb: Vec<f64> = (0..k_n).map(|k| ls.beta[(l, k)].sqrt()).collect();
        let h = gaussian_matrix(m, &sb, rng);
        let h_e = gaussian_matrix(m, &vec![ls.beta_e[l].sqrt(); n_e], rng);
        let mut hat = DMatrix::zeros(m, k_n);
        for k in 0..k_n {
            let c = estimator_coefficient(ls, l, k)?;
            for i in 0..m {
                let mut y = h[(i, k)] * su + complex_normal(rng);
                if k == ATTACKED_USER && se > 0.0 {
                    y += h_e.row(i).sum() * se;
                }
                hat[(i, k)] = y * c;
            }
        }
        out.h_err.push(&h - &hat);
        out.h.push(h);
        out.h_e.push(h_e);
        out.h_hat.push(hat);
    }
    Ok(out)
}
