//! Legitimate and eavesdropper SINRs, closed form and Monte Carlo.
//!
//! The closed forms hold for any grouping, so plain MRT (every user weak) and
//! full ZF (every user strong) are special cases of the same expressions.
//! The Monte Carlo oracle rebuilds channels, estimates and precoders on every
//! trial and forms ratios of sample moments.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::estimate_direct;
use crate::error::{Error, Result};
use crate::precoding::{build_ppzf, GroupingPlan};
use crate::rng::{derive_seed, substream, Stream};
use crate::scenario::{LargeScaleState, ATTACKED_USER};
use crate::stats::NeumaierSum;
use crate::C64;

/// Relative slack allowed on the per-AP budget.
pub const POWER_TOLERANCE: f64 = 1e-6;

/// L×K nonnegative power-control coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct PowerMatrix {
    pub rho: DMatrix<f64>,
}

impl PowerMatrix {
    /// Wraps a matrix after checking sign and finiteness.
    pub fn new(rho: DMatrix<f64>) -> Result<Self> {
        if rho.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidPower("coefficients must be finite and nonnegative".into()));
        }
        Ok(Self { rho })
    }

    /// `ρ_max / K` for every pair.
    pub fn equal(aps: usize, users: usize, rho_max: f64) -> Self {
        Self { rho: DMatrix::from_element(aps, users, rho_max / users as f64) }
    }

    /// Squares the entries of Ψ.
    pub fn from_psi(psi: &DMatrix<f64>) -> Self {
        Self { rho: psi.map(|v| v.max(0.0).powi(2)) }
    }

    /// Entrywise square roots.
    pub fn psi(&self) -> DMatrix<f64> {
        self.rho.map(f64::sqrt)
    }

    /// Checks the per-AP budget with relative slack [`POWER_TOLERANCE`].
    pub fn check_budget(&self, rho_max: f64) -> Result<()> {
        for (l, row) in self.rho.row_iter().enumerate() {
            let s: f64 = row.iter().sum();
            if s > rho_max * (1.0 + POWER_TOLERANCE) {
                return Err(Error::InvalidPower(format!("AP {l} uses {s:e} > rho_max {rho_max:e}")));
            }
        }
        Ok(())
    }
}

/// Per-node SINRs and rates of one configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SecrecyReport {
    pub sinr_users: Vec<f64>,
    /// Eavesdropper SINR after combining all its antennas.
    pub sinr_eav: f64,
    pub se_users: Vec<f64>,
    pub se_eav: f64,
    /// Secrecy spectral efficiency of user 1, clamped at zero.
    pub sse: f64,
}

/// `max(0, log2((1 + s1) / (1 + se)))`.
pub fn secrecy_rate(sinr_user: f64, sinr_eav: f64) -> f64 {
    ((1.0 + sinr_user).log2() - (1.0 + sinr_eav).log2()).max(0.0)
}

/// Closed-form SINR of every user.
pub fn sinr_user_closed(ls: &LargeScaleState, grouping: &GroupingPlan, power: &PowerMatrix) -> Vec<f64> {
    let (l_n, k_n) = (ls.aps(), ls.users());
    let rho = &power.rho;
    (0..k_n)
        .map(|k| {
            let mut amp = 0.0;
            let mut interf = 1.0;
            for l in 0..l_n {
                amp += (grouping.gain(l) * rho[(l, k)] * ls.gamma[(l, k)]).sqrt();
                let leak = ls.beta[(l, k)] - if grouping.delta[l][k] { ls.gamma[(l, k)] } else { 0.0 };
                let total: f64 = rho.row(l).iter().sum();
                interf += total * leak;
            }
            amp * amp / interf
        })
        .collect()
}

/// Closed-form SINR of one eavesdropper antenna.
pub fn sinr_eav_closed(ls: &LargeScaleState, grouping: &GroupingPlan, power: &PowerMatrix) -> f64 {
    let a = ATTACKED_USER;
    let rho = &power.rho;
    let mut amp = 0.0;
    let mut extra = 0.0;
    let mut interf = 1.0;
    for l in 0..ls.aps() {
        let r1 = rho[(l, a)];
        amp += (r1 * grouping.gain(l) * ls.gamma_e[l]).sqrt();
        extra += r1 * ls.beta_e[l];
        let strong = grouping.delta[l][a];
        if strong {
            extra -= r1 * ls.gamma_e[l];
        }
        let leak = ls.beta_e[l] - if strong { ls.gamma_e[l] } else { 0.0 };
        let others: f64 = (0..ls.users()).filter(|&t| t != a).map(|t| rho[(l, t)]).sum();
        interf += others * leak;
    }
    (amp * amp + extra) / interf
}

/// Eavesdropper SINR with maximum-ratio combining over `n_e` antennas.
pub fn sinr_eav_mrc(ls: &LargeScaleState, grouping: &GroupingPlan, power: &PowerMatrix, n_e: usize) -> f64 {
    n_e as f64 * sinr_eav_closed(ls, grouping, power)
}

/// Rates and secrecy of one configuration with an `n_e`-antenna eavesdropper.
pub fn secrecy_report(ls: &LargeScaleState, grouping: &GroupingPlan, power: &PowerMatrix, n_e: usize) -> SecrecyReport {
    let sinr_users = sinr_user_closed(ls, grouping, power);
    let sinr_eav = sinr_eav_mrc(ls, grouping, power, n_e);
    report_from_sinrs(sinr_users, sinr_eav)
}

/// Assembles a report from SINRs.
pub fn report_from_sinrs(sinr_users: Vec<f64>, sinr_eav: f64) -> SecrecyReport {
    let se_users: Vec<f64> = sinr_users.iter().map(|s| (1.0 + s).log2()).collect();
    let se_eav = (1.0 + sinr_eav).log2();
    let sse = secrecy_rate(sinr_users[ATTACKED_USER], sinr_eav);
    SecrecyReport { sinr_users, sinr_eav, se_users, se_eav, sse }
}

/// Trials per independently seeded block of the oracle.
pub const MC_BLOCK: usize = 1024;

const MAX_REDRAWS: usize = 1000;

/// Sample-moment estimates produced by the oracle.
#[derive(Clone, Debug, PartialEq)]
pub struct McEstimate {
    pub sinr_users: Vec<f64>,
    /// SINR of each eavesdropper antenna.
    pub sinr_eav: Vec<f64>,
    pub n_trials: usize,
    /// Draws discarded because a Gram matrix was ill-conditioned.
    pub redraws: usize,
}

impl McEstimate {
    /// Combined eavesdropper SINR under maximum-ratio combining.
    pub fn sinr_eav_mrc(&self) -> f64 {
        self.sinr_eav.iter().sum()
    }
}

#[derive(Clone)]
struct Moments {
    cp_re: Vec<NeumaierSum>,
    cp_im: Vec<NeumaierSum>,
    /// |a_{k,t}|², row-major K×K.
    sq: Vec<NeumaierSum>,
    /// |b_{n,t}|², row-major N_E×K.
    eav: Vec<NeumaierSum>,
    trials: usize,
    redraws: usize,
}

impl Moments {
    fn new(k: usize, n_e: usize) -> Self {
        Self {
            cp_re: vec![NeumaierSum::new(); k],
            cp_im: vec![NeumaierSum::new(); k],
            sq: vec![NeumaierSum::new(); k * k],
            eav: vec![NeumaierSum::new(); n_e * k],
            trials: 0,
            redraws: 0,
        }
    }

    fn merge(&mut self, o: &Moments) {
        let pairs = self.cp_re.iter_mut().zip(&o.cp_re).chain(self.cp_im.iter_mut().zip(&o.cp_im));
        for (a, b) in pairs.chain(self.sq.iter_mut().zip(&o.sq)).chain(self.eav.iter_mut().zip(&o.eav)) {
            a.merge(b);
        }
        self.trials += o.trials;
        self.redraws += o.redraws;
    }
}

fn run_block(ls: &LargeScaleState, grouping: &GroupingPlan, sqrt_rho: &DMatrix<f64>, seed: u64, block: usize, n: usize) -> Result<Moments> {
    let (l_n, k_n, n_e) = (ls.aps(), ls.users(), ls.eav_antennas());
    let mut rng = substream(seed, Stream::Trials, block as u64);
    let mut acc = Moments::new(k_n, n_e);
    let mut a = vec![C64::new(0.0, 0.0); k_n * k_n];
    let mut b = vec![C64::new(0.0, 0.0); n_e * k_n];
    for _ in 0..n {
        let mut attempts = 0;
        let (real, prec) = loop {
            let real = estimate_direct(ls, &mut rng)?;
            match build_ppzf(&real, grouping, ls) {
                Ok(p) => break (real, p),
                Err(Error::SingularGram { .. }) if attempts < MAX_REDRAWS => {
                    attempts += 1;
                    acc.redraws += 1;
                }
                Err(e) => return Err(e),
            }
        };
        a.fill(C64::new(0.0, 0.0));
        b.fill(C64::new(0.0, 0.0));
        for l in 0..l_n {
            let w = &prec.w[l];
            for t in 0..k_n {
                let s = sqrt_rho[(l, t)];
                if s == 0.0 {
                    continue;
                }
                let wt = w.column(t);
                for k in 0..k_n {
                    a[k * k_n + t] += real.h[l].column(k).dotc(&wt) * s;
                }
                for e in 0..n_e {
                    b[e * k_n + t] += real.h_e[l].column(e).dotc(&wt) * s;
                }
            }
        }
        for k in 0..k_n {
            acc.cp_re[k].add(a[k * k_n + k].re);
            acc.cp_im[k].add(a[k * k_n + k].im);
        }
        for (s, v) in acc.sq.iter_mut().zip(&a) {
            s.add(v.norm_sqr());
        }
        for (s, v) in acc.eav.iter_mut().zip(&b) {
            s.add(v.norm_sqr());
        }
        acc.trials += 1;
    }
    Ok(acc)
}

/// Monte Carlo estimate of all SINRs over `n_trials` fresh small-scale draws.
///
/// Trials are split into fixed blocks with derived seeds and reduced in block
/// order, so the result does not depend on the number of worker threads.
pub fn monte_carlo(ls: &LargeScaleState, grouping: &GroupingPlan, power: &PowerMatrix, n_trials: usize, seed: u64) -> Result<McEstimate> {
    let (k_n, n_e) = (ls.users(), ls.eav_antennas());
    let sqrt_rho = power.psi();
    let blocks = n_trials.div_ceil(MC_BLOCK);
    let parts: Vec<Result<Moments>> = (0..blocks)
        .into_par_iter()
        .map(|blk| {
            let n = MC_BLOCK.min(n_trials - blk * MC_BLOCK);
            run_block(ls, grouping, &sqrt_rho, seed, blk, n)
        })
        .collect();
    let mut total = Moments::new(k_n, n_e);
    for p in parts {
        total.merge(&p?);
    }
    let n = total.trials.max(1) as f64;
    let sinr_users = (0..k_n)
        .map(|k| {
            let cp2 = (total.cp_re[k].value() / n).powi(2) + (total.cp_im[k].value() / n).powi(2);
            let all: f64 = (0..k_n).map(|t| total.sq[k * k_n + t].value() / n).sum();
            let den = (all - cp2).max(0.0) + 1.0;
            cp2 / den
        })
        .collect();
    let sinr_eav = (0..n_e)
        .map(|e| {
            let sig = total.eav[e * k_n + ATTACKED_USER].value() / n;
            let interf: f64 = (0..k_n).filter(|&t| t != ATTACKED_USER).map(|t| total.eav[e * k_n + t].value() / n).sum();
            sig / (interf + 1.0)
        })
        .collect();
    Ok(McEstimate { sinr_users, sinr_eav, n_trials: total.trials, redraws: total.redraws })
}

/// Monte Carlo SINRs of the users.
pub fn sinr_user_mc(ls: &LargeScaleState, grouping: &GroupingPlan, power: &PowerMatrix, n_trials: usize, seed: u64) -> Result<Vec<f64>> {
    Ok(monte_carlo(ls, grouping, power, n_trials, seed)?.sinr_users)
}

/// Monte Carlo SINR of the first eavesdropper antenna.
pub fn sinr_eav_mc(ls: &LargeScaleState, grouping: &GroupingPlan, power: &PowerMatrix, n_trials: usize, seed: u64) -> Result<f64> {
    Ok(monte_carlo(ls, grouping, power, n_trials, seed)?.sinr_eav[0])
}

/// Seed for the oracle run attached to an experiment drop.
pub fn oracle_seed(root: u64, index: u64) -> u64 {
    derive_seed(root, Stream::Trials, index)
}
