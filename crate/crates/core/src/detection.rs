//! Pilot-power test for active eavesdropping with majority voting across APs.
//!
//! Each AP compares the average received power of every pilot projection with
//! its expectation in the absence of an attack. Only large-scale gains and
//! received pilots are used.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{draw_small_scale, project_pilots, uplink_training, PilotBook};
use crate::error::{Error, Result};
use crate::rng::{substream, Stream};
use crate::scenario::{draw_large_scale, Geometry, LargeScaleState, Scenario, ATTACKED_USER};
use crate::C64;

/// Test parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionConfig {
    /// Independent coherence-bandwidth intervals averaged per decision.
    pub n_cb: usize,
    /// Threshold on `|υ - 1|`.
    pub epsilon: f64,
    /// A user is declared attacked when more than half, and at least this
    /// fraction, of the APs flag it.
    pub majority_fraction: f64,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self { n_cb: 277, epsilon: 0.06, majority_fraction: 0.5 }
    }
}

impl DetectionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_cb == 0 {
            return Err(Error::InvalidDetectionConfig("n_cb must be at least 1".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidDetectionConfig("epsilon must be positive".into()));
        }
        if !(0.5..=1.0).contains(&self.majority_fraction) {
            return Err(Error::InvalidDetectionConfig("majority_fraction must lie in [0.5, 1]".into()));
        }
        Ok(())
    }
}

/// Joint verdict over all users.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Clean,
    Attacked(usize),
    Ambiguous(Vec<usize>),
}

/// Statistics and decisions of one detection round.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectionResult {
    pub xi: DMatrix<f64>,
    pub upsilon: DMatrix<f64>,
    /// `per_ap_flags[(l, k)]` is true when AP l flags user k.
    pub per_ap_flags: DMatrix<bool>,
    pub verdict: Vec<bool>,
    pub outcome: Verdict,
}

impl DetectionResult {
    /// The unique flagged user, if any.
    pub fn flagged_user(&self) -> Result<Option<usize>> {
        match &self.outcome {
            Verdict::Clean => Ok(None),
            Verdict::Attacked(k) => Ok(Some(*k)),
            Verdict::Ambiguous(v) => Err(Error::Ambiguous(v.clone())),
        }
    }

    /// True when exactly the attacked user is flagged.
    pub fn is_correct_under_attack(&self) -> bool {
        self.outcome == Verdict::Attacked(ATTACKED_USER)
    }
}

/// Streaming accumulator of `Σ ‖y_{l,k}‖²` over subbands.
#[derive(Clone, Debug)]
pub struct PilotPowerAccumulator {
    sum: DMatrix<f64>,
    antennas: usize,
    subbands: usize,
}

impl PilotPowerAccumulator {
    pub fn new(aps: usize, users: usize, antennas: usize) -> Self {
        Self { sum: DMatrix::zeros(aps, users), antennas, subbands: 0 }
    }

    /// Adds the per-AP projections (M×K each) of one subband.
    pub fn add(&mut self, projections: &[DMatrix<C64>]) {
        for (l, y) in projections.iter().enumerate() {
            for k in 0..y.ncols() {
                self.sum[(l, k)] += y.column(k).norm_squared();
            }
        }
        self.subbands += 1;
    }

    /// `ξ_{l,k} = Σ_n ‖y_{l,k}(n)‖² / (M N_cb)`.
    pub fn finish(&self) -> DMatrix<f64> {
        &self.sum / (self.antennas * self.subbands.max(1)) as f64
    }
}

/// Sample average pilot power from per-subband projections.
pub fn sample_pilot_power(subbands: &[Vec<DMatrix<C64>>]) -> DMatrix<f64> {
    let first = &subbands[0];
    let mut acc = PilotPowerAccumulator::new(first.len(), first[0].ncols(), first[0].nrows());
    for s in subbands {
        acc.add(s);
    }
    acc.finish()
}

/// Ratios, flags and majority verdicts for given sample powers.
pub fn decide(xi: &DMatrix<f64>, ls: &LargeScaleState, config: &DetectionConfig) -> DetectionResult {
    let (l_n, k_n) = xi.shape();
    let t = ls.training;
    let upsilon = DMatrix::from_fn(l_n, k_n, |l, k| xi[(l, k)] / (t.tau_p * t.rho_u * ls.beta[(l, k)] + 1.0));
    let per_ap_flags = upsilon.map(|u| (u - 1.0).abs() > config.epsilon);
    let verdict: Vec<bool> = (0..k_n)
        .map(|k| {
            let frac = per_ap_flags.column(k).iter().filter(|&&f| f).count() as f64 / l_n as f64;
            frac > 0.5 && frac >= config.majority_fraction
        })
        .collect();
    let flagged: Vec<usize> = (0..k_n).filter(|&k| verdict[k]).collect();
    let outcome = match flagged.len() {
        0 => Verdict::Clean,
        1 => Verdict::Attacked(flagged[0]),
        _ => Verdict::Ambiguous(flagged),
    };
    DetectionResult { xi: xi.clone(), upsilon, per_ap_flags, verdict, outcome }
}

/// Simulates `n_cb` independent subbands of uplink training and returns `ξ`.
pub fn simulate_pilot_power<R: Rng + ?Sized>(ls: &LargeScaleState, n_cb: usize, rng: &mut R) -> Result<DMatrix<f64>> {
    let tau_p = ls.training.tau_p as usize;
    let pilots = PilotBook::new(tau_p, ls.users(), ATTACKED_USER)?;
    let mut acc = PilotPowerAccumulator::new(ls.aps(), ls.users(), ls.antennas);
    for _ in 0..n_cb {
        let real = draw_small_scale(ls, rng);
        let y = uplink_training(&real, &pilots, ls, rng);
        acc.add(&project_pilots(&y, &pilots));
    }
    Ok(acc.finish())
}

/// Full detection round on simulated pilots.
pub fn detect<R: Rng + ?Sized>(ls: &LargeScaleState, config: &DetectionConfig, rng: &mut R) -> Result<DetectionResult> {
    config.validate()?;
    let xi = simulate_pilot_power(ls, config.n_cb, rng)?;
    Ok(decide(&xi, ls, config))
}

/// One point of the detection-probability curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epsilon: f64,
    pub probability: f64,
    pub n_trials: usize,
}

/// Probability of flagging exactly the attacked user, per threshold.
///
/// Every trial is a fresh network drop; all thresholds share the same
/// statistics within a trial.
pub fn sweep_threshold(scenario: &Scenario, base: &DetectionConfig, epsilons: &[f64], n_trials: usize, seed: u64) -> Result<Vec<CurvePoint>> {
    scenario.validate()?;
    if epsilons.is_empty() {
        return Err(Error::InvalidDetectionConfig("epsilon grid is empty".into()));
    }
    for &e in epsilons {
        DetectionConfig { epsilon: e, ..*base }.validate()?;
    }
    let hits: Vec<Result<Vec<bool>>> = (0..n_trials)
        .into_par_iter()
        .map(|trial| {
            let idx = trial as u64;
            let geo = Geometry::generate(scenario, &mut substream(seed, Stream::Geometry, idx));
            let ls = draw_large_scale(scenario, &geo, &mut substream(seed, Stream::Shadowing, idx));
            let xi = simulate_pilot_power(&ls, base.n_cb, &mut substream(seed, Stream::Detection, idx))?;
            Ok(epsilons
                .iter()
                .map(|&e| decide(&xi, &ls, &DetectionConfig { epsilon: e, ..*base }).is_correct_under_attack())
                .collect())
        })
        .collect();
    let mut counts = vec![0usize; epsilons.len()];
    for h in hits {
        for (c, ok) in counts.iter_mut().zip(h?) {
            *c += ok as usize;
        }
    }
    Ok(epsilons
        .iter()
        .zip(counts)
        .map(|(&epsilon, c)| CurvePoint { epsilon, probability: c as f64 / n_trials.max(1) as f64, n_trials })
        .collect())
}
