//! Pilot re-transmission countermeasure and secrecy throughput with training overhead.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detection::{detect, DetectionConfig, Verdict};
use crate::error::{Error, Result};
use crate::pipeline::{evaluate_method, Method, PipelineConfig};
use crate::precoding::GroupingPlan;
use crate::rng::{substream, Stream};
use crate::scenario::{draw_large_scale, Geometry, LargeScaleState, Scenario, ATTACKED_USER};
use crate::secrecy::{secrecy_rate, sinr_eav_mrc, sinr_user_closed, PowerMatrix};
use crate::stats::MeanAccumulator;

/// `B (1 - n_pr τ_p / τ) R`, clamped at zero.
pub fn throughput(rate: f64, n_pr: usize, tau_p: f64, tau: f64, bandwidth: f64) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::NonPositiveCoherence);
    }
    Ok(bandwidth * (1.0 - n_pr as f64 * tau_p / tau).max(0.0) * rate)
}

/// Training rounds and large-scale state after the protocol reacts to a verdict.
pub fn post_protocol_state(ls: &LargeScaleState, verdict: &Verdict) -> (usize, LargeScaleState) {
    match verdict {
        Verdict::Attacked(k) if *k == ATTACKED_USER => (2, ls.without_attack()),
        Verdict::Attacked(_) => (2, ls.clone()),
        Verdict::Clean | Verdict::Ambiguous(_) => (1, ls.clone()),
    }
}

/// Rates and throughputs after the protocol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetransmissionOutcome {
    pub n_pr: usize,
    /// User 1's estimation variance at every AP after the protocol.
    pub gamma_pr: Vec<f64>,
    pub verdict: Verdict,
    pub sinr_user1: f64,
    pub sinr_eav: f64,
    pub rate_user1: f64,
    pub rate_eav: f64,
    pub throughput_user1: f64,
    pub throughput_eav: f64,
    /// `B (1 - n_pr τ_p / τ) [R_1 - R_E]⁺`.
    pub secrecy_throughput: f64,
}

/// Evaluates the protocol outcome for a given verdict with fixed powers.
pub fn evaluate_retransmission(scenario: &Scenario, ls: &LargeScaleState, grouping: &GroupingPlan, power: &PowerMatrix, verdict: Verdict) -> Result<RetransmissionOutcome> {
    let (n_pr, state) = post_protocol_state(ls, &verdict);
    let sinr_user1 = sinr_user_closed(&state, grouping, power)[ATTACKED_USER];
    let sinr_eav = sinr_eav_mrc(&state, grouping, power, state.eav_antennas());
    let rate_user1 = (1.0 + sinr_user1).log2();
    let rate_eav = (1.0 + sinr_eav).log2();
    let (tp, tau, b) = (scenario.tau_p as f64, scenario.tau as f64, scenario.bandwidth_hz);
    Ok(RetransmissionOutcome {
        n_pr,
        gamma_pr: state.gamma.column(ATTACKED_USER).iter().copied().collect(),
        verdict,
        sinr_user1,
        sinr_eav,
        rate_user1,
        rate_eav,
        throughput_user1: throughput(rate_user1, n_pr, tp, tau, b)?,
        throughput_eav: throughput(rate_eav, n_pr, tp, tau, b)?,
        secrecy_throughput: throughput(secrecy_rate(sinr_user1, sinr_eav), n_pr, tp, tau, b)?,
    })
}

/// Runs detection and the re-transmission protocol with fixed powers.
pub fn run_retransmission_protocol<R: Rng + ?Sized>(
    scenario: &Scenario,
    ls: &LargeScaleState,
    grouping: &GroupingPlan,
    power: &PowerMatrix,
    detection: &DetectionConfig,
    rng: &mut R,
) -> Result<RetransmissionOutcome> {
    let verdict = if ls.training.attacked() { detect(ls, detection, rng)?.outcome } else { Verdict::Clean };
    evaluate_retransmission(scenario, ls, grouping, power, verdict)
}

/// One abscissa of the crossover curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossoverPoint {
    pub tau_p_over_tau: f64,
    pub throughput_baseline: f64,
    pub throughput_retx: f64,
}

/// Mean secrecy throughput with and without re-transmission.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossoverCurve {
    pub points: Vec<CrossoverPoint>,
    /// Interpolated `τ_p / τ` where re-transmission stops paying off.
    pub crossover: Option<f64>,
    pub n_drops: usize,
    pub infeasible: usize,
    /// Fraction of drops in which exactly the attacked user was flagged.
    pub detection_rate: f64,
}

struct DropRates {
    baseline: f64,
    retx: f64,
    n_pr: usize,
    detected: bool,
}

/// Sweeps `τ_p / τ`, re-running the method on the post-protocol state of every drop.
pub fn crossover_sweep(
    scenario: &Scenario,
    method: Method,
    pipeline: &PipelineConfig,
    detection: &DetectionConfig,
    grid: &[f64],
    n_drops: usize,
    seed: u64,
) -> Result<CrossoverCurve> {
    scenario.validate()?;
    detection.validate()?;
    if grid.is_empty() || grid.iter().any(|&x| !(x > 0.0 && x <= 0.5)) {
        return Err(Error::InvalidSpec("tau_p/tau grid must be nonempty and inside (0, 0.5]".into()));
    }
    let drops: Vec<Result<Option<DropRates>>> = (0..n_drops)
        .into_par_iter()
        .map(|d| {
            let idx = d as u64;
            let geo = Geometry::generate(scenario, &mut substream(seed, Stream::Geometry, idx));
            let ls = draw_large_scale(scenario, &geo, &mut substream(seed, Stream::Shadowing, idx));
            let base = match evaluate_method(&ls, method, pipeline, scenario.rho_max) {
                Ok(o) => o.report.sse,
                Err(Error::Infeasible(_) | Error::SolverFailure(_)) => return Ok(None),
                Err(e) => return Err(e),
            };
            let verdict = if ls.training.attacked() {
                detect(&ls, detection, &mut substream(seed, Stream::Detection, idx))?.outcome
            } else {
                Verdict::Clean
            };
            let detected = verdict == Verdict::Attacked(ATTACKED_USER);
            let (n_pr, state) = post_protocol_state(&ls, &verdict);
            let retx = match evaluate_method(&state, method, pipeline, scenario.rho_max) {
                Ok(o) => o.report.sse,
                Err(Error::Infeasible(_) | Error::SolverFailure(_)) => return Ok(None),
                Err(e) => return Err(e),
            };
            Ok(Some(DropRates { baseline: base, retx, n_pr, detected }))
        })
        .collect();
    let mut rates = Vec::with_capacity(n_drops);
    let mut infeasible = 0;
    for d in drops {
        match d? {
            Some(r) => rates.push(r),
            None => infeasible += 1,
        }
    }
    let b = scenario.bandwidth_hz;
    let points: Vec<CrossoverPoint> = grid
        .iter()
        .map(|&x| {
            let mut base = MeanAccumulator::default();
            let mut retx = MeanAccumulator::default();
            for r in &rates {
                base.push(b * (1.0 - x).max(0.0) * r.baseline);
                retx.push(b * (1.0 - r.n_pr as f64 * x).max(0.0) * r.retx);
            }
            CrossoverPoint { tau_p_over_tau: x, throughput_baseline: base.mean(), throughput_retx: retx.mean() }
        })
        .collect();
    let detection_rate = rates.iter().filter(|r| r.detected).count() as f64 / rates.len().max(1) as f64;
    Ok(CrossoverCurve { crossover: find_crossover(&points), points, n_drops, infeasible, detection_rate })
}

/// First abscissa where re-transmission falls from above to at-or-below the baseline.
pub fn find_crossover(points: &[CrossoverPoint]) -> Option<f64> {
    let diff = |p: &CrossoverPoint| p.throughput_retx - p.throughput_baseline;
    points.windows(2).find_map(|w| {
        let (d0, d1) = (diff(&w[0]), diff(&w[1]));
        if d0 > 0.0 && d1 <= 0.0 {
            let t = d0 / (d0 - d1);
            Some(w[0].tau_p_over_tau + t * (w[1].tau_p_over_tau - w[0].tau_p_over_tau))
        } else {
            None
        }
    })
}
