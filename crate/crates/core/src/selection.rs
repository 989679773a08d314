//! Greedy large-scale AP selection for the attacked user.
//!
//! APs are visited by decreasing ratio `β_{l,1} / β_{l,E}` and admitted to the
//! serving set only when they strictly increase the closed-form secrecy rate.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::precoding::GroupingPlan;
use crate::scenario::{LargeScaleState, ATTACKED_USER};
use crate::secrecy::{secrecy_report, PowerMatrix};

/// Maps a serving mask for user 1 to a power allocation.
pub trait PowerPolicy {
    fn allocate(&self, serving: &[bool]) -> PowerMatrix;
}

/// Equal allocation inside the serving set; outside it user 1 gets nothing
/// and its share is spread over the remaining users.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EqualPowerPolicy {
    pub rho_max: f64,
    pub users: usize,
}

impl PowerPolicy for EqualPowerPolicy {
    fn allocate(&self, serving: &[bool]) -> PowerMatrix {
        let k_n = self.users;
        let mut rho = DMatrix::from_element(serving.len(), k_n, self.rho_max / k_n as f64);
        for (l, &on) in serving.iter().enumerate() {
            if !on {
                let share = if k_n > 1 { self.rho_max / (k_n - 1) as f64 } else { 0.0 };
                rho.row_mut(l).fill(share);
                rho[(l, ATTACKED_USER)] = 0.0;
            }
        }
        PowerMatrix { rho }
    }
}

/// Outcome of the greedy search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    /// APs in order of consideration.
    pub ordered_aps: Vec<usize>,
    /// `β_{l,1} / β_{l,E}` per AP, indexed by AP.
    pub zeta: Vec<f64>,
    /// Admitted APs in order of admission.
    pub chosen: Vec<usize>,
    /// Secrecy rate after each admission.
    pub sse_trace: Vec<f64>,
}

impl SelectionResult {
    /// Secrecy rate of the final set (zero when nothing was admitted).
    pub fn final_sse(&self) -> f64 {
        self.sse_trace.last().copied().unwrap_or(0.0)
    }

    /// True when no AP yields a positive secrecy rate.
    pub fn is_empty(&self) -> bool {
        self.chosen.is_empty()
    }

    /// Serving mask over all `aps`.
    pub fn mask(&self, aps: usize) -> Vec<bool> {
        let mut m = vec![false; aps];
        for &l in &self.chosen {
            m[l] = true;
        }
        m
    }
}

/// Secrecy rate when user 1 is served by the masked APs.
pub fn subset_sse(ls: &LargeScaleState, grouping: &GroupingPlan, policy: &dyn PowerPolicy, serving: &[bool]) -> f64 {
    if !serving.iter().any(|&b| b) {
        return 0.0;
    }
    let power = policy.allocate(serving);
    secrecy_report(ls, grouping, &power, ls.eav_antennas()).sse
}

/// Greedy AP selection.
pub fn greedy_select(ls: &LargeScaleState, grouping: &GroupingPlan, policy: &dyn PowerPolicy) -> Result<SelectionResult> {
    let l_n = ls.aps();
    if ls.beta_e.iter().any(|&b| !(b > 0.0)) {
        return Err(Error::NonPositiveEavesdropperGain);
    }
    let zeta: Vec<f64> = (0..l_n).map(|l| ls.beta[(l, ATTACKED_USER)] / ls.beta_e[l]).collect();
    let mut ordered_aps: Vec<usize> = (0..l_n).collect();
    ordered_aps.sort_by(|&a, &b| zeta[b].total_cmp(&zeta[a]).then(a.cmp(&b)));
    let mut mask = vec![false; l_n];
    let mut best = 0.0;
    let mut chosen = Vec::new();
    let mut sse_trace = Vec::new();
    for &l in &ordered_aps {
        mask[l] = true;
        let r = subset_sse(ls, grouping, policy, &mask);
        if r > best {
            best = r;
            chosen.push(l);
            sse_trace.push(r);
        } else {
            mask[l] = false;
        }
    }
    Ok(SelectionResult { ordered_aps, zeta, chosen, sse_trace })
}
