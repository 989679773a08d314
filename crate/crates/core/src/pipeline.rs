//! Per-drop method pipeline: grouping, AP selection and power allocation.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poweropt::{assemble_problem, optimize, ScaState, DEFAULT_EPS_OBJ, DEFAULT_MAX_ITER};
use crate::precoding::{build_grouping, GroupingPlan};
use crate::scenario::{LargeScaleState, ATTACKED_USER};
use crate::secrecy::{secrecy_report, sinr_user_closed, PowerMatrix, SecrecyReport};
use crate::selection::{greedy_select, EqualPowerPolicy, PowerPolicy};

/// Precoding family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PrecoderKind {
    Ppzf,
    Zf,
    Mrt,
}

/// APs allowed to serve the attacked user.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ApSet {
    All,
    Greedy,
}

/// Power allocation scheme.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PowerScheme {
    Epa,
    Opa,
}

/// A complete method, written as `PRECODER-APSET-POWER`, e.g. `PPZF-SEL-OPA`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Method {
    pub precoder: PrecoderKind,
    pub aps: ApSet,
    pub power: PowerScheme,
}

impl Method {
    pub const fn new(precoder: PrecoderKind, aps: ApSet, power: PowerScheme) -> Self {
        Self { precoder, aps, power }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = match self.precoder {
            PrecoderKind::Ppzf => "PPZF",
            PrecoderKind::Zf => "ZF",
            PrecoderKind::Mrt => "MRT",
        };
        let a = match self.aps {
            ApSet::All => "ALL",
            ApSet::Greedy => "SEL",
        };
        let w = match self.power {
            PowerScheme::Epa => "EPA",
            PowerScheme::Opa => "OPA",
        };
        write!(f, "{p}-{a}-{w}")
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<String> = s.split(['-', '/']).map(str::to_ascii_uppercase).collect();
        let bad = || Error::InvalidSpec(format!("unknown method `{s}`"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let precoder = match parts[0].as_str() {
            "PPZF" => PrecoderKind::Ppzf,
            "ZF" => PrecoderKind::Zf,
            "MRT" => PrecoderKind::Mrt,
            _ => return Err(bad()),
        };
        let aps = match parts[1].as_str() {
            "ALL" => ApSet::All,
            "SEL" | "GREEDY" => ApSet::Greedy,
            _ => return Err(bad()),
        };
        let power = match parts[2].as_str() {
            "EPA" => PowerScheme::Epa,
            "OPA" => PowerScheme::Opa,
            _ => return Err(bad()),
        };
        Ok(Self { precoder, aps, power })
    }
}

impl TryFrom<String> for Method {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.to_string()
    }
}

fn default_quantile() -> f64 {
    0.5
}

fn default_theta_e() -> f64 {
    0.1
}

fn default_qos_fraction() -> f64 {
    0.5
}

fn default_eps_obj() -> f64 {
    DEFAULT_EPS_OBJ
}

fn default_max_iter() -> usize {
    DEFAULT_MAX_ITER
}

/// Tuning shared by all methods.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Percentile above which a user is strong at an AP.
    #[serde(default = "default_quantile")]
    pub grouping_quantile: f64,
    /// Cap on the combined eavesdropper SINR under optimized power (linear).
    #[serde(default = "default_theta_e")]
    pub theta_e: f64,
    /// QoS floor of users 2..K as a fraction of their equal-allocation SINR.
    #[serde(default = "default_qos_fraction")]
    pub qos_fraction: f64,
    #[serde(default = "default_eps_obj")]
    pub eps_obj: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            grouping_quantile: default_quantile(),
            theta_e: default_theta_e(),
            qos_fraction: default_qos_fraction(),
            eps_obj: default_eps_obj(),
            max_iter: default_max_iter(),
        }
    }
}

/// Result of one method on one drop.
#[derive(Clone, Debug)]
pub struct MethodOutcome {
    pub report: SecrecyReport,
    pub power: PowerMatrix,
    pub grouping: GroupingPlan,
    pub serving: Vec<bool>,
    pub sca: Option<ScaState>,
}

/// Grouping used by a precoder family.
pub fn grouping_for(ls: &LargeScaleState, precoder: PrecoderKind, quantile: f64) -> Result<GroupingPlan> {
    match precoder {
        PrecoderKind::Ppzf => Ok(build_grouping(ls, quantile)),
        PrecoderKind::Zf => GroupingPlan::all_strong(ls.aps(), ls.users(), ls.antennas),
        PrecoderKind::Mrt => Ok(GroupingPlan::all_weak(ls.aps(), ls.users(), ls.antennas)),
    }
}

/// Applies a method to one drop and evaluates the closed-form secrecy report.
pub fn evaluate_method(ls: &LargeScaleState, method: Method, config: &PipelineConfig, rho_max: f64) -> Result<MethodOutcome> {
    let grouping = grouping_for(ls, method.precoder, config.grouping_quantile)?;
    let policy = EqualPowerPolicy { rho_max, users: ls.users() };
    let serving = match method.aps {
        ApSet::All => vec![true; ls.aps()],
        ApSet::Greedy => greedy_select(ls, &grouping, &policy)?.mask(ls.aps()),
    };
    let epa = policy.allocate(&serving);
    let (power, sca) = match method.power {
        PowerScheme::Epa => (epa, None),
        PowerScheme::Opa if !serving.iter().any(|&s| s) => (epa, None),
        PowerScheme::Opa => {
            let base = sinr_user_closed(ls, &grouping, &epa);
            let theta: Vec<f64> = base
                .iter()
                .enumerate()
                .map(|(k, s)| if k == ATTACKED_USER { 0.0 } else { config.qos_fraction * s })
                .collect();
            let problem = assemble_problem(ls, &grouping, &theta, config.theta_e, rho_max).with_serving(serving.clone());
            let state = optimize(&problem, config.eps_obj, config.max_iter)?;
            (PowerMatrix::from_psi(&state.psi), Some(state))
        }
    };
    let report = secrecy_report(ls, &grouping, &power, ls.eav_antennas());
    Ok(MethodOutcome { report, power, grouping, serving, sca })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_tags_round_trip() {
        for s in ["PPZF-SEL-OPA", "ZF-ALL-EPA", "MRT-SEL-EPA"] {
            let m: Method = s.parse().unwrap();
            assert_eq!(m.to_string(), s);
        }
        assert_eq!("ppzf/greedy/opa".parse::<Method>().unwrap().to_string(), "PPZF-SEL-OPA");
        assert!("PPZF-SEL".parse::<Method>().is_err());
        let json = serde_json::to_string(&Method::new(PrecoderKind::Mrt, ApSet::All, PowerScheme::Opa)).unwrap();
        assert_eq!(json, "\"MRT-ALL-OPA\"");
    }
}
