//! Experiment specs, drop-level sweeps, the closed-form validation suite and CSV output.
//!
//! Drops are evaluated in parallel with per-drop seeds and gathered in drop
//! order, so the output does not depend on the number of threads.

use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detection::{sweep_threshold, CurvePoint, DetectionConfig};
use crate::error::{Error, Result};
use crate::mitigation::{crossover_sweep, CrossoverCurve};
use crate::pipeline::{evaluate_method, Method, PipelineConfig, PrecoderKind};
use crate::poweropt::TraceRecord;
use crate::precoding::build_grouping;
use crate::rng::{derive_seed, substream, Stream};
use crate::scenario::{draw_large_scale, Geometry, LargeScaleState, PhysicalScenario, Scenario};
use crate::secrecy::{monte_carlo, sinr_eav_closed, sinr_user_closed, PowerMatrix};
use crate::stats::MeanAccumulator;

/// Version tag written in the first column of every CSV.
pub const SCHEMA_VERSION: u32 = 1;

/// Parameter swept by an experiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepParam {
    #[serde(rename = "L")]
    Aps,
    #[serde(rename = "M")]
    Antennas,
    #[serde(rename = "K")]
    Users,
    #[serde(rename = "r", alias = "r_eav")]
    Radius,
    #[serde(rename = "N_E")]
    EavAntennas,
    #[serde(rename = "epsilon")]
    Epsilon,
    #[serde(rename = "tau_p_over_tau")]
    TauRatio,
}

impl SweepParam {
    pub fn name(&self) -> &'static str {
        match self {
            SweepParam::Aps => "L",
            SweepParam::Antennas => "M",
            SweepParam::Users => "K",
            SweepParam::Radius => "r",
            SweepParam::EavAntennas => "N_E",
            SweepParam::Epsilon => "epsilon",
            SweepParam::TauRatio => "tau_p_over_tau",
        }
    }

    fn is_scenario_param(&self) -> bool {
        !matches!(self, SweepParam::Epsilon | SweepParam::TauRatio)
    }
}

/// Swept parameter and its grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub param: SweepParam,
    pub values: Vec<f64>,
}

fn default_methods() -> Vec<Method> {
    vec!["PPZF-SEL-OPA".parse().expect("valid tag")]
}

/// A full experiment description as read from JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub scenario: PhysicalScenario,
    pub sweep: Sweep,
    pub n_drops: usize,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default)]
    pub output_path: Option<PathBuf>,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    #[serde(default)]
    pub detection: DetectionConfig,
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: ExperimentSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_drops == 0 {
            return Err(Error::InvalidSpec("n_drops must be at least 1".into()));
        }
        if self.sweep.values.is_empty() {
            return Err(Error::InvalidSpec("sweep grid is empty".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidSpec("no methods given".into()));
        }
        if self.sweep.param.is_scenario_param() {
            for &v in &self.sweep.values {
                self.scenario_at(v)?;
            }
        } else {
            self.scenario.to_scenario().validate()?;
        }
        Ok(())
    }

    /// Scenario with the swept parameter set to `value`.
    pub fn scenario_at(&self, value: f64) -> Result<Scenario> {
        let mut p = self.scenario.clone();
        let count = |v: f64| -> Result<usize> {
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::InvalidSpec(format!("{v} is not a positive integer")))
            }
        };
        match self.sweep.param {
            SweepParam::Aps => p.aps = count(value)?,
            SweepParam::Antennas => p.antennas = count(value)?,
            SweepParam::Users => p.users = count(value)?,
            SweepParam::Radius => p.r_eav = value,
            SweepParam::EavAntennas => p.eav_antennas = count(value)?,
            SweepParam::Epsilon | SweepParam::TauRatio => {}
        }
        let s = p.to_scenario();
        s.validate()?;
        Ok(s)
    }
}

/// One aggregated output row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub schema_version: u32,
    pub name: String,
    pub grid_param: String,
    pub value: f64,
    pub method: String,
    pub mean_sse: f64,
    pub stderr_sse: f64,
    pub mean_sinr1: f64,
    #[serde(rename = "mean_sinrE")]
    pub mean_sinr_e: f64,
    /// Drops that produced a feasible allocation.
    pub n_drops: usize,
    pub infeasible: usize,
    pub seed: u64,
}

/// Rows plus optimizer traces of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentOutput {
    pub rows: Vec<ResultRow>,
    /// `(grid value, drop, method, record)` for every optimizer iteration.
    pub traces: Vec<(f64, usize, String, TraceRecord)>,
}

impl ExperimentOutput {
    /// Fraction of method evaluations that were infeasible.
    pub fn infeasible_fraction(&self) -> f64 {
        let bad: usize = self.rows.iter().map(|r| r.infeasible).sum();
        let all: usize = self.rows.iter().map(|r| r.infeasible + r.n_drops).sum();
        bad as f64 / all.max(1) as f64
    }
}

/// Seed of drop `d`, shared by every grid value.
pub fn drop_seed(seed: u64, d: usize) -> u64 {
    derive_seed(seed, Stream::Drop, d as u64)
}

/// Geometry and large-scale state of drop `d`.
pub fn drop_state(scenario: &Scenario, seed: u64, d: usize) -> (Geometry, LargeScaleState) {
    let s = drop_seed(seed, d);
    let geo = Geometry::generate(scenario, &mut substream(s, Stream::Geometry, 0));
    let ls = draw_large_scale(scenario, &geo, &mut substream(s, Stream::Shadowing, 0));
    (geo, ls)
}

enum Eval {
    Ok { sse: f64, sinr1: f64, sinr_e: f64, trace: Vec<TraceRecord> },
    Infeasible,
}

/// Runs every method on every drop and grid value of a scenario sweep.
pub fn run_experiment(spec: &ExperimentSpec, seed: u64) -> Result<ExperimentOutput> {
    spec.validate()?;
    if !spec.sweep.param.is_scenario_param() {
        return Err(Error::InvalidSpec(format!("`run` cannot sweep {}", spec.sweep.param.name())));
    }
    let mut rows = Vec::new();
    let mut traces = Vec::new();
    for &value in &spec.sweep.values {
        let scenario = spec.scenario_at(value)?;
        if spec.methods.iter().any(|m| m.precoder == PrecoderKind::Zf) && scenario.antennas <= scenario.users {
            return Err(Error::InsufficientAntennas { m: scenario.antennas, k: scenario.users });
        }
        let per_drop: Vec<Result<Vec<Eval>>> = (0..spec.n_drops)
            .into_par_iter()
            .map(|d| {
                let (_, ls) = drop_state(&scenario, seed, d);
                spec.methods
                    .iter()
                    .map(|&m| match evaluate_method(&ls, m, &spec.pipeline, scenario.rho_max) {
                        Ok(o) => Ok(Eval::Ok {
                            sse: o.report.sse,
                            sinr1: o.report.sinr_users[0],
                            sinr_e: o.report.sinr_eav,
                            trace: o.sca.map(|s| s.trace).unwrap_or_default(),
                        }),
                        Err(Error::Infeasible(_) | Error::SolverFailure(_)) => Ok(Eval::Infeasible),
                        Err(e) => Err(e),
                    })
                    .collect()
            })
            .collect();
        let per_drop: Vec<Vec<Eval>> = per_drop.into_iter().collect::<Result<_>>()?;
        for (mi, m) in spec.methods.iter().enumerate() {
            let (mut sse, mut s1, mut se) = (MeanAccumulator::default(), MeanAccumulator::default(), MeanAccumulator::default());
            let mut infeasible = 0;
            for (d, evals) in per_drop.iter().enumerate() {
                match &evals[mi] {
                    Eval::Ok { sse: a, sinr1: b, sinr_e: c, trace } => {
                        sse.push(*a);
                        s1.push(*b);
                        se.push(*c);
                        traces.extend(trace.iter().map(|t| (value, d, m.to_string(), *t)));
                    }
                    Eval::Infeasible => infeasible += 1,
                }
            }
            rows.push(ResultRow {
                schema_version: SCHEMA_VERSION,
                name: spec.name.clone(),
                grid_param: spec.sweep.param.name().into(),
                value,
                method: m.to_string(),
                mean_sse: sse.mean(),
                stderr_sse: sse.stderr(),
                mean_sinr1: s1.mean(),
                mean_sinr_e: se.mean(),
                n_drops: sse.count(),
                infeasible,
                seed,
            });
        }
    }
    Ok(ExperimentOutput { rows, traces })
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    Ok(csv::Writer::from_path(path)?)
}

/// Serializes any row type to CSV text with a header.
pub fn to_csv_string<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// Writes rows with a header to `path`.
pub fn write_csv<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Optimizer trace row.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceRow {
    pub schema_version: u32,
    pub value: f64,
    pub drop: usize,
    pub method: String,
    pub iteration: usize,
    pub objective: f64,
    pub max_violation: f64,
}

/// Flattens optimizer traces into CSV rows.
pub fn trace_rows(out: &ExperimentOutput) -> Vec<TraceRow> {
    out.traces
        .iter()
        .map(|(value, drop, method, t)| TraceRow {
            schema_version: SCHEMA_VERSION,
            value: *value,
            drop: *drop,
            method: method.clone(),
            iteration: t.iteration,
            objective: t.objective,
            max_violation: t.max_violation,
        })
        .collect()
}

/// Detection curve row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionRow {
    pub schema_version: u32,
    pub name: String,
    pub epsilon: f64,
    pub detection_probability: f64,
    pub n_trials: usize,
    pub seed: u64,
}

/// Threshold sweep driven by an experiment spec; `n_drops` counts trials.
pub fn run_detection(spec: &ExperimentSpec, seed: u64) -> Result<Vec<DetectionRow>> {
    spec.validate()?;
    if spec.sweep.param != SweepParam::Epsilon {
        return Err(Error::InvalidSpec("`detect` needs an epsilon sweep".into()));
    }
    let scenario = spec.scenario.to_scenario();
    let curve: Vec<CurvePoint> = sweep_threshold(&scenario, &spec.detection, &spec.sweep.values, spec.n_drops, seed)?;
    Ok(curve
        .into_iter()
        .map(|p| DetectionRow {
            schema_version: SCHEMA_VERSION,
            name: spec.name.clone(),
            epsilon: p.epsilon,
            detection_probability: p.probability,
            n_trials: p.n_trials,
            seed,
        })
        .collect())
}

/// Crossover curve row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MitigationRow {
    pub schema_version: u32,
    pub name: String,
    pub tau_p_over_tau: f64,
    pub throughput_baseline: f64,
    pub throughput_retx: f64,
    pub method: String,
    pub n_drops: usize,
    pub seed: u64,
}

/// Re-transmission sweep driven by an experiment spec using its first method.
pub fn run_mitigation(spec: &ExperimentSpec, seed: u64) -> Result<(Vec<MitigationRow>, CrossoverCurve)> {
    spec.validate()?;
    if spec.sweep.param != SweepParam::TauRatio {
        return Err(Error::InvalidSpec("`mitigate` needs a tau_p_over_tau sweep".into()));
    }
    let scenario = spec.scenario.to_scenario();
    let method = spec.methods[0];
    let curve = crossover_sweep(&scenario, method, &spec.pipeline, &spec.detection, &spec.sweep.values, spec.n_drops, seed)?;
    let n = curve.n_drops - curve.infeasible;
    let rows = curve
        .points
        .iter()
        .map(|p| MitigationRow {
            schema_version: SCHEMA_VERSION,
            name: spec.name.clone(),
            tau_p_over_tau: p.tau_p_over_tau,
            throughput_baseline: p.throughput_baseline,
            throughput_retx: p.throughput_retx,
            method: method.to_string(),
            n_drops: n,
            seed,
        })
        .collect();
    Ok((rows, curve))
}

fn default_instances() -> usize {
    20
}

fn default_trials() -> usize {
    100_000
}

fn default_tol_users() -> f64 {
    0.03
}

fn default_tol_eav() -> f64 {
    0.05
}

/// Settings of the closed-form validation suite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationSpec {
    #[serde(default = "default_instances")]
    pub instances: usize,
    #[serde(default = "default_trials")]
    pub n_trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_tol_users")]
    pub tol_users: f64,
    #[serde(default = "default_tol_eav")]
    pub tol_eav: f64,
    /// Relative error injected into the estimation variances used by the closed forms.
    #[serde(default)]
    pub corrupt_gamma: f64,
    /// Use all-zero powers.
    #[serde(default)]
    pub zero_power: bool,
}

impl Default for ValidationSpec {
    fn default() -> Self {
        Self {
            instances: default_instances(),
            n_trials: default_trials(),
            seed: 0,
            tol_users: default_tol_users(),
            tol_eav: default_tol_eav(),
            corrupt_gamma: 0.0,
            zero_power: false,
        }
    }
}

/// Deviation of one validation instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationRow {
    pub schema_version: u32,
    pub instance: usize,
    #[serde(rename = "L")]
    pub aps: usize,
    #[serde(rename = "M")]
    pub antennas: usize,
    #[serde(rename = "K")]
    pub users: usize,
    pub max_dev_users: f64,
    pub dev_eav: f64,
    pub passed: bool,
}

/// Outcome of the validation suite.
#[derive(Clone, Debug, PartialEq)]
pub struct ValidationReport {
    pub rows: Vec<ValidationRow>,
    pub max_dev_users: f64,
    pub max_dev_eav: f64,
    pub passed: bool,
}

fn rel_dev(mc: f64, cf: f64) -> f64 {
    if cf == 0.0 && mc == 0.0 {
        0.0
    } else {
        (mc - cf).abs() / cf.abs().max(f64::MIN_POSITIVE)
    }
}

/// Small random instance `i` of the validation suite: L in 2..=4, M in 5..=6, K in 1..=3.
pub fn validation_instance(seed: u64, i: usize) -> (Scenario, LargeScaleState, PowerMatrix) {
    let mut rng = substream(seed, Stream::Drop, i as u64);
    let l = rng.random_range(2..=4);
    let m = rng.random_range(5..=6);
    let k = rng.random_range(1..=3);
    let mut sc = Scenario::with_defaults(l, m, k, 30.0, seed);
    sc.area_side = 400.0;
    let geo = Geometry::generate(&sc, &mut rng);
    let ls = draw_large_scale(&sc, &geo, &mut rng);
    let u = DMatrix::from_fn(l, k, |_, _| rng.random_range(0.1..1.0));
    let rho = DMatrix::from_fn(l, k, |a, b| sc.rho_max * u[(a, b)] / u.row(a).sum());
    (sc, ls, PowerMatrix { rho })
}

/// Runs the Monte Carlo oracle next to the closed forms on random small instances.
pub fn validate_closed_forms(spec: &ValidationSpec) -> Result<ValidationReport> {
    let mut rows = Vec::with_capacity(spec.instances);
    for i in 0..spec.instances {
        let (sc, ls, mut power) = validation_instance(spec.seed, i);
        if spec.zero_power {
            power.rho.fill(0.0);
        }
        let grouping = build_grouping(&ls, 0.5);
        let mut model = ls.clone();
        model.gamma *= 1.0 + spec.corrupt_gamma;
        model.gamma_e *= 1.0 + spec.corrupt_gamma;
        let cf_users = sinr_user_closed(&model, &grouping, &power);
        let cf_eav = sinr_eav_closed(&model, &grouping, &power);
        let mc = monte_carlo(&ls, &grouping, &power, spec.n_trials, derive_seed(spec.seed, Stream::Trials, i as u64))?;
        let max_dev_users = cf_users.iter().zip(&mc.sinr_users).map(|(c, m)| rel_dev(*m, *c)).fold(0.0, f64::max);
        let dev_eav = rel_dev(mc.sinr_eav[0], cf_eav);
        rows.push(ValidationRow {
            schema_version: SCHEMA_VERSION,
            instance: i,
            aps: sc.aps,
            antennas: sc.antennas,
            users: sc.users,
            max_dev_users,
            dev_eav,
            passed: max_dev_users <= spec.tol_users && dev_eav <= spec.tol_eav,
        });
    }
    let max_dev_users = rows.iter().map(|r| r.max_dev_users).fold(0.0, f64::max);
    let max_dev_eav = rows.iter().map(|r| r.dev_eav).fold(0.0, f64::max);
    let passed = rows.iter().all(|r| r.passed);
    Ok(ValidationReport { rows, max_dev_users, max_dev_eav, passed })
}

/// Writes a short human-readable summary line.
pub fn write_summary<W: Write>(out: &mut W, report: &ValidationReport) -> std::io::Result<()> {
    writeln!(
        out,
        "instances={} max_dev_users={:.4} max_dev_eav={:.4} passed={}",
        report.rows.len(),
        report.max_dev_users,
        report.max_dev_eav,
        report.passed
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> ExperimentSpec {
        let json = r#"{
            "name": "t",
            "scenario": {"L": 6, "M": 4, "K": 3, "r_eav": 50.0, "seed": 5},
            "sweep": {"param": "L", "values": [6, 8]},
            "n_drops": 3,
            "methods": ["PPZF-ALL-EPA", "MRT-SEL-EPA"]
        }"#;
        ExperimentSpec::from_json(json).unwrap()
    }

    #[test]
    fn spec_parsing_and_sweep() {
        let s = spec();
        assert_eq!(s.scenario_at(8.0).unwrap().aps, 8);
        assert!(s.scenario_at(2.5).is_err());
        let bad = r#"{"name":"t","scenario":{"L":6,"M":4,"K":3,"r_eav":50.0},"sweep":{"param":"L","values":[]},"n_drops":1}"#;
        assert!(ExperimentSpec::from_json(bad).is_err());
        let unknown = r#"{"name":"t","scenario":{"L":6,"M":4,"K":3,"r_eav":50.0,"zzz":1},"sweep":{"param":"L","values":[6]},"n_drops":1}"#;
        assert!(ExperimentSpec::from_json(unknown).is_err());
    }

    #[test]
    fn run_produces_one_row_per_value_and_method() {
        let s = spec();
        let out = run_experiment(&s, 5).unwrap();
        assert_eq!(out.rows.len(), 4);
        let text = to_csv_string(&out.rows).unwrap();
        assert!(text.starts_with("schema_version,name,grid_param,value,method,mean_sse,stderr_sse,mean_sinr1,mean_sinrE,n_drops,infeasible,seed"));
        assert_eq!(text, to_csv_string(&run_experiment(&s, 5).unwrap().rows).unwrap());
    }

    #[test]
    fn zero_power_validation_is_exact() {
        let r = validate_closed_forms(&ValidationSpec { instances: 2, n_trials: 50, zero_power: true, ..Default::default() }).unwrap();
        assert!(r.passed);
        assert_eq!(r.max_dev_users, 0.0);
        assert_eq!(r.max_dev_eav, 0.0);
    }
}
