//! Command-line front end: scenario templates, parameter sweeps and the oracle suite.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use cfsec::detection::DetectionConfig;
use cfsec::experiment::{
    run_detection, run_experiment, run_mitigation, to_csv_string, trace_rows, validate_closed_forms, write_summary, ExperimentSpec, Sweep,
    SweepParam, ValidationSpec,
};
use cfsec::pipeline::PipelineConfig;
use cfsec::scenario::PhysicalScenario;
use clap::{Args, Parser, Subcommand, ValueEnum};

const EXIT_VALIDATION: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;

#[derive(Parser)]
#[command(name = "cfsec", version, about = "Secure cell-free massive MIMO experiments under pilot spoofing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Emit a template experiment spec as JSON.
    Gen {
        #[arg(long, value_enum, default_value_t = Preset::Run)]
        preset: Preset,
        #[command(flatten)]
        common: Common,
    },
    /// Run a scenario sweep and write one CSV row per grid value and method.
    Run(Common),
    /// Compare closed-form SINRs with the Monte Carlo oracle.
    Validate(Common),
    /// Sweep the detection threshold.
    Detect(Common),
    /// Sweep tau_p/tau for the pilot re-transmission protocol.
    Mitigate(Common),
}

#[derive(Args)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed; defaults to the seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Output path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write per-iteration optimizer traces.
    #[arg(long)]
    trace: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// SSE versus the number of APs.
    Run,
    /// Detection probability versus threshold.
    Detect,
    /// Secrecy throughput versus pilot overhead.
    Mitigate,
}

/// Failures mapped to exit codes.
enum Outcome {
    Ok,
    ValidationFailed,
    Infeasible,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::ValidationFailed) => ExitCode::from(EXIT_VALIDATION),
        Ok(Outcome::Infeasible) => ExitCode::from(EXIT_INFEASIBLE),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.chain().any(is_input_error) {
                ExitCode::from(EXIT_VALIDATION)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn is_input_error(e: &(dyn std::error::Error + 'static)) -> bool {
    use cfsec::Error as E;
    matches!(
        e.downcast_ref::<E>(),
        Some(
            E::InvalidScenario(_)
                | E::InvalidSpec(_)
                | E::InvalidDetectionConfig(_)
                | E::InsufficientAntennas { .. }
                | E::Json(_)
                | E::NonPositiveCoherence
        )
    )
}

fn dispatch(command: Command) -> Result<Outcome> {
    let common = match &command {
        Command::Gen { common, .. } | Command::Run(common) | Command::Validate(common) | Command::Detect(common) | Command::Mitigate(common) => common,
    };
    rayon::ThreadPoolBuilder::new().num_threads(common.threads).build_global().context("thread pool")?;
    match command {
        Command::Gen { preset, common } => gen(preset, &common),
        Command::Run(c) => run(&c),
        Command::Validate(c) => validate(&c),
        Command::Detect(c) => detect(&c),
        Command::Mitigate(c) => mitigate(&c),
    }
}

fn read_spec(common: &Common) -> Result<ExperimentSpec> {
    let path = common.config.as_ref().context("--config is required")?;
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(ExperimentSpec::from_json(&text)?)
}

fn output_target(common: &Common, spec: Option<&ExperimentSpec>) -> Option<PathBuf> {
    common.out.clone().or_else(|| spec.and_then(|s| s.output_path.clone()))
}

fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            fs::write(p, text).with_context(|| format!("writing {}", p.display()))
        }
        None => io::stdout().write_all(text.as_bytes()).context("writing stdout"),
    }
}

fn trace_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "out".into());
    out.with_file_name(format!("{stem}_trace.csv"))
}

fn gen(preset: Preset, common: &Common) -> Result<Outcome> {
    let seed = common.seed.unwrap_or(1);
    let spec = match preset {
        Preset::Run => ExperimentSpec {
            name: "sse_vs_l".into(),
            scenario: PhysicalScenario::defaults(30, 4, 10, 100.0, seed),
            sweep: Sweep { param: SweepParam::Aps, values: vec![10.0, 20.0, 30.0, 40.0, 50.0, 60.0] },
            n_drops: 200,
            methods: ["PPZF-ALL-EPA", "PPZF-SEL-EPA", "PPZF-SEL-OPA", "MRT-ALL-EPA", "MRT-SEL-EPA", "MRT-SEL-OPA"]
                .iter()
                .map(|m| m.parse())
                .collect::<cfsec::Result<_>>()?,
            output_path: None,
            pipeline: PipelineConfig::default(),
            detection: DetectionConfig::default(),
        },
        Preset::Detect => ExperimentSpec {
            name: "detection".into(),
            scenario: PhysicalScenario::defaults(10, 2, 4, 100.0, seed),
            sweep: Sweep { param: SweepParam::Epsilon, values: (3..=12).map(|i| i as f64 / 100.0).collect() },
            n_drops: 1000,
            methods: vec!["PPZF-ALL-EPA".parse()?],
            output_path: None,
            pipeline: PipelineConfig::default(),
            detection: DetectionConfig::default(),
        },
        Preset::Mitigate => ExperimentSpec {
            name: "retransmission".into(),
            scenario: PhysicalScenario::defaults(50, 4, 10, 200.0, seed),
            sweep: Sweep { param: SweepParam::TauRatio, values: (1..=9).map(|i| i as f64 * 0.05).collect() },
            n_drops: 100,
            methods: vec!["PPZF-SEL-OPA".parse()?],
            output_path: None,
            pipeline: PipelineConfig::default(),
            detection: DetectionConfig::default(),
        },
    };
    let text = serde_json::to_string_pretty(&spec)? + "\n";
    emit(common.out.as_deref(), &text)?;
    Ok(Outcome::Ok)
}

fn run(common: &Common) -> Result<Outcome> {
    let spec = read_spec(common)?;
    let seed = common.seed.unwrap_or(spec.scenario.seed);
    let out = run_experiment(&spec, seed)?;
    let target = output_target(common, Some(&spec));
    emit(target.as_deref(), &to_csv_string(&out.rows)?)?;
    if common.trace {
        let text = to_csv_string(&trace_rows(&out))?;
        match &target {
            Some(p) => emit(Some(&trace_path(p)), &text)?,
            None => io::stderr().write_all(text.as_bytes())?,
        }
    }
    let frac = out.infeasible_fraction();
    if frac > 0.5 {
        eprintln!("{:.0}% of drops were infeasible", 100.0 * frac);
        return Ok(Outcome::Infeasible);
    }
    Ok(Outcome::Ok)
}

fn validate(common: &Common) -> Result<Outcome> {
    let mut spec = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str::<ValidationSpec>(&text).map_err(cfsec::Error::from)?
        }
        None => ValidationSpec::default(),
    };
    if let Some(s) = common.seed {
        spec.seed = s;
    }
    let report = validate_closed_forms(&spec)?;
    emit(common.out.as_deref(), &to_csv_string(&report.rows)?)?;
    write_summary(&mut io::stderr(), &report)?;
    Ok(if report.passed { Outcome::Ok } else { Outcome::ValidationFailed })
}

fn detect(common: &Common) -> Result<Outcome> {
    let spec = read_spec(common)?;
    let seed = common.seed.unwrap_or(spec.scenario.seed);
    let rows = run_detection(&spec, seed)?;
    emit(output_target(common, Some(&spec)).as_deref(), &to_csv_string(&rows)?)?;
    Ok(Outcome::Ok)
}

fn mitigate(common: &Common) -> Result<Outcome> {
    let spec = read_spec(common)?;
    let seed = common.seed.unwrap_or(spec.scenario.seed);
    let (rows, curve) = run_mitigation(&spec, seed)?;
    emit(output_target(common, Some(&spec)).as_deref(), &to_csv_string(&rows)?)?;
    match curve.crossover {
        Some(x) => eprintln!("crossover at tau_p/tau = {x:.4}"),
        None => eprintln!("no crossover on the grid"),
    }
    if curve.infeasible as f64 > 0.5 * curve.n_drops as f64 {
        return Ok(Outcome::Infeasible);
    }
    Ok(Outcome::Ok)
}
