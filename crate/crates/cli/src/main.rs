use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use algotest::runner::{self, Experiment, ExperimentConfig, RunOutput};
use algotest::{Error, Result};
use clap::{Args, Parser, Subcommand};

/// Black-box tests and power limits for learning algorithms.
#[derive(Debug, Parser)]
#[command(name = "algotest", version)]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
    #[command(flatten)]
    global: Global,
}

#[derive(Debug, Args)]
struct Global {
    /// Experiment configuration JSON; its kind must match the verb.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Monte Carlo trials (overrides the config).
    #[arg(long, global = true)]
    trials: Option<u64>,
    /// Worker threads; output does not depend on this.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output path. CSV goes here; JSON goes to the same stem with `.json`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Verb {
    /// Exact and Monte Carlo power of the Binomial test with the power limit.
    Power,
    /// Critical values and exact power of the Binomial test.
    Critical,
    /// Exact size of the Binomial test on a grid.
    Validate,
    /// Exact power against the power limit on a grid.
    Bound,
    /// Exact and Monte Carlo stability of one algorithm.
    Stability,
    /// Stability scan over algorithms and training sizes with regimes.
    Phase,
    /// Build, verify and couple an adversarial instance.
    Adversary,
    /// Power of the comparison sign test with the comparison limit.
    Compare,
    /// Comparison-as-evaluation identities on random instances.
    Reduce,
    /// Run one test and record a replayable transcript.
    Transcript,
    /// Re-run a recorded transcript and check it matches.
    Replay {
        /// Transcript JSON written by `transcript`.
        record: PathBuf,
    },
    /// Print the effective configuration for a verb as JSON.
    Config {
        /// One of the experiment verbs.
        verb: String,
    },
}

fn default_experiment(verb: &str) -> Result<Experiment> {
    Ok(match verb {
        "power" => Experiment::PowerCurve(Default::default()),
        "critical" => Experiment::Critical(Default::default()),
        "validate" => Experiment::ValidateSize(Default::default()),
        "bound" => Experiment::BoundDominance(Default::default()),
        "stability" => Experiment::Stability(Default::default()),
        "phase" => Experiment::StabilityScan(Default::default()),
        "adversary" => Experiment::AdversaryDemo(Default::default()),
        "compare" => Experiment::Compare(Default::default()),
        "reduce" => Experiment::ReductionCheck(Default::default()),
        "transcript" => Experiment::Transcript(Default::default()),
        other => return Err(Error::Config(format!("no experiment for verb `{other}`"))),
    })
}

fn load_config(verb: &str, g: &Global) -> Result<ExperimentConfig> {
    let default = default_experiment(verb)?;
    let mut cfg = match &g.config {
        Some(path) => {
            let cfg = ExperimentConfig::from_json(&fs::read_to_string(path)?)?;
            if cfg.experiment.kind() != default.kind() {
                return Err(Error::Config(format!(
                    "config kind `{}` does not match verb `{verb}` (expected `{}`)",
                    cfg.experiment.kind(),
                    default.kind()
                )));
            }
            cfg
        }
        None => ExperimentConfig::new(default, 0, 10_000),
    };
    if let Some(s) = g.seed {
        cfg.master_seed = s;
    }
    if let Some(t) = g.trials {
        cfg.trials = t;
    }
    if g.workers.is_some() {
        cfg.workers = g.workers;
    }
    if g.out.is_some() {
        cfg.output = g.out.clone();
    }
    Ok(cfg)
}

/// Write to stdout, treating a closed pipe (`| head`) as success.
fn emit(text: &str) -> Result<()> {
    let mut stdout = std::io::stdout().lock();
    match stdout
        .write_all(text.as_bytes())
        .and_then(|_| stdout.flush())
    {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn write_outputs(out: &RunOutput, path: Option<&Path>) -> Result<()> {
    match path {
        None => {
            if let Some(csv) = &out.csv {
                emit(csv)?;
            }
            if let Some(json) = &out.json {
                emit(&format!("{json}\n"))?;
            }
        }
        Some(path) => match (&out.csv, &out.json) {
            (Some(csv), Some(json)) => {
                fs::write(path, csv)?;
                fs::write(path.with_extension("json"), json)?;
            }
            (Some(csv), None) => fs::write(path, csv)?,
            (None, Some(json)) => fs::write(path, json)?,
            (None, None) => {}
        },
    }
    Ok(())
}

fn verb_name(v: &Verb) -> &'static str {
    match v {
        Verb::Power => "power",
        Verb::Critical => "critical",
        Verb::Validate => "validate",
        Verb::Bound => "bound",
        Verb::Stability => "stability",
        Verb::Phase => "phase",
        Verb::Adversary => "adversary",
        Verb::Compare => "compare",
        Verb::Reduce => "reduce",
        Verb::Transcript => "transcript",
        Verb::Replay { .. } => "replay",
        Verb::Config { .. } => "config",
    }
}

/// Returns the exit code: 0 success, 3 when a check failed.
fn run(cli: &Cli) -> Result<u8> {
    match &cli.verb {
        Verb::Replay { record } => {
            let outcome = runner::replay(&fs::read_to_string(record)?)?;
            let text = serde_json::to_string_pretty(&outcome)?;
            match &cli.global.out {
                Some(p) => fs::write(p, text)?,
                None => emit(&format!("{text}\n"))?,
            }
            Ok(if outcome.matches { 0 } else { 3 })
        }
        Verb::Config { verb } => {
            emit(&format!("{}\n", load_config(verb, &cli.global)?.to_json()?))?;
            Ok(0)
        }
        v => {
            let cfg = load_config(verb_name(v), &cli.global)?;
            let out = runner::run_experiment(&cfg)?;
            write_outputs(&out, cfg.output.as_deref())?;
            for f in &out.failures {
                eprintln!("FAIL {f}");
            }
            Ok(if out.failures.is_empty() { 0 } else { 3 })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
