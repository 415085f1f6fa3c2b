use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ellpos_cli::manifest::parse_body;
use ellpos_cli::{run, run_all_checks, Budgets, CliError, Experiment, ExperimentManifest};
use serde_json::Value;

#[derive(Parser)]
#[command(name = "ellpos", version, about = "Numerical experiments on norms, positions and sections")]
struct Cli {
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Monte Carlo sample budget.
    #[arg(long, global = true)]
    samples: Option<u64>,
    /// Write CSV (or the check report) here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Size of the worker pool. Results do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Print the JSON summary to stdout.
    #[arg(long, global = true)]
    json: bool,
    /// Replay a manifest file.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Args, Clone, Default)]
struct RunArgs {
    /// JSON body descriptor or shorthand: cube, euclidean, lp:P,
    /// weighted-lp:P:W1,W2,..., cylinder:M.
    #[arg(long)]
    body: Option<String>,
    /// Dimension for shorthand bodies.
    #[arg(long)]
    n: Option<usize>,
    /// Extra parameter as key=value; the value is read as JSON when it parses.
    #[arg(long = "param", value_name = "KEY=VALUE")]
    params: Vec<String>,
}

#[derive(Args, Clone)]
struct CheckArgs {
    /// Multiplies every tolerance; values below 1 tighten the suite.
    #[arg(long, default_value_t = 1.0)]
    tolerance_scale: f64,
    /// Reduced budgets for smoke testing.
    #[arg(long)]
    quick: bool,
}

#[derive(Subcommand, Clone)]
enum Command {
    Moments(RunArgs),
    SuperconcScan(RunArgs),
    EllSolve(RunArgs),
    Balance(RunArgs),
    Deviation(RunArgs),
    SectionsScan(RunArgs),
    JohnCounterexample(RunArgs),
    DvoretzkyDim(RunArgs),
    EllipseCheck(RunArgs),
    SingularValues(RunArgs),
    /// Run the acceptance suite.
    Check(CheckArgs),
}

impl Command {
    fn experiment(&self) -> Option<(Experiment, &RunArgs)> {
        use Command::*;
        Some(match self {
            Moments(a) => (Experiment::Moments, a),
            SuperconcScan(a) => (Experiment::SuperconcScan, a),
            EllSolve(a) => (Experiment::EllSolve, a),
            Balance(a) => (Experiment::Balance, a),
            Deviation(a) => (Experiment::Deviation, a),
            SectionsScan(a) => (Experiment::SectionsScan, a),
            JohnCounterexample(a) => (Experiment::JohnCounterexample, a),
            DvoretzkyDim(a) => (Experiment::DvoretzkyDim, a),
            EllipseCheck(a) => (Experiment::EllipseCheck, a),
            SingularValues(a) => (Experiment::SingularValues, a),
            Check(_) => return None,
        })
    }
}

fn build_manifest(cli: &Cli) -> Result<ExperimentManifest, CliError> {
    let mut manifest = match &cli.manifest {
        Some(path) => ExperimentManifest::from_json(&std::fs::read_to_string(path)?)?,
        None => {
            let (experiment, _) = cli
                .command
                .as_ref()
                .and_then(Command::experiment)
                .ok_or_else(|| CliError::Manifest("no experiment given".into()))?;
            ExperimentManifest::new(experiment)
        }
    };
    if let Some((experiment, args)) = cli.command.as_ref().and_then(Command::experiment) {
        if cli.manifest.is_some() && experiment != manifest.experiment {
            return Err(CliError::Manifest(format!(
                "manifest runs {} but the command is {}",
                manifest.experiment.name(),
                experiment.name()
            )));
        }
        if let Some(body) = &args.body {
            manifest.body = Some(parse_body(body, args.n)?);
        } else if let Some(n) = args.n {
            manifest.set("n", n as u64);
        }
        for kv in &args.params {
            let (k, v) = kv.split_once('=').ok_or_else(|| CliError::Manifest(format!("expected key=value, got {kv:?}")))?;
            let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
            manifest.set(k, value);
        }
    }
    if let Some(seed) = cli.seed {
        manifest.set("seed", seed);
    }
    if let Some(samples) = cli.samples {
        manifest.set("samples", samples);
    }
    Ok(manifest)
}

fn write_or_print(path: Option<&PathBuf>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn execute(cli: &Cli) -> Result<bool, CliError> {
    if let Some(w) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build_global()
            .map_err(|e| CliError::Manifest(format!("workers: {e}")))?;
    }
    if let Some(Command::Check(args)) = &cli.command {
        let budgets = if args.quick { Budgets::quick() } else { Budgets::acceptance() };
        let report = run_all_checks(cli.seed.unwrap_or(0), args.tolerance_scale, budgets)?;
        if let Some(p) = &cli.out {
            std::fs::write(p, report.to_json())?;
        }
        if cli.json {
            println!("{}", report.to_json());
        } else {
            for c in &report.criteria {
                println!("{} {} {}", c.id, if c.passed { "PASS" } else { "FAIL" }, c.title);
            }
        }
        return Ok(report.all_passed);
    }
    let manifest = build_manifest(cli)?;
    let output = run(&manifest)?;
    let out = cli.out.clone().or_else(|| manifest.output_path.clone().map(PathBuf::from));
    if cli.json {
        if let Some(p) = &out {
            std::fs::write(p, output.csv(&manifest))?;
        }
        println!("{}", serde_json::to_string_pretty(&output.summary_json(&manifest)).expect("summaries serialize"));
    } else {
        write_or_print(out.as_ref(), &output.csv(&manifest))?;
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("ellpos: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
