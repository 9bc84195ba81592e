use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use detfuse::config::RunConfig;
use detfuse::eval::ap_table_text;
use detfuse::workflow::{self, RerankMode, StepReport, Workspace};
use detfuse::{Error, ErrorKind};

/// Fuse object-detector outputs with contextual learning to rank.
#[derive(Debug, Parser)]
#[command(name = "detfuse", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a seeded synthetic split (detections, ground truth, proposals).
    Simulate {
        /// Scenario file (key = value lines).
        #[arg(long)]
        scenario: PathBuf,
        /// Output directory; receives one directory per fold, split.cfg and run.cfg.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit per-detector, per-class Platt calibration on the context folds.
    Calibrate(RunArgs),
    /// Extract context feature vectors for every fold.
    Featurize(RunArgs),
    /// Train the per-class rankers.
    Train(RunArgs),
    /// Produce a fused, re-ranked test-fold list.
    Rerank(ModeArgs),
    /// Evaluate a fused list with the VOC protocol and print the AP table.
    Eval(ModeArgs),
    /// False-positive taxonomy, PR curves and feature importance of a fused list.
    Analyze(ModeArgs),
    /// Maximal achievable mAP of every detector subset on the test fold.
    Bound(RunArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Run configuration file (key = value lines).
    #[arg(long)]
    config: PathBuf,
    /// Override a configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_override)]
    overrides: Vec<(String, String)>,
}

#[derive(Debug, Args)]
struct ModeArgs {
    #[command(flatten)]
    run: RunArgs,
    /// learned, naive-i, naive-ii, naive-iii, single:<detector> or baseline:<detector>.
    #[arg(long, default_value = "learned")]
    mode: String,
}

fn parse_override(s: &str) -> Result<(String, String), String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("expected KEY=VALUE, got `{s}`"))?;
    let k = k.trim();
    if k.is_empty() {
        return Err(format!("empty key in `{s}`"));
    }
    Ok((k.to_string(), v.trim().to_string()))
}

fn workspace(args: &RunArgs) -> detfuse::Result<Workspace> {
    Workspace::open(RunConfig::load(&args.config, &args.overrides)?)
}

fn print_report(r: &StepReport) {
    println!("{}", r.summary);
    for p in &r.outputs {
        println!("  wrote {}", p.display());
    }
    println!("  manifest {}", r.manifest.display());
}

fn run(cli: Cli) -> detfuse::Result<()> {
    match cli.command {
        Command::Simulate { scenario, out } => print_report(&workflow::simulate(&scenario, &out)?),
        Command::Calibrate(a) => print_report(&workspace(&a)?.calibrate()?),
        Command::Featurize(a) => print_report(&workspace(&a)?.featurize()?),
        Command::Train(a) => print_report(&workspace(&a)?.train()?),
        Command::Bound(a) => print_report(&workspace(&a)?.bound()?),
        Command::Rerank(a) => {
            let mode = RerankMode::parse(&a.mode)?;
            print_report(&workspace(&a.run)?.rerank(&mode)?);
        }
        Command::Eval(a) => {
            let mode = RerankMode::parse(&a.mode)?;
            let ws = workspace(&a.run)?;
            let (report, step) = ws.eval(&mode)?;
            print!("{}", ap_table_text(&report, &ws.cfg.classes, &mode.stem()));
            print_report(&step);
        }
        Command::Analyze(a) => {
            let mode = RerankMode::parse(&a.mode)?;
            print_report(&workspace(&a.run)?.analyze(&mode)?);
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Usage => 1,
        ErrorKind::Data => 2,
        ErrorKind::Numeric => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
