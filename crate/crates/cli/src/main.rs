use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vis_cli::config::read_settings;
use vis_cli::{compare, read_manifest, run, CliError, ExperimentConfig, Settings};

#[derive(Parser)]
#[command(name = "vis", version, about = "Variationally inferred sampling experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment over one or more seeds.
    Run(RunArgs),
    /// Compare the median metrics of two run directories.
    Compare { a: PathBuf, b: PathBuf },
}

#[derive(Args)]
struct RunArgs {
    /// funnel, hmm, dlm, vae or cvae.
    #[arg(value_name = "EXPERIMENT")]
    positional: Option<String>,
    #[arg(long)]
    experiment: Option<String>,
    /// Flat `key = value` file; flags given here take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Refinement steps during training.
    #[arg(long)]
    t: Option<String>,
    /// Refinement steps at test time.
    #[arg(long)]
    t_test: Option<String>,
    /// p, mc, g or fp.
    #[arg(long)]
    entropy: Option<String>,
    /// full or fast.
    #[arg(long)]
    mode: Option<String>,
    /// sgd, sgld or fp.
    #[arg(long)]
    sampler: Option<String>,
    #[arg(long)]
    eta: Option<String>,
    #[arg(long)]
    iters: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    /// Comma-separated list.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    data: Option<String>,
    #[arg(long)]
    out: Option<String>,
    /// Repeat the run recorded in a manifest (file or run directory).
    #[arg(long)]
    from_manifest: Option<PathBuf>,
}

fn settings(args: RunArgs) -> Result<Settings, CliError> {
    let mut s = match &args.from_manifest {
        Some(p) => read_manifest(p)?.config,
        None => Settings::new(),
    };
    if let Some(p) = &args.config {
        s.extend(read_settings(p)?);
    }
    if let (Some(a), Some(b)) = (&args.positional, &args.experiment) {
        if a != b {
            return Err(CliError::Config(format!("experiment given twice: `{a}` and `{b}`")));
        }
    }
    let flags = [
        ("experiment", args.positional.or(args.experiment)),
        ("t", args.t),
        ("t_test", args.t_test),
        ("entropy", args.entropy),
        ("mode", args.mode),
        ("sampler", args.sampler),
        ("eta", args.eta),
        ("iters", args.iters),
        ("epochs", args.epochs),
        ("seeds", args.seeds),
        ("data", args.data),
        ("out", args.out),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            s.insert(k.to_string(), v);
        }
    }
    Ok(s)
}

fn main_inner(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(args) => {
            let cfg = ExperimentConfig::from_settings(&settings(args)?)?;
            let out = run(&cfg)?;
            println!("{}: {} seed(s) written to {}", cfg.experiment, cfg.seeds.len(), out.dir.display());
            for (k, v) in &out.summary.median {
                println!("  {k:<20} {v:.6}");
            }
        }
        Command::Compare { a, b } => {
            let c = compare(&a, &b)?;
            print!("{}", c.render(&a.display().to_string(), &b.display().to_string()));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match main_inner(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
