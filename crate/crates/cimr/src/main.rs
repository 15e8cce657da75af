use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cimr::config::{BackendChoice, ConfigError, OutputFormat};
use cimr::{load_config, run_experiment, HarnessError};
use cimr_core::backends::DEFAULT_REMOTE_TIMEOUT_SECS;
use cimr_core::engine::Variant;
use cimr_core::fusion;

#[derive(Parser)]
#[command(name = "cimr", version, about = "Closed-loop iterative multimodal reasoning harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment from a config file.
    Run(RunArgs),
    /// Run the fusion gradient suite and print the max relative error.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config file (key = value lines).
    #[arg(long)]
    config: PathBuf,
    /// Engine variant to run (repeatable); overrides the config.
    #[arg(long = "variant")]
    variants: Vec<String>,
    /// Episode count override.
    #[arg(long)]
    episodes: Option<usize>,
    /// Base seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Remote backend endpoint; also read from CIMR_BACKEND_URL.
    #[arg(long)]
    backend_url: Option<String>,
    /// Results table path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Trace file path (JSONL).
    #[arg(long)]
    traces: Option<PathBuf>,
    /// Correction-triplet export path (JSONL).
    #[arg(long)]
    triplets: Option<PathBuf>,
    /// Results format: csv or markdown.
    #[arg(long)]
    format: Option<String>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Number of randomized instances.
    #[arg(long, default_value_t = 100)]
    instances: usize,
}

fn run(args: RunArgs) -> Result<(), HarnessError> {
    let mut config = load_config(&args.config)?;

    if !args.variants.is_empty() {
        let mut variants = Vec::new();
        for name in &args.variants {
            variants.push(
                Variant::from_name(name)
                    .ok_or_else(|| ConfigError::BadVariant(name.clone()))?,
            );
        }
        config.variants = variants;
    }
    if let Some(episodes) = args.episodes {
        config.episodes = episodes;
    }
    if let Some(seed) = args.seed {
        config.base_seed = seed;
    }
    let backend_url = args
        .backend_url
        .or_else(|| std::env::var("CIMR_BACKEND_URL").ok().filter(|s| !s.is_empty()));
    if let Some(url) = backend_url {
        let timeout_secs = match &config.backend {
            BackendChoice::Remote { timeout_secs, .. } => *timeout_secs,
            _ => DEFAULT_REMOTE_TIMEOUT_SECS,
        };
        config.backend = BackendChoice::Remote { url, timeout_secs };
    }
    if let Some(out) = args.out {
        config.out = Some(out);
    }
    if let Some(traces) = args.traces {
        config.traces = Some(traces);
    }
    if let Some(triplets) = args.triplets {
        config.triplets = Some(triplets);
    }
    if let Some(format) = args.format {
        config.format = OutputFormat::from_name(&format).ok_or_else(|| ConfigError::BadValue {
            key: "format".into(),
            reason: format!("expected csv or markdown, got `{format}`"),
        })?;
    }
    config.validate()?;
    if config.out.is_none() {
        return Err(ConfigError::MissingOutput("out").into());
    }
    if config.traces.is_none() {
        return Err(ConfigError::MissingOutput("traces").into());
    }

    let variants: Vec<&str> = config.variants.iter().map(|v| v.name()).collect();
    eprintln!(
        "running {} episodes x {} variant(s) [{}], seed {}, t_max {}",
        config.episodes,
        config.variants.len(),
        variants.join(", "),
        config.base_seed,
        config.t_max
    );

    let output = run_experiment(&config)?;

    println!("variant,round,episodes,successes,accuracy_pct");
    for row in &output.table.rows {
        println!(
            "{},{},{},{},{:.1}",
            row.variant, row.round, row.episodes, row.successes, row.accuracy_pct
        );
    }
    eprintln!(
        "done in {:.2}s; wrote {} and {}{}",
        output.elapsed.as_secs_f64(),
        config.out.as_ref().expect("checked above").display(),
        config.traces.as_ref().expect("checked above").display(),
        match (&config.triplets, output.triplet_count) {
            (Some(path), Some(n)) => format!(" and {} ({} triplets)", path.display(), n),
            _ => String::new(),
        }
    );
    Ok(())
}

fn gradcheck(args: GradcheckArgs) -> ExitCode {
    let started = std::time::Instant::now();
    let max_err = fusion::gradcheck_suite(args.seed, args.instances);
    let elapsed = started.elapsed().as_secs_f64();
    println!(
        "gradcheck: {} instances, max relative error {max_err:.3e} (step {:.0e}), {elapsed:.2}s",
        args.instances,
        fusion::GRADCHECK_STEP
    );
    if max_err < 1e-4 {
        println!("PASS (threshold 1e-4)");
        ExitCode::SUCCESS
    } else {
        println!("FAIL (threshold 1e-4)");
        ExitCode::FAILURE
    }
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run(args) => match run(args) {
            Ok(()) => ExitCode::SUCCESS,
            Err(err) => {
                eprintln!("error: {err}");
                ExitCode::from(err.exit_code() as u8)
            }
        },
        Command::Gradcheck(args) => gradcheck(args),
    }
}
