use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use strainfield::classify::TrainClass;
use strainfield::config::{RunConfig, Stage};
use strainfield::pipeline;
use strainfield::Error;

#[derive(Parser)]
#[command(name = "strainfield", version, about = "Multilevel GP modelling of train-passing strain events")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML config file; defaults to $STRAINFIELD_CONFIG, then built-in values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SamplerArgs {
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic raw crossings of one fleet.
    Simulate {
        #[arg(long)]
        class: TrainClass,
        #[arg(long, default_value_t = 10)]
        n: usize,
        /// Noise sd in micro-strain.
        #[arg(long, default_value_t = 1.0)]
        noise_sd: f64,
        #[arg(long, default_value_t = strainfield::simulate::DEFAULT_SAMPLE_RATE_HZ)]
        sample_rate: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Raw wavelength records to normalized distance-indexed events.
    Convert {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Write `event_id,class` for every event sidecar in a directory.
    Classify {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample the multilevel posterior of processed events.
    Fit {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        sampler: SamplerArgs,
    },
    /// Posterior envelopes per event.
    Predict {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        samples: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Correlation matrix and outlier flags.
    Monitor {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        samples: PathBuf,
        #[arg(long)]
        classes: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// All stages end to end; simulates its own input when `--input` is absent.
    Pipeline {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        sampler: SamplerArgs,
    },
}

fn load(args: &ConfigArgs, sampler: Option<&SamplerArgs>) -> Result<RunConfig, Error> {
    let mut config = RunConfig::resolve(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(s) = sampler {
        config.sampler.chains = s.chains.unwrap_or(config.sampler.chains);
        config.sampler.warmup = s.warmup.unwrap_or(config.sampler.warmup);
        config.sampler.samples = s.samples.unwrap_or(config.sampler.samples);
    }
    config.validate()?;
    Ok(config)
}

fn usage_error(e: &Error) -> bool {
    matches!(e, Error::InvalidArgument(_) | Error::Config(_))
}

fn run(command: Command) -> Result<(), (Error, bool)> {
    let runtime = |e: Error| (e, false);
    let usage = |e: Error| {
        let u = usage_error(&e);
        (e, u)
    };
    match command {
        Command::Simulate { class, n, noise_sd, sample_rate, seed, out } => {
            if class == TrainClass::Other {
                return Err((Error::InvalidArgument("--class must be 350 or 22x".into()), true));
            }
            let seed = RunConfig { seed, ..RunConfig::default() }.stage_seed(Stage::Simulate);
            let stems = pipeline::simulate_to_dir(&out, &[(class, n)], noise_sd, sample_rate, seed).map_err(usage)?;
            println!("wrote {} events to {}", stems.len(), out.display());
        }
        Command::Convert { input, out, config } => {
            let config = load(&config, None).map_err(usage)?;
            let report = pipeline::convert_dir(&input, &out, &config).map_err(runtime)?;
            println!("converted {} events, rejected {}", report.written.len(), report.rejected.len());
            for r in &report.rejected {
                println!("  rejected {}: {}", r.event_id, r.reason);
            }
        }
        Command::Classify { input, out } => {
            let rows = pipeline::classify_dir(&input, &out).map_err(runtime)?;
            println!("classified {} events into {}", rows.len(), out.display());
        }
        Command::Fit { input, out, config, sampler } => {
            let config = load(&config, Some(&sampler)).map_err(usage)?;
            let (_, summary) = pipeline::fit_dir(&input, &out, &config).map_err(runtime)?;
            println!(
                "fitted {} events: {} chains x {} draws, {} divergences",
                summary.event_ids.len(),
                summary.chains,
                summary.samples,
                summary.divergences
            );
            if summary.convergence_failure {
                eprintln!("warning: more than 10% of transitions diverged");
            }
        }
        Command::Predict { input, samples, out, config } => {
            let config = load(&config, None).map_err(usage)?;
            let written = pipeline::predict_dir(&input, &samples, &out, &config).map_err(runtime)?;
            println!("wrote {} envelopes to {}", written.len(), out.display());
        }
        Command::Monitor { input, samples, classes, out, config } => {
            let config = load(&config, None).map_err(usage)?;
            let report = pipeline::monitor_dir(&input, &samples, classes.as_deref(), &out, &config)
                .map_err(runtime)?;
            for (id, f) in report.event_ids.iter().zip(&report.flags).filter(|(_, f)| f.flagged) {
                println!("flagged {id} (score {:.4})", f.score.unwrap_or(f64::NAN));
            }
        }
        Command::Pipeline { input, out, config, sampler } => {
            let config = load(&config, Some(&sampler)).map_err(usage)?;
            let manifest = pipeline::run_pipeline(input.as_deref(), &out, &config).map_err(runtime)?;
            println!("pipeline finished: {} stages, config {}", manifest.stages.len(), &manifest.config_hash[..12]);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err((e, usage)) => {
            eprintln!("error: {e}");
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}
