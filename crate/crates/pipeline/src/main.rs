use std::path::PathBuf;

use clap::{Parser, Subcommand};

use hivscreen::commands::{self, IngestPaths};
use hivscreen::config::{BackendKind, PipelineConfig, Subset};
use hivscreen::core::decide::Strategy;
use hivscreen::core::prompts::PromptId;
use hivscreen::StageError;

/// HIV screening study pipeline: synthesize or ingest a corpus, query a
/// completion server, aggregate repeated runs, and score the verdicts.
#[derive(Parser)]
#[command(name = "hivscreen", version, disable_help_subcommand = true)]
struct Cli {
    /// JSON config file; HIVSCREEN_CONFIG works too. Omitted means built-in
    /// defaults. Flags override environment, environment overrides file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    results_dir: Option<PathBuf>,
    /// Split and downsampling seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic labeled corpus into records.jsonl
    Synth {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        inclusion_fraction: Option<f64>,
        /// Generator seed, independent of the split seed
        #[arg(long)]
        synth_seed: Option<u64>,
    },
    /// Build records.jsonl from the four export tables
    Ingest {
        #[arg(long)]
        notes: PathBuf,
        #[arg(long)]
        metadata: PathBuf,
        #[arg(long)]
        medication: PathBuf,
        #[arg(long)]
        virology: PathBuf,
    },
    /// Draw the stratified train/test split manifest
    Split {
        #[arg(long)]
        fraction: Option<f64>,
        /// Keep the training majority class instead of downsampling it
        #[arg(long)]
        no_balance: bool,
    },
    /// Query the completion backend for every selected record
    Run {
        #[arg(long)]
        prompt: Option<PromptId>,
        #[arg(long)]
        subset: Option<Subset>,
        #[arg(long)]
        backend: Option<BackendKind>,
        #[arg(long)]
        server_url: Option<String>,
        /// Mock decision-flip probability (in-process backend)
        #[arg(long)]
        p_flip: Option<f64>,
    },
    /// Reduce each record's runs to one verdict per strategy
    Aggregate {
        #[arg(long)]
        prompt: Option<PromptId>,
    },
    /// Score decisions against labels into metrics.csv and confusion.csv
    Evaluate,
    /// Length-vs-correctness statistics over one prompt's runs
    Analyze {
        #[arg(long)]
        prompt: Option<PromptId>,
        #[arg(long)]
        strategy: Option<Strategy>,
    },
    /// Serve the deterministic model over HTTP
    MockServe {
        #[arg(long)]
        bind: Option<String>,
        #[arg(long)]
        p_flip: Option<f64>,
        #[arg(long)]
        delay_ms: Option<u64>,
    },
    /// Print the metrics table and analysis summary
    Report,
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, StageError> {
    let path = cli
        .config
        .clone()
        .or_else(|| std::env::var("HIVSCREEN_CONFIG").ok().map(PathBuf::from));
    let mut cfg = PipelineConfig::load(path.as_deref())?;
    if let Some(dir) = &cli.results_dir {
        cfg.results_dir = dir.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), StageError> {
    let mut cfg = load_config(&cli)?;
    match &cli.command {
        Cmd::Synth { n, inclusion_fraction, synth_seed } => {
            if let Some(n) = n {
                cfg.synth.n = *n;
            }
            if let Some(f) = inclusion_fraction {
                cfg.synth.inclusion_fraction = *f;
            }
            if let Some(s) = synth_seed {
                cfg.synth.seed = *s;
            }
            cfg.validate()?;
            commands::cmd_synth(&cfg)
        }
        Cmd::Ingest { notes, metadata, medication, virology } => {
            cfg.validate()?;
            commands::cmd_ingest(
                &cfg,
                &IngestPaths { notes, metadata, medication, virology },
            )
        }
        Cmd::Split { fraction, no_balance } => {
            if let Some(f) = fraction {
                cfg.split.fraction = *f;
            }
            if *no_balance {
                cfg.split.balance = false;
            }
            cfg.validate()?;
            commands::cmd_split(&cfg)
        }
        Cmd::Run { prompt, subset, backend, server_url, p_flip } => {
            if let Some(p) = prompt {
                cfg.prompt = *p;
            }
            if let Some(s) = subset {
                cfg.subset = *s;
            }
            if let Some(b) = backend {
                cfg.backend = *b;
            }
            if let Some(u) = server_url {
                cfg.server.url = u.clone();
            }
            if let Some(p) = p_flip {
                cfg.mock.p_flip = *p;
            }
            cfg.validate()?;
            commands::cmd_run(&cfg, cfg.prompt)
        }
        Cmd::Aggregate { prompt } => {
            if let Some(p) = prompt {
                cfg.prompt = *p;
            }
            cfg.validate()?;
            commands::cmd_aggregate(&cfg, cfg.prompt)
        }
        Cmd::Evaluate => {
            cfg.validate()?;
            commands::cmd_evaluate(&cfg)
        }
        Cmd::Analyze { prompt, strategy } => {
            if let Some(p) = prompt {
                cfg.prompt = *p;
            }
            if let Some(s) = strategy {
                cfg.analyze.strategy = *s;
            }
            cfg.validate()?;
            commands::cmd_analyze(&cfg, cfg.prompt)
        }
        Cmd::MockServe { bind, p_flip, delay_ms } => {
            if let Some(b) = bind {
                cfg.server.bind = b.clone();
            }
            if let Some(p) = p_flip {
                cfg.mock.p_flip = *p;
            }
            if let Some(d) = delay_ms {
                cfg.server.delay_ms = *d;
            }
            cfg.validate()?;
            commands::cmd_mock_serve(&cfg)
        }
        Cmd::Report => {
            cfg.validate()?;
            commands::cmd_report(&cfg)
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
