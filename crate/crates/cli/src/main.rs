mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use tracing_subscriber::EnvFilter;

use commands::{ExportFormat, PartialFailure};
use config::EngineConfig;
use counsel_core::pipeline::Mode;

static CANCEL: AtomicBool = AtomicBool::new(false);

#[derive(Parser)]
#[command(name = "counsel", version, about = "Multi-agent counseling dialogue synthesis and evaluation")]
struct Cli {
    /// TOML engine configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Log filter, e.g. `info` or `counsel_core=debug`; RUST_LOG wins when set.
    #[arg(long, global = true, default_value = "info")]
    log_level: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct Overrides {
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<Mode>,
    /// Disable emotion tracking and memory.
    #[arg(long)]
    no_em: bool,
    /// Disable reaction prediction and safety review.
    #[arg(long)]
    no_rc: bool,
    #[arg(long)]
    max_turns: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    /// Concurrent sessions; 0 uses every core.
    #[arg(long)]
    parallelism: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run role-play sessions for every card, screen them and write the corpus.
    Synthesize {
        #[arg(long)]
        cards: PathBuf,
        /// Draw this many cards by stratified sampling first.
        #[arg(long)]
        sample: Option<usize>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Turn accepted sessions into training JSONL.
    Export {
        #[arg(long)]
        sessions: PathBuf,
        #[arg(long, value_enum)]
        format: ExportFormat,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate the counselor against the seeker simulator.
    Eval {
        #[arg(long)]
        cards: PathBuf,
        /// Number of cards to sample with the configured seed.
        #[arg(long)]
        n_cards: Option<usize>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Print corpus statistics for a sessions directory.
    Stats {
        #[arg(long)]
        sessions: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Derive role cards from seed dialogues.
    DeriveCards {
        #[arg(long)]
        seeds: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    match s {
        "agent" => Ok(Mode::Agent),
        "llm" => Ok(Mode::Llm),
        other => Err(format!("unknown mode `{other}` (expected agent or llm)")),
    }
}

impl Overrides {
    fn apply(&self, cfg: &mut EngineConfig, eval: bool) {
        if let Some(out) = &self.out {
            cfg.synthesis.out_dir = out.clone();
        }
        if let Some(mode) = self.mode {
            cfg.pipeline.mode = mode;
        }
        if self.no_em {
            cfg.pipeline.em_enabled = false;
        }
        if self.no_rc {
            cfg.pipeline.rc_enabled = false;
        }
        if let Some(p) = self.parallelism {
            cfg.synthesis.parallelism = p;
        }
        match eval {
            false => {
                if let Some(n) = self.max_turns {
                    cfg.synthesis.max_turns = n;
                }
                if let Some(seed) = self.seed {
                    cfg.synthesis.seed = seed;
                }
            }
            true => {
                if let Some(n) = self.max_turns {
                    cfg.eval.max_turns = n;
                }
                if let Some(seed) = self.seed {
                    cfg.eval.seed = seed;
                }
            }
        }
    }
}

fn init_logging(level: &str) {
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(level));
    tracing_subscriber::fmt()
        .json()
        .with_env_filter(filter)
        .with_current_span(true)
        .with_span_list(false)
        .with_writer(std::io::stderr)
        .init();
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => EngineConfig::load(path)?,
        None => EngineConfig::default(),
    };
    match cli.command {
        Command::Synthesize {
            cards,
            sample,
            overrides,
        } => {
            overrides.apply(&mut cfg, false);
            if sample.is_some() {
                cfg.synthesis.sample = sample;
            }
            commands::synthesize_cmd(&cfg, &cards, &CANCEL)
        }
        Command::Export { sessions, format, out } => {
            let out = out.unwrap_or_else(|| commands::default_out(&cfg, "export"));
            commands::export_cmd(&cfg, &sessions, format, &out)
        }
        Command::Eval {
            cards,
            n_cards,
            overrides,
        } => {
            overrides.apply(&mut cfg, true);
            if n_cards.is_some() {
                cfg.eval.n_cards = n_cards;
            }
            commands::eval_cmd(&cfg, &cards, &CANCEL)
        }
        Command::Stats { sessions, json } => commands::stats_cmd(&sessions, json),
        Command::DeriveCards { seeds, out } => commands::derive_cards_cmd(&cfg, &seeds, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(&cli.log_level);
    if let Err(e) = ctrlc::set_handler(|| {
        if CANCEL.swap(true, Ordering::SeqCst) {
            std::process::exit(130);
        }
        eprintln!("interrupt: finishing current turns, then flushing partial sessions");
    })
    .context("installing interrupt handler")
    {
        eprintln!("warning: {e:#}");
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.downcast_ref::<PartialFailure>().is_some() => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
