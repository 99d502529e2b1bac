use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use segfp_cli::commands::{
    cmd_advise, cmd_build_db, cmd_eval, cmd_gen_corpus, cmd_query, cmd_sweep, cmd_train, AdviseMode,
};
use segfp_cli::{CliError, ExperimentConfig, Result};

#[derive(Parser)]
#[command(
    name = "segfp",
    version,
    about = "Neural audio fingerprinting with configurable segment length"
)]
struct Cli {
    /// Experiment config (JSON).
    #[arg(long, short, global = true, default_value = "segfp.json")]
    config: PathBuf,
    /// Cap on worker threads; defaults to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Live,
    Replay,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesise the train/reference/distractor corpus and noise pools.
    GenCorpus,
    /// Train the encoder for one segment length.
    Train {
        /// Segment length in seconds.
        #[arg(long)]
        w: f64,
    },
    /// Fingerprint the reference and distractor tracks.
    BuildDb {
        #[arg(long)]
        w: f64,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Identify an excerpt of a WAV file; prints one JSON line per candidate.
    Query {
        #[arg(long)]
        db: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        wav: PathBuf,
        /// Query length in seconds.
        #[arg(long)]
        l: f64,
        /// Start of the excerpt within the file, in seconds.
        #[arg(long, default_value_t = 0.0)]
        offset: f64,
    },
    /// Hit rates of one database over the configured query lengths.
    Eval {
        #[arg(long)]
        db: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train, index and evaluate every segment length; write the reports.
    Sweep,
    /// Ask language models for a segment length and score their answers.
    Advise {
        #[arg(long, value_enum, default_value = "replay")]
        mode: Mode,
        /// Hit-rate report JSON; defaults to the workspace sweep report.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Argument(e.to_string()))?;
    }
    let config = ExperimentConfig::load(&cli.config)?;
    match cli.command {
        Command::GenCorpus => {
            cmd_gen_corpus(&config)?;
        }
        Command::Train { w } => {
            cmd_train(&config, w)?;
        }
        Command::BuildDb { w, checkpoint } => {
            cmd_build_db(&config, w, &checkpoint)?;
        }
        Command::Query {
            db,
            checkpoint,
            wav,
            l,
            offset,
        } => {
            for p in cmd_query(&config, &db, &checkpoint, &wav, l, offset)? {
                println!("{}", serde_json::to_string(&p)?);
            }
        }
        Command::Eval { db, checkpoint } => {
            let (_, report) = cmd_eval(&config, &db, &checkpoint)?;
            print!("{}", segfp_core::eval::render_csv(&report));
        }
        Command::Sweep => {
            for p in cmd_sweep(&config)? {
                eprintln!("wrote {}", p.display());
            }
        }
        Command::Advise { mode, report } => {
            let mode = match mode {
                Mode::Live => AdviseMode::Live,
                Mode::Replay => AdviseMode::Replay,
            };
            for line in cmd_advise(&config, mode, report.as_deref())? {
                println!("{}", serde_json::to_string(&line)?);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
