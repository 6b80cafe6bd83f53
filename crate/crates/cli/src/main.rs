use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use grounded_cli::commands::{write_eval_report, CellStatus, EVAL_FILE};
use grounded_cli::{ablate, evaluate, exit_code, gen_data, load_checkpoint, pretrain, report};
use grounded_cli::{EvalOptions, GenDataOptions, GridConfig, RunConfig, Suite, Which};
use grounded_lm::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "grounded", version, about = "Multimodal versus text-only masked-modeling pretraining at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic world, paired corpus, minimal pairs and probe splits.
    GenData {
        #[arg(long, default_value_t = 20)]
        classes: usize,
        #[arg(long, default_value_t = 1400)]
        pairs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Minimal pairs per phenomenon.
        #[arg(long, default_value_t = 100)]
        minimal_pairs: usize,
        #[arg(long, default_value_t = 200)]
        probe_train: usize,
        #[arg(long, default_value_t = 200)]
        probe_test: usize,
        /// Keep only caption texts.
        #[arg(long)]
        captions_only: bool,
    },
    /// Pretrain one configuration and write checkpoints and logs.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; falls back to `out` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a pretraining output directory.
    Eval {
        /// Directory written by `pretrain`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Suites to run (repeatable); the config's suites by default.
        #[arg(long = "suite")]
        suites: Vec<String>,
        /// Extra top-k retrieval cutoff.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Score the final parameters instead of the selected checkpoint.
        #[arg(long)]
        final_params: bool,
        #[arg(long)]
        pppl_corpus: Option<PathBuf>,
        #[arg(long)]
        minimal_pairs: Option<PathBuf>,
        #[arg(long)]
        probe_train: Option<PathBuf>,
        #[arg(long)]
        probe_test: Option<PathBuf>,
        /// Report path; `eval.toml` in the checkpoint directory by default.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run (or resume) a words-by-images grid and write the consolidated report.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rebuild the consolidated report of a grid directory.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::GenData { classes, pairs, seed, out, minimal_pairs, probe_train, probe_test, captions_only } => {
            let s = gen_data(&GenDataOptions {
                classes,
                pairs,
                seed,
                out,
                minimal_pairs_per_phenomenon: minimal_pairs,
                probe_train,
                probe_test,
                captions_only,
            })?;
            println!("wrote {} pairs ({} words, {} images)", s.pairs, s.words, s.images);
            for f in s.files {
                println!("  {}", f.display());
            }
        }
        Command::Pretrain { config, seed, out } => {
            let config = RunConfig::load(&config)?.with_seed(seed);
            let out = out
                .or_else(|| config.out.clone())
                .ok_or_else(|| Error::Usage("no output directory: pass --out or set `out`".into()))?;
            let s = pretrain(&config, &out)?;
            println!("config hash {}", s.config_hash);
            println!("trained {} steps ({:?})", s.steps, s.stop_reason);
            println!("selected checkpoint step {}", s.selected_step);
        }
        Command::Eval {
            checkpoint,
            suites,
            k,
            seed,
            final_params,
            pppl_corpus,
            minimal_pairs,
            probe_train,
            probe_test,
            out,
        } => {
            let suites = if suites.is_empty() {
                None
            } else {
                Some(suites.iter().map(|s| s.parse()).collect::<Result<Vec<Suite>>>()?)
            };
            let which = if final_params { Which::Final } else { Which::Best };
            let ck = load_checkpoint(&checkpoint, which)?;
            let opts = EvalOptions {
                suites,
                k,
                seed,
                pppl_path: pppl_corpus,
                minimal_pairs_path: minimal_pairs,
                probe_train_path: probe_train,
                probe_test_path: probe_test,
            };
            let report = evaluate(&ck, &opts)?;
            let path = out.unwrap_or_else(|| checkpoint.join(EVAL_FILE));
            write_eval_report(&path, &report, &ck.config_hash)?;
            print!("{}", report.to_toml());
            println!("wrote {}", path.display());
        }
        Command::Ablate { config, seed, out } => {
            let mut grid = GridConfig::load(&config)?;
            grid.base = grid.base.with_seed(seed);
            let s = ablate(&grid, &out)?;
            for c in &s.cells {
                let status = match &c.status {
                    CellStatus::Ran { selected_step } => format!("ran, selected step {selected_step}"),
                    CellStatus::Resumed => "resumed".to_string(),
                    CellStatus::Failed(e) => format!("FAILED: {e}"),
                };
                println!("{} words / {} images: {status}", c.words, c.images);
            }
            print!("{}", s.report);
            return Ok(s.failed() == 0);
        }
        Command::Report { out } => print!("{}", report(&out)?),
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, Error::Usage(_)) {
                eprintln!("run `grounded --help` for usage");
            }
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
