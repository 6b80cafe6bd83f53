//! Command-line plumbing for data generation, pretraining, evaluation and
//! the words-by-images ablation grid.

pub mod commands;
pub mod config;

pub use commands::{
    ablate, evaluate, gen_data, load_checkpoint, pretrain, report, AblationSummary, CellStatus, Checkpoint,
    EvalOptions, GenDataOptions, Which,
};
pub use config::{GridConfig, RunConfig, Suite};

use grounded_lm::Error;

/// Process exit status for a failed command: 2 for usage and configuration
/// mistakes, 1 for everything else.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Usage(_) | Error::Config(_) => 2,
        _ => 1,
    }
}
