//! `tpnet`: data generation, training, evaluation, rollout export, gradient
//! checking and timing probes behind one binary.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | all requested work completed |
//! | 1 | I/O failure or a failed check (gradcheck) |
//! | 2 | bad flags or unusable inputs |
//! | 3 | simulator divergence |
//! | 4 | non-finite loss or gradient during training |
//! | 5 | checkpoint corrupt or inconsistent with the data/config |

mod args;
mod commands;
mod failure;
mod manifest;

use clap::Parser;

use args::{Cli, Command};

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Rollout(a) => commands::rollout(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Probe(a) => commands::probe(a),
    };
    if let Err(f) = result {
        eprintln!("error: {}", f.message);
        std::process::exit(f.code);
    }
}
