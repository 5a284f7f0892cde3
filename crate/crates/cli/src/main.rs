use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ttaline_cli::commands::{
    cmd_ablate, cmd_adapt, cmd_eval, cmd_gen_corpus, cmd_gen_data, cmd_report, cmd_train_source, AblateArgs,
    AdaptArgs, EvalArgs, GenCorpusArgs, GenDataArgs, ReportArgs, TrainArgs,
};

/// Single-page test-time adaptation of a CTC line recognizer.
#[derive(Debug, Parser)]
#[command(name = "ttaline", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a seeded synthetic text corpus.
    GenCorpus(GenCorpusArgs),
    /// Render train/test pages, corrupted test variants and the LM corpus.
    GenData(GenDataArgs),
    /// Train the source optical model and the character and word LMs.
    TrainSource(TrainArgs),
    /// Run one method on test sets, page by page.
    Adapt(AdaptArgs),
    /// Score prediction files into a CER table.
    Eval(EvalArgs),
    /// Sweep adaptation settings.
    Ablate(AblateArgs),
    /// Confidence correlation, replacement edits and mixed-writer pages.
    Report(ReportArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenCorpus(a) => cmd_gen_corpus(a),
        Command::GenData(a) => cmd_gen_data(a),
        Command::TrainSource(a) => cmd_train_source(a),
        Command::Adapt(a) => cmd_adapt(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Report(a) => cmd_report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
