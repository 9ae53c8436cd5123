mod cfgfile;
mod cmds;
mod manifest;

use clap::{Parser, Subcommand};
use mmalign_core::Error;

#[derive(Parser)]
#[command(name = "mmalign", version, about = "Windowed-transport sequence alignment runner")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a synthetic parallel-sequence dataset with a missing pattern.
    Generate(cmds::GenerateArgs),
    /// Train on a generated dataset; writes manifest, checkpoint and log.
    Train(cmds::TrainArgs),
    /// Score a checkpoint against a data file recorded in the run manifest.
    Eval(cmds::EvalArgs),
    /// Train once per window size and report test MAE per window.
    SweepWindow(cmds::SweepArgs),
    /// Solve transport plans for stored samples and dump them with a
    /// band-slot heat profile.
    SolveAlign(cmds::SolveAlignArgs),
    /// Time the alignment decode path across sequence lengths.
    Bench(cmds::BenchArgs),
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Dimension(_) => 2,
        Error::Data(_) | Error::Label(_) | Error::Checkpoint(_) | Error::Io(_) => 3,
        _ => 4,
    }
}

fn main() -> std::process::ExitCode {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Generate(args) => cmds::cmd_generate(args),
        Cmd::Train(args) => cmds::cmd_train(args),
        Cmd::Eval(args) => cmds::cmd_eval(args),
        Cmd::SweepWindow(args) => cmds::cmd_sweep_window(args),
        Cmd::SolveAlign(args) => cmds::cmd_solve_align(args),
        Cmd::Bench(args) => cmds::cmd_bench(args),
    };
    match result {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            std::process::ExitCode::from(exit_code(&err))
        }
    }
}
