use ave_cli::commands::{
    run_attend, run_eval, run_gradcheck, run_params, run_synth, run_train_cmd, AttendArgs,
    EvalArgs, GradcheckArgs, ParamsArgs, SynthArgs, TrainArgs,
};
use clap::{Parser, Subcommand};

/// Joint co-attention audio-visual event localization: training, evaluation
/// and verification tooling.
#[derive(Parser)]
#[command(name = "ave", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic feature file.
    Synth(SynthArgs),
    /// Train a model and write metrics plus a best-validation checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint: accuracy, per-class accuracy, confusion CSV.
    Eval(EvalArgs),
    /// Verify the full model gradient against central finite differences.
    Gradcheck(GradcheckArgs),
    /// Parameter accounting per module, with depth and strategy sweeps.
    Params(ParamsArgs),
    /// Export per-segment 7x7 early-fusion attention heatmaps.
    Attend(AttendArgs),
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth(args) => run_synth(args),
        Command::Train(args) => run_train_cmd(args),
        Command::Eval(args) => run_eval(args),
        Command::Gradcheck(args) => run_gradcheck(args),
        Command::Params(args) => run_params(args),
        Command::Attend(args) => run_attend(args),
    };
    match result {
        Ok(code) => std::process::exit(code),
        Err(error) => {
            eprintln!("error: {error}");
            std::process::exit(error.exit_code());
        }
    }
}
