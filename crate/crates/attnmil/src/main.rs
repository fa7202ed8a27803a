use clap::Parser;

use attnmil::cli::{cmd_compare, cmd_crossval, cmd_gen, cmd_predict, cmd_train, Cli, Command};

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Gen(args) => cmd_gen(args),
        Command::Train(args) => cmd_train(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Crossval(args) => cmd_crossval(args),
        Command::Compare(args) => cmd_compare(args),
    };
    if let Err(err) = result {
        if err.is_contract() {
            eprintln!("error[contract]: {err}");
            std::process::exit(2);
        }
        eprintln!("error[internal]: {err}");
        std::process::exit(1);
    }
}
