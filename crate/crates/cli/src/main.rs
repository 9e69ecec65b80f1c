mod args;
mod commands;
mod error;

use std::io::Write;
use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use commands::Output;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let stdout = std::io::stdout();
    let mut out = Output {
        stdout: stdout.lock(),
    };
    let outcome = match &cli.command {
        Command::Test(a) => commands::cmd_test(a, &mut out),
        Command::Hsic(a) => commands::cmd_hsic(a, &mut out),
        Command::Power(a) => commands::cmd_power(a, &mut out),
        Command::Calibrate(a) => commands::cmd_calibrate(a, &mut out),
        Command::Scatter(a) => commands::cmd_scatter(a, &mut out),
        Command::Converge(a) => commands::cmd_converge(a, &mut out),
    };
    let _ = out.stdout.flush();
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("reldep: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
