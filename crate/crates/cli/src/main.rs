mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;

use args::Cli;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help and version are not errors
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match commands::run(&cli.command) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code());
        }
    };
    if let Some(path) = &cli.command.common().out {
        let written = dgame_core::io::to_json_string(&outcome.report)
            .and_then(|text| dgame_core::io::write_atomic(path, text.as_bytes()));
        if let Err(e) = written {
            eprintln!("error: cannot write report: {e}");
            return ExitCode::from(1);
        }
    }
    match outcome.verdict {
        None => ExitCode::SUCCESS,
        Some(v) => {
            eprintln!("error: {v}");
            ExitCode::from(v.exit_code())
        }
    }
}
