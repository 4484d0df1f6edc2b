use std::process::ExitCode;

use ivattrit_cli::{error_report, parse_args, run, write_error, ArgsError};

fn fail(report: &ivattrit_cli::report::ErrorReport) -> ExitCode {
    eprintln!("{}", serde_json::json!({ "error": report }));
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    let config = match parse_args(std::env::args_os()) {
        Ok(c) => c,
        Err(ArgsError::Usage(e)) => e.exit(),
        Err(ArgsError::Invalid(e)) => return fail(&error_report(&e)),
    };
    match run(&config) {
        Ok(out) => {
            print!("{}", out.summary);
            ExitCode::SUCCESS
        }
        Err(e) => {
            let report = error_report(&e);
            if let Err(w) = write_error(&config, &report) {
                eprintln!("could not write error.json: {w:#}");
            }
            fail(&report)
        }
    }
}
